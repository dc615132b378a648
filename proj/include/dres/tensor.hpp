#pragma once

#include <Eigen/Core>

namespace dres {

/// Row-major dense matrix used for every feature, parameter and activation.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

}  // namespace dres
