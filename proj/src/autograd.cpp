#include "dres/autograd.hpp"

#include <cmath>
#include <numbers>

#include "dres/error.hpp"

namespace dres::ag {

namespace {

constexpr double kGeluC = 0.044715;
const double kSqrt2OverPi = std::sqrt(2.0 / std::numbers::pi);

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw Error(ErrorCode::ShapeMismatch,
                std::string(op) + ": " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                    " vs " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
}

}  // namespace

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double gelu(double x) {
  return 0.5 * x * (1.0 + std::tanh(kSqrt2OverPi * (x + kGeluC * x * x * x)));
}

double gelu_grad(double x) {
  const double t = std::tanh(kSqrt2OverPi * (x + kGeluC * x * x * x));
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kSqrt2OverPi * (1.0 + 3.0 * kGeluC * x * x);
}

double bce_with_logits(double z, double t) {
  return std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::abs(z)));
}

Var Tape::push(Matrix value, std::initializer_list<Var> inputs, Backward backward) {
  return push(std::move(value), std::vector<Var>(inputs), std::move(backward));
}

Var Tape::push(Matrix value, const std::vector<Var>& inputs, Backward backward) {
  Node node;
  node.value = std::move(value);
  if (record_) {
    for (auto in : inputs) node.needs_grad = node.needs_grad || needs(in);
    if (node.needs_grad) node.backward = std::move(backward);
  }
  nodes_.push_back(std::move(node));
  return {static_cast<int>(nodes_.size()) - 1};
}

Var Tape::constant(Matrix value) { return push(std::move(value), {}, nullptr); }

Var Tape::leaf(Matrix value) {
  Var v = push(std::move(value), {}, nullptr);
  nodes_.back().needs_grad = record_;
  return v;
}

void Tape::accumulate(Var v, const Matrix& g) {
  auto& node = nodes_[static_cast<std::size_t>(v.id)];
  if (!node.needs_grad) return;
  if (node.grad.size() == 0) {
    node.grad = g;
  } else {
    node.grad += g;
  }
}

Matrix Tape::grad(Var v) const {
  const auto& node = nodes_[static_cast<std::size_t>(v.id)];
  if (node.grad.size() == 0) return Matrix::Zero(node.value.rows(), node.value.cols());
  return node.grad;
}

void Tape::backward(Var out) {
  if (!record_) throw Error(ErrorCode::ShapeMismatch, "backward on a non-recording tape");
  const auto& o = nodes_[static_cast<std::size_t>(out.id)];
  if (o.value.size() != 1) throw Error(ErrorCode::ShapeMismatch, "backward needs a 1x1 output");
  accumulate(out, Matrix::Ones(1, 1));
  for (int i = out.id; i >= 0; --i) {
    auto& node = nodes_[static_cast<std::size_t>(i)];
    if (!node.backward || node.grad.size() == 0) continue;
    const Matrix g = node.grad;
    node.backward(*this, g);
  }
}

Var Tape::matmul(Var a, Var b) {
  const auto& A = value(a);
  const auto& B = value(b);
  if (A.cols() != B.rows()) {
    throw Error(ErrorCode::ShapeMismatch, "matmul: " + std::to_string(A.rows()) + "x" +
                                              std::to_string(A.cols()) + " * " +
                                              std::to_string(B.rows()) + "x" + std::to_string(B.cols()));
  }
  return push(A * B, {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (t.needs(a)) t.accumulate(a, g * t.value(b).transpose());
    if (t.needs(b)) t.accumulate(b, t.value(a).transpose() * g);
  });
}

Var Tape::matmul_nt(Var a, Var b) {
  const auto& A = value(a);
  const auto& B = value(b);
  if (A.cols() != B.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "matmul_nt: inner widths " + std::to_string(A.cols()) +
                                              " and " + std::to_string(B.cols()));
  }
  return push(A * B.transpose(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (t.needs(a)) t.accumulate(a, g * t.value(b));
    if (t.needs(b)) t.accumulate(b, g.transpose() * t.value(a));
  });
}

Var Tape::add(Var a, Var b) {
  require_same_shape(value(a), value(b), "add");
  return push(value(a) + value(b), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var Tape::add_row(Var a, Var row) {
  const auto& A = value(a);
  const auto& R = value(row);
  if (R.rows() != 1 || R.cols() != A.cols()) throw Error(ErrorCode::ShapeMismatch, "add_row");
  Matrix out = A.rowwise() + R.row(0);
  return push(std::move(out), {a, row}, [a, row](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    if (t.needs(row)) t.accumulate(row, g.colwise().sum());
  });
}

Var Tape::scale(Var a, double s) {
  return push(value(a) * s, {a}, [a, s](Tape& t, const Matrix& g) { t.accumulate(a, g * s); });
}

Var Tape::cols(Var a, int begin, int count) {
  const auto& A = value(a);
  if (begin < 0 || count < 0 || begin + count > A.cols()) throw Error(ErrorCode::ShapeMismatch, "cols");
  Matrix out = A.middleCols(begin, count);
  const auto rows = A.rows(), width = A.cols();
  return push(std::move(out), {a}, [a, begin, count, rows, width](Tape& t, const Matrix& g) {
    Matrix full = Matrix::Zero(rows, width);
    full.middleCols(begin, count) = g;
    t.accumulate(a, full);
  });
}

Var Tape::hcat(const std::vector<Var>& parts) {
  if (parts.empty()) throw Error(ErrorCode::ShapeMismatch, "hcat of nothing");
  const auto rows = value(parts.front()).rows();
  Eigen::Index width = 0;
  for (auto p : parts) {
    if (value(p).rows() != rows) throw Error(ErrorCode::ShapeMismatch, "hcat row counts differ");
    width += value(p).cols();
  }
  Matrix out(rows, width);
  Eigen::Index offset = 0;
  for (auto p : parts) {
    out.middleCols(offset, value(p).cols()) = value(p);
    offset += value(p).cols();
  }
  return push(std::move(out), parts, [parts](Tape& t, const Matrix& g) {
    Eigen::Index off = 0;
    for (auto p : parts) {
      const auto w = t.value(p).cols();
      if (t.needs(p)) t.accumulate(p, g.middleCols(off, w));
      off += w;
    }
  });
}

Var Tape::rows(Var a, const std::vector<int>& index) {
  const auto& A = value(a);
  Matrix out(static_cast<Eigen::Index>(index.size()), A.cols());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || index[i] >= A.rows()) throw Error(ErrorCode::IndexOutOfRange, "rows");
    out.row(static_cast<Eigen::Index>(i)) = A.row(index[i]);
  }
  const auto n = A.rows(), w = A.cols();
  return push(std::move(out), {a}, [a, index, n, w](Tape& t, const Matrix& g) {
    Matrix full = Matrix::Zero(n, w);
    for (std::size_t i = 0; i < index.size(); ++i) full.row(index[i]) += g.row(static_cast<Eigen::Index>(i));
    t.accumulate(a, full);
  });
}

Var Tape::layer_norm(Var x, Var gamma, Var beta, double eps) {
  const auto& X = value(x);
  const auto& G = value(gamma);
  const auto& B = value(beta);
  if (G.rows() != 1 || G.cols() != X.cols() || B.rows() != 1 || B.cols() != X.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "layer_norm parameters");
  }
  const auto n = X.rows(), d = X.cols();
  Matrix xhat(n, d);
  Eigen::VectorXd inv_std(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const double mean = X.row(r).mean();
    const double var = (X.row(r).array() - mean).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (X.row(r).array() - mean) * inv_std(r);
  }
  Matrix out = (xhat.array().rowwise() * G.row(0).array()).rowwise() + B.row(0).array();
  return push(std::move(out), {x, gamma, beta},
              [x, gamma, beta, xhat, inv_std](Tape& t, const Matrix& g) {
                const auto& Gm = t.value(gamma);
                if (t.needs(gamma)) t.accumulate(gamma, (g.array() * xhat.array()).colwise().sum().matrix());
                if (t.needs(beta)) t.accumulate(beta, g.colwise().sum());
                if (t.needs(x)) {
                  const Matrix dxhat = g.array().rowwise() * Gm.row(0).array();
                  Matrix dx(dxhat.rows(), dxhat.cols());
                  for (Eigen::Index r = 0; r < dxhat.rows(); ++r) {
                    const double m1 = dxhat.row(r).mean();
                    const double m2 = (dxhat.row(r).array() * xhat.row(r).array()).mean();
                    dx.row(r) = inv_std(r) * (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2);
                  }
                  t.accumulate(x, dx);
                }
              });
}

Var Tape::softmax_rows(Var x) {
  const auto& X = value(x);
  Matrix y(X.rows(), X.cols());
  for (Eigen::Index r = 0; r < X.rows(); ++r) {
    const double mx = X.row(r).maxCoeff();
    y.row(r) = (X.row(r).array() - mx).exp();
    y.row(r) /= y.row(r).sum();
  }
  Matrix kept = y;
  return push(std::move(y), {x}, [x, kept](Tape& t, const Matrix& g) {
    const Eigen::VectorXd dot = (g.array() * kept.array()).rowwise().sum();
    Matrix dx = kept.array() * (g.array().colwise() - dot.array());
    t.accumulate(x, dx);
  });
}

Var Tape::gelu(Var x) {
  Matrix y = value(x).unaryExpr([](double v) { return ag::gelu(v); });
  return push(std::move(y), {x}, [x](Tape& t, const Matrix& g) {
    Matrix d = t.value(x).unaryExpr([](double v) { return ag::gelu_grad(v); });
    t.accumulate(x, g.cwiseProduct(d));
  });
}

Var Tape::sigmoid(Var x) {
  Matrix y = value(x).unaryExpr([](double v) { return ag::sigmoid(v); });
  Matrix kept = y;
  return push(std::move(y), {x}, [x, kept](Tape& t, const Matrix& g) {
    t.accumulate(x, g.cwiseProduct(kept.cwiseProduct((1.0 - kept.array()).matrix())));
  });
}

Var Tape::bce_with_logits(Var logits, const Matrix& targets) {
  const auto& Z = value(logits);
  require_same_shape(Z, targets, "bce_with_logits");
  const auto n = static_cast<double>(Z.size());
  double total = 0;
  for (Eigen::Index i = 0; i < Z.rows(); ++i) {
    for (Eigen::Index j = 0; j < Z.cols(); ++j) total += ag::bce_with_logits(Z(i, j), targets(i, j));
  }
  Matrix out(1, 1);
  out(0, 0) = n > 0 ? total / n : 0.0;
  return push(std::move(out), {logits}, [logits, targets, n](Tape& t, const Matrix& g) {
    Matrix d = t.value(logits).unaryExpr([](double v) { return ag::sigmoid(v); }) - targets;
    t.accumulate(logits, d * (g(0, 0) / n));
  });
}

Var Tape::dice(Var logits, const Matrix& targets, double eps) {
  const auto& Z = value(logits);
  require_same_shape(Z, targets, "dice");
  const Matrix p = Z.unaryExpr([](double v) { return ag::sigmoid(v); });
  const auto rows = Z.rows();
  double total = 0;
  for (Eigen::Index r = 0; r < rows; ++r) {
    const double inter = p.row(r).dot(targets.row(r));
    const double denom = p.row(r).sum() + targets.row(r).sum() + eps;
    total += 1.0 - (2.0 * inter + eps) / denom;
  }
  Matrix out(1, 1);
  out(0, 0) = rows > 0 ? total / static_cast<double>(rows) : 0.0;
  return push(std::move(out), {logits}, [logits, targets, eps, p, rows](Tape& t, const Matrix& g) {
    Matrix d(p.rows(), p.cols());
    for (Eigen::Index r = 0; r < rows; ++r) {
      const double inter = p.row(r).dot(targets.row(r));
      const double denom = p.row(r).sum() + targets.row(r).sum() + eps;
      const double num = 2.0 * inter + eps;
      for (Eigen::Index j = 0; j < p.cols(); ++j) {
        const double dloss_dp = -(2.0 * targets(r, j) * denom - num) / (denom * denom);
        d(r, j) = dloss_dp * p(r, j) * (1.0 - p(r, j));
      }
    }
    t.accumulate(logits, d * (g(0, 0) / static_cast<double>(rows)));
  });
}

Var Tape::mse(Var pred, const Matrix& targets) {
  const auto& P = value(pred);
  require_same_shape(P, targets, "mse");
  const auto n = static_cast<double>(P.size());
  Matrix out(1, 1);
  out(0, 0) = n > 0 ? (P - targets).squaredNorm() / n : 0.0;
  return push(std::move(out), {pred}, [pred, targets, n](Tape& t, const Matrix& g) {
    t.accumulate(pred, (t.value(pred) - targets) * (2.0 * g(0, 0) / n));
  });
}

Var Tape::weighted_sum(const std::vector<Var>& scalars, const std::vector<double>& weights) {
  if (scalars.size() != weights.size()) throw Error(ErrorCode::ShapeMismatch, "weighted_sum");
  Matrix out = Matrix::Zero(1, 1);
  for (std::size_t i = 0; i < scalars.size(); ++i) {
    if (value(scalars[i]).size() != 1) throw Error(ErrorCode::ShapeMismatch, "weighted_sum of non-scalar");
    out(0, 0) += weights[i] * value(scalars[i])(0, 0);
  }
  return push(std::move(out), scalars, [scalars, weights](Tape& t, const Matrix& g) {
    for (std::size_t i = 0; i < scalars.size(); ++i) {
      t.accumulate(scalars[i], g * weights[i]);
    }
  });
}

}  // namespace dres::ag
