#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "dres/core.hpp"
#include "dres/tensor.hpp"

namespace dres {

/// Surjective point -> superpoint assignment.
struct SuperpointPartition {
  std::string scene_id;
  std::vector<int> assignment;
  int num_superpoints = 0;

  std::size_t num_points() const noexcept { return assignment.size(); }
  std::vector<int> sizes() const;

  /// Each point its own superpoint.
  static SuperpointPartition identity(std::string scene_id, std::size_t num_points);

  bool operator==(const SuperpointPartition&) const = default;
};

/// Boolean superpoint mask (binarized logits or pooled ground truth).
using SuperpointBits = std::vector<bool>;

struct OversegConfig {
  int knn = 8;
  /// Edge weight = spatial distance + color_weight * RGB distance.
  double color_weight = 1.0;
  /// Merge-threshold constant: larger values give larger superpoints.
  double threshold = 0.5;
  int min_size = 1;
  /// Upper bound on N_s enforced by extra merge passes; 0 disables it.
  int target_max_superpoints = 0;

  /// Stable 64-bit hash of the canonical config string, rendered as hex.
  std::string hash() const;
};

/// Greedy graph-based region merging on a k-NN graph. Deterministic: edges are
/// ordered by (weight, lower point index, higher point index).
SuperpointPartition oversegment(const Scene& scene, const OversegConfig& cfg = {});

/// Row s = mean of the feature rows of points assigned to s.
Matrix sp_pool(const Matrix& point_features, const SuperpointPartition& part);

struct ProjectedFeatures {
  Matrix visual;      // F_pool * W1, for cross-attention
  Matrix superpoint;  // F_pool * W2, for mask affinity
};

ProjectedFeatures project_features(const Matrix& pooled, const Matrix& w1, const Matrix& w2);

PointMask broadcast_mask(const SuperpointBits& spmask, const SuperpointPartition& part);

/// Superpoint s is positive iff its positive-point fraction is >= threshold.
SuperpointBits pool_gt_mask(const PointMask& gt, const SuperpointPartition& part,
                            double threshold = 0.5);

/// Line-oriented cache: header lines, then "point_index superpoint_index" rows.
void write_partition(const std::filesystem::path& path, const SuperpointPartition& part,
                     const std::string& config_hash);
/// Returns the partition and the config hash recorded in its header.
std::pair<SuperpointPartition, std::string> read_partition(const std::filesystem::path& path);

}  // namespace dres
