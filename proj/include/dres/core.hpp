#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace dres {

/// Instance label carried by points that belong to no annotatable object.
inline constexpr std::int64_t kUnlabeled = -1;

/// Per-point input feature width: xyz + rgb.
inline constexpr int kPointFeatureWidth = 6;

struct Point {
  double x = 0, y = 0, z = 0;
  double r = 0, g = 0, b = 0;
};

struct Scene {
  std::string scene_id;
  std::vector<Point> points;
  std::vector<std::int64_t> instance_labels;

  std::size_t size() const noexcept { return points.size(); }

  /// Distinct non-negative instance labels in ascending order.
  std::vector<std::int64_t> instance_ids() const;
};

/// Packed boolean mask over the points of one scene.
class PointMask {
public:
  PointMask() = default;
  PointMask(std::string scene_id, std::size_t size, bool value = false);
  static PointMask from_bools(std::string scene_id, const std::vector<bool>& bits);

  const std::string& scene_id() const noexcept { return scene_id_; }
  std::size_t size() const noexcept { return size_; }

  bool test(std::size_t i) const;
  void set(std::size_t i, bool value = true);

  std::size_t count() const noexcept;
  std::vector<std::size_t> indices() const;
  std::vector<bool> to_bools() const;

  PointMask operator|(const PointMask& other) const;
  PointMask operator&(const PointMask& other) const;

  bool operator==(const PointMask& other) const = default;

  const std::vector<std::uint64_t>& words() const noexcept { return words_; }

private:
  void check_compatible(const PointMask& other) const;

  std::string scene_id_;
  std::size_t size_ = 0;
  std::vector<std::uint64_t> words_;
};

/// k phrase masks in phrase order, plus the [CLS] sentence mask when produced.
struct PhraseMaskSet {
  std::string description_id;
  std::vector<PointMask> masks;
  std::optional<PointMask> sentence_mask;
};

PointMask union_instance_mask(const Scene& scene, const std::set<std::int64_t>& ids);

/// |a & b| / |a | b|; both empty is defined as 1.0.
double point_iou(const PointMask& a, const PointMask& b);

/// Intersection-over-union of two equal-length boolean vectors, same empty convention.
double bool_iou(const std::vector<bool>& a, const std::vector<bool>& b);

struct SceneViolation {
  std::size_t point_index;
  std::string rule;
};

std::vector<SceneViolation> validate_scene(const Scene& scene);

}  // namespace dres
