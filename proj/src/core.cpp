#include "dres/core.hpp"

#include <bit>
#include <cmath>

#include "dres/error.hpp"

namespace dres {

namespace {

std::size_t word_count(std::size_t bits) { return (bits + 63) / 64; }

}  // namespace

std::vector<std::int64_t> Scene::instance_ids() const {
  std::set<std::int64_t> ids;
  for (auto label : instance_labels) {
    if (label >= 0) ids.insert(label);
  }
  return {ids.begin(), ids.end()};
}

PointMask::PointMask(std::string scene_id, std::size_t size, bool value)
    : scene_id_(std::move(scene_id)), size_(size), words_(word_count(size), 0) {
  if (value) {
    for (std::size_t i = 0; i < size; ++i) set(i);
  }
}

PointMask PointMask::from_bools(std::string scene_id, const std::vector<bool>& bits) {
  PointMask mask(std::move(scene_id), bits.size());
  for (std::size_t i = 0; i < bits.size(); ++i) {
    if (bits[i]) mask.set(i);
  }
  return mask;
}

bool PointMask::test(std::size_t i) const {
  if (i >= size_) throw Error(ErrorCode::IndexOutOfRange, "mask bit " + std::to_string(i));
  return (words_[i / 64] >> (i % 64)) & 1U;
}

void PointMask::set(std::size_t i, bool value) {
  if (i >= size_) throw Error(ErrorCode::IndexOutOfRange, "mask bit " + std::to_string(i));
  const std::uint64_t bit = std::uint64_t{1} << (i % 64);
  if (value) {
    words_[i / 64] |= bit;
  } else {
    words_[i / 64] &= ~bit;
  }
}

std::size_t PointMask::count() const noexcept {
  std::size_t n = 0;
  for (auto w : words_) n += static_cast<std::size_t>(std::popcount(w));
  return n;
}

std::vector<std::size_t> PointMask::indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < size_; ++i) {
    if (test(i)) out.push_back(i);
  }
  return out;
}

std::vector<bool> PointMask::to_bools() const {
  std::vector<bool> out(size_);
  for (std::size_t i = 0; i < size_; ++i) out[i] = test(i);
  return out;
}

void PointMask::check_compatible(const PointMask& other) const {
  if (size_ != other.size_ || scene_id_ != other.scene_id_) {
    throw Error(ErrorCode::LengthMismatch,
                "masks over " + scene_id_ + "[" + std::to_string(size_) + "] and " +
                    other.scene_id_ + "[" + std::to_string(other.size_) + "]");
  }
}

PointMask PointMask::operator|(const PointMask& other) const {
  check_compatible(other);
  PointMask out = *this;
  for (std::size_t w = 0; w < words_.size(); ++w) out.words_[w] |= other.words_[w];
  return out;
}

PointMask PointMask::operator&(const PointMask& other) const {
  check_compatible(other);
  PointMask out = *this;
  for (std::size_t w = 0; w < words_.size(); ++w) out.words_[w] &= other.words_[w];
  return out;
}

PointMask union_instance_mask(const Scene& scene, const std::set<std::int64_t>& ids) {
  PointMask mask(scene.scene_id, scene.size());
  std::set<std::int64_t> seen;
  for (std::size_t i = 0; i < scene.instance_labels.size(); ++i) {
    const auto label = scene.instance_labels[i];
    if (label >= 0 && ids.contains(label)) {
      mask.set(i);
      seen.insert(label);
    }
  }
  for (auto id : ids) {
    if (!seen.contains(id)) {
      throw Error(ErrorCode::UnknownInstance,
                  "instance " + std::to_string(id) + " has no points in scene " + scene.scene_id);
    }
  }
  return mask;
}

double point_iou(const PointMask& a, const PointMask& b) {
  if (a.size() != b.size() || a.scene_id() != b.scene_id()) {
    throw Error(ErrorCode::LengthMismatch, "point_iou over different scenes or lengths");
  }
  std::size_t inter = 0;
  std::size_t uni = 0;
  const auto& wa = a.words();
  const auto& wb = b.words();
  for (std::size_t w = 0; w < wa.size(); ++w) {
    inter += static_cast<std::size_t>(std::popcount(wa[w] & wb[w]));
    uni += static_cast<std::size_t>(std::popcount(wa[w] | wb[w]));
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

double bool_iou(const std::vector<bool>& a, const std::vector<bool>& b) {
  if (a.size() != b.size()) throw Error(ErrorCode::LengthMismatch, "bool_iou");
  std::size_t inter = 0;
  std::size_t uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    inter += (a[i] && b[i]) ? 1 : 0;
    uni += (a[i] || b[i]) ? 1 : 0;
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<SceneViolation> validate_scene(const Scene& scene) {
  std::vector<SceneViolation> out;
  if (scene.points.empty()) {
    out.push_back({0, "scene has no points"});
    return out;
  }
  if (scene.instance_labels.size() != scene.points.size()) {
    out.push_back({0, "instance label count " + std::to_string(scene.instance_labels.size()) +
                          " differs from point count " + std::to_string(scene.points.size())});
  }
  for (std::size_t i = 0; i < scene.points.size(); ++i) {
    const auto& p = scene.points[i];
    if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z)) {
      out.push_back({i, "non-finite coordinate"});
    }
    for (double c : {p.r, p.g, p.b}) {
      if (!(c >= 0.0 && c <= 1.0)) {
        out.push_back({i, "color channel outside [0,1]"});
        break;
      }
    }
    if (i < scene.instance_labels.size() && scene.instance_labels[i] < kUnlabeled) {
      out.push_back({i, "instance label below the unlabeled sentinel"});
    }
  }
  return out;
}

}  // namespace dres
