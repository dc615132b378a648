#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dres/annotation.hpp"
#include "dres/core.hpp"
#include "dres/tensor.hpp"

namespace dres {

struct IntRange {
  int min = 1;
  int max = 1;
};

struct Category {
  std::string singular;  // may be several words; the last word is the phrase head
  std::string plural;
  std::array<double, 3> color;
};

/// Eight categories with distinct heads, colored at the corners of the RGB cube.
std::vector<Category> default_vocabulary();

struct SynthConfig {
  std::uint64_t seed = 0;
  int num_scenes = 8;
  IntRange objects_per_scene{4, 5};
  IntRange points_per_object{30, 40};
  IntRange phrases_per_description{1, 4};
  int descriptions_per_scene = 2;
  double long_text_fraction = 0.074;
  /// Share of scenes where one object gets a same-category neighbor in the next cell.
  double adjacent_same_category_fraction = 0.25;
  /// Share of descriptions that also carry a sentence-level ([CLS]) target.
  double sentence_level_fraction = 0.0;
  int grid_size = 4;          // arena is grid_size x grid_size cells
  double object_size = 0.6;   // meters, box edge upper bound
  double cluster_gap = 0.6;   // meters between neighboring cells' boxes
  double color_jitter = 0.04;
  int floor_points = 0;       // unlabeled clutter points
  std::vector<Category> vocabulary = default_vocabulary();

  void validate() const;
};

/// Deterministic in (cfg.seed, index).
Scene gen_scene(const SynthConfig& cfg, int index);
std::string synth_scene_id(int index);

/// Template descriptions for each scene; every phrase names a category present in the
/// scene and targets all of its instances.
std::vector<AnnotatedDescription> gen_dataset(const SynthConfig& cfg, const std::vector<Scene>& scenes);

struct PointFeatureProvider {
  enum class Kind { Geometric, FileLoaded };
  Kind kind = Kind::Geometric;
  int dims = 16;
  std::uint64_t seed = 0;
  int neighbors = 8;
  std::filesystem::path table_dir;  // FileLoaded: "<table_dir>/<scene_id>.feat"
};

struct TokenFeatureProvider {
  int dims = 32;
  std::uint64_t seed = 0;
};

/// N_p x dims. Geometric: position, color, k-NN offset/spread/color statistics and a
/// constant channel, through a seeded random projection.
Matrix point_features(const Scene& scene, const PointFeatureProvider& provider);

/// (L+2) x dims: [CLS], one seeded unit vector per token string, [END].
Matrix token_features(const std::vector<std::string>& tokens, const TokenFeatureProvider& provider);

/// Row-major numeric table with a header (scene_id, N_p, dims).
void write_feature_table(const std::filesystem::path& path, const std::string& scene_id,
                         const Matrix& features);
Matrix read_feature_table(const std::filesystem::path& path, const std::string& expected_scene_id);

}  // namespace dres
