#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "dres/annotation.hpp"
#include "dres/detailbase.hpp"
#include "dres/pipeline.hpp"
#include "dres/rng.hpp"
#include "dres/synthbench.hpp"
#include "dres/training.hpp"

namespace dres::testing {

std::filesystem::path fixture_dir();

/// Fresh empty directory under the system temp dir.
std::filesystem::path scratch_dir(const std::string& name);

/// A valid description with random tokens (words and punctuation), non-overlapping
/// phrases and target sets; tokens survive tokenize() unchanged.
AnnotatedDescription random_description(Rng& rng, const std::string& id, int max_tokens = 30,
                                        int max_phrases = 5);

/// Scene of `num_superpoints * points_per_superpoint` points where superpoint s holds
/// points [s*pps, (s+1)*pps) and carries instance label s % num_instances.
struct BlockScene {
  Scene scene;
  SuperpointPartition partition;
};
BlockScene block_scene(Rng& rng, int num_superpoints, int points_per_superpoint, int num_instances);

/// Random pooled and token features; one-token phrases at random heads, supervised over a block scene.
Sample random_sample(Rng& rng, const ModelConfig& cfg, int num_superpoints, int length, int num_phrases,
                     bool sentence_target);

/// The fixed overfit fixture: 8 synthetic scenes, at most 16 superpoints each.
SynthConfig overfit_synth_config();
/// Oversegmentation capped at 16 superpoints, default model, a short high-LR schedule.
PipelineConfig overfit_pipeline_config();
std::vector<Sample> overfit_samples(const PipelineConfig& cfg);

}  // namespace dres::testing
