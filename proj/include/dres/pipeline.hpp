#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dres/annotation.hpp"
#include "dres/detailbase.hpp"
#include "dres/superpoint.hpp"
#include "dres/synthbench.hpp"
#include "dres/training.hpp"

namespace dres {

/// Everything `train` and `evaluate` need besides the data itself.
struct PipelineConfig {
  OversegConfig overseg;
  PointFeatureProvider point_provider;
  TokenFeatureProvider token_provider;
  ModelConfig model;
  LossConfig loss;
  TrainSchedule schedule;
  OptimizerKind optimizer = OptimizerKind::Adam;
};

nlohmann::ordered_json to_json(const PipelineConfig& cfg);
/// Missing keys keep their defaults.
PipelineConfig pipeline_config_from_json(const nlohmann::json& j);

nlohmann::ordered_json to_json(const SynthConfig& cfg);
SynthConfig synth_config_from_json(const nlohmann::json& j);

nlohmann::json read_json_file(const std::filesystem::path& path);

// Data directory layout:
//   <dir>/records.jsonl        annotated descriptions
//   <dir>/scenes/*.scene       scene tables
//   <dir>/superpoints/*.sp     optional oversegmentation cache
//   <dir>/features/*.feat      optional point-feature tables (file-loaded provider)
struct DataDir {
  std::filesystem::path root;

  std::filesystem::path records() const { return root / "records.jsonl"; }
  std::filesystem::path scenes() const { return root / "scenes"; }
  std::filesystem::path superpoints() const { return root / "superpoints"; }
  std::filesystem::path features() const { return root / "features"; }
};

/// Generates scenes and descriptions and writes them in the data directory layout.
void write_synthetic_dataset(const SynthConfig& cfg, const std::filesystem::path& out_dir);

/// Oversegments via the cache when `cache_dir` holds an entry with a matching config hash,
/// and writes fresh entries into it otherwise. An empty path disables caching.
SuperpointPartition cached_oversegment(const Scene& scene, const OversegConfig& cfg,
                                       const std::filesystem::path& cache_dir);

/// Builds model inputs and supervision for each description, in input order.
std::vector<Sample> prepare_samples(const std::vector<AnnotatedDescription>& descs, const SceneMap& scenes,
                                    const PipelineConfig& cfg,
                                    const std::filesystem::path& cache_dir = {});

/// JSON lines: {"description_id", "masks": [[point indices]...], "sentence_mask": [...]}.
void write_predictions(const std::filesystem::path& path, const std::vector<PhraseMaskSet>& preds);
std::vector<PhraseMaskSet> read_predictions(const std::filesystem::path& path, const SceneMap& scenes,
                                            const std::vector<AnnotatedDescription>& descs);

}  // namespace dres
