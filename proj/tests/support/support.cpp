#include "support.hpp"

#include <algorithm>
#include <numeric>

namespace dres::testing {

std::filesystem::path fixture_dir() { return DRES_FIXTURE_DIR; }

std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("dres_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

namespace {

const std::vector<std::string> kWords = {"the", "a", "red", "chair", "table", "near", "big", "lamp",
                                         "of", "window", "left", "two", "chairs", "washing", "machine",
                                         ",", ".", "!", "?", ";", ":", "\""};

std::set<std::int64_t> random_ids(Rng& rng, std::int64_t max_id, int max_count) {
  std::set<std::int64_t> ids;
  const auto n = rng.uniform_int(1, max_count);
  while (static_cast<std::int64_t>(ids.size()) < std::min<std::int64_t>(n, max_id + 1)) {
    ids.insert(rng.uniform_int(0, max_id));
  }
  return ids;
}

}  // namespace

AnnotatedDescription random_description(Rng& rng, const std::string& id, int max_tokens, int max_phrases) {
  AnnotatedDescription d;
  d.description_id = id;
  d.scene_id = "scene" + std::to_string(rng.uniform_int(0, 9));
  const int length = static_cast<int>(rng.uniform_int(1, max_tokens));
  for (int i = 0; i < length; ++i) {
    d.tokens.push_back(kWords[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(kWords.size()) - 1))]);
  }
  const int wanted = static_cast<int>(rng.uniform_int(1, max_phrases));
  int pos = 0;
  while (pos < length && static_cast<int>(d.phrases.size()) < wanted) {
    pos += static_cast<int>(rng.uniform_int(0, 3));
    if (pos >= length) break;
    const int span = static_cast<int>(std::min<std::int64_t>(rng.uniform_int(1, 3), length - pos));
    PhraseTarget p;
    p.start = pos;
    p.end = pos + span - 1;
    p.head_index = p.end;
    p.target_ids = random_ids(rng, 40, 3);
    d.phrases.push_back(p);
    pos = p.end + 1;
  }
  if (d.phrases.empty()) {
    PhraseTarget p;
    p.start = p.end = p.head_index = length - 1;
    p.target_ids = random_ids(rng, 40, 3);
    d.phrases.push_back(p);
  }
  if (rng.bernoulli(0.3)) d.sentence_target = make_sentence_target(length, random_ids(rng, 40, 2));
  return d;
}

BlockScene block_scene(Rng& rng, int num_superpoints, int points_per_superpoint, int num_instances) {
  BlockScene out;
  out.scene.scene_id = "block";
  out.partition.scene_id = "block";
  out.partition.num_superpoints = num_superpoints;
  for (int s = 0; s < num_superpoints; ++s) {
    for (int i = 0; i < points_per_superpoint; ++i) {
      Point p;
      p.x = 3.0 * s + rng.uniform(0, 0.5);
      p.y = rng.uniform(0, 0.5);
      p.z = rng.uniform(0, 0.5);
      p.r = rng.uniform();
      p.g = rng.uniform();
      p.b = rng.uniform();
      out.scene.points.push_back(p);
      out.scene.instance_labels.push_back(s % num_instances);
      out.partition.assignment.push_back(s);
    }
  }
  return out;
}

Sample random_sample(Rng& rng, const ModelConfig& cfg, int num_superpoints, int length, int num_phrases,
                     bool sentence_target) {
  constexpr int kInstances = 4;
  auto bs = block_scene(rng, num_superpoints, 2, kInstances);
  AnnotatedDescription d;
  d.description_id = "toy";
  d.scene_id = bs.scene.scene_id;
  for (int i = 0; i < length; ++i) d.tokens.push_back("w" + std::to_string(i));
  std::vector<int> heads(static_cast<std::size_t>(length));
  std::iota(heads.begin(), heads.end(), 0);
  rng.shuffle(heads.begin(), heads.end());
  heads.resize(static_cast<std::size_t>(num_phrases));
  std::sort(heads.begin(), heads.end());
  for (int h : heads) {
    PhraseTarget p;
    p.start = p.end = p.head_index = h;
    p.target_ids = random_ids(rng, kInstances - 1, 2);
    d.phrases.push_back(p);
  }
  if (sentence_target) d.sentence_target = make_sentence_target(length, random_ids(rng, kInstances - 1, 2));

  Sample s;
  s.description_id = d.description_id;
  s.pooled = Matrix(num_superpoints, cfg.c);
  for (Eigen::Index i = 0; i < s.pooled.size(); ++i) s.pooled.data()[i] = rng.normal();
  s.token_features = Matrix(length + 2, cfg.e);
  for (Eigen::Index i = 0; i < s.token_features.size(); ++i) s.token_features.data()[i] = rng.normal();
  s.partition = bs.partition;
  s.supervision = make_supervision(d, bs.scene, bs.partition);
  for (const auto& u : d.units()) s.gt_masks.push_back(union_instance_mask(bs.scene, u.target_ids));
  s.description = d;
  s.long_text = is_long(d.length());
  s.complex_text = is_complex(d.unit_count());
  return s;
}

SynthConfig overfit_synth_config() {
  SynthConfig cfg;
  cfg.seed = 7;
  cfg.num_scenes = 8;
  cfg.objects_per_scene = {4, 5};
  cfg.points_per_object = {30, 40};
  cfg.phrases_per_description = {1, 4};
  cfg.descriptions_per_scene = 2;
  return cfg;
}

PipelineConfig overfit_pipeline_config() {
  PipelineConfig cfg;
  cfg.overseg.target_max_superpoints = 16;
  cfg.point_provider.dims = cfg.model.c;
  cfg.token_provider.dims = cfg.model.e;
  cfg.schedule.base_lr = 5e-3;
  cfg.schedule.decay_epochs = {100};
  cfg.schedule.decay_rate = 0.5;
  cfg.schedule.epochs = 125;
  cfg.schedule.batch_size = 4;
  cfg.schedule.max_steps = 500;
  return cfg;
}

std::vector<Sample> overfit_samples(const PipelineConfig& cfg) {
  const auto synth = overfit_synth_config();
  SceneMap scenes;
  std::vector<Scene> list;
  for (int i = 0; i < synth.num_scenes; ++i) {
    list.push_back(gen_scene(synth, i));
    scenes[list.back().scene_id] = list.back();
  }
  return prepare_samples(gen_dataset(synth, list), scenes, cfg);
}

}  // namespace dres::testing
