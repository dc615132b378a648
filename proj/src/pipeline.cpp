#include "dres/pipeline.hpp"

#include <fstream>
#include <map>
#include <sstream>

#include "dres/error.hpp"

namespace dres {

namespace {

template <class T>
void get_if(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key) && !j[key].is_null()) out = j[key].get<T>();
}

nlohmann::json section(const nlohmann::json& j, const char* key) {
  return j.contains(key) && j[key].is_object() ? j[key] : nlohmann::json::object();
}

nlohmann::ordered_json range_json(const IntRange& r) { return {r.min, r.max}; }

void range_from(const nlohmann::json& j, const char* key, IntRange& r) {
  if (!j.contains(key)) return;
  const auto& v = j[key];
  if (!v.is_array() || v.size() != 2) throw Error(ErrorCode::ConfigInfeasible, std::string(key) + " must be [min,max]");
  r.min = v[0].get<int>();
  r.max = v[1].get<int>();
}

}  // namespace

nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::FileUnreadable, path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedRecord, path.string() + ": " + e.what());
  }
}

nlohmann::ordered_json to_json(const PipelineConfig& cfg) {
  nlohmann::ordered_json j;
  j["overseg"] = {{"knn", cfg.overseg.knn},
                  {"color_weight", cfg.overseg.color_weight},
                  {"threshold", cfg.overseg.threshold},
                  {"min_size", cfg.overseg.min_size},
                  {"target_max_superpoints", cfg.overseg.target_max_superpoints}};
  j["point_features"] = {
      {"kind", cfg.point_provider.kind == PointFeatureProvider::Kind::Geometric ? "geometric" : "file"},
      {"seed", cfg.point_provider.seed},
      {"neighbors", cfg.point_provider.neighbors}};
  j["token_features"] = {{"seed", cfg.token_provider.seed}};
  j["model"] = {{"d", cfg.model.d},
                {"e", cfg.model.e},
                {"c", cfg.model.c},
                {"num_layers", cfg.model.num_layers},
                {"heads", cfg.model.heads},
                {"ffn_hidden", cfg.model.ffn_hidden},
                {"binarize_threshold", cfg.model.binarize_threshold}};
  j["loss"] = {{"bce_weight", cfg.loss.bce_weight},
               {"dice_weight", cfg.loss.dice_weight},
               {"score_weight", cfg.loss.score_weight},
               {"supervise_all_layers", cfg.loss.supervise_all_layers},
               {"gt_pool_threshold", cfg.loss.gt_pool_threshold}};
  j["schedule"] = {{"base_lr", cfg.schedule.base_lr},
                   {"decay_epochs", cfg.schedule.decay_epochs},
                   {"decay_rate", cfg.schedule.decay_rate},
                   {"epochs", cfg.schedule.epochs},
                   {"batch_size", cfg.schedule.batch_size},
                   {"seed", cfg.schedule.seed},
                   {"max_steps", cfg.schedule.max_steps}};
  j["optimizer"] = cfg.optimizer == OptimizerKind::Adam ? "adam" : "sgd";
  return j;
}

PipelineConfig pipeline_config_from_json(const nlohmann::json& j) {
  PipelineConfig cfg;
  try {
    const auto o = section(j, "overseg");
    get_if(o, "knn", cfg.overseg.knn);
    get_if(o, "color_weight", cfg.overseg.color_weight);
    get_if(o, "threshold", cfg.overseg.threshold);
    get_if(o, "min_size", cfg.overseg.min_size);
    get_if(o, "target_max_superpoints", cfg.overseg.target_max_superpoints);

    const auto m = section(j, "model");
    get_if(m, "d", cfg.model.d);
    get_if(m, "e", cfg.model.e);
    get_if(m, "c", cfg.model.c);
    get_if(m, "num_layers", cfg.model.num_layers);
    get_if(m, "heads", cfg.model.heads);
    get_if(m, "ffn_hidden", cfg.model.ffn_hidden);
    get_if(m, "binarize_threshold", cfg.model.binarize_threshold);
    cfg.model.validate();

    const auto pf = section(j, "point_features");
    std::string kind = "geometric";
    get_if(pf, "kind", kind);
    if (kind == "file") {
      cfg.point_provider.kind = PointFeatureProvider::Kind::FileLoaded;
    } else if (kind != "geometric") {
      throw Error(ErrorCode::ConfigInfeasible, "point_features.kind must be geometric or file");
    }
    get_if(pf, "seed", cfg.point_provider.seed);
    get_if(pf, "neighbors", cfg.point_provider.neighbors);
    cfg.point_provider.dims = cfg.model.c;

    const auto tf = section(j, "token_features");
    get_if(tf, "seed", cfg.token_provider.seed);
    cfg.token_provider.dims = cfg.model.e;

    const auto l = section(j, "loss");
    get_if(l, "bce_weight", cfg.loss.bce_weight);
    get_if(l, "dice_weight", cfg.loss.dice_weight);
    get_if(l, "score_weight", cfg.loss.score_weight);
    get_if(l, "supervise_all_layers", cfg.loss.supervise_all_layers);
    get_if(l, "gt_pool_threshold", cfg.loss.gt_pool_threshold);
    if (cfg.loss.bce_weight < 0 || cfg.loss.dice_weight < 0 || cfg.loss.score_weight < 0) {
      throw Error(ErrorCode::ConfigInfeasible, "loss weights must be non-negative");
    }

    const auto s = section(j, "schedule");
    get_if(s, "base_lr", cfg.schedule.base_lr);
    get_if(s, "decay_epochs", cfg.schedule.decay_epochs);
    get_if(s, "decay_rate", cfg.schedule.decay_rate);
    get_if(s, "epochs", cfg.schedule.epochs);
    get_if(s, "batch_size", cfg.schedule.batch_size);
    get_if(s, "seed", cfg.schedule.seed);
    get_if(s, "max_steps", cfg.schedule.max_steps);
    cfg.schedule.validate();

    std::string opt = "adam";
    get_if(j, "optimizer", opt);
    if (opt == "sgd") {
      cfg.optimizer = OptimizerKind::Sgd;
    } else if (opt != "adam") {
      throw Error(ErrorCode::ConfigInfeasible, "optimizer must be adam or sgd");
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedRecord, std::string("pipeline config: ") + e.what());
  }
  return cfg;
}

nlohmann::ordered_json to_json(const SynthConfig& cfg) {
  nlohmann::ordered_json j;
  j["seed"] = cfg.seed;
  j["num_scenes"] = cfg.num_scenes;
  j["objects_per_scene"] = range_json(cfg.objects_per_scene);
  j["points_per_object"] = range_json(cfg.points_per_object);
  j["phrases_per_description"] = range_json(cfg.phrases_per_description);
  j["descriptions_per_scene"] = cfg.descriptions_per_scene;
  j["long_text_fraction"] = cfg.long_text_fraction;
  j["adjacent_same_category_fraction"] = cfg.adjacent_same_category_fraction;
  j["sentence_level_fraction"] = cfg.sentence_level_fraction;
  j["grid_size"] = cfg.grid_size;
  j["object_size"] = cfg.object_size;
  j["cluster_gap"] = cfg.cluster_gap;
  j["color_jitter"] = cfg.color_jitter;
  j["floor_points"] = cfg.floor_points;
  return j;
}

SynthConfig synth_config_from_json(const nlohmann::json& j) {
  SynthConfig cfg;
  try {
    get_if(j, "seed", cfg.seed);
    get_if(j, "num_scenes", cfg.num_scenes);
    range_from(j, "objects_per_scene", cfg.objects_per_scene);
    range_from(j, "points_per_object", cfg.points_per_object);
    range_from(j, "phrases_per_description", cfg.phrases_per_description);
    get_if(j, "descriptions_per_scene", cfg.descriptions_per_scene);
    get_if(j, "long_text_fraction", cfg.long_text_fraction);
    get_if(j, "adjacent_same_category_fraction", cfg.adjacent_same_category_fraction);
    get_if(j, "sentence_level_fraction", cfg.sentence_level_fraction);
    get_if(j, "grid_size", cfg.grid_size);
    get_if(j, "object_size", cfg.object_size);
    get_if(j, "cluster_gap", cfg.cluster_gap);
    get_if(j, "color_jitter", cfg.color_jitter);
    get_if(j, "floor_points", cfg.floor_points);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedRecord, std::string("synth config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

void write_synthetic_dataset(const SynthConfig& cfg, const std::filesystem::path& out_dir) {
  const DataDir dir{out_dir};
  std::error_code ec;
  std::filesystem::create_directories(dir.scenes(), ec);
  if (ec) throw Error(ErrorCode::PathUnwritable, dir.scenes().string());
  std::vector<Scene> scenes;
  for (int i = 0; i < cfg.num_scenes; ++i) scenes.push_back(gen_scene(cfg, i));
  for (const auto& s : scenes) write_scene(dir.scenes() / (s.scene_id + ".scene"), s);
  save_dataset(dir.records(), gen_dataset(cfg, scenes));
}

SuperpointPartition cached_oversegment(const Scene& scene, const OversegConfig& cfg,
                                       const std::filesystem::path& cache_dir) {
  const auto hash = cfg.hash();
  if (!cache_dir.empty()) {
    const auto path = cache_dir / (scene.scene_id + ".sp");
    if (std::filesystem::exists(path)) {
      auto [part, stored] = read_partition(path);
      if (stored == hash && part.scene_id == scene.scene_id && part.num_points() == scene.size()) return part;
    }
  }
  auto part = oversegment(scene, cfg);
  if (!cache_dir.empty()) {
    std::error_code ec;
    std::filesystem::create_directories(cache_dir, ec);
    write_partition(cache_dir / (scene.scene_id + ".sp"), part, hash);
  }
  return part;
}

std::vector<Sample> prepare_samples(const std::vector<AnnotatedDescription>& descs, const SceneMap& scenes,
                                    const PipelineConfig& cfg, const std::filesystem::path& cache_dir) {
  struct SceneInputs {
    SuperpointPartition part;
    Matrix pooled;
  };
  std::map<std::string, SceneInputs> per_scene;
  std::vector<Sample> samples;
  samples.reserve(descs.size());
  for (const auto& d : descs) {
    const auto scene_it = scenes.find(d.scene_id);
    if (scene_it == scenes.end()) throw Error(ErrorCode::MissingPrediction, "scene " + d.scene_id);
    const Scene& scene = scene_it->second;
    auto it = per_scene.find(d.scene_id);
    if (it == per_scene.end()) {
      SceneInputs in;
      in.part = cached_oversegment(scene, cfg.overseg, cache_dir);
      in.pooled = sp_pool(point_features(scene, cfg.point_provider), in.part);
      it = per_scene.emplace(d.scene_id, std::move(in)).first;
    }
    Sample s;
    s.description_id = d.description_id;
    s.pooled = it->second.pooled;
    s.partition = it->second.part;
    s.token_features = token_features(d.tokens, cfg.token_provider);
    s.supervision = make_supervision(d, scene, s.partition, cfg.loss.gt_pool_threshold);
    s.description = d;
    for (const auto& u : d.units()) s.gt_masks.push_back(union_instance_mask(scene, u.target_ids));
    s.long_text = is_long(d.length());
    s.complex_text = is_complex(d.unit_count());
    samples.push_back(std::move(s));
  }
  return samples;
}

void write_predictions(const std::filesystem::path& path, const std::vector<PhraseMaskSet>& preds) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::PathUnwritable, path.string());
  for (const auto& p : preds) {
    nlohmann::ordered_json j;
    j["description_id"] = p.description_id;
    auto masks = nlohmann::ordered_json::array();
    for (const auto& m : p.masks) masks.push_back(m.indices());
    j["masks"] = masks;
    if (p.sentence_mask) j["sentence_mask"] = p.sentence_mask->indices();
    out << j.dump() << '\n';
  }
  if (!out) throw Error(ErrorCode::PathUnwritable, path.string());
}

std::vector<PhraseMaskSet> read_predictions(const std::filesystem::path& path, const SceneMap& scenes,
                                            const std::vector<AnnotatedDescription>& descs) {
  std::map<std::string, const Scene*> scene_of;
  for (const auto& d : descs) {
    const auto it = scenes.find(d.scene_id);
    if (it != scenes.end()) scene_of[d.description_id] = &it->second;
  }
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::FileUnreadable, path.string());
  std::vector<PhraseMaskSet> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto where = path.string() + ":" + std::to_string(line_no);
    try {
      const auto j = nlohmann::json::parse(line);
      PhraseMaskSet p;
      p.description_id = j.at("description_id").get<std::string>();
      const auto sit = scene_of.find(p.description_id);
      if (sit == scene_of.end()) continue;  // not part of the evaluated set
      const Scene& scene = *sit->second;
      auto to_mask = [&](const nlohmann::json& idx) {
        PointMask m(scene.scene_id, scene.size());
        for (const auto& v : idx) {
          const auto i = v.get<std::size_t>();
          if (i >= scene.size()) throw Error(ErrorCode::IndexOutOfRange, where + ": point " + std::to_string(i));
          m.set(i);
        }
        return m;
      };
      for (const auto& m : j.at("masks")) p.masks.push_back(to_mask(m));
      if (j.contains("sentence_mask")) p.sentence_mask = to_mask(j["sentence_mask"]);
      out.push_back(std::move(p));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::MalformedRecord, where + ": " + e.what());
    }
  }
  return out;
}

}  // namespace dres
