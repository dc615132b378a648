#include <doctest.h>

#include <fstream>

#include "dres/error.hpp"
#include "dres/metrics.hpp"
#include "dres/pipeline.hpp"
#include "support.hpp"

using namespace dres;

TEST_SUITE("pipeline") {
  TEST_CASE("pipeline config round trips and validates") {
    PipelineConfig cfg;
    cfg.model.num_layers = 3;
    cfg.loss.supervise_all_layers = false;
    cfg.schedule.decay_epochs = {5, 9};
    cfg.optimizer = OptimizerKind::Sgd;
    cfg.overseg.target_max_superpoints = 12;
    const auto back = pipeline_config_from_json(nlohmann::json::parse(to_json(cfg).dump()));
    CHECK(back.model == cfg.model);
    CHECK(!back.loss.supervise_all_layers);
    CHECK(back.schedule.decay_epochs == std::vector<int>{5, 9});
    CHECK(back.optimizer == OptimizerKind::Sgd);
    CHECK(back.overseg.hash() == cfg.overseg.hash());
    CHECK(back.point_provider.dims == cfg.model.c);

    CHECK(pipeline_config_from_json(nlohmann::json::object()).model == ModelConfig{});
    CHECK_THROWS_AS(pipeline_config_from_json(nlohmann::json::parse(R"({"optimizer":"rmsprop"})")), Error);
    CHECK_THROWS_AS(pipeline_config_from_json(nlohmann::json::parse(R"({"model":{"d":10,"heads":4}})")), Error);
    CHECK_THROWS_AS(pipeline_config_from_json(nlohmann::json::parse(R"({"model":{"d":"wide"}})")), Error);
  }

  TEST_CASE("synth config round trips") {
    SynthConfig cfg;
    cfg.seed = 42;
    cfg.objects_per_scene = {2, 3};
    cfg.sentence_level_fraction = 0.25;
    const auto back = synth_config_from_json(nlohmann::json::parse(to_json(cfg).dump()));
    CHECK(back.seed == 42);
    CHECK(back.objects_per_scene.min == 2);
    CHECK(back.objects_per_scene.max == 3);
    CHECK(back.sentence_level_fraction == 0.25);
    CHECK_THROWS_AS(synth_config_from_json(nlohmann::json::parse(R"({"objects_per_scene":[3]})")), Error);
  }

  TEST_CASE("synthetic datasets flow through the file pipeline") {
    const auto dir = testing::scratch_dir("pipeline");
    SynthConfig synth;
    synth.num_scenes = 2;
    write_synthetic_dataset(synth, dir);
    const DataDir data{dir};
    const auto scenes = load_scenes(data.scenes());
    const auto loaded = load_dataset(data.records(), &scenes);
    CHECK(scenes.size() == 2);
    CHECK(loaded.violations.empty());
    CHECK(loaded.descriptions.size() == 4);

    PipelineConfig cfg;
    cfg.overseg.target_max_superpoints = 16;
    const auto samples = prepare_samples(loaded.descriptions, scenes, cfg, data.superpoints());
    REQUIRE(samples.size() == 4);
    CHECK(std::filesystem::exists(data.superpoints() / "synth0000.sp"));
    for (const auto& s : samples) {
      CHECK(s.pooled.rows() == s.partition.num_superpoints);
      CHECK(s.pooled.cols() == cfg.model.c);
      CHECK(s.token_features.rows() == s.description.length() + 2);
      CHECK(s.gt_masks.size() == static_cast<std::size_t>(s.description.unit_count()));
    }
    // A second pass reads the cache and produces the same partitions.
    const auto again = prepare_samples(loaded.descriptions, scenes, cfg, data.superpoints());
    CHECK(again[0].partition == samples[0].partition);
    CHECK(again[0].pooled == samples[0].pooled);
  }

  TEST_CASE("stale cache entries are recomputed") {
    const auto dir = testing::scratch_dir("stale_cache");
    const auto scene = gen_scene(SynthConfig{}, 0);
    OversegConfig a;
    a.target_max_superpoints = 4;
    OversegConfig b;
    b.target_max_superpoints = 9;
    CHECK(cached_oversegment(scene, a, dir).num_superpoints <= 4);
    CHECK(cached_oversegment(scene, b, dir) == oversegment(scene, b));
  }

  TEST_CASE("ground-truth predictions evaluate to 1 everywhere") {
    const auto scenes = load_scenes(testing::fixture_dir() / "scenes");
    const auto loaded = load_dataset(testing::fixture_dir() / "records.jsonl", &scenes);
    std::vector<PhraseMaskSet> preds;
    for (const auto& d : loaded.descriptions) {
      PhraseMaskSet p;
      p.description_id = d.description_id;
      for (const auto& ph : d.phrases) p.masks.push_back(union_instance_mask(scenes.at(d.scene_id), ph.target_ids));
      if (d.sentence_target) p.sentence_mask = union_instance_mask(scenes.at(d.scene_id), d.sentence_target->target_ids);
      preds.push_back(p);
    }
    const auto dir = testing::scratch_dir("preds");
    write_predictions(dir / "p.jsonl", preds);
    const auto back = read_predictions(dir / "p.jsonl", scenes, loaded.descriptions);
    const auto r = report(evaluate(back, loaded.descriptions, scenes));
    for (const auto* m : {&r.overall, &r.long_texts, &r.complex_texts}) {
      REQUIRE(*m);
      CHECK((*m)->miou == 1.0);
      CHECK((*m)->miou_s == 1.0);
      CHECK((*m)->acc_25 == 1.0);
      CHECK((*m)->acc_50 == 1.0);
    }
  }

  TEST_CASE("prediction files with out-of-range points are rejected") {
    const auto scenes = load_scenes(testing::fixture_dir() / "scenes");
    const auto loaded = load_dataset(testing::fixture_dir() / "records.jsonl", &scenes);
    const auto dir = testing::scratch_dir("bad_preds");
    std::ofstream(dir / "p.jsonl") << R"({"description_id":"r01","masks":[[0,99]]})" << "\n";
    CHECK_THROWS_AS(read_predictions(dir / "p.jsonl", scenes, loaded.descriptions), Error);
  }
}
