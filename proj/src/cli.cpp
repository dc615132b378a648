#include "dres/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>

#include "dres/annotation.hpp"
#include "dres/error.hpp"
#include "dres/metrics.hpp"
#include "dres/pipeline.hpp"

namespace dres::cli {

namespace {

namespace fs = std::filesystem;

struct Globals {
  std::optional<std::uint64_t> seed;
  bool quiet = false;
};

void write_text_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::PathUnwritable, path.string());
  out << text;
  if (!out) throw Error(ErrorCode::PathUnwritable, path.string());
}

std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::FileUnreadable, path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

nlohmann::ordered_json to_json(const std::vector<EpochLog>& log) {
  nlohmann::ordered_json epochs = nlohmann::ordered_json::array();
  for (const auto& e : log) {
    epochs.push_back({{"epoch", e.epoch},
                      {"steps", e.steps},
                      {"lr", e.lr},
                      {"bce", e.bce},
                      {"dice", e.dice},
                      {"score", e.score},
                      {"total", e.total},
                      {"miou", e.miou}});
  }
  nlohmann::ordered_json j;
  j["kind"] = "training_log";
  j["epochs"] = epochs;
  return j;
}

std::vector<EpochLog> training_log_from_json(const nlohmann::json& j) {
  std::vector<EpochLog> log;
  for (const auto& e : j.at("epochs")) {
    EpochLog l;
    l.epoch = e.at("epoch").get<int>();
    l.steps = e.at("steps").get<int>();
    l.lr = e.at("lr").get<double>();
    l.bce = e.at("bce").get<double>();
    l.dice = e.at("dice").get<double>();
    l.score = e.at("score").get<double>();
    l.total = e.at("total").get<double>();
    l.miou = e.at("miou").get<double>();
    log.push_back(l);
  }
  return log;
}

std::string format_table(const std::vector<EpochLog>& log) {
  std::string out;
  char buf[200];
  std::snprintf(buf, sizeof buf, "%6s %7s %10s %9s %9s %9s %9s %7s\n", "epoch", "steps", "lr", "bce", "dice",
                "score", "total", "mIoU");
  out += buf;
  for (const auto& e : log) {
    std::snprintf(buf, sizeof buf, "%6d %7d %10.3g %9.5f %9.5f %9.5f %9.5f %6.1f%%\n", e.epoch, e.steps, e.lr, e.bce,
                  e.dice, e.score, e.total, 100.0 * e.miou);
    out += buf;
  }
  return out;
}

std::string format_csv(const std::vector<EpochLog>& log) {
  std::string out = "epoch,steps,lr,bce,dice,score,total,miou\n";
  char buf[256];
  for (const auto& e : log) {
    std::snprintf(buf, sizeof buf, "%d,%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", e.epoch, e.steps, e.lr, e.bce,
                  e.dice, e.score, e.total, e.miou);
    out += buf;
  }
  return out;
}

/// Renders any structured artifact (metrics, dataset summary, training log) in `format`.
std::string render(const nlohmann::json& j, const std::string& format) {
  const std::string kind = j.value("kind", "");
  if (format == "structured") return j.dump(2) + "\n";
  if (kind == "metrics") {
    const auto r = metrics_report_from_json(j);
    return format == "csv" ? format_csv(r) : format_table(r);
  }
  if (kind == "dataset_summary") {
    const auto s = dataset_summary_from_json(j);
    return format == "csv" ? format_csv(s) : format_table(s);
  }
  if (kind == "training_log") {
    const auto log = training_log_from_json(j);
    return format == "csv" ? format_csv(log) : format_table(log);
  }
  throw Error(ErrorCode::MalformedRecord, "unknown report kind '" + kind + "'");
}

/// Structured file at `path`, aligned table next to it.
void emit_report(const nlohmann::ordered_json& j, const fs::path& path, CommandOutcome& outcome) {
  write_text_file(path, j.dump(2) + "\n");
  fs::path table = path;
  table += ".txt";
  write_text_file(table, render(nlohmann::json::parse(j.dump()), "table"));
  outcome.artifacts.push_back(path.string());
  outcome.artifacts.push_back(table.string());
}

PipelineConfig load_pipeline_config(const std::string& path) {
  if (path.empty()) return {};
  return pipeline_config_from_json(read_json_file(path));
}

fs::path sidecar(const fs::path& ckpt, const char* suffix) {
  fs::path p = ckpt;
  p += suffix;
  return p;
}

struct DataBundle {
  std::vector<AnnotatedDescription> descs;
  SceneMap scenes;
  std::vector<DatasetViolation> violations;
};

DataBundle load_data(const DataDir& dir) {
  DataBundle b;
  b.scenes = load_scenes(dir.scenes());
  auto loaded = load_dataset(dir.records(), &b.scenes);
  b.descs = std::move(loaded.descriptions);
  b.violations = std::move(loaded.violations);
  return b;
}

void list_violations(const std::vector<DatasetViolation>& v, std::ostream& err) {
  for (const auto& x : v) {
    err << "line " << x.line;
    if (!x.description_id.empty()) err << " [" << x.description_id << "]";
    err << ": " << x.rule << "\n";
  }
}

PipelineConfig resolve_config(const PipelineConfig& base, const DataDir& dir) {
  PipelineConfig cfg = base;
  if (cfg.point_provider.kind == PointFeatureProvider::Kind::FileLoaded) cfg.point_provider.table_dir = dir.features();
  return cfg;
}

// --- subcommands ------------------------------------------------------------

CommandOutcome run_validate(const std::string& records, const std::string& scenes_path, std::ostream& out,
                            std::ostream& err) {
  CommandOutcome o;
  const SceneMap scenes = load_scenes(scenes_path);
  std::size_t count = 0;
  for (const auto& [id, scene] : scenes) {
    for (const auto& v : validate_scene(scene)) {
      err << "scene " << id << " point " << v.point_index << ": " << v.rule << "\n";
      ++count;
    }
  }
  const auto loaded = load_dataset(records, &scenes);
  list_violations(loaded.violations, err);
  count += loaded.violations.size();
  o.summary = std::to_string(loaded.descriptions.size()) + " records, " + std::to_string(scenes.size()) +
              " scenes, " + std::to_string(count) + " violations";
  out << o.summary << "\n";
  o.exit_code = count == 0 ? kExitOk : kExitViolations;
  return o;
}

CommandOutcome run_stats(const std::vector<std::string>& files, const std::string& reference,
                         const std::string& format, const std::string& out_path, std::ostream& out,
                         std::ostream& err) {
  CommandOutcome o;
  std::vector<AnnotatedDescription> descs;
  for (const auto& f : files) {
    auto loaded = load_dataset(f);
    if (!loaded.violations.empty()) {
      err << f << ": " << loaded.violations.size() << " records skipped or flagged\n";
      list_violations(loaded.violations, err);
    }
    descs.insert(descs.end(), loaded.descriptions.begin(), loaded.descriptions.end());
  }
  const auto summary = dataset_stats(descs);
  const auto j = to_json(summary);
  if (!out_path.empty()) emit_report(j, out_path, o);
  out << render(nlohmann::json::parse(j.dump()), format);
  o.summary = std::to_string(summary.num_descriptions) + " descriptions";
  if (!reference.empty()) {
    if (reference != "detailrefer") throw Error(ErrorCode::ConfigInfeasible, "unknown reference '" + reference + "'");
    bool all = true;
    for (const auto& c : compare_to_reference(summary, kDetailReferStats)) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "%-4s %-20s observed %.6g expected %.6g\n", c.pass ? "PASS" : "FAIL",
                    c.field.c_str(), c.observed, c.expected);
      out << buf;
      all = all && c.pass;
    }
    o.summary += all ? ", matches reference" : ", differs from reference";
    if (!all) o.exit_code = kExitViolations;
  }
  return o;
}

CommandOutcome run_oversegment(const std::string& scenes_path, const std::string& cache, const std::string& config,
                               std::ostream& out) {
  CommandOutcome o;
  const auto cfg = load_pipeline_config(config);
  const SceneMap scenes = load_scenes(scenes_path);
  std::error_code ec;
  fs::create_directories(cache, ec);
  if (ec) throw Error(ErrorCode::PathUnwritable, cache);
  for (const auto& [id, scene] : scenes) {
    const auto part = oversegment(scene, cfg.overseg);
    const auto path = fs::path(cache) / (id + ".sp");
    write_partition(path, part, cfg.overseg.hash());
    out << id << ": " << scene.size() << " points -> " << part.num_superpoints << " superpoints\n";
    o.artifacts.push_back(path.string());
  }
  o.summary = std::to_string(scenes.size()) + " scenes oversegmented";
  return o;
}

CommandOutcome run_synth(const std::string& config, const std::string& out_dir, const Globals& g) {
  CommandOutcome o;
  SynthConfig cfg = config.empty() ? SynthConfig{} : synth_config_from_json(read_json_file(config));
  if (g.seed) cfg.seed = *g.seed;
  cfg.validate();
  write_synthetic_dataset(cfg, out_dir);
  const DataDir dir{out_dir};
  o.artifacts.push_back(dir.records().string());
  o.artifacts.push_back(dir.scenes().string());
  o.summary = std::to_string(cfg.num_scenes) + " scenes, " +
              std::to_string(cfg.num_scenes * cfg.descriptions_per_scene) + " descriptions";
  return o;
}

CommandOutcome run_train(const std::string& data, const std::string& config, const std::string& ckpt,
                         const Globals& g, std::ostream& out, std::ostream& err) {
  CommandOutcome o;
  const DataDir dir{data};
  PipelineConfig cfg = resolve_config(load_pipeline_config(config), dir);
  if (g.seed) cfg.schedule.seed = *g.seed;
  const auto bundle = load_data(dir);
  if (!bundle.violations.empty()) {
    list_violations(bundle.violations, err);
    o.exit_code = kExitViolations;
    o.summary = std::to_string(bundle.violations.size()) + " violations; not training";
    return o;
  }
  if (bundle.descs.empty()) throw Error(ErrorCode::EmptyDataset, dir.records().string());
  const auto samples = prepare_samples(bundle.descs, bundle.scenes, cfg, dir.superpoints());
  TrainOptions opts;
  opts.optimizer = cfg.optimizer;
  opts.on_epoch = [&](const EpochLog& e) {
    if (!g.quiet) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "epoch %d  steps %d  lr %.3g  loss %.5f  mIoU %.1f%%\n", e.epoch, e.steps, e.lr,
                    e.total, 100.0 * e.miou);
      out << buf;
    }
  };
  auto result = train(samples, cfg.schedule, cfg.model, cfg.loss, init_model(cfg.model, cfg.schedule.seed), opts);
  save_checkpoint(ckpt, cfg.model, result.state);
  o.artifacts.push_back(ckpt);
  const auto cfg_path = sidecar(ckpt, ".config.json");
  write_text_file(cfg_path, to_json(cfg).dump(2) + "\n");
  o.artifacts.push_back(cfg_path.string());
  const auto log_path = sidecar(ckpt, ".log.json");
  write_text_file(log_path, to_json(result.log).dump(2) + "\n");
  o.artifacts.push_back(log_path.string());
  o.summary = std::to_string(samples.size()) + " samples, " + std::to_string(result.steps) + " steps";
  return o;
}

CommandOutcome run_evaluate(const std::string& data, const std::string& ckpt, const std::string& predictions,
                            const std::string& config, const std::string& report_path,
                            const std::string& write_preds, std::ostream& out) {
  CommandOutcome o;
  const DataDir dir{data};
  const auto bundle = load_data(dir);
  if (!bundle.violations.empty()) {
    throw Error(ErrorCode::MalformedRecord,
                std::to_string(bundle.violations.size()) + " dataset violations; run validate first");
  }
  std::vector<PhraseMaskSet> preds;
  if (!predictions.empty()) {
    preds = read_predictions(predictions, bundle.scenes, bundle.descs);
  } else {
    if (ckpt.empty()) throw Error(ErrorCode::ConfigInfeasible, "evaluate needs --ckpt or --predictions");
    std::string cfg_file = config;
    if (cfg_file.empty() && fs::exists(sidecar(ckpt, ".config.json"))) cfg_file = sidecar(ckpt, ".config.json");
    PipelineConfig cfg = resolve_config(load_pipeline_config(cfg_file), dir);
    auto [model_cfg, state] = load_checkpoint(ckpt);
    cfg.model = model_cfg;
    cfg.point_provider.dims = model_cfg.c;
    cfg.token_provider.dims = model_cfg.e;
    const auto samples = prepare_samples(bundle.descs, bundle.scenes, cfg, dir.superpoints());
    for (const auto& s : samples) preds.push_back(predict_sample(state, s, cfg.model));
  }
  if (!write_preds.empty()) {
    write_predictions(write_preds, preds);
    o.artifacts.push_back(write_preds);
  }
  const auto records = evaluate(preds, bundle.descs, bundle.scenes);
  const auto rep = report(records);
  const auto j = to_json(rep);
  if (!report_path.empty()) emit_report(j, report_path, o);
  out << format_table(rep);
  o.summary = std::to_string(records.size()) + " descriptions evaluated";
  return o;
}

CommandOutcome run_report(const std::string& in, const std::string& format, const std::string& out_path,
                          std::ostream& out) {
  CommandOutcome o;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(in));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedRecord, in + ": " + e.what());
  }
  const auto text = render(j, format);
  if (out_path.empty()) {
    out << text;
  } else {
    write_text_file(out_path, text);
    o.artifacts.push_back(out_path);
  }
  o.summary = "rendered " + j.value("kind", std::string("report")) + " as " + format;
  return o;
}

}  // namespace

CommandOutcome dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Detailed 3D referring-expression segmentation toolkit", "dres"};
  app.require_subcommand(1, 1);
  Globals g;
  std::uint64_t seed_value = 0;
  auto* seed_opt = app.add_option("--seed", seed_value, "Seed for every random choice")->expected(1);
  app.add_flag("--quiet", g.quiet, "Suppress progress output");

  std::string records, scenes, cache, config, out_path, data, ckpt, report_path, predictions, in, reference,
      write_preds;
  std::string format = "table";
  std::vector<std::string> record_files;

  auto* validate = app.add_subcommand("validate", "Check records and scenes; exit 1 on violations");
  validate->add_option("records", records, "Record file (JSON lines)")->required();
  validate->add_option("scenes", scenes, "Scene directory or file")->required();

  auto* stats = app.add_subcommand("stats", "Dataset statistics");
  stats->add_option("records", record_files, "Record files (JSON lines), summarized together")->required();
  stats->add_option("--reference", reference, "Compare against reference corpus statistics")
      ->check(CLI::IsMember({"detailrefer"}));
  stats->add_option("--format", format, "Output format")->check(CLI::IsMember({"table", "csv", "structured"}));
  stats->add_option("--out", out_path, "Also write the structured summary here");

  auto* overseg = app.add_subcommand("oversegment", "Cache superpoint partitions");
  overseg->add_option("scenes", scenes, "Scene directory or file")->required();
  overseg->add_option("--out", cache, "Cache directory")->required();
  overseg->add_option("--config", config, "Pipeline config (uses its overseg section)");

  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  synth->add_option("--config", config, "Synthetic benchmark config");
  synth->add_option("--out", out_path, "Output data directory")->required();

  auto* trainc = app.add_subcommand("train", "Train a model");
  trainc->add_option("--data", data, "Data directory")->required();
  trainc->add_option("--config", config, "Model and schedule config");
  trainc->add_option("--out", ckpt, "Checkpoint path")->required();

  auto* evalc = app.add_subcommand("evaluate", "Evaluate a checkpoint or external predictions");
  evalc->add_option("--data", data, "Data directory")->required();
  auto* ckpt_opt = evalc->add_option("--ckpt", ckpt, "Checkpoint path");
  auto* pred_opt = evalc->add_option("--predictions", predictions, "External prediction masks (JSON lines)");
  ckpt_opt->excludes(pred_opt);
  evalc->add_option("--config", config, "Pipeline config (defaults to the checkpoint's sidecar)");
  evalc->add_option("--report", report_path, "Structured report path (table written to <path>.txt)");
  evalc->add_option("--write-predictions", write_preds, "Write predicted masks here");

  auto* reportc = app.add_subcommand("report", "Render a structured report");
  reportc->add_option("--in", in, "Structured report file")->required();
  reportc->add_option("--format", format, "Output format")->check(CLI::IsMember({"table", "csv", "structured"}));
  reportc->add_option("--out", out_path, "Write here instead of standard output");

  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  CommandOutcome outcome;
  std::vector<std::string> reversed(args.rbegin(), args.rend());
  if (args.empty()) {
    err << app.help();
    outcome.exit_code = kExitError;
    return outcome;
  }
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return outcome;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    outcome.exit_code = kExitError;
    return outcome;
  }
  if (seed_opt->count() > 0) g.seed = seed_value;

  try {
    if (validate->parsed()) {
      outcome = run_validate(records, scenes, out, err);
    } else if (stats->parsed()) {
      outcome = run_stats(record_files, reference, format, out_path, out, err);
    } else if (overseg->parsed()) {
      outcome = run_oversegment(scenes, cache, config, out);
    } else if (synth->parsed()) {
      outcome = run_synth(config, out_path, g);
    } else if (trainc->parsed()) {
      outcome = run_train(data, config, ckpt, g, out, err);
    } else if (evalc->parsed()) {
      outcome = run_evaluate(data, ckpt, predictions, config, report_path, write_preds, out);
    } else if (reportc->parsed()) {
      outcome = run_report(in, format, out_path, out);
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    outcome.exit_code = kExitError;
    outcome.summary = e.what();
    return outcome;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    outcome.exit_code = kExitError;
    outcome.summary = e.what();
    return outcome;
  }
  if (!g.quiet) {
    for (const auto& a : outcome.artifacts) err << "wrote " << a << "\n";
    if (!(validate->parsed())) err << outcome.summary << "\n";
  }
  return outcome;
}

}  // namespace dres::cli
