#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "dres/annotation.hpp"
#include "dres/cli.hpp"
#include "dres/detailbase.hpp"
#include "dres/error.hpp"
#include "dres/metrics.hpp"
#include "dres/pipeline.hpp"
#include "dres/superpoint.hpp"
#include "dres/synthbench.hpp"
#include "dres/training.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
using namespace dres;

namespace {

nlohmann::json parse_json_arg(const std::string& text) {
  if (text.empty()) return nlohmann::json::object();
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedRecord, e.what());
  }
}

py::dict phrase_dict(const PhraseTarget& p) {
  py::dict d;
  d["start"] = p.start;
  d["end"] = p.end;
  d["head_index"] = p.head_index;
  d["target_ids"] = std::vector<std::int64_t>(p.target_ids.begin(), p.target_ids.end());
  return d;
}

py::dict description_dict(const AnnotatedDescription& desc) {
  py::dict d;
  d["description_id"] = desc.description_id;
  d["scene_id"] = desc.scene_id;
  d["tokens"] = desc.tokens;
  py::list phrases;
  for (const auto& p : desc.phrases) phrases.append(phrase_dict(p));
  d["phrases"] = phrases;
  if (desc.sentence_target) {
    const auto& ids = desc.sentence_target->target_ids;
    d["sentence_target_ids"] = std::vector<std::int64_t>(ids.begin(), ids.end());
  } else {
    d["sentence_target_ids"] = py::none();
  }
  return d;
}

py::array_t<double> scene_points(const Scene& s) {
  py::array_t<double> out({static_cast<py::ssize_t>(s.size()), py::ssize_t{6}});
  auto a = out.mutable_unchecked<2>();
  for (std::size_t i = 0; i < s.size(); ++i) {
    const auto& p = s.points[i];
    const double row[6] = {p.x, p.y, p.z, p.r, p.g, p.b};
    for (int k = 0; k < 6; ++k) a(static_cast<py::ssize_t>(i), k) = row[k];
  }
  return out;
}

Scene scene_from_arrays(const std::string& scene_id, const py::array_t<double, py::array::c_style | py::array::forcecast>& points,
                        const std::vector<std::int64_t>& labels) {
  if (points.ndim() != 2 || points.shape(1) != 6) {
    throw Error(ErrorCode::ShapeMismatch, "points must be an (N, 6) array of x y z r g b");
  }
  if (static_cast<std::size_t>(points.shape(0)) != labels.size()) {
    throw Error(ErrorCode::LengthMismatch, std::to_string(points.shape(0)) + " points, " +
                                               std::to_string(labels.size()) + " labels");
  }
  Scene s;
  s.scene_id = scene_id;
  const auto a = points.unchecked<2>();
  for (py::ssize_t i = 0; i < points.shape(0); ++i) {
    s.points.push_back({a(i, 0), a(i, 1), a(i, 2), a(i, 3), a(i, 4), a(i, 5)});
  }
  s.instance_labels = labels;
  return s;
}

struct LoadedData {
  SceneMap scenes;
  std::vector<AnnotatedDescription> descs;
};

LoadedData load_clean(const fs::path& data_dir) {
  const DataDir dir{data_dir};
  LoadedData d;
  d.scenes = load_scenes(dir.scenes());
  auto loaded = load_dataset(dir.records(), &d.scenes);
  if (!loaded.violations.empty()) {
    const auto& v = loaded.violations.front();
    throw Error(ErrorCode::MalformedRecord, std::to_string(loaded.violations.size()) +
                                                " dataset violations, first at line " + std::to_string(v.line) +
                                                ": " + v.rule);
  }
  d.descs = std::move(loaded.descriptions);
  return d;
}

PipelineConfig resolved_config(const std::string& config_json, const fs::path& data_dir) {
  auto cfg = pipeline_config_from_json(parse_json_arg(config_json));
  if (cfg.point_provider.kind == PointFeatureProvider::Kind::FileLoaded) {
    cfg.point_provider.table_dir = DataDir{data_dir}.features();
  }
  return cfg;
}

py::list predictions_list(const std::vector<PhraseMaskSet>& preds) {
  py::list out;
  for (const auto& p : preds) {
    py::dict d;
    d["description_id"] = p.description_id;
    py::list masks;
    for (const auto& m : p.masks) masks.append(m.indices());
    d["masks"] = masks;
    d["sentence_mask"] = p.sentence_mask ? py::cast(p.sentence_mask->indices()) : py::none();
    out.append(d);
  }
  return out;
}

PointMask mask_from_indices(const Scene& scene, const std::vector<std::size_t>& idx) {
  PointMask m(scene.scene_id, scene.size());
  for (auto i : idx) {
    if (i >= scene.size()) {
      throw Error(ErrorCode::IndexOutOfRange, "point " + std::to_string(i) + " in scene " + scene.scene_id +
                                                  " with " + std::to_string(scene.size()) + " points");
    }
    m.set(i);
  }
  return m;
}

std::vector<EvalRecord> records_from(const std::vector<std::vector<double>>& ious) {
  std::vector<EvalRecord> out;
  for (std::size_t i = 0; i < ious.size(); ++i) out.push_back({std::to_string(i), ious[i], false, false});
  return out;
}

py::dict log_entry(const EpochLog& e) {
  py::dict d;
  d["epoch"] = e.epoch;
  d["steps"] = e.steps;
  d["lr"] = e.lr;
  d["bce"] = e.bce;
  d["dice"] = e.dice;
  d["score"] = e.score;
  d["total"] = e.total;
  d["miou"] = e.miou;
  return d;
}

}  // namespace

PYBIND11_MODULE(_dres, m) {
  m.doc() = "Native core of the dres toolkit";

  static const py::handle error_type = py::exception<Error>(m, "DresError", PyExc_RuntimeError).release();
  static const py::handle parse_error_type = py::exception<ParseError>(m, "ParseError", error_type.ptr()).release();
  py::register_exception_translator([](std::exception_ptr p) {
    auto raise = [](py::handle type, const Error& e) {
      py::object exc = type(e.what());
      exc.attr("code") = to_string(e.code());
      if (const auto* pe = dynamic_cast<const ParseError*>(&e)) exc.attr("offset") = pe->offset();
      PyErr_SetObject(type.ptr(), exc.ptr());
    };
    try {
      if (p) std::rethrow_exception(p);
    } catch (const ParseError& e) {
      raise(parse_error_type, e);
    } catch (const Error& e) {
      raise(error_type, e);
    }
  });

  py::class_<Scene>(m, "Scene")
      .def(py::init(&scene_from_arrays), py::arg("scene_id"), py::arg("points"), py::arg("labels"))
      .def_readonly("scene_id", &Scene::scene_id)
      .def_property_readonly("points", &scene_points)
      .def_property_readonly("labels", [](const Scene& s) { return py::array(py::cast(s.instance_labels)); })
      .def("instance_ids", &Scene::instance_ids)
      .def("__len__", &Scene::size)
      .def("__repr__", [](const Scene& s) {
        return "<Scene " + s.scene_id + " with " + std::to_string(s.size()) + " points>";
      });

  m.def("read_scene", [](const fs::path& p) { return read_scene(p); }, py::arg("path"));
  m.def("write_scene", [](const fs::path& p, const Scene& s) { write_scene(p, s); }, py::arg("path"),
        py::arg("scene"));
  m.def("load_scenes", [](const fs::path& p) { return load_scenes(p); }, py::arg("path"));
  m.def("scene_violations", [](const Scene& s) {
    std::vector<std::pair<std::size_t, std::string>> out;
    for (const auto& v : validate_scene(s)) out.emplace_back(v.point_index, v.rule);
    return out;
  });

  m.def("tokenize", [](const std::string& text) { return tokenize(text); }, py::arg("text"));
  m.def(
      "parse_tagged_text",
      [](const std::string& raw) {
        const auto t = parse_tagged_text(raw);
        py::dict d;
        d["tokens"] = t.tokens;
        py::list phrases;
        for (const auto& p : t.phrases) phrases.append(phrase_dict(p));
        d["phrases"] = phrases;
        return d;
      },
      py::arg("text"));
  m.def(
      "load_dataset",
      [](const fs::path& records, std::optional<fs::path> scenes) {
        SceneMap map;
        if (scenes) map = load_scenes(*scenes);
        const auto loaded = load_dataset(records, scenes ? &map : nullptr);
        py::list descs, violations;
        for (const auto& d : loaded.descriptions) descs.append(description_dict(d));
        for (const auto& v : loaded.violations) {
          py::dict d;
          d["line"] = v.line;
          d["description_id"] = v.description_id;
          d["rule"] = v.rule;
          violations.append(d);
        }
        return py::make_tuple(descs, violations);
      },
      py::arg("records"), py::arg("scenes") = py::none());
  m.def(
      "dataset_stats_json",
      [](const std::vector<fs::path>& files) {
        std::vector<AnnotatedDescription> all;
        for (const auto& f : files) {
          auto loaded = load_dataset(f);
          all.insert(all.end(), loaded.descriptions.begin(), loaded.descriptions.end());
        }
        return to_json(dataset_stats(all)).dump();
      },
      py::arg("files"));
  m.def(
      "reference_check",
      [](const std::vector<fs::path>& files, double tolerance) {
        std::vector<AnnotatedDescription> all;
        for (const auto& f : files) {
          auto loaded = load_dataset(f);
          all.insert(all.end(), loaded.descriptions.begin(), loaded.descriptions.end());
        }
        py::list out;
        for (const auto& c : compare_to_reference(dataset_stats(all), kDetailReferStats, tolerance)) {
          py::dict d;
          d["field"] = c.field;
          d["observed"] = c.observed;
          d["expected"] = c.expected;
          d["pass"] = c.pass;
          out.append(d);
        }
        return out;
      },
      py::arg("files"), py::arg("tolerance") = 0.10);

  m.def(
      "oversegment",
      [](const Scene& scene, const std::string& config_json) {
        const auto cfg = pipeline_config_from_json(parse_json_arg(config_json));
        const auto part = oversegment(scene, cfg.overseg);
        return py::array(py::cast(part.assignment));
      },
      py::arg("scene"), py::arg("config_json") = "");

  m.def(
      "gen_scene",
      [](const std::string& config_json, int index) {
        const auto cfg = synth_config_from_json(parse_json_arg(config_json));
        cfg.validate();
        return gen_scene(cfg, index);
      },
      py::arg("config_json"), py::arg("index"));
  m.def(
      "write_synthetic_dataset",
      [](const std::string& config_json, const fs::path& out_dir) {
        const auto cfg = synth_config_from_json(parse_json_arg(config_json));
        cfg.validate();
        write_synthetic_dataset(cfg, out_dir);
      },
      py::arg("config_json"), py::arg("out_dir"));
  m.def("default_synth_config_json", [] { return to_json(SynthConfig{}).dump(); });
  m.def("default_pipeline_config_json", [] { return to_json(PipelineConfig{}).dump(); });

  m.def(
      "train",
      [](const fs::path& data_dir, const fs::path& checkpoint, const std::string& config_json,
         std::optional<std::uint64_t> seed) {
        auto cfg = resolved_config(config_json, data_dir);
        if (seed) cfg.schedule.seed = *seed;
        TrainResult result;
        {
          py::gil_scoped_release release;
          const auto data = load_clean(data_dir);
          if (data.descs.empty()) throw Error(ErrorCode::EmptyDataset, DataDir{data_dir}.records().string());
          const auto samples = prepare_samples(data.descs, data.scenes, cfg, DataDir{data_dir}.superpoints());
          TrainOptions opts;
          opts.optimizer = cfg.optimizer;
          result = dres::train(samples, cfg.schedule, cfg.model, cfg.loss, init_model(cfg.model, cfg.schedule.seed),
                               opts);
          save_checkpoint(checkpoint, cfg.model, result.state);
        }
        py::list log;
        for (const auto& e : result.log) log.append(log_entry(e));
        py::dict out;
        out["steps"] = result.steps;
        out["log"] = log;
        out["config"] = to_json(cfg).dump();
        return out;
      },
      py::arg("data_dir"), py::arg("checkpoint"), py::arg("config_json") = "", py::arg("seed") = py::none());
  m.def(
      "predict",
      [](const fs::path& data_dir, const fs::path& checkpoint, const std::string& config_json) {
        auto cfg = resolved_config(config_json, data_dir);
        std::vector<PhraseMaskSet> preds;
        {
          py::gil_scoped_release release;
          auto [model_cfg, state] = load_checkpoint(checkpoint);
          cfg.model = model_cfg;
          cfg.point_provider.dims = model_cfg.c;
          cfg.token_provider.dims = model_cfg.e;
          const auto data = load_clean(data_dir);
          const auto samples = prepare_samples(data.descs, data.scenes, cfg, DataDir{data_dir}.superpoints());
          for (const auto& s : samples) preds.push_back(predict_sample(state, s, cfg.model));
        }
        return predictions_list(preds);
      },
      py::arg("data_dir"), py::arg("checkpoint"), py::arg("config_json") = "");
  m.def(
      "evaluate_json",
      [](const fs::path& data_dir, const py::list& predictions) {
        const auto data = load_clean(data_dir);
        std::map<std::string, const AnnotatedDescription*> by_id;
        for (const auto& d : data.descs) by_id[d.description_id] = &d;
        std::vector<PhraseMaskSet> preds;
        for (const auto& item : predictions) {
          const auto d = item.cast<py::dict>();
          const auto id = d["description_id"].cast<std::string>();
          const auto it = by_id.find(id);
          if (it == by_id.end()) continue;
          const Scene& scene = data.scenes.at(it->second->scene_id);
          PhraseMaskSet p{id, {}, std::nullopt};
          for (const auto& mask : d["masks"]) p.masks.push_back(mask_from_indices(scene, mask.cast<std::vector<std::size_t>>()));
          if (d.contains("sentence_mask") && !d["sentence_mask"].is_none()) {
            p.sentence_mask = mask_from_indices(scene, d["sentence_mask"].cast<std::vector<std::size_t>>());
          }
          preds.push_back(std::move(p));
        }
        return to_json(report(evaluate(preds, data.descs, data.scenes))).dump();
      },
      py::arg("data_dir"), py::arg("predictions"));

  m.def("miou", [](const std::vector<std::vector<double>>& ious) { return miou(records_from(ious)); },
        py::arg("ious"));
  m.def("miou_s", [](const std::vector<std::vector<double>>& ious) { return miou_s(records_from(ious)); },
        py::arg("ious"));
  m.def("acc_at",
        [](const std::vector<std::vector<double>>& ious, double t) { return acc_at(records_from(ious), t); },
        py::arg("ious"), py::arg("threshold"));
  m.def(
      "metrics_report_json",
      [](const std::vector<std::vector<double>>& ious, const std::vector<bool>& long_text,
         const std::vector<bool>& complex_text) {
        auto records = records_from(ious);
        if (long_text.size() != records.size() || complex_text.size() != records.size()) {
          throw Error(ErrorCode::LengthMismatch, "subset flags must match the number of records");
        }
        for (std::size_t i = 0; i < records.size(); ++i) {
          records[i].long_text = long_text[i];
          records[i].complex_text = complex_text[i];
        }
        return to_json(report(records)).dump();
      },
      py::arg("ious"), py::arg("long_text"), py::arg("complex_text"));
  m.def(
      "format_metrics",
      [](const std::string& report_json, const std::string& format) {
        const auto r = metrics_report_from_json(parse_json_arg(report_json));
        if (format == "csv") return format_csv(r);
        if (format == "table") return format_table(r);
        throw Error(ErrorCode::ConfigInfeasible, "unknown format '" + format + "'");
      },
      py::arg("report_json"), py::arg("format") = "table");

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        cli::CommandOutcome o;
        {
          py::gil_scoped_release release;
          o = cli::dispatch(args, out, err);
        }
        return py::make_tuple(o.exit_code, out.str(), err.str());
      },
      py::arg("args"));
}
