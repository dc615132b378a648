#include "dres/metrics.hpp"

#include <cstdio>
#include <map>

#include "dres/error.hpp"

namespace dres {

namespace {

void require_nonempty(const std::vector<EvalRecord>& records, const char* what) {
  if (records.empty()) throw Error(ErrorCode::EmptyInput, std::string(what) + " of no records");
  for (const auto& r : records) {
    if (r.ious.empty()) {
      throw Error(ErrorCode::EmptyInput, std::string(what) + ": record " + r.description_id + " has no units");
    }
  }
}

SubsetMetrics subset_metrics(const std::vector<EvalRecord>& records) {
  SubsetMetrics m;
  m.acc_25 = acc_at(records, 0.25);
  m.acc_50 = acc_at(records, 0.5);
  m.miou = miou(records);
  m.miou_s = miou_s(records);
  m.num_descriptions = records.size();
  for (const auto& r : records) m.num_units += r.ious.size();
  return m;
}

nlohmann::ordered_json subset_json(const std::optional<SubsetMetrics>& m) {
  if (!m) return nullptr;
  nlohmann::ordered_json j;
  j["acc_25"] = m->acc_25;
  j["acc_50"] = m->acc_50;
  j["miou_s"] = m->miou_s;
  j["miou"] = m->miou;
  j["num_descriptions"] = m->num_descriptions;
  j["num_units"] = m->num_units;
  return j;
}

std::optional<SubsetMetrics> subset_from_json(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  const auto& s = j[key];
  SubsetMetrics m;
  m.acc_25 = s.at("acc_25").get<double>();
  m.acc_50 = s.at("acc_50").get<double>();
  m.miou_s = s.at("miou_s").get<double>();
  m.miou = s.at("miou").get<double>();
  m.num_descriptions = s.at("num_descriptions").get<std::size_t>();
  m.num_units = s.at("num_units").get<std::size_t>();
  return m;
}

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", 100.0 * v);
  return buf;
}

}  // namespace

std::vector<EvalRecord> evaluate(const std::vector<PhraseMaskSet>& predictions,
                                 const std::vector<AnnotatedDescription>& descs,
                                 const SceneMap& scenes) {
  std::map<std::string, const PhraseMaskSet*> by_id;
  for (const auto& p : predictions) by_id[p.description_id] = &p;
  std::vector<EvalRecord> out;
  out.reserve(descs.size());
  for (const auto& d : descs) {
    const auto it = by_id.find(d.description_id);
    if (it == by_id.end()) throw Error(ErrorCode::MissingPrediction, d.description_id);
    const PhraseMaskSet& pred = *it->second;
    if (pred.masks.size() != d.phrases.size()) {
      throw Error(ErrorCode::PhraseCountMismatch,
                  d.description_id + ": " + std::to_string(pred.masks.size()) + " masks for " +
                      std::to_string(d.phrases.size()) + " phrases");
    }
    if (d.sentence_target && !pred.sentence_mask) {
      throw Error(ErrorCode::PhraseCountMismatch, d.description_id + ": missing sentence mask");
    }
    const auto scene_it = scenes.find(d.scene_id);
    if (scene_it == scenes.end()) throw Error(ErrorCode::MissingPrediction, "scene " + d.scene_id);
    const Scene& scene = scene_it->second;

    EvalRecord rec;
    rec.description_id = d.description_id;
    rec.long_text = is_long(d.length());
    rec.complex_text = is_complex(d.unit_count());
    for (std::size_t p = 0; p < d.phrases.size(); ++p) {
      rec.ious.push_back(point_iou(pred.masks[p], union_instance_mask(scene, d.phrases[p].target_ids)));
    }
    if (d.sentence_target) {
      rec.ious.push_back(point_iou(*pred.sentence_mask, union_instance_mask(scene, d.sentence_target->target_ids)));
    }
    out.push_back(std::move(rec));
  }
  return out;
}

double miou(const std::vector<EvalRecord>& records) {
  require_nonempty(records, "miou");
  double sum = 0;
  std::size_t count = 0;
  for (const auto& r : records) {
    for (double v : r.ious) sum += v;
    count += r.ious.size();
  }
  return sum / static_cast<double>(count);
}

double acc_at(const std::vector<EvalRecord>& records, double t) {
  require_nonempty(records, "acc_at");
  std::size_t hits = 0;
  std::size_t count = 0;
  for (const auto& r : records) {
    for (double v : r.ious) hits += v > t ? 1 : 0;
    count += r.ious.size();
  }
  return static_cast<double>(hits) / static_cast<double>(count);
}

double miou_s(const std::vector<EvalRecord>& records) {
  require_nonempty(records, "miou_s");
  double sum = 0;
  for (const auto& r : records) {
    double inner = 0;
    for (double v : r.ious) inner += v;
    sum += inner / static_cast<double>(r.ious.size());
  }
  return sum / static_cast<double>(records.size());
}

MetricsReport report(const std::vector<EvalRecord>& records) {
  std::vector<EvalRecord> long_recs, complex_recs;
  for (const auto& r : records) {
    if (r.long_text) long_recs.push_back(r);
    if (r.complex_text) complex_recs.push_back(r);
  }
  MetricsReport out;
  if (!records.empty()) out.overall = subset_metrics(records);
  if (!long_recs.empty()) out.long_texts = subset_metrics(long_recs);
  if (!complex_recs.empty()) out.complex_texts = subset_metrics(complex_recs);
  return out;
}

nlohmann::ordered_json to_json(const MetricsReport& r) {
  nlohmann::ordered_json j;
  j["kind"] = "metrics";
  j["long"] = subset_json(r.long_texts);
  j["complex"] = subset_json(r.complex_texts);
  j["overall"] = subset_json(r.overall);
  return j;
}

MetricsReport metrics_report_from_json(const nlohmann::json& j) {
  MetricsReport r;
  r.long_texts = subset_from_json(j, "long");
  r.complex_texts = subset_from_json(j, "complex");
  r.overall = subset_from_json(j, "overall");
  return r;
}

std::string format_table(const MetricsReport& r) {
  std::string out;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-8s | %6s %6s %7s %6s | %6s %6s\n", "Subset", "0.25", "0.5", "mIoU-S",
                "mIoU", "texts", "units");
  out += buf;
  out += std::string(62, '-') + "\n";
  const std::pair<const char*, const std::optional<SubsetMetrics>*> rows[] = {
      {"Long", &r.long_texts}, {"Complex", &r.complex_texts}, {"Overall", &r.overall}};
  for (const auto& [name, m] : rows) {
    if (!*m) {
      std::snprintf(buf, sizeof buf, "%-8s | %6s %6s %7s %6s | %6s %6s\n", name, "-", "-", "-", "-", "0", "0");
    } else {
      const auto& s = **m;
      std::snprintf(buf, sizeof buf, "%-8s | %6s %6s %7s %6s | %6zu %6zu\n", name, pct(s.acc_25).c_str(),
                    pct(s.acc_50).c_str(), pct(s.miou_s).c_str(), pct(s.miou).c_str(), s.num_descriptions,
                    s.num_units);
    }
    out += buf;
  }
  return out;
}

std::string format_csv(const MetricsReport& r) {
  std::string out = "subset,acc_25,acc_50,miou_s,miou,num_descriptions,num_units\n";
  char buf[256];
  const std::pair<const char*, const std::optional<SubsetMetrics>*> rows[] = {
      {"long", &r.long_texts}, {"complex", &r.complex_texts}, {"overall", &r.overall}};
  for (const auto& [name, m] : rows) {
    if (!*m) continue;
    const auto& s = **m;
    std::snprintf(buf, sizeof buf, "%s,%.17g,%.17g,%.17g,%.17g,%zu,%zu\n", name, s.acc_25, s.acc_50, s.miou_s,
                  s.miou, s.num_descriptions, s.num_units);
    out += buf;
  }
  return out;
}

nlohmann::ordered_json to_json(const DatasetSummary& s) {
  nlohmann::ordered_json j;
  j["kind"] = "dataset_summary";
  j["num_descriptions"] = s.num_descriptions;
  j["avg_token_length"] = s.avg_token_length;
  j["num_long"] = s.num_long;
  j["long_fraction"] = s.long_fraction;
  j["avg_masks_per_text"] = s.avg_masks_per_text;
  j["num_complex"] = s.num_complex;
  j["num_distinct_objects"] = s.num_distinct_objects;
  nlohmann::ordered_json cats = nlohmann::ordered_json::object();
  for (const auto& [k, v] : s.category_counts) cats[k] = v;
  j["category_counts"] = cats;
  return j;
}

DatasetSummary dataset_summary_from_json(const nlohmann::json& j) {
  DatasetSummary s;
  s.num_descriptions = j.at("num_descriptions").get<std::size_t>();
  s.avg_token_length = j.at("avg_token_length").get<double>();
  s.num_long = j.at("num_long").get<std::size_t>();
  s.long_fraction = j.at("long_fraction").get<double>();
  s.avg_masks_per_text = j.at("avg_masks_per_text").get<double>();
  s.num_complex = j.at("num_complex").get<std::size_t>();
  s.num_distinct_objects = j.at("num_distinct_objects").get<std::size_t>();
  for (const auto& [k, v] : j.at("category_counts").items()) s.category_counts[k] = v.get<std::size_t>();
  return s;
}

std::string format_table(const DatasetSummary& s) {
  char buf[256];
  std::string out;
  std::snprintf(buf, sizeof buf, "%10s | %11s | %6s | %9s | %8s\n", "Texts", "Avg. length", "Long", "Avg. mask",
                "Objects");
  out += buf;
  out += std::string(56, '-') + "\n";
  std::snprintf(buf, sizeof buf, "%10zu | %11.1f | %5.1f%% | %9.1f | %8zu\n", s.num_descriptions,
                s.avg_token_length, 100.0 * s.long_fraction, s.avg_masks_per_text, s.num_distinct_objects);
  out += buf;
  return out;
}

std::string format_csv(const DatasetSummary& s) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%zu,%zu\n", s.num_descriptions, s.avg_token_length,
                s.long_fraction, s.avg_masks_per_text, s.num_distinct_objects, s.num_complex);
  return std::string("num_descriptions,avg_token_length,long_fraction,avg_masks_per_text,num_distinct_objects,"
                     "num_complex\n") +
         buf;
}

}  // namespace dres
