#include "dres/annotation.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dres/error.hpp"

namespace dres {

namespace {

bool is_punct_token(char c) {
  switch (c) {
    case '.': case ',': case ';': case ':': case '!': case '?': case '"':
      return true;
    default:
      return false;
  }
}

void append_tokens(std::string_view text, std::vector<std::string>& out) {
  std::string current;
  auto flush = [&] {
    if (!current.empty()) {
      out.push_back(std::move(current));
      current.clear();
    }
  };
  for (char c : text) {
    const auto uc = static_cast<unsigned char>(c);
    if (std::isspace(uc)) {
      flush();
    } else if (is_punct_token(c)) {
      flush();
      out.emplace_back(1, c);
    } else {
      current.push_back(static_cast<char>(std::tolower(uc)));
    }
  }
  flush();
}

std::string_view trim(std::string_view s, std::size_t& offset) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) {
    s.remove_prefix(1);
    ++offset;
  }
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

/// Parses "id,id,..." found between parentheses; `base` is the byte offset of the content.
std::set<std::int64_t> parse_id_list(std::string_view content, std::size_t base,
                                     std::size_t open_offset) {
  std::size_t probe = base;
  if (trim(content, probe).empty()) {
    throw ParseError(ErrorCode::EmptyIdList, open_offset, "empty id list");
  }
  std::set<std::int64_t> ids;
  std::size_t pos = 0;
  while (true) {
    const auto comma = content.find(',', pos);
    const auto raw = content.substr(pos, comma == std::string_view::npos ? content.npos : comma - pos);
    std::size_t item_offset = base + pos;
    const auto item = trim(raw, item_offset);
    std::int64_t value = 0;
    const auto* first = item.data();
    const auto* last = item.data() + item.size();
    const bool digits = !item.empty() && std::all_of(item.begin(), item.end(), [](char c) {
      return std::isdigit(static_cast<unsigned char>(c));
    });
    const auto [ptr, ec] = digits ? std::from_chars(first, last, value)
                                  : std::from_chars_result{first, std::errc::invalid_argument};
    if (ec != std::errc() || ptr != last) {
      throw ParseError(ErrorCode::NonIntegerId, item_offset,
                       "id '" + std::string(item) + "' is not a non-negative integer");
    }
    ids.insert(value);
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return ids;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::FileUnreadable, path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::vector<PhraseTarget> AnnotatedDescription::units() const {
  std::vector<PhraseTarget> out = phrases;
  if (sentence_target) out.push_back(*sentence_target);
  return out;
}

PhraseTarget make_sentence_target(int length, std::set<std::int64_t> ids) {
  PhraseTarget t;
  t.start = 0;
  t.end = std::max(0, length - 1);
  t.head_index = 0;
  t.target_ids = std::move(ids);
  t.is_sentence_level = true;
  return t;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  append_tokens(text, out);
  return out;
}

TaggedText parse_tagged_text(std::string_view raw) {
  TaggedText result;
  std::size_t plain_begin = 0;
  bool in_phrase = false;
  std::size_t phrase_open = 0;
  std::size_t phrase_first_token = 0;
  // Tokens at or past this index are not yet claimed by a phrase.
  std::size_t unclaimed_from = 0;

  auto flush_plain = [&](std::size_t end) {
    append_tokens(raw.substr(plain_begin, end - plain_begin), result.tokens);
  };

  auto read_ids = [&](std::size_t open) {
    const auto close = raw.find(')', open + 1);
    if (close == std::string_view::npos) {
      throw ParseError(ErrorCode::UnbalancedDelimiters, open, "'(' without ')'");
    }
    const auto content = raw.substr(open + 1, close - open - 1);
    const auto stray = content.find_first_of("[]()");
    if (stray != std::string_view::npos) {
      throw ParseError(ErrorCode::UnbalancedDelimiters, open + 1 + stray,
                       "markup inside id list");
    }
    return std::pair{parse_id_list(content, open + 1, open), close};
  };

  auto add_phrase = [&](std::size_t first, std::set<std::int64_t> ids) {
    PhraseTarget p;
    p.start = static_cast<int>(first);
    p.end = static_cast<int>(result.tokens.size()) - 1;
    p.head_index = p.end;
    p.target_ids = std::move(ids);
    result.phrases.push_back(std::move(p));
    unclaimed_from = result.tokens.size();
  };

  std::size_t i = 0;
  while (i < raw.size()) {
    const char c = raw[i];
    if (c == '[') {
      if (in_phrase) throw ParseError(ErrorCode::UnbalancedDelimiters, i, "nested '['");
      flush_plain(i);
      in_phrase = true;
      phrase_open = i;
      phrase_first_token = result.tokens.size();
      plain_begin = i + 1;
      ++i;
    } else if (c == ']') {
      if (!in_phrase) throw ParseError(ErrorCode::UnbalancedDelimiters, i, "']' without '['");
      flush_plain(i);
      in_phrase = false;
      if (result.tokens.size() == phrase_first_token) {
        throw ParseError(ErrorCode::EmptyPhrase, phrase_open, "bracketed phrase has no tokens");
      }
      if (i + 1 >= raw.size() || raw[i + 1] != '(') {
        throw ParseError(ErrorCode::UnbalancedDelimiters, i + 1,
                         "bracketed phrase not followed by '('");
      }
      auto [ids, close] = read_ids(i + 1);
      add_phrase(phrase_first_token, std::move(ids));
      i = close + 1;
      plain_begin = i;
    } else if (c == '(') {
      if (in_phrase) throw ParseError(ErrorCode::UnbalancedDelimiters, i, "'(' inside phrase");
      // Unbracketed form "chair(3)": the phrase is the single preceding token.
      flush_plain(i);
      if (result.tokens.size() <= unclaimed_from) {
        throw ParseError(ErrorCode::EmptyPhrase, i, "id list without a preceding phrase");
      }
      auto [ids, close] = read_ids(i);
      add_phrase(result.tokens.size() - 1, std::move(ids));
      i = close + 1;
      plain_begin = i;
    } else if (c == ')') {
      throw ParseError(ErrorCode::UnbalancedDelimiters, i, "')' without '('");
    } else {
      ++i;
    }
  }
  if (in_phrase) throw ParseError(ErrorCode::UnbalancedDelimiters, phrase_open, "'[' without ']'");
  flush_plain(raw.size());
  return result;
}

std::string serialize_tagged_text(const AnnotatedDescription& desc) {
  std::string out;
  std::size_t next_phrase = 0;
  for (int t = 0; t < desc.length(); ++t) {
    if (t > 0) out.push_back(' ');
    const PhraseTarget* phrase =
        next_phrase < desc.phrases.size() ? &desc.phrases[next_phrase] : nullptr;
    if (phrase && phrase->start == t) out.push_back('[');
    out += desc.tokens[static_cast<std::size_t>(t)];
    if (phrase && phrase->end == t) {
      out += "](";
      bool first = true;
      for (auto id : phrase->target_ids) {  // std::set iterates ascending
        if (!first) out.push_back(',');
        out += std::to_string(id);
        first = false;
      }
      out.push_back(')');
      ++next_phrase;
    }
  }
  return out;
}

AnnotatedDescription parse_record(std::string_view json_line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_line);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedRecord, e.what());
  }
  if (!j.is_object()) throw Error(ErrorCode::MalformedRecord, "record is not an object");
  for (const char* field : {"description_id", "scene_id", "tagged_text"}) {
    if (!j.contains(field) || !j[field].is_string()) {
      throw Error(ErrorCode::MalformedRecord, std::string("missing string field '") + field + "'");
    }
  }
  AnnotatedDescription d;
  d.description_id = j["description_id"].get<std::string>();
  d.scene_id = j["scene_id"].get<std::string>();
  auto tagged = parse_tagged_text(j["tagged_text"].get<std::string>());
  d.tokens = std::move(tagged.tokens);
  d.phrases = std::move(tagged.phrases);
  if (j.contains("sentence_target_ids") && !j["sentence_target_ids"].is_null()) {
    const auto& ids = j["sentence_target_ids"];
    if (!ids.is_array()) throw Error(ErrorCode::MalformedRecord, "sentence_target_ids not a list");
    std::set<std::int64_t> set;
    for (const auto& v : ids) {
      if (!v.is_number_unsigned()) {
        throw Error(ErrorCode::MalformedRecord, "sentence_target_ids must be non-negative integers");
      }
      set.insert(v.get<std::int64_t>());
    }
    d.sentence_target = make_sentence_target(d.length(), std::move(set));
  }
  return d;
}

std::string format_record(const AnnotatedDescription& desc) {
  nlohmann::ordered_json j;
  j["description_id"] = desc.description_id;
  j["scene_id"] = desc.scene_id;
  j["tagged_text"] = serialize_tagged_text(desc);
  if (desc.sentence_target) {
    j["sentence_target_ids"] = std::vector<std::int64_t>(desc.sentence_target->target_ids.begin(),
                                                         desc.sentence_target->target_ids.end());
  }
  return j.dump();
}

std::vector<std::string> check_description(const AnnotatedDescription& desc,
                                           const SceneMap* scenes) {
  std::vector<std::string> out;
  const int L = desc.length();
  if (L < 1) out.emplace_back("empty text");
  if (desc.unit_count() < 1) out.emplace_back("no phrase targets");
  int prev_end = -1;
  for (std::size_t p = 0; p < desc.phrases.size(); ++p) {
    const auto& ph = desc.phrases[p];
    const std::string tag = "phrase " + std::to_string(p) + ": ";
    if (ph.start < 0 || ph.end >= L || ph.start > ph.end) out.push_back(tag + "span out of range");
    if (ph.start <= prev_end) out.push_back(tag + "span overlaps or is out of order");
    if (ph.head_index < ph.start || ph.head_index > ph.end) out.push_back(tag + "head outside span");
    if (ph.target_ids.empty()) out.push_back(tag + "empty target set");
    prev_end = std::max(prev_end, ph.end);
  }
  if (desc.sentence_target && desc.sentence_target->target_ids.empty()) {
    out.emplace_back("sentence target: empty target set");
  }
  if (scenes) {
    const auto it = scenes->find(desc.scene_id);
    if (it == scenes->end()) {
      out.emplace_back("unknown scene");
    } else {
      const auto present = it->second.instance_ids();
      const std::set<std::int64_t> ids(present.begin(), present.end());
      std::set<std::int64_t> missing;
      for (const auto& u : desc.units()) {
        for (auto id : u.target_ids) {
          if (!ids.contains(id)) missing.insert(id);
        }
      }
      for (auto id : missing) out.push_back("unknown instance " + std::to_string(id));
    }
  }
  return out;
}

LoadedDataset load_dataset(const std::filesystem::path& path, const SceneMap* scenes) {
  const auto text = read_file(path);
  LoadedDataset result;
  std::set<std::string> seen_ids;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (std::all_of(line.begin(), line.end(), [](char c) {
          return std::isspace(static_cast<unsigned char>(c));
        })) {
      continue;
    }
    AnnotatedDescription d;
    try {
      d = parse_record(line);
    } catch (const Error& e) {
      result.violations.push_back({line_no, "", std::string("malformed record: ") + e.what()});
      continue;
    }
    if (!seen_ids.insert(d.description_id).second) {
      result.violations.push_back({line_no, d.description_id, "duplicate description_id"});
    }
    for (auto& rule : check_description(d, scenes)) {
      result.violations.push_back({line_no, d.description_id, std::move(rule)});
    }
    result.descriptions.push_back(std::move(d));
  }
  return result;
}

void save_dataset(const std::filesystem::path& path,
                  const std::vector<AnnotatedDescription>& descs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::PathUnwritable, path.string());
  for (const auto& d : descs) out << format_record(d) << '\n';
  if (!out) throw Error(ErrorCode::PathUnwritable, path.string());
}

Scene read_scene(const std::filesystem::path& path) {
  const auto text = read_file(path);
  std::istringstream in(text);
  std::string line;
  Scene scene;
  std::size_t expected = 0;
  bool have_count = false;
  std::size_t line_no = 0;
  auto malformed = [&](const std::string& why) {
    return Error(ErrorCode::MalformedRecord,
                 path.string() + ":" + std::to_string(line_no) + ": " + why);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream row(line);
    if (line.rfind("scene_id", 0) == 0) {
      std::string key;
      row >> key >> scene.scene_id;
      continue;
    }
    if (line.rfind("num_points", 0) == 0) {
      std::string key;
      if (!(row >> key >> expected)) throw malformed("bad num_points");
      have_count = true;
      scene.points.reserve(expected);
      continue;
    }
    Point p;
    std::int64_t label = 0;
    if (!(row >> p.x >> p.y >> p.z >> p.r >> p.g >> p.b >> label)) {
      throw malformed("expected 'x y z r g b label'");
    }
    scene.points.push_back(p);
    scene.instance_labels.push_back(label);
  }
  if (scene.scene_id.empty()) throw malformed("missing scene_id header");
  if (have_count && expected != scene.points.size()) {
    throw malformed("num_points " + std::to_string(expected) + " but " +
                    std::to_string(scene.points.size()) + " rows");
  }
  return scene;
}

void write_scene(const std::filesystem::path& path, const Scene& scene) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::PathUnwritable, path.string());
  out << "# dres scene v1: x y z r g b instance_label (-1 = unlabeled)\n";
  out << "scene_id " << scene.scene_id << '\n';
  out << "num_points " << scene.points.size() << '\n';
  char buf[256];
  for (std::size_t i = 0; i < scene.points.size(); ++i) {
    const auto& p = scene.points[i];
    std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g %.17g %.17g %.17g %lld\n", p.x, p.y, p.z,
                  p.r, p.g, p.b, static_cast<long long>(scene.instance_labels[i]));
    out << buf;
  }
  if (!out) throw Error(ErrorCode::PathUnwritable, path.string());
}

SceneMap load_scenes(const std::filesystem::path& path) {
  SceneMap scenes;
  if (std::filesystem::is_directory(path)) {
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(path)) {
      if (entry.is_regular_file() && entry.path().extension() == ".scene") {
        files.push_back(entry.path());
      }
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      auto s = read_scene(f);
      auto id = s.scene_id;
      scenes.emplace(std::move(id), std::move(s));
    }
  } else {
    auto s = read_scene(path);
    auto id = s.scene_id;
    scenes.emplace(std::move(id), std::move(s));
  }
  return scenes;
}

DatasetSummary dataset_stats(const std::vector<AnnotatedDescription>& descs) {
  if (descs.empty()) throw Error(ErrorCode::EmptyDataset, "dataset_stats needs descriptions");
  DatasetSummary s;
  s.num_descriptions = descs.size();
  std::size_t total_tokens = 0;
  std::size_t total_units = 0;
  std::set<std::pair<std::string, std::int64_t>> objects;
  for (const auto& d : descs) {
    total_tokens += static_cast<std::size_t>(d.length());
    total_units += static_cast<std::size_t>(d.unit_count());
    if (is_long(d.length())) ++s.num_long;
    if (is_complex(d.unit_count())) ++s.num_complex;
    for (const auto& u : d.units()) {
      for (auto id : u.target_ids) objects.emplace(d.scene_id, id);
    }
    for (const auto& p : d.phrases) {
      if (p.head_index >= 0 && p.head_index < d.length()) {
        ++s.category_counts[d.tokens[static_cast<std::size_t>(p.head_index)]];
      }
    }
  }
  const auto m = static_cast<double>(s.num_descriptions);
  s.avg_token_length = static_cast<double>(total_tokens) / m;
  s.long_fraction = static_cast<double>(s.num_long) / m;
  s.avg_masks_per_text = static_cast<double>(total_units) / m;
  s.num_distinct_objects = objects.size();
  return s;
}

SubsetIndices split_subsets(const std::vector<AnnotatedDescription>& descs) {
  SubsetIndices out;
  for (std::size_t i = 0; i < descs.size(); ++i) {
    out.overall.push_back(i);
    if (is_long(descs[i].length())) out.long_texts.push_back(i);
    if (is_complex(descs[i].unit_count())) out.complex_texts.push_back(i);
  }
  return out;
}

std::vector<ReferenceCheck> compare_to_reference(const DatasetSummary& summary,
                                                 const ReferenceStats& reference,
                                                 double rel_tolerance) {
  auto relative = [&](const char* name, double obs, double exp) {
    return ReferenceCheck{name, obs, exp, std::abs(obs - exp) <= rel_tolerance * std::abs(exp)};
  };
  std::vector<ReferenceCheck> out;
  out.push_back(relative("avg_token_length", summary.avg_token_length, reference.avg_token_length));
  out.push_back(relative("long_fraction", summary.long_fraction, reference.long_fraction));
  // Known to one decimal.
  out.push_back({"avg_masks_per_text", summary.avg_masks_per_text, reference.avg_masks_per_text,
                 std::abs(summary.avg_masks_per_text - reference.avg_masks_per_text) <= 0.05});
  out.push_back({"num_descriptions", static_cast<double>(summary.num_descriptions),
                 static_cast<double>(reference.num_descriptions),
                 summary.num_descriptions == reference.num_descriptions});
  return out;
}

}  // namespace dres
