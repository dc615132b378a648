#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "dres/core.hpp"

namespace dres {

/// One annotated unit: a noun phrase, or the [CLS] sentinel for sentence-level records.
struct PhraseTarget {
  int start = 0;  // inclusive token index
  int end = 0;    // inclusive token index
  int head_index = 0;
  std::set<std::int64_t> target_ids;
  bool is_sentence_level = false;

  bool operator==(const PhraseTarget&) const = default;
};

struct AnnotatedDescription {
  std::string description_id;
  std::string scene_id;
  std::vector<std::string> tokens;
  std::vector<PhraseTarget> phrases;
  std::optional<PhraseTarget> sentence_target;

  int length() const noexcept { return static_cast<int>(tokens.size()); }

  /// Segmentation units in output order: noun phrases, then the sentence target if any.
  std::vector<PhraseTarget> units() const;
  int unit_count() const noexcept {
    return static_cast<int>(phrases.size()) + (sentence_target ? 1 : 0);
  }

  /// Query row for a unit: row 0 is [CLS], token t sits at row t + 1.
  static int query_row(const PhraseTarget& unit) noexcept {
    return unit.is_sentence_level ? 0 : unit.head_index + 1;
  }

  bool operator==(const AnnotatedDescription&) const = default;
};

PhraseTarget make_sentence_target(int length, std::set<std::int64_t> ids);

// ---------------------------------------------------------------------------
// Tagged interchange text: "put [the clothes](4,5) in [the washing machine](9)".

struct TaggedText {
  std::vector<std::string> tokens;
  std::vector<PhraseTarget> phrases;
};

/// Lowercases and splits on whitespace; punctuation marks become their own tokens.
std::vector<std::string> tokenize(std::string_view text);

TaggedText parse_tagged_text(std::string_view raw);
std::string serialize_tagged_text(const AnnotatedDescription& desc);

// ---------------------------------------------------------------------------
// Record and scene files.

struct DatasetViolation {
  std::size_t line = 0;  // 1-based; 0 when not tied to a line
  std::string description_id;
  std::string rule;
};

struct LoadedDataset {
  std::vector<AnnotatedDescription> descriptions;
  std::vector<DatasetViolation> violations;
};

using SceneMap = std::map<std::string, Scene>;

AnnotatedDescription parse_record(std::string_view json_line);
std::string format_record(const AnnotatedDescription& desc);

/// Reads a JSON-lines record file. Malformed lines and cross-check failures
/// become violations; only an unreadable file throws.
LoadedDataset load_dataset(const std::filesystem::path& path, const SceneMap* scenes = nullptr);
void save_dataset(const std::filesystem::path& path,
                  const std::vector<AnnotatedDescription>& descs);

/// Structural and cross-scene checks on one description.
std::vector<std::string> check_description(const AnnotatedDescription& desc,
                                           const SceneMap* scenes);

Scene read_scene(const std::filesystem::path& path);
void write_scene(const std::filesystem::path& path, const Scene& scene);
/// A directory yields every "*.scene" file in it; a file yields one scene.
SceneMap load_scenes(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Statistics and subsets.

inline constexpr int kLongTokenThreshold = 50;
inline constexpr int kComplexPhraseThreshold = 4;

inline bool is_long(int length) noexcept { return length > kLongTokenThreshold; }
inline bool is_complex(int units) noexcept { return units >= kComplexPhraseThreshold; }

struct DatasetSummary {
  std::size_t num_descriptions = 0;
  double avg_token_length = 0;
  std::size_t num_long = 0;
  double long_fraction = 0;
  double avg_masks_per_text = 0;
  std::size_t num_complex = 0;
  std::size_t num_distinct_objects = 0;
  std::map<std::string, std::size_t> category_counts;  // keyed by head token
};

DatasetSummary dataset_stats(const std::vector<AnnotatedDescription>& descs);

struct SubsetIndices {
  std::vector<std::size_t> overall;
  std::vector<std::size_t> long_texts;
  std::vector<std::size_t> complex_texts;
};

SubsetIndices split_subsets(const std::vector<AnnotatedDescription>& descs);

/// Summary statistics of a reference corpus, for comparing a locally
/// computed summary against them.
struct ReferenceStats {
  double avg_token_length;
  double long_fraction;
  double avg_masks_per_text;
  std::size_t num_descriptions;
};

/// DetailRefer as released: 24.9 tokens, 7.4% long, 2.9 masks, 54,432 texts.
inline constexpr ReferenceStats kDetailReferStats{24.9, 0.074, 2.9, 54432};

struct ReferenceCheck {
  std::string field;
  double observed;
  double expected;
  bool pass;
};

/// Length-derived values within +-rel_tolerance (tokenizers differ), mask average at
/// one decimal (+-0.05), description count exact.
std::vector<ReferenceCheck> compare_to_reference(const DatasetSummary& summary,
                                                 const ReferenceStats& reference,
                                                 double rel_tolerance = 0.10);

}  // namespace dres
