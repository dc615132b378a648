#include <doctest.h>

#include <algorithm>
#include <fstream>

#include "dres/annotation.hpp"
#include "dres/error.hpp"
#include "support.hpp"

using namespace dres;

namespace {

ErrorCode parse_error_code(std::string_view raw, std::size_t* offset = nullptr) {
  try {
    parse_tagged_text(raw);
  } catch (const ParseError& e) {
    if (offset) *offset = e.offset();
    return e.code();
  }
  FAIL("expected a parse error for: " << raw);
  return ErrorCode::MalformedRecord;
}

AnnotatedDescription make_desc(int length, int phrases) {
  AnnotatedDescription d;
  d.description_id = "d";
  d.scene_id = "s";
  d.tokens.assign(static_cast<std::size_t>(length), "w");
  for (int i = 0; i < phrases; ++i) {
    PhraseTarget p;
    p.start = p.end = p.head_index = i;
    p.target_ids = {i};
    d.phrases.push_back(p);
  }
  return d;
}

}  // namespace

TEST_SUITE("annotation") {
  TEST_CASE("tokenize lowercases and detaches punctuation") {
    CHECK(tokenize("Put the Chair, near \"it\".") ==
          std::vector<std::string>{"put", "the", "chair", ",", "near", "\"", "it", "\"", "."});
    CHECK(tokenize("   ").empty());
  }

  TEST_CASE("parse the washing machine example") {
    const auto t = parse_tagged_text("put [the clothes](4,5) in [the washing machine](9)");
    CHECK(t.tokens == std::vector<std::string>{"put", "the", "clothes", "in", "the", "washing", "machine"});
    REQUIRE(t.phrases.size() == 2);
    CHECK(t.phrases[0].start == 1);
    CHECK(t.phrases[0].end == 2);
    CHECK(t.phrases[0].head_index == 2);
    CHECK(t.phrases[0].target_ids == std::set<std::int64_t>{4, 5});
    CHECK(t.phrases[1].start == 4);
    CHECK(t.phrases[1].end == 6);
    CHECK(t.phrases[1].head_index == 6);
    CHECK(t.phrases[1].target_ids == std::set<std::int64_t>{9});
  }

  TEST_CASE("plain text has no phrases") {
    const auto t = parse_tagged_text("hello world");
    CHECK(t.tokens == std::vector<std::string>{"hello", "world"});
    CHECK(t.phrases.empty());
  }

  TEST_CASE("unbracketed tags claim the preceding token") {
    const auto t = parse_tagged_text("the chair(3) is near a table (1, 2)");
    REQUIRE(t.phrases.size() == 2);
    CHECK(t.phrases[0].start == 1);
    CHECK(t.phrases[0].end == 1);
    CHECK(t.phrases[1].start == 5);
    CHECK(t.phrases[1].target_ids == std::set<std::int64_t>{1, 2});
  }

  TEST_CASE("malformed tags report codes and byte offsets") {
    std::size_t off = 0;
    CHECK(parse_error_code("[chair]()", &off) == ErrorCode::EmptyIdList);
    CHECK(off == 7);
    CHECK(parse_error_code("[chair](a)") == ErrorCode::NonIntegerId);
    CHECK(parse_error_code("[chair](3,,4)") == ErrorCode::NonIntegerId);
    CHECK(parse_error_code("[the [chair]](3)", &off) == ErrorCode::UnbalancedDelimiters);
    CHECK(off == 5);
    CHECK(parse_error_code("the chair](3)", &off) == ErrorCode::UnbalancedDelimiters);
    CHECK(off == 9);
    CHECK(parse_error_code("[the chair] (3)") == ErrorCode::UnbalancedDelimiters);
    CHECK(parse_error_code("[the chair](3") == ErrorCode::UnbalancedDelimiters);
    CHECK(parse_error_code("[the chair") == ErrorCode::UnbalancedDelimiters);
    CHECK(parse_error_code("chair 3)") == ErrorCode::UnbalancedDelimiters);
    CHECK(parse_error_code("[](3)") == ErrorCode::EmptyPhrase);
    CHECK(parse_error_code("(3) chair") == ErrorCode::EmptyPhrase);
  }

  TEST_CASE("serialize canonicalizes id order") {
    AnnotatedDescription d = make_desc(2, 0);
    d.tokens = {"the", "chair"};
    PhraseTarget p;
    p.start = 0;
    p.end = p.head_index = 1;
    p.target_ids = {7, 3};
    d.phrases.push_back(p);
    CHECK(serialize_tagged_text(d) == "[the chair](3,7)");
    d.phrases.clear();
    CHECK(serialize_tagged_text(d) == "the chair");
  }

  TEST_CASE("serialize after parse is canonical") {
    const std::string canonical = "put [the clothes](4,5) in [the washing machine](9)";
    const auto t = parse_tagged_text(canonical);
    AnnotatedDescription d;
    d.tokens = t.tokens;
    d.phrases = t.phrases;
    CHECK(serialize_tagged_text(d) == canonical);
    const auto messy = parse_tagged_text("Put [The Clothes]( 5 ,4 ) in [the washing machine](9)");
    d.tokens = messy.tokens;
    d.phrases = messy.phrases;
    CHECK(serialize_tagged_text(d) == canonical);
  }

  TEST_CASE("random descriptions round trip through text and records") {
    Rng rng(11);
    for (int i = 0; i < 300; ++i) {
      const auto d = testing::random_description(rng, "x" + std::to_string(i));
      const auto t = parse_tagged_text(serialize_tagged_text(d));
      CHECK(t.tokens == d.tokens);
      CHECK(t.phrases == d.phrases);
      CHECK(parse_record(format_record(d)) == d);
    }
  }

  TEST_CASE("records carry sentence targets") {
    const auto d = parse_record(
        R"j({"description_id":"a","scene_id":"s","tagged_text":"[the bed](0) beside [the cabinet](1)","sentence_target_ids":[1,0]})j");
    REQUIRE(d.sentence_target);
    CHECK(d.sentence_target->is_sentence_level);
    CHECK(d.sentence_target->target_ids == std::set<std::int64_t>{0, 1});
    CHECK(d.unit_count() == 3);
    CHECK(AnnotatedDescription::query_row(*d.sentence_target) == 0);
    CHECK(AnnotatedDescription::query_row(d.phrases[1]) == d.phrases[1].head_index + 1);
    CHECK(d.units().back().is_sentence_level);
    CHECK_THROWS_AS(parse_record(R"({"scene_id":"s","tagged_text":"x"})"), Error);
  }

  TEST_CASE("bundled fixture loads cleanly") {
    const auto scenes = load_scenes(testing::fixture_dir() / "scenes");
    CHECK(scenes.size() == 3);
    const auto loaded = load_dataset(testing::fixture_dir() / "records.jsonl", &scenes);
    CHECK(loaded.descriptions.size() == 12);
    CHECK(loaded.violations.empty());
    for (const auto& [id, s] : scenes) CHECK(validate_scene(s).empty());
  }

  TEST_CASE("broken fixture lists each violation") {
    const auto scenes = load_scenes(testing::fixture_dir() / "scenes");
    const auto loaded = load_dataset(testing::fixture_dir() / "broken_records.jsonl", &scenes);
    CHECK(loaded.descriptions.size() == 3);
    REQUIRE(loaded.violations.size() == 4);
    CHECK(loaded.violations[0].line == 2);
    CHECK(loaded.violations[0].rule == "unknown scene");
    CHECK(loaded.violations[1].rule == "unknown instance 9");
    CHECK(loaded.violations[2].line == 4);
    CHECK(loaded.violations[3].line == 5);
  }

  TEST_CASE("load_dataset edge cases") {
    const auto dir = testing::scratch_dir("annotation");
    { std::ofstream(dir / "empty.jsonl"); }
    const auto empty = load_dataset(dir / "empty.jsonl");
    CHECK(empty.descriptions.empty());
    CHECK(empty.violations.empty());
    CHECK_THROWS_AS(load_dataset(dir / "missing.jsonl"), Error);

    std::vector<AnnotatedDescription> descs = {make_desc(3, 1), make_desc(4, 2)};
    descs[1].description_id = "d";  // duplicate id
    save_dataset(dir / "dup.jsonl", descs);
    const auto dup = load_dataset(dir / "dup.jsonl");
    REQUIRE(dup.violations.size() == 1);
    CHECK(dup.violations[0].rule == "duplicate description_id");
  }

  TEST_CASE("check_description rules") {
    auto d = make_desc(3, 2);
    CHECK(check_description(d, nullptr).empty());
    d.phrases[1].start = 0;  // overlaps phrase 0
    CHECK(!check_description(d, nullptr).empty());
    d = make_desc(3, 1);
    d.phrases[0].head_index = 2;
    CHECK(!check_description(d, nullptr).empty());
    d = make_desc(3, 1);
    d.phrases[0].target_ids.clear();
    CHECK(!check_description(d, nullptr).empty());
    d = make_desc(3, 0);
    CHECK(check_description(d, nullptr) == std::vector<std::string>{"no phrase targets"});
  }

  TEST_CASE("scene files round trip exactly") {
    Rng rng(5);
    auto bs = testing::block_scene(rng, 5, 3, 2);
    bs.scene.instance_labels[0] = kUnlabeled;
    const auto dir = testing::scratch_dir("scene_io");
    write_scene(dir / "block.scene", bs.scene);
    const auto back = read_scene(dir / "block.scene");
    CHECK(back.scene_id == bs.scene.scene_id);
    CHECK(back.instance_labels == bs.scene.instance_labels);
    for (std::size_t i = 0; i < back.size(); ++i) {
      CHECK(back.points[i].x == bs.scene.points[i].x);
      CHECK(back.points[i].b == bs.scene.points[i].b);
    }
  }

  TEST_CASE("dataset_stats arithmetic") {
    auto a = make_desc(10, 1);
    auto b = make_desc(60, 3);
    b.description_id = "b";
    const auto s = dataset_stats({a, b});
    CHECK(s.avg_token_length == 35.0);
    CHECK(s.long_fraction == 0.5);
    CHECK(s.avg_masks_per_text == 2.0);
    CHECK(dataset_stats({make_desc(51, 1)}).long_fraction == 1.0);
    CHECK(dataset_stats({make_desc(50, 1)}).long_fraction == 0.0);
    CHECK_THROWS_AS(dataset_stats({}), Error);
  }

  TEST_CASE("dataset_stats is permutation invariant") {
    Rng rng(8);
    std::vector<AnnotatedDescription> descs;
    for (int i = 0; i < 40; ++i) descs.push_back(testing::random_description(rng, std::to_string(i), 80));
    const auto s1 = dataset_stats(descs);
    std::reverse(descs.begin(), descs.end());
    rng.shuffle(descs.begin(), descs.end());
    const auto s2 = dataset_stats(descs);
    CHECK(s1.num_long == s2.num_long);
    CHECK(s1.num_complex == s2.num_complex);
    CHECK(s1.avg_token_length == s2.avg_token_length);
    CHECK(s1.avg_masks_per_text == s2.avg_masks_per_text);
    CHECK(s1.num_distinct_objects == s2.num_distinct_objects);
    CHECK(s1.category_counts == s2.category_counts);
  }

  TEST_CASE("split_subsets boundaries") {
    const auto sub = split_subsets({make_desc(50, 4), make_desc(70, 2), make_desc(70, 5), make_desc(5, 1)});
    CHECK(sub.overall == std::vector<std::size_t>{0, 1, 2, 3});
    CHECK(sub.long_texts == std::vector<std::size_t>{1, 2});
    CHECK(sub.complex_texts == std::vector<std::size_t>{0, 2});
  }

  TEST_CASE("sentence targets count towards complexity") {
    auto d = make_desc(5, 3);
    CHECK(!is_complex(d.unit_count()));
    d.sentence_target = make_sentence_target(5, {0});
    CHECK(is_complex(d.unit_count()));
  }

  TEST_CASE("reference comparison tolerances") {
    DatasetSummary s;
    s.num_descriptions = 54432;
    s.avg_token_length = 24.9 * 1.09;
    s.long_fraction = 0.074 * 0.92;
    s.avg_masks_per_text = 2.9;
    auto checks = compare_to_reference(s, kDetailReferStats);
    CHECK(std::all_of(checks.begin(), checks.end(), [](const ReferenceCheck& c) { return c.pass; }));
    s.num_descriptions = 54431;
    checks = compare_to_reference(s, kDetailReferStats);
    CHECK(std::count_if(checks.begin(), checks.end(), [](const ReferenceCheck& c) { return !c.pass; }) == 1);
    s.num_descriptions = 54432;
    s.avg_token_length = 24.9 * 1.11;
    checks = compare_to_reference(s, kDetailReferStats);
    CHECK(std::count_if(checks.begin(), checks.end(), [](const ReferenceCheck& c) { return !c.pass; }) == 1);
  }
}
