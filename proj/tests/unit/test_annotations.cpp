#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "loctex/annotations.hpp"
#include "random_narratives.hpp"

using namespace loctex;

namespace {

const char* kRecord =
    R"({"image_id": "42", "caption": "A dog runs", )"
    R"("timed_caption": [{"utterance": "A", "start_time": 0.0, "end_time": 0.4},)"
    R"({"utterance": "dog", "start_time": 0.4, "end_time": 1.0},)"
    R"({"utterance": "runs", "start_time": 1.0, "end_time": 1.5}],)"
    R"("traces": [[{"x": 0.1, "y": 0.2, "t": 0.1}, {"x": 0.2, "y": 0.2, "t": 0.3},)"
    R"({"x": 1.07, "y": 0.5, "t": 0.6}, {"x": 0.4, "y": -0.2, "t": 0.9}, {"x": 0.5, "y": 0.5, "t": 1.2}]]})";

ParseResult parse_string(const std::string& text, bool strict = false) {
  std::istringstream in(text);
  return parse_narratives(in, {strict});
}

// Selection sort by timestamp: an independent ordering oracle.
std::vector<TracePoint> selection_sorted(std::vector<TracePoint> pts) {
  for (std::size_t i = 0; i < pts.size(); ++i) {
    std::size_t best = i;
    for (std::size_t j = i + 1; j < pts.size(); ++j) {
      if (pts[j].t < pts[best].t) best = j;
    }
    std::swap(pts[i], pts[best]);
  }
  return pts;
}

}  // namespace

TEST_CASE("one record maps every field") {
  auto r = parse_string(kRecord);
  REQUIRE(r.errors.empty());
  REQUIRE(r.narratives.size() == 1);
  const auto& n = r.narratives[0];
  CHECK(n.image_id == "42");
  CHECK(n.image_path == "42.jpg");
  CHECK(n.timed_words.size() == 3);
  CHECK(n.timed_words[0].text == "a");
  CHECK(n.trace.size() == 5);
}

TEST_CASE("coordinates are clamped to the unit square") {
  auto r = parse_string(kRecord);
  const auto& trace = r.narratives.at(0).trace;
  CHECK(trace[2].x == 1.0);
  CHECK(trace[3].y == 0.0);
}

TEST_CASE("interleaved trace segments are merged in time order") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<TracePoint> a, b;
    double ta = 0, tb = 0.05;
    for (int i = 0; i < 8; ++i) {
      a.push_back({u(rng), u(rng), ta += u(rng)});
      b.push_back({u(rng), u(rng), tb += u(rng)});
    }
    std::ostringstream rec;
    rec.precision(17);
    rec << R"({"image_id":"x","caption":"w","timed_caption":[{"utterance":"w","start_time":0,"end_time":1}],"traces":[)";
    for (const auto* seg : {&a, &b}) {
      rec << (seg == &a ? "[" : ",[");
      for (std::size_t i = 0; i < seg->size(); ++i) {
        rec << (i ? "," : "") << R"({"x":)" << (*seg)[i].x << R"(,"y":)" << (*seg)[i].y << R"(,"t":)" << (*seg)[i].t << "}";
      }
      rec << "]";
    }
    rec << "]}";
    auto parsed = parse_narrative_record(rec.str());
    std::vector<TracePoint> all = a;
    all.insert(all.end(), b.begin(), b.end());
    const auto expected = selection_sorted(all);
    REQUIRE(parsed.trace.size() == expected.size());
    for (std::size_t i = 0; i < expected.size(); ++i) {
      CHECK(parsed.trace[i].t == doctest::Approx(expected[i].t).epsilon(1e-12));
    }
  }
}

TEST_CASE("malformed lines are reported with their line number") {
  const std::string text = std::string(kRecord) + "\n{not json\n" + kRecord + "\n" +
                           R"({"image_id":"1","timed_caption":[],"traces":[]})" + "\n";
  auto r = parse_string(text);
  CHECK(r.narratives.size() == 2);
  REQUIRE(r.errors.size() == 2);
  CHECK(r.errors[0].line == 2);
  CHECK(r.errors[1].line == 4);
  CHECK(r.errors[1].message.find("caption") != std::string::npos);

  try {
    parse_string(text, true);
    FAIL("strict parse should throw");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
}

TEST_CASE("an empty trace is not an error") {
  auto r = parse_string(R"({"image_id":"1","caption":"sky","timed_caption":[{"utterance":"sky","start_time":0,"end_time":1}],"traces":[]})");
  REQUIRE(r.errors.empty());
  CHECK(r.narratives.at(0).trace.empty());
}

TEST_CASE("offsets point at the source lines") {
  const std::string text = std::string(kRecord) + "\n\n" + kRecord + "\n";
  auto r = parse_string(text);
  REQUIRE(r.offsets.size() == 2);
  CHECK(r.offsets[0] == 0);
  CHECK(r.offsets[1] == std::string(kRecord).size() + 2);
}

TEST_CASE("crop_trace keeps points inside the closed word window") {
  LocalizedNarrative n;
  n.caption = "w";
  n.timed_words = {{"w", 0.0, 1.0}, {"v", 2.0, 2.5}};
  n.trace = {{0.1, 0.1, 0.1}, {0.2, 0.2, 0.5}, {0.3, 0.3, 1.2}};

  auto first = crop_trace(n, 0);
  REQUIRE(first.size() == 2);
  CHECK(first[0].t == 0.1);
  CHECK(first[1].t == 0.5);
  CHECK(crop_trace(n, 1).empty());

  n.timed_words.push_back({"all", 0.1, 1.2});
  CHECK(crop_trace(n, 2) == n.trace);

  CHECK_THROWS_AS(crop_trace(n, 3), std::out_of_range);
}

TEST_CASE("validate_narrative reports each violated invariant") {
  std::mt19937_64 rng(1);
  auto n = testing::random_narrative(rng, 4);
  CHECK(validate_narrative(n).empty());

  auto unsorted = n;
  std::swap(unsorted.trace[0], unsorted.trace[1]);
  auto v = validate_narrative(unsorted);
  REQUIRE(v.size() == 1);
  CHECK(v[0].kind == ViolationKind::kUnsortedTrace);

  auto mismatch = n;
  mismatch.caption += " extra";
  v = validate_narrative(mismatch);
  REQUIRE(v.size() == 1);
  CHECK(v[0].kind == ViolationKind::kCaptionMismatch);

  auto spacing = n;
  spacing.caption = "  " + n.caption + "   ";
  CHECK(validate_narrative(spacing).empty());
}

TEST_CASE("overlapping word windows share trace points") {
  LocalizedNarrative n;
  n.caption = "a b";
  n.timed_words = {{"a", 0.0, 1.0}, {"b", 0.5, 1.5}};
  n.trace = {{0.5, 0.5, 0.75}};
  CHECK(validate_narrative(n).empty());
  CHECK(crop_trace(n, 0).size() == 1);
  CHECK(crop_trace(n, 1).size() == 1);
}

TEST_CASE("property: crops are time-contiguous subsequences of the trace") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    auto n = testing::random_narrative(rng, 2 + trial % 7);
    for (std::size_t w = 0; w < n.timed_words.size(); ++w) {
      auto crop = crop_trace(n, w);
      if (crop.empty()) continue;
      auto first = std::find(n.trace.begin(), n.trace.end(), crop.front());
      REQUIRE(first != n.trace.end());
      REQUIRE(static_cast<std::size_t>(n.trace.end() - first) >= crop.size());
      CHECK(std::equal(crop.begin(), crop.end(), first));
    }
  }
}

TEST_CASE("property: serialize then parse is stable") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    auto n = testing::random_narrative(rng, 1 + trial % 9, "id" + std::to_string(trial));
    const auto once = parse_narrative_record(serialize_narrative(n));
    const auto twice = parse_narrative_record(serialize_narrative(once));
    CHECK(once == n);
    CHECK(twice == once);
  }
}

TEST_CASE("parsing is deterministic") {
  const std::string text = std::string(kRecord) + "\n" + kRecord + "\n";
  CHECK(parse_string(text).narratives == parse_string(text).narratives);
}

TEST_CASE("dataset index round trips and resolves records") {
  const auto dir = std::filesystem::temp_directory_path() / "loctex_index_test";
  std::filesystem::create_directories(dir);
  const auto ann = dir / "ann.jsonl";
  {
    std::ofstream out(ann);
    out << kRecord << "\n" << kRecord << "\n";
  }
  std::ifstream in(ann);
  auto parsed = parse_narratives(in);
  DatasetIndex index;
  index.annotations_path = ann.string();
  for (std::size_t i = 0; i < parsed.narratives.size(); ++i) {
    index.entries.push_back({"id" + std::to_string(i), parsed.narratives[i].image_path, parsed.offsets[i]});
  }
  index.save(dir / "index.tsv");
  const auto loaded = DatasetIndex::load(dir / "index.tsv");
  CHECK(loaded.entries == index.entries);
  CHECK(loaded.annotations_path == index.annotations_path);
  CHECK(read_narrative_at(ann, loaded.entries[1].offset) == parsed.narratives[1]);
  CHECK(loaded.find("id1").has_value());
  CHECK_FALSE(loaded.find("nope").has_value());

  std::istringstream bad("loctex-index 99\nannotations\tx\n");
  CHECK_THROWS(DatasetIndex::read(bad));
  std::filesystem::remove_all(dir);
}
