#include "loctex/annotations.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace loctex {

using nlohmann::json;

ParseError::ParseError(std::size_t line, const std::string& message)
    : std::runtime_error("line " + std::to_string(line) + ": " + message), line_(line) {}

std::string ascii_lower(std::string_view text) {
  std::string out(text);
  for (char& c : out) {
    c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  return out;
}

std::vector<std::string> split_whitespace(std::string_view text) {
  std::vector<std::string> words;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) words.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return words;
}

namespace {

const json& require(const json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end()) throw std::invalid_argument(std::string("missing field '") + key + "'");
  return *it;
}

double require_number(const json& obj, const char* key) {
  const json& v = require(obj, key);
  if (!v.is_number()) throw std::invalid_argument(std::string("field '") + key + "' is not a number");
  return v.get<double>();
}

double clamp_unit(double v) { return std::clamp(v, 0.0, 1.0); }

}  // namespace

LocalizedNarrative parse_narrative_record(const std::string& line) {
  json rec;
  try {
    rec = json::parse(line);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("malformed JSON: ") + e.what());
  }
  if (!rec.is_object()) throw std::invalid_argument("record is not a JSON object");

  LocalizedNarrative n;
  const json& id = require(rec, "image_id");
  n.image_id = id.is_string() ? id.get<std::string>() : id.dump();
  const json& caption = require(rec, "caption");
  if (!caption.is_string()) throw std::invalid_argument("field 'caption' is not a string");
  n.caption = caption.get<std::string>();
  if (auto it = rec.find("image_path"); it != rec.end() && it->is_string()) {
    n.image_path = it->get<std::string>();
  } else {
    n.image_path = n.image_id + ".jpg";
  }

  const json& timed = require(rec, "timed_caption");
  if (!timed.is_array()) throw std::invalid_argument("field 'timed_caption' is not an array");
  for (const json& w : timed) {
    const json& utt = require(w, "utterance");
    if (!utt.is_string()) throw std::invalid_argument("field 'utterance' is not a string");
    TimedWord tw{ascii_lower(utt.get<std::string>()), require_number(w, "start_time"),
                 require_number(w, "end_time")};
    if (!std::isfinite(tw.start) || !std::isfinite(tw.end)) {
      throw std::invalid_argument("non-finite word timestamp");
    }
    n.timed_words.push_back(std::move(tw));
  }

  const json& traces = require(rec, "traces");
  if (!traces.is_array()) throw std::invalid_argument("field 'traces' is not an array");
  for (const json& segment : traces) {
    if (!segment.is_array()) throw std::invalid_argument("trace segment is not an array");
    for (const json& p : segment) {
      TracePoint tp{require_number(p, "x"), require_number(p, "y"), require_number(p, "t")};
      if (!std::isfinite(tp.x) || !std::isfinite(tp.y) || !std::isfinite(tp.t)) {
        throw std::invalid_argument("non-finite trace point");
      }
      if (tp.t < 0.0) throw std::invalid_argument("negative trace timestamp");
      tp.x = clamp_unit(tp.x);
      tp.y = clamp_unit(tp.y);
      n.trace.push_back(tp);
    }
  }
  std::stable_sort(n.trace.begin(), n.trace.end(),
                   [](const TracePoint& a, const TracePoint& b) { return a.t < b.t; });
  return n;
}

ParseResult parse_narratives(std::istream& in, const ParseOptions& opts) {
  ParseResult result;
  std::string line;
  std::size_t line_no = 0;
  std::uint64_t offset = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::uint64_t line_offset = offset;
    offset += line.size() + 1;
    if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); })) {
      continue;
    }
    try {
      result.narratives.push_back(parse_narrative_record(line));
      result.offsets.push_back(line_offset);
    } catch (const std::invalid_argument& e) {
      if (opts.strict) throw ParseError(line_no, e.what());
      result.errors.push_back({line_no, e.what()});
    }
  }
  return result;
}

std::string serialize_narrative(const LocalizedNarrative& n) {
  json rec;
  rec["image_id"] = n.image_id;
  rec["image_path"] = n.image_path;
  rec["caption"] = n.caption;
  json timed = json::array();
  for (const auto& w : n.timed_words) {
    timed.push_back({{"utterance", w.text}, {"start_time", w.start}, {"end_time", w.end}});
  }
  rec["timed_caption"] = std::move(timed);
  json segment = json::array();
  for (const auto& p : n.trace) segment.push_back({{"x", p.x}, {"y", p.y}, {"t", p.t}});
  rec["traces"] = json::array({std::move(segment)});
  return rec.dump();
}

std::vector<TracePoint> crop_trace(const LocalizedNarrative& narrative, std::size_t word_index) {
  if (word_index >= narrative.timed_words.size()) {
    throw std::out_of_range("word index " + std::to_string(word_index) + " out of range (" +
                            std::to_string(narrative.timed_words.size()) + " words)");
  }
  const TimedWord& w = narrative.timed_words[word_index];
  std::vector<TracePoint> out;
  for (const TracePoint& p : narrative.trace) {
    if (p.t >= w.start && p.t <= w.end) out.push_back(p);
  }
  return out;
}

const char* to_string(ViolationKind kind) {
  switch (kind) {
    case ViolationKind::kUnsortedTrace: return "unsorted trace";
    case ViolationKind::kUnsortedWords: return "unsorted words";
    case ViolationKind::kCaptionMismatch: return "caption mismatch";
    case ViolationKind::kEmptyWord: return "empty word";
    case ViolationKind::kInvertedWordWindow: return "inverted word window";
    case ViolationKind::kInvalidTracePoint: return "invalid trace point";
  }
  return "unknown";
}

std::vector<Violation> validate_narrative(const LocalizedNarrative& n) {
  std::vector<Violation> out;
  auto add = [&](ViolationKind kind, std::string msg) { out.push_back({kind, std::move(msg)}); };

  for (std::size_t i = 1; i < n.trace.size(); ++i) {
    if (n.trace[i].t < n.trace[i - 1].t) {
      add(ViolationKind::kUnsortedTrace, "trace time decreases at point " + std::to_string(i));
      break;
    }
  }
  for (std::size_t i = 0; i < n.trace.size(); ++i) {
    const auto& p = n.trace[i];
    if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.t) || p.t < 0.0) {
      add(ViolationKind::kInvalidTracePoint, "trace point " + std::to_string(i) + " is not finite or has t < 0");
      break;
    }
  }
  for (std::size_t i = 1; i < n.timed_words.size(); ++i) {
    if (n.timed_words[i].start < n.timed_words[i - 1].start) {
      add(ViolationKind::kUnsortedWords, "word start time decreases at word " + std::to_string(i));
      break;
    }
  }
  for (std::size_t i = 0; i < n.timed_words.size(); ++i) {
    if (n.timed_words[i].text.empty()) {
      add(ViolationKind::kEmptyWord, "word " + std::to_string(i) + " is empty");
      break;
    }
  }
  for (std::size_t i = 0; i < n.timed_words.size(); ++i) {
    if (n.timed_words[i].start > n.timed_words[i].end) {
      add(ViolationKind::kInvertedWordWindow, "word " + std::to_string(i) + " ends before it starts");
      break;
    }
  }

  std::vector<std::string> joined;
  for (const auto& w : n.timed_words) {
    for (auto& part : split_whitespace(w.text)) joined.push_back(std::move(part));
  }
  if (joined != split_whitespace(ascii_lower(n.caption))) {
    add(ViolationKind::kCaptionMismatch, "timed words do not reproduce the caption");
  }
  return out;
}

// --- dataset index --------------------------------------------------------

namespace {
constexpr const char* kIndexTag = "loctex-index";
}

std::optional<IndexEntry> DatasetIndex::find(const std::string& image_id) const {
  for (const auto& e : entries) {
    if (e.image_id == image_id) return e;
  }
  return std::nullopt;
}

void DatasetIndex::write(std::ostream& out) const {
  out << kIndexTag << ' ' << kFormatVersion << '\n';
  out << "annotations\t" << annotations_path << '\n';
  for (const auto& e : entries) {
    out << e.image_id << '\t' << e.image_path << '\t' << e.offset << '\n';
  }
}

DatasetIndex DatasetIndex::read(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty dataset index");
  std::istringstream header(line);
  std::string tag;
  int version = 0;
  header >> tag >> version;
  if (tag != kIndexTag) throw std::runtime_error("not a dataset index file");
  if (version != kFormatVersion) {
    throw std::runtime_error("unsupported dataset index version " + std::to_string(version));
  }
  DatasetIndex index;
  if (!std::getline(in, line) || line.rfind("annotations\t", 0) != 0) {
    throw std::runtime_error("dataset index is missing the annotations line");
  }
  index.annotations_path = line.substr(std::string("annotations\t").size());
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto a = line.find('\t');
    const auto b = line.find('\t', a == std::string::npos ? a : a + 1);
    if (a == std::string::npos || b == std::string::npos) {
      throw std::runtime_error("malformed dataset index entry: " + line);
    }
    IndexEntry e;
    e.image_id = line.substr(0, a);
    e.image_path = line.substr(a + 1, b - a - 1);
    e.offset = std::stoull(line.substr(b + 1));
    index.entries.push_back(std::move(e));
  }
  return index;
}

void DatasetIndex::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write(out);
}

DatasetIndex DatasetIndex::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return read(in);
}

LocalizedNarrative read_narrative_at(const std::filesystem::path& annotations, std::uint64_t offset) {
  std::ifstream in(annotations, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + annotations.string());
  in.seekg(static_cast<std::streamoff>(offset));
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("offset past end of " + annotations.string());
  return parse_narrative_record(line);
}

}  // namespace loctex
