#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace loctex {

/// A mouse position in normalized image coordinates, timestamped in seconds
/// from the start of the recording.
struct TracePoint {
  double x = 0.0;
  double y = 0.0;
  double t = 0.0;

  friend bool operator==(const TracePoint&, const TracePoint&) = default;
};

/// One spoken/typed word with its utterance window.
struct TimedWord {
  std::string text;
  double start = 0.0;
  double end = 0.0;

  friend bool operator==(const TimedWord&, const TimedWord&) = default;
};

/// Caption, per-word timings and the synchronized mouse trace of one image.
/// `trace` is the time-sorted concatenation of every recorded trace segment.
struct LocalizedNarrative {
  std::string image_id;
  std::string image_path;
  std::string caption;
  std::vector<TimedWord> timed_words;
  std::vector<TracePoint> trace;

  friend bool operator==(const LocalizedNarrative&, const LocalizedNarrative&) = default;
};

/// Thrown by `parse_narratives` in strict mode.
class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& message);
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

struct RecordError {
  std::size_t line = 0;  // 1-based
  std::string message;
};

struct ParseOptions {
  bool strict = false;
};

struct ParseResult {
  std::vector<LocalizedNarrative> narratives;
  /// Byte offset of the source line of each narrative.
  std::vector<std::uint64_t> offsets;
  std::vector<RecordError> errors;
};

/// Parses line-delimited JSON records (image_id, caption, timed_caption,
/// traces; optional image_path). Words are lowercased, coordinates clamped
/// to [0,1], trace segments flattened and stably sorted by time. Blank lines
/// are ignored. Invalid records are collected in `errors`, or raise
/// ParseError when `opts.strict` is set.
ParseResult parse_narratives(std::istream& in, const ParseOptions& opts = {});

/// Parses a single record. Throws std::invalid_argument on malformed input.
LocalizedNarrative parse_narrative_record(const std::string& line);

/// Serializes a narrative as one JSON line using the input field names.
/// The flattened trace is written as a single segment.
std::string serialize_narrative(const LocalizedNarrative& narrative);

/// Trace points whose timestamp lies in the closed utterance window of
/// `timed_words[word_index]`, in trace order.
std::vector<TracePoint> crop_trace(const LocalizedNarrative& narrative, std::size_t word_index);

enum class ViolationKind {
  kUnsortedTrace,
  kUnsortedWords,
  kCaptionMismatch,
  kEmptyWord,
  kInvertedWordWindow,
  kInvalidTracePoint,
};

struct Violation {
  ViolationKind kind;
  std::string message;
};

const char* to_string(ViolationKind kind);

/// One descriptor per violated invariant; empty when the narrative is well-formed.
std::vector<Violation> validate_narrative(const LocalizedNarrative& narrative);

/// Lowercases ASCII letters; other bytes pass through unchanged.
std::string ascii_lower(std::string_view text);

/// Splits on ASCII whitespace, dropping empty fields.
std::vector<std::string> split_whitespace(std::string_view text);

// --- dataset index --------------------------------------------------------

struct IndexEntry {
  std::string image_id;
  std::string image_path;
  std::uint64_t offset = 0;

  friend bool operator==(const IndexEntry&, const IndexEntry&) = default;
};

/// Maps image ids to their image file and annotation record offset.
struct DatasetIndex {
  static constexpr int kFormatVersion = 1;

  std::string annotations_path;
  std::vector<IndexEntry> entries;

  std::optional<IndexEntry> find(const std::string& image_id) const;

  void write(std::ostream& out) const;
  static DatasetIndex read(std::istream& in);

  void save(const std::filesystem::path& path) const;
  static DatasetIndex load(const std::filesystem::path& path);
};

/// Reads the record at `offset` from an annotation file.
LocalizedNarrative read_narrative_at(const std::filesystem::path& annotations, std::uint64_t offset);

}  // namespace loctex
