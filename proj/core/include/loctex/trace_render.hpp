#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "loctex/annotations.hpp"
#include "loctex/tokenizer.hpp"

namespace loctex {

/// Row-major binary grid. Row index follows y (top to bottom), column index
/// follows x (left to right).
struct GridMask {
  int rows = 0;
  int cols = 0;
  std::vector<std::uint8_t> data;

  GridMask() = default;
  GridMask(int rows, int cols) : rows(rows), cols(cols), data(static_cast<std::size_t>(rows) * cols, 0) {}

  std::uint8_t& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  std::uint8_t at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
  std::size_t count() const;
  bool empty() const { return count() == 0; }

  friend bool operator==(const GridMask&, const GridMask&) = default;
};

/// Cells whose open interior is crossed by a segment between consecutive
/// points, plus the cell holding any isolated point (a single-point input or
/// a zero-length segment), then grown by `dilation` cells in Chebyshev
/// distance. Corner-only contact and segments running along a grid line do
/// not mark a cell.
GridMask rasterize_trace(std::span<const TracePoint> points, int rows, int cols, int dilation);
inline GridMask rasterize_trace(std::span<const TracePoint> points, int resolution, int dilation = 0) {
  return rasterize_trace(points, resolution, resolution, dilation);
}

/// Marks every cell within `radius` (Chebyshev) of a marked cell.
GridMask dilate(const GridMask& mask, int radius);

/// Reverses the column order.
GridMask mirror_columns(const GridMask& mask);

/// Any-coverage pooling: each source cell maps to the target cell
/// floor(r * rows / src.rows), floor(c * cols / src.cols); a target cell is
/// set if any of its source cells is.
GridMask downsample_any(const GridMask& mask, int rows, int cols);

/// Per-token binary targets of shape length x resolution x resolution.
struct RenderedAttention {
  int length = 0;
  int resolution = 0;
  std::vector<std::uint8_t> data;  // token-major
  std::vector<std::uint8_t> token_mask;

  RenderedAttention() = default;
  RenderedAttention(int length, int resolution);

  std::span<std::uint8_t> slice(int token);
  std::span<const std::uint8_t> slice(int token) const;
  GridMask slice_mask(int token) const;
  void set_slice(int token, const GridMask& mask);

  friend bool operator==(const RenderedAttention&, const RenderedAttention&) = default;
};

/// Renders the time-cropped trace of each aligned word into its sequence
/// position. Special and pad positions stay empty.
RenderedAttention render_attention(const LocalizedNarrative& narrative, const TokenizedCaption& tok,
                                   int resolution, int dilation = 0);

// --- oracle supervision from instance masks ---------------------------------

/// Category names plus their synonyms and parent classes, all lowercase.
class CategoryTable {
 public:
  void add(const std::string& category, const std::string& alias);
  /// Categories a word refers to (exact lowercase match on names and aliases).
  std::set<std::string> lookup(const std::string& word) const;

  /// Parses `category<TAB>alias` lines; blank lines and '#' comments ignored.
  static CategoryTable read(std::istream& in);
  static CategoryTable load(const std::filesystem::path& path);

 private:
  std::map<std::string, std::set<std::string>> alias_to_categories_;
};

struct InstanceMask {
  std::string category;
  GridMask mask;  // image resolution
};

struct InstanceMaskSet {
  int height = 0;
  int width = 0;
  std::vector<InstanceMask> instances;
};

/// |a AND b| / |a OR b|; 0 when both are empty. Shapes must match.
double mask_iou(const GridMask& a, const GridMask& b);

struct OracleOptions {
  double iou_threshold = 0.2;
  /// Grid on which trace and instance masks are compared; 0 uses the mask
  /// resolution itself.
  int iou_grid = 0;
  int dilation = 0;
};

/// Indices of the instances of `categories` whose IoU with the word's trace
/// mask reaches the threshold. The trace mask must be on the comparison grid.
std::vector<std::size_t> select_instances(const GridMask& trace_mask, const InstanceMaskSet& masks,
                                          const std::set<std::string>& categories, const OracleOptions& opts);

/// Strips leading and trailing non-alphanumeric bytes ("dog," -> "dog").
std::string strip_punctuation(std::string_view word);

/// Replaces the trace target of every word that names a category (and hits
/// at least one instance above the IoU threshold) with the union of the
/// selected instance masks pooled to `resolution`. Other tokens keep their
/// rendered trace.
RenderedAttention oracle_attention(const LocalizedNarrative& narrative, const TokenizedCaption& tok,
                                   const InstanceMaskSet& masks, const CategoryTable& categories,
                                   int resolution, const OracleOptions& opts = {});

// --- target archive ---------------------------------------------------------

/// Pre-rendered targets for one split, keyed by image id.
struct TargetArchive {
  static constexpr std::uint32_t kFormatVersion = 1;

  std::uint32_t max_length = 0;
  std::uint32_t dilation = 0;
  std::vector<std::uint32_t> resolutions;
  /// image id -> one RenderedAttention per entry of `resolutions`.
  std::map<std::string, std::vector<RenderedAttention>> entries;

  void write(std::ostream& out) const;
  static TargetArchive read(std::istream& in);
  void save(const std::filesystem::path& path) const;
  static TargetArchive load(const std::filesystem::path& path);
};

}  // namespace loctex
