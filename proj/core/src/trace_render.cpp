#include "loctex/trace_render.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>

namespace loctex {

std::size_t GridMask::count() const {
  return static_cast<std::size_t>(std::count_if(data.begin(), data.end(), [](std::uint8_t v) { return v != 0; }));
}

namespace {

int cell_index(double coord, int cells) {
  return std::clamp(static_cast<int>(std::floor(coord)), 0, cells - 1);
}

bool is_integral(double v) { return v == std::floor(v); }

void mark_segment(GridMask& grid, double x0, double y0, double x1, double y1) {
  const double dx = x1 - x0;
  const double dy = y1 - y0;
  // A segment lying on a grid line touches no cell interior.
  if ((dx == 0.0 && is_integral(x0)) || (dy == 0.0 && is_integral(y0))) return;

  std::vector<double> ts{0.0, 1.0};
  auto add_crossings = [&ts](double start, double delta) {
    if (delta == 0.0) return;
    const double lo = std::min(start, start + delta);
    const double hi = std::max(start, start + delta);
    for (double k = std::ceil(lo); k <= hi; k += 1.0) {
      const double t = (k - start) / delta;
      if (t > 0.0 && t < 1.0) ts.push_back(t);
    }
  };
  add_crossings(x0, dx);
  add_crossings(y0, dy);
  std::sort(ts.begin(), ts.end());

  // Between consecutive crossings the segment stays inside one cell interior.
  for (std::size_t i = 0; i + 1 < ts.size(); ++i) {
    if (ts[i + 1] <= ts[i]) continue;
    const double tm = 0.5 * (ts[i] + ts[i + 1]);
    const double x = x0 + tm * dx;
    const double y = y0 + tm * dy;
    grid.at(cell_index(y, grid.rows), cell_index(x, grid.cols)) = 1;
  }
}

}  // namespace

GridMask rasterize_trace(std::span<const TracePoint> points, int rows, int cols, int dilation) {
  if (rows < 1 || cols < 1) throw std::invalid_argument("rasterize_trace: resolution must be positive");
  if (dilation < 0) throw std::invalid_argument("rasterize_trace: dilation must be non-negative");
  GridMask grid(rows, cols);
  if (points.empty()) return grid;

  auto mark_point = [&](const TracePoint& p) {
    grid.at(cell_index(p.y * rows, rows), cell_index(p.x * cols, cols)) = 1;
  };
  if (points.size() == 1) mark_point(points.front());
  for (std::size_t i = 0; i + 1 < points.size(); ++i) {
    const TracePoint& a = points[i];
    const TracePoint& b = points[i + 1];
    if (a.x == b.x && a.y == b.y) {
      mark_point(a);
    } else {
      mark_segment(grid, a.x * cols, a.y * rows, b.x * cols, b.y * rows);
    }
  }
  return dilation > 0 ? dilate(grid, dilation) : grid;
}

GridMask dilate(const GridMask& mask, int radius) {
  if (radius <= 0) return mask;
  GridMask out(mask.rows, mask.cols);
  for (int r = 0; r < mask.rows; ++r) {
    for (int c = 0; c < mask.cols; ++c) {
      if (!mask.at(r, c)) continue;
      for (int rr = std::max(0, r - radius); rr <= std::min(mask.rows - 1, r + radius); ++rr) {
        for (int cc = std::max(0, c - radius); cc <= std::min(mask.cols - 1, c + radius); ++cc) {
          out.at(rr, cc) = 1;
        }
      }
    }
  }
  return out;
}

GridMask mirror_columns(const GridMask& mask) {
  GridMask out(mask.rows, mask.cols);
  for (int r = 0; r < mask.rows; ++r) {
    for (int c = 0; c < mask.cols; ++c) out.at(r, mask.cols - 1 - c) = mask.at(r, c);
  }
  return out;
}

GridMask downsample_any(const GridMask& mask, int rows, int cols) {
  if (rows < 1 || cols < 1) throw std::invalid_argument("downsample_any: target must be positive");
  if (rows == mask.rows && cols == mask.cols) return mask;
  GridMask out(rows, cols);
  for (int r = 0; r < mask.rows; ++r) {
    const int tr = static_cast<int>(static_cast<std::int64_t>(r) * rows / mask.rows);
    for (int c = 0; c < mask.cols; ++c) {
      if (!mask.at(r, c)) continue;
      const int tc = static_cast<int>(static_cast<std::int64_t>(c) * cols / mask.cols);
      out.at(tr, tc) = 1;
    }
  }
  return out;
}

RenderedAttention::RenderedAttention(int length, int resolution)
    : length(length),
      resolution(resolution),
      data(static_cast<std::size_t>(length) * resolution * resolution, 0),
      token_mask(static_cast<std::size_t>(length), 0) {}

std::span<std::uint8_t> RenderedAttention::slice(int token) {
  const std::size_t area = static_cast<std::size_t>(resolution) * resolution;
  return {data.data() + token * area, area};
}

std::span<const std::uint8_t> RenderedAttention::slice(int token) const {
  const std::size_t area = static_cast<std::size_t>(resolution) * resolution;
  return {data.data() + token * area, area};
}

GridMask RenderedAttention::slice_mask(int token) const {
  GridMask m(resolution, resolution);
  auto s = slice(token);
  std::copy(s.begin(), s.end(), m.data.begin());
  return m;
}

void RenderedAttention::set_slice(int token, const GridMask& mask) {
  if (mask.rows != resolution || mask.cols != resolution) {
    throw std::invalid_argument("set_slice: mask resolution mismatch");
  }
  auto s = slice(token);
  std::copy(mask.data.begin(), mask.data.end(), s.begin());
  token_mask[static_cast<std::size_t>(token)] = mask.empty() ? 0 : 1;
}

namespace {

void check_alignment(const LocalizedNarrative& narrative, const TokenizedCaption& tok) {
  if (tok.word_alignment.size() != tok.ids.size()) {
    throw std::invalid_argument("tokenized caption has inconsistent alignment length");
  }
  for (std::int32_t w : tok.word_alignment) {
    if (w != kNoWord && (w < 0 || static_cast<std::size_t>(w) >= narrative.timed_words.size())) {
      throw std::invalid_argument("token aligned to word " + std::to_string(w) + " but narrative has " +
                                  std::to_string(narrative.timed_words.size()) + " timed words");
    }
  }
}

}  // namespace

RenderedAttention render_attention(const LocalizedNarrative& narrative, const TokenizedCaption& tok,
                                   int resolution, int dilation) {
  if (resolution < 1) throw std::invalid_argument("render_attention: resolution must be positive");
  check_alignment(narrative, tok);
  const int length = static_cast<int>(tok.ids.size());
  RenderedAttention out(length, resolution);
  std::map<std::int32_t, GridMask> per_word;
  for (int i = 0; i < length; ++i) {
    const std::int32_t w = tok.word_alignment[static_cast<std::size_t>(i)];
    if (w == kNoWord) continue;
    auto it = per_word.find(w);
    if (it == per_word.end()) {
      auto cropped = crop_trace(narrative, static_cast<std::size_t>(w));
      it = per_word.emplace(w, rasterize_trace(cropped, resolution, dilation)).first;
    }
    out.set_slice(i, it->second);
  }
  return out;
}

// --- oracle ----------------------------------------------------------------

void CategoryTable::add(const std::string& category, const std::string& alias) {
  const std::string cat = ascii_lower(category);
  alias_to_categories_[cat].insert(cat);
  alias_to_categories_[ascii_lower(alias)].insert(cat);
}

std::set<std::string> CategoryTable::lookup(const std::string& word) const {
  auto it = alias_to_categories_.find(ascii_lower(word));
  if (it == alias_to_categories_.end()) return {};
  return it->second;
}

CategoryTable CategoryTable::read(std::istream& in) {
  CategoryTable table;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw std::runtime_error("category table line " + std::to_string(line_no) + ": expected category<TAB>alias");
    }
    table.add(line.substr(0, tab), line.substr(tab + 1));
  }
  return table;
}

CategoryTable CategoryTable::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return read(in);
}

double mask_iou(const GridMask& a, const GridMask& b) {
  if (a.rows != b.rows || a.cols != b.cols) throw std::invalid_argument("mask_iou: shape mismatch");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const bool x = a.data[i] != 0, y = b.data[i] != 0;
    inter += (x && y) ? 1 : 0;
    uni += (x || y) ? 1 : 0;
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<std::size_t> select_instances(const GridMask& trace_mask, const InstanceMaskSet& masks,
                                          const std::set<std::string>& categories, const OracleOptions& opts) {
  if (!(opts.iou_threshold > 0.0 && opts.iou_threshold < 1.0)) {
    throw std::invalid_argument("select_instances: iou_threshold must lie in (0, 1)");
  }
  std::vector<std::size_t> selected;
  for (std::size_t i = 0; i < masks.instances.size(); ++i) {
    const auto& inst = masks.instances[i];
    if (!categories.contains(inst.category)) continue;
    const GridMask pooled = downsample_any(inst.mask, trace_mask.rows, trace_mask.cols);
    if (mask_iou(trace_mask, pooled) >= opts.iou_threshold) selected.push_back(i);
  }
  return selected;
}

std::string strip_punctuation(std::string_view word) {
  std::size_t b = 0, e = word.size();
  while (b < e && !std::isalnum(static_cast<unsigned char>(word[b]))) ++b;
  while (e > b && !std::isalnum(static_cast<unsigned char>(word[e - 1]))) --e;
  return std::string(word.substr(b, e - b));
}

RenderedAttention oracle_attention(const LocalizedNarrative& narrative, const TokenizedCaption& tok,
                                   const InstanceMaskSet& masks, const CategoryTable& categories,
                                   int resolution, const OracleOptions& opts) {
  for (const auto& inst : masks.instances) {
    if (inst.mask.rows != masks.height || inst.mask.cols != masks.width) {
      throw std::invalid_argument("oracle_attention: instance mask does not match image size");
    }
  }
  RenderedAttention out = render_attention(narrative, tok, resolution, opts.dilation);
  const int grid_rows = opts.iou_grid > 0 ? opts.iou_grid : masks.height;
  const int grid_cols = opts.iou_grid > 0 ? opts.iou_grid : masks.width;
  if (masks.instances.empty() || grid_rows < 1 || grid_cols < 1) return out;

  std::map<std::int32_t, GridMask> replaced;
  for (std::int32_t w : tok.word_alignment) {
    if (w == kNoWord || replaced.contains(w)) continue;
    const auto cats = categories.lookup(strip_punctuation(narrative.timed_words[static_cast<std::size_t>(w)].text));
    if (cats.empty()) continue;
    const auto cropped = crop_trace(narrative, static_cast<std::size_t>(w));
    const GridMask trace_mask = rasterize_trace(cropped, grid_rows, grid_cols, opts.dilation);
    const auto chosen = select_instances(trace_mask, masks, cats, opts);
    if (chosen.empty()) continue;
    GridMask uni(masks.height, masks.width);
    for (std::size_t i : chosen) {
      const auto& m = masks.instances[i].mask.data;
      for (std::size_t k = 0; k < m.size(); ++k) uni.data[k] |= m[k] != 0 ? 1 : 0;
    }
    replaced.emplace(w, downsample_any(uni, resolution, resolution));
  }
  for (int i = 0; i < out.length; ++i) {
    auto it = replaced.find(tok.word_alignment[static_cast<std::size_t>(i)]);
    if (it != replaced.end()) out.set_slice(i, it->second);
  }
  return out;
}

// --- target archive ----------------------------------------------------------

namespace {

constexpr char kArchiveMagic[8] = {'L', 'T', 'X', 'T', 'A', 'R', 'G', '\0'};

void put_u32(std::ostream& out, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
                         static_cast<char>((v >> 16) & 0xFF), static_cast<char>((v >> 24) & 0xFF)};
  out.write(bytes, 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
  put_u32(out, static_cast<std::uint32_t>(v & 0xFFFFFFFFu));
  put_u32(out, static_cast<std::uint32_t>(v >> 32));
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error("target archive truncated");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint64_t get_u64(std::istream& in) {
  const std::uint64_t lo = get_u32(in);
  const std::uint64_t hi = get_u32(in);
  return lo | (hi << 32);
}

void get_bytes(std::istream& in, std::vector<std::uint8_t>& buf) {
  if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()))) {
    throw std::runtime_error("target archive truncated");
  }
}

}  // namespace

void TargetArchive::write(std::ostream& out) const {
  out.write(kArchiveMagic, sizeof(kArchiveMagic));
  put_u32(out, kFormatVersion);
  put_u32(out, max_length);
  put_u32(out, dilation);
  put_u32(out, static_cast<std::uint32_t>(resolutions.size()));
  for (auto r : resolutions) put_u32(out, r);
  put_u64(out, entries.size());
  for (const auto& [id, targets] : entries) {
    if (targets.size() != resolutions.size()) {
      throw std::invalid_argument("target archive entry '" + id + "' has wrong number of resolutions");
    }
    put_u32(out, static_cast<std::uint32_t>(id.size()));
    out.write(id.data(), static_cast<std::streamsize>(id.size()));
    for (std::size_t k = 0; k < targets.size(); ++k) {
      const auto& t = targets[k];
      if (static_cast<std::uint32_t>(t.resolution) != resolutions[k]) {
        throw std::invalid_argument("target archive entry '" + id + "' resolution mismatch");
      }
      put_u32(out, static_cast<std::uint32_t>(t.length));
      put_u32(out, static_cast<std::uint32_t>(t.resolution));
      out.write(reinterpret_cast<const char*>(t.token_mask.data()), static_cast<std::streamsize>(t.token_mask.size()));
      out.write(reinterpret_cast<const char*>(t.data.data()), static_cast<std::streamsize>(t.data.size()));
    }
  }
}

TargetArchive TargetArchive::read(std::istream& in) {
  char magic[sizeof(kArchiveMagic)];
  if (!in.read(magic, sizeof(magic)) || !std::equal(magic, magic + sizeof(magic), kArchiveMagic)) {
    throw std::runtime_error("not a target archive");
  }
  const std::uint32_t version = get_u32(in);
  if (version != kFormatVersion) throw std::runtime_error("unsupported target archive version " + std::to_string(version));
  TargetArchive ar;
  ar.max_length = get_u32(in);
  ar.dilation = get_u32(in);
  const std::uint32_t n_res = get_u32(in);
  for (std::uint32_t i = 0; i < n_res; ++i) ar.resolutions.push_back(get_u32(in));
  const std::uint64_t n = get_u64(in);
  for (std::uint64_t e = 0; e < n; ++e) {
    std::string id(get_u32(in), '\0');
    if (!in.read(id.data(), static_cast<std::streamsize>(id.size()))) throw std::runtime_error("target archive truncated");
    std::vector<RenderedAttention> targets;
    for (std::uint32_t k = 0; k < n_res; ++k) {
      const auto length = static_cast<int>(get_u32(in));
      const auto res = static_cast<int>(get_u32(in));
      RenderedAttention t(length, res);
      get_bytes(in, t.token_mask);
      get_bytes(in, t.data);
      targets.push_back(std::move(t));
    }
    ar.entries.emplace(std::move(id), std::move(targets));
  }
  return ar;
}

void TargetArchive::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write(out);
}

TargetArchive TargetArchive::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return read(in);
}

}  // namespace loctex
