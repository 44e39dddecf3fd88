#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "loctex/annotations.hpp"

namespace loctex {

/// Marks the final symbol of a word so merges never cross word boundaries
/// and decoding can restore whitespace.
inline constexpr std::string_view kEndOfWord = "</w>";

/// Character-level BPE vocabulary. Ids 0..3 are reserved for the special
/// tokens; [PAD] is 0 so padded sequences are zero-filled.
class Vocabulary {
 public:
  static constexpr std::int32_t kPad = 0;
  static constexpr std::int32_t kSos = 1;
  static constexpr std::int32_t kEos = 2;
  static constexpr std::int32_t kUnk = 3;
  static constexpr std::int32_t kNumSpecial = 4;
  static constexpr int kFormatVersion = 1;

  Vocabulary();

  const std::vector<std::pair<std::string, std::string>>& merges() const noexcept { return merges_; }
  std::size_t size() const noexcept { return id_to_token_.size(); }

  std::optional<std::int32_t> id_of(std::string_view token) const;
  const std::string& token_of(std::int32_t id) const;  // throws std::invalid_argument
  bool is_special(std::int32_t id) const noexcept { return id >= 0 && id < kNumSpecial; }

  /// Rank of a merge rule, or nullopt if the pair is not mergeable.
  std::optional<std::size_t> merge_rank(const std::string& left, const std::string& right) const;

  /// Splits one lowercased word into BPE symbols (not ids).
  std::vector<std::string> segment(std::string_view word) const;

  void write(std::ostream& out) const;
  static Vocabulary read(std::istream& in);
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  /// Serialized text; hashing this identifies the vocabulary.
  std::string to_string() const;

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.merges_ == b.merges_ && a.id_to_token_ == b.id_to_token_;
  }

 private:
  friend Vocabulary train_bpe(std::span<const std::string>, std::size_t);

  std::int32_t add_token(const std::string& token);
  void add_merge(const std::string& left, const std::string& right);

  std::vector<std::pair<std::string, std::string>> merges_;
  std::unordered_map<std::string, std::size_t> merge_ranks_;  // key: left + '\x1f' + right
  std::unordered_map<std::string, std::int32_t> token_to_id_;
  std::vector<std::string> id_to_token_;
};

/// Splits a UTF-8 string into code point substrings. Invalid lead bytes are
/// treated as single-byte characters.
std::vector<std::string> utf8_chars(std::string_view text);

/// Learns greedy most-frequent-pair merges over the lowercased,
/// whitespace-split corpus until the vocabulary (specials included) holds
/// `vocab_size` tokens or no pair occurs twice. Ties go to the
/// lexicographically smallest pair. Throws std::invalid_argument for an
/// empty corpus or a budget smaller than the base alphabet.
Vocabulary train_bpe(std::span<const std::string> corpus, std::size_t vocab_size);

inline constexpr std::size_t kDefaultMaxLength = 60;
inline constexpr std::int32_t kNoWord = -1;

struct TokenizedCaption {
  std::vector<std::int32_t> ids;             // length == max_length
  std::vector<std::int32_t> word_alignment;  // kNoWord for special and pad positions
  std::size_t valid_length = 0;

  friend bool operator==(const TokenizedCaption&, const TokenizedCaption&) = default;
};

struct EncodeOptions {
  std::size_t max_length = kDefaultMaxLength;
  /// Seeds the random content window when the caption is too long. Without
  /// a seed the leading window is kept.
  std::optional<std::uint64_t> crop_seed;
};

/// Tokenizes a caption. When `timed_words` is given its texts define the
/// words (and hence the alignment indices); otherwise the caption is split
/// on whitespace. Total length, [SOS] and [EOS] included, is max_length.
TokenizedCaption encode(std::string_view caption, const Vocabulary& vocab,
                        std::span<const TimedWord> timed_words = {}, const EncodeOptions& opts = {});

/// Encodes an explicit word list.
TokenizedCaption encode_words(std::span<const std::string> words, const Vocabulary& vocab,
                              const EncodeOptions& opts = {});

/// Joins the non-special tokens back into whitespace-separated words.
std::string decode(std::span<const std::int32_t> ids, const Vocabulary& vocab);

}  // namespace loctex
