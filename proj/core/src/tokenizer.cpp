#include "loctex/tokenizer.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

namespace loctex {

namespace {

constexpr const char* kSpecialTokens[] = {"[PAD]", "[SOS]", "[EOS]", "[UNK]"};
constexpr const char* kVocabTag = "loctex-bpe";

std::string pair_key(const std::string& a, const std::string& b) { return a + '\x1f' + b; }

std::size_t utf8_length(unsigned char lead) {
  if (lead < 0x80) return 1;
  if ((lead >> 5) == 0x6) return 2;
  if ((lead >> 4) == 0xE) return 3;
  if ((lead >> 3) == 0x1E) return 4;
  return 1;
}

/// Base symbols of a word: one per character, the last carrying the end marker.
std::vector<std::string> base_symbols(std::string_view word) {
  auto chars = utf8_chars(word);
  if (!chars.empty()) chars.back() += kEndOfWord;
  return chars;
}

}  // namespace

std::vector<std::string> utf8_chars(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    std::size_t len = std::min(utf8_length(static_cast<unsigned char>(text[i])), text.size() - i);
    out.emplace_back(text.substr(i, len));
    i += len;
  }
  return out;
}

Vocabulary::Vocabulary() {
  for (const char* tok : kSpecialTokens) add_token(tok);
}

std::int32_t Vocabulary::add_token(const std::string& token) {
  if (auto it = token_to_id_.find(token); it != token_to_id_.end()) return it->second;
  const auto id = static_cast<std::int32_t>(id_to_token_.size());
  token_to_id_.emplace(token, id);
  id_to_token_.push_back(token);
  return id;
}

void Vocabulary::add_merge(const std::string& left, const std::string& right) {
  merge_ranks_.emplace(pair_key(left, right), merges_.size());
  merges_.emplace_back(left, right);
  add_token(left + right);
}

std::optional<std::int32_t> Vocabulary::id_of(std::string_view token) const {
  auto it = token_to_id_.find(std::string(token));
  if (it == token_to_id_.end()) return std::nullopt;
  return it->second;
}

const std::string& Vocabulary::token_of(std::int32_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= id_to_token_.size()) {
    throw std::invalid_argument("token id " + std::to_string(id) + " not in vocabulary");
  }
  return id_to_token_[static_cast<std::size_t>(id)];
}

std::optional<std::size_t> Vocabulary::merge_rank(const std::string& left, const std::string& right) const {
  auto it = merge_ranks_.find(pair_key(left, right));
  if (it == merge_ranks_.end()) return std::nullopt;
  return it->second;
}

std::vector<std::string> Vocabulary::segment(std::string_view word) const {
  std::vector<std::string> symbols = base_symbols(word);
  while (symbols.size() > 1) {
    std::optional<std::size_t> best;
    std::size_t best_pos = 0;
    for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
      auto rank = merge_rank(symbols[i], symbols[i + 1]);
      if (rank && (!best || *rank < *best)) {
        best = rank;
        best_pos = i;
      }
    }
    if (!best) break;
    symbols[best_pos] += symbols[best_pos + 1];
    symbols.erase(symbols.begin() + static_cast<std::ptrdiff_t>(best_pos) + 1);
  }
  return symbols;
}

void Vocabulary::write(std::ostream& out) const {
  out << kVocabTag << ' ' << kFormatVersion << '\n';
  out << "merges " << merges_.size() << '\n';
  for (const auto& [a, b] : merges_) out << a << ' ' << b << '\n';
  out << "tokens " << id_to_token_.size() << '\n';
  for (std::size_t i = 0; i < id_to_token_.size(); ++i) out << i << ' ' << id_to_token_[i] << '\n';
}

Vocabulary Vocabulary::read(std::istream& in) {
  std::string tag;
  int version = 0;
  in >> tag >> version;
  if (tag != kVocabTag) throw std::runtime_error("not a BPE vocabulary file");
  if (version != kFormatVersion) {
    throw std::runtime_error("unsupported vocabulary version " + std::to_string(version));
  }
  std::string section;
  std::size_t count = 0;
  in >> section >> count;
  if (section != "merges") throw std::runtime_error("vocabulary: expected merges section");
  Vocabulary v;
  for (std::size_t i = 0; i < count; ++i) {
    std::string a, b;
    if (!(in >> a >> b)) throw std::runtime_error("vocabulary: truncated merges");
    v.merge_ranks_.emplace(pair_key(a, b), v.merges_.size());
    v.merges_.emplace_back(std::move(a), std::move(b));
  }
  in >> section >> count;
  if (section != "tokens") throw std::runtime_error("vocabulary: expected tokens section");
  v.token_to_id_.clear();
  v.id_to_token_.clear();
  for (std::size_t i = 0; i < count; ++i) {
    std::size_t id = 0;
    std::string tok;
    if (!(in >> id >> tok)) throw std::runtime_error("vocabulary: truncated token table");
    if (id != i) throw std::runtime_error("vocabulary: token ids must be dense and ordered");
    v.token_to_id_.emplace(tok, static_cast<std::int32_t>(id));
    v.id_to_token_.push_back(std::move(tok));
  }
  for (std::int32_t s = 0; s < kNumSpecial; ++s) {
    if (v.id_to_token_.size() <= static_cast<std::size_t>(s) || v.id_to_token_[s] != kSpecialTokens[s]) {
      throw std::runtime_error("vocabulary: special tokens missing or misplaced");
    }
  }
  return v;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write(out);
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return read(in);
}

std::string Vocabulary::to_string() const {
  std::ostringstream out;
  write(out);
  return out.str();
}

Vocabulary train_bpe(std::span<const std::string> corpus, std::size_t vocab_size) {
  if (corpus.empty()) throw std::invalid_argument("train_bpe: empty corpus");

  std::map<std::string, std::size_t> word_counts;
  for (const auto& caption : corpus) {
    for (auto& w : split_whitespace(ascii_lower(caption))) ++word_counts[w];
  }
  if (word_counts.empty()) throw std::invalid_argument("train_bpe: corpus has no words");

  struct Word {
    std::vector<std::string> symbols;
    std::size_t count;
  };
  std::vector<Word> words;
  std::set<std::string> alphabet;
  for (const auto& [w, c] : word_counts) {
    for (const auto& ch : utf8_chars(w)) {
      alphabet.insert(ch);
      alphabet.insert(ch + std::string(kEndOfWord));
    }
    words.push_back(Word{base_symbols(w), c});
  }

  Vocabulary vocab;
  if (vocab_size < Vocabulary::kNumSpecial + alphabet.size()) {
    throw std::invalid_argument("train_bpe: vocab_size " + std::to_string(vocab_size) +
                                " is smaller than the base alphabet (" +
                                std::to_string(Vocabulary::kNumSpecial + alphabet.size()) + ")");
  }
  for (const auto& sym : alphabet) vocab.add_token(sym);

  while (vocab.size() < vocab_size) {
    std::map<std::pair<std::string, std::string>, std::size_t> pair_counts;
    for (const auto& w : words) {
      for (std::size_t i = 0; i + 1 < w.symbols.size(); ++i) {
        pair_counts[{w.symbols[i], w.symbols[i + 1]}] += w.count;
      }
    }
    // std::map iterates pairs in lexicographic order, so strict > keeps the smallest on ties.
    const std::pair<std::string, std::string>* best = nullptr;
    std::size_t best_count = 0;
    for (const auto& [pair, count] : pair_counts) {
      if (count > best_count) {
        best = &pair;
        best_count = count;
      }
    }
    if (best == nullptr || best_count < 2) break;

    const auto [left, right] = *best;
    const std::string merged = left + right;
    vocab.add_merge(left, right);
    for (auto& w : words) {
      std::vector<std::string> next;
      next.reserve(w.symbols.size());
      for (std::size_t i = 0; i < w.symbols.size(); ++i) {
        if (i + 1 < w.symbols.size() && w.symbols[i] == left && w.symbols[i + 1] == right) {
          next.push_back(merged);
          ++i;
        } else {
          next.push_back(w.symbols[i]);
        }
      }
      w.symbols = std::move(next);
    }
  }
  return vocab;
}

TokenizedCaption encode_words(std::span<const std::string> words, const Vocabulary& vocab,
                              const EncodeOptions& opts) {
  if (opts.max_length < 3) throw std::invalid_argument("encode: max_length must be at least 3");

  std::vector<std::int32_t> content;
  std::vector<std::int32_t> alignment;
  for (std::size_t w = 0; w < words.size(); ++w) {
    const std::string lowered = ascii_lower(words[w]);
    for (const auto& part : split_whitespace(lowered)) {
      for (const auto& sym : vocab.segment(part)) {
        content.push_back(vocab.id_of(sym).value_or(Vocabulary::kUnk));
        alignment.push_back(static_cast<std::int32_t>(w));
      }
    }
  }
  if (content.empty()) throw std::invalid_argument("encode: caption is empty");

  const std::size_t capacity = opts.max_length - 2;
  std::size_t begin = 0;
  std::size_t count = content.size();
  if (count > capacity) {
    if (opts.crop_seed) {
      std::mt19937_64 rng(*opts.crop_seed);
      std::uniform_int_distribution<std::size_t> start(0, count - capacity);
      begin = start(rng);
    }
    count = capacity;
  }

  TokenizedCaption tok;
  tok.ids.assign(opts.max_length, Vocabulary::kPad);
  tok.word_alignment.assign(opts.max_length, kNoWord);
  tok.ids[0] = Vocabulary::kSos;
  for (std::size_t i = 0; i < count; ++i) {
    tok.ids[i + 1] = content[begin + i];
    tok.word_alignment[i + 1] = alignment[begin + i];
  }
  tok.ids[count + 1] = Vocabulary::kEos;
  tok.valid_length = count + 2;
  return tok;
}

TokenizedCaption encode(std::string_view caption, const Vocabulary& vocab,
                        std::span<const TimedWord> timed_words, const EncodeOptions& opts) {
  std::vector<std::string> words;
  if (!timed_words.empty()) {
    words.reserve(timed_words.size());
    for (const auto& w : timed_words) words.push_back(w.text);
  } else {
    words = split_whitespace(caption);
  }
  return encode_words(words, vocab, opts);
}

std::string decode(std::span<const std::int32_t> ids, const Vocabulary& vocab) {
  std::string text;
  for (std::int32_t id : ids) {
    const std::string& tok = vocab.token_of(id);
    if (vocab.is_special(id)) continue;
    text += tok;
  }
  std::string out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const auto marker = text.find(kEndOfWord, pos);
    if (marker == std::string::npos) {
      out += text.substr(pos);
      break;
    }
    out += text.substr(pos, marker - pos);
    out += ' ';
    pos = marker + kEndOfWord.size();
  }
  while (!out.empty() && out.back() == ' ') out.pop_back();
  return out;
}

}  // namespace loctex
