#include "loctex/manifest.hpp"

#include <array>
#include <chrono>
#include <ctime>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#ifndef LOCTEX_GIT_DESCRIBE
#define LOCTEX_GIT_DESCRIBE "unknown"
#endif

namespace loctex {

std::string sha256_hex(std::string_view bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("SHA-256 digest failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xF]);
  }
  return out;
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return sha256_hex(buf.str());
}

std::string code_version() { return LOCTEX_GIT_DESCRIBE; }

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string RunManifest::to_json() const {
  nlohmann::json j{{"kind", kind},
                   {"config_hash", config_hash},
                   {"vocab_hash", vocab_hash},
                   {"dataset_fingerprint", dataset_fingerprint},
                   {"code_version", code_version},
                   {"seed", seed},
                   {"started_at", started_at},
                   {"finished_at", finished_at}};
  return j.dump(2);
}

RunManifest RunManifest::from_json(std::string_view text) {
  const auto j = nlohmann::json::parse(text);
  RunManifest m;
  m.kind = j.value("kind", "");
  m.config_hash = j.value("config_hash", "");
  m.vocab_hash = j.value("vocab_hash", "");
  m.dataset_fingerprint = j.value("dataset_fingerprint", "");
  m.code_version = j.value("code_version", "");
  m.seed = j.value("seed", std::uint64_t{0});
  m.started_at = j.value("started_at", "");
  m.finished_at = j.value("finished_at", "");
  return m;
}

void RunManifest::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << to_json() << '\n';
}

RunManifest RunManifest::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_json(buf.str());
}

}  // namespace loctex
