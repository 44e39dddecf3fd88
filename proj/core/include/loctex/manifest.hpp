#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace loctex {

/// Lowercase hex SHA-256 of a byte string.
std::string sha256_hex(std::string_view bytes);
/// Lowercase hex SHA-256 of a file's contents.
std::string sha256_file(const std::filesystem::path& path);

/// Version string of this build (git describe at configure time).
std::string code_version();

/// Provenance attached to every artifact a run produces.
struct RunManifest {
  std::string kind;  // e.g. "prepare-data", "train", "probe"
  std::string config_hash;
  std::string vocab_hash;
  std::string dataset_fingerprint;
  std::string code_version = loctex::code_version();
  std::uint64_t seed = 0;
  std::string started_at;   // ISO-8601 UTC
  std::string finished_at;  // ISO-8601 UTC

  std::string to_json() const;
  static RunManifest from_json(std::string_view text);

  void save(const std::filesystem::path& path) const;
  static RunManifest load(const std::filesystem::path& path);

  friend bool operator==(const RunManifest&, const RunManifest&) = default;
};

/// Current UTC time as YYYY-MM-DDTHH:MM:SSZ.
std::string utc_timestamp();

}  // namespace loctex
