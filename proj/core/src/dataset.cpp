#include "loctex/dataset.hpp"

#include "loctex/image.hpp"

namespace loctex {

PreparedDataset::PreparedDataset(const std::filesystem::path& dir) : dir_(dir) {
  if (!std::filesystem::is_directory(dir)) throw std::runtime_error("dataset directory not found: " + dir.string());
  index_ = DatasetIndex::load(dir / layout::kIndex);
  vocab_ = Vocabulary::load(dir / layout::kVocab);
}

std::filesystem::path PreparedDataset::resolve(const std::string& p) const {
  const std::filesystem::path path(p);
  return path.is_absolute() ? path : dir_ / path;
}

TrainingSample PreparedDataset::get(std::size_t index) const {
  const IndexEntry& e = index_.entries.at(index);
  TrainingSample s;
  s.id = e.image_id;
  s.narrative = read_narrative_at(resolve(index_.annotations_path), e.offset);
  s.image = load_image_rgb(resolve(e.image_path));
  return s;
}

}  // namespace loctex
