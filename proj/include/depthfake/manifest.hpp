#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "depthfake/types.hpp"

namespace depthfake {

// One rule of a dataset layout: video directories whose path relative to
// the dataset root matches `glob` (fnmatch syntax, '/' only matched
// literally) belong to `manipulation`.
struct LayoutRule {
  std::string glob;
  ManipulationClass manipulation = ManipulationClass::Original;
};

// Maps the directory tree of a dataset onto manipulation classes. Rules are
// tried in order; the first match wins.
struct DatasetLayout {
  std::vector<LayoutRule> rules;

  std::optional<ManipulationClass> classify(const std::string& video_dir) const;

  // FaceForensics++-style layout with extracted frames under
  // <root>/<sequences>/<method>/<compression>/frames/<video>/<n>.png.
  static DatasetLayout faceforensics();
  static DatasetLayout load(const std::filesystem::path& file);
  void save(const std::filesystem::path& file) const;
};

void to_json(nlohmann::json& j, const DatasetLayout& l);
void from_json(const nlohmann::json& j, DatasetLayout& l);

struct ManifestLoad {
  std::vector<FrameRecord> records;
  std::size_t warnings = 0;
  std::vector<std::string> messages;
};

// Walks `root`, turning every decodable frame image inside a video
// directory matched by `layout` into a FrameRecord. The video id is the
// video directory path relative to root. Records are sorted by
// (video_id, frame_index); split is left Unassigned.
ManifestLoad load_manifest(const std::filesystem::path& root, const DatasetLayout& layout);

// Line-delimited JSON, one record per line.
void write_manifest(const std::filesystem::path& file, const std::vector<FrameRecord>& records);
std::vector<FrameRecord> read_manifest(const std::filesystem::path& file);

struct SplitFractions {
  double train = 0.90;
  double val = 0.05;
  double test = 0.05;
};

// Assigns TRAIN/VAL/TEST per video, stratified by manipulation class. Each
// class receives floor(n * val) VAL and floor(n * test) TEST videos, the
// rest go to TRAIN. Deterministic in (records, fractions, seed).
std::vector<FrameRecord> assign_splits(std::vector<FrameRecord> records,
                                       const SplitFractions& fractions, std::uint64_t seed);

std::vector<FrameRecord> filter_split(const std::vector<FrameRecord>& records, Split split);

}  // namespace depthfake
