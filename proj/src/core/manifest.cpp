#include "depthfake/manifest.hpp"

#include <cmath>
#include <fnmatch.h>

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <set>

#include <fmt/format.h>
#include <opencv2/imgcodecs.hpp>

#include "depthfake/errors.hpp"
#include "depthfake/random.hpp"

namespace fs = std::filesystem;

namespace depthfake {
namespace {

bool is_frame_image(const fs::path& p) {
  std::string ext = p.extension().string();
  std::ranges::transform(ext, ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp";
}

// Trailing digits of the file stem ("frame_0042" -> 42).
std::optional<std::int64_t> frame_number(const fs::path& p) {
  const std::string stem = p.stem().string();
  std::size_t end = stem.size();
  std::size_t begin = end;
  while (begin > 0 && std::isdigit(static_cast<unsigned char>(stem[begin - 1]))) --begin;
  if (begin == end || end - begin > 18) return std::nullopt;
  return std::stoll(stem.substr(begin, end - begin));
}

}  // namespace

std::optional<ManipulationClass> DatasetLayout::classify(const std::string& video_dir) const {
  for (const auto& rule : rules) {
    if (::fnmatch(rule.glob.c_str(), video_dir.c_str(), FNM_PATHNAME) == 0) {
      return rule.manipulation;
    }
  }
  return std::nullopt;
}

DatasetLayout DatasetLayout::faceforensics() {
  return DatasetLayout{{
      {"original_sequences/*/*/frames/*", ManipulationClass::Original},
      {"manipulated_sequences/Deepfakes/*/frames/*", ManipulationClass::DF},
      {"manipulated_sequences/Face2Face/*/frames/*", ManipulationClass::F2F},
      {"manipulated_sequences/FaceSwap/*/frames/*", ManipulationClass::FS},
      {"manipulated_sequences/NeuralTextures/*/frames/*", ManipulationClass::NT},
  }};
}

void to_json(nlohmann::json& j, const DatasetLayout& l) {
  j = nlohmann::json::object();
  auto& rules = j["rules"] = nlohmann::json::array();
  for (const auto& r : l.rules) {
    rules.push_back({{"glob", r.glob},
                     {"manipulation", to_string(r.manipulation)},
                     {"label", to_string(label_for(r.manipulation))}});
  }
}

void from_json(const nlohmann::json& j, DatasetLayout& l) {
  l.rules.clear();
  for (const auto& r : j.at("rules")) {
    LayoutRule rule;
    rule.glob = r.at("glob").get<std::string>();
    rule.manipulation = parse_manipulation(r.at("manipulation").get<std::string>());
    if (r.contains("label")) {
      const Label given = parse_label(r.at("label").get<std::string>());
      if (given != label_for(rule.manipulation)) {
        throw ConfigError(fmt::format("layout rule '{}': label {} contradicts manipulation {}",
                                      rule.glob, to_string(given), to_string(rule.manipulation)));
      }
    }
    l.rules.push_back(std::move(rule));
  }
}

DatasetLayout DatasetLayout::load(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw MissingResource(fmt::format("cannot open dataset layout '{}'", file.string()));
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("dataset layout '{}': {}", file.string(), e.what()));
  }
  return j.get<DatasetLayout>();
}

void DatasetLayout::save(const fs::path& file) const {
  std::ofstream out(file);
  if (!out) throw Error(fmt::format("cannot write dataset layout '{}'", file.string()));
  out << nlohmann::json(*this).dump(2) << '\n';
}

ManifestLoad load_manifest(const fs::path& root, const DatasetLayout& layout) {
  if (!fs::is_directory(root)) {
    throw MissingResource(fmt::format("dataset root '{}' does not exist", root.string()));
  }
  ManifestLoad result;
  std::vector<fs::path> images;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (entry.is_regular_file() && is_frame_image(entry.path())) images.push_back(entry.path());
  }
  std::ranges::sort(images);

  std::map<std::string, std::int64_t> next_unnumbered;
  std::set<std::pair<std::string, std::int64_t>> seen;
  for (const auto& image : images) {
    const std::string video_dir = fs::relative(image.parent_path(), root).generic_string();
    const auto cls = layout.classify(video_dir);
    if (!cls) continue;

    // Decoding is the only reliable way to catch truncated files.
    if (cv::imread(image.string(), cv::IMREAD_UNCHANGED).empty()) {
      ++result.warnings;
      result.messages.push_back(fmt::format("unreadable frame '{}'", image.string()));
      continue;
    }
    const auto number = frame_number(image);
    const std::int64_t index = number ? *number : next_unnumbered[video_dir]++;
    if (!seen.emplace(video_dir, index).second) {
      ++result.warnings;
      result.messages.push_back(
          fmt::format("duplicate frame index {} in '{}' ('{}')", index, video_dir, image.string()));
      continue;
    }
    result.records.push_back(FrameRecord{video_dir, index, image, label_for(*cls), *cls,
                                         Split::Unassigned});
  }
  std::ranges::sort(result.records, [](const FrameRecord& a, const FrameRecord& b) {
    return std::tie(a.video_id, a.frame_index) < std::tie(b.video_id, b.frame_index);
  });
  return result;
}

void write_manifest(const fs::path& file, const std::vector<FrameRecord>& records) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary);
  if (!out) throw Error(fmt::format("cannot write manifest '{}'", file.string()));
  for (const auto& r : records) out << nlohmann::json(r).dump() << '\n';
}

std::vector<FrameRecord> read_manifest(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw MissingResource(fmt::format("cannot open manifest '{}'", file.string()));
  std::vector<FrameRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      records.push_back(nlohmann::json::parse(line).get<FrameRecord>());
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(fmt::format("{}:{}: {}", file.string(), line_no, e.what()));
    }
  }
  return records;
}

std::vector<FrameRecord> assign_splits(std::vector<FrameRecord> records,
                                       const SplitFractions& fractions, std::uint64_t seed) {
  const double total = fractions.train + fractions.val + fractions.test;
  if (std::abs(total - 1.0) > 1e-9) {
    throw ConfigError(fmt::format("split fractions sum to {}, expected 1", total));
  }
  if (fractions.train < 0 || fractions.val < 0 || fractions.test < 0) {
    throw ConfigError("split fractions must be non-negative");
  }

  struct VideoInfo {
    Label label;
    ManipulationClass manipulation;
  };
  std::map<std::string, VideoInfo> videos;
  for (const auto& r : records) {
    auto [it, inserted] = videos.try_emplace(r.video_id, VideoInfo{r.label, r.manipulation});
    if (!inserted && (it->second.label != r.label || it->second.manipulation != r.manipulation)) {
      throw ConfigError(fmt::format("video '{}' mixes labels or manipulation classes", r.video_id));
    }
  }

  std::map<ManipulationClass, std::vector<std::string>> by_class;
  for (const auto& [id, info] : videos) by_class[info.manipulation].push_back(id);

  std::mt19937_64 rng(derive_seed(seed, 0x5e1177ULL));
  std::map<std::string, Split> assignment;
  for (auto& [cls, ids] : by_class) {
    portable_shuffle(std::span(ids), rng);
    const auto n = ids.size();
    const auto n_test = static_cast<std::size_t>(std::floor(n * fractions.test + 1e-9));
    const auto n_val = static_cast<std::size_t>(std::floor(n * fractions.val + 1e-9));
    for (std::size_t i = 0; i < n; ++i) {
      assignment[ids[i]] = i < n_test ? Split::Test : (i < n_test + n_val ? Split::Val : Split::Train);
    }
  }
  for (auto& r : records) r.split = assignment.at(r.video_id);
  return records;
}

std::vector<FrameRecord> filter_split(const std::vector<FrameRecord>& records, Split split) {
  std::vector<FrameRecord> out;
  std::ranges::copy_if(records, std::back_inserter(out),
                       [&](const FrameRecord& r) { return r.split == split; });
  return out;
}

}  // namespace depthfake
