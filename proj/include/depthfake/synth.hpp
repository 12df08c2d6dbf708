#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <opencv2/core.hpp>

#include "depthfake/manifest.hpp"
#include "depthfake/preprocess.hpp"
#include "depthfake/train.hpp"
#include "depthfake/types.hpp"

namespace depthfake::synth {

// Plateau depth of a synthetic fake: the mean of the ellipsoid bump over the
// face ellipse (300 + 4700 * (1 - 2/3)), so real and fake share the mean face
// depth and differ only in shape.
inline constexpr double kFakePlateauMm = 300.0 + 4700.0 / 3.0;

// Depth-separable corpus: every frame is an RGB face patch drawn from one
// label-independent distribution; REAL frames carry the ellipsoid depth bump,
// FAKE frames a flat plateau. Even video indices are REAL, odd ones FAKE
// (manipulation NT).
struct SynthSpec {
  int videos = 200;
  int frames_per_video = 20;
  int size = 224;
  std::uint64_t seed = 0;
};

struct SynthFrame {
  cv::Mat rgb;      // size x size, CV_8UC3
  cv::Mat1b depth;  // size x size, normalized depth
  Label label = Label::Real;
};

SynthFrame render_frame(const SynthSpec& spec, int video, int frame);

// One record per frame; video ids "synth/real_000" / "synth/fake_001", ...
std::vector<FrameRecord> synth_records(const SynthSpec& spec);

// Frames rendered on access for the given records (from synth_records).
class SyntheticDataset final : public train::Dataset {
 public:
  SyntheticDataset(SynthSpec spec, ChannelConfig config, std::vector<FrameRecord> records);
  std::size_t size() const override { return records_.size(); }
  Label label(std::size_t i) const override { return records_[i].label; }
  preprocess::Provenance provenance(std::size_t i) const override;
  preprocess::InputStack get(std::size_t i) const override;
  ChannelConfig config() const override { return config_; }
  int stack_size() const override { return spec_.size; }

 private:
  SynthSpec spec_;
  ChannelConfig config_;
  std::vector<FrameRecord> records_;
};

// Writes a FaceForensics-style tree of PNG frames with a skin-toned elliptical
// face on a blue background:
//   original_sequences/youtube/raw/frames/<vid>/<idx>.png
//   manipulated_sequences/<Method>/raw/frames/<vid>/<idx>.png
// `videos_per_class` videos for ORIGINAL and each listed fake class.
struct FixtureSpec {
  int videos_per_class = 2;
  int frames_per_video = 3;
  int height = 256;
  int width = 320;
  std::vector<ManipulationClass> fake_classes = {ManipulationClass::DF};
  std::uint64_t seed = 0;
};

// Returns the face box drawn in each written frame, ORIGINAL first, then the
// fake classes in the listed order.
std::vector<FaceBox> write_fixture_dataset(const std::filesystem::path& root, const FixtureSpec& spec);

// Face geometry of fixture frame (video, frame) for a given class.
FaceBox fixture_face_box(const FixtureSpec& spec, ManipulationClass cls, int video, int frame);

}  // namespace depthfake::synth
