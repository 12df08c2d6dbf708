#include "depthfake/synth.hpp"

#include <cmath>
#include <random>

#include <fmt/format.h>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "depthfake/depth.hpp"
#include "depthfake/errors.hpp"
#include "depthfake/random.hpp"

namespace fs = std::filesystem;

namespace depthfake::synth {
namespace {

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform_unit(rng);
}

// Approximately normal noise from the portable uniform generator.
double noise(std::mt19937_64& rng) {
  double s = 0.0;
  for (int i = 0; i < 4; ++i) s += uniform_unit(rng);
  return (s - 2.0) * std::sqrt(3.0);
}

std::uint8_t to_u8(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

std::string method_dir(ManipulationClass c) {
  switch (c) {
    case ManipulationClass::DF: return "Deepfakes";
    case ManipulationClass::F2F: return "Face2Face";
    case ManipulationClass::FS: return "FaceSwap";
    case ManipulationClass::NT: return "NeuralTextures";
    case ManipulationClass::Original: break;
  }
  throw ConfigError("ORIGINAL is not a manipulation method");
}

}  // namespace

SynthFrame render_frame(const SynthSpec& spec, int video, int frame) {
  std::mt19937_64 rng(derive_seed(spec.seed, 0x5e7f, static_cast<std::uint64_t>(video),
                                  static_cast<std::uint64_t>(frame)));
  const int n = spec.size;
  const double jitter = n * 0.05;
  const double cy = (n - 1) / 2.0 + uniform(rng, -jitter, jitter);
  const double cx = (n - 1) / 2.0 + uniform(rng, -jitter, jitter);
  const double ax = n * uniform(rng, 0.27, 0.40);
  const double ay = n * uniform(rng, 0.33, 0.46);
  const cv::Vec3d skin(uniform(rng, 170, 230), uniform(rng, 115, 170), uniform(rng, 85, 140));
  const cv::Vec3d back(uniform(rng, 20, 120), uniform(rng, 40, 140), uniform(rng, 90, 200));
  const double light = uniform(rng, -0.25, 0.25);  // horizontal shading gradient

  SynthFrame out;
  out.label = video % 2 == 0 ? Label::Real : Label::Fake;
  out.rgb.create(n, n, CV_8UC3);
  out.depth.create(n, n);
  for (int r = 0; r < n; ++r) {
    auto* px = out.rgb.ptr<cv::Vec3b>(r);
    auto* d = out.depth.ptr<std::uint8_t>(r);
    for (int c = 0; c < n; ++c) {
      const double dy = (r - cy) / ay;
      const double dx = (c - cx) / ax;
      const double rho2 = dx * dx + dy * dy;
      const bool face = rho2 < 1.0;
      const double shade = face ? 1.0 + light * dx : 1.0;
      const cv::Vec3d& base = face ? skin : back;
      for (int k = 0; k < 3; ++k) px[c][k] = to_u8(base[k] * shade + 8.0 * noise(rng));
      double mm = depth::kMaxDepthMm;
      if (face) {
        mm = out.label == Label::Real ? depth::ellipsoid_depth_mm(std::sqrt(1.0 - rho2))
                                      : kFakePlateauMm;
      }
      d[c] = depth::normalize_depth_value(mm);
    }
  }
  return out;
}

std::vector<FrameRecord> synth_records(const SynthSpec& spec) {
  std::vector<FrameRecord> out;
  for (int v = 0; v < spec.videos; ++v) {
    const bool real = v % 2 == 0;
    for (int f = 0; f < spec.frames_per_video; ++f) {
      FrameRecord r;
      r.video_id = fmt::format("synth/{}_{:03d}", real ? "real" : "fake", v);
      r.frame_index = f;
      r.image_path = fmt::format("synth://{}/{}", v, f);
      r.label = real ? Label::Real : Label::Fake;
      r.manipulation = real ? ManipulationClass::Original : ManipulationClass::NT;
      out.push_back(std::move(r));
    }
  }
  return out;
}

SyntheticDataset::SyntheticDataset(SynthSpec spec, ChannelConfig config, std::vector<FrameRecord> records)
    : spec_(spec), config_(config), records_(std::move(records)) {}

preprocess::Provenance SyntheticDataset::provenance(std::size_t i) const {
  return {records_[i].video_id, records_[i].frame_index};
}

preprocess::InputStack SyntheticDataset::get(std::size_t i) const {
  const auto& r = records_[i];
  const int video = std::stoi(r.video_id.substr(r.video_id.size() - 3));
  const auto f = render_frame(spec_, video, static_cast<int>(r.frame_index));
  return preprocess::stack_channels(f.rgb, has_depth(config_) ? cv::Mat(f.depth) : cv::Mat(),
                                    config_, provenance(i));
}

FaceBox fixture_face_box(const FixtureSpec& spec, ManipulationClass cls, int video, int frame) {
  std::mt19937_64 rng(derive_seed(spec.seed, 0xf1c7, static_cast<std::uint64_t>(cls),
                                  static_cast<std::uint64_t>(video), static_cast<std::uint64_t>(frame)));
  const int w = static_cast<int>(spec.width * uniform(rng, 0.25, 0.35));
  const int h = static_cast<int>(spec.height * uniform(rng, 0.40, 0.50));
  FaceBox b;
  b.width = w;
  b.height = h;
  b.x = static_cast<int>(uniform(rng, 0.1, 0.9) * (spec.width - w));
  b.y = static_cast<int>(uniform(rng, 0.1, 0.9) * (spec.height - h));
  return b;
}

std::vector<FaceBox> write_fixture_dataset(const fs::path& root, const FixtureSpec& spec) {
  std::vector<std::pair<ManipulationClass, fs::path>> classes = {
      {ManipulationClass::Original, root / "original_sequences" / "youtube" / "raw" / "frames"}};
  for (auto c : spec.fake_classes) {
    classes.emplace_back(c, root / "manipulated_sequences" / method_dir(c) / "raw" / "frames");
  }
  std::vector<FaceBox> boxes;
  for (const auto& [cls, dir] : classes) {
    for (int v = 0; v < spec.videos_per_class; ++v) {
      const fs::path vdir = dir / fmt::format("{:03d}", v);
      fs::create_directories(vdir);
      for (int f = 0; f < spec.frames_per_video; ++f) {
        std::mt19937_64 rng(derive_seed(spec.seed, 0xf1c8, static_cast<std::uint64_t>(cls),
                                        static_cast<std::uint64_t>(v), static_cast<std::uint64_t>(f)));
        const FaceBox box = fixture_face_box(spec, cls, v, f);
        // Blue background, far from the skin range in YCrCb.
        cv::Mat rgb(spec.height, spec.width, CV_8UC3, cv::Scalar(40, 90, 160));
        cv::RNG noise_rng(static_cast<std::uint64_t>(rng()));
        cv::Mat jitter(rgb.size(), CV_8UC3);
        noise_rng.fill(jitter, cv::RNG::UNIFORM, cv::Scalar::all(0), cv::Scalar::all(12));
        rgb += jitter;
        const cv::Scalar skin(uniform(rng, 205, 230), uniform(rng, 155, 175), uniform(rng, 125, 145));
        cv::ellipse(rgb,
                    cv::Point2d(box.center_x(), box.center_y()),
                    cv::Size2d((box.width - 1) / 2.0, (box.height - 1) / 2.0), 0.0, 0.0, 360.0,
                    skin, cv::FILLED, cv::LINE_8);
        cv::Mat bgr;
        cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
        const fs::path file = vdir / fmt::format("{:04d}.png", f);
        if (!cv::imwrite(file.string(), bgr)) {
          throw Error(fmt::format("cannot write fixture frame '{}'", file.string()));
        }
        boxes.push_back(box);
      }
    }
  }
  return boxes;
}

}  // namespace depthfake::synth
