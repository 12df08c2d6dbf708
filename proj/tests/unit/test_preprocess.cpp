#include <cmath>
#include <random>

#include <opencv2/imgproc.hpp>

#include "doctest.h"
#include "unit/support.hpp"

#include "depthfake/depth.hpp"
#include "depthfake/errors.hpp"
#include "depthfake/preprocess.hpp"
#include "depthfake/random.hpp"

using namespace depthfake;
using namespace depthfake::preprocess;
using depthfake::testing::TempDir;

namespace {

FaceBox box_centered_at(int row, int col, int h = 101, int w = 101) {
  return FaceBox{col - (w - 1) / 2, row - (h - 1) / 2, w, h};
}

// Pixel (y, x) holds (x mod 256, y mod 256, (x + y) mod 256).
cv::Mat coordinate_frame(int h, int w) {
  cv::Mat m(h, w, CV_8UC3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) m.at<cv::Vec3b>(y, x) = cv::Vec3b(x & 0xff, y & 0xff, (x + y) & 0xff);
  }
  return m;
}

InputStack random_stack(ChannelConfig config, int size, std::uint64_t seed) {
  InputStack s;
  s.size = size;
  s.config = config;
  s.data.resize(static_cast<std::size_t>(size) * size * s.channels());
  std::mt19937_64 rng(seed);
  for (auto& v : s.data) v = static_cast<float>(uniform_below(rng, 256));
  return s;
}

}  // namespace

TEST_CASE("crop window on a 1080x1920 frame") {
  const auto w = crop_window(1080, 1920, box_centered_at(540, 960), 224);
  CHECK(w.top == 428);
  CHECK(w.bottom() == 651);
  CHECK(w.left == 848);
  CHECK(w.right() == 1071);
}

TEST_CASE("crop window is shifted inside the frame, never scaled") {
  const auto w = crop_window(480, 640, box_centered_at(240, 10, 21, 21), 224);
  CHECK(w.left == 0);
  CHECK(w.size == 224);
  const auto e = crop_window(480, 640, box_centered_at(470, 635, 21, 9), 224);
  CHECK(e.bottom() == 479);
  CHECK(e.right() == 639);
}

TEST_CASE("frames smaller than the crop are rejected") {
  CHECK_THROWS_AS(crop_window(200, 200, box_centered_at(100, 100, 51, 51), 224), UpstreamTooSmall);
  CHECK_THROWS_AS(crop_window(300, 200, box_centered_at(100, 100, 51, 51), 224), UpstreamTooSmall);
}

TEST_CASE("crop_face_patch copies the window pixels") {
  const cv::Mat frame = coordinate_frame(480, 640);
  const auto patch = crop_face_patch(frame, box_centered_at(200, 300), 224);
  REQUIRE(patch.rows == 224);
  REQUIRE(patch.cols == 224);
  const auto w = crop_window(480, 640, box_centered_at(200, 300), 224);
  CHECK(patch.at<cv::Vec3b>(0, 0) == frame.at<cv::Vec3b>(w.top, w.left));
  CHECK(patch.at<cv::Vec3b>(223, 223) == frame.at<cv::Vec3b>(w.bottom(), w.right()));
}

TEST_CASE("luma examples") {
  CHECK(luma(255, 255, 255) == 255);
  CHECK(luma(255, 0, 0) == 76);
  CHECK(luma(0, 0, 0) == 0);
}

TEST_CASE("luma matches exact integer rounding on every color") {
  for (int r = 0; r < 256; ++r) {
    for (int g = 0; g < 256; ++g) {
      for (int b = 0; b < 256; ++b) {
        const int expected = (299 * r + 587 * g + 114 * b + 500) / 1000;
        if (luma(r, g, b) != expected) {
          FAIL("luma(" << r << "," << g << "," << b << ") = " << int(luma(r, g, b)) << ", expected " << expected);
        }
      }
    }
  }
  for (int v = 0; v < 256; ++v) CHECK(luma(v, v, v) == v);
}

TEST_CASE("stack_channels ordering") {
  const cv::Mat rgb = testing::random_rgb(224, 224, 4);
  cv::Mat1b depth(224, 224);
  cv::randu(depth, 0, 256);
  const cv::Mat1b gray = to_grayscale(rgb);

  const auto rgbd = stack_channels(rgb, depth, ChannelConfig::RGBD, {"v", 3});
  REQUIRE(rgbd.data.size() == 224u * 224u * 4u);
  CHECK(rgbd.provenance == Provenance{"v", 3});
  const auto grayd = stack_channels(rgb, depth, ChannelConfig::GrayD);
  REQUIRE(grayd.data.size() == 224u * 224u * 2u);
  const auto rgb3 = stack_channels(rgb, cv::Mat(), ChannelConfig::RGB);
  const auto gray1 = stack_channels(rgb, cv::Mat(), ChannelConfig::Gray);
  for (int i = 0; i < 224; i += 7) {
    for (int j = 0; j < 224; j += 5) {
      const auto px = rgb.at<cv::Vec3b>(i, j);
      for (int c = 0; c < 3; ++c) {
        CHECK(rgbd.at(i, j, c) == px[c]);
        CHECK(rgb3.at(i, j, c) == px[c]);
      }
      CHECK(rgbd.at(i, j, 3) == depth(i, j));
      CHECK(grayd.at(i, j, 0) == gray(i, j));
      CHECK(grayd.at(i, j, 1) == depth(i, j));
      CHECK(gray1.at(i, j, 0) == gray(i, j));
    }
  }
}

TEST_CASE("stack_channels enforces the depth contract") {
  const cv::Mat rgb = testing::random_rgb(32, 32, 1);
  const cv::Mat1b depth(32, 32, uchar(7));
  CHECK_THROWS_AS(stack_channels(rgb, depth, ChannelConfig::RGB), ShapeError);
  CHECK_THROWS_AS(stack_channels(rgb, depth, ChannelConfig::Gray), ShapeError);
  CHECK_THROWS_AS(stack_channels(rgb, cv::Mat(), ChannelConfig::RGBD), ShapeError);
  CHECK_THROWS_AS(stack_channels(rgb, cv::Mat1b(16, 16), ChannelConfig::GrayD), ShapeError);
}

// RGB values live in [0, 100] and depth in [200, 255]; nothing may cross over.
TEST_CASE("stack_channels never mixes color and depth data") {
  cv::Mat rgb(64, 64, CV_8UC3);
  cv::randu(rgb, 0, 101);
  cv::Mat1b depth(64, 64);
  cv::randu(depth, 200, 256);
  for (auto config : {ChannelConfig::RGBD, ChannelConfig::GrayD}) {
    const auto s = stack_channels(rgb, depth, config);
    const int c = s.channels();
    for (int i = 0; i < 64; ++i) {
      for (int j = 0; j < 64; ++j) {
        for (int k = 0; k < c - 1; ++k) REQUIRE(s.at(i, j, k) <= 100.0f);
        REQUIRE(s.at(i, j, c - 1) >= 200.0f);
      }
    }
  }
}

TEST_CASE("align_depth_crop on constant and background maps") {
  const depth::DepthMap far(240, 320, 5000.0f);
  const auto w = crop_window(480, 640, box_centered_at(100, 500), 224);
  const auto patch = align_depth_crop(far, 480, 640, w);
  CHECK(cv::countNonZero(patch != 255) == 0);

  // Face in the left half, window in the right half.
  const auto face_map = depth::synthetic_face_depth(FaceBox{40, 100, 120, 160}, 480, 640);
  const auto outside = align_depth_crop(face_map, 480, 640, CropWindow{128, 400, 224});
  CHECK(cv::countNonZero(outside != 255) == 0);
}

TEST_CASE("align_depth_crop centered on the oracle face bottoms out at 15") {
  const FaceBox face{240, 140, 161, 201};  // center (row 240, col 320)
  const auto map = depth::synthetic_face_depth(face, 480, 640);
  const auto w = crop_window(480, 640, face, 224);
  REQUIRE(w.top == 128);
  REQUIRE(w.left == 208);
  const auto patch = align_depth_crop(map, 480, 640, w);
  double lo, hi;
  cv::minMaxLoc(patch, &lo, &hi);
  CHECK(patch(112, 112) == 15);
  CHECK(lo == 15);
  CHECK(hi == 255);
}

// The depth map is linear in frame x (or y) with slope 5000/255 mm per pixel,
// so the normalized depth at patch (i, j) spells out the source column (row)
// offset. Bilinear interpolation is exact on linear data, so any misalignment
// with the RGB crop shows up as a mismatch.
TEST_CASE("property: RGB and depth patches come from the same frame pixels") {
  const cv::Mat frame = coordinate_frame(480, 640);
  const double k = 5000.0 / 255.0;
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    const int top = 20 + static_cast<int>(uniform_below(rng, 480 - 224 - 40));
    const int left = 20 + static_cast<int>(uniform_below(rng, 640 - 224 - 40));
    const CropWindow w{top, left, 224};
    cv::Mat1f by_col(240, 320), by_row(240, 320);
    for (int r = 0; r < 240; ++r) {
      for (int c = 0; c < 320; ++c) {
        const double x = 2.0 * c + 0.5, y = 2.0 * r + 0.5;
        by_col(r, c) = static_cast<float>(std::clamp(k * (x - left + 8), 0.0, 5000.0));
        by_row(r, c) = static_cast<float>(std::clamp(k * (y - top + 8), 0.0, 5000.0));
      }
    }
    const auto dcol = align_depth_crop(depth::DepthMap::from_mat(by_col), 480, 640, w);
    const auto drow = align_depth_crop(depth::DepthMap::from_mat(by_row), 480, 640, w);
    const auto rgb = crop_face_patch(frame, w);
    for (int i = 0; i < 224; ++i) {
      for (int j = 0; j < 224; ++j) {
        const auto px = rgb.at<cv::Vec3b>(i, j);
        REQUIRE(dcol(i, j) == ((px[0] - left + 256) & 0xff) + 8);
        REQUIRE(drow(i, j) == ((px[1] - top + 256) & 0xff) + 8);
      }
    }
  }
}

TEST_CASE("flip is an involution") {
  const auto s = random_stack(ChannelConfig::RGBD, 224, 1);
  const AugmentParams flip{true, 0.0};
  const auto once = apply_augment(s, flip);
  CHECK(once.data != s.data);
  CHECK(once.at(10, 0, 2) == s.at(10, 223, 2));
  CHECK(apply_augment(once, flip).data == s.data);
}

TEST_CASE("zero rotation is bit-exact identity") {
  const auto s = random_stack(ChannelConfig::GrayD, 224, 2);
  CHECK(apply_augment(s, AugmentParams{false, 0.0}).data == s.data);
}

TEST_CASE("a landmark moves to the same place in every channel") {
  std::mt19937_64 rng(23);
  for (auto config : {ChannelConfig::RGBD, ChannelConfig::GrayD, ChannelConfig::RGB}) {
    for (int trial = 0; trial < 10; ++trial) {
      InputStack s;
      s.size = 224;
      s.config = config;
      s.data.assign(224u * 224u * s.channels(), 0.0f);
      const int y = 40 + static_cast<int>(uniform_below(rng, 144));
      const int x = 40 + static_cast<int>(uniform_below(rng, 144));
      for (int c = 0; c < s.channels(); ++c) s.at(y, x, c) = 255.0f;
      const auto out = apply_augment(s, sample_augment(rng, 10.0));
      std::vector<std::pair<int, int>> peaks;
      for (int c = 0; c < s.channels(); ++c) {
        float best = -1;
        std::pair<int, int> at;
        for (int i = 0; i < 224; ++i) {
          for (int j = 0; j < 224; ++j) {
            if (out.at(i, j, c) > best) {
              best = out.at(i, j, c);
              at = {i, j};
            }
          }
        }
        CHECK(best > 0.0f);
        peaks.push_back(at);
      }
      for (const auto& p : peaks) CHECK(p == peaks.front());
    }
  }
}

TEST_CASE("property: augment keeps shape, config and range") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 40; ++trial) {
    const auto config = kAllChannelConfigs[trial % 4];
    auto s = random_stack(config, 64, rng());
    s.provenance = {"vid", trial};
    const auto out = augment(s, rng, 10.0);
    CHECK(out.size == s.size);
    CHECK(out.config == s.config);
    CHECK(out.provenance == s.provenance);
    CHECK_NOTHROW(out.validate());
  }
}

TEST_CASE("sampled augment parameters cover the configured range") {
  std::mt19937_64 rng(8);
  int flips = 0;
  double lo = 0, hi = 0;
  for (int i = 0; i < 4000; ++i) {
    const auto p = sample_augment(rng, 10.0);
    flips += p.flip;
    lo = std::min(lo, p.angle_deg);
    hi = std::max(hi, p.angle_deg);
    REQUIRE(std::abs(p.angle_deg) <= 10.0);
  }
  CHECK(flips > 1800);
  CHECK(flips < 2200);
  CHECK(lo < -9.9);
  CHECK(hi > 9.9);
}

TEST_CASE("extract_patches runs the full frame pipeline") {
  cv::Mat frame(480, 640, CV_8UC3, cv::Scalar(40, 90, 160));
  const FaceBox face{240, 140, 161, 201};
  cv::ellipse(frame, cv::Point2d(face.center_x(), face.center_y()), cv::Size2d(80, 100), 0, 0, 360,
              cv::Scalar(220, 165, 135), cv::FILLED);
  SkinToneDetector detector;
  depth::SyntheticDepthOracle oracle(std::make_unique<SkinToneDetector>());
  depth::DepthMap full;
  const auto p = extract_patches(frame, detector, oracle, {}, nullptr, &full);
  CHECK(p.rgb.rows == 224);
  CHECK(p.depth.rows == 224);
  CHECK(std::abs(p.box.center_x() - face.center_x()) <= 2);
  CHECK(full.height() == 240);
  CHECK(p.depth(112, 112) <= 16);
  CHECK(p.upscale == 1.0);

  // Reusing the stored map gives identical patches.
  const auto again = extract_patches(frame, detector, oracle, {}, &full);
  CHECK(cv::countNonZero(again.depth != p.depth) == 0);

  cv::Mat small;
  cv::resize(frame, small, cv::Size(200, 150));
  CHECK_THROWS_AS(extract_patches(small, detector, oracle, {}), UpstreamTooSmall);
  const auto up = extract_patches(small, detector, oracle, {224, true});
  CHECK(up.upscale > 1.0);
  CHECK(up.rgb.rows == 224);

  const cv::Mat blank(480, 640, CV_8UC3, cv::Scalar(40, 90, 160));
  CHECK_THROWS_AS(extract_patches(blank, detector, oracle, {}), NoFace);
}

TEST_CASE("patch cache round trip") {
  TempDir dir("cache");
  PatchCache cache(dir.path());
  auto s = random_stack(ChannelConfig::RGBD, 32, 5);
  s.provenance = {"manipulated_sequences/Deepfakes/raw/frames/000_003", 12};
  CHECK_FALSE(cache.contains(ChannelConfig::RGBD, s.provenance));
  cache.store(s);
  CHECK(cache.contains(ChannelConfig::RGBD, s.provenance));
  CHECK_FALSE(cache.contains(ChannelConfig::RGB, s.provenance));
  const auto back = cache.load(ChannelConfig::RGBD, s.provenance);
  CHECK(back.data == s.data);
  CHECK(back.provenance == s.provenance);
  CHECK(cache.stack_path(ChannelConfig::RGBD, s.provenance).string().find("noaug") != std::string::npos);
  CHECK(PatchCache::key(s.provenance).find('/') == std::string::npos);
  CHECK_FALSE(cache.find(ChannelConfig::Gray, s.provenance).has_value());

  auto fractional = s;
  fractional.data[0] = 0.5f;
  CHECK_THROWS_AS(cache.store(fractional), NumericError);

  const auto map = depth::synthetic_face_depth(FaceBox{100, 100, 50, 60}, 480, 640);
  cache.store_depth(s.provenance, map);
  CHECK(cache.has_depth(s.provenance));
  CHECK(cache.load_depth(s.provenance).height() == 240);
}
