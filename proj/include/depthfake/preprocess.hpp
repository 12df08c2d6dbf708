#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "depthfake/depth.hpp"
#include "depthfake/face.hpp"
#include "depthfake/types.hpp"

namespace depthfake::preprocess {

// Square crop in frame pixel coordinates; rows top..top+size-1.
struct CropWindow {
  int top = 0;
  int left = 0;
  int size = 0;

  int bottom() const { return top + size - 1; }
  int right() const { return left + size - 1; }
  cv::Rect rect() const { return {left, top, size, size}; }
  bool operator==(const CropWindow&) const = default;
};

// Window of `crop` pixels centered on the box center, shifted (never scaled)
// to lie inside the frame. Throws UpstreamTooSmall when the frame is smaller
// than the crop.
CropWindow crop_window(int frame_height, int frame_width, const FaceBox& box, int crop);

// Copy of the frame pixels inside the window (any channel count).
cv::Mat crop_face_patch(const cv::Mat& frame, const CropWindow& window);
cv::Mat crop_face_patch(const cv::Mat& frame, const FaceBox& box, int crop);

// Depth for the same frame pixels as the RGB crop: the map is sampled
// bilinearly at each window pixel's frame coordinate, then normalized to
// 0..255.
cv::Mat1b align_depth_crop(const depth::DepthMap& map, int frame_height, int frame_width,
                           const CropWindow& window);

// BT.601 luma, 0.299 R + 0.587 G + 0.114 B, rounded half away from zero.
std::uint8_t luma(std::uint8_t r, std::uint8_t g, std::uint8_t b);
cv::Mat1b to_grayscale(const cv::Mat& rgb);

struct Provenance {
  std::string video_id;
  std::int64_t frame_index = 0;
  bool operator==(const Provenance&) const = default;
};

// size x size x C values in [0, 255], HWC order.
struct InputStack {
  int size = 0;
  ChannelConfig config = ChannelConfig::RGB;
  Provenance provenance;
  std::vector<float> data;

  int channels() const { return channel_count(config); }
  float at(int row, int col, int ch) const {
    return data[(static_cast<std::size_t>(row) * size + col) * channels() + ch];
  }
  float& at(int row, int col, int ch) {
    return data[(static_cast<std::size_t>(row) * size + col) * channels() + ch];
  }
  // Throws ShapeError / NumericError on a broken stack.
  void validate() const;
};

// Channel order: RGB -> [R,G,B], RGBD -> [R,G,B,D], GRAY -> [Y], GRAYD -> [Y,D].
// `depth_patch` must be empty exactly when the config has no depth channel.
InputStack stack_channels(const cv::Mat& rgb_patch, const cv::Mat& depth_patch,
                          ChannelConfig config, Provenance provenance = {});

struct AugmentParams {
  bool flip = false;
  double angle_deg = 0.0;
};

// Flip with probability 0.5, angle uniform in [-max_angle_deg, max_angle_deg].
AugmentParams sample_augment(std::mt19937_64& rng, double max_angle_deg);
// Horizontal flip, then rotation about the patch center with bilinear
// sampling and edge replication. The same transform is applied to every
// channel; an angle of exactly 0 leaves pixels untouched.
InputStack apply_augment(const InputStack& stack, const AugmentParams& params);
InputStack augment(const InputStack& stack, std::mt19937_64& rng, double max_angle_deg);

// Reads an image file as 8-bit RGB. Throws MissingResource when unreadable.
cv::Mat read_rgb(const std::filesystem::path& file);

struct PrepareOptions {
  int crop_size = 224;
  // Frames smaller than the crop are enlarged (whole frame, aspect kept)
  // instead of failing with UpstreamTooSmall.
  bool allow_upscale = false;
};

// RGB and depth crops for one frame, shared by every channel config.
struct FramePatches {
  cv::Mat rgb;      // crop x crop, CV_8UC3
  cv::Mat1b depth;  // crop x crop, normalized depth
  FaceBox box;
  CropWindow window;
  double upscale = 1.0;  // > 1 when the frame was enlarged to fit the crop
};

// detect -> estimate (full frame) -> crop -> align. A precomputed depth map
// for the frame can be passed to skip the estimator. Throws NoFace when the
// detector finds nothing.
FramePatches extract_patches(const cv::Mat& rgb_frame, FaceDetector& detector,
                             depth::DepthEstimator& estimator, const PrepareOptions& options,
                             const depth::DepthMap* precomputed_depth = nullptr,
                             depth::DepthMap* depth_out = nullptr);

// On-disk cache of non-augmented stacks:
//   <root>/patches/<CONFIG>/noaug/<key>.bin   raw uint8, HWC
//   <root>/patches/<CONFIG>/noaug/<key>.json  shape, config, provenance
//   <root>/depth/<key>.depth.png              full depth map, millimeters
// <key> is the percent-encoded video id, '_' and the frame index.
class PatchCache {
 public:
  explicit PatchCache(std::filesystem::path root);

  const std::filesystem::path& root() const { return root_; }
  static std::string key(const Provenance& p);

  std::filesystem::path stack_path(ChannelConfig config, const Provenance& p) const;
  std::filesystem::path depth_path(const Provenance& p) const;

  bool contains(ChannelConfig config, const Provenance& p) const;
  void store(const InputStack& stack) const;
  InputStack load(ChannelConfig config, const Provenance& p) const;
  std::optional<InputStack> find(ChannelConfig config, const Provenance& p) const;

  bool has_depth(const Provenance& p) const;
  void store_depth(const Provenance& p, const depth::DepthMap& map) const;
  depth::DepthMap load_depth(const Provenance& p) const;

 private:
  std::filesystem::path root_;
};

}  // namespace depthfake::preprocess
