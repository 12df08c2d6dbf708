#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>

#include <opencv2/core.hpp>
#include <opencv2/dnn.hpp>

#include "depthfake/face.hpp"
#include "depthfake/types.hpp"

namespace depthfake::depth {

inline constexpr int kInputHeight = 480;
inline constexpr int kInputWidth = 640;
inline constexpr int kMapHeight = 240;
inline constexpr int kMapWidth = 320;
inline constexpr float kMaxDepthMm = 5000.0f;
inline constexpr float kNearestFaceMm = 300.0f;

// Per-pixel face distance in millimeters, clamped to [0, 5000].
class DepthMap {
 public:
  DepthMap() = default;
  DepthMap(int height, int width, float fill = kMaxDepthMm);
  // Copies `values` (any single-channel depth), clamping into range. Throws
  // NumericError on non-finite input.
  static DepthMap from_mat(const cv::Mat& values);

  int height() const { return values_.rows; }
  int width() const { return values_.cols; }
  bool empty() const { return values_.empty(); }
  float at(int row, int col) const { return values_(row, col); }
  const cv::Mat1f& values() const { return values_; }

  // Bilinear sample at continuous map coordinates (pixel centers at integers),
  // clamped at the border.
  double sample(double row, double col) const;

 private:
  cv::Mat1f values_;
};

// Aspect-preserving fit of a frame into the 480x640 estimator input. Maps
// frame pixel coordinates to letterbox and depth-map coordinates.
struct Letterbox {
  int frame_height = 0;
  int frame_width = 0;
  int content_height = 0;
  int content_width = 0;
  int pad_top = 0;
  int pad_left = 0;

  static Letterbox for_frame(int frame_height, int frame_width);

  double to_input_row(double frame_row) const;
  double to_input_col(double frame_col) const;
  double to_map_row(double frame_row) const;
  double to_map_col(double frame_col) const;
  // Frame-pixel lengths to depth-map-pixel lengths.
  double row_scale_to_map() const;
  double col_scale_to_map() const;
};

// Resizes `rgb` into the 480x640 estimator input, padding by edge replication.
cv::Mat letterbox_frame(const cv::Mat& rgb);

class DepthEstimator {
 public:
  virtual ~DepthEstimator() = default;
  virtual std::string name() const = 0;
  // `input` is a 480x640 RGB frame; returns a 240x320 map.
  virtual DepthMap estimate(const cv::Mat& input) = 0;
};

// Depth of the ellipsoidal face model at normalized height e in [0, 1].
double ellipsoid_depth_mm(double e);

// Deterministic stand-in for a trained face-depth network: 5000 mm
// background and an ellipsoidal bump inscribed in the face box, 300 mm at the
// ellipse center. `face_box` is in the coordinates of a frame of
// `frame_height` x `frame_width`.
DepthMap synthetic_face_depth(const FaceBox& face_box, int frame_height, int frame_width);

// Oracle estimator: detects the face on the estimator input and renders the
// synthetic face depth for it. Frames without a face get a background map.
class SyntheticDepthOracle final : public DepthEstimator {
 public:
  explicit SyntheticDepthOracle(std::unique_ptr<preprocess::FaceDetector> detector);
  std::string name() const override { return "synthetic-oracle"; }
  DepthMap estimate(const cv::Mat& input) override;

 private:
  std::unique_ptr<preprocess::FaceDetector> detector_;
};

// Converts the 480x640 RGB input into the network's input blob. Must match
// the upstream model's training convention.
using DnnPreprocess = std::function<cv::Mat(const cv::Mat& rgb)>;

// Pretrained network loaded through OpenCV's DNN module (ONNX, TensorFlow
// protobuf, ...). The output is reshaped to 240x320 and multiplied by
// `output_scale_mm` to obtain millimeters.
class DnnDepthEstimator final : public DepthEstimator {
 public:
  DnnDepthEstimator(const std::filesystem::path& model, DnnPreprocess preprocess,
                    double output_scale_mm);
  std::string name() const override { return "dnn:" + model_.filename().string(); }
  DepthMap estimate(const cv::Mat& input) override;

  // Scale to [0, 1], NCHW, RGB order.
  static DnnPreprocess default_preprocess();

 private:
  std::filesystem::path model_;
  cv::dnn::Net net_;
  DnnPreprocess preprocess_;
  double output_scale_mm_;
};

struct EstimatorOptions {
  // auto: dnn when model_path is set, else oracle.
  std::string kind = "auto";  // auto | oracle | dnn
  std::filesystem::path model_path;
  double input_scale = 1.0 / 255.0;
  double output_scale_mm = 1.0;
};

void to_json(nlohmann::json& j, const EstimatorOptions& o);
void from_json(const nlohmann::json& j, EstimatorOptions& o);

std::unique_ptr<DepthEstimator> make_estimator(const EstimatorOptions& options,
                                               const preprocess::DetectorOptions& detector);

// Letterboxes `frame` to the estimator input and runs `estimator`. Throws
// ShapeError when the estimator violates the 240x320 output contract.
DepthMap estimate_depth(DepthEstimator& estimator, const cv::Mat& frame);

// Fixed global scale: round_half_away(v * 255 / 5000), clamped to [0, 255].
std::uint8_t normalize_depth_value(double millimeters);
cv::Mat1b normalize_depth(const DepthMap& map);

// 16-bit single-channel PNG holding rounded millimeters.
void write_depth_png(const std::filesystem::path& file, const DepthMap& map);
DepthMap read_depth_png(const std::filesystem::path& file);

}  // namespace depthfake::depth
