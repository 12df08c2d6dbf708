#include "depthfake/depth.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "depthfake/errors.hpp"

namespace depthfake::depth {

DepthMap::DepthMap(int height, int width, float fill) : values_(height, width, fill) {
  if (height <= 0 || width <= 0) throw ShapeError("depth map dimensions must be positive");
  values_.setTo(std::clamp(fill, 0.0f, kMaxDepthMm));
}

DepthMap DepthMap::from_mat(const cv::Mat& values) {
  if (values.empty() || values.channels() != 1) {
    throw ShapeError("depth map source must be a non-empty single-channel matrix");
  }
  DepthMap map;
  values.convertTo(map.values_, CV_32F);
  if (!cv::checkRange(map.values_, true)) throw NumericError("depth map contains non-finite values");
  cv::min(map.values_, kMaxDepthMm, map.values_);
  cv::max(map.values_, 0.0f, map.values_);
  return map;
}

double DepthMap::sample(double row, double col) const {
  const int h = height();
  const int w = width();
  row = std::clamp(row, 0.0, static_cast<double>(h - 1));
  col = std::clamp(col, 0.0, static_cast<double>(w - 1));
  const int r0 = static_cast<int>(std::floor(row));
  const int c0 = static_cast<int>(std::floor(col));
  const int r1 = std::min(r0 + 1, h - 1);
  const int c1 = std::min(c0 + 1, w - 1);
  const double fr = row - r0;
  const double fc = col - c0;
  const double top = values_(r0, c0) * (1.0 - fc) + values_(r0, c1) * fc;
  const double bottom = values_(r1, c0) * (1.0 - fc) + values_(r1, c1) * fc;
  return top * (1.0 - fr) + bottom * fr;
}

Letterbox Letterbox::for_frame(int frame_height, int frame_width) {
  if (frame_height <= 0 || frame_width <= 0) throw ShapeError("letterbox of an empty frame");
  Letterbox lb;
  lb.frame_height = frame_height;
  lb.frame_width = frame_width;
  const double scale = std::min(static_cast<double>(kInputHeight) / frame_height,
                                static_cast<double>(kInputWidth) / frame_width);
  lb.content_height = std::clamp(static_cast<int>(std::lround(frame_height * scale)), 1, kInputHeight);
  lb.content_width = std::clamp(static_cast<int>(std::lround(frame_width * scale)), 1, kInputWidth);
  lb.pad_top = (kInputHeight - lb.content_height) / 2;
  lb.pad_left = (kInputWidth - lb.content_width) / 2;
  return lb;
}

double Letterbox::to_input_row(double frame_row) const {
  return (frame_row + 0.5) * content_height / frame_height - 0.5 + pad_top;
}

double Letterbox::to_input_col(double frame_col) const {
  return (frame_col + 0.5) * content_width / frame_width - 0.5 + pad_left;
}

double Letterbox::to_map_row(double frame_row) const {
  return (to_input_row(frame_row) + 0.5) * kMapHeight / kInputHeight - 0.5;
}

double Letterbox::to_map_col(double frame_col) const {
  return (to_input_col(frame_col) + 0.5) * kMapWidth / kInputWidth - 0.5;
}

double Letterbox::row_scale_to_map() const {
  return static_cast<double>(content_height) / frame_height * kMapHeight / kInputHeight;
}

double Letterbox::col_scale_to_map() const {
  return static_cast<double>(content_width) / frame_width * kMapWidth / kInputWidth;
}

cv::Mat letterbox_frame(const cv::Mat& rgb) {
  if (rgb.empty() || rgb.channels() != 3) throw ShapeError("letterbox expects a 3-channel frame");
  if (rgb.rows == kInputHeight && rgb.cols == kInputWidth) return rgb.clone();
  const auto lb = Letterbox::for_frame(rgb.rows, rgb.cols);
  cv::Mat resized;
  const bool shrinking = lb.content_height < rgb.rows;
  cv::resize(rgb, resized, cv::Size(lb.content_width, lb.content_height), 0, 0,
             shrinking ? cv::INTER_AREA : cv::INTER_LINEAR);
  cv::Mat out;
  cv::copyMakeBorder(resized, out, lb.pad_top, kInputHeight - lb.content_height - lb.pad_top,
                     lb.pad_left, kInputWidth - lb.content_width - lb.pad_left,
                     cv::BORDER_REPLICATE);
  return out;
}

double ellipsoid_depth_mm(double e) {
  return kNearestFaceMm + (kMaxDepthMm - kNearestFaceMm) * (1.0 - e);
}

DepthMap synthetic_face_depth(const FaceBox& face_box, int frame_height, int frame_width) {
  DepthMap map(kMapHeight, kMapWidth, kMaxDepthMm);
  if (face_box.degenerate()) return map;
  if (!face_box.within(frame_height, frame_width)) {
    throw ConfigError(fmt::format("face box ({}, {}, {}x{}) lies outside a {}x{} frame", face_box.x,
                                  face_box.y, face_box.width, face_box.height, frame_height,
                                  frame_width));
  }
  const auto lb = Letterbox::for_frame(frame_height, frame_width);
  const double cy = lb.to_map_row(face_box.center_y());
  const double cx = lb.to_map_col(face_box.center_x());
  const double semi_y = face_box.height / 2.0 * lb.row_scale_to_map();
  const double semi_x = face_box.width / 2.0 * lb.col_scale_to_map();

  cv::Mat1f values = map.values().clone();
  for (int r = 0; r < kMapHeight; ++r) {
    const double dy = (r - cy) / semi_y;
    for (int c = 0; c < kMapWidth; ++c) {
      const double dx = (c - cx) / semi_x;
      const double rho2 = dx * dx + dy * dy;
      if (rho2 <= 1.0) values(r, c) = static_cast<float>(ellipsoid_depth_mm(std::sqrt(1.0 - rho2)));
    }
  }
  return DepthMap::from_mat(values);
}

SyntheticDepthOracle::SyntheticDepthOracle(std::unique_ptr<preprocess::FaceDetector> detector)
    : detector_(std::move(detector)) {
  if (!detector_) throw ConfigError("synthetic depth oracle needs a face detector");
}

DepthMap SyntheticDepthOracle::estimate(const cv::Mat& input) {
  if (input.rows != kInputHeight || input.cols != kInputWidth) {
    throw ShapeError(fmt::format("estimator input must be {}x{}, got {}x{}", kInputHeight,
                                 kInputWidth, input.rows, input.cols));
  }
  const auto boxes = detector_->detect(input);
  if (boxes.empty()) return DepthMap(kMapHeight, kMapWidth, kMaxDepthMm);
  const auto largest = *std::ranges::max_element(boxes, {}, &FaceBox::area);
  return synthetic_face_depth(largest, kInputHeight, kInputWidth);
}

DnnDepthEstimator::DnnDepthEstimator(const std::filesystem::path& model, DnnPreprocess preprocess,
                                     double output_scale_mm)
    : model_(model), preprocess_(std::move(preprocess)), output_scale_mm_(output_scale_mm) {
  const auto fallback =
      "; unset depth.model_path or set depth.kind to \"oracle\" to use the synthetic oracle";
  if (!std::filesystem::exists(model)) {
    throw MissingResource(fmt::format("depth model '{}' not found{}", model.string(), fallback));
  }
  try {
    net_ = cv::dnn::readNet(model.string());
  } catch (const cv::Exception& e) {
    throw MissingResource(
        fmt::format("depth backend cannot load '{}': {}{}", model.string(), e.what(), fallback));
  }
  if (net_.empty()) {
    throw MissingResource(fmt::format("depth backend returned an empty network for '{}'{}",
                                      model.string(), fallback));
  }
  if (!preprocess_) preprocess_ = default_preprocess();
}

DnnPreprocess DnnDepthEstimator::default_preprocess() {
  return [](const cv::Mat& rgb) {
    return cv::dnn::blobFromImage(rgb, 1.0 / 255.0, cv::Size(), cv::Scalar(), false, false, CV_32F);
  };
}

DepthMap DnnDepthEstimator::estimate(const cv::Mat& input) {
  net_.setInput(preprocess_(input));
  cv::Mat out = net_.forward();
  if (out.total() != static_cast<std::size_t>(kMapHeight) * kMapWidth) {
    throw ShapeError(fmt::format("depth network produced {} values, expected {}x{}", out.total(),
                                 kMapHeight, kMapWidth));
  }
  cv::Mat flat = out.reshape(1, kMapHeight);
  cv::Mat scaled;
  flat.convertTo(scaled, CV_32F, output_scale_mm_);
  return DepthMap::from_mat(scaled);
}

void to_json(nlohmann::json& j, const EstimatorOptions& o) {
  j = nlohmann::json{{"kind", o.kind},
                     {"model_path", o.model_path.generic_string()},
                     {"input_scale", o.input_scale},
                     {"output_scale_mm", o.output_scale_mm}};
}

void from_json(const nlohmann::json& j, EstimatorOptions& o) {
  EstimatorOptions d;
  o.kind = j.value("kind", d.kind);
  o.model_path = j.value("model_path", std::string{});
  o.input_scale = j.value("input_scale", d.input_scale);
  o.output_scale_mm = j.value("output_scale_mm", d.output_scale_mm);
}

std::unique_ptr<DepthEstimator> make_estimator(const EstimatorOptions& options,
                                               const preprocess::DetectorOptions& detector) {
  const bool use_oracle =
      options.kind == "oracle" || (options.kind == "auto" && options.model_path.empty());
  if (use_oracle) {
    return std::make_unique<SyntheticDepthOracle>(preprocess::make_detector(detector));
  }
  if (options.kind == "dnn" || options.kind == "auto") {
    const double scale = options.input_scale;
    return std::make_unique<DnnDepthEstimator>(
        options.model_path,
        [scale](const cv::Mat& rgb) {
          return cv::dnn::blobFromImage(rgb, scale, cv::Size(), cv::Scalar(), false, false, CV_32F);
        },
        options.output_scale_mm);
  }
  throw ConfigError(fmt::format("depth.kind: unknown estimator '{}'", options.kind));
}

DepthMap estimate_depth(DepthEstimator& estimator, const cv::Mat& frame) {
  if (frame.empty() || frame.type() != CV_8UC3) {
    throw ShapeError("depth estimation expects a non-empty 8-bit 3-channel frame");
  }
  DepthMap map = estimator.estimate(letterbox_frame(frame));
  if (map.height() != kMapHeight || map.width() != kMapWidth) {
    throw ShapeError(fmt::format("estimator '{}' returned {}x{}, expected {}x{}", estimator.name(),
                                 map.height(), map.width(), kMapHeight, kMapWidth));
  }
  return map;
}

std::uint8_t normalize_depth_value(double millimeters) {
  const double v = std::round(millimeters * 255.0 / kMaxDepthMm);
  return static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
}

cv::Mat1b normalize_depth(const DepthMap& map) {
  cv::Mat1b out(map.height(), map.width());
  for (int r = 0; r < map.height(); ++r) {
    for (int c = 0; c < map.width(); ++c) out(r, c) = normalize_depth_value(map.at(r, c));
  }
  return out;
}

void write_depth_png(const std::filesystem::path& file, const DepthMap& map) {
  cv::Mat_<std::uint16_t> mm(map.height(), map.width());
  for (int r = 0; r < map.height(); ++r) {
    for (int c = 0; c < map.width(); ++c) {
      mm(r, c) = static_cast<std::uint16_t>(std::round(map.at(r, c)));
    }
  }
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  if (!cv::imwrite(file.string(), mm)) {
    throw Error(fmt::format("cannot write depth cache '{}'", file.string()));
  }
}

DepthMap read_depth_png(const std::filesystem::path& file) {
  cv::Mat raw = cv::imread(file.string(), cv::IMREAD_UNCHANGED);
  if (raw.empty()) throw MissingResource(fmt::format("cannot read depth cache '{}'", file.string()));
  if (raw.type() != CV_16UC1) {
    throw ShapeError(fmt::format("depth cache '{}' is not 16-bit single-channel", file.string()));
  }
  return DepthMap::from_mat(raw);
}

}  // namespace depthfake::depth
