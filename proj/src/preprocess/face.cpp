#include "depthfake/face.hpp"

#include <algorithm>

#include <fmt/format.h>
#include <opencv2/imgproc.hpp>

#include "depthfake/errors.hpp"

namespace depthfake::preprocess {
namespace {

void require_rgb(const cv::Mat& rgb) {
  if (rgb.empty()) throw ShapeError("face detection on an empty frame");
  if (rgb.type() != CV_8UC3) throw ShapeError("face detection expects an 8-bit 3-channel frame");
}

}  // namespace

std::vector<FaceBox> CenterBoxDetector::detect(const cv::Mat& rgb) {
  require_rgb(rgb);
  return {FaceBox{0, 0, rgb.cols, rgb.rows}};
}

std::vector<FaceBox> SkinToneDetector::detect(const cv::Mat& rgb) {
  require_rgb(rgb);
  cv::Mat ycrcb;
  cv::cvtColor(rgb, ycrcb, cv::COLOR_RGB2YCrCb);
  cv::Mat mask;
  cv::inRange(ycrcb, cv::Scalar(0, 133, 77), cv::Scalar(255, 173, 127), mask);
  cv::morphologyEx(mask, mask, cv::MORPH_OPEN,
                   cv::getStructuringElement(cv::MORPH_ELLIPSE, cv::Size(5, 5)));

  cv::Mat labels, stats, centroids;
  const int n = cv::connectedComponentsWithStats(mask, labels, stats, centroids, 8, CV_32S);
  std::vector<FaceBox> boxes;
  for (int i = 1; i < n; ++i) {
    if (stats.at<int>(i, cv::CC_STAT_AREA) < min_area_) continue;
    boxes.push_back(FaceBox{stats.at<int>(i, cv::CC_STAT_LEFT), stats.at<int>(i, cv::CC_STAT_TOP),
                            stats.at<int>(i, cv::CC_STAT_WIDTH),
                            stats.at<int>(i, cv::CC_STAT_HEIGHT)});
  }
  return boxes;
}

CascadeFaceDetector::CascadeFaceDetector(const std::filesystem::path& model) {
  if (!classifier_.load(model.string())) {
    throw MissingResource(fmt::format("cannot load face cascade '{}'", model.string()));
  }
}

std::vector<FaceBox> CascadeFaceDetector::detect(const cv::Mat& rgb) {
  require_rgb(rgb);
  cv::Mat gray;
  cv::cvtColor(rgb, gray, cv::COLOR_RGB2GRAY);
  cv::equalizeHist(gray, gray);
  std::vector<cv::Rect> rects;
  classifier_.detectMultiScale(gray, rects, 1.1, 3, 0, cv::Size(48, 48));
  std::vector<FaceBox> boxes;
  for (const auto& r : rects) boxes.push_back(FaceBox{r.x, r.y, r.width, r.height});
  return boxes;
}

void to_json(nlohmann::json& j, const DetectorOptions& o) {
  j = nlohmann::json{{"kind", o.kind},
                     {"cascade_path", o.cascade_path.generic_string()},
                     {"min_area", o.min_area}};
}

void from_json(const nlohmann::json& j, DetectorOptions& o) {
  DetectorOptions d;
  o.kind = j.value("kind", d.kind);
  o.cascade_path = j.value("cascade_path", std::string{});
  o.min_area = j.value("min_area", d.min_area);
}

std::unique_ptr<FaceDetector> make_detector(const DetectorOptions& options) {
  if (options.kind == "skin") return std::make_unique<SkinToneDetector>(options.min_area);
  if (options.kind == "center") return std::make_unique<CenterBoxDetector>();
  if (options.kind == "cascade") return std::make_unique<CascadeFaceDetector>(options.cascade_path);
  throw ConfigError(fmt::format("detector.kind: unknown detector '{}'", options.kind));
}

FaceBox detect_face(FaceDetector& detector, const cv::Mat& rgb) {
  const auto boxes = detector.detect(rgb);
  if (boxes.empty()) throw NoFace(fmt::format("{} detector found no face", detector.name()));
  return *std::ranges::max_element(boxes, {}, &FaceBox::area);
}

}  // namespace depthfake::preprocess
