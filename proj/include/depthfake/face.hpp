#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/objdetect.hpp>

#include "depthfake/types.hpp"

namespace depthfake::preprocess {

// Pluggable face detector. Frames are 8-bit, 3-channel, RGB order.
// Implementations need not be thread-safe; use one instance per worker.
class FaceDetector {
 public:
  virtual ~FaceDetector() = default;
  virtual std::string name() const = 0;
  virtual std::vector<FaceBox> detect(const cv::Mat& rgb) = 0;
};

// Fallback for fixtures: one box covering the whole frame.
class CenterBoxDetector final : public FaceDetector {
 public:
  std::string name() const override { return "center"; }
  std::vector<FaceBox> detect(const cv::Mat& rgb) override;
};

// Skin-tone segmentation in YCrCb followed by connected components. Strict:
// frames without a skin blob of at least `min_area` pixels yield no boxes.
class SkinToneDetector final : public FaceDetector {
 public:
  explicit SkinToneDetector(int min_area = 400) : min_area_(min_area) {}
  std::string name() const override { return "skin"; }
  std::vector<FaceBox> detect(const cv::Mat& rgb) override;

 private:
  int min_area_;
};

// OpenCV cascade classifier loaded from an XML model.
class CascadeFaceDetector final : public FaceDetector {
 public:
  explicit CascadeFaceDetector(const std::filesystem::path& model);
  std::string name() const override { return "cascade"; }
  std::vector<FaceBox> detect(const cv::Mat& rgb) override;

 private:
  cv::CascadeClassifier classifier_;
};

struct DetectorOptions {
  std::string kind = "skin";  // skin | center | cascade
  std::filesystem::path cascade_path;
  int min_area = 400;
};

void to_json(nlohmann::json& j, const DetectorOptions& o);
void from_json(const nlohmann::json& j, DetectorOptions& o);

std::unique_ptr<FaceDetector> make_detector(const DetectorOptions& options);

// Largest detected box; throws NoFace when the detector finds none.
FaceBox detect_face(FaceDetector& detector, const cv::Mat& rgb);

}  // namespace depthfake::preprocess
