#include <cmath>
#include <random>

#include <opencv2/imgproc.hpp>

#include "doctest.h"
#include "unit/support.hpp"

#include "depthfake/depth.hpp"
#include "depthfake/errors.hpp"
#include "depthfake/face.hpp"
#include "depthfake/manifest.hpp"
#include "depthfake/preprocess.hpp"
#include "depthfake/synth.hpp"

using namespace depthfake;
using namespace depthfake::depth;
using depthfake::testing::TempDir;

namespace {

// Independent oracle for the 8-bit depth scale.
int normalize_oracle(double mm) {
  const double x = mm * 255.0 / 5000.0;
  const double r = std::floor(x + 0.5);
  return static_cast<int>(std::clamp(r, 0.0, 255.0));
}

cv::Mat blue_frame(int h, int w) { return cv::Mat(h, w, CV_8UC3, cv::Scalar(40, 90, 160)); }

void draw_face(cv::Mat& rgb, const FaceBox& b) {
  cv::ellipse(rgb, cv::Point2d(b.center_x(), b.center_y()),
              cv::Size2d((b.width - 1) / 2.0, (b.height - 1) / 2.0), 0, 0, 360,
              cv::Scalar(220, 165, 135), cv::FILLED);
}

std::unique_ptr<DepthEstimator> oracle() {
  return std::make_unique<SyntheticDepthOracle>(std::make_unique<preprocess::SkinToneDetector>());
}

}  // namespace

TEST_CASE("normalize_depth examples") {
  CHECK(normalize_depth_value(5000) == 255);
  CHECK(normalize_depth_value(0) == 0);
  CHECK(normalize_depth_value(2500) == 128);
  CHECK(normalize_depth_value(300) == 15);
}

TEST_CASE("normalize_depth matches the closed form on every integer millimeter") {
  for (int v = 0; v <= 5000; ++v) {
    REQUIRE(normalize_depth_value(v) == normalize_oracle(v));
  }
}

TEST_CASE("property: normalize_depth is monotone") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-100.0, 5100.0);
  for (int i = 0; i < 20000; ++i) {
    double a = u(rng), b = u(rng);
    if (a > b) std::swap(a, b);
    REQUIRE(normalize_depth_value(a) <= normalize_depth_value(b));
  }
}

TEST_CASE("depth maps clamp into range and reject non-finite values") {
  cv::Mat1f raw(2, 2);
  raw << -5.0f, 7000.0f, 1234.5f, 0.0f;
  const auto map = DepthMap::from_mat(raw);
  CHECK(map.at(0, 0) == 0.0f);
  CHECK(map.at(0, 1) == 5000.0f);
  CHECK(map.at(1, 0) == 1234.5f);
  raw(1, 1) = std::nanf("");
  CHECK_THROWS_AS(DepthMap::from_mat(raw), NumericError);
}

TEST_CASE("bilinear sampling interpolates between pixel centers") {
  cv::Mat1f raw(2, 2);
  raw << 0.0f, 100.0f, 200.0f, 300.0f;
  const auto map = DepthMap::from_mat(raw);
  CHECK(map.sample(0, 0) == doctest::Approx(0));
  CHECK(map.sample(0.5, 0.5) == doctest::Approx(150));
  CHECK(map.sample(0, 0.25) == doctest::Approx(25));
  CHECK(map.sample(-3, 9) == doctest::Approx(100));
}

TEST_CASE("letterbox geometry") {
  const auto same = Letterbox::for_frame(480, 640);
  CHECK(same.pad_top == 0);
  CHECK(same.pad_left == 0);
  CHECK(same.to_map_row(0.5) == doctest::Approx(0.0));
  CHECK(same.to_map_col(2.5) == doctest::Approx(1.0));

  const auto hd = Letterbox::for_frame(1080, 1920);
  CHECK(hd.content_width == 640);
  CHECK(hd.content_height == 360);
  CHECK(hd.pad_top == 60);
  // Frame center maps to map center.
  CHECK(hd.to_map_row(539.5) == doctest::Approx(119.5));
  CHECK(hd.to_map_col(959.5) == doctest::Approx(159.5));

  const cv::Mat boxed = letterbox_frame(testing::random_rgb(1080, 1920, 1));
  CHECK(boxed.rows == kInputHeight);
  CHECK(boxed.cols == kInputWidth);
}

// A 480x640 frame maps 2:1 onto the 240x320 depth map, so map pixel (r, c)
// sits at frame coordinate (2r + 0.5, 2c + 0.5). The box below is centered on
// map pixel (120, 160) with semi-axes of 50 rows and 40 columns.
TEST_CASE("synthetic face depth follows the ellipsoid formula") {
  const FaceBox box{241, 141, 160, 200};
  const auto map = synthetic_face_depth(box, 480, 640);
  REQUIRE(map.height() == 240);
  REQUIRE(map.width() == 320);
  CHECK(map.at(120, 160) == doctest::Approx(300.0));
  // dx = 24 / 40 = 0.6 -> e = 0.8 -> 300 + 4700 * 0.2
  CHECK(map.at(120, 184) == doctest::Approx(1240.0).epsilon(1e-6));
  CHECK(map.at(150, 160) == doctest::Approx(1240.0).epsilon(1e-6));
  CHECK(map.at(171, 160) == 5000.0f);
  CHECK(map.at(0, 0) == 5000.0f);
  CHECK(ellipsoid_depth_mm(0.5) == doctest::Approx(2650.0));
  CHECK(ellipsoid_depth_mm(1.0) == doctest::Approx(300.0));

  CHECK(cv::countNonZero(synthetic_face_depth(FaceBox{10, 10, 0, 5}, 480, 640).values() != 5000.0f) == 0);
  const auto again = synthetic_face_depth(box, 480, 640);
  CHECK(cv::countNonZero(again.values() != map.values()) == 0);
}

TEST_CASE("oracle estimator output honours the estimator contract") {
  auto est = oracle();
  std::mt19937_64 rng(3);
  const std::pair<int, int> shapes[] = {{480, 640}, {256, 320}, {1080, 1920}, {300, 300}, {640, 480}};
  for (const auto& [h, w] : shapes) {
    cv::Mat frame = blue_frame(h, w);
    draw_face(frame, FaceBox{w / 4, h / 4, w / 3, h / 2});
    const auto map = estimate_depth(*est, frame);
    CHECK(map.height() == kMapHeight);
    CHECK(map.width() == kMapWidth);
    double lo, hi;
    cv::minMaxLoc(map.values(), &lo, &hi);
    CHECK(lo >= 0.0);
    CHECK(hi <= 5000.0);
    CHECK(lo < 1000.0);
  }
  // Pure noise frames are valid inputs too.
  for (int i = 0; i < 3; ++i) {
    const auto map = estimate_depth(*est, testing::random_rgb(200 + 40 * i, 300, rng()));
    CHECK(map.height() == kMapHeight);
    double lo, hi;
    cv::minMaxLoc(map.values(), &lo, &hi);
    CHECK(lo >= 0.0);
    CHECK(hi <= 5000.0);
  }
}

TEST_CASE("oracle is deterministic on a constant frame") {
  auto a = oracle();
  auto b = oracle();
  const cv::Mat frame(480, 640, CV_8UC3, cv::Scalar(220, 165, 135));
  const auto m1 = estimate_depth(*a, frame);
  const auto m2 = estimate_depth(*b, frame);
  CHECK(cv::countNonZero(m1.values() != m2.values()) == 0);
}

TEST_CASE("oracle maps agree inside the face when frames differ only outside it") {
  const FaceBox face{200, 120, 180, 220};
  cv::Mat a = blue_frame(480, 640);
  draw_face(a, face);
  cv::Mat b = a.clone();
  cv::rectangle(b, cv::Rect(0, 0, 120, 80), cv::Scalar(10, 200, 30), cv::FILLED);
  cv::circle(b, cv::Point(600, 440), 20, cv::Scalar(255, 255, 255), cv::FILLED);

  auto est = oracle();
  const auto ma = estimate_depth(*est, a);
  const auto mb = estimate_depth(*est, b);
  const auto inside = synthetic_face_depth(face, 480, 640).values() < 5000.0f;
  REQUIRE(cv::countNonZero(inside) > 1000);
  cv::Mat diff = ma.values() != mb.values();
  diff &= inside;
  CHECK(cv::countNonZero(diff) == 0);
}

TEST_CASE("dnn estimator reports a missing model with the fallback") {
  EstimatorOptions opts;
  opts.kind = "dnn";
  opts.model_path = "/nonexistent/facedepth.onnx";
  CHECK_THROWS_WITH_AS(make_estimator(opts, {}), doctest::Contains("oracle"), MissingResource);

  EstimatorOptions automatic;
  CHECK(make_estimator(automatic, {})->name() == "synthetic-oracle");
  automatic.model_path = "/nonexistent/facedepth.onnx";
  CHECK_THROWS_AS(make_estimator(automatic, {}), MissingResource);
}

TEST_CASE("estimate_depth rejects estimators that break the output contract") {
  struct Wrong final : DepthEstimator {
    std::string name() const override { return "wrong"; }
    DepthMap estimate(const cv::Mat&) override { return DepthMap(120, 160); }
  } wrong;
  CHECK_THROWS_AS(estimate_depth(wrong, blue_frame(480, 640)), ShapeError);
  CHECK_THROWS_AS(estimate_depth(wrong, cv::Mat()), ShapeError);
}

TEST_CASE("depth png round trip keeps whole millimeters") {
  TempDir dir("depthpng");
  const auto map = synthetic_face_depth(FaceBox{241, 141, 160, 200}, 480, 640);
  write_depth_png(dir / "d.depth.png", map);
  const auto back = read_depth_png(dir / "d.depth.png");
  REQUIRE(back.height() == map.height());
  double worst = 0;
  for (int r = 0; r < map.height(); ++r) {
    for (int c = 0; c < map.width(); ++c) worst = std::max(worst, std::abs(double(back.at(r, c)) - map.at(r, c)));
  }
  CHECK(worst <= 0.5);
}

TEST_CASE("detect_face centers on the fixture face") {
  TempDir dir("detect");
  synth::FixtureSpec spec;
  spec.videos_per_class = 2;
  spec.frames_per_video = 3;
  const auto boxes = synth::write_fixture_dataset(dir.path(), spec);
  const auto records = load_manifest(dir.path(), DatasetLayout::faceforensics()).records;
  REQUIRE(records.size() == boxes.size());
  preprocess::SkinToneDetector detector;
  for (const auto& r : records) {
    const int video = std::stoi(r.video_id.substr(r.video_id.size() - 3));
    const auto truth = synth::fixture_face_box(spec, r.manipulation, video, static_cast<int>(r.frame_index));
    const auto box = preprocess::detect_face(detector, preprocess::read_rgb(dir.path() / r.image_path));
    CHECK(std::abs(box.center_x() - truth.center_x()) <= 2.0);
    CHECK(std::abs(box.center_y() - truth.center_y()) <= 2.0);
  }
}

TEST_CASE("detect_face returns the larger of two faces") {
  cv::Mat frame = blue_frame(400, 600);
  const FaceBox small{40, 60, 80, 100};
  const FaceBox large{300, 100, 160, 220};
  draw_face(frame, small);
  draw_face(frame, large);
  preprocess::SkinToneDetector detector;
  REQUIRE(detector.detect(frame).size() == 2);
  const auto box = preprocess::detect_face(detector, frame);
  CHECK(std::abs(box.center_x() - large.center_x()) <= 2.0);
  CHECK(std::abs(box.center_y() - large.center_y()) <= 2.0);
}

TEST_CASE("blank frames raise NoFace with the strict detector") {
  preprocess::SkinToneDetector detector;
  CHECK_THROWS_AS(preprocess::detect_face(detector, blue_frame(240, 320)), NoFace);
  preprocess::CenterBoxDetector fallback;
  CHECK(preprocess::detect_face(fallback, blue_frame(240, 320)) == FaceBox{0, 0, 320, 240});
}
