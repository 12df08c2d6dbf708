#include "depthfake/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "depthfake/errors.hpp"
#include "depthfake/nn/weights.hpp"
#include "depthfake/random.hpp"

namespace fs = std::filesystem;

namespace depthfake::preprocess {

CropWindow crop_window(int frame_height, int frame_width, const FaceBox& box, int crop) {
  if (crop <= 0) throw ConfigError("crop size must be positive");
  if (frame_height < crop || frame_width < crop) {
    throw UpstreamTooSmall(fmt::format("frame {}x{} is smaller than the {}x{} crop", frame_height,
                                       frame_width, crop, crop));
  }
  if (box.degenerate()) throw ShapeError("face box has no area");
  const long cy = std::lround(box.center_y());
  const long cx = std::lround(box.center_x());
  CropWindow w;
  w.size = crop;
  w.top = static_cast<int>(std::clamp<long>(cy - crop / 2, 0, frame_height - crop));
  w.left = static_cast<int>(std::clamp<long>(cx - crop / 2, 0, frame_width - crop));
  return w;
}

cv::Mat crop_face_patch(const cv::Mat& frame, const CropWindow& window) {
  if (window.top < 0 || window.left < 0 || window.bottom() >= frame.rows ||
      window.right() >= frame.cols) {
    throw ShapeError("crop window lies outside the frame");
  }
  return frame(window.rect()).clone();
}

cv::Mat crop_face_patch(const cv::Mat& frame, const FaceBox& box, int crop) {
  return crop_face_patch(frame, crop_window(frame.rows, frame.cols, box, crop));
}

cv::Mat1b align_depth_crop(const depth::DepthMap& map, int frame_height, int frame_width,
                           const CropWindow& window) {
  if (map.height() != depth::kMapHeight || map.width() != depth::kMapWidth) {
    throw ShapeError(fmt::format("depth map is {}x{}, expected {}x{}", map.height(), map.width(),
                                 depth::kMapHeight, depth::kMapWidth));
  }
  if (window.top < 0 || window.left < 0 || window.bottom() >= frame_height ||
      window.right() >= frame_width) {
    throw ShapeError("crop window lies outside the frame");
  }
  const auto lb = depth::Letterbox::for_frame(frame_height, frame_width);
  std::vector<double> map_cols(window.size);
  for (int j = 0; j < window.size; ++j) map_cols[j] = lb.to_map_col(window.left + j);
  cv::Mat1b out(window.size, window.size);
  for (int i = 0; i < window.size; ++i) {
    const double mr = lb.to_map_row(window.top + i);
    for (int j = 0; j < window.size; ++j) {
      out(i, j) = depth::normalize_depth_value(map.sample(mr, map_cols[j]));
    }
  }
  return out;
}

std::uint8_t luma(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  const double y = 0.299 * r + 0.587 * g + 0.114 * b;
  return static_cast<std::uint8_t>(std::min(255.0, std::floor(y + 0.5 + 1e-9)));
}

cv::Mat1b to_grayscale(const cv::Mat& rgb) {
  if (rgb.type() != CV_8UC3) throw ShapeError("grayscale conversion needs an 8-bit 3-channel patch");
  cv::Mat1b out(rgb.rows, rgb.cols);
  for (int r = 0; r < rgb.rows; ++r) {
    const auto* src = rgb.ptr<cv::Vec3b>(r);
    auto* dst = out.ptr<std::uint8_t>(r);
    for (int c = 0; c < rgb.cols; ++c) dst[c] = luma(src[c][0], src[c][1], src[c][2]);
  }
  return out;
}

void InputStack::validate() const {
  if (size <= 0) throw ShapeError("input stack has no pixels");
  if (data.size() != static_cast<std::size_t>(size) * size * channels()) {
    throw ShapeError(fmt::format("input stack holds {} values, expected {}x{}x{}", data.size(),
                                 size, size, channels()));
  }
  for (float v : data) {
    if (!std::isfinite(v)) throw NumericError("input stack holds non-finite values");
    if (v < 0.0f || v > 255.0f) throw NumericError("input stack value outside [0, 255]");
  }
}

InputStack stack_channels(const cv::Mat& rgb_patch, const cv::Mat& depth_patch,
                          ChannelConfig config, Provenance provenance) {
  if (rgb_patch.type() != CV_8UC3) throw ShapeError("RGB patch must be 8-bit, 3 channels");
  if (rgb_patch.rows != rgb_patch.cols) throw ShapeError("RGB patch must be square");
  if (has_depth(config)) {
    if (depth_patch.empty()) {
      throw ShapeError(fmt::format("{} needs a depth patch", to_string(config)));
    }
    if (depth_patch.type() != CV_8UC1 || depth_patch.size() != rgb_patch.size()) {
      throw ShapeError("depth patch must be 8-bit, 1 channel, same size as the RGB patch");
    }
  } else if (!depth_patch.empty()) {
    throw ShapeError(fmt::format("{} takes no depth patch", to_string(config)));
  }

  InputStack s;
  s.size = rgb_patch.rows;
  s.config = config;
  s.provenance = std::move(provenance);
  const int c = s.channels();
  s.data.resize(static_cast<std::size_t>(s.size) * s.size * c);
  const bool gray = config == ChannelConfig::Gray || config == ChannelConfig::GrayD;
  for (int r = 0; r < s.size; ++r) {
    const auto* rgb = rgb_patch.ptr<cv::Vec3b>(r);
    const auto* d = has_depth(config) ? depth_patch.ptr<std::uint8_t>(r) : nullptr;
    for (int col = 0; col < s.size; ++col) {
      float* px = &s.data[(static_cast<std::size_t>(r) * s.size + col) * c];
      if (gray) {
        px[0] = luma(rgb[col][0], rgb[col][1], rgb[col][2]);
      } else {
        px[0] = rgb[col][0];
        px[1] = rgb[col][1];
        px[2] = rgb[col][2];
      }
      if (d) px[c - 1] = d[col];
    }
  }
  return s;
}

AugmentParams sample_augment(std::mt19937_64& rng, double max_angle_deg) {
  AugmentParams p;
  p.flip = uniform_unit(rng) < 0.5;
  p.angle_deg = (2.0 * uniform_unit(rng) - 1.0) * max_angle_deg;
  return p;
}

InputStack apply_augment(const InputStack& stack, const AugmentParams& params) {
  const int c = stack.channels();
  InputStack out = stack;
  cv::Mat img(stack.size, stack.size, CV_32FC(c), out.data.data());
  if (params.flip) cv::flip(img, img, 1);
  if (params.angle_deg != 0.0) {
    const double centre = (stack.size - 1) / 2.0;
    const cv::Mat rot = cv::getRotationMatrix2D(cv::Point2f(static_cast<float>(centre),
                                                            static_cast<float>(centre)),
                                                params.angle_deg, 1.0);
    cv::Mat rotated;
    cv::warpAffine(img, rotated, rot, img.size(), cv::INTER_LINEAR, cv::BORDER_REPLICATE);
    rotated.copyTo(img);
    // Bilinear weights can overshoot by an ulp.
    for (float& v : out.data) v = std::clamp(v, 0.0f, 255.0f);
  }
  return out;
}

InputStack augment(const InputStack& stack, std::mt19937_64& rng, double max_angle_deg) {
  return apply_augment(stack, sample_augment(rng, max_angle_deg));
}

cv::Mat read_rgb(const fs::path& file) {
  cv::Mat bgr = cv::imread(file.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw MissingResource(fmt::format("cannot read image '{}'", file.string()));
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  return rgb;
}

FramePatches extract_patches(const cv::Mat& rgb_frame, FaceDetector& detector,
                             depth::DepthEstimator& estimator, const PrepareOptions& options,
                             const depth::DepthMap* precomputed_depth, depth::DepthMap* depth_out) {
  if (rgb_frame.empty() || rgb_frame.type() != CV_8UC3) {
    throw ShapeError("frame must be a non-empty 8-bit RGB image");
  }
  FramePatches out;
  cv::Mat frame = rgb_frame;
  const int crop = options.crop_size;
  if (frame.rows < crop || frame.cols < crop) {
    if (!options.allow_upscale) {
      throw UpstreamTooSmall(fmt::format("frame {}x{} is smaller than the {}x{} crop", frame.rows,
                                         frame.cols, crop, crop));
    }
    out.upscale = static_cast<double>(crop) / std::min(frame.rows, frame.cols);
    cv::Mat big;
    cv::resize(frame, big,
               cv::Size(std::max(crop, static_cast<int>(std::ceil(frame.cols * out.upscale))),
                        std::max(crop, static_cast<int>(std::ceil(frame.rows * out.upscale)))),
               0, 0, cv::INTER_LINEAR);
    frame = big;
  }
  out.box = detect_face(detector, frame);
  const depth::DepthMap map =
      precomputed_depth ? *precomputed_depth : depth::estimate_depth(estimator, frame);
  out.window = crop_window(frame.rows, frame.cols, out.box, crop);
  out.rgb = crop_face_patch(frame, out.window);
  out.depth = align_depth_crop(map, frame.rows, frame.cols, out.window);
  if (depth_out) *depth_out = map;
  return out;
}

namespace {

std::string percent_encode(const std::string& s) {
  std::string out;
  for (unsigned char ch : s) {
    if (std::isalnum(ch) || ch == '-' || ch == '.') {
      out.push_back(static_cast<char>(ch));
    } else {
      out += fmt::format("%{:02X}", ch);
    }
  }
  return out;
}

std::string read_file(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw MissingResource(fmt::format("cannot open '{}'", file.string()));
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

PatchCache::PatchCache(fs::path root) : root_(std::move(root)) {}

std::string PatchCache::key(const Provenance& p) {
  return percent_encode(p.video_id) + "_" + std::to_string(p.frame_index);
}

fs::path PatchCache::stack_path(ChannelConfig config, const Provenance& p) const {
  return root_ / "patches" / to_string(config) / "noaug" / (key(p) + ".bin");
}

fs::path PatchCache::depth_path(const Provenance& p) const {
  return root_ / "depth" / (key(p) + ".depth.png");
}

bool PatchCache::contains(ChannelConfig config, const Provenance& p) const {
  const fs::path bin = stack_path(config, p);
  return fs::exists(bin) && fs::exists(fs::path(bin).replace_extension(".json"));
}

void PatchCache::store(const InputStack& stack) const {
  stack.validate();
  std::string bytes(stack.data.size(), '\0');
  for (std::size_t i = 0; i < stack.data.size(); ++i) {
    const float v = stack.data[i];
    if (v != std::round(v)) throw NumericError("only integer-valued stacks can be cached");
    bytes[i] = static_cast<char>(static_cast<std::uint8_t>(v));
  }
  const fs::path bin = stack_path(stack.config, stack.provenance);
  fs::create_directories(bin.parent_path());
  nlohmann::json side = {{"height", stack.size},
                         {"width", stack.size},
                         {"channels", stack.channels()},
                         {"dtype", "uint8"},
                         {"layout", "HWC"},
                         {"config", to_string(stack.config)},
                         {"augmented", false},
                         {"video_id", stack.provenance.video_id},
                         {"frame_index", stack.provenance.frame_index}};
  nn::atomic_write(bin, bytes);
  nn::atomic_write(fs::path(bin).replace_extension(".json"), side.dump(2) + "\n");
}

InputStack PatchCache::load(ChannelConfig config, const Provenance& p) const {
  const fs::path bin = stack_path(config, p);
  const auto side = nlohmann::json::parse(read_file(fs::path(bin).replace_extension(".json")));
  InputStack s;
  s.size = side.at("height").get<int>();
  s.config = parse_channel_config(side.at("config").get<std::string>());
  s.provenance = {side.at("video_id").get<std::string>(), side.at("frame_index").get<std::int64_t>()};
  if (s.config != config || s.provenance != p || side.at("width").get<int>() != s.size ||
      side.at("channels").get<int>() != s.channels()) {
    throw ShapeError(fmt::format("cache sidecar for '{}' does not match its key", bin.string()));
  }
  const std::string bytes = read_file(bin);
  if (bytes.size() != static_cast<std::size_t>(s.size) * s.size * s.channels()) {
    throw ShapeError(fmt::format("cached stack '{}' has the wrong size", bin.string()));
  }
  s.data.resize(bytes.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    s.data[i] = static_cast<std::uint8_t>(bytes[i]);
  }
  return s;
}

std::optional<InputStack> PatchCache::find(ChannelConfig config, const Provenance& p) const {
  if (!contains(config, p)) return std::nullopt;
  return load(config, p);
}

bool PatchCache::has_depth(const Provenance& p) const { return fs::exists(depth_path(p)); }

void PatchCache::store_depth(const Provenance& p, const depth::DepthMap& map) const {
  const fs::path file = depth_path(p);
  fs::create_directories(file.parent_path());
  depth::write_depth_png(file, map);
}

depth::DepthMap PatchCache::load_depth(const Provenance& p) const {
  return depth::read_depth_png(depth_path(p));
}

}  // namespace depthfake::preprocess
