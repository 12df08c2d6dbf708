#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include <json.hpp>

namespace depthfake {

enum class Label { Real, Fake };

enum class ManipulationClass { Original, DF, F2F, FS, NT };

inline constexpr ManipulationClass kFakeClasses[] = {
    ManipulationClass::DF, ManipulationClass::F2F, ManipulationClass::FS,
    ManipulationClass::NT};

enum class ChannelConfig { RGB, Gray, RGBD, GrayD };

inline constexpr ChannelConfig kAllChannelConfigs[] = {
    ChannelConfig::Gray, ChannelConfig::GrayD, ChannelConfig::RGB,
    ChannelConfig::RGBD};

constexpr int channel_count(ChannelConfig c) {
  switch (c) {
    case ChannelConfig::RGB: return 3;
    case ChannelConfig::Gray: return 1;
    case ChannelConfig::RGBD: return 4;
    case ChannelConfig::GrayD: return 2;
  }
  return 0;
}

constexpr bool has_depth(ChannelConfig c) {
  return c == ChannelConfig::RGBD || c == ChannelConfig::GrayD;
}

enum class Split { Unassigned, Train, Val, Test };

enum class Backbone { ResNet50, MobileNetV1, Xception, TinyConv };

constexpr Label label_for(ManipulationClass m) {
  return m == ManipulationClass::Original ? Label::Real : Label::Fake;
}

std::string_view to_string(Label v);
std::string_view to_string(ManipulationClass v);
std::string_view to_string(ChannelConfig v);
std::string_view to_string(Split v);
std::string_view to_string(Backbone v);

// Parsers accept the canonical upper-case names (case-insensitive) and throw
// ConfigError otherwise.
Label parse_label(std::string_view s);
ManipulationClass parse_manipulation(std::string_view s);
ChannelConfig parse_channel_config(std::string_view s);
Split parse_split(std::string_view s);
Backbone parse_backbone(std::string_view s);

// Pixel-space face rectangle in source frame coordinates.
struct FaceBox {
  int x = 0;
  int y = 0;
  int width = 0;
  int height = 0;

  int area() const { return width * height; }
  bool degenerate() const { return width <= 0 || height <= 0; }
  // Continuous center with pixel centers at integer coordinates.
  double center_x() const { return x + (width - 1) / 2.0; }
  double center_y() const { return y + (height - 1) / 2.0; }
  bool within(int frame_h, int frame_w) const {
    return x >= 0 && y >= 0 && x + width <= frame_w && y + height <= frame_h;
  }
  bool operator==(const FaceBox&) const = default;
};

struct FrameRecord {
  std::string video_id;
  std::int64_t frame_index = 0;
  std::filesystem::path image_path;
  Label label = Label::Real;
  ManipulationClass manipulation = ManipulationClass::Original;
  Split split = Split::Unassigned;

  bool operator==(const FrameRecord&) const = default;
};

enum class LrSchedule { InverseTime, Step };

struct RunConfig {
  Backbone backbone = Backbone::TinyConv;
  ChannelConfig channel_config = ChannelConfig::RGBD;
  int epochs = 25;
  int batch_size = 32;
  double lr0 = 0.01;
  double lr_decay = 0.1;
  LrSchedule lr_schedule = LrSchedule::InverseTime;
  int lr_step_epochs = 10;  // only used by LrSchedule::Step
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-7;
  std::uint64_t seed = 0;
  int crop_size = 224;
  double rotation_deg = 10.0;
  bool pretrained = true;  // ignored for TinyConv
  bool freeze_backbone = false;
  bool balance_classes = true;
  bool augment = true;  // flip + rotation on TRAIN batches

  // Throws ConfigError naming the offending field (prefixed by `path`).
  void validate(std::string_view path = "run") const;
  bool operator==(const RunConfig&) const = default;
};

void to_json(nlohmann::json& j, const FrameRecord& r);
void from_json(const nlohmann::json& j, FrameRecord& r);
void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);
void to_json(nlohmann::json& j, const FaceBox& b);
void from_json(const nlohmann::json& j, FaceBox& b);

}  // namespace depthfake
