#include "depthfake/types.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <utility>

#include <fmt/format.h>

#include "depthfake/errors.hpp"

namespace depthfake {
namespace {

template <typename E, std::size_t N>
using NameTable = std::array<std::pair<E, std::string_view>, N>;

constexpr NameTable<Label, 2> kLabelNames{{{Label::Real, "REAL"}, {Label::Fake, "FAKE"}}};

constexpr NameTable<ManipulationClass, 5> kManipulationNames{{
    {ManipulationClass::Original, "ORIGINAL"},
    {ManipulationClass::DF, "DF"},
    {ManipulationClass::F2F, "F2F"},
    {ManipulationClass::FS, "FS"},
    {ManipulationClass::NT, "NT"},
}};

constexpr NameTable<ChannelConfig, 4> kChannelNames{{
    {ChannelConfig::RGB, "RGB"},
    {ChannelConfig::Gray, "GRAY"},
    {ChannelConfig::RGBD, "RGBD"},
    {ChannelConfig::GrayD, "GRAYD"},
}};

constexpr NameTable<Split, 4> kSplitNames{{
    {Split::Unassigned, "UNASSIGNED"},
    {Split::Train, "TRAIN"},
    {Split::Val, "VAL"},
    {Split::Test, "TEST"},
}};

constexpr NameTable<Backbone, 4> kBackboneNames{{
    {Backbone::ResNet50, "RESNET50"},
    {Backbone::MobileNetV1, "MOBILENET_V1"},
    {Backbone::Xception, "XCEPTION"},
    {Backbone::TinyConv, "TINYCONV"},
}};

constexpr NameTable<LrSchedule, 2> kScheduleNames{{
    {LrSchedule::InverseTime, "inverse_time"},
    {LrSchedule::Step, "step"},
}};

bool iequals(std::string_view a, std::string_view b) {
  return std::ranges::equal(a, b, [](char x, char y) {
    return std::toupper(static_cast<unsigned char>(x)) ==
           std::toupper(static_cast<unsigned char>(y));
  });
}

template <typename E, std::size_t N>
std::string_view name_of(const NameTable<E, N>& table, E v) {
  for (const auto& [e, name] : table) {
    if (e == v) return name;
  }
  return "?";
}

template <typename E, std::size_t N>
E parse_from(const NameTable<E, N>& table, std::string_view s, std::string_view what) {
  for (const auto& [e, name] : table) {
    if (iequals(name, s)) return e;
  }
  std::string allowed;
  for (const auto& [e, name] : table) {
    if (!allowed.empty()) allowed += ", ";
    allowed += name;
  }
  throw ConfigError(fmt::format("unknown {} '{}' (expected one of: {})", what, s, allowed));
}

}  // namespace

std::string_view to_string(Label v) { return name_of(kLabelNames, v); }
std::string_view to_string(ManipulationClass v) { return name_of(kManipulationNames, v); }
std::string_view to_string(ChannelConfig v) { return name_of(kChannelNames, v); }
std::string_view to_string(Split v) { return name_of(kSplitNames, v); }
std::string_view to_string(Backbone v) { return name_of(kBackboneNames, v); }

Label parse_label(std::string_view s) { return parse_from(kLabelNames, s, "label"); }
ManipulationClass parse_manipulation(std::string_view s) {
  return parse_from(kManipulationNames, s, "manipulation class");
}
ChannelConfig parse_channel_config(std::string_view s) {
  return parse_from(kChannelNames, s, "channel config");
}
Split parse_split(std::string_view s) { return parse_from(kSplitNames, s, "split"); }
Backbone parse_backbone(std::string_view s) { return parse_from(kBackboneNames, s, "backbone"); }

void RunConfig::validate(std::string_view path) const {
  auto fail = [&](std::string_view field, std::string_view why) {
    throw ConfigError(fmt::format("{}.{}: {}", path, field, why));
  };
  if (epochs <= 0) fail("epochs", "must be > 0");
  if (batch_size <= 0) fail("batch_size", "must be > 0");
  if (crop_size <= 0) fail("crop_size", "must be > 0");
  if (!(lr0 >= 0.0)) fail("lr0", "must be >= 0");
  if (!(lr_decay >= 0.0)) fail("lr_decay", "must be >= 0");
  if (lr_step_epochs <= 0) fail("lr_step_epochs", "must be > 0");
  if (!(beta1 > 0.0 && beta1 < 1.0)) fail("beta1", "must lie in (0, 1)");
  if (!(beta2 > 0.0 && beta2 < 1.0)) fail("beta2", "must lie in (0, 1)");
  if (!(epsilon > 0.0)) fail("epsilon", "must be > 0");
  if (!(rotation_deg >= 0.0 && rotation_deg <= 180.0)) fail("rotation_deg", "must lie in [0, 180]");
}

void to_json(nlohmann::json& j, const FrameRecord& r) {
  j = nlohmann::json{{"video_id", r.video_id},
                     {"frame_index", r.frame_index},
                     {"image_path", r.image_path.generic_string()},
                     {"label", to_string(r.label)},
                     {"manipulation", to_string(r.manipulation)},
                     {"split", to_string(r.split)}};
}

void from_json(const nlohmann::json& j, FrameRecord& r) {
  r.video_id = j.at("video_id").get<std::string>();
  r.frame_index = j.at("frame_index").get<std::int64_t>();
  r.image_path = j.at("image_path").get<std::string>();
  r.label = parse_label(j.at("label").get<std::string>());
  r.manipulation = parse_manipulation(j.at("manipulation").get<std::string>());
  r.split = parse_split(j.value("split", std::string("UNASSIGNED")));
}

void to_json(nlohmann::json& j, const RunConfig& c) {
  j = nlohmann::json{{"backbone", to_string(c.backbone)},
                     {"channel_config", to_string(c.channel_config)},
                     {"epochs", c.epochs},
                     {"batch_size", c.batch_size},
                     {"lr0", c.lr0},
                     {"lr_decay", c.lr_decay},
                     {"lr_schedule", name_of(kScheduleNames, c.lr_schedule)},
                     {"lr_step_epochs", c.lr_step_epochs},
                     {"beta1", c.beta1},
                     {"beta2", c.beta2},
                     {"epsilon", c.epsilon},
                     {"seed", c.seed},
                     {"crop_size", c.crop_size},
                     {"rotation_deg", c.rotation_deg},
                     {"pretrained", c.pretrained},
                     {"freeze_backbone", c.freeze_backbone},
                     {"balance_classes", c.balance_classes},
                     {"augment", c.augment}};
}

void from_json(const nlohmann::json& j, RunConfig& c) {
  RunConfig d;
  c.backbone = parse_backbone(j.value("backbone", std::string(to_string(d.backbone))));
  c.channel_config =
      parse_channel_config(j.value("channel_config", std::string(to_string(d.channel_config))));
  c.epochs = j.value("epochs", d.epochs);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.lr0 = j.value("lr0", d.lr0);
  c.lr_decay = j.value("lr_decay", d.lr_decay);
  c.lr_schedule = parse_from(kScheduleNames,
                             j.value("lr_schedule", std::string(name_of(kScheduleNames, d.lr_schedule))),
                             "lr schedule");
  c.lr_step_epochs = j.value("lr_step_epochs", d.lr_step_epochs);
  c.beta1 = j.value("beta1", d.beta1);
  c.beta2 = j.value("beta2", d.beta2);
  c.epsilon = j.value("epsilon", d.epsilon);
  c.seed = j.value("seed", d.seed);
  c.crop_size = j.value("crop_size", d.crop_size);
  c.rotation_deg = j.value("rotation_deg", d.rotation_deg);
  c.pretrained = j.value("pretrained", d.pretrained);
  c.freeze_backbone = j.value("freeze_backbone", d.freeze_backbone);
  c.balance_classes = j.value("balance_classes", d.balance_classes);
  c.augment = j.value("augment", d.augment);
}

void to_json(nlohmann::json& j, const FaceBox& b) {
  j = nlohmann::json{{"x", b.x}, {"y", b.y}, {"width", b.width}, {"height", b.height}};
}

void from_json(const nlohmann::json& j, FaceBox& b) {
  b.x = j.at("x").get<int>();
  b.y = j.at("y").get<int>();
  b.width = j.at("width").get<int>();
  b.height = j.at("height").get<int>();
}

}  // namespace depthfake
