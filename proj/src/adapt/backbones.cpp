#include "depthfake/backbones.hpp"

#include <fmt/format.h>

#include "depthfake/errors.hpp"

namespace depthfake::adapt {
namespace {

using nn::PadMode;
using nn::Padding;

template <typename T>
class Builder {
 public:
  Builder(nn::Graph<T>& g, int channels) : g_(g), channels_(channels) {}

  int node() const { return node_; }
  int channels() const { return channels_; }
  void at(int node, int channels) {
    node_ = node;
    channels_ = channels;
  }

  int rescale(const InputScaling& s) {
    std::vector<T> scale(s.scale.begin(), s.scale.end());
    std::vector<T> offset(s.offset.begin(), s.offset.end());
    return push(std::make_unique<nn::Rescale<T>>("input_scaling", scale, offset), channels_);
  }
  int conv(const std::string& name, int filters, int kernel, int stride, PadMode mode, bool bias,
           Padding pad = {}) {
    if (g_.first_conv().empty()) g_.set_first_conv(name);
    return push(std::make_unique<nn::Conv2D<T>>(name, channels_, filters, kernel, stride, mode, bias, pad),
                filters);
  }
  int depthwise(const std::string& name, int kernel, int stride, PadMode mode, Padding pad = {}) {
    return push(std::make_unique<nn::DepthwiseConv2D<T>>(name, channels_, kernel, stride, mode, false, pad),
                channels_);
  }
  // Keras SeparableConv2D: depthwise 3x3 then pointwise 1x1, no biases.
  int sepconv(const std::string& name, int filters) {
    depthwise(name + "/depthwise", 3, 1, PadMode::Same);
    return conv(name + "/pointwise", filters, 1, 1, PadMode::Same, false);
  }
  int bn(const std::string& name, double eps = 1e-3) {
    return push(std::make_unique<nn::BatchNorm<T>>(name, channels_, eps), channels_);
  }
  int relu(const std::string& name, T cap = std::numeric_limits<T>::infinity()) {
    return push(std::make_unique<nn::Activation<T>>(name, cap), channels_);
  }
  int maxpool(const std::string& name, int pool, int stride, PadMode mode, Padding pad = {}) {
    return push(std::make_unique<nn::MaxPool<T>>(name, pool, stride, mode, pad), channels_);
  }
  int add(const std::string& name, int a, int b) {
    node_ = g_.add(std::make_unique<nn::Add<T>>(name), std::vector<int>{a, b});
    return node_;
  }
  void head() {
    push(std::make_unique<nn::GlobalAvgPool<T>>("head_gap"), channels_);
    push(std::make_unique<nn::Dense<T>>("head_logit", channels_, 1), 1);
  }

 private:
  int push(std::unique_ptr<nn::Layer<T>> layer, int out_channels) {
    node_ = g_.add(std::move(layer), node_);
    channels_ = out_channels;
    return node_;
  }

  nn::Graph<T>& g_;
  int node_ = nn::Graph<T>::kGraphInput;
  int channels_;
};

template <typename T>
void build_tinyconv(Builder<T>& b) {
  for (const auto& layer : tinyconv_spec().convs) {
    b.conv(layer.name, layer.filters, layer.kernel, layer.stride, PadMode::Same, true);
    b.relu(layer.name + "_relu");
  }
}

template <typename T>
void build_xception(Builder<T>& b) {
  b.conv("block1_conv1", 32, 3, 2, PadMode::Valid, false);
  b.bn("block1_conv1_bn");
  b.relu("block1_conv1_act");
  b.conv("block1_conv2", 64, 3, 1, PadMode::Valid, false);
  b.bn("block1_conv2_bn");
  b.relu("block1_conv2_act");

  // Entry flow: blocks 2-4 with strided 1x1 residual projections.
  const int entry_filters[] = {128, 256, 728};
  for (int i = 0; i < 3; ++i) {
    const std::string block = fmt::format("block{}", i + 2);
    const int filters = entry_filters[i];
    const int in = b.node();
    const int in_c = b.channels();
    b.conv(fmt::format("{}_residual_conv", block), filters, 1, 2, PadMode::Same, false);
    const int residual = b.bn(fmt::format("{}_residual_bn", block));
    b.at(in, in_c);
    if (i > 0) b.relu(block + "_sepconv1_act");
    b.sepconv(block + "_sepconv1", filters);
    b.bn(block + "_sepconv1_bn");
    b.relu(block + "_sepconv2_act");
    b.sepconv(block + "_sepconv2", filters);
    b.bn(block + "_sepconv2_bn");
    b.maxpool(block + "_pool", 3, 2, PadMode::Same);
    b.add(block + "_add", b.node(), residual);
  }

  // Middle flow: eight identity-residual blocks of three separable convs.
  for (int i = 0; i < 8; ++i) {
    const std::string block = fmt::format("block{}", i + 5);
    const int residual = b.node();
    for (int j = 1; j <= 3; ++j) {
      b.relu(fmt::format("{}_sepconv{}_act", block, j));
      b.sepconv(fmt::format("{}_sepconv{}", block, j), 728);
      b.bn(fmt::format("{}_sepconv{}_bn", block, j));
    }
    b.add(block + "_add", b.node(), residual);
  }

  // Exit flow.
  {
    const int in = b.node();
    b.conv("block13_residual_conv", 1024, 1, 2, PadMode::Same, false);
    const int residual = b.bn("block13_residual_bn");
    b.at(in, 728);
    b.relu("block13_sepconv1_act");
    b.sepconv("block13_sepconv1", 728);
    b.bn("block13_sepconv1_bn");
    b.relu("block13_sepconv2_act");
    b.sepconv("block13_sepconv2", 1024);
    b.bn("block13_sepconv2_bn");
    b.maxpool("block13_pool", 3, 2, PadMode::Same);
    b.add("block13_add", b.node(), residual);
  }
  b.sepconv("block14_sepconv1", 1536);
  b.bn("block14_sepconv1_bn");
  b.relu("block14_sepconv1_act");
  b.sepconv("block14_sepconv2", 2048);
  b.bn("block14_sepconv2_bn");
  b.relu("block14_sepconv2_act");
}

template <typename T>
void build_resnet50(Builder<T>& b) {
  constexpr double eps = 1.001e-5;
  b.conv("conv1_conv", 64, 7, 2, PadMode::Explicit, true, Padding{3, 3, 3, 3});
  b.bn("conv1_bn", eps);
  b.relu("conv1_relu");
  b.maxpool("pool1_pool", 3, 2, PadMode::Explicit, Padding{1, 1, 1, 1});

  struct Stage {
    const char* name;
    int filters;
    int blocks;
    int stride;
  };
  const Stage stages[] = {{"conv2", 64, 3, 1}, {"conv3", 128, 4, 2}, {"conv4", 256, 6, 2},
                          {"conv5", 512, 3, 2}};
  for (const auto& stage : stages) {
    for (int blk = 1; blk <= stage.blocks; ++blk) {
      const std::string p = fmt::format("{}_block{}", stage.name, blk);
      const int stride = blk == 1 ? stage.stride : 1;
      const int in = b.node();
      const int in_c = b.channels();
      int shortcut = in;
      if (blk == 1) {
        b.conv(p + "_0_conv", 4 * stage.filters, 1, stride, PadMode::Valid, true);
        shortcut = b.bn(p + "_0_bn", eps);
        b.at(in, in_c);
      }
      b.conv(p + "_1_conv", stage.filters, 1, stride, PadMode::Valid, true);
      b.bn(p + "_1_bn", eps);
      b.relu(p + "_1_relu");
      b.conv(p + "_2_conv", stage.filters, 3, 1, PadMode::Same, true);
      b.bn(p + "_2_bn", eps);
      b.relu(p + "_2_relu");
      b.conv(p + "_3_conv", 4 * stage.filters, 1, 1, PadMode::Valid, true);
      b.bn(p + "_3_bn", eps);
      b.add(p + "_add", b.node(), shortcut);
      b.relu(p + "_out");
    }
  }
}

template <typename T>
void build_mobilenet_v1(Builder<T>& b) {
  const Padding pad_br{0, 1, 0, 1};
  b.conv("conv1", 32, 3, 2, PadMode::Explicit, false, pad_br);
  b.bn("conv1_bn");
  b.relu("conv1_relu", T(6));
  struct Block {
    int filters;
    int stride;
  };
  const Block blocks[] = {{64, 1},  {128, 2}, {128, 1}, {256, 2}, {256, 1},  {512, 2},  {512, 1},
                          {512, 1}, {512, 1}, {512, 1}, {512, 1}, {1024, 2}, {1024, 1}};
  int id = 1;
  for (const auto& blk : blocks) {
    if (blk.stride == 1) {
      b.depthwise(fmt::format("conv_dw_{}", id), 3, 1, PadMode::Same);
    } else {
      b.depthwise(fmt::format("conv_dw_{}", id), 3, blk.stride, PadMode::Explicit, pad_br);
    }
    b.bn(fmt::format("conv_dw_{}_bn", id));
    b.relu(fmt::format("conv_dw_{}_relu", id), T(6));
    b.conv(fmt::format("conv_pw_{}", id), blk.filters, 1, 1, PadMode::Same, false);
    b.bn(fmt::format("conv_pw_{}_bn", id));
    b.relu(fmt::format("conv_pw_{}_relu", id), T(6));
    ++id;
  }
}

}  // namespace

TinyConvSpec tinyconv_spec() {
  return TinyConvSpec{{{"conv1", 3, 16, 2}, {"conv2", 3, 32, 2}, {"conv3", 3, 64, 2}}, 1};
}

std::int64_t TinyConvSpec::parameter_count(int in_channels) const {
  std::int64_t total = 0;
  int prev = in_channels;
  for (const auto& c : convs) {
    total += static_cast<std::int64_t>(c.filters) * (c.kernel * c.kernel * prev + 1);
    prev = c.filters;
  }
  return total + static_cast<std::int64_t>(prev + 1) * head_units;
}

int TinyConvSpec::feature_extent(int input) const {
  int extent = input;
  for (const auto& c : convs) extent = (extent + c.stride - 1) / c.stride;
  return extent;
}

InputScaling input_scaling(Backbone backbone, int in_channels) {
  if (in_channels < 1 || in_channels > 4) {
    throw ConfigError(fmt::format("unsupported input channel count {}", in_channels));
  }
  const auto n = static_cast<std::size_t>(in_channels);
  switch (backbone) {
    case Backbone::TinyConv:
      return {std::vector<float>(n, 1.0f / 255.0f), std::vector<float>(n, 0.0f)};
    case Backbone::Xception:
    case Backbone::MobileNetV1:
      return {std::vector<float>(n, 1.0f / 127.5f), std::vector<float>(n, -1.0f)};
    case Backbone::ResNet50: {
      // ImageNet channel means (RGB); gray and depth channels use their average.
      const float rgb[3] = {123.68f, 116.779f, 103.939f};
      const float avg = (rgb[0] + rgb[1] + rgb[2]) / 3.0f;
      std::vector<float> offset(n, -avg);
      if (in_channels >= 3) {
        for (int c = 0; c < 3; ++c) offset[c] = -rgb[c];
      }
      return {std::vector<float>(n, 1.0f), offset};
    }
  }
  throw ConfigError("unknown backbone");
}

template <typename T>
nn::Graph<T> build_architecture(Backbone backbone, int in_channels) {
  nn::Graph<T> g;
  g.set_input_channels(in_channels);
  Builder<T> b(g, in_channels);
  b.rescale(input_scaling(backbone, in_channels));
  switch (backbone) {
    case Backbone::TinyConv: build_tinyconv(b); break;
    case Backbone::Xception: build_xception(b); break;
    case Backbone::ResNet50: build_resnet50(b); break;
    case Backbone::MobileNetV1: build_mobilenet_v1(b); break;
  }
  b.head();
  return g;
}

template nn::Graph<float> build_architecture(Backbone, int);
template nn::Graph<double> build_architecture(Backbone, int);

}  // namespace depthfake::adapt
