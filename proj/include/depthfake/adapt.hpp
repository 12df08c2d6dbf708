#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "depthfake/backbones.hpp"
#include "depthfake/nn/graph.hpp"
#include "depthfake/types.hpp"

namespace depthfake::adapt {

// First convolution of a backbone, HWIO layout [kh, kw, in, filters].
struct FirstLayerKernel {
  int kernel_h = 0;
  int kernel_w = 0;
  int in_channels = 0;
  int filters = 0;
  std::vector<float> weights;
  std::vector<float> bias;  // empty when the layer has no bias

  float at(int ky, int kx, int c, int f) const {
    return weights[((static_cast<std::size_t>(ky) * kernel_w + kx) * in_channels + c) * filters + f];
  }
  float& at(int ky, int kx, int c, int f) {
    return weights[((static_cast<std::size_t>(ky) * kernel_w + kx) * in_channels + c) * filters + f];
  }
  void validate() const;
  bool operator==(const FirstLayerKernel&) const = default;
};

// Re-shapes a 3-channel first-layer kernel for `target`:
//   RGB   -> unchanged copy
//   RGBD  -> [R, G, B, mean(R, G, B)]
//   GRAY  -> [mean(R, G, B)]
//   GRAYD -> [mean(R, G, B), mean(R, G, B)]
// The bias is carried over unchanged.
FirstLayerKernel adapt_first_layer(const FirstLayerKernel& kernel3, ChannelConfig target);

// Kernel dump for cross-implementation golden tests:
//   "DFKERNEL" | u32 version | u32 kh | u32 kw | u32 in | u32 filters |
//   u32 has_bias | f32 weights[kh*kw*in*filters] | f32 bias[filters]?
// little-endian throughout.
void write_kernel_dump(const std::filesystem::path& file, const FirstLayerKernel& kernel);
FirstLayerKernel read_kernel_dump(const std::filesystem::path& file);

template <typename T>
FirstLayerKernel extract_first_layer(const nn::Graph<T>& graph);
template <typename T>
void install_first_layer(nn::Graph<T>& graph, const FirstLayerKernel& kernel);

template <typename T>
struct AdaptedBackbone {
  Backbone architecture = Backbone::TinyConv;
  ChannelConfig channel_config = ChannelConfig::RGB;
  bool pretrained = false;
  nn::Graph<T> graph;

  int in_channels() const { return graph.input_channels(); }
};

// Directory holding converted ImageNet weights: $DEPTHFAKE_WEIGHTS_DIR, else
// ~/.cache/depthfake/weights.
std::filesystem::path weights_dir();
// <weights_dir>/<backbone>_imagenet.dfw, e.g. xception_imagenet.dfw.
std::filesystem::path pretrained_weights_path(Backbone backbone);

// Builds the classifier for `cfg`. Pretrained backbones load 3-channel
// ImageNet weights and go through adapt_first_layer; the head is always
// initialized from cfg.seed. TinyConv is never pretrained. Throws
// MissingResource naming the expected path when weights are absent.
AdaptedBackbone<float> build_classifier(const RunConfig& cfg);

// Prefix of every parameter outside the first convolution and the head.
std::vector<std::string> non_backbone_prefixes(const nn::Graph<float>& graph);

// Freezes (or unfreezes) every parameter except the head.
template <typename T>
void set_backbone_trainable(nn::Graph<T>& graph, bool trainable);

}  // namespace depthfake::adapt
