#include "depthfake/adapt.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "depthfake/errors.hpp"
#include "depthfake/nn/weights.hpp"

namespace fs = std::filesystem;

namespace depthfake::adapt {
namespace {

constexpr char kKernelMagic[8] = {'D', 'F', 'K', 'E', 'R', 'N', 'E', 'L'};
constexpr std::uint32_t kKernelVersion = 1;

template <typename V>
void put(std::string& out, V v) {
  char buf[sizeof(V)];
  std::memcpy(buf, &v, sizeof(V));
  out.append(buf, sizeof(V));
}

std::string backbone_file_stem(Backbone b) {
  switch (b) {
    case Backbone::ResNet50: return "resnet50";
    case Backbone::MobileNetV1: return "mobilenet_v1";
    case Backbone::Xception: return "xception";
    case Backbone::TinyConv: return "tinyconv";
  }
  return "unknown";
}

template <typename T>
nn::Conv2D<T>& first_conv_layer(nn::Graph<T>& graph) {
  auto* layer = dynamic_cast<nn::Conv2D<T>*>(graph.find_layer(graph.first_conv()));
  if (!layer) throw ShapeError("graph has no first convolution");
  return *layer;
}

}  // namespace

void FirstLayerKernel::validate() const {
  if (kernel_h <= 0 || kernel_w <= 0 || filters <= 0) throw ShapeError("empty first-layer kernel");
  if (in_channels < 1 || in_channels > 4) {
    throw ShapeError(fmt::format("first-layer kernel has {} input channels", in_channels));
  }
  const std::size_t n = static_cast<std::size_t>(kernel_h) * kernel_w * in_channels * filters;
  if (weights.size() != n) throw ShapeError("first-layer kernel size does not match its shape");
  if (!bias.empty() && bias.size() != static_cast<std::size_t>(filters)) {
    throw ShapeError("first-layer bias size does not match the filter count");
  }
  for (float w : weights) {
    if (!std::isfinite(w)) throw NumericError("first-layer kernel holds non-finite values");
  }
}

FirstLayerKernel adapt_first_layer(const FirstLayerKernel& kernel3, ChannelConfig target) {
  if (kernel3.in_channels != 3) {
    throw ShapeError(fmt::format("channel adaptation needs a 3-channel kernel, got {}",
                                 kernel3.in_channels));
  }
  kernel3.validate();
  FirstLayerKernel out = kernel3;
  out.in_channels = channel_count(target);
  out.weights.assign(static_cast<std::size_t>(out.kernel_h) * out.kernel_w * out.in_channels *
                         out.filters,
                     0.0f);
  for (int ky = 0; ky < out.kernel_h; ++ky) {
    for (int kx = 0; kx < out.kernel_w; ++kx) {
      for (int f = 0; f < out.filters; ++f) {
        const float r = kernel3.at(ky, kx, 0, f);
        const float g = kernel3.at(ky, kx, 1, f);
        const float b = kernel3.at(ky, kx, 2, f);
        const float mean = (r + g + b) / 3.0f;
        switch (target) {
          case ChannelConfig::RGB:
            out.at(ky, kx, 0, f) = r;
            out.at(ky, kx, 1, f) = g;
            out.at(ky, kx, 2, f) = b;
            break;
          case ChannelConfig::RGBD:
            out.at(ky, kx, 0, f) = r;
            out.at(ky, kx, 1, f) = g;
            out.at(ky, kx, 2, f) = b;
            out.at(ky, kx, 3, f) = mean;
            break;
          case ChannelConfig::Gray:
            out.at(ky, kx, 0, f) = mean;
            break;
          case ChannelConfig::GrayD:
            out.at(ky, kx, 0, f) = mean;
            out.at(ky, kx, 1, f) = mean;
            break;
        }
      }
    }
  }
  return out;
}

void write_kernel_dump(const fs::path& file, const FirstLayerKernel& kernel) {
  kernel.validate();
  std::string out(kKernelMagic, sizeof(kKernelMagic));
  put(out, kKernelVersion);
  put(out, static_cast<std::uint32_t>(kernel.kernel_h));
  put(out, static_cast<std::uint32_t>(kernel.kernel_w));
  put(out, static_cast<std::uint32_t>(kernel.in_channels));
  put(out, static_cast<std::uint32_t>(kernel.filters));
  put(out, static_cast<std::uint32_t>(kernel.bias.empty() ? 0 : 1));
  for (float w : kernel.weights) put(out, w);
  for (float b : kernel.bias) put(out, b);
  nn::atomic_write(file, out);
}

FirstLayerKernel read_kernel_dump(const fs::path& file) {
  static_assert(std::endian::native == std::endian::little);
  std::ifstream in(file, std::ios::binary);
  if (!in) throw MissingResource(fmt::format("cannot open kernel dump '{}'", file.string()));
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string bytes = ss.str();
  std::size_t pos = 0;
  auto take = [&](void* dst, std::size_t n) {
    if (pos + n > bytes.size()) throw Error(fmt::format("kernel dump '{}' is truncated", file.string()));
    std::memcpy(dst, bytes.data() + pos, n);
    pos += n;
  };
  char magic[8];
  take(magic, sizeof(magic));
  if (std::memcmp(magic, kKernelMagic, sizeof(magic)) != 0) {
    throw Error(fmt::format("'{}' is not a kernel dump", file.string()));
  }
  std::uint32_t header[6];
  take(header, sizeof(header));
  if (header[0] != kKernelVersion) throw Error("unsupported kernel dump version");
  FirstLayerKernel k;
  k.kernel_h = static_cast<int>(header[1]);
  k.kernel_w = static_cast<int>(header[2]);
  k.in_channels = static_cast<int>(header[3]);
  k.filters = static_cast<int>(header[4]);
  k.weights.resize(static_cast<std::size_t>(k.kernel_h) * k.kernel_w * k.in_channels * k.filters);
  take(k.weights.data(), k.weights.size() * sizeof(float));
  if (header[5] != 0) {
    k.bias.resize(k.filters);
    take(k.bias.data(), k.bias.size() * sizeof(float));
  }
  if (pos != bytes.size()) throw Error(fmt::format("kernel dump '{}' has trailing bytes", file.string()));
  k.validate();
  return k;
}

template <typename T>
FirstLayerKernel extract_first_layer(const nn::Graph<T>& graph) {
  const auto* layer = dynamic_cast<const nn::Conv2D<T>*>(graph.find_layer(graph.first_conv()));
  if (!layer) throw ShapeError("graph has no first convolution");
  FirstLayerKernel k;
  k.kernel_h = k.kernel_w = layer->kernel_size();
  k.in_channels = layer->in_channels();
  k.filters = layer->filters();
  k.weights.assign(layer->kernel().value.begin(), layer->kernel().value.end());
  if (const auto* b = layer->bias()) k.bias.assign(b->value.begin(), b->value.end());
  return k;
}

template <typename T>
void install_first_layer(nn::Graph<T>& graph, const FirstLayerKernel& kernel) {
  kernel.validate();
  auto& layer = first_conv_layer(graph);
  if (layer.kernel_size() != kernel.kernel_h || layer.kernel_size() != kernel.kernel_w ||
      layer.in_channels() != kernel.in_channels || layer.filters() != kernel.filters) {
    throw ShapeError("kernel shape does not match the graph's first convolution");
  }
  if (kernel.bias.empty() != (layer.bias() == nullptr)) {
    throw ShapeError("kernel bias presence does not match the graph's first convolution");
  }
  std::ranges::transform(kernel.weights, layer.kernel().value.begin(),
                         [](float v) { return static_cast<T>(v); });
  if (auto* b = layer.bias()) {
    std::ranges::transform(kernel.bias, b->value.begin(), [](float v) { return static_cast<T>(v); });
  }
}

fs::path weights_dir() {
  if (const char* env = std::getenv("DEPTHFAKE_WEIGHTS_DIR"); env && *env) return env;
  if (const char* home = std::getenv("HOME"); home && *home) {
    return fs::path(home) / ".cache" / "depthfake" / "weights";
  }
  return fs::path(".cache") / "depthfake" / "weights";
}

fs::path pretrained_weights_path(Backbone backbone) {
  return weights_dir() / (backbone_file_stem(backbone) + "_imagenet.dfw");
}

AdaptedBackbone<float> build_classifier(const RunConfig& cfg) {
  cfg.validate();
  AdaptedBackbone<float> model;
  model.architecture = cfg.backbone;
  model.channel_config = cfg.channel_config;
  const int channels = channel_count(cfg.channel_config);

  const bool pretrained = cfg.pretrained && cfg.backbone != Backbone::TinyConv;
  if (!pretrained) {
    model.graph = build_architecture<float>(cfg.backbone, channels);
    nn::initialize(model.graph, cfg.seed);
    set_backbone_trainable(model.graph, !cfg.freeze_backbone);
    return model;
  }

  const fs::path file = pretrained_weights_path(cfg.backbone);
  if (!fs::exists(file)) {
    throw MissingResource(fmt::format(
        "pretrained {} weights not found at '{}' (set DEPTHFAKE_WEIGHTS_DIR, run "
        "tools/convert_keras_weights.py, or use backbone TINYCONV / run.pretrained=false)",
        to_string(cfg.backbone), file.string()));
  }
  nn::Graph<float> source = build_architecture<float>(cfg.backbone, 3);
  nn::initialize(source, cfg.seed);  // seeds the head, which ImageNet weights lack
  nn::import_params(source, nn::read_weights(file),
                    nn::ImportPolicy{{source.head_prefix()}, /*ignore_unknown=*/false});

  model.pretrained = true;
  if (channels == 3) {
    model.graph = std::move(source);
  } else {
    model.graph = build_architecture<float>(cfg.backbone, channels);
    const std::string skip = model.graph.first_conv() + "/";
    for (auto* p : model.graph.params()) {
      if (p->name.starts_with(skip)) continue;
      const auto* q = source.find_param(p->name);
      if (!q || q->dims != p->dims) {
        throw ShapeError(fmt::format("parameter '{}' does not carry over", p->name));
      }
      p->value = q->value;
    }
    install_first_layer(model.graph, adapt_first_layer(extract_first_layer(source), cfg.channel_config));
  }
  set_backbone_trainable(model.graph, !cfg.freeze_backbone);
  return model;
}

std::vector<std::string> non_backbone_prefixes(const nn::Graph<float>& graph) {
  return {graph.first_conv() + "/", graph.head_prefix()};
}

template <typename T>
void set_backbone_trainable(nn::Graph<T>& graph, bool trainable) {
  for (auto* p : graph.params()) {
    const bool is_statistic =
        p->name.ends_with("/moving_mean") || p->name.ends_with("/moving_variance");
    if (is_statistic) continue;
    p->trainable = p->name.starts_with(graph.head_prefix()) || trainable;
  }
}

template FirstLayerKernel extract_first_layer(const nn::Graph<float>&);
template FirstLayerKernel extract_first_layer(const nn::Graph<double>&);
template void install_first_layer(nn::Graph<float>&, const FirstLayerKernel&);
template void install_first_layer(nn::Graph<double>&, const FirstLayerKernel&);
template void set_backbone_trainable(nn::Graph<float>&, bool);
template void set_backbone_trainable(nn::Graph<double>&, bool);

}  // namespace depthfake::adapt
