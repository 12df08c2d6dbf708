#pragma once

#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "depthfake/nn/tensor.hpp"

namespace depthfake::nn {

enum class Mode { Train, Infer };

enum class LayerKind {
  Rescale,
  Conv2D,
  DepthwiseConv2D,
  BatchNorm,
  Activation,
  MaxPool,
  Add,
  GlobalAvgPool,
  Dense,
};

std::string_view to_string(LayerKind k);

enum class Init { GlorotUniform, Zeros, Ones };

template <typename T>
struct Param {
  std::string name;
  std::vector<int> dims;
  Buffer<T> value;
  Buffer<T> grad;
  bool trainable = true;
  Init init = Init::Zeros;
  int fan_in = 0;
  int fan_out = 0;

  Param(std::string n, std::vector<int> d, Init i, bool train = true, int fin = 0, int fout = 0);
  std::size_t size() const { return value.size(); }
};

// Explicit spatial padding. `same` follows the TensorFlow convention (extra
// row/column at the bottom/right).
struct Padding {
  int top = 0;
  int bottom = 0;
  int left = 0;
  int right = 0;

  static Padding same(int in_h, int in_w, int kernel, int stride);
  static Padding none() { return {}; }
};

enum class PadMode { Same, Valid, Explicit };

// Shape-level description of one layer, used for FLOPS counting and
// reporting. Unresolved shapes carry zeros.
struct LayerDesc {
  std::string name;
  LayerKind kind = LayerKind::Add;
  std::vector<Shape> inputs;
  Shape output;
  int kernel = 0;
  int stride = 1;
  bool bias = false;
  std::int64_t params = 0;
};

template <typename T>
class Layer {
 public:
  explicit Layer(std::string name) : name_(std::move(name)) {}
  virtual ~Layer() = default;
  Layer(const Layer&) = delete;
  Layer& operator=(const Layer&) = delete;

  const std::string& name() const { return name_; }
  virtual LayerKind kind() const = 0;
  // Throws ShapeError if the inputs are incompatible with the layer.
  virtual Shape output_shape(std::span<const Shape> in) const = 0;
  virtual void forward(std::span<const Tensor<T>* const> in, Tensor<T>& out, Mode mode) = 0;
  // Accumulates into grad_in (entries may be null when not needed) and into
  // parameter gradients. `out` is the tensor produced by the last forward.
  virtual void backward(std::span<const Tensor<T>* const> in, const Tensor<T>& out,
                        const Tensor<T>& grad_out, std::span<Tensor<T>* const> grad_in) = 0;
  virtual std::vector<Param<T>*> params() { return {}; }
  virtual LayerDesc describe(std::span<const Shape> in) const;

 private:
  std::string name_;
};

// Per-channel affine map x * scale + offset (input normalization baked into
// the graph).
template <typename T>
class Rescale final : public Layer<T> {
 public:
  Rescale(std::string name, std::vector<T> scale, std::vector<T> offset);
  LayerKind kind() const override { return LayerKind::Rescale; }
  Shape output_shape(std::span<const Shape> in) const override;
  void forward(std::span<const Tensor<T>* const> in, Tensor<T>& out, Mode mode) override;
  void backward(std::span<const Tensor<T>* const> in, const Tensor<T>& out, const Tensor<T>& grad_out,
                std::span<Tensor<T>* const> grad_in) override;
  const std::vector<T>& scale() const { return scale_; }
  const std::vector<T>& offset() const { return offset_; }

 private:
  std::vector<T> scale_;
  std::vector<T> offset_;
};

// Dense convolution, HWIO kernel [k, k, in, out].
template <typename T>
class Conv2D final : public Layer<T> {
 public:
  Conv2D(std::string name, int in_channels, int filters, int kernel, int stride, PadMode mode,
         bool use_bias, Padding explicit_padding = {});
  LayerKind kind() const override { return LayerKind::Conv2D; }
  Shape output_shape(std::span<const Shape> in) const override;
  void forward(std::span<const Tensor<T>* const> in, Tensor<T>& out, Mode mode) override;
  void backward(std::span<const Tensor<T>* const> in, const Tensor<T>& out, const Tensor<T>& grad_out,
                std::span<Tensor<T>* const> grad_in) override;
  std::vector<Param<T>*> params() override;
  LayerDesc describe(std::span<const Shape> in) const override;

  int in_channels() const { return in_channels_; }
  int filters() const { return filters_; }
  int kernel_size() const { return kernel_; }
  int stride() const { return stride_; }
  Param<T>& kernel() { return kernel_param_; }
  const Param<T>& kernel() const { return kernel_param_; }
  Param<T>* bias() { return bias_param_ ? bias_param_.get() : nullptr; }
  const Param<T>* bias() const { return bias_param_ ? bias_param_.get() : nullptr; }

 private:
  Padding padding_for(const Shape& in) const;
  void im2col(const Tensor<T>& x, const Padding& pad, const Shape& out, Buffer<T>& cols) const;
  void col2im(const Buffer<T>& cols, const Padding& pad, const Shape& out, Tensor<T>& dx) const;
  bool is_pointwise() const;

  int in_channels_;
  int filters_;
  int kernel_;
  int stride_;
  PadMode mode_;
  Padding explicit_;
  Param<T> kernel_param_;
  std::unique_ptr<Param<T>> bias_param_;
  Buffer<T> cols_;
  Buffer<T> dcols_;
};

// Depthwise convolution with depth multiplier 1, kernel [k, k, channels].
template <typename T>
class DepthwiseConv2D final : public Layer<T> {
 public:
  DepthwiseConv2D(std::string name, int channels, int kernel, int stride, PadMode mode,
                  bool use_bias, Padding explicit_padding = {});
  LayerKind kind() const override { return LayerKind::DepthwiseConv2D; }
  Shape output_shape(std::span<const Shape> in) const override;
  void forward(std::span<const Tensor<T>* const> in, Tensor<T>& out, Mode mode) override;
  void backward(std::span<const Tensor<T>* const> in, const Tensor<T>& out, const Tensor<T>& grad_out,
                std::span<Tensor<T>* const> grad_in) override;
  std::vector<Param<T>*> params() override;
  LayerDesc describe(std::span<const Shape> in) const override;

 private:
  Padding padding_for(const Shape& in) const;

  int channels_;
  int kernel_;
  int stride_;
  PadMode mode_;
  Padding explicit_;
  Param<T> kernel_param_;
  std::unique_ptr<Param<T>> bias_param_;
};

// Batch normalization over N, H, W. Train mode normalizes with batch
// statistics and updates the moving averages.
template <typename T>
class BatchNorm final : public Layer<T> {
 public:
  BatchNorm(std::string name, int channels, double epsilon = 1e-3, double momentum = 0.99);
  LayerKind kind() const override { return LayerKind::BatchNorm; }
  Shape output_shape(std::span<const Shape> in) const override;
  void forward(std::span<const Tensor<T>* const> in, Tensor<T>& out, Mode mode) override;
  void backward(std::span<const Tensor<T>* const> in, const Tensor<T>& out, const Tensor<T>& grad_out,
                std::span<Tensor<T>* const> grad_in) override;
  std::vector<Param<T>*> params() override;
  LayerDesc describe(std::span<const Shape> in) const override;

 private:
  int channels_;
  double epsilon_;
  double momentum_;
  Param<T> gamma_;
  Param<T> beta_;
  Param<T> moving_mean_;
  Param<T> moving_variance_;
  Mode last_mode_ = Mode::Infer;
  std::vector<T> mean_;
  std::vector<T> inv_std_;
};

// ReLU, optionally capped (ReLU6 when cap = 6).
template <typename T>
class Activation final : public Layer<T> {
 public:
  explicit Activation(std::string name, T cap = std::numeric_limits<T>::infinity())
      : Layer<T>(std::move(name)), cap_(cap) {}
  LayerKind kind() const override { return LayerKind::Activation; }
  Shape output_shape(std::span<const Shape> in) const override;
  void forward(std::span<const Tensor<T>* const> in, Tensor<T>& out, Mode mode) override;
  void backward(std::span<const Tensor<T>* const> in, const Tensor<T>& out, const Tensor<T>& grad_out,
                std::span<Tensor<T>* const> grad_in) override;

 private:
  T cap_;
};

// Max pooling; padded positions never win.
template <typename T>
class MaxPool final : public Layer<T> {
 public:
  MaxPool(std::string name, int pool, int stride, PadMode mode, Padding explicit_padding = {});
  LayerKind kind() const override { return LayerKind::MaxPool; }
  Shape output_shape(std::span<const Shape> in) const override;
  void forward(std::span<const Tensor<T>* const> in, Tensor<T>& out, Mode mode) override;
  void backward(std::span<const Tensor<T>* const> in, const Tensor<T>& out, const Tensor<T>& grad_out,
                std::span<Tensor<T>* const> grad_in) override;
  LayerDesc describe(std::span<const Shape> in) const override;

 private:
  Padding padding_for(const Shape& in) const;

  int pool_;
  int stride_;
  PadMode mode_;
  Padding explicit_;
};

template <typename T>
class Add final : public Layer<T> {
 public:
  using Layer<T>::Layer;
  LayerKind kind() const override { return LayerKind::Add; }
  Shape output_shape(std::span<const Shape> in) const override;
  void forward(std::span<const Tensor<T>* const> in, Tensor<T>& out, Mode mode) override;
  void backward(std::span<const Tensor<T>* const> in, const Tensor<T>& out, const Tensor<T>& grad_out,
                std::span<Tensor<T>* const> grad_in) override;
};

template <typename T>
class GlobalAvgPool final : public Layer<T> {
 public:
  using Layer<T>::Layer;
  LayerKind kind() const override { return LayerKind::GlobalAvgPool; }
  Shape output_shape(std::span<const Shape> in) const override;
  void forward(std::span<const Tensor<T>* const> in, Tensor<T>& out, Mode mode) override;
  void backward(std::span<const Tensor<T>* const> in, const Tensor<T>& out, const Tensor<T>& grad_out,
                std::span<Tensor<T>* const> grad_in) override;
};

// Fully connected layer on (N, 1, 1, in) features, kernel [in, out].
template <typename T>
class Dense final : public Layer<T> {
 public:
  Dense(std::string name, int in_features, int out_features);
  LayerKind kind() const override { return LayerKind::Dense; }
  Shape output_shape(std::span<const Shape> in) const override;
  void forward(std::span<const Tensor<T>* const> in, Tensor<T>& out, Mode mode) override;
  void backward(std::span<const Tensor<T>* const> in, const Tensor<T>& out, const Tensor<T>& grad_out,
                std::span<Tensor<T>* const> grad_in) override;
  std::vector<Param<T>*> params() override;
  LayerDesc describe(std::span<const Shape> in) const override;

 private:
  int in_;
  int out_;
  Param<T> kernel_;
  Param<T> bias_;
};

}  // namespace depthfake::nn
