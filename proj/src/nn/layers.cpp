#include "depthfake/nn/layers.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include <Eigen/Core>
#include <fmt/format.h>

#include "depthfake/errors.hpp"

namespace depthfake::nn {
namespace {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapRM = Eigen::Map<MatRM<T>>;
template <typename T>
using ConstMapRM = Eigen::Map<const MatRM<T>>;
template <typename T>
using ConstRowVec = Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>;

void require_inputs(std::string_view layer, std::span<const Shape> in, std::size_t n) {
  if (in.size() != n) {
    throw ShapeError(fmt::format("layer '{}' expects {} input(s), got {}", layer, n, in.size()));
  }
}

void require_channels(std::string_view layer, const Shape& s, int c) {
  if (s.c != c) {
    throw ShapeError(fmt::format("layer '{}' expects {} channels, got {}", layer, c, s.c));
  }
}

int pooled_extent(std::string_view layer, int in, int before, int after, int kernel, int stride) {
  const int span = in + before + after - kernel;
  if (span < 0) {
    throw ShapeError(fmt::format("layer '{}': input extent {} too small for kernel {}", layer, in, kernel));
  }
  return span / stride + 1;
}

Padding resolve_padding(PadMode mode, const Padding& explicit_padding, const Shape& in, int kernel,
                        int stride) {
  switch (mode) {
    case PadMode::Same: return Padding::same(in.h, in.w, kernel, stride);
    case PadMode::Valid: return Padding::none();
    case PadMode::Explicit: return explicit_padding;
  }
  return {};
}

}  // namespace

std::string Shape::str() const { return fmt::format("{}x{}x{}x{}", n, h, w, c); }

std::string_view to_string(LayerKind k) {
  switch (k) {
    case LayerKind::Rescale: return "Rescale";
    case LayerKind::Conv2D: return "Conv2D";
    case LayerKind::DepthwiseConv2D: return "DepthwiseConv2D";
    case LayerKind::BatchNorm: return "BatchNorm";
    case LayerKind::Activation: return "Activation";
    case LayerKind::MaxPool: return "MaxPool";
    case LayerKind::Add: return "Add";
    case LayerKind::GlobalAvgPool: return "GlobalAvgPool";
    case LayerKind::Dense: return "Dense";
  }
  return "?";
}

template <typename T>
Param<T>::Param(std::string n, std::vector<int> d, Init i, bool train, int fin, int fout)
    : name(std::move(n)), dims(std::move(d)), trainable(train), init(i), fan_in(fin), fan_out(fout) {
  const std::size_t count =
      std::accumulate(dims.begin(), dims.end(), std::size_t{1},
                      [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
  value.assign(count, init == Init::Ones ? T(1) : T(0));
  grad.assign(count, T(0));
}

Padding Padding::same(int in_h, int in_w, int kernel, int stride) {
  auto axis = [&](int in, int& before, int& after) {
    const int out = (in + stride - 1) / stride;
    const int total = std::max((out - 1) * stride + kernel - in, 0);
    before = total / 2;
    after = total - before;
  };
  Padding p;
  axis(in_h, p.top, p.bottom);
  axis(in_w, p.left, p.right);
  return p;
}

template <typename T>
LayerDesc Layer<T>::describe(std::span<const Shape> in) const {
  LayerDesc d;
  d.name = name();
  d.kind = kind();
  d.inputs.assign(in.begin(), in.end());
  const bool resolved = std::ranges::all_of(in, &Shape::resolved);
  if (resolved) d.output = output_shape(in);
  return d;
}

// ---------------------------------------------------------------- Rescale

template <typename T>
Rescale<T>::Rescale(std::string name, std::vector<T> scale, std::vector<T> offset)
    : Layer<T>(std::move(name)), scale_(std::move(scale)), offset_(std::move(offset)) {
  if (scale_.size() != offset_.size() || scale_.empty()) {
    throw ShapeError("rescale needs matching non-empty scale and offset vectors");
  }
}

template <typename T>
Shape Rescale<T>::output_shape(std::span<const Shape> in) const {
  require_inputs(this->name(), in, 1);
  require_channels(this->name(), in[0], static_cast<int>(scale_.size()));
  return in[0];
}

template <typename T>
void Rescale<T>::forward(std::span<const Tensor<T>* const> in, Tensor<T>& out, Mode) {
  const auto& x = *in[0];
  out.reset(output_shape(std::array{x.shape}));
  const std::size_t c = scale_.size();
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    out.data[i] = x.data[i] * scale_[i % c] + offset_[i % c];
  }
}

template <typename T>
void Rescale<T>::backward(std::span<const Tensor<T>* const>, const Tensor<T>&,
                          const Tensor<T>& grad_out, std::span<Tensor<T>* const> grad_in) {
  if (!grad_in[0]) return;
  const std::size_t c = scale_.size();
  auto& dx = grad_in[0]->data;
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += grad_out.data[i] * scale_[i % c];
}

// ---------------------------------------------------------------- Conv2D

template <typename T>
Conv2D<T>::Conv2D(std::string name, int in_channels, int filters, int kernel, int stride,
                  PadMode mode, bool use_bias, Padding explicit_padding)
    : Layer<T>(std::move(name)),
      in_channels_(in_channels),
      filters_(filters),
      kernel_(kernel),
      stride_(stride),
      mode_(mode),
      explicit_(explicit_padding),
      kernel_param_(this->name() + "/kernel", {kernel, kernel, in_channels, filters},
                    Init::GlorotUniform, true, kernel * kernel * in_channels,
                    kernel * kernel * filters) {
  if (in_channels <= 0 || filters <= 0 || kernel <= 0 || stride <= 0) {
    throw ShapeError(fmt::format("conv '{}': invalid geometry", this->name()));
  }
  if (use_bias) {
    bias_param_ = std::make_unique<Param<T>>(this->name() + "/bias", std::vector<int>{filters},
                                             Init::Zeros);
  }
}

template <typename T>
Padding Conv2D<T>::padding_for(const Shape& in) const {
  return resolve_padding(mode_, explicit_, in, kernel_, stride_);
}

template <typename T>
bool Conv2D<T>::is_pointwise() const {
  return kernel_ == 1 && stride_ == 1 && mode_ != PadMode::Explicit;
}

template <typename T>
Shape Conv2D<T>::output_shape(std::span<const Shape> in) const {
  require_inputs(this->name(), in, 1);
  require_channels(this->name(), in[0], in_channels_);
  const Padding p = padding_for(in[0]);
  return Shape{in[0].n, pooled_extent(this->name(), in[0].h, p.top, p.bottom, kernel_, stride_),
               pooled_extent(this->name(), in[0].w, p.left, p.right, kernel_, stride_), filters_};
}

template <typename T>
void Conv2D<T>::im2col(const Tensor<T>& x, const Padding& pad, const Shape& os,
                       Buffer<T>& cols) const {
  const int k = kernel_;
  const int cin = in_channels_;
  const std::size_t row_len = static_cast<std::size_t>(k) * k * cin;
  cols.resize(static_cast<std::size_t>(os.n) * os.h * os.w * row_len);
  T* dst = cols.data();
  for (int n = 0; n < os.n; ++n) {
    for (int oy = 0; oy < os.h; ++oy) {
      for (int ox = 0; ox < os.w; ++ox) {
        for (int ky = 0; ky < k; ++ky) {
          const int iy = oy * stride_ - pad.top + ky;
          if (iy < 0 || iy >= x.shape.h) {
            std::fill_n(dst, static_cast<std::size_t>(k) * cin, T(0));
            dst += static_cast<std::size_t>(k) * cin;
            continue;
          }
          for (int kx = 0; kx < k; ++kx) {
            const int ix = ox * stride_ - pad.left + kx;
            if (ix < 0 || ix >= x.shape.w) {
              std::fill_n(dst, cin, T(0));
            } else {
              std::memcpy(dst, &x.at(n, iy, ix, 0), sizeof(T) * cin);
            }
            dst += cin;
          }
        }
      }
    }
  }
}

template <typename T>
void Conv2D<T>::col2im(const Buffer<T>& cols, const Padding& pad, const Shape& os,
                       Tensor<T>& dx) const {
  const int k = kernel_;
  const int cin = in_channels_;
  const T* src = cols.data();
  for (int n = 0; n < os.n; ++n) {
    for (int oy = 0; oy < os.h; ++oy) {
      for (int ox = 0; ox < os.w; ++ox) {
        for (int ky = 0; ky < k; ++ky) {
          const int iy = oy * stride_ - pad.top + ky;
          for (int kx = 0; kx < k; ++kx, src += cin) {
            const int ix = ox * stride_ - pad.left + kx;
            if (iy < 0 || iy >= dx.shape.h || ix < 0 || ix >= dx.shape.w) continue;
            T* d = &dx.at(n, iy, ix, 0);
            for (int c = 0; c < cin; ++c) d[c] += src[c];
          }
        }
      }
    }
  }
}

template <typename T>
void Conv2D<T>::forward(std::span<const Tensor<T>* const> in, Tensor<T>& out, Mode) {
  const auto& x = *in[0];
  const Shape os = output_shape(std::array{x.shape});
  out.shape = os;
  out.data.resize(os.numel());
  const Eigen::Index rows = static_cast<Eigen::Index>(os.n) * os.h * os.w;
  const Eigen::Index depth = static_cast<Eigen::Index>(kernel_) * kernel_ * in_channels_;
  ConstMapRM<T> w(kernel_param_.value.data(), depth, filters_);
  MapRM<T> y(out.data.data(), rows, filters_);
  if (is_pointwise()) {
    y.noalias() = ConstMapRM<T>(x.data.data(), rows, depth) * w;
  } else {
    im2col(x, padding_for(x.shape), os, cols_);
    y.noalias() = ConstMapRM<T>(cols_.data(), rows, depth) * w;
  }
  if (bias_param_) y.rowwise() += ConstRowVec<T>(bias_param_->value.data(), filters_);
}

template <typename T>
void Conv2D<T>::backward(std::span<const Tensor<T>* const> in, const Tensor<T>& out,
                         const Tensor<T>& grad_out, std::span<Tensor<T>* const> grad_in) {
  const auto& x = *in[0];
  const Shape& os = out.shape;
  const Eigen::Index rows = static_cast<Eigen::Index>(os.n) * os.h * os.w;
  const Eigen::Index depth = static_cast<Eigen::Index>(kernel_) * kernel_ * in_channels_;
  ConstMapRM<T> dy(grad_out.data.data(), rows, filters_);
  ConstMapRM<T> w(kernel_param_.value.data(), depth, filters_);
  const T* cols = is_pointwise() ? x.data.data() : cols_.data();
  ConstMapRM<T> c(cols, rows, depth);

  if (kernel_param_.trainable) {
    MapRM<T>(kernel_param_.grad.data(), depth, filters_).noalias() += c.transpose() * dy;
  }
  if (bias_param_ && bias_param_->trainable) {
    Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias_param_->grad.data(), filters_) +=
        dy.colwise().sum();
  }
  if (!grad_in[0]) return;
  if (is_pointwise()) {
    MapRM<T>(grad_in[0]->data.data(), rows, depth).noalias() += dy * w.transpose();
    return;
  }
  dcols_.resize(static_cast<std::size_t>(rows) * depth);
  MapRM<T>(dcols_.data(), rows, depth).noalias() = dy * w.transpose();
  col2im(dcols_, padding_for(x.shape), os, *grad_in[0]);
}

template <typename T>
std::vector<Param<T>*> Conv2D<T>::params() {
  std::vector<Param<T>*> p{&kernel_param_};
  if (bias_param_) p.push_back(bias_param_.get());
  return p;
}

template <typename T>
LayerDesc Conv2D<T>::describe(std::span<const Shape> in) const {
  LayerDesc d = Layer<T>::describe(in);
  d.kernel = kernel_;
  d.stride = stride_;
  d.bias = bias_param_ != nullptr;
  d.params = static_cast<std::int64_t>(kernel_param_.size()) + (bias_param_ ? filters_ : 0);
  return d;
}

// ---------------------------------------------------------------- DepthwiseConv2D

template <typename T>
DepthwiseConv2D<T>::DepthwiseConv2D(std::string name, int channels, int kernel, int stride,
                                    PadMode mode, bool use_bias, Padding explicit_padding)
    : Layer<T>(std::move(name)),
      channels_(channels),
      kernel_(kernel),
      stride_(stride),
      mode_(mode),
      explicit_(explicit_padding),
      kernel_param_(this->name() + "/depthwise_kernel", {kernel, kernel, channels},
                    Init::GlorotUniform, true, kernel * kernel * channels, kernel * kernel) {
  if (use_bias) {
    bias_param_ = std::make_unique<Param<T>>(this->name() + "/bias", std::vector<int>{channels},
                                             Init::Zeros);
  }
}

template <typename T>
Padding DepthwiseConv2D<T>::padding_for(const Shape& in) const {
  return resolve_padding(mode_, explicit_, in, kernel_, stride_);
}

template <typename T>
Shape DepthwiseConv2D<T>::output_shape(std::span<const Shape> in) const {
  require_inputs(this->name(), in, 1);
  require_channels(this->name(), in[0], channels_);
  const Padding p = padding_for(in[0]);
  return Shape{in[0].n, pooled_extent(this->name(), in[0].h, p.top, p.bottom, kernel_, stride_),
               pooled_extent(this->name(), in[0].w, p.left, p.right, kernel_, stride_), channels_};
}

template <typename T>
void DepthwiseConv2D<T>::forward(std::span<const Tensor<T>* const> in, Tensor<T>& out, Mode) {
  const auto& x = *in[0];
  const Shape os = output_shape(std::array{x.shape});
  const Padding pad = padding_for(x.shape);
  out.reset(os);
  const int C = channels_;
  const T* w = kernel_param_.value.data();
  for (int n = 0; n < os.n; ++n) {
    for (int oy = 0; oy < os.h; ++oy) {
      for (int ox = 0; ox < os.w; ++ox) {
        T* o = &out.at(n, oy, ox, 0);
        if (bias_param_) std::copy_n(bias_param_->value.data(), C, o);
        for (int ky = 0; ky < kernel_; ++ky) {
          const int iy = oy * stride_ - pad.top + ky;
          if (iy < 0 || iy >= x.shape.h) continue;
          for (int kx = 0; kx < kernel_; ++kx) {
            const int ix = ox * stride_ - pad.left + kx;
            if (ix < 0 || ix >= x.shape.w) continue;
            const T* xi = &x.at(n, iy, ix, 0);
            const T* wk = w + (ky * kernel_ + kx) * C;
            for (int c = 0; c < C; ++c) o[c] += xi[c] * wk[c];
          }
        }
      }
    }
  }
}

template <typename T>
void DepthwiseConv2D<T>::backward(std::span<const Tensor<T>* const> in, const Tensor<T>& out,
                                  const Tensor<T>& grad_out, std::span<Tensor<T>* const> grad_in) {
  const auto& x = *in[0];
  const Shape& os = out.shape;
  const Padding pad = padding_for(x.shape);
  const int C = channels_;
  const T* w = kernel_param_.value.data();
  T* dw = kernel_param_.grad.data();
  Tensor<T>* dx = grad_in[0];
  for (int n = 0; n < os.n; ++n) {
    for (int oy = 0; oy < os.h; ++oy) {
      for (int ox = 0; ox < os.w; ++ox) {
        const T* g = &grad_out.at(n, oy, ox, 0);
        if (bias_param_ && bias_param_->trainable) {
          for (int c = 0; c < C; ++c) bias_param_->grad[c] += g[c];
        }
        for (int ky = 0; ky < kernel_; ++ky) {
          const int iy = oy * stride_ - pad.top + ky;
          if (iy < 0 || iy >= x.shape.h) continue;
          for (int kx = 0; kx < kernel_; ++kx) {
            const int ix = ox * stride_ - pad.left + kx;
            if (ix < 0 || ix >= x.shape.w) continue;
            const T* xi = &x.at(n, iy, ix, 0);
            const std::size_t off = static_cast<std::size_t>(ky * kernel_ + kx) * C;
            if (kernel_param_.trainable) {
              for (int c = 0; c < C; ++c) dw[off + c] += g[c] * xi[c];
            }
            if (dx) {
              T* d = &dx->at(n, iy, ix, 0);
              for (int c = 0; c < C; ++c) d[c] += g[c] * w[off + c];
            }
          }
        }
      }
    }
  }
}

template <typename T>
std::vector<Param<T>*> DepthwiseConv2D<T>::params() {
  std::vector<Param<T>*> p{&kernel_param_};
  if (bias_param_) p.push_back(bias_param_.get());
  return p;
}

template <typename T>
LayerDesc DepthwiseConv2D<T>::describe(std::span<const Shape> in) const {
  LayerDesc d = Layer<T>::describe(in);
  d.kernel = kernel_;
  d.stride = stride_;
  d.bias = bias_param_ != nullptr;
  d.params = static_cast<std::int64_t>(kernel_param_.size()) + (bias_param_ ? channels_ : 0);
  return d;
}

// ---------------------------------------------------------------- BatchNorm

template <typename T>
BatchNorm<T>::BatchNorm(std::string name, int channels, double epsilon, double momentum)
    : Layer<T>(std::move(name)),
      channels_(channels),
      epsilon_(epsilon),
      momentum_(momentum),
      gamma_(this->name() + "/gamma", {channels}, Init::Ones),
      beta_(this->name() + "/beta", {channels}, Init::Zeros),
      moving_mean_(this->name() + "/moving_mean", {channels}, Init::Zeros, false),
      moving_variance_(this->name() + "/moving_variance", {channels}, Init::Ones, false) {}

template <typename T>
Shape BatchNorm<T>::output_shape(std::span<const Shape> in) const {
  require_inputs(this->name(), in, 1);
  require_channels(this->name(), in[0], channels_);
  return in[0];
}

template <typename T>
void BatchNorm<T>::forward(std::span<const Tensor<T>* const> in, Tensor<T>& out, Mode mode) {
  const auto& x = *in[0];
  out.reset(output_shape(std::array{x.shape}));
  const int C = channels_;
  const std::size_t m = x.shape.numel() / C;
  mean_.assign(C, T(0));
  inv_std_.assign(C, T(0));
  last_mode_ = mode;
  if (mode == Mode::Train) {
    std::vector<double> sum(C, 0.0), sq(C, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
      const T* xi = x.data.data() + i * C;
      for (int c = 0; c < C; ++c) sum[c] += xi[c];
    }
    for (int c = 0; c < C; ++c) sum[c] /= static_cast<double>(m);
    for (std::size_t i = 0; i < m; ++i) {
      const T* xi = x.data.data() + i * C;
      for (int c = 0; c < C; ++c) {
        const double d = xi[c] - sum[c];
        sq[c] += d * d;
      }
    }
    for (int c = 0; c < C; ++c) {
      const double var = sq[c] / static_cast<double>(m);
      mean_[c] = static_cast<T>(sum[c]);
      inv_std_[c] = static_cast<T>(1.0 / std::sqrt(var + epsilon_));
      const double unbiased = m > 1 ? sq[c] / static_cast<double>(m - 1) : var;
      moving_mean_.value[c] =
          static_cast<T>(momentum_ * moving_mean_.value[c] + (1.0 - momentum_) * sum[c]);
      moving_variance_.value[c] =
          static_cast<T>(momentum_ * moving_variance_.value[c] + (1.0 - momentum_) * unbiased);
    }
  } else {
    for (int c = 0; c < C; ++c) {
      mean_[c] = moving_mean_.value[c];
      inv_std_[c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(moving_variance_.value[c]) + epsilon_));
    }
  }
  for (std::size_t i = 0; i < m; ++i) {
    const T* xi = x.data.data() + i * C;
    T* yi = out.data.data() + i * C;
    for (int c = 0; c < C; ++c) {
      yi[c] = gamma_.value[c] * (xi[c] - mean_[c]) * inv_std_[c] + beta_.value[c];
    }
  }
}

template <typename T>
void BatchNorm<T>::backward(std::span<const Tensor<T>* const> in, const Tensor<T>&,
                            const Tensor<T>& grad_out, std::span<Tensor<T>* const> grad_in) {
  const auto& x = *in[0];
  const int C = channels_;
  const std::size_t m = x.shape.numel() / C;
  std::vector<double> sum_dy(C, 0.0), sum_dy_xhat(C, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const T* xi = x.data.data() + i * C;
    const T* gi = grad_out.data.data() + i * C;
    for (int c = 0; c < C; ++c) {
      const double xhat = (xi[c] - mean_[c]) * inv_std_[c];
      sum_dy[c] += gi[c];
      sum_dy_xhat[c] += gi[c] * xhat;
    }
  }
  if (gamma_.trainable) {
    for (int c = 0; c < C; ++c) gamma_.grad[c] += static_cast<T>(sum_dy_xhat[c]);
  }
  if (beta_.trainable) {
    for (int c = 0; c < C; ++c) beta_.grad[c] += static_cast<T>(sum_dy[c]);
  }
  Tensor<T>* dx = grad_in[0];
  if (!dx) return;
  const double md = static_cast<double>(m);
  for (std::size_t i = 0; i < m; ++i) {
    const T* xi = x.data.data() + i * C;
    const T* gi = grad_out.data.data() + i * C;
    T* di = dx->data.data() + i * C;
    for (int c = 0; c < C; ++c) {
      const double scale = static_cast<double>(gamma_.value[c]) * inv_std_[c];
      if (last_mode_ == Mode::Train) {
        const double xhat = (xi[c] - mean_[c]) * inv_std_[c];
        di[c] += static_cast<T>(scale * (gi[c] - sum_dy[c] / md - xhat * sum_dy_xhat[c] / md));
      } else {
        di[c] += static_cast<T>(scale * gi[c]);
      }
    }
  }
}

template <typename T>
std::vector<Param<T>*> BatchNorm<T>::params() {
  return {&gamma_, &beta_, &moving_mean_, &moving_variance_};
}

template <typename T>
LayerDesc BatchNorm<T>::describe(std::span<const Shape> in) const {
  LayerDesc d = Layer<T>::describe(in);
  d.params = 4LL * channels_;
  return d;
}

// ---------------------------------------------------------------- Activation

template <typename T>
Shape Activation<T>::output_shape(std::span<const Shape> in) const {
  require_inputs(this->name(), in, 1);
  return in[0];
}

template <typename T>
void Activation<T>::forward(std::span<const Tensor<T>* const> in, Tensor<T>& out, Mode) {
  const auto& x = *in[0];
  out.shape = x.shape;
  out.data.resize(x.data.size());
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    out.data[i] = std::min(std::max(x.data[i], T(0)), cap_);
  }
}

template <typename T>
void Activation<T>::backward(std::span<const Tensor<T>* const> in, const Tensor<T>&,
                             const Tensor<T>& grad_out, std::span<Tensor<T>* const> grad_in) {
  if (!grad_in[0]) return;
  const auto& x = in[0]->data;
  auto& dx = grad_in[0]->data;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] > T(0) && x[i] < cap_) dx[i] += grad_out.data[i];
  }
}

// ---------------------------------------------------------------- MaxPool

template <typename T>
MaxPool<T>::MaxPool(std::string name, int pool, int stride, PadMode mode, Padding explicit_padding)
    : Layer<T>(std::move(name)), pool_(pool), stride_(stride), mode_(mode), explicit_(explicit_padding) {}

template <typename T>
Padding MaxPool<T>::padding_for(const Shape& in) const {
  return resolve_padding(mode_, explicit_, in, pool_, stride_);
}

template <typename T>
Shape MaxPool<T>::output_shape(std::span<const Shape> in) const {
  require_inputs(this->name(), in, 1);
  const Padding p = padding_for(in[0]);
  return Shape{in[0].n, pooled_extent(this->name(), in[0].h, p.top, p.bottom, pool_, stride_),
               pooled_extent(this->name(), in[0].w, p.left, p.right, pool_, stride_), in[0].c};
}

template <typename T>
void MaxPool<T>::forward(std::span<const Tensor<T>* const> in, Tensor<T>& out, Mode) {
  const auto& x = *in[0];
  const Shape os = output_shape(std::array{x.shape});
  const Padding pad = padding_for(x.shape);
  out.shape = os;
  out.data.assign(os.numel(), -std::numeric_limits<T>::infinity());
  const int C = os.c;
  for (int n = 0; n < os.n; ++n) {
    for (int oy = 0; oy < os.h; ++oy) {
      for (int ox = 0; ox < os.w; ++ox) {
        T* o = &out.at(n, oy, ox, 0);
        for (int ky = 0; ky < pool_; ++ky) {
          const int iy = oy * stride_ - pad.top + ky;
          if (iy < 0 || iy >= x.shape.h) continue;
          for (int kx = 0; kx < pool_; ++kx) {
            const int ix = ox * stride_ - pad.left + kx;
            if (ix < 0 || ix >= x.shape.w) continue;
            const T* xi = &x.at(n, iy, ix, 0);
            for (int c = 0; c < C; ++c) o[c] = std::max(o[c], xi[c]);
          }
        }
      }
    }
  }
}

template <typename T>
void MaxPool<T>::backward(std::span<const Tensor<T>* const> in, const Tensor<T>& out,
                          const Tensor<T>& grad_out, std::span<Tensor<T>* const> grad_in) {
  if (!grad_in[0]) return;
  const auto& x = *in[0];
  const Shape& os = out.shape;
  const Padding pad = padding_for(x.shape);
  auto& dx = *grad_in[0];
  for (int n = 0; n < os.n; ++n) {
    for (int oy = 0; oy < os.h; ++oy) {
      for (int ox = 0; ox < os.w; ++ox) {
        for (int c = 0; c < os.c; ++c) {
          const T target = out.at(n, oy, ox, c);
          bool routed = false;
          for (int ky = 0; ky < pool_ && !routed; ++ky) {
            const int iy = oy * stride_ - pad.top + ky;
            if (iy < 0 || iy >= x.shape.h) continue;
            for (int kx = 0; kx < pool_; ++kx) {
              const int ix = ox * stride_ - pad.left + kx;
              if (ix < 0 || ix >= x.shape.w) continue;
              if (x.at(n, iy, ix, c) == target) {
                dx.at(n, iy, ix, c) += grad_out.at(n, oy, ox, c);
                routed = true;
                break;
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
LayerDesc MaxPool<T>::describe(std::span<const Shape> in) const {
  LayerDesc d = Layer<T>::describe(in);
  d.kernel = pool_;
  d.stride = stride_;
  return d;
}

// ---------------------------------------------------------------- Add

template <typename T>
Shape Add<T>::output_shape(std::span<const Shape> in) const {
  if (in.size() < 2) throw ShapeError(fmt::format("add '{}' needs at least two inputs", this->name()));
  for (const auto& s : in) {
    if (!(s == in[0])) {
      throw ShapeError(fmt::format("add '{}': shape {} vs {}", this->name(), s.str(), in[0].str()));
    }
  }
  return in[0];
}

template <typename T>
void Add<T>::forward(std::span<const Tensor<T>* const> in, Tensor<T>& out, Mode) {
  std::vector<Shape> shapes;
  for (const auto* t : in) shapes.push_back(t->shape);
  out.shape = output_shape(shapes);
  out.data = in[0]->data;
  for (std::size_t k = 1; k < in.size(); ++k) {
    const auto& d = in[k]->data;
    for (std::size_t i = 0; i < d.size(); ++i) out.data[i] += d[i];
  }
}

template <typename T>
void Add<T>::backward(std::span<const Tensor<T>* const>, const Tensor<T>&, const Tensor<T>& grad_out,
                      std::span<Tensor<T>* const> grad_in) {
  for (auto* g : grad_in) {
    if (!g) continue;
    for (std::size_t i = 0; i < g->data.size(); ++i) g->data[i] += grad_out.data[i];
  }
}

// ---------------------------------------------------------------- GlobalAvgPool

template <typename T>
Shape GlobalAvgPool<T>::output_shape(std::span<const Shape> in) const {
  require_inputs(this->name(), in, 1);
  return Shape{in[0].n, 1, 1, in[0].c};
}

template <typename T>
void GlobalAvgPool<T>::forward(std::span<const Tensor<T>* const> in, Tensor<T>& out, Mode) {
  const auto& x = *in[0];
  out.reset(output_shape(std::array{x.shape}));
  const int C = x.shape.c;
  const int hw = x.shape.h * x.shape.w;
  for (int n = 0; n < x.shape.n; ++n) {
    const T* xs = x.sample(n);
    T* o = out.sample(n);
    for (int p = 0; p < hw; ++p) {
      for (int c = 0; c < C; ++c) o[c] += xs[p * C + c];
    }
    for (int c = 0; c < C; ++c) o[c] /= static_cast<T>(hw);
  }
}

template <typename T>
void GlobalAvgPool<T>::backward(std::span<const Tensor<T>* const> in, const Tensor<T>&,
                                const Tensor<T>& grad_out, std::span<Tensor<T>* const> grad_in) {
  if (!grad_in[0]) return;
  const auto& x = *in[0];
  const int C = x.shape.c;
  const int hw = x.shape.h * x.shape.w;
  for (int n = 0; n < x.shape.n; ++n) {
    const T* g = grad_out.sample(n);
    T* d = grad_in[0]->sample(n);
    for (int p = 0; p < hw; ++p) {
      for (int c = 0; c < C; ++c) d[p * C + c] += g[c] / static_cast<T>(hw);
    }
  }
}

// ---------------------------------------------------------------- Dense

template <typename T>
Dense<T>::Dense(std::string name, int in_features, int out_features)
    : Layer<T>(std::move(name)),
      in_(in_features),
      out_(out_features),
      kernel_(this->name() + "/kernel", {in_features, out_features}, Init::GlorotUniform, true,
              in_features, out_features),
      bias_(this->name() + "/bias", {out_features}, Init::Zeros) {}

template <typename T>
Shape Dense<T>::output_shape(std::span<const Shape> in) const {
  require_inputs(this->name(), in, 1);
  if (in[0].h != 1 || in[0].w != 1) {
    throw ShapeError(fmt::format("dense '{}' expects pooled features, got {}", this->name(), in[0].str()));
  }
  require_channels(this->name(), in[0], in_);
  return Shape{in[0].n, 1, 1, out_};
}

template <typename T>
void Dense<T>::forward(std::span<const Tensor<T>* const> in, Tensor<T>& out, Mode) {
  const auto& x = *in[0];
  out.reset(output_shape(std::array{x.shape}));
  MapRM<T> y(out.data.data(), x.shape.n, out_);
  y.noalias() = ConstMapRM<T>(x.data.data(), x.shape.n, in_) *
                ConstMapRM<T>(kernel_.value.data(), in_, out_);
  y.rowwise() += ConstRowVec<T>(bias_.value.data(), out_);
}

template <typename T>
void Dense<T>::backward(std::span<const Tensor<T>* const> in, const Tensor<T>&,
                        const Tensor<T>& grad_out, std::span<Tensor<T>* const> grad_in) {
  const auto& x = *in[0];
  ConstMapRM<T> dy(grad_out.data.data(), x.shape.n, out_);
  ConstMapRM<T> xm(x.data.data(), x.shape.n, in_);
  if (kernel_.trainable) MapRM<T>(kernel_.grad.data(), in_, out_).noalias() += xm.transpose() * dy;
  if (bias_.trainable) {
    Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias_.grad.data(), out_) += dy.colwise().sum();
  }
  if (grad_in[0]) {
    MapRM<T>(grad_in[0]->data.data(), x.shape.n, in_).noalias() +=
        dy * ConstMapRM<T>(kernel_.value.data(), in_, out_).transpose();
  }
}

template <typename T>
std::vector<Param<T>*> Dense<T>::params() {
  return {&kernel_, &bias_};
}

template <typename T>
LayerDesc Dense<T>::describe(std::span<const Shape> in) const {
  LayerDesc d = Layer<T>::describe(in);
  d.bias = true;
  d.params = static_cast<std::int64_t>(in_) * out_ + out_;
  return d;
}

#define DEPTHFAKE_INSTANTIATE_LAYERS(T) \
  template struct Param<T>;             \
  template class Layer<T>;              \
  template class Rescale<T>;            \
  template class Conv2D<T>;             \
  template class DepthwiseConv2D<T>;    \
  template class BatchNorm<T>;          \
  template class Activation<T>;         \
  template class MaxPool<T>;            \
  template class Add<T>;                \
  template class GlobalAvgPool<T>;      \
  template class Dense<T>;

DEPTHFAKE_INSTANTIATE_LAYERS(float)
DEPTHFAKE_INSTANTIATE_LAYERS(double)

}  // namespace depthfake::nn
