#include "depthfake/nn/graph.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <fmt/format.h>

#include "depthfake/errors.hpp"
#include "depthfake/random.hpp"

namespace depthfake::nn {

template <typename T>
int Graph<T>::add(std::unique_ptr<Layer<T>> layer, std::vector<int> inputs) {
  const int id = static_cast<int>(nodes_.size());
  for (int in : inputs) {
    if (in != kGraphInput && (in < 0 || in >= id)) {
      throw ShapeError(fmt::format("layer '{}' references node {} which is not yet defined",
                                   layer->name(), in));
    }
  }
  if (find_layer(layer->name())) {
    throw ShapeError(fmt::format("duplicate layer name '{}'", layer->name()));
  }
  nodes_.push_back(Node{std::move(layer), std::move(inputs)});
  return id;
}

template <typename T>
Layer<T>* Graph<T>::find_layer(std::string_view name) {
  for (auto& n : nodes_) {
    if (n.layer->name() == name) return n.layer.get();
  }
  return nullptr;
}

template <typename T>
const Layer<T>* Graph<T>::find_layer(std::string_view name) const {
  for (const auto& n : nodes_) {
    if (n.layer->name() == name) return n.layer.get();
  }
  return nullptr;
}

template <typename T>
const Tensor<T>& Graph<T>::forward(const Tensor<T>& input, Mode mode) {
  if (nodes_.empty()) throw ShapeError("forward on an empty graph");
  if (input_channels_ > 0 && input.shape.c != input_channels_) {
    throw ShapeError(fmt::format("graph expects {} input channels, got {}", input_channels_,
                                 input.shape.c));
  }
  outputs_.resize(nodes_.size());
  last_input_ = &input;
  std::vector<const Tensor<T>*> ins;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    ins.clear();
    for (int in : nodes_[i].inputs) ins.push_back(&value_of(in, input));
    nodes_[i].layer->forward(ins, outputs_[i], mode);
  }
  return outputs_.back();
}

template <typename T>
void Graph<T>::backward(const Tensor<T>& grad_output) {
  if (!last_input_ || outputs_.size() != nodes_.size()) {
    throw ShapeError("backward without a preceding forward");
  }
  if (!(grad_output.shape == outputs_.back().shape)) {
    throw ShapeError(fmt::format("output gradient shape {} does not match output {}",
                                 grad_output.shape.str(), outputs_.back().shape.str()));
  }
  grads_.resize(nodes_.size());
  for (std::size_t i = 0; i + 1 < nodes_.size(); ++i) grads_[i].reset(outputs_[i].shape);
  grads_.back() = grad_output;

  std::vector<const Tensor<T>*> ins;
  std::vector<Tensor<T>*> gins;
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    ins.clear();
    gins.clear();
    for (int in : nodes_[i].inputs) {
      ins.push_back(&value_of(in, *last_input_));
      gins.push_back(in == kGraphInput ? nullptr : &grads_[in]);
    }
    nodes_[i].layer->backward(ins, outputs_[i], grads_[i], gins);
  }
}

template <typename T>
void Graph<T>::zero_grad() {
  for (auto* p : params()) std::ranges::fill(p->grad, T(0));
}

template <typename T>
void Graph<T>::release() {
  outputs_.clear();
  outputs_.shrink_to_fit();
  grads_.clear();
  grads_.shrink_to_fit();
  last_input_ = nullptr;
}

template <typename T>
std::vector<Param<T>*> Graph<T>::params() {
  std::vector<Param<T>*> out;
  for (auto& n : nodes_) {
    for (auto* p : n.layer->params()) out.push_back(p);
  }
  return out;
}

template <typename T>
std::vector<const Param<T>*> Graph<T>::params() const {
  std::vector<const Param<T>*> out;
  for (const auto& n : nodes_) {
    for (auto* p : n.layer->params()) out.push_back(p);
  }
  return out;
}

template <typename T>
Param<T>* Graph<T>::find_param(std::string_view name) {
  for (auto* p : params()) {
    if (p->name == name) return p;
  }
  return nullptr;
}

template <typename T>
std::int64_t Graph<T>::parameter_count() const {
  std::int64_t total = 0;
  for (const auto* p : params()) total += static_cast<std::int64_t>(p->size());
  return total;
}

template <typename T>
Shape Graph<T>::output_shape(const Shape& input) const {
  return describe(input).back().output;
}

template <typename T>
std::vector<LayerDesc> Graph<T>::describe(const Shape& input) const {
  std::vector<Shape> shapes(nodes_.size());
  std::vector<LayerDesc> descs;
  descs.reserve(nodes_.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    std::vector<Shape> ins;
    for (int in : nodes_[i].inputs) ins.push_back(in == kGraphInput ? input : shapes[in]);
    if (!std::ranges::all_of(ins, &Shape::resolved)) {
      throw ShapeError(fmt::format("layer '{}': unresolved input shape", nodes_[i].layer->name()));
    }
    descs.push_back(nodes_[i].layer->describe(ins));
    shapes[i] = descs.back().output;
  }
  return descs;
}

template <typename T>
void initialize(Graph<T>& graph, std::uint64_t seed) {
  std::mt19937_64 rng(derive_seed(seed, 0x1417ULL));
  for (auto* p : graph.params()) {
    switch (p->init) {
      case Init::Zeros: std::ranges::fill(p->value, T(0)); break;
      case Init::Ones: std::ranges::fill(p->value, T(1)); break;
      case Init::GlorotUniform: {
        const double limit = std::sqrt(6.0 / static_cast<double>(p->fan_in + p->fan_out));
        for (auto& v : p->value) v = static_cast<T>((2.0 * uniform_unit(rng) - 1.0) * limit);
        break;
      }
    }
  }
}

template <typename To, typename From>
void copy_params(const Graph<From>& src, Graph<To>& dst) {
  for (auto* p : dst.params()) {
    const Param<From>* match = nullptr;
    for (const auto* q : src.params()) {
      if (q->name == p->name) {
        match = q;
        break;
      }
    }
    if (!match) continue;
    if (match->dims != p->dims) {
      throw ShapeError(fmt::format("parameter '{}' shape mismatch while copying", p->name));
    }
    std::ranges::transform(match->value, p->value.begin(),
                           [](From v) { return static_cast<To>(v); });
  }
}

template class Graph<float>;
template class Graph<double>;
template void initialize(Graph<float>&, std::uint64_t);
template void initialize(Graph<double>&, std::uint64_t);
template void copy_params(const Graph<float>&, Graph<float>&);
template void copy_params(const Graph<float>&, Graph<double>&);
template void copy_params(const Graph<double>&, Graph<float>&);
template void copy_params(const Graph<double>&, Graph<double>&);

}  // namespace depthfake::nn
