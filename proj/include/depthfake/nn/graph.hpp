#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "depthfake/nn/layers.hpp"

namespace depthfake::nn {

// Directed acyclic graph of layers in topological (insertion) order. The last
// node is the output. Input index kGraphInput refers to the graph input.
template <typename T>
class Graph {
 public:
  static constexpr int kGraphInput = -1;

  Graph() = default;
  Graph(Graph&&) noexcept = default;
  Graph& operator=(Graph&&) noexcept = default;

  int add(std::unique_ptr<Layer<T>> layer, std::vector<int> inputs);
  int add(std::unique_ptr<Layer<T>> layer, int input) {
    return add(std::move(layer), std::vector<int>{input});
  }
  template <typename L, typename... Args>
  int emplace(int input, Args&&... args) {
    return add(std::make_unique<L>(std::forward<Args>(args)...), input);
  }

  std::size_t size() const { return nodes_.size(); }
  Layer<T>& layer(std::size_t node) { return *nodes_[node].layer; }
  const Layer<T>& layer(std::size_t node) const { return *nodes_[node].layer; }
  Layer<T>* find_layer(std::string_view name);
  const Layer<T>* find_layer(std::string_view name) const;

  // Runs every node; activations are kept for a following backward(), so
  // `input` must outlive that call.
  const Tensor<T>& forward(const Tensor<T>& input, Mode mode);
  // Back-propagates `grad_output` (shape of the last forward output) and
  // accumulates parameter gradients. Call zero_grad() between steps.
  void backward(const Tensor<T>& grad_output);
  void zero_grad();
  // Drops cached activations.
  void release();

  std::vector<Param<T>*> params();
  std::vector<const Param<T>*> params() const;
  Param<T>* find_param(std::string_view name);
  std::int64_t parameter_count() const;

  Shape output_shape(const Shape& input) const;
  // Per-layer shapes for `input`; throws ShapeError naming the first layer
  // whose shape cannot be resolved.
  std::vector<LayerDesc> describe(const Shape& input) const;

  int input_channels() const { return input_channels_; }
  void set_input_channels(int c) { input_channels_ = c; }
  const std::string& first_conv() const { return first_conv_; }
  void set_first_conv(std::string name) { first_conv_ = std::move(name); }
  const std::string& head_prefix() const { return head_prefix_; }
  void set_head_prefix(std::string prefix) { head_prefix_ = std::move(prefix); }

 private:
  struct Node {
    std::unique_ptr<Layer<T>> layer;
    std::vector<int> inputs;
  };

  const Tensor<T>& value_of(int index, const Tensor<T>& input) const {
    return index == kGraphInput ? input : outputs_[index];
  }

  std::vector<Node> nodes_;
  std::vector<Tensor<T>> outputs_;
  std::vector<Tensor<T>> grads_;
  const Tensor<T>* last_input_ = nullptr;
  int input_channels_ = 0;
  std::string first_conv_;
  std::string head_prefix_ = "head_";
};

// Fills every parameter from its Init rule using a seeded generator; equal
// seeds give identical weights.
template <typename T>
void initialize(Graph<T>& graph, std::uint64_t seed);

// Copies parameter values by name. Parameters absent from `src` are left
// untouched in `dst`; shape mismatches throw ShapeError.
template <typename To, typename From>
void copy_params(const Graph<From>& src, Graph<To>& dst);

}  // namespace depthfake::nn
