#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "depthfake/nn/graph.hpp"
#include "depthfake/types.hpp"

namespace depthfake::adapt {

struct TinyConvLayer {
  std::string name;
  int kernel = 3;
  int filters = 0;
  int stride = 2;
};

// Desk-scale backbone: three stride-2 'same' 3x3 convolutions with ReLU,
// global average pooling and a single-logit dense head.
struct TinyConvSpec {
  std::vector<TinyConvLayer> convs;
  int head_units = 1;

  // Closed form: sum over convs of F * (k*k*C_prev + 1) plus the dense head.
  std::int64_t parameter_count(int in_channels) const;
  // Spatial extent of the last feature map for a square input.
  int feature_extent(int input) const;
  int feature_channels() const { return convs.back().filters; }
};

TinyConvSpec tinyconv_spec();

// Affine map from cached [0, 255] patches to the backbone's native input range.
struct InputScaling {
  std::vector<float> scale;
  std::vector<float> offset;
};

InputScaling input_scaling(Backbone backbone, int in_channels);

// Uninitialized graph for `backbone` with `in_channels` inputs, ending in a
// global average pool and one logit. Layer names follow the Keras
// applications naming so converted ImageNet weights map one to one.
template <typename T>
nn::Graph<T> build_architecture(Backbone backbone, int in_channels);

}  // namespace depthfake::adapt
