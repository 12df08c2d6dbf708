// Prints the logit of a 3-channel backbone graph for a raw float32 NHWC image.
// Usage: depthfake_keras_parity {xception,resnet50,mobilenet_v1} WEIGHTS IMAGE
#include <cstdio>
#include <fstream>
#include <string>

#include "depthfake/backbones.hpp"
#include "depthfake/nn/weights.hpp"

int main(int argc, char** argv) {
  using namespace depthfake;
  if (argc != 4) {
    std::fprintf(stderr, "usage: %s BACKBONE WEIGHTS IMAGE\n", argv[0]);
    return 1;
  }
  const std::string name = argv[1];
  const Backbone b = name == "xception"   ? Backbone::Xception
                     : name == "resnet50" ? Backbone::ResNet50
                                          : Backbone::MobileNetV1;
  auto graph = adapt::build_architecture<float>(b, 3);
  nn::import_params(graph, nn::read_weights(argv[2]));
  nn::Tensor<float> x(nn::Shape{1, 224, 224, 3});
  std::ifstream in(argv[3], std::ios::binary);
  in.read(reinterpret_cast<char*>(x.data.data()), static_cast<std::streamsize>(x.data.size() * sizeof(float)));
  if (!in) {
    std::fprintf(stderr, "short image file\n");
    return 1;
  }
  std::printf("%.9g\n", graph.forward(x, nn::Mode::Infer).data[0]);
}
