#include <cmath>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <random>

#include "doctest.h"
#include "unit/support.hpp"

#include "depthfake/adapt.hpp"
#include "depthfake/errors.hpp"
#include "depthfake/nn/weights.hpp"
#include "depthfake/random.hpp"

using namespace depthfake;
using namespace depthfake::adapt;
using depthfake::testing::ScopedEnv;
using depthfake::testing::TempDir;

namespace {

FirstLayerKernel random_kernel(int k, int in, int filters, bool bias, std::uint64_t seed) {
  FirstLayerKernel kern{k, k, in, filters, {}, {}};
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  kern.weights.resize(static_cast<std::size_t>(k) * k * in * filters);
  for (auto& v : kern.weights) v = u(rng);
  if (bias) {
    kern.bias.resize(filters);
    for (auto& v : kern.bias) v = u(rng);
  }
  return kern;
}

// Pre-activation of one output pixel of a first layer, 'valid' at (0, 0).
double apply_at(const FirstLayerKernel& k, const std::vector<double>& patch, int f) {
  double acc = 0;
  for (int y = 0; y < k.kernel_h; ++y) {
    for (int x = 0; x < k.kernel_w; ++x) {
      for (int c = 0; c < k.in_channels; ++c) {
        acc += k.at(y, x, c, f) * patch[(y * k.kernel_w + x) * k.in_channels + c];
      }
    }
  }
  return acc;
}

RunConfig cfg_for(Backbone b, ChannelConfig c, std::uint64_t seed = 3, bool pretrained = true) {
  RunConfig cfg;
  cfg.backbone = b;
  cfg.channel_config = c;
  cfg.seed = seed;
  cfg.pretrained = pretrained;
  return cfg;
}

// Stand-in ImageNet file: a seeded 3-channel backbone without its head.
void write_fake_imagenet(const std::filesystem::path& dir, Backbone b, std::uint64_t seed) {
  auto g = build_architecture<float>(b, 3);
  nn::initialize(g, seed);
  auto tensors = nn::export_params(g);
  std::erase_if(tensors, [&](const nn::NamedTensor& t) { return t.name.starts_with(g.head_prefix()); });
  std::filesystem::create_directories(dir);
  nn::write_weights(pretrained_weights_path(b), tensors);
}

}  // namespace

TEST_CASE("fourth channel is the mean of the three") {
  FirstLayerKernel k{1, 1, 3, 1, {1.0f, 2.0f, 3.0f}, {0.25f}};
  const auto rgbd = adapt_first_layer(k, ChannelConfig::RGBD);
  REQUIRE(rgbd.in_channels == 4);
  CHECK(rgbd.at(0, 0, 3, 0) == 2.0f);
  for (int c = 0; c < 3; ++c) CHECK(rgbd.at(0, 0, c, 0) == k.at(0, 0, c, 0));
  CHECK(rgbd.bias == k.bias);
}

TEST_CASE("identical channels carry over unchanged") {
  auto k = random_kernel(3, 3, 8, false, 1);
  for (int y = 0; y < 3; ++y) {
    for (int x = 0; x < 3; ++x) {
      for (int f = 0; f < 8; ++f) k.at(y, x, 1, f) = k.at(y, x, 2, f) = k.at(y, x, 0, f);
    }
  }
  const auto rgbd = adapt_first_layer(k, ChannelConfig::RGBD);
  const auto gray = adapt_first_layer(k, ChannelConfig::Gray);
  for (int y = 0; y < 3; ++y) {
    for (int x = 0; x < 3; ++x) {
      for (int f = 0; f < 8; ++f) {
        CHECK(rgbd.at(y, x, 3, f) == doctest::Approx(k.at(y, x, 0, f)));
        CHECK(gray.at(y, x, 0, f) == doctest::Approx(k.at(y, x, 0, f)));
      }
    }
  }
}

TEST_CASE("every target config has the documented layout") {
  const auto k = random_kernel(3, 3, 5, true, 2);
  CHECK(adapt_first_layer(k, ChannelConfig::RGB) == k);
  const auto gray = adapt_first_layer(k, ChannelConfig::Gray);
  const auto grayd = adapt_first_layer(k, ChannelConfig::GrayD);
  CHECK(gray.in_channels == 1);
  CHECK(grayd.in_channels == 2);
  for (int y = 0; y < 3; ++y) {
    for (int x = 0; x < 3; ++x) {
      for (int f = 0; f < 5; ++f) {
        const double mean = (double(k.at(y, x, 0, f)) + k.at(y, x, 1, f) + k.at(y, x, 2, f)) / 3.0;
        CHECK(gray.at(y, x, 0, f) == doctest::Approx(mean).epsilon(1e-6));
        CHECK(grayd.at(y, x, 0, f) == gray.at(y, x, 0, f));
        CHECK(grayd.at(y, x, 1, f) == gray.at(y, x, 0, f));
      }
    }
  }
  CHECK(gray.bias == k.bias);
  CHECK(grayd.bias == k.bias);
  CHECK_THROWS_AS(adapt_first_layer(random_kernel(3, 4, 5, false, 3), ChannelConfig::RGBD), ShapeError);
}

TEST_CASE("property: zero depth leaves the first layer output unchanged") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 255.0);
  for (int trial = 0; trial < 50; ++trial) {
    const auto k = random_kernel(3, 3, 8, trial % 2 == 0, rng());
    const auto rgbd = adapt_first_layer(k, ChannelConfig::RGBD);
    std::vector<double> rgb(27), with_depth(36);
    for (int p = 0; p < 9; ++p) {
      for (int c = 0; c < 3; ++c) rgb[p * 3 + c] = with_depth[p * 4 + c] = u(rng);
      with_depth[p * 4 + 3] = 0.0;
    }
    for (int f = 0; f < 8; ++f) CHECK(std::abs(apply_at(rgbd, with_depth, f) - apply_at(k, rgb, f)) < 1e-5 * 255);
  }
}

// With a gray input v the mean kernel gives one third of the original kernel
// applied to (v, v, v): sum_c K_c / 3 * v = (sum_c K_c * v) / 3.
TEST_CASE("property: gray kernel is the mean-channel contraction") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    const auto k = random_kernel(3, 3, 4, false, rng());
    const auto gray = adapt_first_layer(k, ChannelConfig::Gray);
    std::vector<double> v(9), vvv(27);
    for (int p = 0; p < 9; ++p) v[p] = vvv[p * 3] = vvv[p * 3 + 1] = vvv[p * 3 + 2] = u(rng);
    for (int f = 0; f < 4; ++f) CHECK(apply_at(gray, v, f) == doctest::Approx(apply_at(k, vvv, f) / 3.0).epsilon(1e-5));
  }
}

TEST_CASE("installed kernels drive the graph's first convolution") {
  auto g3 = build_architecture<float>(Backbone::TinyConv, 3);
  nn::initialize(g3, 9);
  auto g4 = build_architecture<float>(Backbone::TinyConv, 4);
  nn::initialize(g4, 10);
  for (auto* p : g4.params()) {
    if (p->name.starts_with(g4.first_conv() + "/")) continue;
    p->value = g3.find_param(p->name)->value;
  }
  install_first_layer(g4, adapt_first_layer(extract_first_layer(g3), ChannelConfig::RGBD));

  std::mt19937_64 rng(11);
  nn::Tensor<float> x3(nn::Shape{2, 32, 32, 3}), x4(nn::Shape{2, 32, 32, 4});
  for (int n = 0; n < 2; ++n) {
    for (int y = 0; y < 32; ++y) {
      for (int x = 0; x < 32; ++x) {
        for (int c = 0; c < 3; ++c) x3.at(n, y, x, c) = x4.at(n, y, x, c) = float(uniform_below(rng, 256));
      }
    }
  }
  const auto a = g3.forward(x3, nn::Mode::Infer).data;
  const auto b = g4.forward(x4, nn::Mode::Infer).data;
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(b[i] == doctest::Approx(a[i]).epsilon(1e-5));
  CHECK_THROWS_AS(install_first_layer(g4, extract_first_layer(g3)), ShapeError);
}

TEST_CASE("kernel dump round trip") {
  TempDir dir("kdump");
  const auto with_bias = random_kernel(3, 4, 32, true, 6);
  const auto without = random_kernel(7, 1, 64, false, 7);
  write_kernel_dump(dir / "a.bin", with_bias);
  write_kernel_dump(dir / "b.bin", without);
  CHECK(read_kernel_dump(dir / "a.bin") == with_bias);
  CHECK(read_kernel_dump(dir / "b.bin") == without);
  CHECK(std::filesystem::file_size(dir / "b.bin") == 8 + 6 * 4 + 7 * 7 * 64 * 4);

  std::ofstream(dir / "bad.bin", std::ios::binary) << "NOTAKERNEL";
  CHECK_THROWS(read_kernel_dump(dir / "bad.bin"));
  CHECK_THROWS_AS(read_kernel_dump(dir / "none.bin"), MissingResource);
}

TEST_CASE("tinyconv classifiers are seeded and shaped by the config") {
  const auto a = build_classifier(cfg_for(Backbone::TinyConv, ChannelConfig::GrayD, 5));
  const auto b = build_classifier(cfg_for(Backbone::TinyConv, ChannelConfig::GrayD, 5));
  const auto c = build_classifier(cfg_for(Backbone::TinyConv, ChannelConfig::GrayD, 6));
  CHECK(a.in_channels() == 2);
  CHECK_FALSE(a.pretrained);
  CHECK(nn::weights_digest(a.graph) == nn::weights_digest(b.graph));
  CHECK(nn::weights_digest(a.graph) != nn::weights_digest(c.graph));
  CHECK(a.graph.output_shape(nn::Shape{1, 224, 224, 2}) == nn::Shape{1, 1, 1, 1});
}

TEST_CASE("tinyconv spec") {
  const auto spec = tinyconv_spec();
  CHECK(spec.parameter_count(4) == 23793);
  CHECK(spec.parameter_count(3) == 23649);
  CHECK(spec.feature_extent(224) == 28);
  CHECK(spec.feature_channels() == 64);
}

TEST_CASE("input scaling maps the cached range to the backbone range") {
  const auto x = input_scaling(Backbone::Xception, 4);
  for (int c = 0; c < 4; ++c) {
    CHECK(0.0f * x.scale[c] + x.offset[c] == doctest::Approx(-1.0));
    CHECK(255.0f * x.scale[c] + x.offset[c] == doctest::Approx(1.0));
  }
  const auto t = input_scaling(Backbone::TinyConv, 1);
  CHECK(255.0f * t.scale[0] + t.offset[0] == doctest::Approx(1.0));
  const auto r = input_scaling(Backbone::ResNet50, 3);
  CHECK(r.offset[0] == doctest::Approx(-123.68));
  CHECK_THROWS_AS(input_scaling(Backbone::TinyConv, 5), ConfigError);
}

TEST_CASE("missing pretrained weights name the expected path") {
  TempDir dir("noweights");
  ScopedEnv env("DEPTHFAKE_WEIGHTS_DIR", dir.path().string());
  CHECK(pretrained_weights_path(Backbone::Xception) == dir.path() / "xception_imagenet.dfw");
  CHECK_THROWS_WITH_AS(build_classifier(cfg_for(Backbone::Xception, ChannelConfig::RGBD)),
                       doctest::Contains("xception_imagenet.dfw"), MissingResource);
  CHECK_THROWS_WITH_AS(build_classifier(cfg_for(Backbone::Xception, ChannelConfig::RGBD)),
                       doctest::Contains("TINYCONV"), MissingResource);
}

TEST_CASE("pretrained xception: surgery preserves every downstream weight") {
  TempDir dir("xweights");
  ScopedEnv env("DEPTHFAKE_WEIGHTS_DIR", dir.path().string());
  write_fake_imagenet(dir.path(), Backbone::Xception, 77);
  auto source = build_architecture<float>(Backbone::Xception, 3);
  nn::import_params(source, nn::read_weights(pretrained_weights_path(Backbone::Xception)),
                    nn::ImportPolicy{{source.head_prefix()}, false});

  const auto rgb_a = build_classifier(cfg_for(Backbone::Xception, ChannelConfig::RGB));
  const auto rgb_b = build_classifier(cfg_for(Backbone::Xception, ChannelConfig::RGB));
  CHECK(rgb_a.pretrained);
  CHECK(nn::weights_digest(rgb_a.graph) == nn::weights_digest(rgb_b.graph));
  CHECK(nn::weights_digest(rgb_a.graph, {"head_"}) == nn::weights_digest(source, {"head_"}));

  const auto rgbd = build_classifier(cfg_for(Backbone::Xception, ChannelConfig::RGBD));
  CHECK(rgbd.in_channels() == 4);
  const auto skip = non_backbone_prefixes(rgbd.graph);
  CHECK(nn::weights_digest(rgbd.graph, skip) == nn::weights_digest(source, skip));
  CHECK(extract_first_layer(rgbd.graph) == adapt_first_layer(extract_first_layer(source), ChannelConfig::RGBD));
  CHECK(rgbd.graph.output_shape(nn::Shape{1, 224, 224, 4}) == nn::Shape{1, 1, 1, 1});

  nn::Tensor<float> x(nn::Shape{1, 224, 224, 4}, 128.0f);
  const auto& y = const_cast<nn::Graph<float>&>(rgbd.graph).forward(x, nn::Mode::Infer);
  CHECK(y.data.size() == 1);
  CHECK(std::isfinite(y.data[0]));
}

TEST_CASE("freezing the backbone leaves only the head trainable") {
  auto cfg = cfg_for(Backbone::TinyConv, ChannelConfig::RGB);
  cfg.freeze_backbone = true;
  auto m = build_classifier(cfg);
  for (const auto* p : m.graph.params()) CHECK(p->trainable == p->name.starts_with("head_"));
  set_backbone_trainable(m.graph, true);
  for (const auto* p : m.graph.params()) CHECK(p->trainable);
}
