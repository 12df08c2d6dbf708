#include <numeric>

#include "doctest.h"
#include "unit/support.hpp"

#include "depthfake/backbones.hpp"
#include "depthfake/bench.hpp"
#include "depthfake/errors.hpp"

using namespace depthfake;
using namespace depthfake::bench;
using depthfake::testing::TempDir;

namespace {

constexpr Backbone kBackbones[] = {Backbone::TinyConv, Backbone::Xception, Backbone::ResNet50,
                                   Backbone::MobileNetV1};

std::int64_t flops_for(Backbone b, int channels, int size = 224) {
  return count_flops(adapt::build_architecture<float>(b, channels), nn::Shape{1, size, size, channels}).total;
}

// Hand count for TinyConv on a square input: three stride-2 3x3 'same' convs
// (16, 32, 64 filters), each followed by ReLU, then GAP and a 64 -> 1 dense.
std::int64_t tinyconv_oracle(int channels, int size) {
  std::int64_t total = 0;
  int extent = size, cin = channels;
  for (int cout : {16, 32, 64}) {
    extent = (extent + 1) / 2;
    const std::int64_t area = static_cast<std::int64_t>(extent) * extent;
    total += 2LL * 9 * cin * cout * area + cout * area;
    cin = cout;
  }
  return total + 64 + 2 * 64;
}

}  // namespace

TEST_CASE("single convolution flops") {
  nn::Graph<float> g;
  g.emplace<nn::Conv2D<float>>(nn::Graph<float>::kGraphInput, "conv", 3, 32, 3, 2, nn::PadMode::Valid, false);
  const auto c = count_flops(g, nn::Shape{1, 224, 224, 3});
  CHECK(c.total == 2LL * 3 * 3 * 3 * 32 * 111 * 111);
  CHECK(c.gflops() == doctest::Approx(0.0213).epsilon(0.005));
}

TEST_CASE("layer conventions") {
  nn::LayerDesc d;
  d.output = nn::Shape{1, 7, 7, 8};
  d.inputs = {nn::Shape{1, 7, 7, 8}};
  d.kind = nn::LayerKind::BatchNorm;
  CHECK(layer_flops(d) == 2 * 392);
  d.kind = nn::LayerKind::Activation;
  CHECK(layer_flops(d) == 392);
  d.kind = nn::LayerKind::Rescale;
  CHECK(layer_flops(d) == 0);
  d.kind = nn::LayerKind::DepthwiseConv2D;
  d.kernel = 3;
  CHECK(layer_flops(d) == 2 * 9 * 392);
  d.kind = nn::LayerKind::Dense;
  d.inputs = {nn::Shape{1, 1, 1, 2048}};
  d.output = nn::Shape{1, 1, 1, 1};
  CHECK(layer_flops(d) == 4096);
}

TEST_CASE("tinyconv count matches the hand count") {
  for (int c = 1; c <= 4; ++c) {
    for (int size : {32, 57, 224}) CHECK(flops_for(Backbone::TinyConv, c, size) == tinyconv_oracle(c, size));
  }
  CHECK(tinyconv_oracle(3, 224) == 68'992'192);
  CHECK(static_cast<double>(flops_for(Backbone::TinyConv, 3)) * 1e-9 == doctest::Approx(0.0690).epsilon(1e-3));
}

TEST_CASE("xception depth channel costs exactly one first-layer channel") {
  const auto g = adapt::build_architecture<float>(Backbone::Xception, 3);
  const auto term = first_layer_channel_flops(g, nn::Shape{1, 224, 224, 3});
  CHECK(term == 2LL * 3 * 3 * 1 * 32 * 111 * 111);
  const auto delta = flops_for(Backbone::Xception, 4) - flops_for(Backbone::Xception, 3);
  CHECK(delta == term);
  CHECK(std::abs(static_cast<double>(delta) * 1e-9 - 0.007) <= 0.2 * 0.007);
}

TEST_CASE("property: every added input channel costs the first-layer term") {
  for (auto b : kBackbones) {
    CAPTURE(to_string(b));
    const auto g = adapt::build_architecture<float>(b, 1);
    const auto term = first_layer_channel_flops(g, nn::Shape{1, 224, 224, 1});
    std::int64_t prev = flops_for(b, 1);
    for (int c = 2; c <= 4; ++c) {
      const auto cur = flops_for(b, c);
      CHECK(cur > prev);
      CHECK(cur - prev == term);
      prev = cur;
    }
  }
}

TEST_CASE("totals are the sum of the per-layer counts") {
  for (auto b : kBackbones) {
    const auto g = adapt::build_architecture<float>(b, 4);
    const auto layers = g.describe(nn::Shape{1, 224, 224, 4});
    const auto c = count_flops(layers);
    std::int64_t sum = 0;
    for (const auto& [name, f] : c.per_layer) sum += f;
    CHECK(sum == c.total);
    CHECK(c.per_layer.size() == layers.size());
    for (std::size_t i = 0; i < layers.size(); ++i) CHECK(c.per_layer[i].second == layer_flops(layers[i]));
  }
}

TEST_CASE("unresolvable shapes are reported") {
  const auto g = adapt::build_architecture<float>(Backbone::TinyConv, 3);
  CHECK_THROWS_AS(count_flops(g, nn::Shape{1, 224, 224, 4}), ShapeError);
}

TEST_CASE("fps measurement") {
  auto g = adapt::build_architecture<float>(Backbone::TinyConv, 4);
  nn::initialize(g, 1);
  FpsOptions o;
  o.warmup = 2;
  o.iters = 29;
  o.size = 64;
  CHECK_THROWS_AS(measure_fps(g, Backbone::TinyConv, ChannelConfig::RGBD, "cpu", o), ConfigError);
  o.iters = 30;
  const auto r = measure_fps(g, Backbone::TinyConv, ChannelConfig::RGBD, "cpu", o);
  CHECK(r.fps_mean > 0);
  CHECK(r.fps_std >= 0);
  CHECK(r.n_iters == 30);
  CHECK(r.n_warmup == 2);
  CHECK(r.batch_size == 1);
  CHECK_FALSE(r.includes_face_extraction);
  CHECK(r.gflops == doctest::Approx(static_cast<double>(flops_for(Backbone::TinyConv, 4, 64)) * 1e-9));
  CHECK(timer_tick() > 0);
}

TEST_CASE("bench lock is exclusive") {
  TempDir dir("lock");
  {
    BenchLock a(dir / "bench.lock");
    CHECK_THROWS_AS(BenchLock(dir / "bench.lock"), BenchError);
  }
  CHECK_NOTHROW(BenchLock(dir / "bench.lock"));
}

TEST_CASE("ledger round trip and report") {
  TempDir dir("ledger");
  const auto file = dir / "bench" / "ledger.csv";
  auto row = [](ChannelConfig c, double gflops, double fps) {
    BenchResult r;
    r.backbone = Backbone::Xception;
    r.channel_config = c;
    r.gflops = gflops;
    r.fps_mean = fps;
    r.fps_std = 1.5;
    r.platform = "cpu";
    r.n_iters = 100;
    return r;
  };
  append_ledger(file, row(ChannelConfig::RGB, 9.1361, 50.0), "2026-01-01T00:00:00Z");
  append_ledger(file, row(ChannelConfig::RGBD, 9.1432, 80.0), "2026-01-01T00:00:01Z");
  append_ledger(file, row(ChannelConfig::RGBD, 9.1432, 49.0), "2026-01-01T00:00:02Z");
  const auto rows = read_ledger(file);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].timestamp == "2026-01-01T00:00:00Z");
  CHECK(rows[1].config == "RGBD");
  CHECK(rows[1].backbone == "XCEPTION");
  CHECK(rows[2].fps_mean == 49.0);
  CHECK(rows[2].gflops == doctest::Approx(9.1432));
  CHECK(rows[2].n_iters == 100);

  const auto md = ledger_report(rows);
  CHECK(md.find("9.143 (+0.007) | 49.00 ± 1.50 (-1.00) |") != std::string::npos);
  CHECK(md.find("80.00") == std::string::npos);
  CHECK_THROWS_AS(read_ledger(dir / "absent.csv"), MissingResource);
  CHECK(utc_timestamp().back() == 'Z');
}
