// Acceptance gate: one PASS/FAIL line per criterion.
//
//   acceptance            run every criterion
//   acceptance 3 11       run the listed criteria
//
// Exits 1 when any selected criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "oracles.hpp"
#include "unit/support.hpp"

#include "depthfake/adapt.hpp"
#include "depthfake/bench.hpp"
#include "depthfake/cli.hpp"
#include "depthfake/depth.hpp"
#include "depthfake/eval.hpp"
#include "depthfake/manifest.hpp"
#include "depthfake/random.hpp"
#include "depthfake/synth.hpp"
#include "depthfake/train.hpp"

using namespace depthfake;
using depthfake::testing::TempDir;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
};

// 1. Zero depth through an adapted RGBD first layer reproduces the RGB layer.
Outcome channel_surgery() {
  std::mt19937_64 rng(1);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int k = trial % 2 ? 3 : 7;
    const int filters = 32;
    nn::Graph<float> g3, g4;
    g3.emplace<nn::Conv2D<float>>(nn::Graph<float>::kGraphInput, "conv", 3, filters, k, 2, nn::PadMode::Same,
                                  trial % 3 == 0);
    g4.emplace<nn::Conv2D<float>>(nn::Graph<float>::kGraphInput, "conv", 4, filters, k, 2, nn::PadMode::Same,
                                  trial % 3 == 0);
    g3.set_first_conv("conv");
    g4.set_first_conv("conv");
    for (auto* p : g3.params()) {
      for (auto& v : p->value) v = static_cast<float>(uniform_unit(rng) - 0.5);
    }
    adapt::install_first_layer(g4, adapt::adapt_first_layer(adapt::extract_first_layer(g3), ChannelConfig::RGBD));

    nn::Tensor<float> rgb(nn::Shape{1, 29, 31, 3}), rgbd(nn::Shape{1, 29, 31, 4});
    for (std::size_t px = 0; px < 29 * 31; ++px) {
      for (int c = 0; c < 3; ++c) {
        rgb.data[px * 3 + c] = rgbd.data[px * 4 + c] = static_cast<float>(2.0 * uniform_unit(rng) - 1.0);
      }
      rgbd.data[px * 4 + 3] = 0.0f;
    }
    const auto& a = g3.forward(rgb, nn::Mode::Infer);
    const auto& b = g4.forward(rgbd, nn::Mode::Infer);
    for (std::size_t i = 0; i < a.data.size(); ++i) {
      worst = std::max(worst, static_cast<double>(std::abs(a.data[i] - b.data[i])));
    }
  }
  return {worst <= 1e-5, fmt::format("max-abs {:.3g} over 100 kernels (tol 1e-5)", worst)};
}

// 2. Every integer millimeter value against round(v * 255 / 5000).
Outcome depth_normalization() {
  int mismatches = 0;
  for (int v = 0; v <= 5000; ++v) {
    const auto expected = static_cast<int>(std::lround(v * 255.0 / 5000.0));
    mismatches += depth::normalize_depth_value(v) != expected;
  }
  const bool ends = depth::normalize_depth_value(0) == 0 && depth::normalize_depth_value(5000) == 255;
  return {mismatches == 0 && ends, fmt::format("{} mismatches over 0..5000, endpoints {}", mismatches,
                                               ends ? "0 and 255" : "wrong")};
}

// 3. Xception RGBD - RGB equals one extra first-layer channel, close to 0.007.
Outcome flops_delta() {
  const nn::Shape rgb{1, 224, 224, 3}, rgbd{1, 224, 224, 4};
  const auto g3 = adapt::build_architecture<float>(Backbone::Xception, 3);
  const auto g4 = adapt::build_architecture<float>(Backbone::Xception, 4);
  const std::int64_t delta = bench::count_flops(g4, rgbd).total - bench::count_flops(g3, rgb).total;
  const std::int64_t closed_form = 2LL * 3 * 3 * 1 * 32 * 111 * 111;
  const double gflops = static_cast<double>(delta) * 1e-9;
  const double rel = std::abs(gflops - 0.007) / 0.007;
  return {delta == closed_form && rel <= 0.2,
          fmt::format("delta {} FLOPs = {:.4f} GFLOPS ({:.1f}% from 0.007), closed form {}", delta, gflops,
                      100 * rel, closed_form)};
}

double test_accuracy(const synth::SynthSpec& spec, const std::vector<FrameRecord>& records, ChannelConfig config,
                     int epochs) {
  RunConfig cfg;
  cfg.backbone = Backbone::TinyConv;
  cfg.channel_config = config;
  cfg.epochs = epochs;
  cfg.batch_size = 32;
  cfg.seed = 0;
  auto model = adapt::build_classifier(cfg);
  const synth::SyntheticDataset tr(spec, config, filter_split(records, Split::Train));
  const synth::SyntheticDataset va(spec, config, filter_split(records, Split::Val));
  const auto test = filter_split(records, Split::Test);
  const synth::SyntheticDataset te(spec, config, test);
  train::train(model, tr, va, cfg);
  const auto scores = train::predict(model.graph, te);
  std::vector<eval::Prediction> preds;
  for (std::size_t i = 0; i < scores.size(); ++i) preds.push_back({test[i], scores[i]});
  return eval::frame_accuracy(preds).at(eval::kFull);
}

// 4. Real and fake differ only in depth: RGB stays at chance, RGBD separates.
Outcome depth_separability() {
  const synth::SynthSpec spec{200, 20, 224, 0};
  const auto records = assign_splits(synth::synth_records(spec), SplitFractions{0.8, 0.1, 0.1}, 0);
  const int epochs = 2;
  const double rgb = test_accuracy(spec, records, ChannelConfig::RGB, epochs);
  const double rgbd = test_accuracy(spec, records, ChannelConfig::RGBD, epochs);
  return {rgb <= 60.0 && rgbd >= 90.0,
          fmt::format("TEST frame accuracy RGB {:.2f}% (<= 60), RGBD {:.2f}% (>= 90), {} test frames, {} epochs",
                      rgb, rgbd, filter_split(records, Split::Test).size(), epochs)};
}

// 5. 32 balanced frames, augmentation off, at most 200 steps.
Outcome overfit() {
  synth::SynthSpec spec{8, 5, 64, 1};
  std::vector<FrameRecord> train_records, val_records;
  for (const auto& r : synth::synth_records(spec)) (r.frame_index == 0 ? val_records : train_records).push_back(r);
  RunConfig cfg;
  cfg.backbone = Backbone::TinyConv;
  cfg.channel_config = ChannelConfig::RGBD;
  cfg.batch_size = 8;
  cfg.epochs = 1000;
  cfg.augment = false;
  cfg.seed = 4;
  auto model = adapt::build_classifier(cfg);
  std::vector<double> losses;
  train::TrainOptions opts;
  opts.max_steps = 200;
  opts.on_step = [&](const train::StepInfo& s) { losses.push_back(s.loss); };
  train::train(model, synth::SyntheticDataset(spec, cfg.channel_config, train_records),
               synth::SyntheticDataset(spec, cfg.channel_config, val_records), cfg, opts);
  const double first = losses.front(), last = losses.back();
  const bool ok = train_records.size() == 32 && losses.size() <= 200 && last < 0.05 &&
                  std::abs(first - std::numbers::ln2) <= 0.15;
  return {ok, fmt::format("{} frames, {} steps, step-0 loss {:.4f} (ln2 {:.4f}), final loss {:.4f} (< 0.05)",
                          train_records.size(), losses.size(), first, std::numbers::ln2, last)};
}

// 6. Loss values.
Outcome loss_values() {
  const double a = train::binary_cross_entropy(1.0, 0.5);
  const double b = train::binary_cross_entropy(0.0, 0.9);
  return {std::abs(a - 0.693147) <= 1e-5 && std::abs(b - 2.302585) <= 1e-5,
          fmt::format("BCE(1, 0.5) = {:.6f}, BCE(0, 0.9) = {:.6f}", a, b)};
}

// 7. First-layer gradients of TinyConv against central differences.
Outcome gradient_check() {
  RunConfig cfg;
  cfg.backbone = Backbone::TinyConv;
  cfg.channel_config = ChannelConfig::RGBD;
  cfg.seed = 4;
  const auto model = adapt::build_classifier(cfg);
  synth::SynthSpec spec{4, 1, 56, 2};
  const synth::SyntheticDataset data(spec, cfg.channel_config, synth::synth_records(spec));
  std::vector<preprocess::InputStack> stacks;
  std::vector<float> y;
  for (std::size_t i = 0; i < data.size(); ++i) {
    stacks.push_back(data.get(i));
    y.push_back(data.label(i) == Label::Fake ? 1.0f : 0.0f);
  }
  const auto r = oracle::first_layer_gradcheck(model.graph, cfg.channel_config, train::make_batch(stacks), y);
  return {stacks.size() == 4 && r.max_rel_error < 1e-3,
          fmt::format("{} samples, {} kernel entries, max rel error {:.3g}, norm rel error {:.3g}", stacks.size(),
                      r.entries, r.max_rel_error, r.norm_rel_error)};
}

// 8. Majority vote with ties to FAKE against brute-force counting.
Outcome video_vote() {
  std::mt19937_64 rng(8);
  int mismatches = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    std::vector<Label> votes(1 + uniform_below(rng, 50));
    for (auto& v : votes) v = uniform_below(rng, 2) ? Label::Fake : Label::Real;
    mismatches += eval::video_vote(votes) != oracle::majority(votes);
  }
  return {mismatches == 0, fmt::format("{} mismatches over 10000 lists", mismatches)};
}

// 9. Repeatability and config spread of the fps harness on TinyConv.
Outcome fps_stability() {
  bench::BenchLock lock(std::filesystem::temp_directory_path() / "depthfake-bench.lock");
  bench::FpsOptions opts;
  opts.warmup = 20;
  opts.iters = 200;
  auto measure = [&](ChannelConfig c) {
    auto g = adapt::build_architecture<float>(Backbone::TinyConv, channel_count(c));
    nn::initialize(g, 0);
    return bench::measure_fps(g, Backbone::TinyConv, c, "cpu", opts).fps_mean;
  };
  const double first = measure(ChannelConfig::RGBD);
  const double second = measure(ChannelConfig::RGBD);
  const double repeat = std::abs(first - second) / std::max(first, second);
  std::vector<double> fps;
  std::string per_config;
  for (auto c : kAllChannelConfigs) {
    fps.push_back(measure(c));
    per_config += fmt::format(" {} {:.1f}", to_string(c), fps.back());
  }
  const auto [lo, hi] = std::ranges::minmax(fps);
  const double spread = (hi - lo) / hi;
  return {repeat < 0.10 && spread < 0.10,
          fmt::format("run-to-run {:.1f}% (< 10), config spread {:.1f}% (< 10); fps{}", 100 * repeat,
                      100 * spread, per_config)};
}

// 10. Two identical cmd_train runs on the fixture.
Outcome determinism() {
  TempDir dir("acceptance");
  cli::FixtureOptions fo;
  fo.out = dir / "data";
  fo.videos_per_class = 5;
  cmd_fixture(fo);
  auto c = cli::load_config("", {{"dataset.root", (dir / "data").string()},
                                 {"cache_dir", (dir / "cache").string()},
                                 {"scope", "full"},
                                 {"splits.train", "0.6"},
                                 {"splits.val", "0.2"},
                                 {"splits.test", "0.2"},
                                 {"run.backbone", "TINYCONV"},
                                 {"run.crop_size", "64"},
                                 {"run.epochs", "3"},
                                 {"run.batch_size", "8"},
                                 {"prepare.configs", R"(["RGBD"])"}});
  cli::cmd_prepare(c);
  std::vector<std::vector<train::EpochRecord>> runs;
  for (const char* name : {"a", "b"}) {
    c.output_dir = dir / name;
    cli::cmd_train(c);
    runs.push_back(train::read_history_csv(c.model_dir(eval::kFull) / "history.csv"));
  }
  double worst = 0.0;
  bool shape = runs[0].size() == runs[1].size() && !runs[0].empty();
  for (std::size_t i = 0; shape && i < runs[0].size(); ++i) {
    const auto& a = runs[0][i];
    const auto& b = runs[1][i];
    shape &= a.epoch == b.epoch;
    for (double d : {a.train_loss - b.train_loss, a.val_loss - b.val_loss, a.val_accuracy - b.val_accuracy,
                     a.lr - b.lr}) {
      worst = std::max(worst, std::abs(d));
    }
  }
  return {shape && worst <= 1e-4, fmt::format("{} epochs, max history difference {:.3g} (tol 1e-4)",
                                              runs[0].size(), worst)};
}

// 11. Reference Xception RGB and RGBD accuracies give the bracketed deltas.
Outcome report_arithmetic() {
  eval::EvalReport rgb, rgbd;
  rgb.backbone = rgbd.backbone = Backbone::Xception;
  rgb.config = ChannelConfig::RGB;
  rgbd.config = ChannelConfig::RGBD;
  rgb.frame_accuracy = {{"DF", 97.65}, {"F2F", 95.82}, {"FS", 97.84}, {"NT", 76.87}, {"FULL", 86.80}};
  rgbd.frame_accuracy = {{"DF", 97.76}, {"F2F", 97.41}, {"FS", 98.80}, {"NT", 85.09}, {"FULL", 91.93}};
  const auto cmp = eval::compare_reports(rgbd, rgb);
  const std::vector<std::pair<std::string, std::string>> expected = {
      {"DF", "+0.11"}, {"F2F", "+1.59"}, {"FS", "+0.96"}, {"NT", "+8.22"}, {"FULL", "+5.13"}};
  bool ok = true;
  std::string got;
  for (const auto& [bucket, text] : expected) {
    const auto cell = fmt::format("{:+.2f}", cmp.frame_deltas.at(bucket));
    ok &= cell == text;
    got += fmt::format(" {} {}", bucket, cell);
  }
  return {ok, "deltas" + got};
}

const std::vector<Criterion> kCriteria = {
    {1, "channel surgery equivalence", channel_surgery},
    {2, "depth normalization", depth_normalization},
    {3, "FLOPs delta", flops_delta},
    {4, "synthetic depth separability", depth_separability},
    {5, "overfit smoke", overfit},
    {6, "loss values", loss_values},
    {7, "gradient check", gradient_check},
    {8, "video vote oracle", video_vote},
    {9, "fps harness stability", fps_stability},
    {10, "training determinism", determinism},
    {11, "report arithmetic", report_arithmetic},
};

}  // namespace

int main(int argc, char** argv) {
  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) selected.push_back(std::stoi(argv[i]));
  int failures = 0;
  for (const auto& c : kCriteria) {
    if (!selected.empty() && std::ranges::find(selected, c.id) == selected.end()) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, fmt::format("threw: {}", e.what())};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("[%2d] %-30s %s  %s (%.1fs)\n", c.id, c.name, o.pass ? "PASS" : "FAIL", o.detail.c_str(), secs);
    std::fflush(stdout);
    failures += !o.pass;
  }
  return failures ? 1 : 0;
}
