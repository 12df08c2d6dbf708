#include "depthfake/cli.hpp"

#include <atomic>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <mutex>
#include <set>
#include <thread>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "depthfake/adapt.hpp"
#include "depthfake/errors.hpp"
#include "depthfake/nn/weights.hpp"
#include "depthfake/synth.hpp"
#include "depthfake/version.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace depthfake::cli {
namespace {

json config_list(const std::vector<ChannelConfig>& configs) {
  json out = json::array();
  for (auto c : configs) out.push_back(std::string(to_string(c)));
  return out;
}

std::vector<ChannelConfig> parse_config_list(const json& j) {
  std::vector<ChannelConfig> out;
  for (const auto& v : j) out.push_back(parse_channel_config(v.get<std::string>()));
  return out;
}

std::string_view json_kind(const json& v) {
  if (v.is_boolean()) return "a boolean";
  if (v.is_number_unsigned()) return "a non-negative integer";
  if (v.is_number_integer()) return "an integer";
  if (v.is_number()) return "a number";
  if (v.is_string()) return "a string";
  if (v.is_array()) return "an array";
  if (v.is_object()) return "an object";
  return "null";
}

// Rejects keys of `j` that do not appear in `reference` and scalars whose
// JSON type differs from the default's. Integers are accepted for numbers.
void check_keys(const json& j, const json& reference, const std::string& path) {
  if (!j.is_object()) throw ConfigError(fmt::format("{}: expected an object", path.empty() ? "config" : path));
  for (const auto& [key, value] : j.items()) {
    const std::string where = path.empty() ? key : path + "." + key;
    if (!reference.contains(key)) throw ConfigError(fmt::format("{}: unknown key", where));
    const json& ref = reference.at(key);
    bool ok = true;
    if (ref.is_object()) {
      check_keys(value, ref, where);
    } else if (ref.is_number_float()) {
      ok = value.is_number();
    } else if (ref.is_number_unsigned()) {
      ok = value.is_number_unsigned() || (value.is_number_integer() && value.get<std::int64_t>() >= 0);
    } else if (ref.is_number_integer()) {
      ok = value.is_number_integer();
    } else if (!ref.is_null()) {
      ok = value.type() == ref.type();
    }
    if (!ok) {
      throw ConfigError(fmt::format("{}: expected {}, got {}", where, json_kind(ref), json_kind(value)));
    }
  }
}

template <typename F>
auto with_path(const std::string& path, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("{}: {}", path, e.what()));
  } catch (const ConfigError& e) {
    const std::string what = e.what();
    if (what.starts_with(path)) throw;
    throw ConfigError(fmt::format("{}: {}", path, what));
  }
}

void merge(json& base, const json& patch) {
  if (!patch.is_object() || !base.is_object()) {
    base = patch;
    return;
  }
  for (const auto& [key, value] : patch.items()) {
    if (base.contains(key) && base[key].is_object() && value.is_object()) {
      merge(base[key], value);
    } else {
      base[key] = value;
    }
  }
}

json parse_value(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::exception&) {
    return text;
  }
}

std::string read_text(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw MissingResource(fmt::format("cannot open '{}'", file.string()));
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

void ExperimentConfig::validate() const {
  run.validate("run");
  const double sum = splits.train + splits.val + splits.test;
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError(fmt::format("splits: fractions sum to {}, not 1", sum));
  if (splits.train < 0 || splits.val < 0 || splits.test < 0) throw ConfigError("splits: negative fraction");
  if (scope != "per_class" && scope != "full") {
    ManipulationClass cls{};
    try {
      cls = parse_manipulation(scope);
    } catch (const ConfigError&) {
      throw ConfigError(fmt::format("scope: expected per_class, full or a fake class, got '{}'", scope));
    }
    if (cls == ManipulationClass::Original) throw ConfigError("scope: ORIGINAL is not a fake class");
  }
  if (depth.kind != "auto" && depth.kind != "oracle" && depth.kind != "dnn") {
    throw ConfigError(fmt::format("depth.kind: unknown estimator '{}'", depth.kind));
  }
  if (depth.kind == "dnn" && depth.model_path.empty()) throw ConfigError("depth.model_path: required for kind dnn");
  if (!(depth.output_scale_mm > 0.0)) throw ConfigError("depth.output_scale_mm: must be positive");
  if (detector.kind != "skin" && detector.kind != "center" && detector.kind != "cascade") {
    throw ConfigError(fmt::format("detector.kind: unknown detector '{}'", detector.kind));
  }
  if (detector.kind == "cascade" && detector.cascade_path.empty()) {
    throw ConfigError("detector.cascade_path: required for kind cascade");
  }
  if (detector.min_area < 1) throw ConfigError("detector.min_area: must be positive");
  if (prepare.configs.empty()) throw ConfigError("prepare.configs: must list at least one config");
  if (!(eval.threshold > 0.0 && eval.threshold < 1.0)) throw ConfigError("eval.threshold: must lie in (0, 1)");
  if (eval.checkpoint.empty()) throw ConfigError("eval.checkpoint: must not be empty");
  if (bench.iters < 30) throw ConfigError("bench.iters: must be at least 30");
  if (bench.warmup < 0) throw ConfigError("bench.warmup: must be non-negative");
  if (bench.configs.empty()) throw ConfigError("bench.configs: must list at least one config");
  if (output_dir.empty()) throw ConfigError("output_dir: must not be empty");
  if (jobs < 1) throw ConfigError("jobs: must be at least 1");
}

fs::path ExperimentConfig::resolved_cache_dir() const {
  if (!cache_dir.empty()) return cache_dir;
  if (const char* env = std::getenv("DEPTHFAKE_CACHE_DIR"); env && *env) return env;
  return output_dir / "cache";
}

fs::path ExperimentConfig::model_dir(const std::string& scope_name) const {
  return output_dir / std::string(to_string(run.channel_config)) / scope_name;
}

void to_json(json& j, const ExperimentConfig& c) {
  j = {{"dataset", {{"root", c.dataset.root.generic_string()}, {"layout_file", c.dataset.layout_file.generic_string()}}},
       {"splits", {{"train", c.splits.train}, {"val", c.splits.val}, {"test", c.splits.test}, {"seed", c.split_seed}}},
       {"scope", c.scope},
       {"run", c.run},
       {"depth", c.depth},
       {"detector", c.detector},
       {"prepare", {{"configs", config_list(c.prepare.configs)}, {"allow_upscale", c.prepare.allow_upscale}}},
       {"eval", {{"threshold", c.eval.threshold}, {"checkpoint", c.eval.checkpoint}}},
       {"bench",
        {{"platform", c.bench.platform},
         {"warmup", c.bench.warmup},
         {"iters", c.bench.iters},
         {"configs", config_list(c.bench.configs)},
         {"include_face_extraction", c.bench.include_face_extraction},
         {"lock_file", c.bench.lock_file.generic_string()}}},
       {"output_dir", c.output_dir.generic_string()},
       {"cache_dir", c.cache_dir.generic_string()},
       {"jobs", c.jobs}};
}

void from_json(const json& j, ExperimentConfig& c) {
  const ExperimentConfig d;
  const json ref = d;
  check_keys(j, ref, "");
  c = d;
  if (j.contains("dataset")) {
    with_path("dataset", [&] {
      const auto& s = j.at("dataset");
      c.dataset.root = s.value("root", std::string());
      c.dataset.layout_file = s.value("layout_file", std::string());
    });
  }
  if (j.contains("splits")) {
    with_path("splits", [&] {
      const auto& s = j.at("splits");
      c.splits.train = s.value("train", d.splits.train);
      c.splits.val = s.value("val", d.splits.val);
      c.splits.test = s.value("test", d.splits.test);
      c.split_seed = s.value("seed", d.split_seed);
    });
  }
  if (j.contains("scope")) c.scope = with_path("scope", [&] { return j.at("scope").get<std::string>(); });
  if (j.contains("run")) c.run = with_path("run", [&] { return j.at("run").get<RunConfig>(); });
  if (j.contains("depth")) c.depth = with_path("depth", [&] { return j.at("depth").get<depth::EstimatorOptions>(); });
  if (j.contains("detector")) {
    c.detector = with_path("detector", [&] { return j.at("detector").get<preprocess::DetectorOptions>(); });
  }
  if (j.contains("prepare")) {
    with_path("prepare", [&] {
      const auto& s = j.at("prepare");
      if (s.contains("configs")) c.prepare.configs = parse_config_list(s.at("configs"));
      c.prepare.allow_upscale = s.value("allow_upscale", d.prepare.allow_upscale);
    });
  }
  if (j.contains("eval")) {
    with_path("eval", [&] {
      const auto& s = j.at("eval");
      c.eval.threshold = s.value("threshold", d.eval.threshold);
      c.eval.checkpoint = s.value("checkpoint", d.eval.checkpoint);
    });
  }
  if (j.contains("bench")) {
    with_path("bench", [&] {
      const auto& s = j.at("bench");
      c.bench.platform = s.value("platform", d.bench.platform);
      c.bench.warmup = s.value("warmup", d.bench.warmup);
      c.bench.iters = s.value("iters", d.bench.iters);
      if (s.contains("configs")) c.bench.configs = parse_config_list(s.at("configs"));
      c.bench.include_face_extraction = s.value("include_face_extraction", d.bench.include_face_extraction);
      c.bench.lock_file = s.value("lock_file", d.bench.lock_file.generic_string());
    });
  }
  if (j.contains("output_dir")) {
    c.output_dir = with_path("output_dir", [&] { return j.at("output_dir").get<std::string>(); });
  }
  if (j.contains("cache_dir")) {
    c.cache_dir = with_path("cache_dir", [&] { return j.at("cache_dir").get<std::string>(); });
  }
  if (j.contains("jobs")) c.jobs = with_path("jobs", [&] { return j.at("jobs").get<int>(); });
}

ExperimentConfig load_config(const fs::path& file, const Overrides& overrides) {
  json merged = ExperimentConfig{};
  if (!file.empty()) {
    json from_file;
    try {
      from_file = json::parse(read_text(file));
    } catch (const json::exception& e) {
      throw ConfigError(fmt::format("{}: not valid JSON: {}", file.string(), e.what()));
    }
    check_keys(from_file, merged, "");
    merge(merged, from_file);
  }
  for (const auto& [path, text] : overrides) {
    json* node = &merged;
    std::string walked;
    std::size_t start = 0;
    while (true) {
      const auto dot = path.find('.', start);
      const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
      walked += (walked.empty() ? "" : ".") + key;
      if (!node->is_object() || !node->contains(key)) throw ConfigError(fmt::format("{}: unknown key", walked));
      node = &(*node)[key];
      if (dot == std::string::npos) break;
      start = dot + 1;
    }
    json value = parse_value(text);
    // A string field keeps the literal text ("--output_dir 123").
    if (node->is_string() && !value.is_string()) value = text;
    *node = value;
  }
  auto cfg = merged.get<ExperimentConfig>();
  cfg.validate();
  return cfg;
}

std::string config_hash(const ExperimentConfig& c) { return sha256_hex(json(c).dump()); }

void write_provenance(const fs::path& dir, const std::string& command, const ExperimentConfig& c,
                      const json& extra) {
  fs::create_directories(dir);
  json p = {{"command", command},
            {"config", c},
            {"config_hash", config_hash(c)},
            {"run_config_hash", train::config_hash(c.run)},
            {"seeds", {{"run", c.run.seed}, {"splits", c.split_seed}}},
            {"code_version", std::string(code_version())},
            {"extra", extra}};
  nn::atomic_write(dir / "provenance.json", p.dump(2) + "\n");
}

void to_json(json& j, const PrepareSummary& s) {
  j = {{"frames", s.frames},     {"processed", s.processed}, {"cached", s.cached},
       {"no_face", s.no_face},   {"warnings", s.warnings},   {"messages", s.messages}};
}

namespace {

[[noreturn]] void rethrow_with_context(std::exception_ptr ptr, const std::string& context) {
  try {
    std::rethrow_exception(ptr);
  } catch (const ConfigError& e) {
    throw ConfigError(context + e.what());
  } catch (const MissingResource& e) {
    throw MissingResource(context + e.what());
  } catch (const ShapeError& e) {
    throw ShapeError(context + e.what());
  } catch (const UpstreamTooSmall& e) {
    throw UpstreamTooSmall(context + e.what());
  } catch (const NumericError& e) {
    throw NumericError(context + e.what());
  } catch (const std::exception& e) {
    throw Error(context + e.what());
  }
}

}  // namespace

PrepareSummary cmd_prepare(const ExperimentConfig& c) {
  c.validate();
  if (c.dataset.root.empty()) throw ConfigError("dataset.root: required");
  if (!fs::is_directory(c.dataset.root)) {
    throw MissingResource(fmt::format("dataset.root '{}' does not exist", c.dataset.root.string()));
  }
  const DatasetLayout layout =
      c.dataset.layout_file.empty() ? DatasetLayout::faceforensics() : DatasetLayout::load(c.dataset.layout_file);
  auto loaded = load_manifest(c.dataset.root, layout);
  const auto records = assign_splits(std::move(loaded.records), c.splits, c.split_seed);
  const fs::path cache_root = c.resolved_cache_dir();
  fs::create_directories(cache_root);
  write_manifest(c.manifest_path(), records);
  const preprocess::PatchCache cache(cache_root);
  const preprocess::PrepareOptions options{c.run.crop_size, c.prepare.allow_upscale};

  PrepareSummary summary;
  summary.frames = records.size();
  summary.warnings = loaded.warnings;
  summary.messages = loaded.messages;
  std::mutex mu;
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::string failure_context;
  std::vector<std::string> frame_messages(records.size());
  std::vector<int> outcome(records.size(), 0);  // 1 processed, 2 cached, 3 no face

  auto worker = [&] {
    std::unique_ptr<preprocess::FaceDetector> detector;
    std::unique_ptr<depth::DepthEstimator> estimator;
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= records.size()) return;
      {
        std::lock_guard lock(mu);
        if (failure) return;
      }
      const auto& r = records[i];
      const preprocess::Provenance prov{r.video_id, r.frame_index};
      try {
        if (std::ranges::all_of(c.prepare.configs, [&](auto cfg) { return cache.contains(cfg, prov); })) {
          outcome[i] = 2;
          continue;
        }
        if (!detector) {
          detector = preprocess::make_detector(c.detector);
          estimator = depth::make_estimator(c.depth, c.detector);
        }
        const cv::Mat rgb = preprocess::read_rgb(r.image_path);
        if (!cache.has_depth(prov)) {
          // The cache stores whole millimeters; every stack is built from the
          // stored map so results do not depend on cache state.
          depth::DepthMap fresh;
          (void)preprocess::extract_patches(rgb, *detector, *estimator, options, nullptr, &fresh);
          cache.store_depth(prov, fresh);
        }
        const depth::DepthMap stored = cache.load_depth(prov);
        const auto patches = preprocess::extract_patches(rgb, *detector, *estimator, options, &stored);
        for (auto cfg : c.prepare.configs) {
          cache.store(preprocess::stack_channels(patches.rgb, has_depth(cfg) ? cv::Mat(patches.depth) : cv::Mat(),
                                                 cfg, prov));
        }
        outcome[i] = 1;
        if (patches.upscale > 1.0) {
          frame_messages[i] = fmt::format("{}#{}: frame upscaled by {:.4f}", r.video_id, r.frame_index, patches.upscale);
        }
      } catch (const NoFace&) {
        outcome[i] = 3;
        frame_messages[i] = fmt::format("{}#{}: no face detected, skipped", r.video_id, r.frame_index);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) {
          failure = std::current_exception();
          failure_context = fmt::format("frame {}#{} ('{}'): ", r.video_id, r.frame_index, r.image_path.string());
        }
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  for (int t = 1; t < c.jobs; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (failure) rethrow_with_context(failure, failure_context);

  for (std::size_t i = 0; i < records.size(); ++i) {
    if (outcome[i] == 1) ++summary.processed;
    if (outcome[i] == 2) ++summary.cached;
    if (outcome[i] == 3) ++summary.no_face;
    if (!frame_messages[i].empty()) summary.messages.push_back(frame_messages[i]);
  }
  write_provenance(cache_root, "prepare", c, {{"summary", summary}});
  nn::atomic_write(cache_root / "prepare_summary.json", json(summary).dump(2) + "\n");
  return summary;
}

std::vector<std::string> training_scopes(const ExperimentConfig& c, const std::vector<FrameRecord>& records) {
  if (c.scope == "full") return {eval::kFull};
  if (c.scope != "per_class") return {std::string(to_string(parse_manipulation(c.scope)))};
  std::set<ManipulationClass> fakes;
  for (const auto& r : records) {
    if (r.label == Label::Fake) fakes.insert(r.manipulation);
  }
  std::vector<std::string> out;
  for (auto f : fakes) out.emplace_back(to_string(f));
  if (fakes.size() != 1) out.emplace_back(eval::kFull);
  return out;
}

std::vector<FrameRecord> scope_records(const std::vector<FrameRecord>& records, const std::string& scope) {
  if (scope == eval::kFull) return records;
  const auto cls = parse_manipulation(scope);
  std::vector<FrameRecord> out;
  for (const auto& r : records) {
    if (r.label == Label::Real || r.manipulation == cls) out.push_back(r);
  }
  return out;
}

namespace {

std::vector<FrameRecord> prepared_records(const ExperimentConfig& c) {
  const fs::path manifest = c.manifest_path();
  if (!fs::exists(manifest)) {
    throw MissingResource(fmt::format("manifest '{}' not found; run `depthfake prepare` first", manifest.string()));
  }
  return read_manifest(manifest);
}

train::CachedDataset split_dataset(const ExperimentConfig& c, const std::vector<FrameRecord>& records,
                                   Split split) {
  return train::CachedDataset(preprocess::PatchCache(c.resolved_cache_dir()), filter_split(records, split),
                              c.run.channel_config, c.run.crop_size);
}

}  // namespace

std::vector<TrainOutcome> cmd_train(const ExperimentConfig& c, bool resume) {
  c.validate();
  const auto records = prepared_records(c);
  std::vector<TrainOutcome> out;
  for (const auto& scope : training_scopes(c, records)) {
    const auto recs = scope_records(records, scope);
    const auto train_set = split_dataset(c, recs, Split::Train);
    const auto val_set = split_dataset(c, recs, Split::Val);
    auto model = adapt::build_classifier(c.run);
    const fs::path dir = c.model_dir(scope);
    const json extra = {{"scope", scope},
                        {"train_frames", train_set.size()},
                        {"val_frames", val_set.size()},
                        {"dropped_frames", train_set.dropped() + val_set.dropped()}};
    write_provenance(dir, "train", c, extra);
    train::TrainOptions options;
    options.out_dir = dir;
    options.resume = resume;
    options.provenance = {{"experiment_config_hash", config_hash(c)}, {"scope", scope}};
    out.push_back({scope, train::train(model, train_set, val_set, c.run, options)});
  }
  return out;
}

eval::EvalReport cmd_eval(const ExperimentConfig& c) {
  c.validate();
  const auto records = prepared_records(c);
  const auto scopes = training_scopes(c, records);
  const bool has_full_model = std::ranges::find(scopes, eval::kFull) != scopes.end();
  const std::string run_hash = train::config_hash(c.run);

  eval::EvalReport report;
  report.backbone = c.run.backbone;
  report.config = c.run.channel_config;
  report.threshold = c.eval.threshold;
  report.config_hash = run_hash;
  std::set<std::pair<std::string, std::int64_t>> frames;
  std::set<std::string> videos;
  json checkpoints = json::object();
  for (const auto& scope : scopes) {
    RunConfig shell = c.run;
    shell.pretrained = false;  // every weight comes from the checkpoint
    auto model = adapt::build_classifier(shell);
    const auto ckpt = train::load_checkpoint(model, c.model_dir(scope) / "checkpoints", c.eval.checkpoint);
    if (ckpt.meta.value("config_hash", std::string()) != run_hash) {
      throw ConfigError(fmt::format("run: checkpoint '{}' was trained with a different run config",
                                    ckpt.weights.string()));
    }
    checkpoints[scope] = ckpt.weights.generic_string();
    const auto test_set = split_dataset(c, scope_records(records, scope), Split::Test);
    if (test_set.size() == 0) throw ConfigError(fmt::format("TEST split of scope {} is empty", scope));
    const auto scores = train::predict(model.graph, test_set, c.run.batch_size);
    std::vector<eval::Prediction> preds;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      preds.push_back({test_set.records()[i], scores[i]});
      frames.emplace(test_set.records()[i].video_id, test_set.records()[i].frame_index);
      videos.insert(test_set.records()[i].video_id);
    }
    const auto fa = eval::frame_accuracy(preds, c.eval.threshold);
    const auto va = eval::video_accuracy(preds, c.eval.threshold);
    std::vector<std::string> take;
    if (scope == eval::kFull && scopes.size() == 1) {
      for (const auto& [k, v] : fa) take.push_back(k);
    } else {
      take.push_back(scope);
      if (!has_full_model) take.emplace_back(eval::kFull);
    }
    for (const auto& b : take) {
      if (fa.contains(b)) report.frame_accuracy[b] = fa.at(b);
      if (va.contains(b)) report.video_accuracy[b] = va.at(b);
    }
  }
  report.n_frames = static_cast<std::int64_t>(frames.size());
  report.n_videos = static_cast<std::int64_t>(videos.size());
  report.checkpoint = checkpoints.dump();

  const fs::path dir = c.output_dir / std::string(to_string(c.run.channel_config));
  eval::write_report(dir / "report.json", report);
  nn::atomic_write(dir / "report.md", eval::markdown_table({report}) + "\n" + eval::markdown_table({report}, true));
  write_provenance(dir, "eval", c, {{"checkpoints", checkpoints}});
  return report;
}

std::vector<bench::BenchResult> cmd_bench(const ExperimentConfig& c) {
  c.validate();
  bench::BenchLock lock(c.bench.lock_file);
  const fs::path dir = c.output_dir / "bench";
  std::unique_ptr<preprocess::FaceDetector> detector;
  if (c.bench.include_face_extraction) detector = preprocess::make_detector(c.detector);
  std::vector<bench::BenchResult> results;
  for (auto cfg : c.bench.configs) {
    RunConfig run = c.run;
    run.channel_config = cfg;
    run.pretrained = false;  // timing does not depend on weight values
    auto model = adapt::build_classifier(run);
    bench::FpsOptions o;
    o.warmup = c.bench.warmup;
    o.iters = c.bench.iters;
    o.size = c.run.crop_size;
    o.seed = c.run.seed;
    o.detector = detector.get();
    auto r = bench::measure_fps(model.graph, run.backbone, cfg, c.bench.platform, o);
    bench::append_ledger(dir / "ledger.csv", r, bench::utc_timestamp());
    results.push_back(r);
  }
  nn::atomic_write(dir / "report.md", bench::ledger_report(bench::read_ledger(dir / "ledger.csv")));
  write_provenance(dir, "bench", c);
  return results;
}

std::string cmd_bench_report(const ExperimentConfig& c) {
  const fs::path dir = c.output_dir / "bench";
  const std::string md = bench::ledger_report(bench::read_ledger(dir / "ledger.csv"));
  nn::atomic_write(dir / "report.md", md);
  return md;
}

std::vector<eval::PlotRow> cmd_plot(const std::vector<fs::path>& reports, const fs::path& out_dir) {
  std::vector<eval::EvalReport> loaded;
  json inputs = json::array();
  for (const auto& p : reports) {
    loaded.push_back(eval::read_report(p));
    inputs.push_back({{"path", p.generic_string()}, {"sha256", sha256_hex(read_text(p))}});
  }
  auto rows = eval::emit_plots(loaded, out_dir);
  const json prov = {{"command", "plot"}, {"inputs", inputs}, {"code_version", std::string(code_version())}};
  nn::atomic_write(out_dir / "provenance.json", prov.dump(2) + "\n");
  return rows;
}

void cmd_fixture(const FixtureOptions& options) {
  if (options.out.empty()) throw ConfigError("fixture: --out is required");
  if (options.videos_per_class < 1 || options.frames_per_video < 1) {
    throw ConfigError("fixture: videos and frames must be positive");
  }
  synth::FixtureSpec spec;
  spec.videos_per_class = options.videos_per_class;
  spec.frames_per_video = options.frames_per_video;
  spec.seed = options.seed;
  spec.fake_classes = {ManipulationClass::DF, ManipulationClass::F2F, ManipulationClass::FS, ManipulationClass::NT};
  synth::write_fixture_dataset(options.out, spec);
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return 1;
  if (dynamic_cast<const MissingResource*>(&e)) return 3;
  return 2;
}

int run(int argc, char** argv) {
  CLI::App app{"DepthFake experiment workbench"};
  app.set_version_flag("--version", std::string(code_version()));
  app.require_subcommand(1);
  app.allow_extras();

  std::string config_file;
  int jobs = 0;
  std::optional<std::uint64_t> seed;
  // Accepted before or after the subcommand.
  auto common_options = [&](CLI::App* a) {
    a->add_option("--config", config_file, "JSON experiment config");
    a->add_option("--jobs", jobs, "worker threads for prepare");
    a->add_option("--seed", seed, "run seed (overrides run.seed)");
  };
  common_options(&app);

  auto* prepare = app.add_subcommand("prepare", "detect, estimate depth, crop and cache input stacks");
  auto* train_cmd = app.add_subcommand("train", "train one model per scope");
  bool resume = false;
  train_cmd->add_flag("--resume", resume, "continue from the last checkpoint");
  auto* eval_cmd = app.add_subcommand("eval", "evaluate checkpoints on the TEST split");
  auto* bench_cmd = app.add_subcommand("bench", "count FLOPs and measure fps per channel config");
  auto* bench_report = bench_cmd->add_subcommand("report", "render the bench ledger as markdown");
  auto* plot = app.add_subcommand("plot", "grouped accuracy chart from eval reports");
  std::vector<std::string> plot_inputs;
  std::string plot_out = "plots";
  plot->add_option("reports", plot_inputs, "report.json files")->required();
  plot->add_option("--out", plot_out, "output directory");
  auto* fixture = app.add_subcommand("fixture", "write a small synthetic FaceForensics-style dataset");
  FixtureOptions fixture_options;
  std::string fixture_out;
  fixture->add_option("--out", fixture_out, "output directory")->required();
  fixture->add_option("--videos", fixture_options.videos_per_class, "videos per class");
  fixture->add_option("--frames", fixture_options.frames_per_video, "frames per video");
  fixture->add_option("--fixture-seed", fixture_options.seed, "generator seed");
  for (auto* sub : {prepare, train_cmd, eval_cmd, bench_cmd, bench_report, plot, fixture}) {
    sub->allow_extras();
    common_options(sub);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    Overrides overrides;
    std::vector<std::string> extras = app.remaining(true);
    for (std::size_t i = 0; i < extras.size(); ++i) {
      const std::string& tok = extras[i];
      if (!tok.starts_with("--")) throw ConfigError(fmt::format("unexpected argument '{}'", tok));
      const std::string body = tok.substr(2);
      const auto eq = body.find('=');
      if (eq != std::string::npos) {
        overrides.emplace_back(body.substr(0, eq), body.substr(eq + 1));
      } else {
        if (i + 1 >= extras.size()) throw ConfigError(fmt::format("{}: missing value", body));
        overrides.emplace_back(body, extras[++i]);
      }
    }
    if (jobs > 0) overrides.emplace_back("jobs", std::to_string(jobs));
    if (seed) overrides.emplace_back("run.seed", std::to_string(*seed));

    if (plot->parsed()) {
      std::vector<fs::path> inputs(plot_inputs.begin(), plot_inputs.end());
      const auto rows = cmd_plot(inputs, plot_out);
      std::cout << fmt::format("wrote {} bars to {}\n", rows.size(), plot_out);
      return 0;
    }
    if (fixture->parsed()) {
      fixture_options.out = fixture_out;
      cmd_fixture(fixture_options);
      std::cout << fmt::format("fixture written to {}\n", fixture_out);
      return 0;
    }

    const auto cfg = load_config(config_file, overrides);
    if (prepare->parsed()) {
      std::cout << json(cmd_prepare(cfg)).dump(2) << "\n";
    } else if (train_cmd->parsed()) {
      for (const auto& o : cmd_train(cfg, resume)) {
        const auto& last = o.state.history.back();
        std::cout << fmt::format("{}: {} epochs, val_acc {:.4f}, best {:.4f}\n", o.scope, o.state.epoch,
                                 last.val_accuracy, o.state.best_val_accuracy);
      }
    } else if (eval_cmd->parsed()) {
      std::cout << eval::markdown_table({cmd_eval(cfg)});
    } else if (bench_report->parsed()) {
      std::cout << cmd_bench_report(cfg);
    } else if (bench_cmd->parsed()) {
      for (const auto& r : cmd_bench(cfg)) {
        std::cout << fmt::format("{} {}: {:.4f} GFLOPS, {:.2f} ± {:.2f} fps\n", to_string(r.backbone),
                                 to_string(r.channel_config), r.gflops, r.fps_mean, r.fps_std);
      }
    }
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "depthfake: error: " << e.what() << "\n";
    return exit_code_for(e);
  }
}

}  // namespace depthfake::cli
