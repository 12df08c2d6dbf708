#include "depthfake/bench.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include <fmt/format.h>

#include "depthfake/errors.hpp"
#include "depthfake/random.hpp"

namespace fs = std::filesystem;

namespace depthfake::bench {

std::int64_t layer_flops(const nn::LayerDesc& layer) {
  const auto& out = layer.output;
  const std::int64_t out_elems = static_cast<std::int64_t>(out.h) * out.w * out.c;
  const std::int64_t k2 = static_cast<std::int64_t>(layer.kernel) * layer.kernel;
  switch (layer.kind) {
    case nn::LayerKind::Conv2D:
      return 2 * k2 * layer.inputs.at(0).c * out_elems;
    case nn::LayerKind::DepthwiseConv2D:
      return 2 * k2 * out_elems;
    case nn::LayerKind::Dense:
      return 2LL * layer.inputs.at(0).c * out.c;
    case nn::LayerKind::BatchNorm:
      return 2 * out_elems;
    case nn::LayerKind::Activation:
    case nn::LayerKind::MaxPool:
    case nn::LayerKind::Add:
    case nn::LayerKind::GlobalAvgPool:
      return out_elems;
    case nn::LayerKind::Rescale:
      return 0;
  }
  return 0;
}

FlopCount count_flops(const std::vector<nn::LayerDesc>& layers) {
  FlopCount c;
  for (const auto& l : layers) {
    if (!l.output.resolved()) throw ShapeError(fmt::format("layer '{}': unresolved output shape", l.name));
    const auto f = layer_flops(l);
    c.per_layer.emplace_back(l.name, f);
    c.total += f;
  }
  return c;
}

template <typename T>
FlopCount count_flops(const nn::Graph<T>& graph, const nn::Shape& input) {
  return count_flops(graph.describe(input));
}

template <typename T>
std::int64_t first_layer_channel_flops(const nn::Graph<T>& graph, const nn::Shape& input) {
  for (const auto& l : graph.describe(input)) {
    if (l.name == graph.first_conv()) {
      return 2LL * l.kernel * l.kernel * l.output.h * l.output.w * l.output.c;
    }
  }
  throw ShapeError("graph has no first convolution");
}

template FlopCount count_flops(const nn::Graph<float>&, const nn::Shape&);
template FlopCount count_flops(const nn::Graph<double>&, const nn::Shape&);
template std::int64_t first_layer_channel_flops(const nn::Graph<float>&, const nn::Shape&);
template std::int64_t first_layer_channel_flops(const nn::Graph<double>&, const nn::Shape&);

double timer_tick() {
  using clock = std::chrono::steady_clock;
  auto best = clock::duration::max();
  for (int i = 0; i < 20; ++i) {
    const auto t0 = clock::now();
    auto t1 = clock::now();
    while (t1 == t0) t1 = clock::now();
    best = std::min(best, t1 - t0);
  }
  return std::chrono::duration<double>(best).count();
}

BenchResult measure_fps(nn::Graph<float>& graph, Backbone backbone, ChannelConfig config,
                        const std::string& platform, const FpsOptions& options) {
  if (options.iters < 30) {
    throw ConfigError(fmt::format("bench needs at least 30 timed iterations, got {}", options.iters));
  }
  if (options.warmup < 0) throw ConfigError("bench warmup must be non-negative");
  const int c = channel_count(config);
  if (graph.input_channels() != c) throw ShapeError("model input channels differ from the bench config");

  std::mt19937_64 rng(derive_seed(options.seed, 0xbe7c));
  nn::Tensor<float> input(nn::Shape{1, options.size, options.size, c});
  for (auto& v : input.data) v = static_cast<float>(255.0 * uniform_unit(rng));
  cv::Mat frame;
  if (options.detector) {
    frame.create(options.frame_height, options.frame_width, CV_8UC3);
    for (int r = 0; r < frame.rows; ++r) {
      auto* p = frame.ptr<std::uint8_t>(r);
      for (int i = 0; i < frame.cols * 3; ++i) p[i] = static_cast<std::uint8_t>(uniform_below(rng, 256));
    }
  }
  auto run_once = [&] {
    if (options.detector) (void)options.detector->detect(frame);
    (void)graph.forward(input, nn::Mode::Infer);
  };

  for (int i = 0; i < options.warmup; ++i) run_once();
  using clock = std::chrono::steady_clock;
  std::vector<double> seconds;
  seconds.reserve(options.iters);
  for (int i = 0; i < options.iters; ++i) {
    const auto t0 = clock::now();
    run_once();
    seconds.push_back(std::chrono::duration<double>(clock::now() - t0).count());
  }
  graph.release();

  const double tick = timer_tick();
  const double shortest = *std::ranges::min_element(seconds);
  if (shortest < 10.0 * tick) {
    throw BenchError(fmt::format(
        "iteration took {:.3g}s, under 10 timer ticks ({:.3g}s); time batches of iterations instead",
        shortest, tick));
  }

  BenchResult r;
  r.backbone = backbone;
  r.channel_config = config;
  r.gflops = count_flops(graph, input.shape).gflops();
  r.platform = platform;
  r.n_warmup = options.warmup;
  r.n_iters = options.iters;
  r.includes_face_extraction = options.detector != nullptr;
  double sum = 0.0;
  for (double s : seconds) sum += 1.0 / s;
  r.fps_mean = sum / static_cast<double>(seconds.size());
  double var = 0.0;
  for (double s : seconds) var += (1.0 / s - r.fps_mean) * (1.0 / s - r.fps_mean);
  r.fps_std = std::sqrt(var / static_cast<double>(seconds.size() - 1));
  return r;
}

BenchLock::BenchLock(const fs::path& file) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  fd_ = ::open(file.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
  if (fd_ < 0) throw BenchError(fmt::format("cannot open bench lock '{}'", file.string()));
  if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
    ::close(fd_);
    fd_ = -1;
    throw BenchError(fmt::format("another bench process holds '{}'", file.string()));
  }
}

BenchLock::~BenchLock() {
  if (fd_ >= 0) {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
}

namespace {
constexpr const char* kLedgerHeader = "timestamp,platform,backbone,config,gflops,fps_mean,fps_std,n_iters";

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        out.back() += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        out.back() += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      out.emplace_back();
    } else {
      out.back() += ch;
    }
  }
  return out;
}
}  // namespace

void append_ledger(const fs::path& file, const BenchResult& r, const std::string& timestamp) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  const bool fresh = !fs::exists(file) || fs::file_size(file) == 0;
  std::ofstream out(file, std::ios::app);
  if (!out) throw Error(fmt::format("cannot append to bench ledger '{}'", file.string()));
  if (fresh) out << kLedgerHeader << "\n";
  out << fmt::format("{},{},{},{},{:.17g},{:.17g},{:.17g},{}\n", timestamp, csv_field(r.platform),
                     to_string(r.backbone), to_string(r.channel_config), r.gflops, r.fps_mean,
                     r.fps_std, r.n_iters);
}

std::vector<LedgerRow> read_ledger(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw MissingResource(fmt::format("cannot open bench ledger '{}'", file.string()));
  std::string line;
  std::getline(in, line);
  if (line != kLedgerHeader) throw Error(fmt::format("'{}' is not a bench ledger", file.string()));
  std::vector<LedgerRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 8) throw Error(fmt::format("malformed ledger row '{}'", line));
    rows.push_back({f[0], f[1], f[2], f[3], std::stod(f[4]), std::stod(f[5]), std::stod(f[6]),
                    std::stoi(f[7])});
  }
  return rows;
}

std::string ledger_report(const std::vector<LedgerRow>& rows) {
  // Latest row per key; the ledger is append-only so later rows win.
  std::map<std::tuple<std::string, std::string, int>, LedgerRow> latest;
  const auto order = [](const std::string& cfg) {
    const auto& all = kAllChannelConfigs;
    for (std::size_t i = 0; i < std::size(all); ++i) {
      if (to_string(all[i]) == cfg) return static_cast<int>(i);
    }
    return static_cast<int>(std::size(all));
  };
  for (const auto& r : rows) latest[{r.platform, r.backbone, order(r.config)}] = r;

  std::string out = "| Platform | Backbone | Config | GFLOPS | fps |\n|---|---|---|---|---|\n";
  for (const auto& [key, r] : latest) {
    const auto base = latest.find({r.platform, r.backbone, order("RGB")});
    std::string gflops = fmt::format("{:.3f}", r.gflops);
    std::string fps = fmt::format("{:.2f} ± {:.2f}", r.fps_mean, r.fps_std);
    if (base != latest.end() && base->second.config != r.config) {
      gflops += fmt::format(" ({:+.3f})", r.gflops - base->second.gflops);
      fps += fmt::format(" ({:+.2f})", r.fps_mean - base->second.fps_mean);
    }
    out += fmt::format("| {} | {} | {} | {} | {} |\n", r.platform, r.backbone, r.config, gflops, fps);
  }
  return out;
}

std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace depthfake::bench
