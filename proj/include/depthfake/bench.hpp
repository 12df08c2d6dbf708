#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "depthfake/face.hpp"
#include "depthfake/nn/graph.hpp"
#include "depthfake/types.hpp"

namespace depthfake::bench {

// FLOPs of one layer (multiply-add = 2):
//   conv       2 k^2 Cin Cout Ho Wo
//   depthwise  2 k^2 C Ho Wo
//   dense      2 nin nout
//   max pool, global average pool, activation, add: 1 per output element
//   batch norm (folded scale and shift): 2 per output element
//   input rescale: 0 (folds into the first convolution at deployment)
std::int64_t layer_flops(const nn::LayerDesc& layer);

struct FlopCount {
  std::int64_t total = 0;
  std::vector<std::pair<std::string, std::int64_t>> per_layer;
  double gflops() const { return static_cast<double>(total) * 1e-9; }
};

FlopCount count_flops(const std::vector<nn::LayerDesc>& layers);
// Throws ShapeError naming the first layer whose shape cannot be resolved.
template <typename T>
FlopCount count_flops(const nn::Graph<T>& graph, const nn::Shape& input);

// Extra FLOPs of one more input channel: 2 k^2 Cout Ho Wo of the first conv.
template <typename T>
std::int64_t first_layer_channel_flops(const nn::Graph<T>& graph, const nn::Shape& input);

struct BenchResult {
  Backbone backbone = Backbone::TinyConv;
  ChannelConfig channel_config = ChannelConfig::RGB;
  double gflops = 0.0;
  double fps_mean = 0.0;
  double fps_std = 0.0;
  std::string platform;
  int n_warmup = 0;
  int n_iters = 0;
  int batch_size = 1;
  bool includes_face_extraction = false;
};

struct FpsOptions {
  int warmup = 20;
  int iters = 100;
  int size = 224;
  std::uint64_t seed = 0;
  // When set, each timed iteration also runs this detector on a fixed frame.
  preprocess::FaceDetector* detector = nullptr;
  int frame_height = 480;
  int frame_width = 640;
};

// Smallest observable step of the steady clock, in seconds.
double timer_tick();

// Single-stream, batch-1 forward passes on a fixed-seed random input.
// Throws ConfigError when iters < 30 and BenchError when an iteration is
// shorter than 10 timer ticks.
BenchResult measure_fps(nn::Graph<float>& graph, Backbone backbone, ChannelConfig config,
                        const std::string& platform, const FpsOptions& options = {});

// Exclusive advisory lock (flock) on a file; throws BenchError when another
// process holds it.
class BenchLock {
 public:
  explicit BenchLock(const std::filesystem::path& file);
  ~BenchLock();
  BenchLock(const BenchLock&) = delete;
  BenchLock& operator=(const BenchLock&) = delete;

 private:
  int fd_ = -1;
};

struct LedgerRow {
  std::string timestamp;
  std::string platform;
  std::string backbone;
  std::string config;
  double gflops = 0.0;
  double fps_mean = 0.0;
  double fps_std = 0.0;
  int n_iters = 0;
};

// Append-only CSV: timestamp,platform,backbone,config,gflops,fps_mean,fps_std,n_iters
void append_ledger(const std::filesystem::path& file, const BenchResult& result,
                   const std::string& timestamp);
std::vector<LedgerRow> read_ledger(const std::filesystem::path& file);

// Markdown table with the latest row per (platform, backbone, config); fps and
// GFLOPS deltas against the RGB row of the same platform and backbone in
// brackets.
std::string ledger_report(const std::vector<LedgerRow>& rows);

// ISO-8601 UTC timestamp.
std::string utc_timestamp();

}  // namespace depthfake::bench
