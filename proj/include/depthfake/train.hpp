#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "depthfake/adapt.hpp"
#include "depthfake/nn/graph.hpp"
#include "depthfake/nn/weights.hpp"
#include "depthfake/preprocess.hpp"
#include "depthfake/types.hpp"

namespace depthfake::train {

struct OptimizerSpec {
  double lr0 = 0.01;
  double decay = 0.1;
  LrSchedule schedule = LrSchedule::InverseTime;
  int step_epochs = 10;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-7;

  static OptimizerSpec from(const RunConfig& cfg);
  void validate() const;
};

// InverseTime: lr0 / (1 + decay * epoch). Step: lr0 * decay^(epoch / step_epochs).
double lr_schedule(int epoch, const OptimizerSpec& spec);

inline constexpr double kProbabilityClamp = 1e-7;

// -[y log p + (1 - y) log(1 - p)] with p clamped to [1e-7, 1 - 1e-7].
double binary_cross_entropy(double y, double y_hat);
inline double binary_cross_entropy(Label y, double y_hat) {
  return binary_cross_entropy(y == Label::Fake ? 1.0 : 0.0, y_hat);
}

double sigmoid(double logit);

// Mean BCE of sigmoid(logits) against `targets` (0 = REAL, 1 = FAKE). When
// `grad_logits` is given it receives d(mean loss)/d(logit) = (p - y) / N.
template <typename T>
double bce_with_logits(const nn::Tensor<T>& logits, std::span<const float> targets,
                       nn::Tensor<T>* grad_logits);

// Adamax (infinity-norm Adam) with bias-corrected learning rate:
//   m <- b1 m + (1 - b1) g;  u <- max(b2 u, |g|);  w <- w - lr / (1 - b1^t) * m / (u + eps)
// Only trainable parameters are updated.
template <typename T>
class Adamax {
 public:
  explicit Adamax(OptimizerSpec spec) : spec_(spec) {}

  void step(nn::Graph<T>& graph, double lr);
  std::int64_t iterations() const { return t_; }

  // Moments as "m/<param>" and "u/<param>" tensors; the iteration count is
  // kept by the caller.
  std::vector<nn::NamedTensor> export_state() const;
  void import_state(const std::vector<nn::NamedTensor>& state, std::int64_t iterations);

 private:
  struct Slot {
    std::vector<T> m;
    std::vector<T> u;
  };
  OptimizerSpec spec_;
  std::int64_t t_ = 0;
  std::map<std::string, Slot> slots_;
};

// Random-access source of input stacks with labels.
class Dataset {
 public:
  virtual ~Dataset() = default;
  virtual std::size_t size() const = 0;
  virtual Label label(std::size_t i) const = 0;
  virtual preprocess::Provenance provenance(std::size_t i) const = 0;
  virtual preprocess::InputStack get(std::size_t i) const = 0;
  virtual ChannelConfig config() const = 0;
  virtual int stack_size() const = 0;
};

// Stacks held in memory.
class StackDataset final : public Dataset {
 public:
  StackDataset(std::vector<preprocess::InputStack> stacks, std::vector<Label> labels);
  std::size_t size() const override { return stacks_.size(); }
  Label label(std::size_t i) const override { return labels_[i]; }
  preprocess::Provenance provenance(std::size_t i) const override { return stacks_[i].provenance; }
  preprocess::InputStack get(std::size_t i) const override { return stacks_[i]; }
  ChannelConfig config() const override;
  int stack_size() const override;

 private:
  std::vector<preprocess::InputStack> stacks_;
  std::vector<Label> labels_;
};

// Records whose stacks live in a PatchCache; loaded on access.
class CachedDataset final : public Dataset {
 public:
  // Records without a cached stack (e.g. NoFace skips) are dropped.
  CachedDataset(preprocess::PatchCache cache, const std::vector<FrameRecord>& records,
                ChannelConfig config, int crop_size);
  std::size_t size() const override { return records_.size(); }
  Label label(std::size_t i) const override { return records_[i].label; }
  preprocess::Provenance provenance(std::size_t i) const override;
  preprocess::InputStack get(std::size_t i) const override;
  ChannelConfig config() const override { return config_; }
  int stack_size() const override { return crop_size_; }
  const std::vector<FrameRecord>& records() const { return records_; }
  std::size_t dropped() const { return dropped_; }

 private:
  preprocess::PatchCache cache_;
  std::vector<FrameRecord> records_;
  ChannelConfig config_;
  int crop_size_;
  std::size_t dropped_ = 0;
};

// NHWC batch from stacks.
nn::Tensor<float> make_batch(const std::vector<preprocess::InputStack>& stacks);

// Sigmoid scores in dataset order, inference mode.
std::vector<double> predict(nn::Graph<float>& graph, const Dataset& data, int batch_size = 32);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;  // fraction in [0, 1]
  double lr = 0.0;
  bool operator==(const EpochRecord&) const = default;
};

struct TrainState {
  int epoch = 0;  // completed epochs
  std::int64_t step = 0;
  double best_val_accuracy = -1.0;
  std::uint64_t rng_seed = 0;
  std::vector<EpochRecord> history;
};

void to_json(nlohmann::json& j, const EpochRecord& r);
void from_json(const nlohmann::json& j, EpochRecord& r);
void to_json(nlohmann::json& j, const TrainState& s);
void from_json(const nlohmann::json& j, TrainState& s);

struct StepInfo {
  int epoch = 0;
  std::int64_t step = 0;  // 0-based index of the step just taken
  double loss = 0.0;      // batch loss before the update
  double lr = 0.0;
};

struct TrainOptions {
  // Checkpoints and history.csv go here; empty disables all file output.
  std::filesystem::path out_dir;
  bool resume = false;
  // Stops after this many optimizer steps in total (<= 0: no limit). An
  // epoch cut short this way is not recorded.
  std::int64_t max_steps = 0;
  std::function<void(const StepInfo&)> on_step;
  // Copied into every checkpoint sidecar.
  nlohmann::json provenance = nlohmann::json::object();
};

// Stable hash of a RunConfig (SHA-256 of its canonical JSON).
std::string config_hash(const RunConfig& cfg);

// Per-epoch TRAIN order: class-balanced undersampling (when enabled), then a
// seeded shuffle. Pure function of (labels, cfg.seed, epoch).
std::vector<std::size_t> epoch_order(const Dataset& data, const RunConfig& cfg, int epoch);

// Runs epochs [state.epoch, cfg.epochs). Throws NumericError naming the batch
// provenance on a non-finite loss and ConfigError on an empty split.
TrainState train(adapt::AdaptedBackbone<float>& model, const Dataset& train_set,
                 const Dataset& val_set, const RunConfig& cfg, const TrainOptions& options = {});

// history.csv: epoch,train_loss,val_loss,val_acc,lr with 17 significant digits.
void write_history_csv(const std::filesystem::path& file, const std::vector<EpochRecord>& history);
std::vector<EpochRecord> read_history_csv(const std::filesystem::path& file);

struct Checkpoint {
  std::filesystem::path weights;  // .dfw
  std::filesystem::path sidecar;  // .json
  nlohmann::json meta;
};

// Loads <dir>/<name>.dfw into the model's graph and returns the sidecar.
Checkpoint load_checkpoint(adapt::AdaptedBackbone<float>& model, const std::filesystem::path& dir,
                           const std::string& name = "best");

}  // namespace depthfake::train
