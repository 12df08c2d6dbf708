#include "depthfake/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <fmt/format.h>

#include "depthfake/errors.hpp"
#include "depthfake/random.hpp"
#include "depthfake/version.hpp"

namespace fs = std::filesystem;

namespace depthfake::train {

OptimizerSpec OptimizerSpec::from(const RunConfig& cfg) {
  OptimizerSpec s;
  s.lr0 = cfg.lr0;
  s.decay = cfg.lr_decay;
  s.schedule = cfg.lr_schedule;
  s.step_epochs = cfg.lr_step_epochs;
  s.beta1 = cfg.beta1;
  s.beta2 = cfg.beta2;
  s.epsilon = cfg.epsilon;
  return s;
}

void OptimizerSpec::validate() const {
  if (!(lr0 >= 0.0)) throw ConfigError("optimizer lr0 must be non-negative");
  if (!(decay >= 0.0)) throw ConfigError("optimizer decay must be non-negative");
  if (!(beta1 > 0.0 && beta1 < 1.0)) throw ConfigError("optimizer beta1 must lie in (0, 1)");
  if (!(beta2 > 0.0 && beta2 < 1.0)) throw ConfigError("optimizer beta2 must lie in (0, 1)");
  if (!(epsilon > 0.0)) throw ConfigError("optimizer epsilon must be positive");
  if (step_epochs <= 0) throw ConfigError("optimizer step_epochs must be positive");
}

double lr_schedule(int epoch, const OptimizerSpec& spec) {
  if (epoch < 0) throw ConfigError("epoch must be non-negative");
  if (spec.schedule == LrSchedule::Step) {
    return spec.lr0 * std::pow(spec.decay, epoch / spec.step_epochs);
  }
  return spec.lr0 / (1.0 + spec.decay * epoch);
}

double binary_cross_entropy(double y, double y_hat) {
  const double p = std::clamp(y_hat, kProbabilityClamp, 1.0 - kProbabilityClamp);
  return -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
}

double sigmoid(double logit) {
  if (logit >= 0.0) return 1.0 / (1.0 + std::exp(-logit));
  const double e = std::exp(logit);
  return e / (1.0 + e);
}

template <typename T>
double bce_with_logits(const nn::Tensor<T>& logits, std::span<const float> targets,
                       nn::Tensor<T>* grad_logits) {
  const std::size_t n = logits.data.size();
  if (n == 0 || n != targets.size() || logits.shape.sample_size() != 1) {
    throw ShapeError("loss needs one logit per target");
  }
  if (grad_logits) grad_logits->reset(logits.shape);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double p = sigmoid(static_cast<double>(logits.data[i]));
    total += binary_cross_entropy(static_cast<double>(targets[i]), p);
    if (grad_logits) grad_logits->data[i] = static_cast<T>((p - targets[i]) / static_cast<double>(n));
  }
  return total / static_cast<double>(n);
}

template <typename T>
void Adamax<T>::step(nn::Graph<T>& graph, double lr) {
  ++t_;
  const double lr_t = lr / (1.0 - std::pow(spec_.beta1, static_cast<double>(t_)));
  const double b1 = spec_.beta1;
  const double b2 = spec_.beta2;
  for (auto* p : graph.params()) {
    if (!p->trainable) continue;
    auto& slot = slots_[p->name];
    if (slot.m.empty()) {
      slot.m.assign(p->size(), T(0));
      slot.u.assign(p->size(), T(0));
    }
    for (std::size_t i = 0; i < p->size(); ++i) {
      const double g = p->grad[i];
      const double m = b1 * slot.m[i] + (1.0 - b1) * g;
      const double u = std::max(b2 * slot.u[i], std::abs(g));
      slot.m[i] = static_cast<T>(m);
      slot.u[i] = static_cast<T>(u);
      p->value[i] = static_cast<T>(p->value[i] - lr_t * m / (u + spec_.epsilon));
    }
  }
}

template <typename T>
std::vector<nn::NamedTensor> Adamax<T>::export_state() const {
  std::vector<nn::NamedTensor> out;
  for (const auto& [name, slot] : slots_) {
    const std::vector<std::int64_t> dims{static_cast<std::int64_t>(slot.m.size())};
    out.push_back({"m/" + name, dims, {slot.m.begin(), slot.m.end()}});
    out.push_back({"u/" + name, dims, {slot.u.begin(), slot.u.end()}});
  }
  return out;
}

template <typename T>
void Adamax<T>::import_state(const std::vector<nn::NamedTensor>& state, std::int64_t iterations) {
  slots_.clear();
  for (const auto& t : state) {
    auto& slot = slots_[t.name.substr(2)];
    if (t.name.starts_with("m/")) {
      slot.m.assign(t.values.begin(), t.values.end());
    } else if (t.name.starts_with("u/")) {
      slot.u.assign(t.values.begin(), t.values.end());
    } else {
      throw ShapeError(fmt::format("unexpected optimizer tensor '{}'", t.name));
    }
  }
  for (const auto& [name, slot] : slots_) {
    if (slot.m.size() != slot.u.size()) {
      throw ShapeError(fmt::format("optimizer moments for '{}' disagree in size", name));
    }
  }
  t_ = iterations;
}

template class Adamax<float>;
template class Adamax<double>;
template double bce_with_logits(const nn::Tensor<float>&, std::span<const float>, nn::Tensor<float>*);
template double bce_with_logits(const nn::Tensor<double>&, std::span<const float>, nn::Tensor<double>*);

StackDataset::StackDataset(std::vector<preprocess::InputStack> stacks, std::vector<Label> labels)
    : stacks_(std::move(stacks)), labels_(std::move(labels)) {
  if (stacks_.size() != labels_.size()) throw ShapeError("one label per stack required");
  for (const auto& s : stacks_) {
    if (s.config != stacks_.front().config || s.size != stacks_.front().size) {
      throw ShapeError("stacks in a dataset must share config and size");
    }
  }
}

ChannelConfig StackDataset::config() const {
  return stacks_.empty() ? ChannelConfig::RGB : stacks_.front().config;
}

int StackDataset::stack_size() const { return stacks_.empty() ? 0 : stacks_.front().size; }

CachedDataset::CachedDataset(preprocess::PatchCache cache, const std::vector<FrameRecord>& records,
                             ChannelConfig config, int crop_size)
    : cache_(std::move(cache)), config_(config), crop_size_(crop_size) {
  for (const auto& r : records) {
    if (cache_.contains(config_, {r.video_id, r.frame_index})) {
      records_.push_back(r);
    } else {
      ++dropped_;
    }
  }
}

preprocess::Provenance CachedDataset::provenance(std::size_t i) const {
  return {records_[i].video_id, records_[i].frame_index};
}

preprocess::InputStack CachedDataset::get(std::size_t i) const {
  auto s = cache_.load(config_, provenance(i));
  if (s.size != crop_size_) {
    throw ShapeError(fmt::format("cached stack is {}px, run expects {}px", s.size, crop_size_));
  }
  return s;
}

nn::Tensor<float> make_batch(const std::vector<preprocess::InputStack>& stacks) {
  if (stacks.empty()) throw ShapeError("empty batch");
  const auto& first = stacks.front();
  nn::Tensor<float> batch(nn::Shape{static_cast<int>(stacks.size()), first.size, first.size,
                                    first.channels()});
  for (std::size_t i = 0; i < stacks.size(); ++i) {
    if (stacks[i].size != first.size || stacks[i].config != first.config) {
      throw ShapeError("stacks in a batch must share size and config");
    }
    std::copy(stacks[i].data.begin(), stacks[i].data.end(), batch.sample(static_cast<int>(i)));
  }
  return batch;
}

std::vector<double> predict(nn::Graph<float>& graph, const Dataset& data, int batch_size) {
  std::vector<double> scores;
  scores.reserve(data.size());
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t end = std::min(data.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<preprocess::InputStack> stacks;
    for (std::size_t i = start; i < end; ++i) stacks.push_back(data.get(i));
    const auto& logits = graph.forward(make_batch(stacks), nn::Mode::Infer);
    for (float z : logits.data) scores.push_back(sigmoid(z));
  }
  graph.release();
  return scores;
}

void to_json(nlohmann::json& j, const EpochRecord& r) {
  j = {{"epoch", r.epoch},
       {"train_loss", r.train_loss},
       {"val_loss", r.val_loss},
       {"val_acc", r.val_accuracy},
       {"lr", r.lr}};
}

void from_json(const nlohmann::json& j, EpochRecord& r) {
  r.epoch = j.at("epoch").get<int>();
  r.train_loss = j.at("train_loss").get<double>();
  r.val_loss = j.at("val_loss").get<double>();
  r.val_accuracy = j.at("val_acc").get<double>();
  r.lr = j.at("lr").get<double>();
}

void to_json(nlohmann::json& j, const TrainState& s) {
  j = {{"epoch", s.epoch},
       {"step", s.step},
       {"best_val_accuracy", s.best_val_accuracy},
       {"rng_seed", s.rng_seed},
       {"history", s.history}};
}

void from_json(const nlohmann::json& j, TrainState& s) {
  s.epoch = j.at("epoch").get<int>();
  s.step = j.at("step").get<std::int64_t>();
  s.best_val_accuracy = j.at("best_val_accuracy").get<double>();
  s.rng_seed = j.at("rng_seed").get<std::uint64_t>();
  s.history = j.at("history").get<std::vector<EpochRecord>>();
}

std::string config_hash(const RunConfig& cfg) {
  return sha256_hex(nlohmann::json(cfg).dump());
}

std::vector<std::size_t> epoch_order(const Dataset& data, const RunConfig& cfg, int epoch) {
  std::vector<std::size_t> reals;
  std::vector<std::size_t> fakes;
  for (std::size_t i = 0; i < data.size(); ++i) {
    (data.label(i) == Label::Fake ? fakes : reals).push_back(i);
  }
  std::vector<std::size_t> order;
  if (cfg.balance_classes && !reals.empty() && !fakes.empty() && reals.size() != fakes.size()) {
    auto& major = reals.size() > fakes.size() ? reals : fakes;
    auto& minor = reals.size() > fakes.size() ? fakes : reals;
    std::mt19937_64 rng(derive_seed(cfg.seed, 0xba1a, static_cast<std::uint64_t>(epoch)));
    portable_shuffle(std::span<std::size_t>(major), rng);
    major.resize(minor.size());
    std::ranges::sort(major);
    std::ranges::merge(reals, fakes, std::back_inserter(order));
  } else {
    order.resize(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  }
  std::mt19937_64 rng(derive_seed(cfg.seed, 0x5f1e, static_cast<std::uint64_t>(epoch)));
  portable_shuffle(std::span<std::size_t>(order), rng);
  return order;
}

void write_history_csv(const fs::path& file, const std::vector<EpochRecord>& history) {
  std::string out = "epoch,train_loss,val_loss,val_acc,lr\n";
  for (const auto& r : history) {
    out += fmt::format("{},{:.17g},{:.17g},{:.17g},{:.17g}\n", r.epoch, r.train_loss, r.val_loss,
                       r.val_accuracy, r.lr);
  }
  nn::atomic_write(file, out);
}

std::vector<EpochRecord> read_history_csv(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw MissingResource(fmt::format("cannot open history '{}'", file.string()));
  std::string line;
  std::getline(in, line);
  if (line != "epoch,train_loss,val_loss,val_acc,lr") {
    throw Error(fmt::format("'{}' is not a history file", file.string()));
  }
  std::vector<EpochRecord> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 5) throw Error(fmt::format("malformed history row '{}'", line));
    rows.push_back({std::stoi(cells[0]), std::stod(cells[1]), std::stod(cells[2]),
                    std::stod(cells[3]), std::stod(cells[4])});
  }
  return rows;
}

namespace {

struct ValResult {
  double loss = 0.0;
  double accuracy = 0.0;
};

ValResult validate(nn::Graph<float>& graph, const Dataset& val, int batch_size) {
  const auto scores = predict(graph, val, batch_size);
  ValResult r;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const Label y = val.label(i);
    r.loss += binary_cross_entropy(y, scores[i]);
    const Label pred = scores[i] >= 0.5 ? Label::Fake : Label::Real;
    if (pred == y) ++correct;
  }
  r.loss /= static_cast<double>(scores.size());
  r.accuracy = static_cast<double>(correct) / static_cast<double>(scores.size());
  return r;
}

void write_checkpoint(const fs::path& dir, const std::string& name,
                      const adapt::AdaptedBackbone<float>& model, const Adamax<float>& opt,
                      const nlohmann::json& meta) {
  nn::write_weights(dir / (name + ".dfw"), nn::export_params(model.graph));
  nn::write_weights(dir / (name + ".opt.dfw"), opt.export_state());
  nn::atomic_write(dir / (name + ".json"), meta.dump(2) + "\n");
}

nlohmann::json read_json(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw MissingResource(fmt::format("cannot open '{}'", file.string()));
  return nlohmann::json::parse(in);
}

}  // namespace

TrainState train(adapt::AdaptedBackbone<float>& model, const Dataset& train_set,
                 const Dataset& val_set, const RunConfig& cfg, const TrainOptions& options) {
  cfg.validate();
  const auto spec = OptimizerSpec::from(cfg);
  spec.validate();
  if (train_set.size() == 0) throw ConfigError("TRAIN split is empty");
  if (val_set.size() == 0) throw ConfigError("VAL split is empty");
  if (train_set.config() != cfg.channel_config || val_set.config() != cfg.channel_config) {
    throw ConfigError("dataset channel config differs from run.channel_config");
  }
  if (model.in_channels() != channel_count(cfg.channel_config)) {
    throw ShapeError("model input channels differ from run.channel_config");
  }

  Adamax<float> opt(spec);
  TrainState state;
  state.rng_seed = cfg.seed;
  const std::string hash = config_hash(cfg);
  const bool write_files = !options.out_dir.empty();
  const fs::path ckpt_dir = options.out_dir / "checkpoints";
  if (write_files) fs::create_directories(ckpt_dir);

  if (options.resume && write_files && fs::exists(ckpt_dir / "last.json")) {
    const auto meta = read_json(ckpt_dir / "last.json");
    if (meta.at("config_hash").get<std::string>() != hash) {
      throw ConfigError("cannot resume: checkpoint was written for a different run config");
    }
    state = meta.at("state").get<TrainState>();
    nn::import_params(model.graph, nn::read_weights(ckpt_dir / "last.dfw"));
    opt.import_state(nn::read_weights(ckpt_dir / "last.opt.dfw"), state.step);
  }

  bool stop = options.max_steps > 0 && state.step >= options.max_steps;
  for (int epoch = state.epoch; epoch < cfg.epochs && !stop; ++epoch) {
    const double lr = lr_schedule(epoch, spec);
    const auto order = epoch_order(train_set, cfg, epoch);
    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size() && !stop; start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<preprocess::InputStack> stacks;
      std::vector<float> targets;
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t idx = order[k];
        auto s = train_set.get(idx);
        if (cfg.augment) {
          std::mt19937_64 rng(derive_seed(cfg.seed, 0xa06, static_cast<std::uint64_t>(epoch),
                                          static_cast<std::uint64_t>(idx)));
          s = preprocess::augment(s, rng, cfg.rotation_deg);
        }
        stacks.push_back(std::move(s));
        targets.push_back(train_set.label(idx) == Label::Fake ? 1.0f : 0.0f);
      }
      const auto batch = make_batch(stacks);
      model.graph.zero_grad();
      const auto& logits = model.graph.forward(batch, nn::Mode::Train);
      nn::Tensor<float> grad;
      const double loss = bce_with_logits(logits, targets, &grad);
      if (!std::isfinite(loss)) {
        std::string ids;
        for (const auto& s : stacks) {
          ids += fmt::format("{}{}#{}", ids.empty() ? "" : ", ", s.provenance.video_id,
                             s.provenance.frame_index);
        }
        throw NumericError(fmt::format("non-finite loss at epoch {} step {}; batch: {}", epoch,
                                       state.step, ids));
      }
      model.graph.backward(grad);
      opt.step(model.graph, lr);
      if (options.on_step) options.on_step({epoch, state.step, loss, lr});
      ++state.step;
      loss_sum += loss * static_cast<double>(stacks.size());
      seen += stacks.size();
      if (options.max_steps > 0 && state.step >= options.max_steps) stop = true;
    }
    model.graph.release();
    // A step budget that ends mid-epoch behaves like a kill: the partial
    // epoch is neither recorded nor checkpointed.
    if (seen < order.size()) break;

    const auto val = validate(model.graph, val_set, cfg.batch_size);
    EpochRecord rec{epoch, loss_sum / static_cast<double>(seen), val.loss, val.accuracy, lr};
    state.history.push_back(rec);
    state.epoch = epoch + 1;
    const bool improved = val.accuracy > state.best_val_accuracy;
    if (improved) state.best_val_accuracy = val.accuracy;

    if (write_files) {
      nlohmann::json meta = {{"run", cfg},
                             {"config_hash", hash},
                             {"code_version", std::string(code_version())},
                             {"architecture", std::string(to_string(model.architecture))},
                             {"channel_config", std::string(to_string(model.channel_config))},
                             {"pretrained", model.pretrained},
                             {"epoch", rec.epoch},
                             {"metrics", rec},
                             {"state", state},
                             {"provenance", options.provenance}};
      write_checkpoint(ckpt_dir, fmt::format("epoch_{:03d}", epoch), model, opt, meta);
      if (improved) write_checkpoint(ckpt_dir, "best", model, opt, meta);
      write_checkpoint(ckpt_dir, "last", model, opt, meta);
      write_history_csv(options.out_dir / "history.csv", state.history);
    }
  }
  return state;
}

Checkpoint load_checkpoint(adapt::AdaptedBackbone<float>& model, const fs::path& dir,
                           const std::string& name) {
  Checkpoint c;
  c.weights = dir / (name + ".dfw");
  c.sidecar = dir / (name + ".json");
  if (!fs::exists(c.weights)) {
    throw MissingResource(fmt::format("checkpoint '{}' not found", c.weights.string()));
  }
  c.meta = read_json(c.sidecar);
  nn::import_params(model.graph, nn::read_weights(c.weights));
  return c;
}

}  // namespace depthfake::train
