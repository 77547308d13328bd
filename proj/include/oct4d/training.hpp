#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "oct4d/architectures.hpp"
#include "oct4d/reps.hpp"

namespace oct4d {

// Bias-corrected Adam. step() mutates the parameter tensors in place.
template <typename T>
class Adam {
 public:
  Adam(std::vector<NamedVar<T>> params, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  // Uses the gradients currently held by the parameters. Throws naming the
  // parameter when a gradient is not finite; nothing is updated then.
  void step();

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }
  std::int64_t steps() const { return t_; }
  const Tensor<T>& first_moment(std::size_t i) const { return m_[i]; }
  const Tensor<T>& second_moment(std::size_t i) const { return v_[i]; }

 private:
  std::vector<NamedVar<T>> params_;
  std::vector<Tensor<T>> m_;
  std::vector<Tensor<T>> v_;
  double lr_;
  double beta1_;
  double beta2_;
  double eps_;
  std::int64_t t_ = 0;
};

// Shadow copies of the parameters, initialised to their current values.
// Batch-norm buffers get their own shadow set: running statistics gathered
// under the raw weights do not describe the averaged weights.
template <typename T>
class Ema {
 public:
  explicit Ema(std::vector<NamedVar<T>> params, double decay = 0.999, std::vector<NamedVar<T>> buffers = {});

  // shadow <- decay * shadow + (1 - decay) * param
  void update();
  // Puts the shadow values into the parameters and buffers. restore() puts the
  // raw values back and keeps any buffer changes made in between as the
  // shadow buffers.
  void swap_in();
  void restore();
  bool swapped() const { return swapped_; }
  // Shadow buffers <- current raw buffers.
  void sync_buffers();

  const std::vector<Tensor<T>>& shadow() const { return shadow_; }
  std::vector<Tensor<T>>& shadow() { return shadow_; }
  const std::vector<Tensor<T>>& buffer_shadow() const { return buffer_shadow_; }
  std::vector<Tensor<T>>& buffer_shadow() { return buffer_shadow_; }
  double decay() const { return decay_; }

 private:
  std::vector<NamedVar<T>> params_;
  std::vector<NamedVar<T>> buffers_;
  std::vector<Tensor<T>> shadow_;
  std::vector<Tensor<T>> buffer_shadow_;
  std::vector<Tensor<T>> saved_;
  std::vector<Tensor<T>> saved_buffers_;
  double decay_;
  bool swapped_ = false;
};

// RAII: EMA weights in scope, raw weights afterwards.
template <typename T>
class EmaScope {
 public:
  explicit EmaScope(Ema<T>& ema) : ema_(ema) { ema_.swap_in(); }
  ~EmaScope() { ema_.restore(); }
  EmaScope(const EmaScope&) = delete;
  EmaScope& operator=(const EmaScope&) = delete;

 private:
  Ema<T>& ema_;
};

struct TrainConfig {
  int epochs = 100;
  int batch_size = 0;    // 0: per-representation default
  double lr = -1.0;      // < 0: per-representation default
  double init_std = 0.01;
  double ema_decay = 0.999;
  // Training-mode forward passes (no gradients) over shuffled training
  // batches that re-estimate the EMA model's batch-norm statistics after each
  // epoch. 0 reuses the raw model's running statistics.
  int bn_recalibration_batches = 50;
  std::uint64_t seed = 0;
  int checkpoint_every = 0;  // epochs; 0 disables
  std::filesystem::path checkpoint_path;

  void validate() const;
};

// 8 for 4D representations, 16 otherwise.
int default_batch_size(Representation rep);
// 2.5e-4 for 4D representations, 5e-4 otherwise.
double default_learning_rate(Representation rep);

struct EpochLoss {
  int epoch = 0;
  double train_mse = 0.0;  // mean batch loss on standardized targets
  double val_mse = 0.0;    // EMA weights, inference mode; NaN without a validation split
};

// Targets are standardized with the training-split statistics.
struct TargetScale {
  double mean = 0.0;
  double std = 1.0;
};
TargetScale fit_target_scale(const WindowedData& data);

// Mini-batches of `n` shuffled indices. A trailing batch of one (which batch
// normalization cannot train on) is folded into the previous batch.
std::vector<std::vector<std::size_t>> make_batches(std::size_t n, int batch_size, Rng& rng);

template <typename T>
struct TrainState {
  Network<T> net;
  Adam<T> adam;
  Ema<T> ema;
  TargetScale scale;
  std::vector<EpochLoss> history;

  TrainState(const ModelConfig& model, const TrainConfig& cfg);
};

using EpochCallback = std::function<void(const EpochLoss&)>;

// Full training run: per epoch, shuffled mini-batches of forward, MSE,
// backward, Adam and EMA updates, then a validation pass with EMA weights.
template <typename T>
void train(TrainState<T>& state, const WindowedData& data, const TrainConfig& cfg,
           const EpochCallback& on_epoch = nullptr);

// Replaces the running statistics of every batch-norm layer with their
// average over up to `max_batches` shuffled batches of `refs`, computed in
// training mode without gradients.
template <typename T>
void recalibrate_batch_norm(Network<T>& net, const WindowedData& data, const std::vector<WindowRef>& refs,
                            int batch_size, int max_batches, Rng& rng);

// Predictions in mN for `refs` with the network's current weights in
// inference mode.
template <typename T>
std::vector<double> predict(Network<T>& net, const WindowedData& data, const std::vector<WindowRef>& refs,
                            const TargetScale& scale, int batch_size = 32);

// MSE on standardized targets, inference mode.
template <typename T>
double evaluate_mse(Network<T>& net, const WindowedData& data, const std::vector<WindowRef>& refs,
                    const TargetScale& scale, int batch_size = 32);

void write_loss_csv(const std::vector<EpochLoss>& history, const std::filesystem::path& path);

}  // namespace oct4d
