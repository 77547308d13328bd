#include "oct4d/training.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "oct4d/binio.hpp"
#include "oct4d/checkpoint.hpp"
#include "oct4d/ops.hpp"

namespace oct4d {

namespace {

bool is_4d(Representation rep) { return rep == Representation::st4d || rep == Representation::ps_st4d; }

template <typename T>
Tensor<T> standardized(const Tensor<double>& labels, const TargetScale& s) {
  Tensor<T> out(labels.shape());
  for (std::int64_t i = 0; i < labels.size(); ++i) out[i] = static_cast<T>((labels[i] - s.mean) / s.std);
  return out;
}

}  // namespace

// ---- Adam ------------------------------------------------------------------------

template <typename T>
Adam<T>::Adam(std::vector<NamedVar<T>> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params_) {
    m_.emplace_back(p.var.shape());
    v_.emplace_back(p.var.shape());
  }
}

template <typename T>
void Adam<T>::step() {
  std::vector<Tensor<T>> grads;
  grads.reserve(params_.size());
  for (const auto& p : params_) {
    grads.push_back(p.var.grad());
    if (!grads.back().all_finite()) {
      throw std::runtime_error("non-finite gradient in parameter '" + p.name + "' at step " + std::to_string(t_ + 1));
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    T* w = params_[i].var.mutable_value().ptr();
    T* m = m_[i].ptr();
    T* v = v_[i].ptr();
    const T* g = grads[i].ptr();
    for (std::int64_t k = 0; k < grads[i].size(); ++k) {
      const double gk = g[k];
      m[k] = static_cast<T>(beta1_ * m[k] + (1.0 - beta1_) * gk);
      v[k] = static_cast<T>(beta2_ * v[k] + (1.0 - beta2_) * gk * gk);
      const double mhat = m[k] / c1;
      const double vhat = v[k] / c2;
      w[k] = static_cast<T>(w[k] - lr_ * mhat / (std::sqrt(vhat) + eps_));
    }
  }
}

// ---- EMA ---------------------------------------------------------------------------

template <typename T>
Ema<T>::Ema(std::vector<NamedVar<T>> params, double decay, std::vector<NamedVar<T>> buffers)
    : params_(std::move(params)), buffers_(std::move(buffers)), decay_(decay) {
  for (const auto& p : params_) shadow_.push_back(p.var.value());
  for (const auto& b : buffers_) buffer_shadow_.push_back(b.var.value());
}

template <typename T>
void Ema<T>::update() {
  if (swapped_) throw std::logic_error("EMA update while shadow weights are swapped in");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    T* s = shadow_[i].ptr();
    const T* p = params_[i].var.value().ptr();
    for (std::int64_t k = 0; k < shadow_[i].size(); ++k) {
      s[k] = static_cast<T>(decay_ * s[k] + (1.0 - decay_) * p[k]);
    }
  }
}

template <typename T>
void Ema<T>::swap_in() {
  if (swapped_) return;
  saved_.clear();
  saved_buffers_.clear();
  for (std::size_t i = 0; i < params_.size(); ++i) {
    saved_.push_back(params_[i].var.value());
    params_[i].var.mutable_value() = shadow_[i];
  }
  for (std::size_t i = 0; i < buffers_.size(); ++i) {
    saved_buffers_.push_back(buffers_[i].var.value());
    buffers_[i].var.mutable_value() = buffer_shadow_[i];
  }
  swapped_ = true;
}

template <typename T>
void Ema<T>::restore() {
  if (!swapped_) return;
  for (std::size_t i = 0; i < params_.size(); ++i) params_[i].var.mutable_value() = std::move(saved_[i]);
  for (std::size_t i = 0; i < buffers_.size(); ++i) {
    buffer_shadow_[i] = buffers_[i].var.value();
    buffers_[i].var.mutable_value() = std::move(saved_buffers_[i]);
  }
  saved_.clear();
  saved_buffers_.clear();
  swapped_ = false;
}

template <typename T>
void Ema<T>::sync_buffers() {
  if (swapped_) throw std::logic_error("EMA buffer sync while shadow weights are swapped in");
  for (std::size_t i = 0; i < buffers_.size(); ++i) buffer_shadow_[i] = buffers_[i].var.value();
}

// ---- configuration -------------------------------------------------------------------

void TrainConfig::validate() const {
  if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
  if (batch_size < 0) throw std::invalid_argument("batch size must be positive");
  if (!(init_std > 0)) throw std::invalid_argument("init std must be positive");
  if (!(ema_decay >= 0 && ema_decay < 1)) throw std::invalid_argument("EMA decay must lie in [0, 1)");
  if (bn_recalibration_batches < 0) throw std::invalid_argument("batch-norm recalibration batches must be >= 0");
  if (checkpoint_every < 0) throw std::invalid_argument("checkpoint interval must be >= 0");
}

int default_batch_size(Representation rep) { return is_4d(rep) ? 8 : 16; }
double default_learning_rate(Representation rep) { return is_4d(rep) ? 2.5e-4 : 5e-4; }

TargetScale fit_target_scale(const WindowedData& data) {
  const auto& refs = data.windows(Split::train);
  if (refs.empty()) throw std::invalid_argument("training split has no windows");
  const Tensor<double> y = data.labels(refs);
  double mean = 0.0;
  for (double v : y.data()) mean += v;
  mean /= static_cast<double>(y.size());
  double var = 0.0;
  for (double v : y.data()) var += (v - mean) * (v - mean);
  var /= static_cast<double>(y.size());
  const double sd = std::sqrt(var);
  return {mean, sd > 0 ? sd : 1.0};
}

std::vector<std::vector<std::size_t>> make_batches(std::size_t n, int batch_size, Rng& rng) {
  if (batch_size < 1) throw std::invalid_argument("batch size must be positive");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order.begin(), order.end());
  std::vector<std::vector<std::size_t>> batches;
  const auto bs = static_cast<std::size_t>(batch_size);
  for (std::size_t i = 0; i < n; i += bs) {
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(n, i + bs)));
  }
  if (batches.size() > 1 && batches.back().size() == 1) {
    batches[batches.size() - 2].push_back(batches.back().front());
    batches.pop_back();
  }
  return batches;
}

template <typename T>
TrainState<T>::TrainState(const ModelConfig& model, const TrainConfig& cfg)
    : net(model, derive_seed(cfg.seed, 1), cfg.init_std),
      adam(net.registry().params, cfg.lr < 0 ? default_learning_rate(model.representation) : cfg.lr),
      ema(net.registry().params, cfg.ema_decay, net.registry().buffers) {
  cfg.validate();
}

// ---- loop ------------------------------------------------------------------------------

template <typename T>
void train(TrainState<T>& state, const WindowedData& data, const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  const auto& train_refs = data.windows(Split::train);
  if (train_refs.size() < 2) throw std::invalid_argument("training split needs at least 2 windows");
  const auto& val_refs = data.windows(Split::val);
  state.scale = fit_target_scale(data);
  const int bs = cfg.batch_size > 0 ? cfg.batch_size : default_batch_size(state.net.config().representation);
  Rng rng(derive_seed(cfg.seed, 2));
  Rng recal_rng(derive_seed(cfg.seed, 3));
  auto params = state.net.registry().params;

  const int first = static_cast<int>(state.history.size()) + 1;
  for (int epoch = first; epoch < first + cfg.epochs; ++epoch) {
    double loss_sum = 0.0;
    std::size_t loss_n = 0;
    const auto batches = make_batches(train_refs.size(), bs, rng);
    for (std::size_t b = 0; b < batches.size(); ++b) {
      std::vector<WindowRef> refs;
      refs.reserve(batches[b].size());
      for (std::size_t i : batches[b]) refs.push_back(train_refs[i]);
      for (auto& p : params) p.var.zero_grad();
      Var<T> x(data.inputs<T>(refs));
      Var<T> loss = mse_loss(state.net.forward(x, true), standardized<T>(data.labels(refs), state.scale));
      const double lv = static_cast<double>(loss.value()[0]);
      if (!std::isfinite(lv)) {
        throw std::runtime_error("non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                                 std::to_string(b + 1));
      }
      backward(loss);
      state.adam.step();
      state.ema.update();
      loss_sum += lv * static_cast<double>(refs.size());
      loss_n += refs.size();
    }
    EpochLoss rec{epoch, loss_sum / static_cast<double>(loss_n), std::numeric_limits<double>::quiet_NaN()};
    if (cfg.bn_recalibration_batches > 0) {
      EmaScope<T> scope(state.ema);
      recalibrate_batch_norm(state.net, data, train_refs, bs, cfg.bn_recalibration_batches, recal_rng);
    } else {
      state.ema.sync_buffers();
    }
    if (!val_refs.empty()) {
      EmaScope<T> scope(state.ema);
      rec.val_mse = evaluate_mse(state.net, data, val_refs, state.scale);
    }
    state.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (cfg.checkpoint_every > 0 && !cfg.checkpoint_path.empty() && epoch % cfg.checkpoint_every == 0) {
      save_checkpoint(make_checkpoint(state.net, &state.ema, state.scale), cfg.checkpoint_path);
    }
  }
}

template <typename T>
void recalibrate_batch_norm(Network<T>& net, const WindowedData& data, const std::vector<WindowRef>& refs,
                            int batch_size, int max_batches, Rng& rng) {
  if (refs.size() < 2) throw std::invalid_argument("batch-norm recalibration needs at least 2 windows");
  NoGradGuard guard;
  const auto batches = make_batches(refs.size(), batch_size, rng);
  const std::size_t n = std::min(batches.size(), static_cast<std::size_t>(std::max(max_batches, 0)));
  for (std::size_t b = 0; b < n; ++b) {
    std::vector<WindowRef> chunk;
    chunk.reserve(batches[b].size());
    for (std::size_t i : batches[b]) chunk.push_back(refs[i]);
    // momentum b/(b+1): the running value becomes the mean over batches seen so far
    BatchNormMomentumScope momentum(static_cast<double>(b) / static_cast<double>(b + 1));
    net.forward(Var<T>(data.inputs<T>(chunk)), true);
  }
}

template <typename T>
std::vector<double> predict(Network<T>& net, const WindowedData& data, const std::vector<WindowRef>& refs,
                            const TargetScale& scale, int batch_size) {
  NoGradGuard guard;
  std::vector<double> out;
  out.reserve(refs.size());
  for (std::size_t i = 0; i < refs.size(); i += static_cast<std::size_t>(batch_size)) {
    const std::size_t n = std::min(refs.size() - i, static_cast<std::size_t>(batch_size));
    std::span<const WindowRef> chunk(refs.data() + i, n);
    Var<T> y = net.forward(Var<T>(data.inputs<T>(chunk)), false);
    for (std::size_t k = 0; k < n; ++k) {
      out.push_back(static_cast<double>(y.value()[static_cast<std::int64_t>(k)]) * scale.std + scale.mean);
    }
  }
  return out;
}

template <typename T>
double evaluate_mse(Network<T>& net, const WindowedData& data, const std::vector<WindowRef>& refs,
                    const TargetScale& scale, int batch_size) {
  if (refs.empty()) throw std::invalid_argument("evaluation split has no windows");
  const auto pred = predict(net, data, refs, scale, batch_size);
  const Tensor<double> y = data.labels(refs);
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double e = (pred[i] - y[static_cast<std::int64_t>(i)]) / scale.std;
    acc += e * e;
  }
  return acc / static_cast<double>(pred.size());
}

void write_loss_csv(const std::vector<EpochLoss>& history, const std::filesystem::path& path) {
  std::ostringstream os;
  os.precision(10);
  os << "epoch,train_mse,val_mse\n";
  for (const auto& h : history) os << h.epoch << "," << h.train_mse << "," << h.val_mse << "\n";
  binio::write_file_atomic(path, os.str());
}

#define OCT4D_INSTANTIATE_TRAINING(T)                                                                         \
  template class Adam<T>;                                                                                     \
  template class Ema<T>;                                                                                      \
  template struct TrainState<T>;                                                                              \
  template void train(TrainState<T>&, const WindowedData&, const TrainConfig&, const EpochCallback&);         \
  template void recalibrate_batch_norm(Network<T>&, const WindowedData&, const std::vector<WindowRef>&, int, int, \
                                       Rng&);                                                                 \
  template std::vector<double> predict(Network<T>&, const WindowedData&, const std::vector<WindowRef>&,       \
                                       const TargetScale&, int);                                              \
  template double evaluate_mse(Network<T>&, const WindowedData&, const std::vector<WindowRef>&,               \
                               const TargetScale&, int);

OCT4D_INSTANTIATE_TRAINING(float)
OCT4D_INSTANTIATE_TRAINING(double)

}  // namespace oct4d
