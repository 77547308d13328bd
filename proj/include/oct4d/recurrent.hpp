#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "oct4d/layers.hpp"

namespace oct4d {

// Batch normalization for recurrent pre-activations. Scale and shift are
// shared over time; running statistics are kept per timestep for t < t_cap
// and in one shared slot for every t >= t_cap.
template <typename T>
class RecurrentBatchNorm {
 public:
  static constexpr int kDefaultCap = 8;

  RecurrentBatchNorm() = default;
  RecurrentBatchNorm(std::int64_t channels, T gamma0 = T(0.1), int t_cap = kDefaultCap);

  Var<T> forward(const Var<T>& x, int t, bool training);
  void collect(const std::string& prefix, Registry<T>& reg) const;

  int slot(int t) const;
  const Var<T>& running_mean(int t) const { return mean_[static_cast<std::size_t>(slot(t))]; }
  const Var<T>& running_var(int t) const { return var_[static_cast<std::size_t>(slot(t))]; }
  Var<T>& gamma() { return gamma_; }
  Var<T>& beta() { return beta_; }
  int t_cap() const { return t_cap_; }

 private:
  Var<T> gamma_;
  Var<T> beta_;
  std::vector<Var<T>> mean_;
  std::vector<Var<T>> var_;
  int t_cap_ = kDefaultCap;
  T momentum_ = T(0.9);
  T eps_ = T(1e-5);
};

template <typename T>
Var<T> recurrent_bn(const Var<T>& pre_activation, int t, RecurrentBatchNorm<T>& state, bool training) {
  return state.forward(pre_activation, t, training);
}

// Input-to-hidden or hidden-to-hidden map of a gate: a matrix product on
// [b, c] inputs, or a SAME-padded stride-1 convolution on [b, 1, h, w, d, c].
template <typename T>
class GateMap {
 public:
  GateMap() = default;
  static GateMap dense(std::int64_t in, std::int64_t out, InitContext& init);
  static GateMap convolutional(KernelLayout spatial, std::int64_t in, std::int64_t out, InitContext& init);

  Var<T> apply(const Var<T>& x) const;
  // Applies several maps sharing an input as one product or convolution with
  // the weights stacked along the output axis.
  static std::vector<Var<T>> apply_fused(const std::vector<const GateMap*>& maps, const Var<T>& x);
  Var<T>& weight() { return weight_; }
  const Var<T>& weight() const { return weight_; }

 private:
  bool conv_ = false;
  ConvSpec spec_;
  Var<T> weight_;
};

template <typename T>
struct RecurrentState {
  Var<T> h;
  Var<T> c;  // LSTM cell state; undefined for GRU
};

template <typename T>
class RecurrentCell {
 public:
  virtual ~RecurrentCell() = default;
  virtual RecurrentState<T> step(const Var<T>& x_t, const RecurrentState<T>& prev, int t, bool training) = 0;
  // Zero state matching a single-step input.
  virtual RecurrentState<T> zero_state(const Shape& x_shape) const = 0;
  virtual void collect(const std::string& prefix, Registry<T>& reg) const = 0;
  virtual std::int64_t hidden() const = 0;
};

struct CellShape {
  std::int64_t input = 1;
  std::int64_t hidden = 1;
  bool convolutional = false;
  KernelLayout kernel{1, 3, 3, 3};  // convolutional cells only; kt must be 1
};

// z = sigmoid(bn(W_z x) + bn(U_z h)), r = sigmoid(bn(W_r x) + bn(U_r h)),
// candidate = tanh(bn(W_h x) + U_h (r * h)), h_t = (1 - z) * h_prev + z * candidate.
template <typename T>
class GruCell : public RecurrentCell<T> {
 public:
  enum Gate { update = 0, reset = 1, candidate = 2 };

  GruCell(CellShape shape, InitContext& init);

  RecurrentState<T> step(const Var<T>& x_t, const RecurrentState<T>& prev, int t, bool training) override;
  RecurrentState<T> zero_state(const Shape& x_shape) const override;
  void collect(const std::string& prefix, Registry<T>& reg) const override;
  std::int64_t hidden() const override { return shape_.hidden; }

  // Input-path BN for `g`; the hidden-path BN exists for update and reset only.
  RecurrentBatchNorm<T>& input_bn(Gate g) { return bn_x_[g]; }
  RecurrentBatchNorm<T>& hidden_bn(Gate g) { return bn_h_[g]; }
  GateMap<T>& input_map(Gate g) { return w_[g]; }
  GateMap<T>& hidden_map(Gate g) { return u_[g]; }

  static std::int64_t param_count(std::int64_t input, std::int64_t hidden, std::int64_t kernel_taps = 1);

 private:
  CellShape shape_;
  GateMap<T> w_[3];
  GateMap<T> u_[3];
  RecurrentBatchNorm<T> bn_x_[3];
  RecurrentBatchNorm<T> bn_h_[2];
};

// i, f, o = sigmoid(bn(W x) + bn(U h)), g = tanh(bn(W_g x) + bn(U_g h)),
// c_t = f * c_prev + i * g, h_t = o * tanh(c_t).
template <typename T>
class LstmCell : public RecurrentCell<T> {
 public:
  enum Gate { input = 0, forget = 1, output = 2, candidate = 3 };

  LstmCell(CellShape shape, InitContext& init);

  RecurrentState<T> step(const Var<T>& x_t, const RecurrentState<T>& prev, int t, bool training) override;
  RecurrentState<T> zero_state(const Shape& x_shape) const override;
  void collect(const std::string& prefix, Registry<T>& reg) const override;
  std::int64_t hidden() const override { return shape_.hidden; }

  RecurrentBatchNorm<T>& input_bn(Gate g) { return bn_x_[g]; }
  RecurrentBatchNorm<T>& hidden_bn(Gate g) { return bn_h_[g]; }
  GateMap<T>& input_map(Gate g) { return w_[g]; }
  GateMap<T>& hidden_map(Gate g) { return u_[g]; }

  static std::int64_t param_count(std::int64_t input, std::int64_t hidden, std::int64_t kernel_taps = 1);

 private:
  CellShape shape_;
  GateMap<T> w_[4];
  GateMap<T> u_[4];
  RecurrentBatchNorm<T> bn_x_[4];
  RecurrentBatchNorm<T> bn_h_[4];
};

// Single steps. Vector cells take x_t [b, c]; convolutional cells take
// x_t [b, 1, h, w, d, c] with the hidden state on the same grid.
template <typename T>
Var<T> gru_step(GruCell<T>& cell, const Var<T>& x_t, const Var<T>& h_prev, int t = 0, bool training = true);
template <typename T>
RecurrentState<T> lstm_step(LstmCell<T>& cell, const Var<T>& x_t, const RecurrentState<T>& prev, int t = 0,
                            bool training = true);

// Runs the cell over x_seq [b, p, ...] starting from h0 (zeros by default).
// Returns one state per step.
template <typename T>
std::vector<RecurrentState<T>> unroll(RecurrentCell<T>& cell, const Var<T>& x_seq, bool training,
                                      const std::optional<RecurrentState<T>>& h0 = std::nullopt);

// Hidden states of an unroll stacked back into [b, p, ...].
template <typename T>
Var<T> stack_hidden(const std::vector<RecurrentState<T>>& states);

}  // namespace oct4d
