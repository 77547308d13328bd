#include "oct4d/recurrent.hpp"

#include <algorithm>
#include <stdexcept>

#include "oct4d/ops.hpp"

namespace oct4d {

template <typename T>
RecurrentBatchNorm<T>::RecurrentBatchNorm(std::int64_t channels, T gamma0, int t_cap) : t_cap_(t_cap) {
  if (t_cap < 1) throw std::invalid_argument("recurrent batch norm needs t_cap >= 1");
  gamma_ = Var<T>(Tensor<T>(Shape{channels}, gamma0), true);
  beta_ = Var<T>(Tensor<T>(Shape{channels}, T{0}), true);
  for (int s = 0; s <= t_cap; ++s) {
    mean_.emplace_back(Tensor<T>(Shape{channels}, T{0}));
    var_.emplace_back(Tensor<T>(Shape{channels}, T{1}));
  }
}

template <typename T>
int RecurrentBatchNorm<T>::slot(int t) const {
  if (t < 0) throw std::invalid_argument("timestep must be non-negative");
  return std::min(t, t_cap_);
}

template <typename T>
Var<T> RecurrentBatchNorm<T>::forward(const Var<T>& x, int t, bool training) {
  const auto s = static_cast<std::size_t>(slot(t));
  return batch_norm(x, gamma_, beta_, mean_[s], var_[s], momentum_, eps_, training);
}

template <typename T>
void RecurrentBatchNorm<T>::collect(const std::string& prefix, Registry<T>& reg) const {
  reg.param(prefix + ".gamma", gamma_);
  reg.param(prefix + ".beta", beta_);
  for (std::size_t s = 0; s < mean_.size(); ++s) {
    reg.buffer(prefix + ".running_mean." + std::to_string(s), mean_[s]);
    reg.buffer(prefix + ".running_var." + std::to_string(s), var_[s]);
  }
}

template <typename T>
GateMap<T> GateMap<T>::dense(std::int64_t in, std::int64_t out, InitContext& init) {
  GateMap m;
  m.weight_ = make_param<T>(Shape{in, out}, init);
  return m;
}

template <typename T>
GateMap<T> GateMap<T>::convolutional(KernelLayout spatial, std::int64_t in, std::int64_t out, InitContext& init) {
  if (spatial.kt != 1) throw std::invalid_argument("convolutional gates act on single frames (kt must be 1)");
  GateMap m;
  m.conv_ = true;
  m.spec_ = ConvSpec{{1, spatial.kh, spatial.kw, spatial.kd}, in, out, 1, true};
  m.spec_.validate();
  m.weight_ = make_param<T>(m.spec_.weight_shape(), init);
  return m;
}

template <typename T>
Var<T> GateMap<T>::apply(const Var<T>& x) const {
  return conv_ ? conv(x, weight_, spec_) : matmul(x, weight_);
}

template <typename T>
std::vector<Var<T>> GateMap<T>::apply_fused(const std::vector<const GateMap*>& maps, const Var<T>& x) {
  if (maps.empty()) throw std::invalid_argument("apply_fused needs at least one map");
  if (maps.size() == 1) return {maps.front()->apply(x)};
  std::vector<Var<T>> weights;
  std::vector<std::int64_t> widths;
  for (const GateMap* m : maps) {
    if (m->conv_ != maps.front()->conv_) throw std::invalid_argument("cannot fuse dense and convolutional maps");
    weights.push_back(m->weight_);
    widths.push_back(m->weight_.shape().back());
  }
  const Var<T> w = concat(weights, -1);
  Var<T> y;
  if (maps.front()->conv_) {
    ConvSpec spec = maps.front()->spec_;
    spec.out_channels = w.shape().back();
    y = conv(x, w, spec);
  } else {
    y = matmul(x, w);
  }
  std::vector<Var<T>> out;
  std::int64_t start = 0;
  for (std::int64_t width : widths) {
    out.push_back(narrow(y, -1, start, width));
    start += width;
  }
  return out;
}

namespace {

template <typename T>
GateMap<T> make_map(const CellShape& s, std::int64_t in, InitContext& init) {
  return s.convolutional ? GateMap<T>::convolutional(s.kernel, in, s.hidden, init)
                         : GateMap<T>::dense(in, s.hidden, init);
}

template <typename T>
Shape state_shape(const CellShape& s, const Shape& x_shape) {
  if (s.convolutional) {
    if (x_shape.size() != 6 || x_shape[1] != 1) {
      throw std::invalid_argument("convolutional cell input must be [b, 1, h, w, d, c], got " + shape_str(x_shape));
    }
    Shape hs = x_shape;
    hs.back() = s.hidden;
    return hs;
  }
  if (x_shape.size() != 2) throw std::invalid_argument("vector cell input must be [b, c], got " + shape_str(x_shape));
  return Shape{x_shape[0], s.hidden};
}

void check_input(const CellShape& s, const Shape& x_shape, const Shape& h_shape) {
  if (x_shape.back() != s.input) {
    throw std::invalid_argument("cell expects " + std::to_string(s.input) + " input channels, got " +
                                shape_str(x_shape));
  }
  Shape xs = x_shape;
  Shape hs = h_shape;
  xs.back() = 0;
  hs.back() = 0;
  if (xs != hs || h_shape.back() != s.hidden) {
    throw std::invalid_argument("hidden state " + shape_str(h_shape) + " does not match input " + shape_str(x_shape));
  }
}

}  // namespace

// ---- GRU ----------------------------------------------------------------------

template <typename T>
GruCell<T>::GruCell(CellShape shape, InitContext& init) : shape_(shape) {
  for (int g = 0; g < 3; ++g) {
    w_[g] = make_map<T>(shape_, shape_.input, init);
    u_[g] = make_map<T>(shape_, shape_.hidden, init);
    bn_x_[g] = RecurrentBatchNorm<T>(shape_.hidden);
  }
  for (int g = 0; g < 2; ++g) bn_h_[g] = RecurrentBatchNorm<T>(shape_.hidden);
}

template <typename T>
RecurrentState<T> GruCell<T>::zero_state(const Shape& x_shape) const {
  return {Var<T>(Tensor<T>(state_shape<T>(shape_, x_shape))), Var<T>()};
}

template <typename T>
RecurrentState<T> GruCell<T>::step(const Var<T>& x, const RecurrentState<T>& prev, int t, bool training) {
  const Var<T>& h = prev.h;
  check_input(shape_, x.shape(), h.shape());
  const auto wx = GateMap<T>::apply_fused({&w_[update], &w_[reset], &w_[candidate]}, x);
  const auto uh = GateMap<T>::apply_fused({&u_[update], &u_[reset]}, h);
  Var<T> z = sigmoid(add(bn_x_[update].forward(wx[update], t, training), bn_h_[update].forward(uh[update], t, training)));
  Var<T> r = sigmoid(add(bn_x_[reset].forward(wx[reset], t, training), bn_h_[reset].forward(uh[reset], t, training)));
  Var<T> cand = tanh(add(bn_x_[candidate].forward(wx[candidate], t, training), u_[candidate].apply(mul(r, h))));
  // (1 - z) * h + z * cand
  return {add(h, mul(z, sub(cand, h))), Var<T>()};
}

template <typename T>
void GruCell<T>::collect(const std::string& prefix, Registry<T>& reg) const {
  static const char* names[3] = {"update", "reset", "candidate"};
  for (int g = 0; g < 3; ++g) {
    const std::string p = prefix + "." + names[g];
    reg.param(p + ".w", w_[g].weight());
    reg.param(p + ".u", u_[g].weight());
    bn_x_[g].collect(p + ".bn_x", reg);
    if (g < 2) bn_h_[g].collect(p + ".bn_h", reg);
  }
}

template <typename T>
std::int64_t GruCell<T>::param_count(std::int64_t input, std::int64_t hidden, std::int64_t kernel_taps) {
  return 3 * kernel_taps * (input * hidden + hidden * hidden) + 5 * 2 * hidden;
}

// ---- LSTM ---------------------------------------------------------------------

template <typename T>
LstmCell<T>::LstmCell(CellShape shape, InitContext& init) : shape_(shape) {
  for (int g = 0; g < 4; ++g) {
    w_[g] = make_map<T>(shape_, shape_.input, init);
    u_[g] = make_map<T>(shape_, shape_.hidden, init);
    bn_x_[g] = RecurrentBatchNorm<T>(shape_.hidden);
    bn_h_[g] = RecurrentBatchNorm<T>(shape_.hidden);
  }
}

template <typename T>
RecurrentState<T> LstmCell<T>::zero_state(const Shape& x_shape) const {
  const Shape s = state_shape<T>(shape_, x_shape);
  return {Var<T>(Tensor<T>(s)), Var<T>(Tensor<T>(s))};
}

template <typename T>
RecurrentState<T> LstmCell<T>::step(const Var<T>& x, const RecurrentState<T>& prev, int t, bool training) {
  check_input(shape_, x.shape(), prev.h.shape());
  if (!prev.c.defined() || prev.c.shape() != prev.h.shape()) {
    throw std::invalid_argument("LSTM cell state missing or mismatched");
  }
  const auto wx = GateMap<T>::apply_fused({&w_[0], &w_[1], &w_[2], &w_[3]}, x);
  const auto uh = GateMap<T>::apply_fused({&u_[0], &u_[1], &u_[2], &u_[3]}, prev.h);
  auto pre = [&](int g) {
    const auto i = static_cast<std::size_t>(g);
    return add(bn_x_[g].forward(wx[i], t, training), bn_h_[g].forward(uh[i], t, training));
  };
  Var<T> i = sigmoid(pre(input));
  Var<T> f = sigmoid(pre(forget));
  Var<T> o = sigmoid(pre(output));
  Var<T> g = tanh(pre(candidate));
  Var<T> c = add(mul(f, prev.c), mul(i, g));
  return {mul(o, tanh(c)), c};
}

template <typename T>
void LstmCell<T>::collect(const std::string& prefix, Registry<T>& reg) const {
  static const char* names[4] = {"input", "forget", "output", "candidate"};
  for (int g = 0; g < 4; ++g) {
    const std::string p = prefix + "." + names[g];
    reg.param(p + ".w", w_[g].weight());
    reg.param(p + ".u", u_[g].weight());
    bn_x_[g].collect(p + ".bn_x", reg);
    bn_h_[g].collect(p + ".bn_h", reg);
  }
}

template <typename T>
std::int64_t LstmCell<T>::param_count(std::int64_t input, std::int64_t hidden, std::int64_t kernel_taps) {
  return 4 * kernel_taps * (input * hidden + hidden * hidden) + 8 * 2 * hidden;
}

// ---- free functions -------------------------------------------------------------

template <typename T>
Var<T> gru_step(GruCell<T>& cell, const Var<T>& x_t, const Var<T>& h_prev, int t, bool training) {
  return cell.step(x_t, {h_prev, Var<T>()}, t, training).h;
}

template <typename T>
RecurrentState<T> lstm_step(LstmCell<T>& cell, const Var<T>& x_t, const RecurrentState<T>& prev, int t,
                            bool training) {
  return cell.step(x_t, prev, t, training);
}

template <typename T>
std::vector<RecurrentState<T>> unroll(RecurrentCell<T>& cell, const Var<T>& x_seq, bool training,
                                      const std::optional<RecurrentState<T>>& h0) {
  const Shape& xs = x_seq.shape();
  if (xs.size() != 3 && xs.size() != 6) {
    throw std::invalid_argument("unroll expects [b, p, c] or [b, p, h, w, d, c], got " + shape_str(xs));
  }
  const std::int64_t p = xs[1];
  auto frame = [&](std::int64_t t) {
    Var<T> x_t = slice(x_seq, 1, t);
    return xs.size() == 3 ? reshape(x_t, Shape{xs[0], xs[2]}) : x_t;
  };
  std::vector<RecurrentState<T>> states;
  states.reserve(static_cast<std::size_t>(p));
  RecurrentState<T> state;
  for (std::int64_t t = 0; t < p; ++t) {
    Var<T> x_t = frame(t);
    if (t == 0) state = h0 ? *h0 : cell.zero_state(x_t.shape());
    state = cell.step(x_t, state, static_cast<int>(t), training);
    states.push_back(state);
  }
  return states;
}

template <typename T>
Var<T> stack_hidden(const std::vector<RecurrentState<T>>& states) {
  if (states.empty()) throw std::invalid_argument("stack_hidden of an empty sequence");
  std::vector<Var<T>> hs;
  hs.reserve(states.size());
  for (const auto& s : states) {
    const Shape& shape = s.h.shape();
    hs.push_back(shape.size() == 2 ? reshape(s.h, Shape{shape[0], 1, shape[1]}) : s.h);
  }
  return concat(hs, 1);
}

#define OCT4D_INSTANTIATE_RECURRENT(T)                                                                      \
  template class RecurrentBatchNorm<T>;                                                                     \
  template class GateMap<T>;                                                                                \
  template class GruCell<T>;                                                                                \
  template class LstmCell<T>;                                                                               \
  template Var<T> gru_step(GruCell<T>&, const Var<T>&, const Var<T>&, int, bool);                           \
  template RecurrentState<T> lstm_step(LstmCell<T>&, const Var<T>&, const RecurrentState<T>&, int, bool);   \
  template std::vector<RecurrentState<T>> unroll(RecurrentCell<T>&, const Var<T>&, bool,                    \
                                                 const std::optional<RecurrentState<T>>&);                  \
  template Var<T> stack_hidden(const std::vector<RecurrentState<T>>&);

OCT4D_INSTANTIATE_RECURRENT(float)
OCT4D_INSTANTIATE_RECURRENT(double)

}  // namespace oct4d
