#include "oct4d/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>
#include <unordered_set>

namespace oct4d {

namespace {
thread_local bool g_recording = true;
}

bool grad_recording_enabled() { return g_recording; }

NoGradGuard::NoGradGuard() : previous_(g_recording) { g_recording = false; }
NoGradGuard::~NoGradGuard() { g_recording = previous_; }

template <typename T>
Tensor<T>& Node<T>::grad_buffer() {
  if (grad.empty()) grad = Tensor<T>(value.shape());
  return grad;
}

template <typename T>
Var<T>::Var(Tensor<T> value, bool requires_grad) : node_(std::make_shared<Node<T>>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

template <typename T>
Var<T> Var<T>::from_op(Tensor<T> value, std::vector<Var> parents, std::function<void(Node<T>&)> backward_fn) {
  Var out(std::move(value), false);
  if (!g_recording) return out;
  const bool any = std::any_of(parents.begin(), parents.end(),
                               [](const Var& p) { return p.defined() && p.requires_grad(); });
  if (!any) return out;
  out.node_->requires_grad = true;
  out.node_->parents.reserve(parents.size());
  for (auto& p : parents) out.node_->parents.push_back(p.node_);
  out.node_->backward_fn = std::move(backward_fn);
  return out;
}

template <typename T>
Tensor<T> Var<T>::grad() const {
  if (node_->grad.empty()) return Tensor<T>(node_->value.shape());
  return node_->grad;
}

template <typename T>
void backward(const Var<T>& loss) {
  if (loss.value().size() != 1) {
    throw std::invalid_argument("backward() needs a single-element loss, got shape " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(loss.node(), 0);
  visited.insert(loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (auto* node : order) {
    if (!node->is_leaf()) node->grad = Tensor<T>();
  }
  auto& seed = loss.node()->grad_buffer();
  seed[0] += T{1};

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (node->is_leaf() || node->grad.empty()) continue;
    node->backward_fn(*node);
  }
}

template <typename T>
double finite_diff_check(const std::function<Var<T>()>& f, std::vector<Var<T>> params,
                         const FiniteDiffOptions& options) {
  if (!(options.eps > 0)) throw std::invalid_argument("finite_diff_check eps must be positive");
  for (auto& p : params) p.zero_grad();
  Var<T> loss = f();
  if (!loss.value().all_finite()) return std::numeric_limits<double>::quiet_NaN();
  backward(loss);

  std::mt19937_64 rng(options.seed);
  double worst = 0.0;
  for (auto& p : params) {
    const Tensor<T> analytic = p.grad();
    const std::int64_t n = p.value().size();
    std::vector<std::int64_t> coords(static_cast<std::size_t>(n));
    std::iota(coords.begin(), coords.end(), 0);
    if (options.max_coords_per_param > 0 && n > options.max_coords_per_param) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(static_cast<std::size_t>(options.max_coords_per_param));
    }
    for (auto i : coords) {
      T& slot = p.mutable_value()[i];
      const T saved = slot;
      double plus = 0.0;
      double minus = 0.0;
      {
        NoGradGuard guard;
        slot = static_cast<T>(saved + options.eps);
        plus = static_cast<double>(f().value()[0]);
        slot = static_cast<T>(saved - options.eps);
        minus = static_cast<double>(f().value()[0]);
      }
      slot = saved;
      const double numeric = (plus - minus) / (2.0 * options.eps);
      const double err = std::abs(static_cast<double>(analytic[i]) - numeric) / std::max(1.0, std::abs(numeric));
      if (!std::isfinite(err)) return std::numeric_limits<double>::quiet_NaN();
      worst = std::max(worst, err);
    }
  }
  return worst;
}

template struct Node<float>;
template struct Node<double>;
template class Var<float>;
template class Var<double>;
template void backward(const Var<float>&);
template void backward(const Var<double>&);
template double finite_diff_check(const std::function<Var<float>()>&, std::vector<Var<float>>,
                                  const FiniteDiffOptions&);
template double finite_diff_check(const std::function<Var<double>()>&, std::vector<Var<double>>,
                                  const FiniteDiffOptions&);

}  // namespace oct4d
