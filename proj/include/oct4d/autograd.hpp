#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "oct4d/tensor.hpp"

namespace oct4d {

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // empty until something flows into it
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this->grad and accumulates into the parents' grads.
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const { return !backward_fn; }
  Tensor<T>& grad_buffer();
};

// Handle to a node of the recorded computation graph. Copies share the node,
// so a parameter held by a layer and by the optimizer is the same tensor.
template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false);

  // Records an op result. The node only joins the graph when recording is
  // enabled and at least one parent requires a gradient.
  static Var from_op(Tensor<T> value, std::vector<Var> parents, std::function<void(Node<T>&)> backward_fn);

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor<T>& value() const { return node_->value; }
  // In-place mutation hook for optimizer updates and checkpoint loading.
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_->requires_grad; }

  // Zeros of the value's shape when no gradient has reached this node.
  Tensor<T> grad() const;
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad() { node_->grad = Tensor<T>(); }

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& shared_node() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

// Reverse-mode sweep from a single-element loss. Leaf gradients accumulate
// across calls until zero_grad(); interior gradients are recomputed on every
// call. Parameters not reachable from the loss keep a zero gradient.
template <typename T>
void backward(const Var<T>& loss);

// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_recording_enabled();

struct FiniteDiffOptions {
  double eps = 1e-4;
  // Coordinates probed per parameter tensor; 0 probes every coordinate.
  std::int64_t max_coords_per_param = 0;
  std::uint64_t seed = 0;
};

// Central-difference check of backward() for a scalar function of params.
// Returns max |analytic - numeric| / max(1, |numeric|); NaN on non-finite
// evaluations.
template <typename T>
double finite_diff_check(const std::function<Var<T>()>& f, std::vector<Var<T>> params,
                         const FiniteDiffOptions& options = {});

extern template struct Node<float>;
extern template struct Node<double>;
extern template class Var<float>;
extern template class Var<double>;

}  // namespace oct4d
