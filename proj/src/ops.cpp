#include "oct4d/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace oct4d {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

// Offsets of both operands for every element of the broadcast result.
struct BroadcastPlan {
  Shape out;
  std::vector<std::int64_t> stride_a;
  std::vector<std::int64_t> stride_b;
  bool same = false;

  BroadcastPlan(const Shape& a, const Shape& b) {
    if (a == b) {
      out = a;
      same = true;
      return;
    }
    const std::size_t rank = std::max(a.size(), b.size());
    out.assign(rank, 1);
    stride_a.assign(rank, 0);
    stride_b.assign(rank, 0);
    auto strides = [rank](const Shape& s, std::vector<std::int64_t>& st) {
      std::int64_t acc = 1;
      for (std::size_t k = 0; k < s.size(); ++k) {
        const std::size_t axis = rank - 1 - k;
        const std::size_t src = s.size() - 1 - k;
        st[axis] = s[src] == 1 ? 0 : acc;
        acc *= s[src];
      }
    };
    for (std::size_t k = 0; k < rank; ++k) {
      const std::int64_t ea = k < rank - a.size() ? 1 : a[k - (rank - a.size())];
      const std::int64_t eb = k < rank - b.size() ? 1 : b[k - (rank - b.size())];
      if (ea != eb && ea != 1 && eb != 1) {
        throw std::invalid_argument("shape mismatch: cannot broadcast " + shape_str(a) + " with " + shape_str(b));
      }
      out[k] = std::max(ea, eb);
    }
    strides(a, stride_a);
    strides(b, stride_b);
  }

  template <typename Fn>
  void for_each(Fn&& fn) const {
    const std::int64_t n = numel(out);
    if (same) {
      for (std::int64_t i = 0; i < n; ++i) fn(i, i, i);
      return;
    }
    std::vector<std::int64_t> idx(out.size(), 0);
    std::int64_t ia = 0;
    std::int64_t ib = 0;
    for (std::int64_t i = 0; i < n; ++i) {
      fn(i, ia, ib);
      for (int axis = static_cast<int>(out.size()) - 1; axis >= 0; --axis) {
        const auto k = static_cast<std::size_t>(axis);
        ++idx[k];
        ia += stride_a[k];
        ib += stride_b[k];
        if (idx[k] < out[k]) break;
        ia -= stride_a[k] * out[k];
        ib -= stride_b[k] * out[k];
        idx[k] = 0;
      }
    }
  }
};

template <typename T>
Var<T> binary(ElementwiseOp op, const Var<T>& a, const Var<T>& b) {
  BroadcastPlan plan(a.shape(), b.shape());
  Tensor<T> out(plan.out);
  const T* pa = a.value().ptr();
  const T* pb = b.value().ptr();
  T* po = out.ptr();
  switch (op) {
    case ElementwiseOp::add:
      plan.for_each([&](auto i, auto ia, auto ib) { po[i] = pa[ia] + pb[ib]; });
      break;
    case ElementwiseOp::sub:
      plan.for_each([&](auto i, auto ia, auto ib) { po[i] = pa[ia] - pb[ib]; });
      break;
    case ElementwiseOp::mul:
      plan.for_each([&](auto i, auto ia, auto ib) { po[i] = pa[ia] * pb[ib]; });
      break;
    default:
      throw std::invalid_argument("not a binary elementwise op");
  }
  return Var<T>::from_op(std::move(out), {a, b}, [op, plan](Node<T>& self) {
    Node<T>& na = *self.parents[0];
    Node<T>& nb = *self.parents[1];
    const T* g = self.grad.ptr();
    T* ga = na.requires_grad ? na.grad_buffer().ptr() : nullptr;
    T* gb = nb.requires_grad ? nb.grad_buffer().ptr() : nullptr;
    const T* va = na.value.ptr();
    const T* vb = nb.value.ptr();
    plan.for_each([&](auto i, auto ia, auto ib) {
      switch (op) {
        case ElementwiseOp::add:
          if (ga) ga[ia] += g[i];
          if (gb) gb[ib] += g[i];
          break;
        case ElementwiseOp::sub:
          if (ga) ga[ia] += g[i];
          if (gb) gb[ib] -= g[i];
          break;
        default:
          if (ga) ga[ia] += g[i] * vb[ib];
          if (gb) gb[ib] += g[i] * va[ia];
          break;
      }
    });
  });
}

template <typename T, typename Fwd, typename Deriv>
Var<T> unary(const Var<T>& x, Fwd fwd, Deriv deriv) {
  Tensor<T> out(x.shape());
  const T* px = x.value().ptr();
  T* po = out.ptr();
  for (std::int64_t i = 0; i < out.size(); ++i) po[i] = fwd(px[i]);
  return Var<T>::from_op(std::move(out), {x}, [deriv](Node<T>& self) {
    Node<T>& nx = *self.parents[0];
    T* gx = nx.grad_buffer().ptr();
    const T* g = self.grad.ptr();
    const T* px = nx.value.ptr();
    const T* py = self.value.ptr();
    for (std::int64_t i = 0; i < self.value.size(); ++i) gx[i] += g[i] * deriv(px[i], py[i]);
  });
}

int normalize_axis(int axis, int rank) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw std::out_of_range("axis out of range");
  return axis;
}

std::int64_t prod(const Shape& s, int begin, int end) {
  std::int64_t n = 1;
  for (int k = begin; k < end; ++k) n *= s[static_cast<std::size_t>(k)];
  return n;
}

}  // namespace

template <typename T>
Var<T> elementwise(ElementwiseOp op, const Var<T>& a, const std::optional<Var<T>>& b) {
  switch (op) {
    case ElementwiseOp::add:
    case ElementwiseOp::sub:
    case ElementwiseOp::mul:
      if (!b) throw std::invalid_argument("binary elementwise op needs two operands");
      return binary(op, a, *b);
    case ElementwiseOp::relu:
      return relu(a);
    case ElementwiseOp::sigmoid:
      return sigmoid(a);
    case ElementwiseOp::tanh:
      return tanh(a);
  }
  throw std::invalid_argument("unknown elementwise op");
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  return binary(ElementwiseOp::add, a, b);
}
template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  return binary(ElementwiseOp::sub, a, b);
}
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  return binary(ElementwiseOp::mul, a, b);
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  return unary(
      x, [](T v) { return v > T{0} ? v : T{0}; }, [](T v, T) { return v > T{0} ? T{1} : T{0}; });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  return unary(
      x,
      [](T v) {
        if (v >= T{0}) return T{1} / (T{1} + std::exp(-v));
        const T e = std::exp(v);
        return e / (T{1} + e);
      },
      [](T, T y) { return y * (T{1} - y); });
}

template <typename T>
Var<T> tanh(const Var<T>& x) {
  return unary(
      x, [](T v) { return std::tanh(v); }, [](T, T y) { return T{1} - y * y; });
}

template <typename T>
Var<T> affine(const Var<T>& x, T scale, T shift) {
  return unary(
      x, [scale, shift](T v) { return scale * v + shift; }, [scale](T, T) { return scale; });
}

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  if (a.value().rank() != 2 || b.value().rank() != 2) {
    throw std::invalid_argument("matmul needs rank-2 operands, got " + shape_str(a.shape()) + " and " +
                                shape_str(b.shape()));
  }
  const auto m = a.shape()[0];
  const auto k = a.shape()[1];
  const auto n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw std::invalid_argument("matmul inner dimension mismatch: " + shape_str(a.shape()) + " * " +
                                shape_str(b.shape()));
  }
  Tensor<T> out(Shape{m, n});
  MatMap<T>(out.ptr(), m, n).noalias() = ConstMatMap<T>(a.value().ptr(), m, k) * ConstMatMap<T>(b.value().ptr(), k, n);
  return Var<T>::from_op(std::move(out), {a, b}, [m, k, n](Node<T>& self) {
    Node<T>& na = *self.parents[0];
    Node<T>& nb = *self.parents[1];
    ConstMatMap<T> g(self.grad.ptr(), m, n);
    if (na.requires_grad) {
      MatMap<T>(na.grad_buffer().ptr(), m, k).noalias() += g * ConstMatMap<T>(nb.value.ptr(), k, n).transpose();
    }
    if (nb.requires_grad) {
      MatMap<T>(nb.grad_buffer().ptr(), k, n).noalias() += ConstMatMap<T>(na.value.ptr(), m, k).transpose() * g;
    }
  });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  T total{0};
  for (T v : x.value().data()) total += v;
  return Var<T>::from_op(Tensor<T>::scalar(total), {x}, [](Node<T>& self) {
    const T g = self.grad[0];
    for (T& v : self.parents[0]->grad_buffer().data()) v += g;
  });
}

template <typename T>
Var<T> mean(const Var<T>& x) {
  const auto n = static_cast<T>(x.value().size());
  return affine(sum(x), T{1} / n, T{0});
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  if (numel(shape) != x.value().size()) {
    throw std::invalid_argument("cannot reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  return Var<T>::from_op(x.value().reshaped(std::move(shape)), {x}, [](Node<T>& self) {
    auto& gx = self.parents[0]->grad_buffer();
    for (std::int64_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
  });
}

template <typename T>
Var<T> narrow(const Var<T>& x, int axis, std::int64_t start, std::int64_t length) {
  const Shape& s = x.shape();
  axis = normalize_axis(axis, static_cast<int>(s.size()));
  const std::int64_t extent = s[static_cast<std::size_t>(axis)];
  if (length < 1 || start < 0 || start + length > extent) {
    throw std::out_of_range("narrow [" + std::to_string(start) + ", " + std::to_string(start + length) +
                            ") out of range for " + shape_str(s));
  }
  const std::int64_t outer = prod(s, 0, axis);
  const std::int64_t inner = prod(s, axis + 1, static_cast<int>(s.size()));
  const std::int64_t run = length * inner;
  Shape os = s;
  os[static_cast<std::size_t>(axis)] = length;
  Tensor<T> out(os);
  const T* px = x.value().ptr();
  for (std::int64_t o = 0; o < outer; ++o) {
    std::copy_n(px + (o * extent + start) * inner, run, out.ptr() + o * run);
  }
  return Var<T>::from_op(std::move(out), {x}, [outer, inner, extent, start, run](Node<T>& self) {
    T* gx = self.parents[0]->grad_buffer().ptr();
    const T* g = self.grad.ptr();
    for (std::int64_t o = 0; o < outer; ++o) {
      T* dst = gx + (o * extent + start) * inner;
      const T* src = g + o * run;
      for (std::int64_t i = 0; i < run; ++i) dst[i] += src[i];
    }
  });
}

template <typename T>
Var<T> slice(const Var<T>& x, int axis, std::int64_t index) {
  return narrow(x, axis, index, 1);
}

template <typename T>
Var<T> concat(const std::vector<Var<T>>& xs, int axis) {
  if (xs.empty()) throw std::invalid_argument("concat of an empty list");
  const Shape& s0 = xs.front().shape();
  axis = normalize_axis(axis, static_cast<int>(s0.size()));
  std::vector<std::int64_t> extents;
  std::int64_t total = 0;
  for (const auto& x : xs) {
    Shape a = x.shape();
    Shape b = s0;
    if (a.size() != b.size()) throw std::invalid_argument("concat rank mismatch");
    a[static_cast<std::size_t>(axis)] = b[static_cast<std::size_t>(axis)] = 0;
    if (a != b) throw std::invalid_argument("concat shape mismatch: " + shape_str(x.shape()) + " vs " + shape_str(s0));
    extents.push_back(x.shape()[static_cast<std::size_t>(axis)]);
    total += extents.back();
  }
  const std::int64_t outer = prod(s0, 0, axis);
  const std::int64_t inner = prod(s0, axis + 1, static_cast<int>(s0.size()));
  Shape os = s0;
  os[static_cast<std::size_t>(axis)] = total;
  Tensor<T> out(os);
  std::int64_t start = 0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const T* px = xs[k].value().ptr();
    const std::int64_t block = extents[k] * inner;
    for (std::int64_t o = 0; o < outer; ++o) {
      std::copy_n(px + o * block, block, out.ptr() + (o * total + start) * inner);
    }
    start += extents[k];
  }
  return Var<T>::from_op(std::move(out), xs, [outer, inner, total, extents](Node<T>& self) {
    std::int64_t begin = 0;
    for (std::size_t k = 0; k < extents.size(); ++k) {
      Node<T>& nk = *self.parents[k];
      const std::int64_t block = extents[k] * inner;
      if (nk.requires_grad) {
        T* gx = nk.grad_buffer().ptr();
        for (std::int64_t o = 0; o < outer; ++o) {
          const T* src = self.grad.ptr() + (o * total + begin) * inner;
          for (std::int64_t i = 0; i < block; ++i) gx[o * block + i] += src[i];
        }
      }
      begin += extents[k];
    }
  });
}

template <typename T>
Var<T> mean_axes(const Var<T>& x, int first, int last) {
  const Shape& s = x.shape();
  const int rank = static_cast<int>(s.size());
  first = normalize_axis(first, rank);
  last = normalize_axis(last, rank);
  if (first > last) throw std::invalid_argument("mean_axes needs first <= last");
  const std::int64_t outer = prod(s, 0, first);
  const std::int64_t mid = prod(s, first, last + 1);
  const std::int64_t inner = prod(s, last + 1, rank);
  Shape os(s.begin(), s.begin() + first);
  os.insert(os.end(), s.begin() + last + 1, s.end());
  if (os.empty()) os.push_back(1);
  Tensor<T> out(os);
  const T* px = x.value().ptr();
  const T scale = T{1} / static_cast<T>(mid);
  for (std::int64_t o = 0; o < outer; ++o) {
    T* dst = out.ptr() + o * inner;
    for (std::int64_t m = 0; m < mid; ++m) {
      const T* src = px + (o * mid + m) * inner;
      for (std::int64_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
    for (std::int64_t i = 0; i < inner; ++i) dst[i] *= scale;
  }
  return Var<T>::from_op(std::move(out), {x}, [outer, mid, inner, scale](Node<T>& self) {
    T* gx = self.parents[0]->grad_buffer().ptr();
    for (std::int64_t o = 0; o < outer; ++o) {
      const T* g = self.grad.ptr() + o * inner;
      for (std::int64_t m = 0; m < mid; ++m) {
        T* dst = gx + (o * mid + m) * inner;
        for (std::int64_t i = 0; i < inner; ++i) dst[i] += g[i] * scale;
      }
    }
  });
}

template <typename T>
Var<T> mse_loss(const Var<T>& pred, const Tensor<T>& target) {
  if (pred.shape() != target.shape()) {
    throw std::invalid_argument("mse_loss shape mismatch: " + shape_str(pred.shape()) + " vs " +
                                shape_str(target.shape()));
  }
  const std::int64_t n = target.size();
  T total{0};
  for (std::int64_t i = 0; i < n; ++i) {
    const T d = pred.value()[i] - target[i];
    total += d * d;
  }
  return Var<T>::from_op(Tensor<T>::scalar(total / static_cast<T>(n)), {pred}, [target, n](Node<T>& self) {
    Node<T>& np = *self.parents[0];
    T* gp = np.grad_buffer().ptr();
    const T scale = T{2} * self.grad[0] / static_cast<T>(n);
    for (std::int64_t i = 0; i < n; ++i) gp[i] += scale * (np.value[i] - target[i]);
  });
}

template <typename T>
Var<T> dense(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  if (x.value().rank() != 2 || weight.value().rank() != 2 || x.shape()[1] != weight.shape()[0]) {
    throw std::invalid_argument("dense dimension mismatch: " + shape_str(x.shape()) + " * " +
                                shape_str(weight.shape()));
  }
  if (bias.value().size() != weight.shape()[1]) {
    throw std::invalid_argument("dense bias " + shape_str(bias.shape()) + " does not match weight " +
                                shape_str(weight.shape()));
  }
  return add(matmul(x, weight), bias);
}

#define OCT4D_INSTANTIATE_OPS(T)                                                                   \
  template Var<T> elementwise(ElementwiseOp, const Var<T>&, const std::optional<Var<T>>&);         \
  template Var<T> add(const Var<T>&, const Var<T>&);                                                \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                                \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                                \
  template Var<T> relu(const Var<T>&);                                                              \
  template Var<T> sigmoid(const Var<T>&);                                                           \
  template Var<T> tanh(const Var<T>&);                                                              \
  template Var<T> affine(const Var<T>&, T, T);                                                      \
  template Var<T> matmul(const Var<T>&, const Var<T>&);                                             \
  template Var<T> sum(const Var<T>&);                                                               \
  template Var<T> mean(const Var<T>&);                                                              \
  template Var<T> reshape(const Var<T>&, Shape);                                                    \
  template Var<T> slice(const Var<T>&, int, std::int64_t);                                          \
  template Var<T> narrow(const Var<T>&, int, std::int64_t, std::int64_t);                           \
  template Var<T> concat(const std::vector<Var<T>>&, int);                                          \
  template Var<T> mean_axes(const Var<T>&, int, int);                                               \
  template Var<T> mse_loss(const Var<T>&, const Tensor<T>&);                                        \
  template Var<T> dense(const Var<T>&, const Var<T>&, const Var<T>&);

OCT4D_INSTANTIATE_OPS(float)
OCT4D_INSTANTIATE_OPS(double)

}  // namespace oct4d
