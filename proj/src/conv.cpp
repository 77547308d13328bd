#include "oct4d/conv.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <array>
#include <stdexcept>
#include <string>

namespace oct4d {

void ConvSpec::validate() const {
  if (kernel.size() < 2 || kernel.size() > 4) {
    throw std::invalid_argument("convolution supports 2 to 4 axes, got " + std::to_string(kernel.size()));
  }
  for (int k : kernel) {
    if (k < 1 || k % 2 == 0) throw std::invalid_argument("kernel extents must be positive and odd");
  }
  if (in_channels < 1 || out_channels < 1) throw std::invalid_argument("channel counts must be positive");
  if (stride != 1 && stride != 2) throw std::invalid_argument("spatial stride must be 1 or 2");
  if (kernel.size() == 4 && !leading_temporal) {
    throw std::invalid_argument("4-axis convolution needs a leading temporal axis");
  }
}

Shape ConvSpec::weight_shape() const {
  Shape s(kernel.begin(), kernel.end());
  s.push_back(in_channels);
  s.push_back(out_channels);
  return s;
}

std::int64_t ConvSpec::weight_count() const { return numel(weight_shape()); }

ConvSpec ConvSpec::full4d(int k, std::int64_t cin, std::int64_t cout, int stride) {
  return ConvSpec{{k, k, k, k}, cin, cout, stride, true};
}

SamePadding same_padding(std::int64_t in, int kernel, int stride) {
  SamePadding p;
  p.out = (in + stride - 1) / stride;
  const std::int64_t total = std::max<std::int64_t>((p.out - 1) * stride + kernel - in, 0);
  p.before = total / 2;
  return p;
}

namespace {

void check_operands(const Shape& xs, const Shape& ws, const ConvSpec& spec) {
  spec.validate();
  if (ws != spec.weight_shape()) {
    throw std::invalid_argument("kernel shape " + shape_str(ws) + " does not match spec " +
                                shape_str(spec.weight_shape()));
  }
  if (static_cast<int>(xs.size()) != spec.axes() + 2) {
    throw std::invalid_argument("input " + shape_str(xs) + " has wrong rank for a " + std::to_string(spec.axes()) +
                                "-axis convolution");
  }
  if (xs.back() != spec.in_channels) {
    throw std::invalid_argument("channel mismatch: input " + shape_str(xs) + " vs kernel " + shape_str(ws));
  }
}

int axis_stride(const ConvSpec& spec, int axis) {
  return (axis == 0 && spec.leading_temporal) ? 1 : spec.stride;
}

// ---- canonical (batch, time, h, w, d, channel) geometry ---------------------

struct Geometry {
  std::int64_t batch = 1;
  std::array<std::int64_t, 4> in{};   // t, h, w, d
  std::array<std::int64_t, 4> out{};  // t, oh, ow, od
  std::array<int, 4> k{};
  std::array<std::int64_t, 4> pad{};
  int stride = 1;
  std::int64_t cin = 1;
  std::int64_t cout = 1;

  std::int64_t in_frame() const { return in[1] * in[2] * in[3] * cin; }
  std::int64_t out_rows() const { return out[1] * out[2] * out[3]; }
  std::int64_t out_frame() const { return out_rows() * cout; }
  std::int64_t col_cols() const { return static_cast<std::int64_t>(k[1]) * k[2] * k[3] * cin; }
  bool pointwise() const { return k[1] == 1 && k[2] == 1 && k[3] == 1 && stride == 1; }
};

Geometry make_geometry(const Shape& xs, const ConvSpec& spec) {
  Geometry g;
  g.batch = xs.front();
  g.cin = spec.in_channels;
  g.cout = spec.out_channels;
  g.stride = spec.stride;
  g.in = {1, 1, 1, 1};
  g.k = {1, 1, 1, 1};
  const int n = spec.axes();
  // Leading temporal axes map onto slot 0, spatial axes onto slots 1..3.
  const int first_slot = spec.leading_temporal ? 0 : 1;
  for (int a = 0; a < n; ++a) {
    g.in[static_cast<std::size_t>(first_slot + a)] = xs[static_cast<std::size_t>(a + 1)];
    g.k[static_cast<std::size_t>(first_slot + a)] = spec.kernel[static_cast<std::size_t>(a)];
  }
  for (std::size_t s = 0; s < 4; ++s) {
    const auto p = same_padding(g.in[s], g.k[s], s == 0 ? 1 : g.stride);
    g.out[s] = p.out;
    g.pad[s] = p.before;
  }
  return g;
}

Shape output_shape(const Shape& xs, const ConvSpec& spec) {
  Shape os = xs;
  for (int a = 0; a < spec.axes(); ++a) {
    const auto idx = static_cast<std::size_t>(a + 1);
    os[idx] = same_padding(xs[idx], spec.kernel[static_cast<std::size_t>(a)], axis_stride(spec, a)).out;
  }
  os.back() = spec.out_channels;
  return os;
}

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

// Unfolds one input frame [h, w, d, cin] into rows of receptive fields. For
// fixed (oh, ow, od, a, b) the k_d * cin entries of a row are contiguous in
// the input whenever the depth window lies inside the volume.
template <typename T>
void im2col(const Geometry& g, const T* frame, T* col) {
  const std::int64_t cin = g.cin;
  const std::int64_t run = g.k[3] * cin;
  for (std::int64_t oh = 0; oh < g.out[1]; ++oh) {
    for (std::int64_t ow = 0; ow < g.out[2]; ++ow) {
      for (std::int64_t od = 0; od < g.out[3]; ++od) {
        const std::int64_t id0 = od * g.stride - g.pad[3];
        const bool depth_inside = id0 >= 0 && id0 + g.k[3] <= g.in[3];
        for (int a = 0; a < g.k[1]; ++a) {
          const std::int64_t ih = oh * g.stride - g.pad[1] + a;
          for (int b = 0; b < g.k[2]; ++b, col += run) {
            const std::int64_t iw = ow * g.stride - g.pad[2] + b;
            if (ih < 0 || ih >= g.in[1] || iw < 0 || iw >= g.in[2]) {
              std::fill_n(col, run, T{0});
              continue;
            }
            const T* src = frame + (ih * g.in[2] + iw) * g.in[3] * cin;
            if (depth_inside) {
              std::copy_n(src + id0 * cin, run, col);
              continue;
            }
            for (int c = 0; c < g.k[3]; ++c) {
              const std::int64_t id = id0 + c;
              if (id < 0 || id >= g.in[3]) {
                std::fill_n(col + c * cin, cin, T{0});
              } else {
                std::copy_n(src + id * cin, cin, col + c * cin);
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const Geometry& g, const T* col, T* frame) {
  const std::int64_t cin = g.cin;
  const std::int64_t run = g.k[3] * cin;
  for (std::int64_t oh = 0; oh < g.out[1]; ++oh) {
    for (std::int64_t ow = 0; ow < g.out[2]; ++ow) {
      for (std::int64_t od = 0; od < g.out[3]; ++od) {
        const std::int64_t id0 = od * g.stride - g.pad[3];
        for (int a = 0; a < g.k[1]; ++a) {
          const std::int64_t ih = oh * g.stride - g.pad[1] + a;
          for (int b = 0; b < g.k[2]; ++b, col += run) {
            const std::int64_t iw = ow * g.stride - g.pad[2] + b;
            if (ih < 0 || ih >= g.in[1] || iw < 0 || iw >= g.in[2]) continue;
            T* dst = frame + (ih * g.in[2] + iw) * g.in[3] * cin;
            const std::int64_t c_lo = std::max<std::int64_t>(0, -id0);
            const std::int64_t c_hi = std::min<std::int64_t>(g.k[3], g.in[3] - id0);
            for (std::int64_t e = c_lo * cin; e < c_hi * cin; ++e) dst[id0 * cin + e] += col[e];
          }
        }
      }
    }
  }
}

// Output frame j receives kernel slice i applied to input frame j + i - pad,
// so input frame t feeds output frames t - i + pad.
template <typename Fn>
void for_each_tap(const Geometry& g, std::int64_t t_in, Fn&& fn) {
  for (int i = 0; i < g.k[0]; ++i) {
    const std::int64_t j = t_in - i + g.pad[0];
    if (j >= 0 && j < g.out[0]) fn(i, j);
  }
}

template <typename T>
Tensor<T> conv_forward(const Geometry& g, const T* x, const T* w, Shape out_shape) {
  Tensor<T> out(std::move(out_shape));
  const std::int64_t rows = g.out_rows();
  const std::int64_t kc = g.col_cols();
  const std::int64_t slice = kc * g.cout;
  std::vector<T> buffer(g.pointwise() ? 0 : static_cast<std::size_t>(rows * kc));
  for (std::int64_t b = 0; b < g.batch; ++b) {
    for (std::int64_t t = 0; t < g.in[0]; ++t) {
      const T* frame = x + (b * g.in[0] + t) * g.in_frame();
      const T* col = frame;
      if (!g.pointwise()) {
        im2col(g, frame, buffer.data());
        col = buffer.data();
      }
      ConstMatMap<T> cols(col, rows, kc);
      for_each_tap(g, t, [&](int i, std::int64_t j) {
        MatMap<T> dst(out.ptr() + (b * g.out[0] + j) * g.out_frame(), rows, g.cout);
        dst.noalias() += cols * ConstMatMap<T>(w + i * slice, kc, g.cout);
      });
    }
  }
  return out;
}

template <typename T>
void conv_backward(const Geometry& g, Node<T>& self) {
  Node<T>& nx = *self.parents[0];
  Node<T>& nw = *self.parents[1];
  const T* x = nx.value.ptr();
  const T* w = nw.value.ptr();
  const T* grad = self.grad.ptr();
  T* gx = nx.requires_grad ? nx.grad_buffer().ptr() : nullptr;
  T* gw = nw.requires_grad ? nw.grad_buffer().ptr() : nullptr;

  const std::int64_t rows = g.out_rows();
  const std::int64_t kc = g.col_cols();
  const std::int64_t slice = kc * g.cout;
  std::vector<T> buffer(g.pointwise() ? 0 : static_cast<std::size_t>(rows * kc));
  std::vector<T> dcol_buffer(gx && !g.pointwise() ? static_cast<std::size_t>(rows * kc) : 0);
  for (std::int64_t b = 0; b < g.batch; ++b) {
    for (std::int64_t t = 0; t < g.in[0]; ++t) {
      const std::int64_t frame_offset = (b * g.in[0] + t) * g.in_frame();
      const T* frame = x + frame_offset;
      const T* col = frame;
      if (gw && !g.pointwise()) {
        im2col(g, frame, buffer.data());
        col = buffer.data();
      }
      T* dcol = nullptr;
      if (gx) {
        if (g.pointwise()) {
          dcol = gx + frame_offset;
        } else {
          std::fill(dcol_buffer.begin(), dcol_buffer.end(), T{0});
          dcol = dcol_buffer.data();
        }
      }
      for_each_tap(g, t, [&](int i, std::int64_t j) {
        ConstMatMap<T> go(grad + (b * g.out[0] + j) * g.out_frame(), rows, g.cout);
        if (gw) MatMap<T>(gw + i * slice, kc, g.cout).noalias() += ConstMatMap<T>(col, rows, kc).transpose() * go;
        if (gx) MatMap<T>(dcol, rows, kc).noalias() += go * ConstMatMap<T>(w + i * slice, kc, g.cout).transpose();
      });
      if (gx && !g.pointwise()) col2im(g, dcol, gx + frame_offset);
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> conv_nd_reference(const Tensor<T>& x, const Tensor<T>& weight, const ConvSpec& spec) {
  check_operands(x.shape(), weight.shape(), spec);
  const int n = spec.axes();
  const Shape& xs = x.shape();
  const Shape os = output_shape(xs, spec);
  const std::int64_t cin = spec.in_channels;
  const std::int64_t cout = spec.out_channels;

  std::vector<std::int64_t> in_ext(static_cast<std::size_t>(n));
  std::vector<std::int64_t> out_ext(static_cast<std::size_t>(n));
  std::vector<std::int64_t> pad(static_cast<std::size_t>(n));
  std::vector<int> stride(static_cast<std::size_t>(n));
  for (int a = 0; a < n; ++a) {
    const auto s = static_cast<std::size_t>(a);
    in_ext[s] = xs[s + 1];
    stride[s] = axis_stride(spec, a);
    const auto p = same_padding(in_ext[s], spec.kernel[s], stride[s]);
    out_ext[s] = p.out;
    pad[s] = p.before;
  }

  Tensor<T> out(os);
  std::vector<std::int64_t> o(static_cast<std::size_t>(n), 0);
  std::vector<std::int64_t> k(static_cast<std::size_t>(n), 0);
  const std::int64_t out_points = numel(Shape(out_ext.begin(), out_ext.end()));
  const std::int64_t taps = numel(Shape(spec.kernel.begin(), spec.kernel.end()));
  for (std::int64_t b = 0; b < xs[0]; ++b) {
    for (std::int64_t op = 0; op < out_points; ++op) {
      // Decode output coordinate.
      std::int64_t rem = op;
      for (int a = n - 1; a >= 0; --a) {
        o[static_cast<std::size_t>(a)] = rem % out_ext[static_cast<std::size_t>(a)];
        rem /= out_ext[static_cast<std::size_t>(a)];
      }
      for (std::int64_t co = 0; co < cout; ++co) {
        T acc{0};
        for (std::int64_t kp = 0; kp < taps; ++kp) {
          std::int64_t krem = kp;
          for (int a = n - 1; a >= 0; --a) {
            k[static_cast<std::size_t>(a)] = krem % spec.kernel[static_cast<std::size_t>(a)];
            krem /= spec.kernel[static_cast<std::size_t>(a)];
          }
          std::int64_t in_index = b;
          bool inside = true;
          for (int a = 0; a < n; ++a) {
            const auto s = static_cast<std::size_t>(a);
            const std::int64_t pos = o[s] * stride[s] - pad[s] + k[s];
            if (pos < 0 || pos >= in_ext[s]) {
              inside = false;
              break;
            }
            in_index = in_index * in_ext[s] + pos;
          }
          if (!inside) continue;
          for (std::int64_t ci = 0; ci < cin; ++ci) {
            acc += weight[(kp * cin + ci) * cout + co] * x[in_index * cin + ci];
          }
        }
        out[(b * out_points + op) * cout + co] = acc;
      }
    }
  }
  return out;
}

template <typename T>
Var<T> conv(const Var<T>& x, const Var<T>& weight, const ConvSpec& spec) {
  check_operands(x.shape(), weight.shape(), spec);
  const Geometry g = make_geometry(x.shape(), spec);
  Tensor<T> out = conv_forward(g, x.value().ptr(), weight.value().ptr(), output_shape(x.shape(), spec));
  return Var<T>::from_op(std::move(out), {x, weight}, [g](Node<T>& self) { conv_backward(g, self); });
}

template <typename T>
Var<T> conv4d_via_3d(const Var<T>& x, const Var<T>& weight, int stride) {
  const Shape& ws = weight.shape();
  if (ws.size() != 6) throw std::invalid_argument("4D kernel must be rank 6, got " + shape_str(ws));
  ConvSpec spec{{static_cast<int>(ws[0]), static_cast<int>(ws[1]), static_cast<int>(ws[2]), static_cast<int>(ws[3])},
                ws[4], ws[5], stride, true};
  return conv(x, weight, spec);
}

template <typename T>
Var<T> conv3d(const Var<T>& x, const Var<T>& weight, int stride) {
  const Shape& ws = weight.shape();
  if (ws.size() != 5) throw std::invalid_argument("3D kernel must be rank 5, got " + shape_str(ws));
  ConvSpec spec{{static_cast<int>(ws[0]), static_cast<int>(ws[1]), static_cast<int>(ws[2])}, ws[3], ws[4], stride, false};
  return conv(x, weight, spec);
}

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, int stride) {
  const Shape& ws = weight.shape();
  if (ws.size() != 4) throw std::invalid_argument("2D kernel must be rank 4, got " + shape_str(ws));
  ConvSpec spec{{static_cast<int>(ws[0]), static_cast<int>(ws[1])}, ws[2], ws[3], stride, false};
  return conv(x, weight, spec);
}

template <typename T>
Var<T> factorized_conv(const Var<T>& x, const Var<T>& spatial, const Var<T>& temporal, int stride) {
  const Shape& ss = spatial.shape();
  const Shape& ts = temporal.shape();
  if (ss.size() != ts.size() || ss.size() < 4) {
    throw std::invalid_argument("factorized kernels " + shape_str(ss) + " and " + shape_str(ts) + " do not pair up");
  }
  const std::size_t n = ss.size() - 2;
  if (ss[0] != 1) throw std::invalid_argument("spatial kernel must have temporal extent 1, got " + shape_str(ss));
  for (std::size_t a = 1; a < n; ++a) {
    if (ts[a] != 1) throw std::invalid_argument("temporal kernel must have spatial extent 1, got " + shape_str(ts));
  }
  ConvSpec s_spec;
  ConvSpec t_spec;
  for (std::size_t a = 0; a < n; ++a) {
    s_spec.kernel.push_back(static_cast<int>(ss[a]));
    t_spec.kernel.push_back(static_cast<int>(ts[a]));
  }
  s_spec.in_channels = ss[n];
  s_spec.out_channels = ss[n + 1];
  s_spec.stride = stride;
  s_spec.leading_temporal = true;
  t_spec.in_channels = ts[n];
  t_spec.out_channels = ts[n + 1];
  t_spec.stride = 1;
  t_spec.leading_temporal = true;
  return conv(conv(x, spatial, s_spec), temporal, t_spec);
}

#define OCT4D_INSTANTIATE_CONV(T)                                                          \
  template Tensor<T> conv_nd_reference(const Tensor<T>&, const Tensor<T>&, const ConvSpec&); \
  template Var<T> conv(const Var<T>&, const Var<T>&, const ConvSpec&);                      \
  template Var<T> conv4d_via_3d(const Var<T>&, const Var<T>&, int);                         \
  template Var<T> conv3d(const Var<T>&, const Var<T>&, int);                                \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, int);                                \
  template Var<T> factorized_conv(const Var<T>&, const Var<T>&, const Var<T>&, int);

OCT4D_INSTANTIATE_CONV(float)
OCT4D_INSTANTIATE_CONV(double)

}  // namespace oct4d
