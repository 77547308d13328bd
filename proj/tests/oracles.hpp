#pragma once

// Straight-line reference implementations the library is checked against.
// None of these call into the library's numeric code.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

namespace oracle {

// Cross-correlation with SAME zero padding over N spatial axes.
// x: [b, a_1..a_N, cin] flattened, w: [k_1..k_N, cin, cout] flattened.
// When temporal_first is set axis 0 keeps stride 1.
template <typename T>
std::vector<T> conv_same(const std::vector<T>& x, const std::vector<std::int64_t>& in_ext, std::int64_t batch,
                         std::int64_t cin, const std::vector<T>& w, const std::vector<int>& k, std::int64_t cout,
                         int stride, bool temporal_first, std::vector<std::int64_t>* out_ext_ret = nullptr) {
  const std::size_t n = in_ext.size();
  std::vector<std::int64_t> out_ext(n), pad(n), st(n);
  for (std::size_t a = 0; a < n; ++a) {
    st[a] = (temporal_first && a == 0) ? 1 : stride;
    out_ext[a] = (in_ext[a] + st[a] - 1) / st[a];
    const std::int64_t total = std::max<std::int64_t>((out_ext[a] - 1) * st[a] + k[a] - in_ext[a], 0);
    pad[a] = total / 2;
  }
  if (out_ext_ret) *out_ext_ret = out_ext;
  std::int64_t out_sites = 1, in_sites = 1, taps = 1;
  for (std::size_t a = 0; a < n; ++a) {
    out_sites *= out_ext[a];
    in_sites *= in_ext[a];
    taps *= k[a];
  }
  std::vector<T> out(static_cast<std::size_t>(batch * out_sites * cout), T(0));
  std::vector<std::int64_t> o(n), kk(n);
  for (std::int64_t b = 0; b < batch; ++b) {
    for (std::int64_t os = 0; os < out_sites; ++os) {
      std::int64_t rem = os;
      for (std::size_t a = n; a-- > 0;) {
        o[a] = rem % out_ext[a];
        rem /= out_ext[a];
      }
      for (std::int64_t tap = 0; tap < taps; ++tap) {
        std::int64_t r2 = tap;
        for (std::size_t a = n; a-- > 0;) {
          kk[a] = r2 % k[a];
          r2 /= k[a];
        }
        std::int64_t in_site = 0;
        bool inside = true;
        for (std::size_t a = 0; a < n; ++a) {
          const std::int64_t i = o[a] * st[a] + kk[a] - pad[a];
          if (i < 0 || i >= in_ext[a]) {
            inside = false;
            break;
          }
          in_site = in_site * in_ext[a] + i;
        }
        if (!inside) continue;
        for (std::int64_t ci = 0; ci < cin; ++ci) {
          const T xv = x[static_cast<std::size_t>((b * in_sites + in_site) * cin + ci)];
          for (std::int64_t co = 0; co < cout; ++co) {
            out[static_cast<std::size_t>((b * out_sites + os) * cout + co)] +=
                xv * w[static_cast<std::size_t>((tap * cin + ci) * cout + co)];
          }
        }
      }
    }
  }
  return out;
}

template <typename T>
std::vector<T> matmul(const std::vector<T>& a, const std::vector<T>& b, std::int64_t m, std::int64_t k,
                      std::int64_t n) {
  std::vector<T> c(static_cast<std::size_t>(m * n), T(0));
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < n; ++j) {
      T acc = 0;
      for (std::int64_t l = 0; l < k; ++l) acc += a[static_cast<std::size_t>(i * k + l)] * b[static_cast<std::size_t>(l * n + j)];
      c[static_cast<std::size_t>(i * n + j)] = acc;
    }
  return c;
}

inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

// Pairwise summation.
inline double psum(const double* v, std::size_t n) {
  if (n <= 8) {
    double s = 0;
    for (std::size_t i = 0; i < n; ++i) s += v[i];
    return s;
  }
  return psum(v, n / 2) + psum(v + n / 2, n - n / 2);
}

inline double mean(const std::vector<double>& v) { return psum(v.data(), v.size()) / static_cast<double>(v.size()); }

inline double mae(const std::vector<double>& p, const std::vector<double>& t) {
  std::vector<double> e(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) e[i] = std::fabs(p[i] - t[i]);
  return mean(e);
}

inline double pop_std(const std::vector<double>& v) {
  const double m = mean(v);
  std::vector<double> d(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) d[i] = (v[i] - m) * (v[i] - m);
  return std::sqrt(mean(d));
}

inline double pcc(const std::vector<double>& p, const std::vector<double>& t) {
  const double mp = mean(p), mt = mean(t);
  std::vector<double> xy(p.size()), xx(p.size()), yy(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    xy[i] = (p[i] - mp) * (t[i] - mt);
    xx[i] = (p[i] - mp) * (p[i] - mp);
    yy[i] = (t[i] - mt) * (t[i] - mt);
  }
  return psum(xy.data(), xy.size()) / std::sqrt(psum(xx.data(), xx.size()) * psum(yy.data(), yy.size()));
}

inline double percentile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1) * q / 100.0;
  const std::size_t lo = static_cast<std::size_t>(h);
  if (lo + 1 >= v.size()) return v.back();
  return v[lo] * (1 - (h - static_cast<double>(lo))) + v[lo + 1] * (h - static_cast<double>(lo));
}

struct Ols {
  double slope, intercept, r2;
};
// Normal equations for pred = slope * target + intercept.
inline Ols ols(const std::vector<double>& pred, const std::vector<double>& target) {
  const double n = static_cast<double>(pred.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    sx += target[i];
    sy += pred[i];
    sxx += target[i] * target[i];
    sxy += target[i] * pred[i];
  }
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  const double icpt = (sy - slope * sx) / n;
  const double my = sy / n;
  double ss_res = 0, ss_tot = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double f = slope * target[i] + icpt;
    ss_res += (pred[i] - f) * (pred[i] - f);
    ss_tot += (pred[i] - my) * (pred[i] - my);
  }
  return {slope, icpt, ss_tot > 0 ? 1 - ss_res / ss_tot : 0.0};
}

// Two-sided exact signed-rank p-value by enumerating all 2^n sign patterns.
// Zero differences are dropped, tied magnitudes get mid-ranks.
inline double wilcoxon_enumerated(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> d;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) d.push_back(a[i] - b[i]);
  const std::size_t n = d.size();
  if (n == 0) return 1.0;
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n; ++i) {
    double less = 0, equal = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (std::fabs(d[j]) < std::fabs(d[i])) less += 1;
      if (std::fabs(d[j]) == std::fabs(d[i])) equal += 1;
    }
    rank[i] = less + (equal + 1) / 2.0;
  }
  double w = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (d[i] > 0) w += rank[i];
  std::uint64_t le = 0, ge = 0;
  const std::uint64_t total = std::uint64_t{1} << n;
  for (std::uint64_t mask = 0; mask < total; ++mask) {
    double s = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (mask >> i & 1) s += rank[i];
    if (s <= w + 1e-9) ++le;
    if (s >= w - 1e-9) ++ge;
  }
  return std::min(1.0, 2.0 * static_cast<double>(std::min(le, ge)) / static_cast<double>(total));
}

template <typename T>
std::vector<T> random_vector(std::size_t n, std::mt19937_64& g, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<T> v(n);
  for (auto& e : v) e = static_cast<T>(u(g));
  return v;
}

}  // namespace oracle
