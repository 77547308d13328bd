#include "oct4d/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>

namespace oct4d {

namespace {

void check_pair(std::span<const double> a, std::span<const double> b, const char* what) {
  if (a.size() != b.size()) {
    throw std::invalid_argument(std::string(what) + ": length mismatch (" + std::to_string(a.size()) + " vs " +
                                std::to_string(b.size()) + ")");
  }
  if (a.empty()) throw std::invalid_argument(std::string(what) + ": empty input");
}

double mean_of(std::span<const double> v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

}  // namespace

double mae(std::span<const double> pred, std::span<const double> target) {
  check_pair(pred, target, "mae");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) acc += std::abs(pred[i] - target[i]);
  return acc / static_cast<double>(pred.size());
}

double rmae(std::span<const double> pred, std::span<const double> target) {
  check_pair(pred, target, "rmae");
  const double m = mean_of(target);
  double var = 0.0;
  for (double t : target) var += (t - m) * (t - m);
  var /= static_cast<double>(target.size());
  if (!(var > 0)) throw std::invalid_argument("rmae: target has zero variance");
  return mae(pred, target) / std::sqrt(var);
}

double pcc(std::span<const double> pred, std::span<const double> target) {
  check_pair(pred, target, "pcc");
  const double mp = mean_of(pred);
  const double mt = mean_of(target);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double dp = pred[i] - mp;
    const double dt = target[i] - mt;
    sxy += dp * dt;
    sxx += dp * dp;
    syy += dt * dt;
  }
  if (!(sxx > 0) || !(syy > 0)) throw std::invalid_argument("pcc: zero variance");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double percentile(std::span<const double> values, double q) {
  if (values.empty()) throw std::invalid_argument("percentile of an empty series");
  if (!(q >= 0 && q <= 100)) throw std::invalid_argument("percentile q must lie in [0, 100]");
  std::vector<double> s(values.begin(), values.end());
  std::sort(s.begin(), s.end());
  const double pos = q / 100.0 * static_cast<double>(s.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, s.size() - 1);
  return s[lo] + (pos - static_cast<double>(lo)) * (s[hi] - s[lo]);
}

WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b, double alpha) {
  if (a.size() != b.size()) throw std::invalid_argument("wilcoxon: series must be paired");
  std::vector<double> d;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] != b[i]) d.push_back(a[i] - b[i]);
  }
  WilcoxonResult r;
  r.n = static_cast<int>(d.size());
  if (d.empty()) return r;

  std::vector<std::size_t> order(d.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return std::abs(d[i]) < std::abs(d[j]); });
  // Ranks doubled so mid-ranks stay integral.
  std::vector<int> rank2(d.size());
  double tie_term = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && std::abs(d[order[j + 1]]) == std::abs(d[order[i]])) ++j;
    const auto t = static_cast<double>(j - i + 1);
    tie_term += t * t * t - t;
    for (std::size_t k = i; k <= j; ++k) rank2[order[k]] = static_cast<int>(i + j + 2);
    i = j + 1;
  }
  int w2 = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d[i] > 0) w2 += rank2[i];
  }
  r.statistic = w2 / 2.0;
  const double n = r.n;

  if (r.n <= 25) {
    // Count sign assignments per doubled rank sum.
    const int total = std::accumulate(rank2.begin(), rank2.end(), 0);
    std::vector<double> count(static_cast<std::size_t>(total) + 1, 0.0);
    count[0] = 1.0;
    int reach = 0;
    for (int rk : rank2) {
      for (int s = reach; s >= 0; --s) count[static_cast<std::size_t>(s + rk)] += count[static_cast<std::size_t>(s)];
      reach += rk;
    }
    double le = 0.0, ge = 0.0;
    for (int s = 0; s <= total; ++s) {
      if (s <= w2) le += count[static_cast<std::size_t>(s)];
      if (s >= w2) ge += count[static_cast<std::size_t>(s)];
    }
    const double all = std::ldexp(1.0, r.n);
    r.p_value = std::min(1.0, 2.0 * std::min(le, ge) / all);
    r.exact = true;
  } else {
    const double mean = n * (n + 1) / 4.0;
    const double var = n * (n + 1) * (2 * n + 1) / 24.0 - tie_term / 48.0;
    const double z = (std::abs(r.statistic - mean) - 0.5) / std::sqrt(var);
    r.p_value = z <= 0 ? 1.0 : std::min(1.0, std::erfc(z / std::sqrt(2.0)));
  }
  r.significant = r.p_value < alpha;
  return r;
}

LinearFit linreg_r2(std::span<const double> pred, std::span<const double> target) {
  check_pair(pred, target, "linreg_r2");
  if (pred.size() < 2) throw std::invalid_argument("linreg_r2 needs at least 2 points");
  const double mx = mean_of(target);
  const double my = mean_of(pred);
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double dx = target[i] - mx;
    const double dy = pred[i] - my;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  if (!(sxx > 0)) throw std::invalid_argument("linreg_r2: target has zero variance");
  LinearFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  if (syy > 0) {
    double ss_res = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const double e = pred[i] - (fit.slope * target[i] + fit.intercept);
      ss_res += e * e;
    }
    fit.r2 = 1.0 - ss_res / syy;
  }
  return fit;
}

std::vector<double> abs_errors(std::span<const double> pred, std::span<const double> target) {
  check_pair(pred, target, "abs_errors");
  std::vector<double> e(pred.size());
  for (std::size_t i = 0; i < e.size(); ++i) e[i] = std::abs(pred[i] - target[i]);
  return e;
}

MetricsReport compute_report(std::span<const double> pred, std::span<const double> target) {
  MetricsReport r;
  const auto e = abs_errors(pred, target);
  r.n = e.size();
  r.mae = mae(pred, target);
  r.p25 = percentile(e, 25);
  r.p75 = percentile(e, 75);
  r.rmae = rmae(pred, target);
  // A constant prediction has no defined correlation; report 0.
  const bool flat = std::all_of(pred.begin(), pred.end(), [&](double v) { return v == pred[0]; });
  r.pcc = flat ? 0.0 : pcc(pred, target);
  r.r2 = linreg_r2(pred, target).r2;
  return r;
}

std::string report_csv_header(bool with_wilcoxon) {
  std::string h = "run_id,arch,representation,p,f,mae,p25,p75,rmae,pcc,r2,n";
  if (with_wilcoxon) h += ",wilcoxon_p";
  return h;
}

std::string report_csv_row(const MetricsReport& r, bool with_wilcoxon) {
  std::string row = r.run_id + "," + r.arch + "," + r.representation + "," + std::to_string(r.p) + "," +
                    std::to_string(r.f) + "," + fmt(r.mae) + "," + fmt(r.p25) + "," + fmt(r.p75) + "," +
                    fmt(r.rmae) + "," + fmt(r.pcc) + "," + fmt(r.r2) + "," + std::to_string(r.n);
  if (with_wilcoxon) row += "," + (r.wilcoxon_p ? fmt(*r.wilcoxon_p) : std::string("nan"));
  return row;
}

}  // namespace oct4d
