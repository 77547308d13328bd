#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace oct4d {

double mae(std::span<const double> pred, std::span<const double> target);
// MAE divided by the population standard deviation of the target.
double rmae(std::span<const double> pred, std::span<const double> target);
double pcc(std::span<const double> pred, std::span<const double> target);
// Linear interpolation between closest ranks: position q/100 * (n - 1) in the sorted data.
double percentile(std::span<const double> values, double q);

struct WilcoxonResult {
  double statistic = 0.0;  // W+ (sum of ranks of positive differences)
  double p_value = 1.0;
  bool significant = false;
  int n = 0;               // pairs left after dropping zero differences
  bool exact = false;
};

// Two-sided signed-rank test on a - b. Zero differences are dropped and ties
// share their mean rank. Exact null distribution for n <= 25, normal
// approximation with continuity correction (and tie-corrected variance)
// above. With every difference zero the result is p = 1, not significant.
WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b, double alpha = 0.05);

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
};
// Least squares of pred on target.
LinearFit linreg_r2(std::span<const double> pred, std::span<const double> target);

struct MetricsReport {
  std::string run_id;
  std::string arch;
  std::string representation;
  int p = 0;
  int f = 0;
  double mae = 0.0;
  double p25 = 0.0;
  double p75 = 0.0;
  double rmae = 0.0;
  double pcc = 0.0;
  double r2 = 0.0;
  std::size_t n = 0;
  std::optional<double> wilcoxon_p;
};

MetricsReport compute_report(std::span<const double> pred, std::span<const double> target);
std::vector<double> abs_errors(std::span<const double> pred, std::span<const double> target);

// Twelve columns; a thirteenth wilcoxon_p column when `with_wilcoxon`.
std::string report_csv_header(bool with_wilcoxon = false);
std::string report_csv_row(const MetricsReport& r, bool with_wilcoxon = false);

}  // namespace oct4d
