#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "oct4d/metrics.hpp"

using namespace oct4d;

namespace {

std::vector<double> rand_vec(std::size_t n, std::mt19937_64& g, double lo = -50, double hi = 50) {
  return oracle::random_vector<double>(n, g, lo, hi);
}

int count_fields(const std::string& line) { return static_cast<int>(std::count(line.begin(), line.end(), ',')) + 1; }

}  // namespace

TEST_SUITE("metrics") {
  TEST_CASE("mae and rmae") {
    const std::vector<double> t{1, 2, 3};
    CHECK(mae(t, t) == 0.0);
    CHECK(mae(std::vector<double>{1, 3}, std::vector<double>{0, 0}) == 2.0);
    // target std 100 (population), mae 10
    const std::vector<double> tgt{-100, 100};
    const std::vector<double> prd{-90, 110};
    CHECK(rmae(prd, tgt) == doctest::Approx(0.1));
    std::vector<double> prd3, tgt3;
    for (std::size_t i = 0; i < 2; ++i) {
      prd3.push_back(3 * prd[i]);
      tgt3.push_back(3 * tgt[i]);
    }
    CHECK(rmae(prd3, tgt3) == doctest::Approx(rmae(prd, tgt)));
    CHECK_THROWS(rmae(t, std::vector<double>{5, 5, 5}));
    CHECK_THROWS(mae(t, std::vector<double>{1, 2}));
    CHECK_THROWS(mae(std::vector<double>{}, std::vector<double>{}));
  }

  TEST_CASE("pcc") {
    std::mt19937_64 g(1);
    const auto t = rand_vec(40, g);
    std::vector<double> aff, neg;
    for (double v : t) {
      aff.push_back(2 * v + 5);
      neg.push_back(-v);
    }
    CHECK(pcc(aff, t) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(pcc(neg, t) == doctest::Approx(-1.0).epsilon(1e-14));
    CHECK_THROWS(pcc(std::vector<double>(40, 1.0), t));
  }

  TEST_CASE("percentiles") {
    std::vector<double> v;
    for (int i = 0; i <= 100; ++i) v.push_back(100 - i);
    CHECK(percentile(v, 25) == 25.0);
    CHECK(percentile(v, 75) == 75.0);
    CHECK(percentile(std::vector<double>{4.5}, 25) == 4.5);
    CHECK(percentile(std::vector<double>{4.5}, 90) == 4.5);
    CHECK(percentile(std::vector<double>{1, 2}, 25) == 1.25);
    CHECK_THROWS(percentile(std::vector<double>{}, 50));
    CHECK_THROWS(percentile(v, 101));
  }

  TEST_CASE("random vectors against oracles") {
    std::mt19937_64 g(2);
    for (int rep = 0; rep < 100; ++rep) {
      const std::size_t n = 5 + static_cast<std::size_t>(rep) * 3;
      const auto p = rand_vec(n, g);
      const auto t = rand_vec(n, g);
      CHECK(mae(p, t) == doctest::Approx(oracle::mae(p, t)).epsilon(1e-9));
      CHECK(rmae(p, t) == doctest::Approx(oracle::mae(p, t) / oracle::pop_std(t)).epsilon(1e-9));
      CHECK(pcc(p, t) == doctest::Approx(oracle::pcc(p, t)).epsilon(1e-9));
      const auto e = abs_errors(p, t);
      for (double q : {0.0, 25.0, 50.0, 75.0, 100.0, 33.3}) {
        CHECK(percentile(e, q) == doctest::Approx(oracle::percentile(e, q)).epsilon(1e-9));
      }
      CHECK(percentile(e, 25) <= percentile(e, 75));
      const auto fit = linreg_r2(p, t);
      const auto want = oracle::ols(p, t);
      CHECK(fit.slope == doctest::Approx(want.slope).epsilon(1e-9));
      CHECK(fit.intercept == doctest::Approx(want.intercept).epsilon(1e-9));
      CHECK(fit.r2 == doctest::Approx(want.r2).epsilon(1e-9));
    }
  }

  TEST_CASE("affine rescaling") {
    std::mt19937_64 g(3);
    const auto p = rand_vec(30, g);
    const auto t = rand_vec(30, g);
    std::vector<double> p2, t2;
    for (std::size_t i = 0; i < 30; ++i) {
      p2.push_back(2.5 * p[i] + 7);
      t2.push_back(2.5 * t[i] + 7);
    }
    CHECK(pcc(p2, t2) == doctest::Approx(pcc(p, t)).epsilon(1e-12));
    CHECK(mae(p2, t2) == doctest::Approx(2.5 * mae(p, t)).epsilon(1e-12));
    CHECK(rmae(p2, t2) == doctest::Approx(rmae(p, t)).epsilon(1e-12));
  }

  TEST_CASE("linear regression") {
    const std::vector<double> t{1, 2, 4, 8};
    const auto id = linreg_r2(t, t);
    CHECK(id.slope == doctest::Approx(1.0));
    CHECK(id.intercept == doctest::Approx(0.0));
    CHECK(id.r2 == doctest::Approx(1.0));
    CHECK(linreg_r2(std::vector<double>(4, 3.0), t).r2 == 0.0);
    CHECK_THROWS(linreg_r2(t, std::vector<double>(4, 1.0)));
    CHECK_THROWS(linreg_r2(std::vector<double>{1}, std::vector<double>{1}));
  }

  TEST_CASE("wilcoxon edge cases") {
    const std::vector<double> a{1, 2, 3, 4};
    const auto same = wilcoxon_signed_rank(a, a);
    CHECK(same.n == 0);
    CHECK(same.p_value == 1.0);
    CHECK_FALSE(same.significant);

    std::mt19937_64 g(4);
    const auto b = rand_vec(30, g, 0, 10);
    std::vector<double> shifted;
    for (double v : b) shifted.push_back(v + 0.5);
    const auto r = wilcoxon_signed_rank(shifted, b);
    CHECK(r.n == 30);
    CHECK_FALSE(r.exact);
    CHECK(r.statistic == 465.0);
    CHECK(r.significant);
    // A common offset on both series leaves the decision alone.
    std::vector<double> b5, s5;
    for (std::size_t i = 0; i < 30; ++i) {
      b5.push_back(b[i] + 5);
      s5.push_back(shifted[i] + 5);
    }
    CHECK(wilcoxon_signed_rank(s5, b5).significant == r.significant);
    CHECK_THROWS(wilcoxon_signed_rank(a, std::vector<double>{1, 2}));
  }

  TEST_CASE("wilcoxon exact p against enumeration") {
    // Published critical value: n = 12, two-sided alpha 0.05 rejects for W <= 13.
    std::vector<double> d, zero(12, 0.0);
    for (int i = 1; i <= 12; ++i) d.push_back((i == 1 || i == 12) ? i : -i);
    const auto w13 = wilcoxon_signed_rank(d, zero);
    CHECK(w13.exact);
    CHECK(w13.statistic == 13.0);
    CHECK(w13.p_value == oracle::wilcoxon_enumerated(d, zero));
    CHECK(w13.significant);
    d[1] = 2;  // positive ranks {1, 2, 12}: W = 15
    const auto w15 = wilcoxon_signed_rank(d, zero);
    CHECK(w15.p_value == oracle::wilcoxon_enumerated(d, zero));
    CHECK_FALSE(w15.significant);

    std::mt19937_64 g(5);
    std::uniform_int_distribution<int> small(-4, 4);
    for (int rep = 0; rep < 60; ++rep) {
      const std::size_t n = 1 + static_cast<std::size_t>(rep) % 12;
      std::vector<double> a(n), b(n);
      for (std::size_t i = 0; i < n; ++i) {
        // Integer data produces ties and zero differences.
        a[i] = small(g);
        b[i] = small(g);
      }
      const auto r = wilcoxon_signed_rank(a, b);
      CHECK(r.p_value == doctest::Approx(oracle::wilcoxon_enumerated(a, b)).epsilon(1e-15));
    }
  }

  TEST_CASE("reports") {
    std::mt19937_64 g(6);
    const auto t = rand_vec(20, g, 0, 1000);
    std::vector<double> p(t);
    for (double& v : p) v += 3;
    const auto r = compute_report(p, t);
    CHECK(r.n == 20);
    CHECK(r.mae == doctest::Approx(3.0));
    CHECK(r.p25 == doctest::Approx(3.0));
    CHECK(r.pcc == doctest::Approx(1.0));
    CHECK(r.r2 == doctest::Approx(1.0));
    const auto flat = compute_report(std::vector<double>(20, 1.0), t);
    CHECK(flat.pcc == 0.0);
    CHECK(flat.r2 == 0.0);

    CHECK(report_csv_header() == "run_id,arch,representation,p,f,mae,p25,p75,rmae,pcc,r2,n");
    CHECK(count_fields(report_csv_header(true)) == 13);
    MetricsReport m = r;
    m.run_id = "a";
    m.arch = "resnet4d";
    m.representation = "4d-st";
    m.p = 6;
    CHECK(count_fields(report_csv_row(m)) == 12);
    CHECK(report_csv_row(m).rfind("a,resnet4d,4d-st,6,0,", 0) == 0);
    CHECK(report_csv_row(m, true).ends_with(",nan"));
    m.wilcoxon_p = 0.25;
    CHECK(report_csv_row(m, true).ends_with(",0.25"));
  }
}
