#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <span>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/students_t.hpp>

#include "nupf/core.hpp"

namespace nupf::stats {

inline double mean(std::span<const double> x) {
  if (x.empty()) throw Error(Errc::InvalidParam, "mean of empty sample");
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

/// Unbiased sample variance.
inline double variance(std::span<const double> x) {
  if (x.size() < 2) throw Error(Errc::InvalidParam, "variance needs at least two values");
  const double m = mean(x);
  double ss = 0.0;
  for (double v : x) ss += (v - m) * (v - m);
  return ss / static_cast<double>(x.size() - 1);
}

inline double sd(std::span<const double> x) { return std::sqrt(variance(x)); }
inline double std_error(std::span<const double> x) { return sd(x) / std::sqrt(static_cast<double>(x.size())); }

inline double median(std::vector<double> x) {
  if (x.empty()) throw Error(Errc::InvalidParam, "median of empty sample");
  const auto mid = x.size() / 2;
  std::nth_element(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(mid), x.end());
  const double hi = x[mid];
  if (x.size() % 2 == 1) return hi;
  const double lo = *std::max_element(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lo + hi);
}

struct TestResult {
  double statistic = 0.0;
  double p_value = 1.0;
  double df = 0.0;
};

namespace detail {
inline double t_upper_tail(double t, double df) {
  if (std::isnan(t)) return 1.0;
  if (t == std::numeric_limits<double>::infinity()) return 0.0;
  if (t == -std::numeric_limits<double>::infinity()) return 1.0;
  return boost::math::cdf(boost::math::complement(boost::math::students_t(df), t));
}
}  // namespace detail

/// H1: E[x] > mu0.
inline TestResult one_sample_t_greater(std::span<const double> x, double mu0) {
  const double se = std_error(x);
  const double df = static_cast<double>(x.size() - 1);
  const double diff = mean(x) - mu0;
  const double t = se > 0.0 ? diff / se : (diff > 0 ? INFINITY : (diff < 0 ? -INFINITY : 0.0));
  return {t, detail::t_upper_tail(t, df), df};
}

/// Paired test, H1: E[a - b] > 0.
inline TestResult paired_t_greater(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error(Errc::DimensionMismatch, "paired test needs equal lengths");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  return one_sample_t_greater(d, 0.0);
}

/// Welch's unequal-variance test, H1: E[a] > E[b].
inline TestResult welch_t_greater(std::span<const double> a, std::span<const double> b) {
  const double va = variance(a) / static_cast<double>(a.size());
  const double vb = variance(b) / static_cast<double>(b.size());
  const double se = std::sqrt(va + vb);
  const double t = (mean(a) - mean(b)) / se;
  const double df = (va + vb) * (va + vb) /
                    (va * va / static_cast<double>(a.size() - 1) + vb * vb / static_cast<double>(b.size() - 1));
  return {t, detail::t_upper_tail(t, df), df};
}

/// Brown-Forsythe comparison of spread, H1: Var(a) < Var(b). Welch test on
/// absolute deviations from the sample medians.
inline TestResult brown_forsythe_less(std::span<const double> a, std::span<const double> b) {
  const double ma = median({a.begin(), a.end()});
  const double mb = median({b.begin(), b.end()});
  std::vector<double> za(a.size());
  std::vector<double> zb(b.size());
  for (std::size_t i = 0; i < a.size(); ++i) za[i] = std::abs(a[i] - ma);
  for (std::size_t i = 0; i < b.size(); ++i) zb[i] = std::abs(b[i] - mb);
  return welch_t_greater(zb, za);
}

/// Pearson goodness of fit.
inline TestResult chi_square_gof(std::span<const double> observed, std::span<const double> expected) {
  if (observed.size() != expected.size() || observed.size() < 2) {
    throw Error(Errc::DimensionMismatch, "chi-square needs matching bins (>= 2)");
  }
  double stat = 0.0;
  for (std::size_t i = 0; i < observed.size(); ++i) {
    const double d = observed[i] - expected[i];
    stat += d * d / expected[i];
  }
  const double df = static_cast<double>(observed.size() - 1);
  const double p = boost::math::cdf(boost::math::complement(boost::math::chi_squared(df), stat));
  return {stat, p, df};
}

/// Asymptotic Kolmogorov survival function P(K > x).
inline double kolmogorov_survival(double x) {
  if (x <= 0.0) return 1.0;
  if (x < 0.3) {
    // Small-x form: P(K <= x) = sqrt(2 pi)/x sum exp(-(2k-1)^2 pi^2 / (8 x^2)).
    const double pi = 3.14159265358979323846;
    double s = 0.0;
    for (int k = 1; k <= 50; ++k) {
      const double j = 2.0 * k - 1.0;
      s += std::exp(-j * j * pi * pi / (8.0 * x * x));
    }
    return 1.0 - std::sqrt(2.0 * pi) / x * s;
  }
  double s = 0.0;
  for (int k = 1; k <= 100; ++k) {
    const double term = std::exp(-2.0 * k * k * x * x);
    s += (k % 2 == 1 ? term : -term);
    if (term < 1e-18) break;
  }
  return std::clamp(2.0 * s, 0.0, 1.0);
}

/// Two-sample Kolmogorov-Smirnov test (asymptotic p-value with the usual
/// small-sample correction).
inline TestResult ks_two_sample(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw Error(Errc::InvalidParam, "KS test on empty sample");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  std::size_t i = 0;
  std::size_t j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double v = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= v) ++i;
    while (j < b.size() && b[j] <= v) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  const double en = std::sqrt(na * nb / (na + nb));
  return {d, kolmogorov_survival((en + 0.12 + 0.11 / en) * d), 0.0};
}

/// One-sample KS test against a continuous CDF.
inline TestResult ks_one_sample(std::vector<double> x, const std::function<double(double)>& cdf) {
  if (x.empty()) throw Error(Errc::InvalidParam, "KS test on empty sample");
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  double d = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double f = cdf(x[i]);
    d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
  }
  const double en = std::sqrt(n);
  return {d, kolmogorov_survival((en + 0.12 + 0.11 / en) * d), 0.0};
}

/// Least-squares slope of log(y) on log(x).
inline double loglog_slope(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw Error(Errc::DimensionMismatch, "loglog_slope");
  std::vector<double> lx(x.size());
  std::vector<double> ly(y.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0) || !(y[i] > 0.0)) throw Error(Errc::InvalidParam, "loglog_slope needs positive data");
    lx[i] = std::log(x[i]);
    ly[i] = std::log(y[i]);
  }
  const double mx = mean(lx);
  const double my = mean(ly);
  double sxy = 0.0;
  double sxx = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sxy += (lx[i] - mx) * (ly[i] - my);
    sxx += (lx[i] - mx) * (lx[i] - mx);
  }
  return sxy / sxx;
}

}  // namespace nupf::stats
