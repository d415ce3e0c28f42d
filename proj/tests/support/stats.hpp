#pragma once

// Test-side statistics helpers: chi-square goodness-of-fit p-values via the
// regularized incomplete gamma function. Independent of the library under
// test.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace teststats {

inline double gammln(double x) {
  static const double cof[6] = {76.18009172947146,  -86.50532032941677, 24.01409824083091,
                                -1.231739572450155, 0.1208650973866179e-2, -0.5395239384953e-5};
  double y = x, tmp = x + 5.5;
  tmp -= (x + 0.5) * std::log(tmp);
  double ser = 1.000000000190015;
  for (double c : cof) ser += c / ++y;
  return -tmp + std::log(2.5066282746310005 * ser / x);
}

/// Lower regularized incomplete gamma P(a,x) by series expansion.
inline double gamma_p_series(double a, double x) {
  double ap = a, sum = 1.0 / a, del = sum;
  for (int i = 0; i < 500; ++i) {
    ap += 1.0;
    del *= x / ap;
    sum += del;
    if (std::fabs(del) < std::fabs(sum) * 1e-14) break;
  }
  return sum * std::exp(-x + a * std::log(x) - gammln(a));
}

/// Upper regularized incomplete gamma Q(a,x) by continued fraction.
inline double gamma_q_cf(double a, double x) {
  const double tiny = 1e-300;
  double b = x + 1.0 - a, c = 1.0 / tiny, d = 1.0 / b, h = d;
  for (int i = 1; i <= 500; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::fabs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < 1e-14) break;
  }
  return std::exp(-x + a * std::log(x) - gammln(a)) * h;
}

inline double gamma_q(double a, double x) {
  if (x < 0.0 || a <= 0.0) throw std::invalid_argument("gamma_q: bad arguments");
  if (x == 0.0) return 1.0;
  return x < a + 1.0 ? 1.0 - gamma_p_series(a, x) : gamma_q_cf(a, x);
}

inline double chi2_pvalue(double chi2, int dof) {
  if (dof < 1) throw std::invalid_argument("chi2_pvalue: dof < 1");
  return gamma_q(dof / 2.0, chi2 / 2.0);
}

/// Goodness-of-fit p-value of observed counts against expected proportions.
/// Bins with expected count < 5 are pooled (and zero-expectation bins
/// dropped) before the statistic is formed.
inline double chi2_gof_pvalue(const std::vector<std::int64_t>& observed,
                              const std::vector<double>& proportions) {
  if (observed.size() != proportions.size())
    throw std::invalid_argument("chi2_gof: size mismatch");
  double total = 0;
  for (auto o : observed) total += static_cast<double>(o);
  std::vector<double> exp_counts;
  std::vector<double> obs_counts;
  double pooled_exp = 0, pooled_obs = 0;
  for (size_t i = 0; i < observed.size(); ++i) {
    const double e = proportions[i] * total;
    if (e <= 0.0) continue;
    if (e < 5.0) {
      pooled_exp += e;
      pooled_obs += static_cast<double>(observed[i]);
    } else {
      exp_counts.push_back(e);
      obs_counts.push_back(static_cast<double>(observed[i]));
    }
  }
  if (pooled_exp > 0.0) {
    exp_counts.push_back(pooled_exp);
    obs_counts.push_back(pooled_obs);
  }
  if (exp_counts.size() < 2) return 1.0;  // nothing to test against
  double chi2 = 0;
  for (size_t i = 0; i < exp_counts.size(); ++i) {
    const double d = obs_counts[i] - exp_counts[i];
    chi2 += d * d / exp_counts[i];
  }
  return chi2_pvalue(chi2, static_cast<int>(exp_counts.size()) - 1);
}

}  // namespace teststats
