#pragma once

// Independent reference computations for the test suites: finite
// differences for gradients, quadrature and Monte Carlo for total
// variation distances. Deliberately primitive implementations that share
// no code with the library paths they check.

#include <cmath>
#include <functional>
#include <vector>

#include "pdml/gaussian.hpp"

namespace oracles {

// Central finite difference of f with respect to x[i].
inline double central_diff(const std::function<double()>& f,
                           std::vector<double>& x, std::size_t i,
                           double h = 1e-5) {
  double orig = x[i];
  x[i] = orig + h;
  double fp = f();
  x[i] = orig - h;
  double fm = f();
  x[i] = orig;
  return (fp - fm) / (2.0 * h);
}

inline double rel_err(double a, double b) {
  double scale = std::max({std::fabs(a), std::fabs(b), 1e-6});
  return std::fabs(a - b) / scale;
}

// Check every coordinate of an analytic gradient against central
// differences; returns the worst relative error.
inline double max_grad_rel_err(const std::function<double()>& loss,
                               std::vector<double>& params,
                               const std::vector<double>& grad,
                               double h = 1e-5) {
  double worst = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    double fd = central_diff(loss, params, i, h);
    // Ignore coordinates where both are essentially zero.
    if (std::fabs(fd) < 1e-7 && std::fabs(grad[i]) < 1e-7) continue;
    worst = std::max(worst, rel_err(fd, grad[i]));
  }
  return worst;
}

// TV distance between two 1-D Gaussians by Simpson quadrature of
// (1/2) integral |p - q|.
inline double tv_quadrature_1d(double mu_p, double var_p, double mu_q,
                               double var_q, int intervals = 20000) {
  double sd = std::sqrt(std::max(var_p, var_q));
  double lo = std::min(mu_p, mu_q) - 10.0 * sd;
  double hi = std::max(mu_p, mu_q) + 10.0 * sd;
  auto density = [](double x, double mu, double var) {
    double d = x - mu;
    return std::exp(-0.5 * d * d / var) / std::sqrt(2.0 * M_PI * var);
  };
  auto f = [&](double x) {
    return std::fabs(density(x, mu_p, var_p) - density(x, mu_q, var_q));
  };
  double h = (hi - lo) / intervals;
  double acc = f(lo) + f(hi);
  for (int i = 1; i < intervals; ++i)
    acc += f(lo + i * h) * (i % 2 == 1 ? 4.0 : 2.0);
  return 0.5 * acc * h / 3.0;
}

struct TvEstimate {
  double value = 0.0;
  double stderr_ = 0.0;
};

// Monte-Carlo TV between diagonal Gaussians of any dimension, using
// TV(P,Q) = E_{x~P} max(0, 1 - q(x)/p(x)).
inline TvEstimate tv_monte_carlo(const pdml::DiagonalGaussian& p,
                                 const pdml::DiagonalGaussian& q, int n,
                                 pdml::Rng& rng) {
  std::vector<double> x(p.dim());
  double sum = 0.0, sumsq = 0.0;
  for (int i = 0; i < n; ++i) {
    p.sample(rng, x);
    double ratio = std::exp(q.log_pdf(x) - p.log_pdf(x));
    double v = ratio < 1.0 ? 1.0 - ratio : 0.0;
    sum += v;
    sumsq += v * v;
  }
  TvEstimate e;
  e.value = sum / n;
  double var = std::max(sumsq / n - e.value * e.value, 0.0);
  e.stderr_ = std::sqrt(var / n);
  return e;
}

}  // namespace oracles
