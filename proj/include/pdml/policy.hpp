#pragma once

// Gaussian policies and frozen snapshots of them.
//
// A policy maps a state to a diagonal Gaussian over pre-squash actions.
// Snapshots taken over the course of a run form the historical sequence
// that mixture weighting operates on. Distribution-shift math always works
// on the pre-squash Gaussian; tanh squashing into the action box is the
// agent's business (see sac.hpp).

#include "pdml/gaussian.hpp"
#include "pdml/mlp.hpp"

namespace pdml {

struct GaussianPolicy {
  // Network mode: `net` maps state -> [mean, raw_logvar], each action_dim
  // wide. The raw log-variance is squashed into [lv_lo, lv_hi] smoothly so
  // variances stay inside [var_floor, var_ceiling] with usable gradients.
  Mlp net;
  int action_dim = 0;
  double lv_lo = std::log(1e-6);
  double lv_hi = std::log(1e2);

  // Constant mode: a state-independent Gaussian. Used for the synthetic
  // warm-up policy that stands in for uniform-random exploration.
  bool constant = false;
  std::vector<double> const_mean, const_var;

  static GaussianPolicy make_network(std::vector<int> hidden, int state_dim,
                                     int action_dim, Rng& rng) {
    GaussianPolicy p;
    p.action_dim = action_dim;
    std::vector<int> sizes;
    sizes.push_back(state_dim);
    for (int h : hidden) sizes.push_back(h);
    sizes.push_back(2 * action_dim);
    p.net = Mlp(sizes);
    p.net.init(rng);
    return p;
  }

  static GaussianPolicy make_constant(std::vector<double> mean,
                                      std::vector<double> var) {
    GaussianPolicy p;
    p.constant = true;
    p.action_dim = static_cast<int>(mean.size());
    p.const_mean = std::move(mean);
    p.const_var = std::move(var);
    DiagonalGaussian{p.const_mean, p.const_var}.validate();
    return p;
  }

  double logvar_from_raw(double raw) const {
    return lv_lo + (lv_hi - lv_lo) * sigmoid(raw);
  }

  DiagonalGaussian distribution(std::span<const double> state) const {
    if (constant) return DiagonalGaussian{const_mean, const_var};
    std::vector<double> out = net.forward(state);
    DiagonalGaussian g;
    g.mean.assign(out.begin(), out.begin() + action_dim);
    g.var.resize(action_dim);
    for (int d = 0; d < action_dim; ++d)
      g.var[d] = std::exp(logvar_from_raw(out[action_dim + d]));
    check_finite(g.mean, "GaussianPolicy mean");
    check_finite(g.var, "GaussianPolicy variance");
    return g;
  }
};

struct PolicySnapshot {
  int id = 0;
  long long created_at_env_step = 0;
  GaussianPolicy policy;
};

}  // namespace pdml
