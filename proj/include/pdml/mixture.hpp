#pragma once

// Mixture weighting over the historical policy sequence.
//
// The idea: transitions generated by policies close to the current one
// should dominate dynamics-model training. Closeness is an average
// total-variation bound over a set of evaluation states; weights are
// inverse to that distance, and the current policy always receives the
// largest weight via a two-branch rule.

#include "pdml/policy.hpp"

namespace pdml {

// Average TV upper bound between the current and one historical policy
// over a set of evaluation states.
inline double estimate_policy_shift(
    const GaussianPolicy& current, const GaussianPolicy& historical,
    const std::vector<std::vector<double>>& eval_states,
    ShiftFormula formula = ShiftFormula::kPinsker) {
  require(!eval_states.empty(), "estimate_policy_shift: eval_states empty");
  double acc = 0.0;
  for (std::size_t n = 0; n < eval_states.size(); ++n) {
    try {
      DiagonalGaussian c = current.distribution(eval_states[n]);
      DiagonalGaussian h = historical.distribution(eval_states[n]);
      acc += policy_shift_bound(c, h, formula);
    } catch (const std::runtime_error& e) {
      throw std::runtime_error("estimate_policy_shift: state " +
                               std::to_string(n) + ": " + e.what());
    }
  }
  return acc / static_cast<double>(eval_states.size());
}

inline double estimate_policy_shift(
    const PolicySnapshot& current, const PolicySnapshot& historical,
    const std::vector<std::vector<double>>& eval_states,
    ShiftFormula formula = ShiftFormula::kPinsker) {
  return estimate_policy_shift(current.policy, historical.policy, eval_states,
                               formula);
}

// Inverse-shift weights for the k-1 historical policies, normalized to
// sum 1. Shifts are floored so that duplicate policies (shift 0) stay
// finite; the floor is invisible for any genuinely distinct pair.
inline std::vector<double> compute_historical_weights(
    const std::vector<double>& shifts, double xi_floor = 1e-6) {
  require(!shifts.empty(), "compute_historical_weights: empty shift vector");
  require(xi_floor > 0.0, "compute_historical_weights: xi_floor must be positive");
  std::vector<double> w(shifts.size());
  double total = 0.0;
  for (std::size_t i = 0; i < shifts.size(); ++i) {
    require(shifts[i] >= 0.0 && std::isfinite(shifts[i]),
            "compute_historical_weights: shifts must be finite and >= 0");
    w[i] = 1.0 / std::max(shifts[i], xi_floor);
    total += w[i];
  }
  for (double& x : w) x /= total;
  return w;
}

// Two-branch current-policy weight: alpha * (historical mass) unless some
// historical weight already exceeds that, in which case match the maximum.
// Either way the current policy ties or beats every historical weight.
inline double compute_current_weight(const std::vector<double>& historical_weights,
                                     double alpha) {
  require(alpha > 0.0, "compute_current_weight: alpha must be positive");
  if (historical_weights.empty()) return 1.0;
  double sum = 0.0, mx = 0.0;
  for (double w : historical_weights) {
    require(w >= 0.0, "compute_current_weight: weights must be >= 0");
    sum += w;
    mx = std::max(mx, w);
  }
  return std::max(alpha * sum, mx);
}

struct PolicyMixture {
  std::vector<PolicySnapshot> snapshots;  // oldest first; last = current
  std::vector<double> weights;            // same length, sums to 1
  std::vector<double> shift_cache;        // last computed shift per snapshot
  double alpha = 0.02 / 0.98;
  double xi_floor = 1e-6;
  ShiftFormula shift_formula = ShiftFormula::kPinsker;

  int size() const { return static_cast<int>(snapshots.size()); }

  void append(PolicySnapshot snap) {
    require(snapshots.empty() || snap.id == snapshots.back().id + 1,
            "PolicyMixture::append: ids must be consecutive");
    snapshots.push_back(std::move(snap));
    weights.assign(snapshots.size(), 1.0 / static_cast<double>(snapshots.size()));
    shift_cache.assign(snapshots.size(), 0.0);
  }
};

// Recompute shifts of every historical snapshot against the current one
// and refresh the weight vector (inverse-shift historical weights, then
// the current-policy rule, then one final normalization).
inline void adjust_mixture(PolicyMixture& mixture,
                           const std::vector<std::vector<double>>& eval_states) {
  require(mixture.size() >= 1, "adjust_mixture: mixture is empty");
  int k = mixture.size();
  mixture.shift_cache.assign(k, 0.0);
  if (k == 1) {
    mixture.weights.assign(1, 1.0);
    return;
  }
  const PolicySnapshot& current = mixture.snapshots.back();
  std::vector<double> shifts(k - 1);
  for (int i = 0; i < k - 1; ++i) {
    shifts[i] = estimate_policy_shift(current, mixture.snapshots[i], eval_states,
                                      mixture.shift_formula);
    mixture.shift_cache[i] = shifts[i];
  }
  std::vector<double> hist = compute_historical_weights(shifts, mixture.xi_floor);
  double cur = compute_current_weight(hist, mixture.alpha);
  mixture.weights.resize(k);
  double total = cur;
  for (int i = 0; i < k - 1; ++i) total += hist[i];
  for (int i = 0; i < k - 1; ++i) mixture.weights[i] = hist[i] / total;
  mixture.weights[k - 1] = cur / total;
}

// Baseline weighting: historical weight decays geometrically with age
// (newest historical policy largest), current policy weighted by the same
// two-branch rule. decay_rate = 1 degenerates to uniform historical
// weights exactly.
inline std::vector<double> exponential_decay_weights(int num_policies,
                                                     double decay_rate,
                                                     double alpha) {
  require(num_policies >= 1, "exponential_decay_weights: need >= 1 policy");
  require(decay_rate > 0.0 && decay_rate <= 1.0,
          "exponential_decay_weights: decay_rate must be in (0, 1]");
  if (num_policies == 1) return {1.0};
  int h = num_policies - 1;
  std::vector<double> hist(h);
  double total = 0.0;
  for (int i = 0; i < h; ++i) {
    hist[i] = std::pow(decay_rate, static_cast<double>(h - 1 - i));
    total += hist[i];
  }
  for (double& w : hist) w /= total;
  double cur = compute_current_weight(hist, alpha);
  std::vector<double> out(num_policies);
  double norm = cur;
  for (int i = 0; i < h; ++i) norm += hist[i];
  for (int i = 0; i < h; ++i) out[i] = hist[i] / norm;
  out[num_policies - 1] = cur / norm;
  return out;
}

}  // namespace pdml
