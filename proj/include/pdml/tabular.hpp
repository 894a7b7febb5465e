#pragma once

// Exact finite-MDP laboratory.
//
// Discounted occupancy measures come from a direct linear solve, so the
// three results this library leans on can be certified numerically instead
// of trusted:
//   - the visitation-gap inequality (check_lemma1): the gap between two
//     state visitation distributions is bounded by model error plus an
//     occupancy distance,
//   - the performance-gap bound (check_theorem1): real-vs-model return gap
//     of the current policy against three computable terms,
//   - the weighting proposition (check_proposition1): ordering weights
//     against shifts beats uniform weights on the mixture-shift term.
//
// Conventions: occupancies are normalized ((1 - gamma)-weighted), J is the
// expected reward under the normalized occupancy, so the un-normalized
// discounted return is J / (1 - gamma). Vol(S) is the state count.

#include <limits>
#include <string>
#include <vector>

#include "pdml/common.hpp"

namespace pdml {

struct TabularPolicy {
  int num_states = 0, num_actions = 0;
  std::vector<double> probs;  // row-major [s][a]

  double p(int s, int a) const {
    return probs[static_cast<std::size_t>(s) * num_actions + a];
  }

  void validate() const {
    require(num_states >= 1 && num_actions >= 1, "TabularPolicy: empty");
    require(probs.size() ==
                static_cast<std::size_t>(num_states) * num_actions,
            "TabularPolicy: probs size mismatch");
    for (int s = 0; s < num_states; ++s) {
      double sum = 0.0;
      for (int a = 0; a < num_actions; ++a) {
        require(p(s, a) >= 0.0, "TabularPolicy: negative probability");
        sum += p(s, a);
      }
      require(std::fabs(sum - 1.0) <= 1e-12,
              "TabularPolicy: row " + std::to_string(s) + " does not sum to 1");
    }
  }
};

struct TabularMdp {
  int num_states = 0, num_actions = 0;
  double gamma = 0.9;
  double r_max = 1.0;
  std::vector<double> transition;  // [s][a][s'], each (s,a) row stochastic
  std::vector<double> reward;      // [s][a], within [0, r_max]
  std::vector<double> initial;     // [s], sums to 1

  double t(int s, int a, int s2) const {
    return transition[(static_cast<std::size_t>(s) * num_actions + a) *
                          num_states +
                      s2];
  }
  double r(int s, int a) const {
    return reward[static_cast<std::size_t>(s) * num_actions + a];
  }

  void validate() const {
    require(num_states >= 1 && num_actions >= 1, "TabularMdp: empty");
    require(gamma > 0.0 && gamma < 1.0, "TabularMdp: gamma must be in (0,1)");
    require(r_max >= 0.0, "TabularMdp: negative r_max");
    require(transition.size() == static_cast<std::size_t>(num_states) *
                                     num_actions * num_states,
            "TabularMdp: transition size mismatch");
    require(reward.size() == static_cast<std::size_t>(num_states) * num_actions,
            "TabularMdp: reward size mismatch");
    require(initial.size() == static_cast<std::size_t>(num_states),
            "TabularMdp: initial size mismatch");
    for (int s = 0; s < num_states; ++s)
      for (int a = 0; a < num_actions; ++a) {
        double sum = 0.0;
        for (int s2 = 0; s2 < num_states; ++s2) {
          require(t(s, a, s2) >= 0.0, "TabularMdp: negative transition entry");
          sum += t(s, a, s2);
        }
        require(std::fabs(sum - 1.0) <= 1e-12,
                "TabularMdp: transition row (" + std::to_string(s) + "," +
                    std::to_string(a) + ") does not sum to 1");
        require(r(s, a) >= 0.0 && r(s, a) <= r_max,
                "TabularMdp: reward outside [0, r_max]");
      }
    double sum0 = 0.0;
    for (double v : initial) {
      require(v >= 0.0, "TabularMdp: negative initial probability");
      sum0 += v;
    }
    require(std::fabs(sum0 - 1.0) <= 1e-12, "TabularMdp: initial does not sum to 1");
  }
};

// Dense linear solve by Gaussian elimination with partial pivoting. The
// systems here are tiny (at most the state count), diagonally dominant for
// gamma < 1, and solved to machine precision.
inline std::vector<double> solve_linear(std::vector<double> a,
                                        std::vector<double> b) {
  int n = static_cast<int>(b.size());
  require(a.size() == static_cast<std::size_t>(n) * n,
          "solve_linear: non-square system");
  auto at = [&](int i, int j) -> double& {
    return a[static_cast<std::size_t>(i) * n + j];
  };
  for (int col = 0; col < n; ++col) {
    int pivot = col;
    for (int row = col + 1; row < n; ++row)
      if (std::fabs(at(row, col)) > std::fabs(at(pivot, col))) pivot = row;
    if (std::fabs(at(pivot, col)) < 1e-300)
      throw std::runtime_error("solve_linear: singular system");
    if (pivot != col) {
      for (int j = col; j < n; ++j) std::swap(at(pivot, j), at(col, j));
      std::swap(b[pivot], b[col]);
    }
    for (int row = col + 1; row < n; ++row) {
      double f = at(row, col) / at(col, col);
      if (f == 0.0) continue;
      for (int j = col; j < n; ++j) at(row, j) -= f * at(col, j);
      b[row] -= f * b[col];
    }
  }
  std::vector<double> x(n);
  for (int i = n - 1; i >= 0; --i) {
    double acc = b[i];
    for (int j = i + 1; j < n; ++j) acc -= at(i, j) * x[j];
    x[i] = acc / at(i, i);
  }
  return x;
}

// Normalized discounted state visitation v solving
//   v = (1 - gamma) v0 + gamma P_pi' v.
inline std::vector<double> state_occupancy(const TabularMdp& mdp,
                                           const TabularPolicy& policy) {
  mdp.validate();
  policy.validate();
  require(policy.num_states == mdp.num_states &&
              policy.num_actions == mdp.num_actions,
          "state_occupancy: dimension mismatch");
  int n = mdp.num_states;
  std::vector<double> a(static_cast<std::size_t>(n) * n, 0.0);
  std::vector<double> b(n);
  for (int s2 = 0; s2 < n; ++s2) {
    b[s2] = (1.0 - mdp.gamma) * mdp.initial[s2];
    for (int s = 0; s < n; ++s) {
      double p = 0.0;
      for (int act = 0; act < mdp.num_actions; ++act)
        p += policy.p(s, act) * mdp.t(s, act, s2);
      a[static_cast<std::size_t>(s2) * n + s] -= mdp.gamma * p;
    }
    a[static_cast<std::size_t>(s2) * n + s2] += 1.0;
  }
  std::vector<double> v = solve_linear(std::move(a), std::move(b));
  for (double& x : v) x = std::max(x, 0.0);  // clip solver roundoff
  return v;
}

// Normalized discounted state-action occupancy rho(s,a) = v(s) pi(a|s).
inline std::vector<double> occupancy(const TabularMdp& mdp,
                                     const TabularPolicy& policy) {
  std::vector<double> v = state_occupancy(mdp, policy);
  std::vector<double> rho(static_cast<std::size_t>(mdp.num_states) *
                          mdp.num_actions);
  for (int s = 0; s < mdp.num_states; ++s)
    for (int a = 0; a < mdp.num_actions; ++a)
      rho[static_cast<std::size_t>(s) * mdp.num_actions + a] =
          v[s] * policy.p(s, a);
  return rho;
}

// J = E_rho[r] under the normalized occupancy. Constant reward c gives
// J = c; multiply by 1/(1 - gamma) for the raw discounted return.
inline double value(const TabularMdp& mdp, const TabularPolicy& policy) {
  std::vector<double> rho = occupancy(mdp, policy);
  double j = 0.0;
  for (int s = 0; s < mdp.num_states; ++s)
    for (int a = 0; a < mdp.num_actions; ++a)
      j += rho[static_cast<std::size_t>(s) * mdp.num_actions + a] * mdp.r(s, a);
  return j;
}

// Total variation distance (1/2) sum |p - q| between two distributions.
inline double tv_distance(std::span<const double> p, std::span<const double> q) {
  require(p.size() == q.size() && !p.empty(), "tv_distance: size mismatch");
  double sp = 0.0, sq = 0.0, acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    require(p[i] >= -1e-12 && q[i] >= -1e-12, "tv_distance: negative entry");
    sp += p[i];
    sq += q[i];
    acc += std::fabs(p[i] - q[i]);
  }
  require(std::fabs(sp - 1.0) <= 1e-8 && std::fabs(sq - 1.0) <= 1e-8,
          "tv_distance: inputs must sum to 1");
  return 0.5 * acc;
}

struct Lemma1Report {
  double max_violation = 0.0;  // max over states of gap minus bound
  int worst_state = 0;
  std::vector<double> gaps, bounds;  // per state
};

// For every state s', checks
//   |v1_T(s') - v2_That(s')| <= gamma E_{rho1_T}|T(s'|.) - That(s'|.)|
//                               + gamma TV(rho1_T, rho2_That).
// The second term uses total variation, which dominates the difference of
// expectations of any [0,1]-valued function such as That(s'|., .).
inline Lemma1Report check_lemma1(const TabularMdp& real, const TabularMdp& model,
                                 const TabularPolicy& pi1,
                                 const TabularPolicy& pi2) {
  require(real.num_states == model.num_states &&
              real.num_actions == model.num_actions,
          "check_lemma1: dimension mismatch");
  require(real.gamma == model.gamma, "check_lemma1: discount mismatch");
  for (int s = 0; s < real.num_states; ++s)
    require(std::fabs(real.initial[s] - model.initial[s]) <= 1e-12,
            "check_lemma1: initial distributions differ");
  std::vector<double> v1 = state_occupancy(real, pi1);
  std::vector<double> v2 = state_occupancy(model, pi2);
  std::vector<double> rho1 = occupancy(real, pi1);
  std::vector<double> rho2 = occupancy(model, pi2);
  double tv = tv_distance(rho1, rho2);
  Lemma1Report report;
  report.max_violation = -std::numeric_limits<double>::infinity();
  for (int s2 = 0; s2 < real.num_states; ++s2) {
    double gap = std::fabs(v1[s2] - v2[s2]);
    double model_err = 0.0;
    for (int s = 0; s < real.num_states; ++s)
      for (int a = 0; a < real.num_actions; ++a)
        model_err += rho1[static_cast<std::size_t>(s) * real.num_actions + a] *
                     std::fabs(real.t(s, a, s2) - model.t(s, a, s2));
    double bound = real.gamma * model_err + real.gamma * tv;
    report.gaps.push_back(gap);
    report.bounds.push_back(bound);
    if (gap - bound > report.max_violation) {
      report.max_violation = gap - bound;
      report.worst_state = s2;
    }
  }
  return report;
}

struct BoundReport {
  double lhs = 0.0;    // J(pi, T) - J(pi, That); may be negative
  double term1 = 0.0;  // model error under the current policy's occupancy
  double term2 = 0.0;  // mixture-shift term
  double term3 = 0.0;  // model-buffer term
  double rhs = 0.0;    // term1 + term2 + term3
  double assumption_residual = 0.0;  // TV(rho_mix_That, rho_mix_T)
  std::vector<double> xi_rho, xi_pi, weights;
  bool holds = false;     // lhs <= rhs
  bool asserted = false;  // residual was below the enforcement threshold
};

// Evaluates every term of the performance-gap bound exactly.
//
//   J(pi,T) - J(pi,That) <= 2 gamma r_max E_{rho_pi_T}[TV(T || That)]
//                           + r_max sum_i w_i (gamma S xi_rho_i + 2 xi_pi_i)
//                           + 2 r_max TV(rho_mix_That || rho_pi_That)
//
// The bound's proof replaces the mixture occupancy under the model by the
// mixture occupancy under the real dynamics; how far that substitution is
// from exact is reported as assumption_residual. When the residual is at
// most `residual_threshold` the inequality is enforced (a violation
// throws); otherwise the instance is only recorded.
inline BoundReport check_theorem1(const TabularMdp& real, const TabularMdp& model,
                                  const TabularPolicy& current,
                                  const std::vector<TabularPolicy>& mixture,
                                  const std::vector<double>& weights,
                                  double residual_threshold = 1e-3) {
  require(real.num_states == model.num_states &&
              real.num_actions == model.num_actions,
          "check_theorem1: dimension mismatch");
  require(real.gamma == model.gamma, "check_theorem1: discount mismatch");
  require(!mixture.empty() && mixture.size() == weights.size(),
          "check_theorem1: mixture and weights must align");
  double wsum = 0.0;
  for (double w : weights) {
    require(w >= 0.0, "check_theorem1: negative weight");
    wsum += w;
  }
  require(std::fabs(wsum - 1.0) <= 1e-9, "check_theorem1: weights must sum to 1");

  int s_count = real.num_states, a_count = real.num_actions;
  int k = static_cast<int>(mixture.size());
  std::vector<double> rho_pi_real = occupancy(real, current);
  std::vector<double> rho_pi_model = occupancy(model, current);

  BoundReport report;
  report.weights = weights;
  report.lhs = 0.0;
  {
    double j_real = 0.0, j_model = 0.0;
    for (int s = 0; s < s_count; ++s)
      for (int a = 0; a < a_count; ++a) {
        std::size_t idx = static_cast<std::size_t>(s) * a_count + a;
        j_real += rho_pi_real[idx] * real.r(s, a);
        j_model += rho_pi_model[idx] * real.r(s, a);
      }
    report.lhs = j_real - j_model;
  }

  double mean_row_tv = 0.0;
  for (int s = 0; s < s_count; ++s)
    for (int a = 0; a < a_count; ++a) {
      double l1 = 0.0;
      for (int s2 = 0; s2 < s_count; ++s2)
        l1 += std::fabs(real.t(s, a, s2) - model.t(s, a, s2));
      mean_row_tv +=
          rho_pi_real[static_cast<std::size_t>(s) * a_count + a] * 0.5 * l1;
    }
  report.term1 = 2.0 * real.gamma * real.r_max * mean_row_tv;

  // per-policy occupancies under both dynamics, and the two mixtures
  std::vector<double> rho_mix_model(rho_pi_real.size(), 0.0);
  std::vector<double> rho_mix_real(rho_pi_real.size(), 0.0);
  std::vector<std::vector<double>> rho_i_real(k);
  for (int i = 0; i < k; ++i) {
    rho_i_real[i] = occupancy(real, mixture[i]);
    std::vector<double> rho_i_model = occupancy(model, mixture[i]);
    for (std::size_t idx = 0; idx < rho_mix_model.size(); ++idx) {
      rho_mix_model[idx] += weights[i] * rho_i_model[idx];
      rho_mix_real[idx] += weights[i] * rho_i_real[i][idx];
    }
  }
  std::vector<double> v_mix_model(s_count, 0.0);
  for (int s = 0; s < s_count; ++s)
    for (int a = 0; a < a_count; ++a)
      v_mix_model[s] += rho_mix_model[static_cast<std::size_t>(s) * a_count + a];

  report.term2 = 0.0;
  for (int i = 0; i < k; ++i) {
    double xi_rho = tv_distance(rho_pi_real, rho_i_real[i]);
    double xi_pi = 0.0;
    for (int s = 0; s < s_count; ++s) {
      double l1 = 0.0;
      for (int a = 0; a < a_count; ++a)
        l1 += std::fabs(current.p(s, a) - mixture[i].p(s, a));
      xi_pi += v_mix_model[s] * 0.5 * l1;
    }
    report.xi_rho.push_back(xi_rho);
    report.xi_pi.push_back(xi_pi);
    report.term2 +=
        weights[i] * real.r_max * (real.gamma * s_count * xi_rho + 2.0 * xi_pi);
  }

  report.term3 = 2.0 * real.r_max * tv_distance(rho_mix_model, rho_pi_model);
  report.rhs = report.term1 + report.term2 + report.term3;
  report.assumption_residual = tv_distance(rho_mix_model, rho_mix_real);
  report.holds = report.lhs <= report.rhs;
  report.asserted = report.assumption_residual <= residual_threshold;
  if (report.asserted && !report.holds)
    throw std::runtime_error(
        "check_theorem1: bound violated with assumption residual " +
        std::to_string(report.assumption_residual));
  return report;
}

struct PropositionReport {
  bool holds = false;
  double weighted_sum = 0.0;
  double uniform_sum = 0.0;
  double margin = 0.0;  // uniform_sum - weighted_sum, >= 0 when it holds
};

// Shift-ordered weights cannot do worse than uniform weights on the
// mixture-shift term: with both shift sequences non-increasing and the
// weights non-decreasing, sum_i w_i c_i <= sum_i c_i / k for the per-policy
// costs c_i = r_max (gamma S xi_rho_i + 2 xi_pi_i). The orderings are the
// proposition's hypothesis, so violations are precondition errors.
inline PropositionReport check_proposition1(const std::vector<double>& xi_rho,
                                            const std::vector<double>& xi_pi,
                                            const std::vector<double>& weights,
                                            double gamma, int vol_s,
                                            double r_max) {
  std::size_t k = weights.size();
  require(k >= 1 && xi_rho.size() == k && xi_pi.size() == k,
          "check_proposition1: length mismatch");
  require(gamma > 0.0 && gamma < 1.0 && vol_s >= 1 && r_max >= 0.0,
          "check_proposition1: bad constants");
  double wsum = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    require(xi_rho[i] >= 0.0 && xi_pi[i] >= 0.0,
            "check_proposition1: negative shift");
    require(weights[i] >= 0.0, "check_proposition1: negative weight");
    if (i > 0) {
      require(xi_rho[i] <= xi_rho[i - 1] && xi_pi[i] <= xi_pi[i - 1],
              "check_proposition1: shifts must be non-increasing");
      require(weights[i] >= weights[i - 1],
              "check_proposition1: weights must be non-decreasing");
    }
    wsum += weights[i];
  }
  require(std::fabs(wsum - 1.0) <= 1e-9,
          "check_proposition1: weights must sum to 1");

  PropositionReport report;
  for (std::size_t i = 0; i < k; ++i) {
    double cost = r_max * (gamma * vol_s * xi_rho[i] + 2.0 * xi_pi[i]);
    report.weighted_sum += weights[i] * cost;
    report.uniform_sum += cost / static_cast<double>(k);
  }
  report.margin = report.uniform_sum - report.weighted_sum;
  report.holds = report.margin >= 0.0;
  return report;
}

// --- Random instance generators for the verification suites ---

inline std::vector<double> dirichlet_row(int n, Rng& rng) {
  std::vector<double> row(n);
  double sum = 0.0;
  for (double& x : row) {
    x = -std::log(1.0 - rng.uniform01());  // Exp(1)
    sum += x;
  }
  for (double& x : row) x /= sum;
  return row;
}

inline TabularPolicy random_tabular_policy(int num_states, int num_actions,
                                           Rng& rng) {
  TabularPolicy pi;
  pi.num_states = num_states;
  pi.num_actions = num_actions;
  for (int s = 0; s < num_states; ++s) {
    std::vector<double> row = dirichlet_row(num_actions, rng);
    pi.probs.insert(pi.probs.end(), row.begin(), row.end());
  }
  return pi;
}

inline TabularMdp random_tabular_mdp(int max_states, int max_actions,
                                     double max_gamma, Rng& rng) {
  require(max_states >= 2 && max_actions >= 1 && max_gamma > 0.5 &&
              max_gamma < 1.0,
          "random_tabular_mdp: bad limits");
  TabularMdp mdp;
  mdp.num_states = 2 + rng.uniform_int(max_states - 1);
  mdp.num_actions = 1 + rng.uniform_int(max_actions);
  mdp.gamma = rng.uniform(0.5, max_gamma);
  mdp.r_max = 1.0;
  for (int s = 0; s < mdp.num_states; ++s)
    for (int a = 0; a < mdp.num_actions; ++a) {
      std::vector<double> row = dirichlet_row(mdp.num_states, rng);
      mdp.transition.insert(mdp.transition.end(), row.begin(), row.end());
      mdp.reward.push_back(rng.uniform(0.0, mdp.r_max));
    }
  mdp.initial = dirichlet_row(mdp.num_states, rng);
  return mdp;
}

// That = (1 - eps) T + eps uniform; rewards and initial state stay shared.
inline TabularMdp perturb_toward_uniform(const TabularMdp& mdp, double eps) {
  require(eps >= 0.0 && eps <= 1.0, "perturb_toward_uniform: eps outside [0,1]");
  TabularMdp out = mdp;
  double u = 1.0 / mdp.num_states;
  for (double& x : out.transition) x = (1.0 - eps) * x + eps * u;
  return out;
}

}  // namespace pdml
