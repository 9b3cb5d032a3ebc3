#pragma once

#include "vpg/envs.hpp"
#include "vpg/numcore.hpp"
#include "vpg/policy.hpp"

#include <span>

namespace vpg {

// ---------------------------------------------------------------------------
// Returns and advantages.
// ---------------------------------------------------------------------------

enum class AdvantageMode { mc_return_minus_baseline, td, gae };

struct AdvantageConfig {
  AdvantageMode mode = AdvantageMode::gae;
  double gamma = 0.99;
  double lambda = 0.95;  // used in gae mode only
  bool normalize = true;
  // Uses the alternative residual r_t + V(s_t) - V(s_{t+1}) instead of the
  // standard delta_t; kept for fidelity experiments, no correctness claims.
  bool literal_td = false;
};

// G_t = sum_{k >= t} gamma^{k-t} r_k.
inline std::vector<double> discounted_returns(std::span<const double> rewards,
                                              double gamma) {
  if (!(gamma > 0.0 && gamma <= 1.0)) {
    throw std::invalid_argument("discounted_returns: gamma must be in (0,1]");
  }
  std::vector<double> g(rewards.size());
  double acc = 0.0;
  for (std::size_t i = rewards.size(); i-- > 0;) {
    acc = rewards[i] + gamma * acc;
    g[i] = acc;
  }
  return g;
}

// ---------------------------------------------------------------------------
// Value baseline: a small state -> scalar network fit to returns.
// ---------------------------------------------------------------------------

class ValueBaseline {
 public:
  ValueBaseline(MlpSpec spec, ShapedParams params)
      : spec_(std::move(spec)), params_(std::move(params)) {
    spec_.validate();
    if (spec_.output_dim() != 1) {
      throw std::invalid_argument("ValueBaseline: output dim must be 1");
    }
  }

  static ValueBaseline zero(int state_dim, int hidden = 16) {
    MlpSpec spec = make_mlp_spec({state_dim, hidden, 1}, Activation::tanh);
    return ValueBaseline(spec, make_mlp_params(spec));
  }

  const MlpSpec& spec() const { return spec_; }
  const ShapedParams& shaped_params() const { return params_; }
  void set_params(const Vec& p) { params_.set_data(p); }

  double value(const Vec& state) const {
    return mlp_forward(spec_, params_, state)[0];
  }

  Vec grad(const Vec& state) const {
    auto [g, ignored] = mlp_backward(spec_, params_, state, Vec::Ones(1));
    return g.data();
  }

 private:
  MlpSpec spec_;
  ShapedParams params_;
};

// One-step TD residuals delta_t = r_t + gamma V(s_{t+1}) - V(s_t), with
// V(s_T) = 0 at episode end.
inline std::vector<double> td_advantage(const Trajectory& traj,
                                        const ValueBaseline& v, double gamma,
                                        bool literal_form = false) {
  traj.validate();
  const int n = traj.length();
  std::vector<double> values(static_cast<std::size_t>(n) + 1);
  for (int t = 0; t < n; ++t) {
    values[static_cast<std::size_t>(t)] =
        v.value(traj.states[static_cast<std::size_t>(t)]);
  }
  values[static_cast<std::size_t>(n)] = 0.0;
  std::vector<double> adv(static_cast<std::size_t>(n));
  for (int t = 0; t < n; ++t) {
    const double r = traj.rewards[static_cast<std::size_t>(t)];
    const double vt = values[static_cast<std::size_t>(t)];
    const double vn = values[static_cast<std::size_t>(t) + 1];
    adv[static_cast<std::size_t>(t)] =
        literal_form ? r + vt - vn : r + gamma * vn - vt;
  }
  return adv;
}

// A_t = sum_{k >= t} (gamma lambda)^{k-t} delta_k.
inline std::vector<double> gae(const Trajectory& traj, const ValueBaseline& v,
                               double gamma, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw std::invalid_argument("gae: lambda must be in [0,1]");
  }
  std::vector<double> delta = td_advantage(traj, v, gamma);
  double acc = 0.0;
  for (std::size_t i = delta.size(); i-- > 0;) {
    acc = delta[i] + gamma * lambda * acc;
    delta[i] = acc;
  }
  return delta;
}

inline std::vector<std::vector<double>> compute_advantages(
    std::span<const Trajectory> trajs, const ValueBaseline& v,
    const AdvantageConfig& cfg) {
  std::vector<std::vector<double>> out;
  out.reserve(trajs.size());
  for (const Trajectory& tr : trajs) {
    switch (cfg.mode) {
      case AdvantageMode::mc_return_minus_baseline: {
        std::vector<double> g = discounted_returns(tr.rewards, cfg.gamma);
        for (int t = 0; t < tr.length(); ++t) {
          g[static_cast<std::size_t>(t)] -=
              v.value(tr.states[static_cast<std::size_t>(t)]);
        }
        out.push_back(std::move(g));
        break;
      }
      case AdvantageMode::td:
        out.push_back(td_advantage(tr, v, cfg.gamma, cfg.literal_td));
        break;
      case AdvantageMode::gae:
        out.push_back(gae(tr, v, cfg.gamma, cfg.lambda));
        break;
    }
  }
  return out;
}

// In-place batch normalization to mean 0, variance 1 (population variance).
// A batch with no spread is left unchanged.
inline void normalize_advantages(std::vector<std::vector<double>>& batch) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& a : batch) {
    for (double x : a) sum += x;
    n += a.size();
  }
  if (n == 0) return;
  const double mean = sum / static_cast<double>(n);
  double ss = 0.0;
  for (const auto& a : batch) {
    for (double x : a) ss += (x - mean) * (x - mean);
  }
  const double sd = std::sqrt(ss / static_cast<double>(n));
  if (sd < 1e-12) return;
  for (auto& a : batch) {
    for (double& x : a) x = (x - mean) / sd;
  }
}

// ---------------------------------------------------------------------------
// Baseline fitting: full-batch descent on squared error against discounted
// returns, with step halving so the loss never increases on the fit set.
// ---------------------------------------------------------------------------

inline double baseline_loss(const ValueBaseline& v,
                            std::span<const Vec> states,
                            std::span<const double> targets) {
  double loss = 0.0;
  for (std::size_t i = 0; i < states.size(); ++i) {
    const double d = v.value(states[i]) - targets[i];
    loss += d * d;
  }
  return loss / static_cast<double>(states.size());
}

inline ValueBaseline fit_baseline(ValueBaseline v,
                                  std::span<const Trajectory> trajs,
                                  double gamma, int epochs,
                                  double step_size) {
  if (trajs.empty()) {
    throw std::invalid_argument("fit_baseline: no trajectories");
  }
  std::vector<Vec> states;
  std::vector<double> targets;
  for (const Trajectory& tr : trajs) {
    const std::vector<double> g = discounted_returns(tr.rewards, gamma);
    for (int t = 0; t < tr.length(); ++t) {
      states.push_back(tr.states[static_cast<std::size_t>(t)]);
      targets.push_back(g[static_cast<std::size_t>(t)]);
    }
  }
  const double inv_n = 1.0 / static_cast<double>(states.size());
  double lr = step_size;
  double loss = baseline_loss(v, states, targets);
  for (int e = 0; e < epochs; ++e) {
    Vec grad = Vec::Zero(v.shaped_params().size());
    for (std::size_t i = 0; i < states.size(); ++i) {
      const double d = v.value(states[i]) - targets[i];
      grad += (2.0 * inv_n * d) * v.grad(states[i]);
    }
    // Halve the step until the loss does not increase.
    const Vec p0 = v.shaped_params().data();
    double trial_lr = lr;
    for (int tries = 0; tries < 20; ++tries) {
      v.set_params(p0 - trial_lr * grad);
      const double trial = baseline_loss(v, states, targets);
      if (trial <= loss) {
        loss = trial;
        lr = trial_lr;
        break;
      }
      trial_lr *= 0.5;
      v.set_params(p0);
    }
  }
  return v;
}

// ---------------------------------------------------------------------------
// Likelihood-ratio policy gradient:
// mean over trajectories of sum_t score(s_t, a_t) * A_t.
// ---------------------------------------------------------------------------

inline Vec policy_gradient(std::span<const Trajectory> trajs,
                           const Policy& policy,
                           std::span<const std::vector<double>> advantages) {
  if (trajs.empty()) {
    throw std::invalid_argument("policy_gradient: empty trajectory set");
  }
  if (advantages.size() != trajs.size()) {
    throw std::invalid_argument(
        "policy_gradient: advantage batch does not match trajectories");
  }
  std::vector<Vec> per_traj;
  per_traj.reserve(trajs.size());
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    const Trajectory& tr = trajs[i];
    if (advantages[i].size() != static_cast<std::size_t>(tr.length())) {
      throw std::invalid_argument(
          "policy_gradient: advantages misaligned with steps");
    }
    Vec g = Vec::Zero(policy.param_dim());
    for (int t = 0; t < tr.length(); ++t) {
      g += advantages[i][static_cast<std::size_t>(t)] *
           score_inverse_form(policy,
                              tr.states[static_cast<std::size_t>(t)],
                              tr.actions[static_cast<std::size_t>(t)]);
    }
    per_traj.push_back(std::move(g));
  }
  return tree_mean(std::move(per_traj));
}

}  // namespace vpg
