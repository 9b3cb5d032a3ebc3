#pragma once

#include "vpg/numcore.hpp"

#include <Eigen/Cholesky>

#include <functional>
#include <tuple>

namespace vpg {

// ---------------------------------------------------------------------------
// Desk-scale continuous-control environments.  All dynamics are
// deterministic; the only randomness is the seeded initial state, so a fixed
// stream reproduces a rollout bit for bit.  Constants are documented in
// docs/envs/<name>.txt.
// ---------------------------------------------------------------------------

struct LqrSpec {
  Mat A;       // state dynamics
  Mat B;       // control matrix
  Mat Q;       // state cost, positive definite
  Mat R_cost;  // action cost, positive definite
  double init_scale = 1.0;

  void validate() const {
    const auto n = A.rows();
    const auto m = B.cols();
    if (A.cols() != n || B.rows() != n || Q.rows() != n || Q.cols() != n ||
        R_cost.rows() != m || R_cost.cols() != m) {
      throw std::invalid_argument("LqrSpec: inconsistent matrix dimensions");
    }
    if (!Q.isApprox(Q.transpose()) || !R_cost.isApprox(R_cost.transpose())) {
      throw std::invalid_argument("LqrSpec: cost matrices must be symmetric");
    }
    if (Eigen::LLT<Mat>(Q).info() != Eigen::Success ||
        Eigen::LLT<Mat>(R_cost).info() != Eigen::Success) {
      throw std::invalid_argument(
          "LqrSpec: cost matrices must be positive definite");
    }
  }
};

struct PointMassSpec {
  double dt = 0.1;
  double bound = 5.0;        // positions clipped to [-bound, bound]
  double goal_radius = 0.1;  // absorbing goal at the origin
  double action_cost = 0.01;
  double init_range = 2.0;   // initial position uniform in [-range, range]
};

struct PendulumSpec {
  double dt = 0.05;
  double gravity = 10.0;
  double mass = 1.0;
  double length = 1.0;
  double max_torque = 2.0;
  double max_speed = 8.0;
};

struct EnvSpec {
  std::string name;  // lqr | point_mass | pendulum
  int state_dim = 0;
  int action_dim = 0;
  int horizon = 1;
  double gamma = 0.99;

  LqrSpec lqr;
  PointMassSpec point_mass;
  PendulumSpec pendulum;

  void validate() const {
    if (horizon < 1) throw std::invalid_argument("EnvSpec: horizon < 1");
    if (!(gamma > 0.0 && gamma <= 1.0)) {
      throw std::invalid_argument("EnvSpec: gamma must be in (0,1]");
    }
    if (name == "lqr") lqr.validate();
  }
};

// Default LQR: 2-D state with rotational coupling (spectral radius just
// above 1, so regulation is a real task), 1-D action entering the second
// state, Q = I, R = 0.1.
inline EnvSpec default_lqr_env() {
  EnvSpec e;
  e.name = "lqr";
  e.state_dim = 2;
  e.action_dim = 1;
  e.horizon = 50;
  e.gamma = 0.99;
  e.lqr.A = Mat{{1.0, 0.1}, {-0.1, 1.0}};
  e.lqr.B = Mat{{0.0}, {1.0}};
  e.lqr.Q = Mat::Identity(2, 2);
  e.lqr.R_cost = 0.1 * Mat::Identity(1, 1);
  e.lqr.init_scale = 1.0;
  return e;
}

inline EnvSpec default_point_mass_env() {
  EnvSpec e;
  e.name = "point_mass";
  e.state_dim = 2;
  e.action_dim = 2;
  e.horizon = 50;
  e.gamma = 0.99;
  return e;
}

inline EnvSpec default_pendulum_env() {
  EnvSpec e;
  e.name = "pendulum";
  e.state_dim = 2;  // (angle, angular velocity)
  e.action_dim = 1;
  e.horizon = 100;
  e.gamma = 0.99;
  return e;
}

inline EnvSpec make_env(const std::string& name) {
  if (name == "lqr") return default_lqr_env();
  if (name == "point_mass") return default_point_mass_env();
  if (name == "pendulum") return default_pendulum_env();
  throw std::invalid_argument("unknown environment '" + name + "'");
}

// ---------------------------------------------------------------------------
// Reset / step / rollout.
// ---------------------------------------------------------------------------

inline Vec env_reset(const EnvSpec& spec, RngStream& rng) {
  spec.validate();
  if (spec.name == "lqr") {
    return spec.lqr.init_scale * rng.normal_vec(spec.state_dim);
  }
  if (spec.name == "point_mass") {
    return rng.uniform_vec(spec.state_dim, -spec.point_mass.init_range,
                           spec.point_mass.init_range);
  }
  if (spec.name == "pendulum") {
    Vec s(2);
    s[0] = rng.uniform(-M_PI, M_PI);
    s[1] = rng.uniform(-1.0, 1.0);
    return s;
  }
  throw std::invalid_argument("unknown environment '" + spec.name + "'");
}

namespace detail {

inline double wrap_angle(double a) {
  while (a > M_PI) a -= 2.0 * M_PI;
  while (a < -M_PI) a += 2.0 * M_PI;
  return a;
}

}  // namespace detail

struct StepResult {
  Vec next_state;
  double reward = 0.0;
  bool done = false;
};

inline StepResult env_step(const EnvSpec& spec, const Vec& state,
                           const Vec& action) {
  if (action.size() != spec.action_dim) {
    throw std::invalid_argument("env_step: action length " +
                                std::to_string(action.size()) +
                                " does not match action_dim " +
                                std::to_string(spec.action_dim));
  }
  if (!all_finite(action)) {
    throw std::invalid_argument("env_step: non-finite action");
  }

  if (spec.name == "lqr") {
    const auto& q = spec.lqr;
    StepResult r;
    r.next_state = q.A * state + q.B * action;
    r.reward = -(state.dot(q.Q * state) + action.dot(q.R_cost * action));
    r.done = false;  // terminates at the horizon only
    return r;
  }
  if (spec.name == "point_mass") {
    const auto& p = spec.point_mass;
    Vec a = action.cwiseMax(-1.0).cwiseMin(1.0);
    StepResult r;
    r.next_state =
        (state + p.dt * a).cwiseMax(-p.bound).cwiseMin(p.bound);
    r.reward = -(state.squaredNorm() + p.action_cost * a.squaredNorm());
    r.done = r.next_state.norm() <= p.goal_radius;
    return r;
  }
  if (spec.name == "pendulum") {
    const auto& p = spec.pendulum;
    const double u =
        std::clamp(action[0], -p.max_torque, p.max_torque);
    const double th = state[0];
    const double om = state[1];
    const double om_next = std::clamp(
        om + p.dt * (3.0 * p.gravity / (2.0 * p.length) * std::sin(th) +
                     3.0 * u / (p.mass * p.length * p.length)),
        -p.max_speed, p.max_speed);
    StepResult r;
    r.next_state = Vec(2);
    r.next_state[0] = detail::wrap_angle(th + p.dt * om_next);
    r.next_state[1] = om_next;
    r.reward = -(th * th + 0.1 * om * om + 0.001 * u * u);
    r.done = false;
    return r;
  }
  throw std::invalid_argument("unknown environment '" + spec.name + "'");
}

// State cost charged when an episode ends.  The LQR objective includes a
// quadratic terminal cost with the running state weight; the other
// environments end free.
inline double terminal_reward(const EnvSpec& spec, const Vec& final_state) {
  if (spec.name == "lqr") {
    return -final_state.dot(spec.lqr.Q * final_state);
  }
  return 0.0;
}

// ---------------------------------------------------------------------------
// Trajectories.
// ---------------------------------------------------------------------------

// Per-step records for one episode.  states/actions/rewards/noises all have
// `length()` entries; final_state holds s_T for bootstrapping.
struct Trajectory {
  std::vector<Vec> states;
  std::vector<Vec> actions;
  std::vector<double> rewards;
  std::vector<Vec> noises;  // the zeta draw behind each action
  Vec final_state;
  bool reached_horizon = false;

  int length() const { return static_cast<int>(states.size()); }

  void validate() const {
    const auto n = states.size();
    if (actions.size() != n || rewards.size() != n || noises.size() != n) {
      throw std::invalid_argument("Trajectory: parallel arrays differ");
    }
    for (double r : rewards) {
      if (!std::isfinite(r)) {
        throw std::invalid_argument("Trajectory: non-finite reward");
      }
    }
  }
};

// act maps (state, rng) -> (action, zeta).  The recorded zeta is whatever
// noise the sampler actually consumed; deterministic policies return zeros.
using ActionSampler =
    std::function<std::pair<Vec, Vec>(const Vec&, RngStream&)>;

inline Trajectory rollout(const EnvSpec& spec, const ActionSampler& act,
                          RngStream& rng) {
  spec.validate();
  Trajectory traj;
  Vec state = env_reset(spec, rng);
  for (int t = 0; t < spec.horizon; ++t) {
    auto [action, zeta] = act(state, rng);
    StepResult step = env_step(spec, state, action);
    traj.states.push_back(state);
    traj.actions.push_back(action);
    traj.noises.push_back(zeta);
    double reward = step.reward;
    const bool horizon_end = (t == spec.horizon - 1);
    if (step.done || horizon_end) {
      reward += spec.gamma * terminal_reward(spec, step.next_state);
      traj.rewards.push_back(reward);
      traj.final_state = step.next_state;
      traj.reached_horizon = horizon_end && !step.done;
      return traj;
    }
    traj.rewards.push_back(reward);
    state = step.next_state;
  }
  return traj;  // unreachable; loop always returns
}

inline double discounted_return(const Trajectory& traj, double gamma) {
  double g = 0.0;
  double w = 1.0;
  for (double r : traj.rewards) {
    g += w * r;
    w *= gamma;
  }
  return g;
}

// ---------------------------------------------------------------------------
// Riccati oracle for the LQR environment.
// ---------------------------------------------------------------------------

struct LqrSolution {
  std::vector<Mat> gains;  // a_t = -K_t s_t
  Mat value;               // P_0: optimal cost-to-go s' P_0 s
};

// Finite-horizon discounted Riccati recursion with terminal weight Q,
// matching the environment's terminal cost.
inline LqrSolution lqr_riccati(const LqrSpec& spec, double gamma,
                               int horizon) {
  spec.validate();
  const Mat& A = spec.A;
  const Mat& B = spec.B;
  Mat P = spec.Q;
  std::vector<Mat> gains(static_cast<std::size_t>(horizon));
  for (int t = horizon - 1; t >= 0; --t) {
    const Mat G = spec.R_cost + gamma * B.transpose() * P * B;
    const Mat K = gamma * G.ldlt().solve(B.transpose() * P * A);
    P = spec.Q + K.transpose() * spec.R_cost * K +
        gamma * (A - B * K).transpose() * P * (A - B * K);
    gains[static_cast<std::size_t>(t)] = K;
  }
  return {std::move(gains), std::move(P)};
}

// Average discounted return of the optimal finite-horizon feedback policy
// over n_eval initial draws; deterministic dynamics make the closed form
// -s0' P_0 s0 exact per draw.  Draw i uses rng.child(i).
inline double lqr_optimal_return(const EnvSpec& spec, int n_eval,
                                 const RngStream& rng) {
  if (spec.name != "lqr") {
    throw std::invalid_argument("lqr_optimal_return: not an lqr env");
  }
  const LqrSolution sol = lqr_riccati(spec.lqr, spec.gamma, spec.horizon);
  std::vector<double> vals(static_cast<std::size_t>(n_eval));
  for (int i = 0; i < n_eval; ++i) {
    RngStream r = rng.child(static_cast<std::uint64_t>(i));
    const Vec s0 = env_reset(spec, r);
    vals[static_cast<std::size_t>(i)] = -s0.dot(sol.value * s0);
  }
  return tree_mean(std::move(vals));
}

}  // namespace vpg
