#include "vpg/envs.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace vpg;

namespace {

// Zero-noise sampler around a fixed action.
ActionSampler constant_action(const Vec& a) {
  return [a](const Vec&, RngStream&) {
    return std::make_pair(a, Vec::Zero(a.size()));
  };
}

EnvSpec scalar_lqr(double gamma, int horizon) {
  EnvSpec e;
  e.name = "lqr";
  e.state_dim = 1;
  e.action_dim = 1;
  e.horizon = horizon;
  e.gamma = gamma;
  e.lqr.A = Mat::Identity(1, 1);
  e.lqr.B = Mat::Identity(1, 1);
  e.lqr.Q = Mat::Identity(1, 1);
  e.lqr.R_cost = Mat::Identity(1, 1);
  e.lqr.init_scale = 1.0;
  return e;
}

}  // namespace

TEST_CASE("env_reset: zero scale starts at the origin") {
  EnvSpec spec = default_lqr_env();
  spec.lqr.init_scale = 0.0;
  RngStream rng(1, 0);
  REQUIRE(env_reset(spec, rng).isZero());
}

TEST_CASE("env_reset is deterministic per stream") {
  const EnvSpec spec = default_lqr_env();
  RngStream a(9, 4), b(9, 4);
  REQUIRE((env_reset(spec, a) - env_reset(spec, b)).norm() == 0.0);
}

TEST_CASE("env_reset: point mass starts within bounds") {
  const EnvSpec spec = default_point_mass_env();
  RngStream rng(2, 0);
  for (int i = 0; i < 50; ++i) {
    const Vec s = env_reset(spec, rng);
    REQUIRE(s.cwiseAbs().maxCoeff() <= spec.point_mass.init_range);
    REQUIRE(s.cwiseAbs().maxCoeff() <= spec.point_mass.bound);
  }
}

TEST_CASE("lqr step: zero state and action give zero reward") {
  const EnvSpec spec = default_lqr_env();
  const StepResult r = env_step(spec, Vec::Zero(2), Vec::Zero(1));
  REQUIRE(r.reward == 0.0);
  REQUIRE_FALSE(r.done);
}

TEST_CASE("lqr step: identity dynamics add state and action") {
  EnvSpec spec = default_lqr_env();
  spec.state_dim = 2;
  spec.action_dim = 2;
  spec.lqr.A = Mat::Identity(2, 2);
  spec.lqr.B = Mat::Identity(2, 2);
  spec.lqr.Q = Mat::Identity(2, 2);
  spec.lqr.R_cost = Mat::Identity(2, 2);
  Vec s(2), a(2);
  s << 1.0, 0.0;
  a << 0.0, 1.0;
  const StepResult r = env_step(spec, s, a);
  Vec want(2);
  want << 1.0, 1.0;
  REQUIRE((r.next_state - want).norm() == 0.0);
}

TEST_CASE("point mass absorbs at the goal") {
  const EnvSpec spec = default_point_mass_env();
  const StepResult r = env_step(spec, Vec::Zero(2), Vec::Zero(2));
  REQUIRE(r.done);
}

TEST_CASE("env_step rejects non-finite actions") {
  const EnvSpec spec = default_lqr_env();
  Vec bad(1);
  bad << std::numeric_limits<double>::quiet_NaN();
  REQUIRE_THROWS_AS(env_step(spec, Vec::Zero(2), bad), std::invalid_argument);
}

TEST_CASE("rollout with horizon 1 is a single step") {
  EnvSpec spec = default_lqr_env();
  spec.horizon = 1;
  RngStream rng(3, 0);
  const Trajectory tr = rollout(spec, constant_action(Vec::Zero(1)), rng);
  REQUIRE(tr.length() == 1);
  REQUIRE(tr.reached_horizon);
}

TEST_CASE("rollout of the zero policy matches a hand-rolled cost sequence") {
  EnvSpec spec = default_lqr_env();
  spec.horizon = 5;
  RngStream rng(4, 0);
  const Trajectory tr = rollout(spec, constant_action(Vec::Zero(1)), rng);

  // Hand-rolled: s_{t+1} = A s_t, reward -(s'Qs), terminal fold on the last
  // step with weight gamma.
  RngStream rng2(4, 0);
  Vec s = env_reset(spec, rng2);
  for (int t = 0; t < 5; ++t) {
    double want = -s.dot(spec.lqr.Q * s);
    const Vec next = spec.lqr.A * s;
    if (t == 4) want += spec.gamma * -next.dot(spec.lqr.Q * next);
    REQUIRE(tr.rewards[static_cast<std::size_t>(t)] ==
            Catch::Approx(want).epsilon(1e-13));
    s = next;
  }
}

TEST_CASE("identical streams give identical trajectories") {
  const EnvSpec spec = default_pendulum_env();
  const ActionSampler noisy = [](const Vec&, RngStream& rng) {
    Vec zeta(1);
    zeta[0] = rng.normal();
    return std::make_pair(zeta, zeta);
  };
  RngStream a(11, 2), b(11, 2);
  const Trajectory ta = rollout(spec, noisy, a);
  const Trajectory tb = rollout(spec, noisy, b);
  REQUIRE(ta.length() == tb.length());
  for (int t = 0; t < ta.length(); ++t) {
    REQUIRE((ta.states[static_cast<std::size_t>(t)] -
             tb.states[static_cast<std::size_t>(t)]).norm() == 0.0);
    REQUIRE(ta.rewards[static_cast<std::size_t>(t)] ==
            tb.rewards[static_cast<std::size_t>(t)]);
  }
}

TEST_CASE("states and rewards stay finite for bounded actions") {
  const EnvSpec spec = default_lqr_env();
  RngStream rng(13, 0);
  const Trajectory tr =
      rollout(spec, constant_action(Vec::Constant(1, 1000.0)), rng);
  tr.validate();
  for (const auto& s : tr.states) REQUIRE(all_finite(s));
  REQUIRE(all_finite(tr.final_state));
}

TEST_CASE("riccati oracle: zero initial scale gives zero return") {
  EnvSpec spec = default_lqr_env();
  spec.lqr.init_scale = 0.0;
  const RngStream rng(5, 0);
  REQUIRE(lqr_optimal_return(spec, 16, rng) == 0.0);
}

TEST_CASE("riccati oracle: one-step scalar system") {
  const EnvSpec spec = scalar_lqr(1.0, 1);
  const LqrSolution sol = lqr_riccati(spec.lqr, spec.gamma, spec.horizon);
  // Optimal one-step action is -s/2 and the cost-to-go is 1.5 s^2.
  REQUIRE(sol.gains[0](0, 0) == Catch::Approx(0.5).epsilon(1e-12));
  REQUIRE(sol.value(0, 0) == Catch::Approx(1.5).epsilon(1e-12));

  const RngStream rng(6, 0);
  const double oracle = lqr_optimal_return(spec, 64, rng);
  std::vector<double> sq;
  for (int i = 0; i < 64; ++i) {
    RngStream r = rng.child(static_cast<std::uint64_t>(i));
    const Vec s0 = env_reset(spec, r);
    sq.push_back(s0[0] * s0[0]);
  }
  REQUIRE(oracle == Catch::Approx(-1.5 * tree_mean(sq)).epsilon(1e-12));
}

TEST_CASE("riccati closed form equals a simulated optimal rollout") {
  const EnvSpec spec = default_lqr_env();
  const LqrSolution sol = lqr_riccati(spec.lqr, spec.gamma, spec.horizon);
  RngStream rng(7, 0);
  const Vec s0 = env_reset(spec, rng);

  Vec s = s0;
  double total = 0.0, w = 1.0;
  for (int t = 0; t < spec.horizon; ++t) {
    const Vec a = -(sol.gains[static_cast<std::size_t>(t)] * s);
    const StepResult step = env_step(spec, s, a);
    total += w * step.reward;
    if (t == spec.horizon - 1) {
      total += w * spec.gamma * terminal_reward(spec, step.next_state);
    }
    s = step.next_state;
    w *= spec.gamma;
  }
  REQUIRE(total == Catch::Approx(-s0.dot(sol.value * s0)).epsilon(1e-9));
}

TEST_CASE("no policy beats the riccati oracle on shared draws") {
  const EnvSpec spec = default_lqr_env();
  const LqrSolution sol = lqr_riccati(spec.lqr, spec.gamma, spec.horizon);
  RngStream policy_rng(15, 0);
  for (int c = 0; c < 5; ++c) {
    Mat W(1, 2);
    W << policy_rng.normal(), policy_rng.normal();
    for (int i = 0; i < 16; ++i) {
      RngStream r = RngStream(8, 0).child(static_cast<std::uint64_t>(i));
      const Vec s0 = env_reset(spec, r);
      Vec s = s0;
      double total = 0.0, w = 1.0;
      for (int t = 0; t < spec.horizon; ++t) {
        const Vec a = W * s;
        const StepResult step = env_step(spec, s, a);
        total += w * step.reward;
        if (t == spec.horizon - 1) {
          total += w * spec.gamma * terminal_reward(spec, step.next_state);
        }
        s = step.next_state;
        w *= spec.gamma;
      }
      REQUIRE(total <= -s0.dot(sol.value * s0) + 1e-9);
    }
  }
}

TEST_CASE("optimal return is at least the zero-policy return") {
  const EnvSpec spec = default_lqr_env();
  const RngStream rng(16, 0);
  const double oracle = lqr_optimal_return(spec, 32, rng);
  std::vector<double> zero_returns;
  for (int i = 0; i < 32; ++i) {
    RngStream r = rng.child(static_cast<std::uint64_t>(i));
    zero_returns.push_back(discounted_return(
        rollout(spec, constant_action(Vec::Zero(1)), r), spec.gamma));
  }
  REQUIRE(oracle >= tree_mean(zero_returns));
}

TEST_CASE("riccati oracle rejects non-PD cost matrices") {
  EnvSpec spec = default_lqr_env();
  spec.lqr.Q(0, 0) = -1.0;
  const RngStream rng(17, 0);
  REQUIRE_THROWS_AS(lqr_optimal_return(spec, 4, rng), std::invalid_argument);
}

TEST_CASE("pendulum dynamics stay in declared ranges") {
  const EnvSpec spec = default_pendulum_env();
  RngStream rng(18, 0);
  const ActionSampler swing = [](const Vec&, RngStream& r) {
    Vec a(1);
    a[0] = 2.0 * r.normal();
    return std::make_pair(a, a);
  };
  const Trajectory tr = rollout(spec, swing, rng);
  for (const auto& s : tr.states) {
    REQUIRE(std::abs(s[0]) <= M_PI + 1e-12);
    REQUIRE(std::abs(s[1]) <= spec.pendulum.max_speed);
  }
}
