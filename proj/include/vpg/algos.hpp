#pragma once

#include "vpg/envs.hpp"
#include "vpg/estimators.hpp"
#include "vpg/klengine.hpp"
#include "vpg/numcore.hpp"
#include "vpg/policy.hpp"
#include "vpg/transform.hpp"

#include <chrono>
#include <memory>
#include <optional>
#include <span>
#include <string>

namespace vpg {

// ---------------------------------------------------------------------------
// Algorithm configuration.
// ---------------------------------------------------------------------------

enum class FisherMode { kl_hessian, score_covariance };

struct TrpoConfig {
  double delta = 0.01;      // trust-region bound in nats
  int cg_iters = 10;
  double cg_damping = 0.1;
  int backtrack_steps = 10;
  FisherMode fisher_mode = FisherMode::kl_hessian;
  double eta = 1.0;         // proposal scale before the trust-region cap

  void validate() const {
    if (!(delta > 0.0)) throw std::invalid_argument("trpo: delta must be > 0");
    if (cg_iters < 1) throw std::invalid_argument("trpo: cg_iters must be >= 1");
    if (!(cg_damping > 0.0)) {
      throw std::invalid_argument("trpo: cg_damping must be > 0");
    }
    if (backtrack_steps < 0) {
      throw std::invalid_argument("trpo: backtrack_steps must be >= 0");
    }
  }
};

struct PpoConfig {
  double lambda_kl = 1.0;
  int inner_epochs = 4;
  double inner_step_size = 5e-4;

  void validate() const {
    if (!(lambda_kl > 0.0)) {
      throw std::invalid_argument("ppo: lambda_kl must be > 0");
    }
    if (inner_epochs < 1) {
      throw std::invalid_argument("ppo: inner_epochs must be >= 1");
    }
  }
};

struct TrainConfig {
  std::string algorithm = "vpg";  // vpg | trpo | ppo
  EnvSpec env = default_lqr_env();
  std::uint64_t seed = 1;

  int iterations = 200;
  int particles = 8;
  int rollouts_per_particle = 2;

  double step_size = 2e-3;
  double momentum = 0.5;
  double max_grad_norm = 10.0;  // 0 disables clipping
  double sigma0 = 0.1;

  std::string policy_kind = "mlp";  // mlp | simple | aux
  std::vector<int> policy_hidden;   // empty = linear policy
  int aux_theta_dim = 4;
  std::vector<int> aux_hidden = {16};
  double aux_step_size = 1e-3;

  int baseline_hidden = 16;
  int baseline_epochs = 25;
  double baseline_step = 0.1;

  AdvantageConfig adv;
  TemperatureSchedule schedule{0.1, 1.0, 1e-2, ScheduleMode::constant};
  TrpoConfig trpo;
  PpoConfig ppo;

  bool zero_rewards = false;  // repulsion-only runs

  void validate() const {
    if (algorithm != "vpg" && algorithm != "trpo" && algorithm != "ppo") {
      throw std::invalid_argument("train: unknown algorithm '" + algorithm +
                                  "'");
    }
    if (policy_kind != "mlp" && policy_kind != "simple" &&
        policy_kind != "aux") {
      throw std::invalid_argument("train: unknown policy kind '" +
                                  policy_kind + "'");
    }
    if (policy_kind == "aux" && algorithm != "vpg") {
      throw std::invalid_argument(
          "train: the auxiliary policy is supported with vpg only");
    }
    if (iterations < 0) throw std::invalid_argument("train: iterations < 0");
    if (particles < 1) throw std::invalid_argument("train: particles < 1");
    if (rollouts_per_particle < 1) {
      throw std::invalid_argument("train: rollouts_per_particle < 1");
    }
    env.validate();
    schedule.validate();
    trpo.validate();
    ppo.validate();
  }
};

// ---------------------------------------------------------------------------
// Surrogate, policy KL, Fisher-vector products.
// ---------------------------------------------------------------------------

// Importance-weighted advantage objective
// L(theta) = mean over trajectories of sum_t ratio_t A_t, with the ratio
// against the policy that collected the data.
inline double surrogate_loss(const Policy& prototype,
                             std::span<const Trajectory> trajs,
                             const Vec& theta_new, const Vec& theta_old,
                             std::span<const std::vector<double>> advantages) {
  if (trajs.empty()) {
    throw std::invalid_argument("surrogate_loss: empty trajectory set");
  }
  auto p_new = prototype.clone();
  auto p_old = prototype.clone();
  p_new->set_params(theta_new);
  p_old->set_params(theta_old);
  std::vector<double> per_traj;
  per_traj.reserve(trajs.size());
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    const Trajectory& tr = trajs[i];
    double acc = 0.0;
    for (int t = 0; t < tr.length(); ++t) {
      const auto& s = tr.states[static_cast<std::size_t>(t)];
      const auto& a = tr.actions[static_cast<std::size_t>(t)];
      const double log_ratio = log_prob(*p_new, s, a) - log_prob(*p_old, s, a);
      if (log_ratio > 30.0) {
        throw std::runtime_error("surrogate_loss: importance ratio overflow");
      }
      acc += std::exp(log_ratio) * advantages[i][static_cast<std::size_t>(t)];
    }
    per_traj.push_back(acc);
  }
  return tree_mean(std::move(per_traj));
}

// State-averaged exact Gaussian KL between the unit-covariance policies:
// mean over visited states of 0.5 ||mean_new(s) - mean_old(s)||^2.
inline double mean_policy_kl(const Policy& prototype,
                             std::span<const Vec> states,
                             const Vec& theta_new, const Vec& theta_old) {
  if (states.empty()) {
    throw std::invalid_argument("mean_policy_kl: no states");
  }
  auto p_new = prototype.clone();
  auto p_old = prototype.clone();
  p_new->set_params(theta_new);
  p_old->set_params(theta_old);
  std::vector<double> vals;
  vals.reserve(states.size());
  for (const Vec& s : states) {
    vals.push_back(0.5 * (p_new->mean(s) - p_old->mean(s)).squaredNorm());
  }
  return tree_mean(std::move(vals));
}

inline std::vector<Vec> gather_states(std::span<const Trajectory> trajs) {
  std::vector<Vec> states;
  for (const Trajectory& tr : trajs) {
    states.insert(states.end(), tr.states.begin(), tr.states.end());
  }
  return states;
}

// (H + damping I) v at theta, averaged over the given states.
//
// kl_hessian mode uses the exact curvature of the unit-Gaussian policy KL
// at theta: per state J^T J with J = d mean / d theta, which for the
// mean-equals-theta policy reduces to the identity.  score_covariance mode
// estimates E[score score^T] v from sampled actions.
inline Vec fisher_vector_product(const Policy& prototype,
                                 std::span<const Vec> states, const Vec& theta,
                                 const Vec& v, FisherMode mode, double damping,
                                 RngStream* rng = nullptr,
                                 int samples_per_state = 1) {
  if (states.empty()) {
    throw std::invalid_argument("fisher_vector_product: no states");
  }
  if (v.size() != theta.size()) {
    throw std::invalid_argument("fisher_vector_product: bad v length");
  }
  auto p = prototype.clone();
  p->set_params(theta);
  std::vector<Vec> terms;
  if (mode == FisherMode::kl_hessian) {
    terms.reserve(states.size());
    for (const Vec& s : states) {
      terms.push_back(p->mean_param_vjp(s, p->mean_param_jvp(s, v)));
    }
  } else {
    if (rng == nullptr) {
      throw std::invalid_argument(
          "fisher_vector_product: score_covariance mode needs an rng");
    }
    terms.reserve(states.size() * static_cast<std::size_t>(samples_per_state));
    for (const Vec& s : states) {
      for (int j = 0; j < samples_per_state; ++j) {
        const Vec zeta = rng->normal_vec(p->action_dim());
        const Vec score = p->mean_param_vjp(s, zeta);
        terms.push_back(score.dot(v) * score);
      }
    }
  }
  return tree_mean(std::move(terms)) + damping * v;
}

struct CgResult {
  Vec x;
  int iterations = 0;
  bool converged = false;
};

inline CgResult conjugate_gradient(const std::function<Vec(const Vec&)>& Av,
                                   const Vec& b, int max_iters,
                                   double tol = 1e-10) {
  Vec x = Vec::Zero(b.size());
  Vec r = b;
  Vec p = r;
  double rs = r.squaredNorm();
  const double stop = tol * std::max(1.0, b.squaredNorm());
  CgResult out;
  for (int i = 0; i < max_iters; ++i) {
    if (rs <= stop) {
      out.converged = true;
      break;
    }
    const Vec Ap = Av(p);
    const double denom = p.dot(Ap);
    if (!(denom > 0.0)) break;  // lost positive-definiteness
    const double alpha = rs / denom;
    x += alpha * p;
    r -= alpha * Ap;
    const double rs_new = r.squaredNorm();
    p = r + (rs_new / rs) * p;
    rs = rs_new;
    out.iterations = i + 1;
  }
  if (rs <= stop) out.converged = true;
  out.x = std::move(x);
  return out;
}

// J_ppo(theta) = L(theta) - lambda * mean KL(pi_old, pi_theta).
inline double ppo_objective(const Policy& prototype,
                            std::span<const Trajectory> trajs,
                            const Vec& theta_new, const Vec& theta_old,
                            std::span<const std::vector<double>> advantages,
                            double lambda_kl) {
  const double L =
      surrogate_loss(prototype, trajs, theta_new, theta_old, advantages);
  const std::vector<Vec> states = gather_states(trajs);
  return L - lambda_kl * mean_policy_kl(prototype, states, theta_new,
                                        theta_old);
}

// ---------------------------------------------------------------------------
// Batches and training state.
// ---------------------------------------------------------------------------

struct ParticleBatch {
  std::vector<Vec> xis;
  std::vector<Vec> thetas;
  std::vector<std::vector<Trajectory>> trajs;             // [particle][episode]
  std::vector<std::vector<std::vector<double>>> advantages;
  std::vector<double> episode_returns;
  std::vector<Vec> states;  // all visited states across the batch

  int particles() const { return static_cast<int>(xis.size()); }

  std::vector<Trajectory> trajs_flat() const {
    std::vector<Trajectory> flat;
    for (const auto& per : trajs) {
      flat.insert(flat.end(), per.begin(), per.end());
    }
    return flat;
  }
};

struct TrainState {
  AffineTransform transform = AffineTransform::standard(1);
  std::unique_ptr<Policy> policy;  // prototype; params set per particle
  ValueBaseline baseline = ValueBaseline::zero(1);
  Vec velocity;                    // momentum buffer on phi
  int iteration = 0;
};

struct StepInfo {
  double grad_norm = 0.0;
  double mean_log_det = 0.0;
  bool trpo_accepted = false;
  bool cg_fallback = false;
  bool inner_aborted = false;
  double measured_kl = 0.0;  // realized mean policy KL of the update
};

struct IterationMetrics {
  int iteration = 0;
  double alpha = 0.0;
  double mean_return = 0.0;
  double policy_kl = 0.0;
  double grad_norm = 0.0;
  double mean_log_det = 0.0;
  double wall_seconds = 0.0;
  bool trpo_accepted = false;
  bool cg_fallback = false;
  bool inner_aborted = false;
};

struct TrainResult {
  TrainState state;
  std::vector<IterationMetrics> metrics;
  bool aborted = false;
  int aborted_at = -1;
};

inline std::unique_ptr<Policy> make_policy(const TrainConfig& cfg,
                                           RngStream& rng) {
  const int sd = cfg.env.state_dim;
  const int ad = cfg.env.action_dim;
  if (cfg.policy_kind == "simple") {
    return std::make_unique<SimplePolicy>(ad);
  }
  if (cfg.policy_kind == "mlp") {
    std::vector<int> widths{sd};
    widths.insert(widths.end(), cfg.policy_hidden.begin(),
                  cfg.policy_hidden.end());
    widths.push_back(ad);
    const MlpSpec spec = make_mlp_spec(widths, Activation::tanh);
    // Linear policies start at zero; hidden layers need symmetry breaking.
    ShapedParams params = cfg.policy_hidden.empty()
                              ? make_mlp_params(spec)
                              : init_mlp_params(spec, rng);
    return std::make_unique<MlpPolicy>(spec, std::move(params));
  }
  std::vector<int> widths{cfg.aux_theta_dim + sd};
  widths.insert(widths.end(), cfg.aux_hidden.begin(), cfg.aux_hidden.end());
  widths.push_back(ad);
  const MlpSpec spec = make_mlp_spec(widths, Activation::tanh);
  return std::make_unique<AuxPolicy>(spec, init_mlp_params(spec, rng),
                                     cfg.aux_theta_dim);
}

inline TrainState init_train_state(const TrainConfig& cfg) {
  cfg.validate();
  TrainState st;
  RngStream init_rng(cfg.seed, 0x1717);
  st.policy = make_policy(cfg, init_rng);
  const int theta_dim = st.policy->param_dim();
  st.transform = AffineTransform(
      st.policy->params(),
      Vec::Constant(theta_dim, std::log(cfg.sigma0)));
  st.baseline = ValueBaseline::zero(cfg.env.state_dim, cfg.baseline_hidden);
  st.velocity = Vec::Zero(st.transform.param_dim());
  return st;
}

inline ParticleBatch collect_batch(const TrainConfig& cfg, TrainState& st,
                                   RngStream& iter_rng) {
  ParticleBatch batch;
  const BaseDensity base{st.transform.dim()};
  for (int k = 0; k < cfg.particles; ++k) {
    RngStream pk = iter_rng.child(static_cast<std::uint64_t>(k));
    Vec xi = base.sample(pk);
    Vec theta = st.transform.forward(xi);
    st.policy->set_params(theta);
    std::vector<Trajectory> trs;
    for (int j = 0; j < cfg.rollouts_per_particle; ++j) {
      RngStream rj = pk.child(static_cast<std::uint64_t>(j) + 1);
      trs.push_back(rollout(cfg.env, make_action_sampler(*st.policy), rj));
      if (cfg.zero_rewards) {
        for (double& r : trs.back().rewards) r = 0.0;
      }
      batch.episode_returns.push_back(
          discounted_return(trs.back(), cfg.adv.gamma));
      batch.states.insert(batch.states.end(), trs.back().states.begin(),
                          trs.back().states.end());
    }
    batch.xis.push_back(std::move(xi));
    batch.thetas.push_back(std::move(theta));
    batch.trajs.push_back(std::move(trs));
  }
  // Advantages with the current baseline, normalized across the whole batch.
  for (int k = 0; k < cfg.particles; ++k) {
    batch.advantages.push_back(compute_advantages(
        batch.trajs[static_cast<std::size_t>(k)], st.baseline, cfg.adv));
  }
  if (cfg.adv.normalize) {
    std::vector<std::vector<double>> flat;
    for (auto& per : batch.advantages) {
      for (auto& a : per) flat.push_back(std::move(a));
    }
    normalize_advantages(flat);
    std::size_t idx = 0;
    for (auto& per : batch.advantages) {
      for (auto& a : per) a = std::move(flat[idx++]);
    }
  }
  return batch;
}

namespace detail {

inline Vec clip_norm(Vec g, double max_norm) {
  if (max_norm > 0.0) {
    const double n = g.norm();
    if (n > max_norm) g *= max_norm / n;
  }
  return g;
}

// Per-particle (1/alpha) dR/dtheta estimates; adds the standard-normal
// prior score for the auxiliary policy, whose posterior is
// p0(theta) exp(R/alpha).
inline std::vector<Vec> particle_target_grads(const TrainConfig& cfg,
                                              TrainState& st,
                                              const ParticleBatch& batch,
                                              double alpha) {
  const double scale = std::isinf(alpha) ? 0.0 : 1.0 / alpha;
  std::vector<Vec> grads;
  grads.reserve(batch.xis.size());
  for (int k = 0; k < batch.particles(); ++k) {
    st.policy->set_params(batch.thetas[static_cast<std::size_t>(k)]);
    Vec g = scale * policy_gradient(
                        batch.trajs[static_cast<std::size_t>(k)], *st.policy,
                        batch.advantages[static_cast<std::size_t>(k)]);
    if (cfg.policy_kind == "aux") {
      g -= batch.thetas[static_cast<std::size_t>(k)];
    }
    grads.push_back(std::move(g));
  }
  return grads;
}

inline KlGradEstimate chain_through_transform(const TrainState& st,
                                              const ParticleBatch& batch,
                                              const std::vector<Vec>& grads) {
  return kl_gradient_on(st.transform, batch.xis,
                        [&](const Vec&, int k) {
                          return TargetSample{
                              grads[static_cast<std::size_t>(k)], 0.0};
                        });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Variational REINFORCE: one first-order step on the Eq-2-style gradient
// with the policy-gradient estimate standing in for d log p / d theta.
// ---------------------------------------------------------------------------

inline StepInfo vpg_step(const TrainConfig& cfg, TrainState& st,
                         const ParticleBatch& batch, double alpha) {
  const std::vector<Vec> grads =
      detail::particle_target_grads(cfg, st, batch, alpha);
  const KlGradEstimate est =
      detail::chain_through_transform(st, batch, grads);
  const Vec clipped =
      detail::clip_norm(est.grad_phi.data(), cfg.max_grad_norm);
  st.velocity = cfg.momentum * st.velocity + clipped;
  st.transform.set_params(st.transform.params().data() -
                          cfg.step_size * st.velocity);

  if (cfg.policy_kind == "aux") {
    auto* aux = dynamic_cast<AuxPolicy*>(st.policy.get());
    std::vector<Vec> psi_grads;
    for (int k = 0; k < batch.particles(); ++k) {
      aux->set_params(batch.thetas[static_cast<std::size_t>(k)]);
      psi_grads.push_back(aux_psi_gradient(
          *aux, batch.trajs[static_cast<std::size_t>(k)],
          batch.advantages[static_cast<std::size_t>(k)]));
    }
    const Vec psi_grad = tree_mean(std::move(psi_grads));
    aux->set_psi(aux->psi().data() + cfg.aux_step_size * psi_grad);
  }

  StepInfo info;
  info.grad_norm = clipped.norm();
  info.mean_log_det = est.diagnostics.mean_log_det;
  return info;
}

// ---------------------------------------------------------------------------
// Variational TRPO: natural-gradient preconditioning in theta space, a
// trust-region rescale of the quadratic KL estimate, and a halving line
// search on surrogate improvement and measured policy KL.
// ---------------------------------------------------------------------------

inline StepInfo trpo_variational_step(const TrainConfig& cfg, TrainState& st,
                                      const ParticleBatch& batch,
                                      double alpha, RngStream& rng) {
  const TrpoConfig& tc = cfg.trpo;
  const Vec phi_old = st.transform.params().data();
  const Vec theta_bar = st.transform.mu();  // realized evaluation policy
  const double scale = std::isinf(alpha) ? 0.0 : 1.0 / alpha;

  RngStream fisher_rng = rng.child(0xf15);
  const auto fvp_damped = [&](const Vec& v) {
    return fisher_vector_product(*st.policy, batch.states, theta_bar, v,
                                 tc.fisher_mode, tc.cg_damping, &fisher_rng,
                                 4);
  };

  StepInfo info;
  std::vector<Vec> grads;
  grads.reserve(batch.xis.size());
  for (int k = 0; k < batch.particles(); ++k) {
    st.policy->set_params(batch.thetas[static_cast<std::size_t>(k)]);
    const Vec pg = policy_gradient(
        batch.trajs[static_cast<std::size_t>(k)], *st.policy,
        batch.advantages[static_cast<std::size_t>(k)]);
    const CgResult cg = conjugate_gradient(fvp_damped, pg, tc.cg_iters);
    if (cg.converged || cg.iterations > 0) {
      grads.push_back(scale * cg.x);
      info.cg_fallback |= !cg.converged;
    } else {
      grads.push_back(scale * pg);  // CG made no progress at all
      info.cg_fallback = true;
    }
  }
  const KlGradEstimate est =
      detail::chain_through_transform(st, batch, grads);
  info.grad_norm = est.grad_phi.data().norm();
  info.mean_log_det = est.diagnostics.mean_log_det;

  Vec step = -tc.eta * est.grad_phi.data();

  // Quadratic KL estimate of the realized-policy change; rescale the whole
  // phi step so it stays within delta.
  const int theta_dim = st.transform.dim();
  const Vec step_mu = step.head(theta_dim);
  const Vec h_step = fisher_vector_product(*st.policy, batch.states,
                                           theta_bar, step_mu, tc.fisher_mode,
                                           0.0, &fisher_rng, 4);
  const double quad_kl = 0.5 * step_mu.dot(h_step);
  if (quad_kl > tc.delta && quad_kl > 0.0) {
    step *= std::sqrt(tc.delta / quad_kl);
  }

  const auto batch_surrogate = [&](const Vec& theta) {
    std::vector<double> per_particle;
    for (int k = 0; k < batch.particles(); ++k) {
      per_particle.push_back(surrogate_loss(
          *st.policy, batch.trajs[static_cast<std::size_t>(k)], theta,
          batch.thetas[static_cast<std::size_t>(k)],
          batch.advantages[static_cast<std::size_t>(k)]));
    }
    return tree_mean(std::move(per_particle));
  };

  double surrogate_old = 0.0;
  try {
    surrogate_old = batch_surrogate(theta_bar);
  } catch (const std::runtime_error&) {
    return info;  // behavior policies already inconsistent; keep phi
  }

  double frac = 1.0;
  for (int i = 0; i <= tc.backtrack_steps; ++i, frac *= 0.5) {
    const Vec cand = phi_old + frac * step;
    const Vec cand_mu = cand.head(theta_dim);
    const double measured =
        mean_policy_kl(*st.policy, batch.states, cand_mu, theta_bar);
    if (measured > tc.delta) continue;
    double surrogate_new = 0.0;
    try {
      surrogate_new = batch_surrogate(cand_mu);
    } catch (const std::runtime_error&) {
      continue;  // ratio overflow at this scale
    }
    if (surrogate_new >= surrogate_old) {
      st.transform.set_params(cand);
      info.trpo_accepted = true;
      info.measured_kl = measured;
      return info;
    }
  }
  return info;  // zero step
}

// ---------------------------------------------------------------------------
// Variational PPO: inner first-order epochs on the KL-penalized surrogate,
// with theta reparameterized through the current transform at fixed xi.
// ---------------------------------------------------------------------------

inline StepInfo ppo_variational_step(const TrainConfig& cfg, TrainState& st,
                                     const ParticleBatch& batch,
                                     double alpha) {
  const PpoConfig& pc = cfg.ppo;
  const double scale = std::isinf(alpha) ? 0.0 : 1.0 / alpha;
  StepInfo info;
  auto current = st.policy->clone();
  auto behavior = st.policy->clone();
  for (int epoch = 0; epoch < pc.inner_epochs; ++epoch) {
    std::vector<Vec> grads;
    grads.reserve(batch.xis.size());
    bool aborted = false;
    for (int k = 0; k < batch.particles() && !aborted; ++k) {
      const Vec theta_cur =
          st.transform.forward(batch.xis[static_cast<std::size_t>(k)]);
      const Vec& theta_beh = batch.thetas[static_cast<std::size_t>(k)];
      current->set_params(theta_cur);
      behavior->set_params(theta_beh);

      // d/d theta of the importance surrogate at theta_cur.
      Vec g = Vec::Zero(st.policy->param_dim());
      const auto& trs = batch.trajs[static_cast<std::size_t>(k)];
      const auto& advs = batch.advantages[static_cast<std::size_t>(k)];
      std::vector<Vec> per_traj;
      for (std::size_t i = 0; i < trs.size() && !aborted; ++i) {
        Vec gt = Vec::Zero(st.policy->param_dim());
        for (int t = 0; t < trs[i].length(); ++t) {
          const auto& s = trs[i].states[static_cast<std::size_t>(t)];
          const auto& a = trs[i].actions[static_cast<std::size_t>(t)];
          const double log_ratio =
              log_prob(*current, s, a) - log_prob(*behavior, s, a);
          if (log_ratio > 30.0) {
            aborted = true;
            break;
          }
          gt += std::exp(log_ratio) *
                advs[i][static_cast<std::size_t>(t)] *
                score_inverse_form(*current, s, a);
        }
        per_traj.push_back(std::move(gt));
      }
      if (aborted) break;
      g = tree_mean(std::move(per_traj));

      // KL(pi_old, pi_theta) gradient over the particle's visited states.
      std::vector<Vec> kl_terms;
      for (const auto& tr : trs) {
        for (const auto& s : tr.states) {
          kl_terms.push_back(current->mean_param_vjp(
              s, current->mean(s) - behavior->mean(s)));
        }
      }
      g -= pc.lambda_kl * tree_mean(std::move(kl_terms));
      grads.push_back(scale * g);
    }
    if (aborted) {
      info.inner_aborted = true;
      break;
    }
    const KlGradEstimate est =
        detail::chain_through_transform(st, batch, grads);
    const Vec clipped =
        detail::clip_norm(est.grad_phi.data(), cfg.max_grad_norm);
    st.transform.set_params(st.transform.params().data() -
                            pc.inner_step_size * clipped);
    info.grad_norm = clipped.norm();
    info.mean_log_det = est.diagnostics.mean_log_det;
  }
  return info;
}

// ---------------------------------------------------------------------------
// The training loop.
// ---------------------------------------------------------------------------

inline TrainResult train(const TrainConfig& cfg) {
  cfg.validate();
  TrainResult result;
  result.state = init_train_state(cfg);
  TrainState& st = result.state;
  RngStream root(cfg.seed, 0);

  for (int iter = 0; iter < cfg.iterations; ++iter) {
    const auto t0 = std::chrono::steady_clock::now();
    const double alpha = alpha_at(cfg.schedule, iter);
    RngStream iter_rng = root.child(static_cast<std::uint64_t>(iter) + 1);

    const Vec phi_before = st.transform.params().data();
    const Vec mu_before = st.transform.mu();
    ParticleBatch batch = collect_batch(cfg, st, iter_rng);

    StepInfo step;
    if (cfg.algorithm == "vpg") {
      step = vpg_step(cfg, st, batch, alpha);
    } else if (cfg.algorithm == "trpo") {
      RngStream trpo_rng = iter_rng.child(0x7290);
      step = trpo_variational_step(cfg, st, batch, alpha, trpo_rng);
    } else {
      step = ppo_variational_step(cfg, st, batch, alpha);
    }

    if (!all_finite(st.transform.params().data())) {
      st.transform.set_params(phi_before);  // keep the last good state
      result.aborted = true;
      result.aborted_at = iter;
      break;
    }

    st.baseline = fit_baseline(std::move(st.baseline), batch.trajs_flat(),
                               cfg.adv.gamma, cfg.baseline_epochs,
                               cfg.baseline_step);

    IterationMetrics m;
    m.iteration = iter;
    m.alpha = alpha;
    m.mean_return = tree_mean(batch.episode_returns);
    m.policy_kl = mean_policy_kl(*st.policy, batch.states,
                                 st.transform.mu(), mu_before);
    m.grad_norm = step.grad_norm;
    m.mean_log_det = step.mean_log_det;
    m.trpo_accepted = step.trpo_accepted;
    m.cg_fallback = step.cg_fallback;
    m.inner_aborted = step.inner_aborted;
    m.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    result.metrics.push_back(m);
    st.iteration = iter + 1;
  }
  return result;
}

// Deterministic evaluation: zero action noise at the posterior-mean
// parameters (mode == "mean"), or the stochastic posterior policy
// (mode == "posterior").  Episode i draws its streams from rng.child(i).
struct EvalResult {
  double mean_return = 0.0;
  double std_error = 0.0;
  int episodes = 0;
};

inline EvalResult evaluate_policy(const EnvSpec& env, const Policy& prototype,
                                  const AffineTransform& posterior,
                                  int episodes, const RngStream& rng,
                                  const std::string& mode = "mean") {
  auto policy = prototype.clone();
  const BaseDensity base{posterior.dim()};
  std::vector<double> returns;
  returns.reserve(static_cast<std::size_t>(episodes));
  for (int i = 0; i < episodes; ++i) {
    RngStream r = rng.child(static_cast<std::uint64_t>(i));
    if (mode == "posterior") {
      RngStream theta_rng = r.child(0x7e7a);
      policy->set_params(posterior.forward(base.sample(theta_rng)));
      returns.push_back(
          discounted_return(rollout(env, make_action_sampler(*policy), r),
                            env.gamma));
    } else {
      policy->set_params(posterior.mu());
      const ActionSampler act = [&](const Vec& s, RngStream&) {
        return std::make_pair(policy->mean(s), Vec::Zero(policy->action_dim()));
      };
      returns.push_back(discounted_return(rollout(env, act, r), env.gamma));
    }
  }
  EvalResult out;
  out.episodes = episodes;
  out.mean_return = tree_mean(returns);
  double ss = 0.0;
  for (double v : returns) ss += (v - out.mean_return) * (v - out.mean_return);
  out.std_error = episodes > 1
                      ? std::sqrt(ss / (episodes - 1)) / std::sqrt(episodes)
                      : 0.0;
  return out;
}

}  // namespace vpg
