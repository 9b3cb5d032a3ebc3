#pragma once

#include "vpg/envs.hpp"
#include "vpg/estimators.hpp"
#include "vpg/numcore.hpp"
#include "vpg/policy.hpp"
#include "vpg/transform.hpp"

#include <functional>
#include <memory>
#include <span>

namespace vpg {

// ---------------------------------------------------------------------------
// Targets.
//
// A target supplies d/d theta log p(theta) up to the (never computed)
// normalizing constant.  Density targets wrap closed-form callbacks; RL
// targets estimate (1/alpha) dR/d theta by rolling out the policy that
// theta parameterizes, so that p(theta) ~ exp(R(theta)/alpha).
// ---------------------------------------------------------------------------

struct TargetSample {
  Vec grad_log_prob;   // d/d theta log p(theta), up to a constant
  double value = 0.0;  // log p(theta) up to a constant, or mean return
};

struct Target {
  std::function<TargetSample(const Vec& theta, RngStream& rng)> eval;
  // Log density up to the normalizer; present for density targets, used by
  // KL traces.  Empty for RL targets.
  std::function<double(const Vec& theta)> log_prob;
  double alpha = 1.0;
  bool is_rl = false;
};

inline Target make_density_target(
    std::function<double(const Vec&)> log_prob,
    std::function<Vec(const Vec&)> grad_log_prob) {
  Target t;
  t.log_prob = log_prob;
  t.eval = [log_prob, grad_log_prob](const Vec& theta, RngStream&) {
    return TargetSample{grad_log_prob(theta), log_prob(theta)};
  };
  return t;
}

struct RlTargetConfig {
  EnvSpec env;
  AdvantageConfig adv;
  int rollouts_per_particle = 2;
  double alpha = 1.0;
};

inline ActionSampler make_action_sampler(const Policy& policy) {
  return [&policy](const Vec& s, RngStream& rng) {
    return sample_action(policy, s, rng);
  };
}

// Rolls out pi_theta and returns (1/alpha) times the likelihood-ratio
// policy-gradient estimate; `value` reports the mean discounted return.
inline Target make_rl_target(const RlTargetConfig& cfg,
                             const Policy& prototype,
                             const ValueBaseline& baseline) {
  auto policy = std::shared_ptr<Policy>(prototype.clone());
  auto base = std::make_shared<ValueBaseline>(baseline);
  const RlTargetConfig c = cfg;
  Target t;
  t.alpha = cfg.alpha;
  t.is_rl = true;
  t.eval = [policy, base, c](const Vec& theta, RngStream& rng) {
    policy->set_params(theta);
    std::vector<Trajectory> trajs;
    trajs.reserve(static_cast<std::size_t>(c.rollouts_per_particle));
    std::vector<double> returns;
    for (int j = 0; j < c.rollouts_per_particle; ++j) {
      RngStream r = rng.child(static_cast<std::uint64_t>(j));
      trajs.push_back(rollout(c.env, make_action_sampler(*policy), r));
      returns.push_back(discounted_return(trajs.back(), c.adv.gamma));
    }
    auto advs = compute_advantages(trajs, *base, c.adv);
    if (c.adv.normalize) normalize_advantages(advs);
    const Vec pg = policy_gradient(trajs, *policy, advs);
    const double scale = std::isinf(c.alpha) ? 0.0 : 1.0 / c.alpha;
    return TargetSample{scale * pg, tree_mean(std::move(returns))};
  };
  return t;
}

// ---------------------------------------------------------------------------
// KL gradient through the transformation.
//
// dKL/dphi = -E_xi [ d log p(h_phi(xi))/d phi + d/d phi log det J(xi) ].
// The returned gradient is the descent direction on KL(q_phi || p).
// ---------------------------------------------------------------------------

struct KlDiagnostics {
  double mean_log_det = 0.0;
  double mean_target_value = 0.0;  // mean log p (density) or mean return (rl)
  int particles = 0;
};

struct KlGradEstimate {
  ShapedParams grad_phi;  // dKL/dphi laid out like the transform parameters
  KlDiagnostics diagnostics;
};

// Deterministic core over a fixed xi batch.  target_at(theta, k) supplies
// the particle's target gradient and value; the particle reduction is a
// fixed-order pairwise tree, so results never depend on the schedule.
inline KlGradEstimate kl_gradient_on(
    const Transform& t, std::span<const Vec> xis,
    const std::function<TargetSample(const Vec&, int)>& target_at) {
  if (xis.empty()) throw std::invalid_argument("kl_gradient: no particles");
  const int n = static_cast<int>(xis.size());
  std::vector<Vec> contributions;
  contributions.reserve(xis.size());
  std::vector<double> log_dets, values;
  for (int k = 0; k < n; ++k) {
    const Vec& xi = xis[static_cast<std::size_t>(k)];
    const Vec theta = t.forward(xi);
    const TargetSample ts = target_at(theta, k);
    if (!all_finite(ts.grad_log_prob)) {
      throw std::runtime_error(
          "kl_gradient: non-finite target gradient at particle " +
          std::to_string(k));
    }
    contributions.push_back(
        -(t.param_vjp(xi, ts.grad_log_prob) + t.log_det_param_grad(xi)));
    log_dets.push_back(t.log_det_jacobian(xi));
    values.push_back(ts.value);
  }
  KlGradEstimate est{ShapedParams(t.params().manifest(),
                                  tree_mean(std::move(contributions))),
                     {tree_mean(std::move(log_dets)),
                      tree_mean(std::move(values)), n}};
  return est;
}

inline KlGradEstimate kl_gradient(const Transform& t, const Target& target,
                                  int n_particles, RngStream& rng) {
  if (n_particles < 1) {
    throw std::invalid_argument("kl_gradient: n_particles < 1");
  }
  const BaseDensity base{t.dim()};
  std::vector<Vec> xis;
  xis.reserve(static_cast<std::size_t>(n_particles));
  std::vector<RngStream> streams;
  for (int k = 0; k < n_particles; ++k) {
    RngStream r = rng.child(static_cast<std::uint64_t>(k));
    xis.push_back(base.sample(r));
    streams.push_back(r.child(0));
  }
  return kl_gradient_on(t, xis, [&](const Vec& theta, int k) {
    return target.eval(theta, streams[static_cast<std::size_t>(k)]);
  });
}

// ---------------------------------------------------------------------------
// Mean-field closed form for theta_i = mu_i + sigma_i xi_i (single sample):
//   -dKL/dmu_i    = (1/alpha) dR/dtheta_i
//   -dKL/dsigma_i = (1/alpha) xi_i dR/dtheta_i + 1/sigma_i
// Returned as ascent directions in (mu, sigma) units.
// ---------------------------------------------------------------------------

struct MeanFieldGrad {
  Vec grad_mu;
  Vec grad_sigma;
};

inline MeanFieldGrad meanfield_kl_gradient(const AffineTransform& t,
                                           const Vec& dR_dtheta,
                                           const Vec& xi, double alpha) {
  if (dR_dtheta.size() != t.dim() || xi.size() != t.dim()) {
    throw std::invalid_argument("meanfield_kl_gradient: dimension mismatch");
  }
  if (!(alpha > 0.0)) {
    throw std::invalid_argument("meanfield_kl_gradient: alpha must be > 0");
  }
  const double scale = std::isinf(alpha) ? 0.0 : 1.0 / alpha;
  MeanFieldGrad g;
  g.grad_mu = scale * dR_dtheta;
  g.grad_sigma =
      scale * xi.cwiseProduct(dR_dtheta) + t.sigma().cwiseInverse();
  return g;
}

// ---------------------------------------------------------------------------
// Temperature schedule: alpha(t) = max(floor, alpha0 * decay^t).
// ---------------------------------------------------------------------------

enum class ScheduleMode { constant, geometric };

struct TemperatureSchedule {
  double alpha0 = 1.0;
  double decay = 1.0;    // in (0,1]
  double floor = 1e-2;   // > 0
  ScheduleMode mode = ScheduleMode::constant;

  void validate() const {
    if (!(alpha0 > 0.0)) {
      throw std::invalid_argument("TemperatureSchedule: alpha0 must be > 0");
    }
    if (!(decay > 0.0 && decay <= 1.0)) {
      throw std::invalid_argument(
          "TemperatureSchedule: decay must be in (0,1]");
    }
    if (!(floor > 0.0)) {
      throw std::invalid_argument("TemperatureSchedule: floor must be > 0");
    }
  }
};

inline double alpha_at(const TemperatureSchedule& sched, int step) {
  if (step < 0) throw std::invalid_argument("alpha_at: step < 0");
  sched.validate();
  if (sched.mode == ScheduleMode::constant) return sched.alpha0;
  return std::max(sched.floor, sched.alpha0 * std::pow(sched.decay, step));
}

// ---------------------------------------------------------------------------
// Density fitting by stochastic descent on the KL gradient.
// ---------------------------------------------------------------------------

struct FitDensityResult {
  std::vector<double> kl_trace;   // E_q[log q - log p], up to p's normalizer
  std::vector<Vec> param_trace;   // phi snapshots, one per trace entry
  int steps_taken = 0;
};

// Estimates KL(q||p) up to p's log-normalizer with fresh base draws:
// log q(theta_k) falls out of the sampled xi via the log-det.
inline double estimate_kl(const Transform& t, const Target& target,
                          int n_samples, RngStream& rng) {
  if (!target.log_prob) {
    throw std::invalid_argument("estimate_kl: target has no log_prob");
  }
  const BaseDensity base{t.dim()};
  std::vector<double> vals;
  vals.reserve(static_cast<std::size_t>(n_samples));
  for (int k = 0; k < n_samples; ++k) {
    const Vec xi = base.sample(rng);
    const Vec theta = t.forward(xi);
    const double log_q = base.log_pdf(xi) - t.log_det_jacobian(xi);
    vals.push_back(log_q - target.log_prob(theta));
  }
  return tree_mean(std::move(vals));
}

struct FitDensityOptions {
  int steps = 2000;
  double step_size = 0.05;
  int n_particles = 32;
  double momentum = 0.0;
  int trace_every = 10;
  int kl_samples = 256;
};

inline FitDensityResult fit_density(Transform& t, const Target& target,
                                    const FitDensityOptions& opt,
                                    RngStream& rng) {
  if (!target.log_prob) {
    throw std::invalid_argument("fit_density: target must be a density");
  }
  FitDensityResult out;
  Vec velocity = Vec::Zero(t.param_dim());
  for (int step = 0; step < opt.steps; ++step) {
    RngStream step_rng = rng.child(static_cast<std::uint64_t>(step));
    const KlGradEstimate est =
        kl_gradient(t, target, opt.n_particles, step_rng);
    velocity = opt.momentum * velocity + est.grad_phi.data();
    Vec phi = t.params().data() - opt.step_size * velocity;
    if (!all_finite(phi)) {
      throw std::runtime_error("fit_density: diverged at step " +
                               std::to_string(step));
    }
    t.set_params(phi);
    if (step % opt.trace_every == 0 || step == opt.steps - 1) {
      RngStream kl_rng = step_rng.child(0x7e5);
      out.kl_trace.push_back(estimate_kl(t, target, opt.kl_samples, kl_rng));
      out.param_trace.push_back(phi);
    }
    out.steps_taken = step + 1;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Quadrature helpers (1-D), used for normalized KL reporting on low-dim
// density targets.
// ---------------------------------------------------------------------------

inline double trapezoid(const std::function<double(double)>& f, double lo,
                        double hi, int n) {
  if (n < 2) throw std::invalid_argument("trapezoid: n < 2");
  const double h = (hi - lo) / (n - 1);
  double acc = 0.5 * (f(lo) + f(hi));
  for (int i = 1; i < n - 1; ++i) acc += f(lo + i * h);
  return acc * h;
}

// KL(q||p) for normalized 1-D log densities on [lo, hi].
inline double quadrature_kl_1d(const std::function<double(double)>& log_q,
                               const std::function<double(double)>& log_p,
                               double lo, double hi, int n) {
  return trapezoid(
      [&](double x) {
        const double lq = log_q(x);
        const double q = std::exp(lq);
        return q > 0.0 ? q * (lq - log_p(x)) : 0.0;
      },
      lo, hi, n);
}

}  // namespace vpg
