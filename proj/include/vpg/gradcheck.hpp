#pragma once

#include "vpg/klengine.hpp"
#include "vpg/numcore.hpp"
#include "vpg/policy.hpp"
#include "vpg/transform.hpp"

#include <string>
#include <vector>

namespace vpg {

// Finite-difference audits of every analytic gradient in the library.
// Each suite runs `cases` randomized configurations and reports the worst
// relative error; they all must sit below 1e-5 in double precision.

struct GradCheckReport {
  std::string suite;
  double worst_rel_error = 0.0;
  int cases = 0;
  bool passed = false;
};

namespace gradcheck {

constexpr double kTol = 1e-5;
constexpr double kEps = 1e-5;

inline MlpSpec random_spec(RngStream& rng, int max_width = 5) {
  const int layers = 1 + static_cast<int>(rng.next_u64() % 3);
  std::vector<int> widths;
  for (int i = 0; i <= layers; ++i) {
    widths.push_back(1 + static_cast<int>(rng.next_u64() %
                                          static_cast<std::uint64_t>(max_width)));
  }
  std::vector<Activation> acts;
  for (int i = 0; i < layers; ++i) {
    const auto pick = rng.next_u64() % 3;
    acts.push_back(pick == 0 ? Activation::identity
                             : pick == 1 ? Activation::tanh
                                         : Activation::sigmoid);
  }
  return MlpSpec{widths, acts};
}

// d/d params of output . g against central differences.
inline GradCheckReport mlp_backward_suite(int cases, std::uint64_t seed) {
  GradCheckReport rep{"mlp_backward", 0.0, cases, false};
  RngStream rng(seed, 0xa1);
  for (int c = 0; c < cases; ++c) {
    const MlpSpec spec = random_spec(rng);
    ShapedParams params = init_mlp_params(spec, rng);
    const Vec x = rng.normal_vec(spec.input_dim());
    const Vec g = rng.normal_vec(spec.output_dim());
    auto [pgrad, igrad] = mlp_backward(spec, params, x, g);
    const auto f = [&](const Vec& p) {
      return mlp_forward(spec, ShapedParams(params.manifest(), p), x).dot(g);
    };
    const Vec fd = finite_diff_grad(f, params.data(), kEps);
    rep.worst_rel_error =
        std::max(rep.worst_rel_error, max_relative_error(pgrad.data(), fd));
    const auto fx = [&](const Vec& xin) {
      return mlp_forward(spec, params, xin).dot(g);
    };
    const Vec fdx = finite_diff_grad(fx, x, kEps);
    rep.worst_rel_error =
        std::max(rep.worst_rel_error, max_relative_error(igrad, fdx));
  }
  rep.passed = rep.worst_rel_error < kTol;
  return rep;
}

// d/d phi of log det d h_phi / d xi, affine and state-conditioned variants.
inline GradCheckReport log_det_param_suite(int cases, std::uint64_t seed) {
  GradCheckReport rep{"log_det_param_grad", 0.0, cases, false};
  RngStream rng(seed, 0xa2);
  for (int c = 0; c < cases; ++c) {
    if (c % 2 == 0) {
      const int dim = 1 + static_cast<int>(rng.next_u64() % 5);
      AffineTransform t(rng.normal_vec(dim), rng.normal_vec(dim));
      const Vec xi = rng.normal_vec(dim);
      const Vec got = t.log_det_param_grad(xi);
      AffineTransform probe = t;
      const auto f = [&](const Vec& phi) {
        probe.set_params(phi);
        return probe.log_det_jacobian(xi);
      };
      const Vec fd = finite_diff_grad(f, t.params().data(), kEps);
      rep.worst_rel_error =
          std::max(rep.worst_rel_error, max_relative_error(got, fd));
    } else {
      const int sd = 1 + static_cast<int>(rng.next_u64() % 3);
      const int td = 1 + static_cast<int>(rng.next_u64() % 3);
      const MlpSpec mean_spec = make_mlp_spec({sd, td});
      const MlpSpec scale_spec = make_mlp_spec({sd, td});
      const ScaleMap map =
          (rng.next_u64() & 1) ? ScaleMap::exp : ScaleMap::sigmoid;
      StateConditionedAffine t(mean_spec, init_mlp_params(mean_spec, rng),
                               scale_spec, init_mlp_params(scale_spec, rng),
                               map);
      const Vec s = rng.normal_vec(sd);
      const Vec xi = rng.normal_vec(td);
      const Vec got = t.log_det_param_grad(s);
      StateConditionedAffine probe = t;
      const auto f = [&](const Vec& phi) {
        probe.set_flat_params(phi);
        return probe.log_det_jacobian(s, xi);
      };
      const Vec fd = finite_diff_grad(f, t.flat_params(), kEps);
      rep.worst_rel_error =
          std::max(rep.worst_rel_error, max_relative_error(got, fd));
    }
  }
  rep.passed = rep.worst_rel_error < kTol;
  return rep;
}

// Policy scores against finite differences of log_prob, plus the forward
// form against the inverse form.
inline GradCheckReport score_suite(int cases, std::uint64_t seed) {
  GradCheckReport rep{"policy_scores", 0.0, cases, false};
  RngStream rng(seed, 0xa3);
  for (int c = 0; c < cases; ++c) {
    std::unique_ptr<Policy> p;
    int sd = 1 + static_cast<int>(rng.next_u64() % 3);
    if (c % 3 == 0) {
      const int ad = 1 + static_cast<int>(rng.next_u64() % 4);
      p = std::make_unique<SimplePolicy>(rng.normal_vec(ad));
      sd = 1;
    } else if (c % 3 == 1) {
      const int ad = 1 + static_cast<int>(rng.next_u64() % 3);
      const MlpSpec spec = make_mlp_spec({sd, 4, ad}, Activation::tanh);
      p = std::make_unique<MlpPolicy>(spec, init_mlp_params(spec, rng));
    } else {
      const int ad = 1 + static_cast<int>(rng.next_u64() % 3);
      const int td = 2;
      const MlpSpec spec = make_mlp_spec({td + sd, 4, ad}, Activation::tanh);
      auto aux =
          std::make_unique<AuxPolicy>(spec, init_mlp_params(spec, rng), td);
      aux->set_params(rng.normal_vec(td));
      p = std::move(aux);
    }
    const Vec s = rng.normal_vec(sd);
    RngStream draw = rng.child(static_cast<std::uint64_t>(c));
    auto [a, zeta] = sample_action(*p, s, draw);

    const Vec inv = score_inverse_form(*p, s, a);
    const Vec fwd = score_forward_form(*p, s, zeta);
    for (int i = 0; i < inv.size(); ++i) {
      rep.worst_rel_error =
          std::max(rep.worst_rel_error, std::abs(inv[i] - fwd[i]));
    }
    auto probe = p->clone();
    const auto f = [&](const Vec& theta) {
      probe->set_params(theta);
      return log_prob(*probe, s, a);
    };
    const Vec fd = finite_diff_grad(f, p->params(), kEps);
    rep.worst_rel_error =
        std::max(rep.worst_rel_error, max_relative_error(inv, fd));
  }
  rep.passed = rep.worst_rel_error < kTol;
  return rep;
}

// aux_psi_gradient against finite differences of the frozen Monte-Carlo
// surrogate sum_t log pi(a_t|s_t) A_t.
inline GradCheckReport aux_psi_suite(int cases, std::uint64_t seed) {
  GradCheckReport rep{"aux_psi_gradient", 0.0, cases, false};
  RngStream rng(seed, 0xa4);
  for (int c = 0; c < cases; ++c) {
    const int sd = 1 + static_cast<int>(rng.next_u64() % 2);
    const int ad = 1 + static_cast<int>(rng.next_u64() % 2);
    const int td = 2;
    const MlpSpec spec = make_mlp_spec({td + sd, 3, ad}, Activation::tanh);
    AuxPolicy p(spec, init_mlp_params(spec, rng), td);
    p.set_params(rng.normal_vec(td));

    const int steps = 1 + static_cast<int>(rng.next_u64() % 4);
    std::vector<Trajectory> trajs(1);
    std::vector<std::vector<double>> advs(1);
    RngStream draw = rng.child(static_cast<std::uint64_t>(c));
    for (int t = 0; t < steps; ++t) {
      const Vec s = draw.normal_vec(sd);
      auto [a, zeta] = sample_action(p, s, draw);
      trajs[0].states.push_back(s);
      trajs[0].actions.push_back(a);
      trajs[0].noises.push_back(zeta);
      trajs[0].rewards.push_back(0.0);
      advs[0].push_back(draw.normal());
    }
    const Vec got = aux_psi_gradient(p, trajs, advs);
    AuxPolicy probe = p;
    const auto f = [&](const Vec& psi) {
      probe.set_psi(psi);
      double acc = 0.0;
      for (int t = 0; t < steps; ++t) {
        acc += advs[0][static_cast<std::size_t>(t)] *
               log_prob(probe, trajs[0].states[static_cast<std::size_t>(t)],
                        trajs[0].actions[static_cast<std::size_t>(t)]);
      }
      return acc;
    };
    const Vec fd = finite_diff_grad(f, p.psi().data(), kEps);
    rep.worst_rel_error =
        std::max(rep.worst_rel_error, max_relative_error(got, fd));
  }
  rep.passed = rep.worst_rel_error < kTol;
  return rep;
}

// The transformation-gradient estimator on a fixed xi batch against finite
// differences of the pathwise objective
//   -(1/n) sum_k [ log p(h_phi(xi_k)) + log det J(xi_k) ],
// whose exact gradient the estimator computes.
inline GradCheckReport kl_pathwise_suite(int cases, std::uint64_t seed) {
  GradCheckReport rep{"kl_gradient_pathwise", 0.0, cases, false};
  RngStream rng(seed, 0xa5);
  for (int c = 0; c < cases; ++c) {
    const int dim = 1 + static_cast<int>(rng.next_u64() % 4);
    AffineTransform t(rng.normal_vec(dim),
                      0.5 * rng.normal_vec(dim));
    const Vec m = rng.normal_vec(dim);
    const Vec widths = Vec::Ones(dim) + rng.uniform_vec(dim, 0.0, 2.0);
    const auto log_p = [m, widths](const Vec& x) {
      return -0.5 * ((x - m).cwiseQuotient(widths)).squaredNorm();
    };
    const auto grad_log_p = [m, widths](const Vec& x) {
      return Vec(-(x - m).cwiseQuotient(widths.cwiseProduct(widths)));
    };
    const int n = 4;
    std::vector<Vec> xis;
    for (int k = 0; k < n; ++k) xis.push_back(rng.normal_vec(dim));

    const KlGradEstimate est =
        kl_gradient_on(t, xis, [&](const Vec& theta, int) {
          return TargetSample{grad_log_p(theta), log_p(theta)};
        });
    AffineTransform probe = t;
    const auto objective = [&](const Vec& phi) {
      probe.set_params(phi);
      double acc = 0.0;
      for (const Vec& xi : xis) {
        acc += log_p(probe.forward(xi)) + probe.log_det_jacobian(xi);
      }
      return -acc / n;
    };
    const Vec fd = finite_diff_grad(objective, t.params().data(), kEps);
    rep.worst_rel_error = std::max(
        rep.worst_rel_error, max_relative_error(est.grad_phi.data(), fd));
  }
  rep.passed = rep.worst_rel_error < kTol;
  return rep;
}

}  // namespace gradcheck

inline std::vector<GradCheckReport> run_all_gradchecks(int cases,
                                                       std::uint64_t seed) {
  return {gradcheck::mlp_backward_suite(cases, seed),
          gradcheck::log_det_param_suite(cases, seed),
          gradcheck::score_suite(cases, seed),
          gradcheck::aux_psi_suite(cases, seed),
          gradcheck::kl_pathwise_suite(cases, seed)};
}

}  // namespace vpg
