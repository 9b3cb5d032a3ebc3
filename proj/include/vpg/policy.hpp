#pragma once

#include "vpg/envs.hpp"
#include "vpg/numcore.hpp"
#include "vpg/transform.hpp"

#include <memory>
#include <span>

namespace vpg {

// ---------------------------------------------------------------------------
// Stochastic policies induced by an invertible action map.
//
// Every policy here is of the additive unit-noise family
//     a = g_theta(s, zeta) = mean_theta(s) + zeta,   zeta ~ N(0, I),
// so the action-space Jacobian is the identity and the induced density is a
// unit-covariance Gaussian around mean_theta(s).  What varies is how the
// mean depends on the parameters theta.
// ---------------------------------------------------------------------------

// The action map g for fixed (s, theta): forward/inverse in zeta plus the
// exact log-determinant (zero for the unit additive family).
struct ActionTransform {
  Vec mean;

  Vec forward(const Vec& zeta) const { return mean + zeta; }
  Vec inverse(const Vec& action) const { return action - mean; }
  double log_det_jacobian() const { return 0.0; }
};

class Policy {
 public:
  virtual ~Policy() = default;

  virtual int action_dim() const = 0;
  virtual int state_dim() const = 0;  // 0 when the mean ignores the state
  virtual int param_dim() const = 0;

  virtual Vec params() const = 0;
  virtual void set_params(const Vec& theta) = 0;

  virtual Vec mean(const Vec& state) const = 0;

  // J^T v where J = d mean / d theta at `state`.
  virtual Vec mean_param_vjp(const Vec& state, const Vec& v) const = 0;

  // J v (forward-mode directional derivative of the mean in theta).
  virtual Vec mean_param_jvp(const Vec& state, const Vec& v) const = 0;

  virtual std::unique_ptr<Policy> clone() const = 0;
};

// theta is the action mean itself; the state is ignored.
class SimplePolicy final : public Policy {
 public:
  explicit SimplePolicy(Vec theta) : theta_(std::move(theta)) {}
  explicit SimplePolicy(int dim) : theta_(Vec::Zero(dim)) {}

  int action_dim() const override { return static_cast<int>(theta_.size()); }
  int state_dim() const override { return 0; }
  int param_dim() const override { return static_cast<int>(theta_.size()); }

  Vec params() const override { return theta_; }
  void set_params(const Vec& theta) override {
    if (theta.size() != theta_.size()) {
      throw std::invalid_argument("SimplePolicy: bad parameter length");
    }
    theta_ = theta;
  }

  Vec mean(const Vec& /*state*/) const override { return theta_; }

  Vec mean_param_vjp(const Vec& /*state*/, const Vec& v) const override {
    return v;  // d mean / d theta = I
  }

  Vec mean_param_jvp(const Vec& /*state*/, const Vec& v) const override {
    return v;
  }

  std::unique_ptr<Policy> clone() const override {
    return std::make_unique<SimplePolicy>(*this);
  }

 private:
  Vec theta_;
};

// Action mean computed by a feed-forward network over the state; theta is
// the flat network parameter vector.
class MlpPolicy final : public Policy {
 public:
  MlpPolicy(MlpSpec spec, ShapedParams params)
      : spec_(std::move(spec)), params_(std::move(params)) {
    spec_.validate();
  }

  static MlpPolicy zero_init(const MlpSpec& spec) {
    return MlpPolicy(spec, make_mlp_params(spec));
  }

  const MlpSpec& spec() const { return spec_; }
  const ShapedParams& shaped_params() const { return params_; }

  int action_dim() const override { return spec_.output_dim(); }
  int state_dim() const override { return spec_.input_dim(); }
  int param_dim() const override { return params_.size(); }

  Vec params() const override { return params_.data(); }
  void set_params(const Vec& theta) override { params_.set_data(theta); }

  Vec mean(const Vec& state) const override {
    return mlp_forward(spec_, params_, state);
  }

  Vec mean_param_vjp(const Vec& state, const Vec& v) const override {
    auto [grad, input_grad] = mlp_backward(spec_, params_, state, v);
    return grad.data();
  }

  Vec mean_param_jvp(const Vec& state, const Vec& v) const override {
    return mlp_param_jvp(spec_, params_, state,
                         ShapedParams(params_.manifest(), v));
  }

  std::unique_ptr<Policy> clone() const override {
    return std::make_unique<MlpPolicy>(*this);
  }

 private:
  MlpSpec spec_;
  ShapedParams params_;
};

// Auxiliary parameterization: the mean is MLP_psi([theta; s]), where theta
// is a random input drawn from the parameter posterior and psi is a plain
// network parameter learned by gradient ascent.  Through the Policy
// interface the differentiation variable is theta.
class AuxPolicy final : public Policy {
 public:
  AuxPolicy(MlpSpec net_spec, ShapedParams psi, int theta_dim)
      : spec_(std::move(net_spec)), psi_(std::move(psi)),
        theta_(Vec::Zero(theta_dim)) {
    spec_.validate();
    if (spec_.input_dim() <= theta_dim) {
      throw std::invalid_argument(
          "AuxPolicy: net input dim must exceed theta dim (theta + state)");
    }
  }

  const MlpSpec& spec() const { return spec_; }
  const ShapedParams& psi() const { return psi_; }
  void set_psi(const Vec& psi) { psi_.set_data(psi); }
  int psi_dim() const { return psi_.size(); }

  int action_dim() const override { return spec_.output_dim(); }
  int state_dim() const override {
    return spec_.input_dim() - static_cast<int>(theta_.size());
  }
  int param_dim() const override { return static_cast<int>(theta_.size()); }

  Vec params() const override { return theta_; }
  void set_params(const Vec& theta) override {
    if (theta.size() != theta_.size()) {
      throw std::invalid_argument("AuxPolicy: bad theta length");
    }
    theta_ = theta;
  }

  Vec mean(const Vec& state) const override {
    return mlp_forward(spec_, psi_, stack(state));
  }

  // d mean / d theta is the theta block of the network's input Jacobian.
  Vec mean_param_vjp(const Vec& state, const Vec& v) const override {
    auto [psi_grad, input_grad] = mlp_backward(spec_, psi_, stack(state), v);
    return input_grad.head(theta_.size());
  }

  Vec mean_param_jvp(const Vec& state, const Vec& v) const override {
    // Finite tangent through the input side: exact via linearity of the
    // first layer in its input tangent.
    Vec a = stack(state);
    Vec da = Vec::Zero(a.size());
    da.head(theta_.size()) = v;
    Vec act = a, tangent = da;
    for (int l = 0; l < spec_.num_layers(); ++l) {
      Vec z = psi_.matrix(2 * l) * act + psi_.matrix(2 * l + 1).col(0);
      Vec dz = psi_.matrix(2 * l) * tangent;
      Vec out(z.size()), dout(z.size());
      for (int i = 0; i < z.size(); ++i) {
        const double val =
            apply_act(spec_.acts[static_cast<std::size_t>(l)], z[i]);
        out[i] = val;
        dout[i] =
            act_deriv_from_value(spec_.acts[static_cast<std::size_t>(l)], val) *
            dz[i];
      }
      act = std::move(out);
      tangent = std::move(dout);
    }
    return tangent;
  }

  // (d mean / d psi)^T v for the auxiliary update.
  Vec psi_vjp(const Vec& state, const Vec& v) const {
    auto [psi_grad, input_grad] = mlp_backward(spec_, psi_, stack(state), v);
    return psi_grad.data();
  }

  std::unique_ptr<Policy> clone() const override {
    return std::make_unique<AuxPolicy>(*this);
  }

 private:
  Vec stack(const Vec& state) const {
    Vec in(theta_.size() + state.size());
    in.head(theta_.size()) = theta_;
    in.tail(state.size()) = state;
    return in;
  }

  MlpSpec spec_;
  ShapedParams psi_;
  Vec theta_;
};

// ---------------------------------------------------------------------------
// Sampling, density, and score functions.
// ---------------------------------------------------------------------------

inline std::pair<Vec, Vec> sample_action(const Policy& p, const Vec& state,
                                         RngStream& rng) {
  const Vec zeta = rng.normal_vec(p.action_dim());
  const ActionTransform g{p.mean(state)};
  return {g.forward(zeta), zeta};
}

// log pi(a|s) through the change of variables: base density at
// g^-1(a, s) minus the log-determinant of the action map.
inline double log_prob(const Policy& p, const Vec& state, const Vec& action) {
  const ActionTransform g{p.mean(state)};
  const BaseDensity noise{p.action_dim()};
  return noise.log_pdf(g.inverse(action)) - g.log_det_jacobian();
}

// d log pi / d theta via the inverse map: the log-det term contributes
// nothing for the unit additive family.
inline Vec score_inverse_form(const Policy& p, const Vec& state,
                              const Vec& action) {
  const ActionTransform g{p.mean(state)};
  const BaseDensity noise{p.action_dim()};
  const Vec zeta = g.inverse(action);
  // d/d theta log pi_0(a - mean) = J^T (a - mean) for the standard normal.
  const Vec grad_zeta = noise.grad_log_pdf(zeta);
  return p.mean_param_vjp(state, -grad_zeta);
}

// Same gradient expressed through the recorded noise draw: differentiate
// zeta = g^-1(a, s) in theta at fixed a, which is -(dg/dzeta)^-1 dg/dtheta,
// the identity-Jacobian case of the additive family.
inline Vec score_forward_form(const Policy& p, const Vec& state,
                              const Vec& zeta) {
  const BaseDensity noise{p.action_dim()};
  const Vec grad_zeta = noise.grad_log_pdf(zeta);
  // (dg/dzeta)^-1 = I and dg/dtheta = J, so the chain collapses to -J^T
  // applied to the noise score; the log-det term is constant in theta.
  return p.mean_param_vjp(state, -grad_zeta);
}

// Likelihood-ratio gradient for the auxiliary parameters:
// mean over trajectories of sum_t (d log pi / d psi)(s_t, a_t) * A_t.
inline Vec aux_psi_gradient(const AuxPolicy& p,
                            std::span<const Trajectory> trajs,
                            std::span<const std::vector<double>> advantages) {
  if (trajs.empty()) {
    throw std::invalid_argument("aux_psi_gradient: empty trajectory set");
  }
  if (advantages.size() != trajs.size()) {
    throw std::invalid_argument(
        "aux_psi_gradient: advantage batch does not match trajectories");
  }
  std::vector<Vec> per_traj;
  per_traj.reserve(trajs.size());
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    const Trajectory& tr = trajs[i];
    tr.validate();
    if (advantages[i].size() != static_cast<std::size_t>(tr.length())) {
      throw std::invalid_argument(
          "aux_psi_gradient: advantages misaligned with steps");
    }
    Vec g = Vec::Zero(p.psi_dim());
    for (int t = 0; t < tr.length(); ++t) {
      const Vec residual =
          tr.actions[static_cast<std::size_t>(t)] -
          p.mean(tr.states[static_cast<std::size_t>(t)]);
      g += advantages[i][static_cast<std::size_t>(t)] *
           p.psi_vjp(tr.states[static_cast<std::size_t>(t)], residual);
    }
    per_traj.push_back(std::move(g));
  }
  return tree_mean(std::move(per_traj));
}

}  // namespace vpg
