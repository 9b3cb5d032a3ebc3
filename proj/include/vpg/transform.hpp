#pragma once

#include "vpg/numcore.hpp"

#include <memory>

namespace vpg {

// ---------------------------------------------------------------------------
// Base densities.
// ---------------------------------------------------------------------------

// Standard normal base density N(0, I) in `dim` dimensions.
struct BaseDensity {
  int dim = 1;

  double log_pdf(const Vec& x) const {
    check(x);
    return -0.5 * (dim * std::log(2.0 * M_PI) + x.squaredNorm());
  }

  Vec grad_log_pdf(const Vec& x) const {
    check(x);
    return -x;
  }

  // Closed-form differential entropy, dim/2 * log(2 pi e).
  double entropy() const { return 0.5 * dim * std::log(2.0 * M_PI * M_E); }

  Vec sample(RngStream& rng) const { return rng.normal_vec(dim); }

 private:
  void check(const Vec& x) const {
    if (x.size() != dim) {
      throw std::invalid_argument("BaseDensity: vector length " +
                                  std::to_string(x.size()) +
                                  " does not match dim " +
                                  std::to_string(dim));
    }
  }
};

// ---------------------------------------------------------------------------
// Invertible differentiable transformations theta = h_phi(xi).
//
// Implementations expose exact log|det d theta / d xi| plus the two parameter
// gradients the KL engine consumes: the vector-Jacobian product through the
// forward map and the gradient of the log-determinant.
// ---------------------------------------------------------------------------

class Transform {
 public:
  virtual ~Transform() = default;

  virtual int dim() const = 0;        // length of theta (and xi)
  virtual int param_dim() const = 0;  // length of phi

  virtual ShapedParams params() const = 0;
  virtual void set_params(const Vec& phi) = 0;

  virtual Vec forward(const Vec& xi) const = 0;
  virtual Vec inverse(const Vec& theta) const = 0;
  virtual double log_det_jacobian(const Vec& xi) const = 0;

  // (d theta / d phi)^T grad_theta, evaluated at xi.
  virtual Vec param_vjp(const Vec& xi, const Vec& grad_theta) const = 0;

  // d/d phi of log|det d h_phi(xi) / d xi|.
  virtual Vec log_det_param_grad(const Vec& xi) const = 0;

  virtual std::unique_ptr<Transform> clone() const = 0;
};

// Elementwise affine map theta_i = mu_i + sigma_i * xi_i with sigma stored
// as log sigma, so positivity holds by construction.  phi = [mu; log_sigma].
class AffineTransform final : public Transform {
 public:
  AffineTransform(Vec mu, Vec log_sigma)
      : mu_(std::move(mu)), log_sigma_(std::move(log_sigma)) {
    if (mu_.size() != log_sigma_.size()) {
      throw std::invalid_argument(
          "AffineTransform: mu and log_sigma lengths differ");
    }
  }

  static AffineTransform standard(int dim) {
    return AffineTransform(Vec::Zero(dim), Vec::Zero(dim));
  }

  const Vec& mu() const { return mu_; }
  const Vec& log_sigma() const { return log_sigma_; }
  Vec sigma() const { return log_sigma_.array().exp().matrix(); }

  int dim() const override { return static_cast<int>(mu_.size()); }
  int param_dim() const override { return 2 * dim(); }

  ShapedParams params() const override {
    std::vector<ParamEntry> manifest{{"mu", dim(), 1},
                                     {"log_sigma", dim(), 1}};
    Vec flat(param_dim());
    flat.head(dim()) = mu_;
    flat.tail(dim()) = log_sigma_;
    return ShapedParams(std::move(manifest), std::move(flat));
  }

  void set_params(const Vec& phi) override {
    if (phi.size() != param_dim()) {
      throw std::invalid_argument("AffineTransform: bad parameter length");
    }
    mu_ = phi.head(dim());
    log_sigma_ = phi.tail(dim());
  }

  Vec forward(const Vec& xi) const override {
    check_dim(xi);
    return mu_ + sigma().cwiseProduct(xi);
  }

  Vec inverse(const Vec& theta) const override {
    check_dim(theta);
    return (theta - mu_).cwiseQuotient(sigma());
  }

  // For the affine family the Jacobian is diag(sigma), independent of xi.
  double log_det_jacobian(const Vec& xi) const override {
    check_dim(xi);
    return log_sigma_.sum();
  }

  Vec param_vjp(const Vec& xi, const Vec& grad_theta) const override {
    check_dim(xi);
    check_dim(grad_theta);
    Vec g(param_dim());
    g.head(dim()) = grad_theta;                      // d theta / d mu = I
    g.tail(dim()) = grad_theta.cwiseProduct(sigma().cwiseProduct(xi));
    return g;
  }

  Vec log_det_param_grad(const Vec& xi) const override {
    check_dim(xi);
    Vec g = Vec::Zero(param_dim());
    g.tail(dim()).setOnes();  // d/d log_sigma_i sum_j log_sigma_j = 1
    return g;
  }

  std::unique_ptr<Transform> clone() const override {
    return std::make_unique<AffineTransform>(*this);
  }

 private:
  void check_dim(const Vec& v) const {
    if (v.size() != mu_.size()) {
      throw std::invalid_argument("AffineTransform: vector length " +
                                  std::to_string(v.size()) +
                                  " does not match dim " +
                                  std::to_string(mu_.size()));
    }
  }

  Vec mu_;
  Vec log_sigma_;
};

// ---------------------------------------------------------------------------
// State-conditioned affine map theta = mu_phi(s) + sigma_phi(s) .* xi.
//
// mu and the (pre-map) scale are separate networks over the state; the scale
// net output is pushed through a positive map, exp by default or sigmoid.
// ---------------------------------------------------------------------------

enum class ScaleMap { exp, sigmoid };

class StateConditionedAffine {
 public:
  StateConditionedAffine(MlpSpec mean_spec, ShapedParams mean_params,
                         MlpSpec scale_spec, ShapedParams scale_params,
                         ScaleMap map = ScaleMap::exp)
      : mean_spec_(std::move(mean_spec)),
        mean_params_(std::move(mean_params)),
        scale_spec_(std::move(scale_spec)),
        scale_params_(std::move(scale_params)),
        map_(map) {
    mean_spec_.validate();
    scale_spec_.validate();
    if (mean_spec_.input_dim() != scale_spec_.input_dim() ||
        mean_spec_.output_dim() != scale_spec_.output_dim()) {
      throw std::invalid_argument(
          "StateConditionedAffine: mean and scale nets must share "
          "input/output dims");
    }
  }

  int dim() const { return mean_spec_.output_dim(); }
  int state_dim() const { return mean_spec_.input_dim(); }
  int param_dim() const { return mean_params_.size() + scale_params_.size(); }
  ScaleMap scale_map() const { return map_; }

  const ShapedParams& mean_params() const { return mean_params_; }
  const ShapedParams& scale_params() const { return scale_params_; }

  Vec mean(const Vec& s) const {
    return mlp_forward(mean_spec_, mean_params_, s);
  }

  // sigma_phi(s) > 0 for every state by construction of the positive map.
  Vec sigma(const Vec& s) const {
    Vec raw = mlp_forward(scale_spec_, scale_params_, s);
    for (int i = 0; i < raw.size(); ++i) raw[i] = apply_map(raw[i]);
    return raw;
  }

  Vec forward(const Vec& s, const Vec& xi) const {
    check_dim(xi);
    return mean(s) + sigma(s).cwiseProduct(xi);
  }

  Vec inverse(const Vec& s, const Vec& theta) const {
    check_dim(theta);
    return (theta - mean(s)).cwiseQuotient(sigma(s));
  }

  double log_det_jacobian(const Vec& s, const Vec& /*xi*/) const {
    return sigma(s).array().log().sum();
  }

  // Gradient of sum_i log sigma_phi^i(s) in the stacked parameter vector
  // [mean_params; scale_params]; the mean block is zero.
  Vec log_det_param_grad(const Vec& s) const {
    Vec raw = mlp_forward(scale_spec_, scale_params_, s);
    // d log sigma / d raw: exp map gives 1; sigmoid map gives 1 - sigma.
    Vec out_grad(raw.size());
    for (int i = 0; i < raw.size(); ++i) {
      out_grad[i] =
          map_ == ScaleMap::exp ? 1.0 : 1.0 - apply_map(raw[i]);
    }
    auto [scale_grad, ignored] =
        mlp_backward(scale_spec_, scale_params_, s, out_grad);
    Vec g = Vec::Zero(param_dim());
    g.tail(scale_params_.size()) = scale_grad.data();
    return g;
  }

  // (d theta / d phi)^T grad_theta at (s, xi), phi = [mean; scale] stacked.
  Vec param_vjp(const Vec& s, const Vec& xi, const Vec& grad_theta) const {
    check_dim(xi);
    check_dim(grad_theta);
    auto [mean_grad, ig0] =
        mlp_backward(mean_spec_, mean_params_, s, grad_theta);
    Vec raw = mlp_forward(scale_spec_, scale_params_, s);
    Vec scale_out_grad(raw.size());
    for (int i = 0; i < raw.size(); ++i) {
      scale_out_grad[i] = grad_theta[i] * xi[i] * map_deriv(raw[i]);
    }
    auto [scale_grad, ig1] =
        mlp_backward(scale_spec_, scale_params_, s, scale_out_grad);
    Vec g(param_dim());
    g.head(mean_params_.size()) = mean_grad.data();
    g.tail(scale_params_.size()) = scale_grad.data();
    return g;
  }

  Vec flat_params() const {
    Vec g(param_dim());
    g.head(mean_params_.size()) = mean_params_.data();
    g.tail(scale_params_.size()) = scale_params_.data();
    return g;
  }

  void set_flat_params(const Vec& phi) {
    if (phi.size() != param_dim()) {
      throw std::invalid_argument("StateConditionedAffine: bad param length");
    }
    mean_params_.set_data(phi.head(mean_params_.size()));
    scale_params_.set_data(phi.tail(scale_params_.size()));
  }

 private:
  double apply_map(double z) const {
    return map_ == ScaleMap::exp ? std::exp(z)
                                 : 1.0 / (1.0 + std::exp(-z));
  }

  // d sigma / d raw.
  double map_deriv(double z) const {
    if (map_ == ScaleMap::exp) return std::exp(z);
    const double sg = 1.0 / (1.0 + std::exp(-z));
    return sg * (1.0 - sg);
  }

  void check_dim(const Vec& v) const {
    if (v.size() != dim()) {
      throw std::invalid_argument(
          "StateConditionedAffine: vector length " + std::to_string(v.size()) +
          " does not match dim " + std::to_string(dim()));
    }
  }

  MlpSpec mean_spec_;
  ShapedParams mean_params_;
  MlpSpec scale_spec_;
  ShapedParams scale_params_;
  ScaleMap map_;
};

// ---------------------------------------------------------------------------
// Pushforward density and entropy.
// ---------------------------------------------------------------------------

// log q(y) of the pushforward of `base` through `t`, via the inverse map:
// log p_X(h^-1(y)) - log|det d h / d xi| at xi = h^-1(y).
inline double pushforward_logpdf(const Transform& t, const BaseDensity& base,
                                 const Vec& y) {
  const Vec xi = t.inverse(y);
  return base.log_pdf(xi) - t.log_det_jacobian(xi);
}

inline double pushforward_logpdf(const StateConditionedAffine& t,
                                 const BaseDensity& base, const Vec& s,
                                 const Vec& y) {
  const Vec xi = t.inverse(s, y);
  return base.log_pdf(xi) - t.log_det_jacobian(s, xi);
}

struct EntropyEstimate {
  double estimate = 0.0;
  double std_error = 0.0;
};

// Monte-Carlo estimate of H(q) = H(q_0) + E[log det d h / d xi].  The
// standard error covers only the log-det average; it is exactly zero for
// the affine family, whose integrand is constant.
inline EntropyEstimate entropy_of_pushforward(const Transform& t,
                                              const BaseDensity& base, int n,
                                              RngStream& rng) {
  if (n < 2) throw std::invalid_argument("entropy_of_pushforward: n < 2");
  std::vector<double> lds(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) {
    lds[static_cast<std::size_t>(k)] = t.log_det_jacobian(base.sample(rng));
  }
  const double mean = tree_mean(lds);
  double ss = 0.0;
  for (double v : lds) ss += (v - mean) * (v - mean);
  const double se = std::sqrt(ss / (n - 1)) / std::sqrt(double(n));
  return {base.entropy() + mean, se};
}

inline EntropyEstimate entropy_of_pushforward(const StateConditionedAffine& t,
                                              const BaseDensity& base,
                                              const Vec& s, int n,
                                              RngStream& rng) {
  if (n < 2) throw std::invalid_argument("entropy_of_pushforward: n < 2");
  std::vector<double> lds(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) {
    lds[static_cast<std::size_t>(k)] =
        t.log_det_jacobian(s, base.sample(rng));
  }
  const double mean = tree_mean(lds);
  double ss = 0.0;
  for (double v : lds) ss += (v - mean) * (v - mean);
  const double se = std::sqrt(ss / (n - 1)) / std::sqrt(double(n));
  return {base.entropy() + mean, se};
}

}  // namespace vpg
