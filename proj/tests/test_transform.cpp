#include "vpg/transform.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace vpg;

namespace {

Vec vec2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

AffineTransform random_affine(int dim, RngStream& rng) {
  return AffineTransform(rng.normal_vec(dim), 0.7 * rng.normal_vec(dim));
}

}  // namespace

TEST_CASE("affine forward: identity, location, and scaling") {
  AffineTransform ident = AffineTransform::standard(2);
  REQUIRE((ident.forward(vec2(0.3, -1.2)) - vec2(0.3, -1.2)).norm() == 0.0);

  AffineTransform located(vec2(1.0, 1.0), vec2(std::log(2.0), std::log(2.0)));
  REQUIRE((located.forward(Vec::Zero(2)) - vec2(1.0, 1.0)).norm() == 0.0);

  AffineTransform t(vec2(1.0, -1.0), vec2(std::log(2.0), std::log(0.5)));
  REQUIRE((t.forward(vec2(1.0, 1.0)) - vec2(3.0, -0.5)).norm() < 1e-15);
}

TEST_CASE("affine inverse") {
  AffineTransform ident = AffineTransform::standard(2);
  REQUIRE((ident.inverse(vec2(0.4, 2.0)) - vec2(0.4, 2.0)).norm() == 0.0);

  AffineTransform t(vec2(1.0, -1.0), vec2(std::log(2.0), std::log(0.5)));
  REQUIRE((t.inverse(vec2(3.0, -0.5)) - vec2(1.0, 1.0)).norm() < 1e-15);
}

TEST_CASE("inverse of forward is the identity to 1e-12") {
  RngStream rng(31, 0);
  for (int c = 0; c < 50; ++c) {
    const int dim = 1 + static_cast<int>(rng.next_u64() % 5);
    const AffineTransform t = random_affine(dim, rng);
    const Vec xi = rng.normal_vec(dim);
    REQUIRE((t.inverse(t.forward(xi)) - xi).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("log_det_jacobian sums the log scales") {
  AffineTransform ones = AffineTransform::standard(3);
  REQUIRE(ones.log_det_jacobian(Vec::Zero(3)) == 0.0);

  AffineTransform t(Vec::Zero(2), vec2(std::log(2.0), std::log(0.5)));
  REQUIRE(t.log_det_jacobian(Vec::Zero(2)) == Catch::Approx(0.0).margin(1e-15));

  AffineTransform e3(Vec::Zero(3), Vec::Ones(3));
  REQUIRE(e3.log_det_jacobian(Vec::Zero(3)) == Catch::Approx(3.0));
}

TEST_CASE("log_det_jacobian matches the finite-difference Jacobian") {
  RngStream rng(37, 0);
  for (int c = 0; c < 20; ++c) {
    const int dim = 1 + static_cast<int>(rng.next_u64() % 5);
    const AffineTransform t = random_affine(dim, rng);
    const Vec xi = rng.normal_vec(dim);
    Mat jac(dim, dim);
    const double eps = 1e-6;
    for (int j = 0; j < dim; ++j) {
      Vec hi = xi, lo = xi;
      hi[j] += eps;
      lo[j] -= eps;
      jac.col(j) = (t.forward(hi) - t.forward(lo)) / (2.0 * eps);
    }
    const double fd_logdet = std::log(std::abs(jac.determinant()));
    REQUIRE(relative_error(t.log_det_jacobian(xi), fd_logdet) < 1e-5);
  }
}

TEST_CASE("entropy_of_pushforward closed forms") {
  RngStream rng(41, 0);
  const double h1 = 0.5 * std::log(2.0 * M_PI * M_E);

  AffineTransform ident = AffineTransform::standard(1);
  auto est = entropy_of_pushforward(ident, BaseDensity{1}, 100, rng);
  REQUIRE(est.estimate == Catch::Approx(h1).epsilon(1e-12));
  REQUIRE(est.estimate == Catch::Approx(1.4189).margin(1e-3));
  REQUIRE(est.std_error == 0.0);

  AffineTransform scaled(Vec::Zero(1), Vec::Ones(1));  // sigma = e
  est = entropy_of_pushforward(scaled, BaseDensity{1}, 100, rng);
  REQUIRE(est.estimate == Catch::Approx(h1 + 1.0).epsilon(1e-12));

  for (int d : {2, 4, 7}) {
    AffineTransform unit = AffineTransform::standard(d);
    est = entropy_of_pushforward(unit, BaseDensity{d}, 50, rng);
    REQUIRE(est.estimate == Catch::Approx(d * h1).epsilon(1e-12));
    REQUIRE(est.std_error == 0.0);
  }

  REQUIRE_THROWS_AS(entropy_of_pushforward(ident, BaseDensity{1}, 1, rng),
                    std::invalid_argument);
}

TEST_CASE("pushforward_logpdf closed forms") {
  AffineTransform ident = AffineTransform::standard(2);
  const BaseDensity base{2};
  const Vec y = vec2(0.7, -0.3);
  REQUIRE(pushforward_logpdf(ident, base, y) ==
          Catch::Approx(base.log_pdf(y)).epsilon(1e-14));

  // mu=0, sigma=2 in one dimension: N(0,4) at 0.
  AffineTransform t(Vec::Zero(1), Vec::Constant(1, std::log(2.0)));
  Vec zero1 = Vec::Zero(1);
  REQUIRE(pushforward_logpdf(t, BaseDensity{1}, zero1) ==
          Catch::Approx(-0.5 * std::log(2.0 * M_PI * 4.0)).epsilon(1e-12));
}

TEST_CASE("pushforward density integrates to one in 1-D") {
  RngStream rng(43, 0);
  const BaseDensity base{1};
  for (int c = 0; c < 10; ++c) {
    const AffineTransform t = random_affine(1, rng);
    const double mu = t.mu()[0];
    const double sg = t.sigma()[0];
    const int n = 20001;
    const double lo = mu - 10.0 * sg, hi = mu + 10.0 * sg;
    const double h = (hi - lo) / (n - 1);
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
      Vec y(1);
      y[0] = lo + i * h;
      const double w = (i == 0 || i == n - 1) ? 0.5 : 1.0;
      acc += w * std::exp(pushforward_logpdf(t, base, y));
    }
    REQUIRE(std::abs(acc * h - 1.0) < 1e-3);
  }
}

TEST_CASE("entropy identity holds against direct Monte Carlo") {
  RngStream rng(47, 0);
  for (int c = 0; c < 10; ++c) {
    const int dim = 1 + static_cast<int>(rng.next_u64() % 5);
    const AffineTransform t = random_affine(dim, rng);
    const BaseDensity base{dim};
    const int n = 10000;

    // Direct estimate -E[log q(theta)] from fresh pushforward samples.
    RngStream draw = rng.child(static_cast<std::uint64_t>(c));
    std::vector<double> vals(n);
    for (int k = 0; k < n; ++k) {
      const Vec theta = t.forward(base.sample(draw));
      vals[static_cast<std::size_t>(k)] =
          -pushforward_logpdf(t, base, theta);
    }
    const double mc = tree_mean(vals);
    double ss = 0.0;
    for (double v : vals) ss += (v - mc) * (v - mc);
    const double se = std::sqrt(ss / (n - 1)) / std::sqrt(double(n));

    RngStream draw2 = rng.child(1000 + static_cast<std::uint64_t>(c));
    const auto ident = entropy_of_pushforward(t, base, n, draw2);
    REQUIRE(std::abs(mc - ident.estimate) <= 3.0 * se);
  }
}

TEST_CASE("affine parameter gradients match finite differences") {
  RngStream rng(53, 0);
  for (int c = 0; c < 30; ++c) {
    const int dim = 1 + static_cast<int>(rng.next_u64() % 4);
    const AffineTransform t = random_affine(dim, rng);
    const Vec xi = rng.normal_vec(dim);
    const Vec g = rng.normal_vec(dim);

    AffineTransform probe = t;
    const Vec fd_vjp = finite_diff_grad(
        [&](const Vec& phi) {
          probe.set_params(phi);
          return probe.forward(xi).dot(g);
        },
        t.params().data(), 1e-6);
    REQUIRE(max_relative_error(t.param_vjp(xi, g), fd_vjp) < 1e-5);

    const Vec fd_ld = finite_diff_grad(
        [&](const Vec& phi) {
          probe.set_params(phi);
          return probe.log_det_jacobian(xi);
        },
        t.params().data(), 1e-6);
    REQUIRE(max_relative_error(t.log_det_param_grad(xi), fd_ld) < 1e-5);
  }
}

TEST_CASE("state-conditioned affine round trip and positivity") {
  RngStream rng(59, 0);
  for (ScaleMap map : {ScaleMap::exp, ScaleMap::sigmoid}) {
    const MlpSpec mean_spec = make_mlp_spec({3, 4, 2}, Activation::tanh);
    const MlpSpec scale_spec = make_mlp_spec({3, 4, 2}, Activation::tanh);
    StateConditionedAffine t(mean_spec, init_mlp_params(mean_spec, rng),
                             scale_spec, init_mlp_params(scale_spec, rng),
                             map);
    for (int c = 0; c < 20; ++c) {
      const Vec s = rng.normal_vec(3);
      const Vec xi = rng.normal_vec(2);
      REQUIRE(t.sigma(s).minCoeff() > 0.0);
      const Vec theta = t.forward(s, xi);
      REQUIRE((t.inverse(s, theta) - xi).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
}

TEST_CASE("state-conditioned log-det gradient matches finite differences") {
  RngStream rng(61, 0);
  for (ScaleMap map : {ScaleMap::exp, ScaleMap::sigmoid}) {
    const MlpSpec mean_spec = make_mlp_spec({2, 3});
    const MlpSpec scale_spec = make_mlp_spec({2, 3, 3}, Activation::tanh);
    StateConditionedAffine t(mean_spec, init_mlp_params(mean_spec, rng),
                             scale_spec, init_mlp_params(scale_spec, rng),
                             map);
    const Vec s = rng.normal_vec(2);
    const Vec xi = rng.normal_vec(3);
    StateConditionedAffine probe = t;
    const Vec fd = finite_diff_grad(
        [&](const Vec& phi) {
          probe.set_flat_params(phi);
          return probe.log_det_jacobian(s, xi);
        },
        t.flat_params(), 1e-6);
    REQUIRE(max_relative_error(t.log_det_param_grad(s), fd) < 1e-5);
  }
}

// For a single linear layer with the sigmoid scale map, the log-det
// gradient has the closed form (1 - sigma_i(w_i . s)) s per output row.
TEST_CASE("sigmoid scale map single layer has the known closed form") {
  RngStream rng(67, 0);
  const int sd = 3, td = 2;
  const MlpSpec mean_spec = make_mlp_spec({sd, td});
  const MlpSpec scale_spec = make_mlp_spec({sd, td});
  ShapedParams scale_params = init_mlp_params(scale_spec, rng);
  scale_params.matrix("layer0.b").setZero();
  StateConditionedAffine t(mean_spec, make_mlp_params(mean_spec),
                           scale_spec, scale_params, ScaleMap::sigmoid);
  const Vec s = rng.normal_vec(sd);
  const Vec grad = t.log_det_param_grad(s);

  const Mat w = scale_params.matrix("layer0.W");
  const int mean_size = t.mean_params().size();
  // Scale-net weight block of the gradient, laid out like layer0.W.
  Eigen::Map<const Mat> wgrad(grad.data() + mean_size, td, sd);
  for (int i = 0; i < td; ++i) {
    const double sig = 1.0 / (1.0 + std::exp(-w.row(i).dot(s)));
    for (int j = 0; j < sd; ++j) {
      REQUIRE(wgrad(i, j) ==
              Catch::Approx((1.0 - sig) * s[j]).epsilon(1e-10));
    }
  }
}

TEST_CASE("state-conditioned pushforward integrates to one in 1-D") {
  RngStream rng(71, 0);
  const MlpSpec mean_spec = make_mlp_spec({2, 1});
  const MlpSpec scale_spec = make_mlp_spec({2, 1});
  StateConditionedAffine t(mean_spec, init_mlp_params(mean_spec, rng),
                           scale_spec, init_mlp_params(scale_spec, rng),
                           ScaleMap::exp);
  const BaseDensity base{1};
  const Vec s = rng.normal_vec(2);
  const double mu = t.mean(s)[0];
  const double sg = t.sigma(s)[0];
  const int n = 20001;
  const double lo = mu - 10.0 * sg, hi = mu + 10.0 * sg;
  const double h = (hi - lo) / (n - 1);
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    Vec y(1);
    y[0] = lo + i * h;
    const double w = (i == 0 || i == n - 1) ? 0.5 : 1.0;
    acc += w * std::exp(pushforward_logpdf(t, base, s, y));
  }
  REQUIRE(std::abs(acc * h - 1.0) < 1e-3);
}

TEST_CASE("transform rejects dimension mismatches") {
  AffineTransform t = AffineTransform::standard(3);
  REQUIRE_THROWS_AS(t.forward(Vec::Zero(2)), std::invalid_argument);
  REQUIRE_THROWS_AS(t.inverse(Vec::Zero(4)), std::invalid_argument);
  REQUIRE_THROWS_AS(AffineTransform(Vec::Zero(2), Vec::Zero(3)),
                    std::invalid_argument);
}
