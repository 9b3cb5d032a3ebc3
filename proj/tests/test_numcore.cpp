#include "vpg/checkpoint.hpp"
#include "vpg/numcore.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <sstream>

using namespace vpg;

TEST_CASE("rng streams are deterministic per (seed, stream)") {
  RngStream a(42, 7);
  RngStream b(42, 7);
  for (int i = 0; i < 100; ++i) REQUIRE(a.next_u64() == b.next_u64());

  RngStream c(42, 7), d(42, 8);
  bool differ = false;
  for (int i = 0; i < 10; ++i) differ |= (c.next_u64() != d.next_u64());
  REQUIRE(differ);
}

TEST_CASE("rng draws are independent of sibling consumption order") {
  RngStream parent(1, 0);
  RngStream x = parent.child(0);
  RngStream y = parent.child(1);
  const double x0 = x.normal();
  const double y0 = y.normal();

  RngStream parent2(1, 0);
  RngStream y2 = parent2.child(1);
  RngStream x2 = parent2.child(0);
  REQUIRE(y2.normal() == y0);  // consumed first this time
  REQUIRE(x2.normal() == x0);
}

TEST_CASE("rng normals look standard normal") {
  RngStream rng(3, 0);
  const int n = 200000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    sum += z;
    sq += z * z;
  }
  const double mean = sum / n;
  const double var = sq / n - mean * mean;
  REQUIRE(std::abs(mean) < 3.0 / std::sqrt(double(n)));
  REQUIRE(std::abs(var - 1.0) < 5.0 / std::sqrt(double(n)));
}

TEST_CASE("shaped params validate manifest size") {
  std::vector<ParamEntry> manifest{{"w", 2, 3}, {"b", 2, 1}};
  ShapedParams p(manifest);
  REQUIRE(p.size() == 8);
  REQUIRE_THROWS_AS(ShapedParams(manifest, Vec::Zero(7)),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(p.set_data(Vec::Zero(9)), std::invalid_argument);
}

TEST_CASE("mlp_forward zero params give zero output") {
  const MlpSpec spec = make_mlp_spec({3, 4, 2}, Activation::tanh);
  ShapedParams params = make_mlp_params(spec);
  RngStream rng(5, 0);
  const Vec out = mlp_forward(spec, params, rng.normal_vec(3));
  REQUIRE(out.isZero());
}

TEST_CASE("mlp_forward identity layer is the identity") {
  const MlpSpec spec = make_mlp_spec({3, 3});
  ShapedParams params = make_mlp_params(spec);
  params.matrix("layer0.W") = Mat::Identity(3, 3);
  Vec x(3);
  x << 0.5, -1.25, 2.0;
  REQUIRE((mlp_forward(spec, params, x) - x).norm() == 0.0);
}

TEST_CASE("mlp_forward matches a hand-evaluated 2-3-1 tanh net") {
  MlpSpec spec = make_mlp_spec({2, 3, 1}, Activation::tanh);
  ShapedParams params = make_mlp_params(spec);
  Mat w0(3, 2);
  w0 << 0.1, -0.2, 0.3, 0.05, -0.1, 0.2;
  Vec b0(3);
  b0 << 0.01, -0.02, 0.03;
  Mat w1(1, 3);
  w1 << 0.5, -0.25, 0.75;
  params.matrix("layer0.W") = w0;
  params.matrix("layer0.b").col(0) = b0;
  params.matrix("layer1.W") = w1;
  params.matrix("layer1.b")(0, 0) = -0.1;

  Vec x(2);
  x << 1.0, -1.0;
  Vec h = w0 * x + b0;
  for (int i = 0; i < 3; ++i) h[i] = std::tanh(h[i]);
  const double expected = (w1 * h)(0, 0) - 0.1;
  REQUIRE(mlp_forward(spec, params, x)[0] == Catch::Approx(expected).epsilon(1e-14));
}

TEST_CASE("mlp_forward rejects mismatched input naming the layer") {
  const MlpSpec spec = make_mlp_spec({3, 2});
  ShapedParams params = make_mlp_params(spec);
  try {
    mlp_forward(spec, params, Vec::Zero(4));
    FAIL("expected a dimension error");
  } catch (const std::invalid_argument& e) {
    REQUIRE(std::string(e.what()).find("layer0") != std::string::npos);
  }
}

TEST_CASE("mlp_backward linear identity layer") {
  const MlpSpec spec = make_mlp_spec({2, 2});
  ShapedParams params = make_mlp_params(spec);
  params.matrix("layer0.W") = Mat::Identity(2, 2);
  Vec x(2), g(2);
  x << 1.5, -0.5;
  g << 2.0, 3.0;
  auto [pg, ig] = mlp_backward(spec, params, x, g);
  REQUIRE((ig - g).norm() == 0.0);
  const Mat wgrad = pg.matrix("layer0.W");
  REQUIRE((wgrad - g * x.transpose()).norm() == 0.0);
  REQUIRE((pg.matrix("layer0.b").col(0) - g).norm() == 0.0);
}

TEST_CASE("mlp_backward zero output grad gives zero gradients") {
  RngStream rng(7, 0);
  const MlpSpec spec = make_mlp_spec({3, 5, 2}, Activation::sigmoid);
  ShapedParams params = init_mlp_params(spec, rng);
  auto [pg, ig] =
      mlp_backward(spec, params, rng.normal_vec(3), Vec::Zero(2));
  REQUIRE(pg.data().isZero());
  REQUIRE(ig.isZero());
}

TEST_CASE("mlp_backward matches finite differences on 100 random cases") {
  RngStream rng(11, 0);
  double worst = 0.0;
  for (int c = 0; c < 100; ++c) {
    const int layers = 1 + static_cast<int>(rng.next_u64() % 3);
    std::vector<int> widths;
    for (int i = 0; i <= layers; ++i) {
      widths.push_back(1 + static_cast<int>(rng.next_u64() % 5));
    }
    std::vector<Activation> acts;
    for (int i = 0; i < layers; ++i) {
      const auto pick = rng.next_u64() % 3;
      acts.push_back(pick == 0 ? Activation::identity
                               : pick == 1 ? Activation::tanh
                                           : Activation::sigmoid);
    }
    const MlpSpec spec{widths, acts};
    ShapedParams params = init_mlp_params(spec, rng);
    const Vec x = rng.normal_vec(spec.input_dim());
    const Vec g = rng.normal_vec(spec.output_dim());
    auto [pg, ig] = mlp_backward(spec, params, x, g);
    const auto f = [&](const Vec& p) {
      return mlp_forward(spec, ShapedParams(params.manifest(), p), x).dot(g);
    };
    const Vec fd = finite_diff_grad(f, params.data(), 1e-5);
    worst = std::max(worst, max_relative_error(pg.data(), fd));
  }
  REQUIRE(worst < 1e-5);
}

TEST_CASE("mlp_param_jvp matches the Jacobian-vector product") {
  RngStream rng(13, 0);
  const MlpSpec spec = make_mlp_spec({2, 4, 3}, Activation::tanh);
  const ShapedParams params = init_mlp_params(spec, rng);
  const Vec x = rng.normal_vec(2);
  const Vec tangent = rng.normal_vec(params.size());
  const Vec got =
      mlp_param_jvp(spec, params, x, ShapedParams(params.manifest(), tangent));
  // Against J^T rows recovered from backward passes.
  for (int i = 0; i < 3; ++i) {
    Vec e = Vec::Zero(3);
    e[i] = 1.0;
    auto [row, ig] = mlp_backward(spec, params, x, e);
    REQUIRE(got[i] == Catch::Approx(row.data().dot(tangent)).margin(1e-12));
  }
}

TEST_CASE("mlp calls are pure") {
  RngStream rng(17, 0);
  const MlpSpec spec = make_mlp_spec({3, 4, 2}, Activation::tanh);
  const ShapedParams params = init_mlp_params(spec, rng);
  const Vec x = rng.normal_vec(3);
  const Vec first = mlp_forward(spec, params, x);
  mlp_backward(spec, params, x, Vec::Ones(2));
  const Vec second = mlp_forward(spec, params, x);
  REQUIRE((first - second).norm() == 0.0);
}

TEST_CASE("finite_diff_grad on the quadratic") {
  Vec x(2);
  x << 1.0, 2.0;
  const Vec g = finite_diff_grad([](const Vec& v) { return v.dot(v); }, x, 1e-5);
  REQUIRE(g[0] == Catch::Approx(2.0).epsilon(1e-8));
  REQUIRE(g[1] == Catch::Approx(4.0).epsilon(1e-8));
}

TEST_CASE("finite_diff_grad of a constant is zero") {
  const Vec g =
      finite_diff_grad([](const Vec&) { return 3.5; }, Vec::Zero(4), 1e-5);
  REQUIRE(g.isZero());
}

TEST_CASE("finite_diff_grad of sum of sines at zero is ones") {
  const Vec g = finite_diff_grad(
      [](const Vec& v) { return v.array().sin().sum(); }, Vec::Zero(3), 1e-5);
  for (int i = 0; i < 3; ++i) REQUIRE(g[i] == Catch::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("finite_diff_grad rejects non-finite evaluations and bad eps") {
  REQUIRE_THROWS_AS(finite_diff_grad([](const Vec&) { return 1.0; },
                                     Vec::Zero(1), 0.0),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(
      finite_diff_grad(
          [](const Vec& v) { return std::log(v[0]); }, Vec::Zero(1), 1e-3),
      std::runtime_error);
}

TEST_CASE("tree reductions are order-fixed and correct") {
  std::vector<double> v{1.0, 2.0, 3.0, 4.0, 5.0};
  REQUIRE(tree_sum(v) == Catch::Approx(15.0));
  REQUIRE(tree_mean(v) == Catch::Approx(3.0));
  std::vector<Vec> vs;
  for (int i = 0; i < 7; ++i) vs.push_back(Vec::Constant(2, double(i)));
  REQUIRE(tree_mean(vs)[0] == Catch::Approx(3.0));
}

TEST_CASE("checkpoint round-trips parameters bit for bit") {
  RngStream rng(23, 0);
  const MlpSpec spec = make_mlp_spec({3, 5, 2}, Activation::tanh);
  const ShapedParams params = init_mlp_params(spec, rng);
  std::stringstream buf;
  save_params(buf, params);
  const ShapedParams loaded = load_params(buf);
  REQUIRE(loaded.size() == params.size());
  for (int i = 0; i < params.size(); ++i) {
    REQUIRE(loaded.data()[i] == params.data()[i]);
  }
  REQUIRE(loaded.manifest().size() == params.manifest().size());
  for (std::size_t i = 0; i < params.manifest().size(); ++i) {
    REQUIRE(loaded.manifest()[i].name == params.manifest()[i].name);
    REQUIRE(loaded.manifest()[i].rows == params.manifest()[i].rows);
    REQUIRE(loaded.manifest()[i].cols == params.manifest()[i].cols);
  }
}
