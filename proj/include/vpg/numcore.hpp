#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace vpg {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

inline bool all_finite(const Vec& v) { return v.allFinite(); }

// ---------------------------------------------------------------------------
// Seeded random streams.
//
// Each (seed, stream) pair names an independent draw sequence.  The state is
// derived by hashing, so sibling streams can be consumed in any order (or on
// any thread) without affecting each other.
// ---------------------------------------------------------------------------

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t mix64(std::uint64_t a, std::uint64_t b) {
  std::uint64_t s = a;
  std::uint64_t h = splitmix64(s);
  s = h ^ b;
  return splitmix64(s);
}

}  // namespace detail

class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream)
      : seed_(seed), stream_(stream), state_(detail::mix64(seed, stream)) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

  // Derives a new independent stream; (seed, stream, k) determine it fully.
  RngStream child(std::uint64_t k) const {
    return RngStream(seed_, detail::mix64(stream_, k + 1));
  }

  std::uint64_t next_u64() { return detail::splitmix64(state_); }

  // Uniform on (0,1]; never returns 0 so log() is safe.
  double uniform01() {
    return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Standard normal via Box-Muller; the spare is cached in the stream state.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform01();
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  Vec normal_vec(int n) {
    Vec v(n);
    for (int i = 0; i < n; ++i) v[i] = normal();
    return v;
  }

  Vec uniform_vec(int n, double lo, double hi) {
    Vec v(n);
    for (int i = 0; i < n; ++i) v[i] = uniform(lo, hi);
    return v;
  }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// ---------------------------------------------------------------------------
// Flat parameter vectors with a shape manifest.
// ---------------------------------------------------------------------------

struct ParamEntry {
  std::string name;
  int rows = 0;
  int cols = 0;
};

// Flat parameter storage; the manifest (names and shapes) is fixed at
// construction, only the values may change.  Entries are laid out
// back-to-back, column-major within each entry.
class ShapedParams {
 public:
  ShapedParams() = default;

  explicit ShapedParams(std::vector<ParamEntry> manifest)
      : manifest_(std::move(manifest)) {
    init_offsets();
    data_ = Vec::Zero(total_);
  }

  ShapedParams(std::vector<ParamEntry> manifest, Vec data)
      : manifest_(std::move(manifest)) {
    init_offsets();
    if (data.size() != total_) {
      throw std::invalid_argument("ShapedParams: data length " +
                                  std::to_string(data.size()) +
                                  " does not match manifest size " +
                                  std::to_string(total_));
    }
    data_ = std::move(data);
  }

  const std::vector<ParamEntry>& manifest() const { return manifest_; }
  int size() const { return total_; }

  const Vec& data() const { return data_; }
  Vec& data() { return data_; }

  void set_data(const Vec& v) {
    if (v.size() != total_) {
      throw std::invalid_argument("ShapedParams: cannot resize data from " +
                                  std::to_string(total_) + " to " +
                                  std::to_string(v.size()));
    }
    data_ = v;
  }

  int entry_count() const { return static_cast<int>(manifest_.size()); }
  int offset(int i) const { return offsets_.at(static_cast<std::size_t>(i)); }

  int index_of(const std::string& name) const {
    for (std::size_t i = 0; i < manifest_.size(); ++i) {
      if (manifest_[i].name == name) return static_cast<int>(i);
    }
    throw std::invalid_argument("ShapedParams: no entry named '" + name + "'");
  }

  Eigen::Map<const Mat> matrix(int i) const {
    const auto& e = manifest_.at(static_cast<std::size_t>(i));
    return Eigen::Map<const Mat>(data_.data() + offsets_[i], e.rows, e.cols);
  }

  Eigen::Map<Mat> matrix(int i) {
    const auto& e = manifest_.at(static_cast<std::size_t>(i));
    return Eigen::Map<Mat>(data_.data() + offsets_[i], e.rows, e.cols);
  }

  Eigen::Map<const Mat> matrix(const std::string& name) const {
    return matrix(index_of(name));
  }

  Eigen::Map<Mat> matrix(const std::string& name) {
    return matrix(index_of(name));
  }

 private:
  void init_offsets() {
    offsets_.resize(manifest_.size());
    total_ = 0;
    for (std::size_t i = 0; i < manifest_.size(); ++i) {
      const auto& e = manifest_[i];
      if (e.rows <= 0 || e.cols <= 0) {
        throw std::invalid_argument("ShapedParams: entry '" + e.name +
                                    "' has non-positive shape");
      }
      offsets_[i] = total_;
      total_ += e.rows * e.cols;
    }
  }

  std::vector<ParamEntry> manifest_;
  std::vector<int> offsets_;
  int total_ = 0;
  Vec data_;
};

// ---------------------------------------------------------------------------
// Small feed-forward networks with analytic gradients.
// ---------------------------------------------------------------------------

enum class Activation { identity, tanh, sigmoid };

inline const char* activation_name(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::tanh: return "tanh";
    case Activation::sigmoid: return "sigmoid";
  }
  return "?";
}

inline Activation activation_from_name(const std::string& s) {
  if (s == "identity") return Activation::identity;
  if (s == "tanh") return Activation::tanh;
  if (s == "sigmoid") return Activation::sigmoid;
  throw std::invalid_argument("unknown activation '" + s + "'");
}

inline double apply_act(Activation a, double z) {
  switch (a) {
    case Activation::identity: return z;
    case Activation::tanh: return std::tanh(z);
    case Activation::sigmoid: return 1.0 / (1.0 + std::exp(-z));
  }
  return z;
}

// Derivative expressed through the activation value, not the pre-activation.
inline double act_deriv_from_value(Activation a, double v) {
  switch (a) {
    case Activation::identity: return 1.0;
    case Activation::tanh: return 1.0 - v * v;
    case Activation::sigmoid: return v * (1.0 - v);
  }
  return 1.0;
}

// widths = [input, hidden..., output]; acts has one entry per non-input
// layer (hidden activations plus the output activation).
struct MlpSpec {
  std::vector<int> widths;
  std::vector<Activation> acts;

  int num_layers() const { return static_cast<int>(widths.size()) - 1; }
  int input_dim() const { return widths.front(); }
  int output_dim() const { return widths.back(); }

  void validate() const {
    if (widths.size() < 2) {
      throw std::invalid_argument("MlpSpec: needs at least one layer");
    }
    for (int w : widths) {
      if (w < 1) throw std::invalid_argument("MlpSpec: widths must be >= 1");
    }
    if (acts.size() != widths.size() - 1) {
      throw std::invalid_argument(
          "MlpSpec: need one activation per layer, got " +
          std::to_string(acts.size()) + " for " +
          std::to_string(widths.size() - 1) + " layers");
    }
  }
};

// Linear layers with the given hidden activation and identity output.
inline MlpSpec make_mlp_spec(const std::vector<int>& widths,
                             Activation hidden = Activation::tanh,
                             Activation output = Activation::identity) {
  MlpSpec spec;
  spec.widths = widths;
  const int n = static_cast<int>(widths.size()) - 1;
  spec.acts.assign(static_cast<std::size_t>(n), hidden);
  if (n > 0) spec.acts.back() = output;
  spec.validate();
  return spec;
}

inline std::vector<ParamEntry> mlp_manifest(const MlpSpec& spec,
                                            const std::string& prefix = "") {
  spec.validate();
  std::vector<ParamEntry> m;
  for (int l = 0; l < spec.num_layers(); ++l) {
    const std::string base = prefix + "layer" + std::to_string(l);
    m.push_back({base + ".W", spec.widths[l + 1], spec.widths[l]});
    m.push_back({base + ".b", spec.widths[l + 1], 1});
  }
  return m;
}

inline ShapedParams make_mlp_params(const MlpSpec& spec,
                                    const std::string& prefix = "") {
  return ShapedParams(mlp_manifest(spec, prefix));
}

// Uniform init in [-a, a] with a = sqrt(6 / (fan_in + fan_out)); biases zero.
inline ShapedParams init_mlp_params(const MlpSpec& spec, RngStream& rng,
                                    const std::string& prefix = "") {
  ShapedParams p = make_mlp_params(spec, prefix);
  for (int l = 0; l < spec.num_layers(); ++l) {
    const int fan_in = spec.widths[l];
    const int fan_out = spec.widths[l + 1];
    const double a = std::sqrt(6.0 / (fan_in + fan_out));
    auto w = p.matrix(2 * l);
    for (int j = 0; j < w.cols(); ++j) {
      for (int i = 0; i < w.rows(); ++i) w(i, j) = rng.uniform(-a, a);
    }
  }
  return p;
}

namespace detail {

inline void check_mlp_io(const MlpSpec& spec, const ShapedParams& params,
                         const Vec& input) {
  spec.validate();
  const auto expected = mlp_manifest(spec);
  int total = 0;
  for (const auto& e : expected) total += e.rows * e.cols;
  if (params.size() != total) {
    throw std::invalid_argument("mlp: parameter vector length " +
                                std::to_string(params.size()) +
                                " does not match spec size " +
                                std::to_string(total));
  }
  for (int i = 0; i < params.entry_count(); ++i) {
    const auto& got = params.manifest()[static_cast<std::size_t>(i)];
    const auto& want = expected[static_cast<std::size_t>(i)];
    if (got.rows != want.rows || got.cols != want.cols) {
      throw std::invalid_argument("mlp: entry '" + got.name +
                                  "' has shape " + std::to_string(got.rows) +
                                  "x" + std::to_string(got.cols) +
                                  ", expected " + std::to_string(want.rows) +
                                  "x" + std::to_string(want.cols));
    }
  }
  if (input.size() != spec.input_dim()) {
    throw std::invalid_argument(
        "mlp: layer0 input length " + std::to_string(input.size()) +
        " does not match width " + std::to_string(spec.input_dim()));
  }
}

}  // namespace detail

inline Vec mlp_forward(const MlpSpec& spec, const ShapedParams& params,
                       const Vec& input) {
  detail::check_mlp_io(spec, params, input);
  Vec a = input;
  for (int l = 0; l < spec.num_layers(); ++l) {
    Vec z = params.matrix(2 * l) * a + params.matrix(2 * l + 1).col(0);
    for (int i = 0; i < z.size(); ++i) {
      z[i] = apply_act(spec.acts[static_cast<std::size_t>(l)], z[i]);
    }
    a = std::move(z);
  }
  return a;
}

// Exact reverse-mode gradients of mlp_forward: returns (param grad, input
// grad) for the scalar product output . output_grad.
inline std::pair<ShapedParams, Vec> mlp_backward(const MlpSpec& spec,
                                                 const ShapedParams& params,
                                                 const Vec& input,
                                                 const Vec& output_grad) {
  detail::check_mlp_io(spec, params, input);
  if (output_grad.size() != spec.output_dim()) {
    throw std::invalid_argument(
        "mlp: output_grad length " + std::to_string(output_grad.size()) +
        " does not match output width " + std::to_string(spec.output_dim()));
  }
  const int L = spec.num_layers();
  std::vector<Vec> acts(static_cast<std::size_t>(L) + 1);
  acts[0] = input;
  for (int l = 0; l < L; ++l) {
    Vec z = params.matrix(2 * l) * acts[static_cast<std::size_t>(l)] +
            params.matrix(2 * l + 1).col(0);
    for (int i = 0; i < z.size(); ++i) {
      z[i] = apply_act(spec.acts[static_cast<std::size_t>(l)], z[i]);
    }
    acts[static_cast<std::size_t>(l) + 1] = std::move(z);
  }

  ShapedParams grad = make_mlp_params(spec);
  Vec delta = output_grad;
  for (int l = L - 1; l >= 0; --l) {
    const Vec& out = acts[static_cast<std::size_t>(l) + 1];
    for (int i = 0; i < delta.size(); ++i) {
      delta[i] *= act_deriv_from_value(spec.acts[static_cast<std::size_t>(l)],
                                       out[i]);
    }
    grad.matrix(2 * l) = delta * acts[static_cast<std::size_t>(l)].transpose();
    grad.matrix(2 * l + 1).col(0) = delta;
    if (l > 0) delta = params.matrix(2 * l).transpose() * delta;
  }
  Vec input_grad = params.matrix(0).transpose() * delta;
  return {std::move(grad), std::move(input_grad)};
}

// Forward-mode directional derivative of mlp_forward with respect to the
// parameters: returns d/dt mlp_forward(params + t * tangent, input) at t=0.
inline Vec mlp_param_jvp(const MlpSpec& spec, const ShapedParams& params,
                         const Vec& input, const ShapedParams& tangent) {
  detail::check_mlp_io(spec, params, input);
  if (tangent.size() != params.size()) {
    throw std::invalid_argument("mlp: tangent length does not match params");
  }
  Vec a = input;
  Vec da = Vec::Zero(input.size());
  for (int l = 0; l < spec.num_layers(); ++l) {
    Vec z = params.matrix(2 * l) * a + params.matrix(2 * l + 1).col(0);
    Vec dz = tangent.matrix(2 * l) * a + params.matrix(2 * l) * da +
             tangent.matrix(2 * l + 1).col(0);
    Vec out(z.size()), dout(z.size());
    for (int i = 0; i < z.size(); ++i) {
      const double v = apply_act(spec.acts[static_cast<std::size_t>(l)], z[i]);
      out[i] = v;
      dout[i] =
          act_deriv_from_value(spec.acts[static_cast<std::size_t>(l)], v) *
          dz[i];
    }
    a = std::move(out);
    da = std::move(dout);
  }
  return da;
}

// ---------------------------------------------------------------------------
// Finite differences and deterministic reductions.
// ---------------------------------------------------------------------------

// Central differences (f(x+eps e_i) - f(x-eps e_i)) / (2 eps).
inline Vec finite_diff_grad(const std::function<double(const Vec&)>& f,
                            const Vec& x, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("finite_diff_grad: eps <= 0");
  Vec g(x.size());
  Vec xp = x;
  for (int i = 0; i < x.size(); ++i) {
    xp[i] = x[i] + eps;
    const double fp = f(xp);
    xp[i] = x[i] - eps;
    const double fm = f(xp);
    xp[i] = x[i];
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw std::runtime_error(
          "finite_diff_grad: non-finite evaluation at coordinate " +
          std::to_string(i));
    }
    g[i] = (fp - fm) / (2.0 * eps);
  }
  return g;
}

// Pairwise tree sum; the result depends only on element order, never on the
// schedule that produced the elements.
inline double tree_sum(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::size_t n = v.size();
  while (n > 1) {
    const std::size_t half = (n + 1) / 2;
    for (std::size_t i = 0; i + half < n; ++i) v[i] += v[i + half];
    n = half;
  }
  return v[0];
}

inline Vec tree_sum(std::vector<Vec> v) {
  if (v.empty()) return Vec();
  std::size_t n = v.size();
  while (n > 1) {
    const std::size_t half = (n + 1) / 2;
    for (std::size_t i = 0; i + half < n; ++i) v[i] += v[i + half];
    n = half;
  }
  return v[0];
}

inline Vec tree_mean(std::vector<Vec> v) {
  const double n = static_cast<double>(v.size());
  Vec s = tree_sum(std::move(v));
  return s / n;
}

inline double tree_mean(std::vector<double> v) {
  const double n = static_cast<double>(v.size());
  return tree_sum(std::move(v)) / n;
}

inline double relative_error(double got, double want) {
  const double scale = std::max(1.0, std::abs(want));
  return std::abs(got - want) / scale;
}

inline double max_relative_error(const Vec& got, const Vec& want) {
  double worst = 0.0;
  for (int i = 0; i < got.size(); ++i) {
    worst = std::max(worst, relative_error(got[i], want[i]));
  }
  return worst;
}

}  // namespace vpg
