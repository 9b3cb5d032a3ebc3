#pragma once

#include "vpg/checkpoint.hpp"
#include "vpg/config.hpp"
#include "vpg/gradcheck.hpp"
#include "vpg/klengine.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>

namespace vpg {

// Evaluation episode i draws all of its randomness from
// RngStream(seed, kEvalStream).child(i); the Riccati oracle uses the same
// scheme, so oracle and policy evaluation share initial-state draws.
constexpr std::uint64_t kEvalStream = 0xe7a1;

// ---------------------------------------------------------------------------
// Tab-separated metrics files.  Values are formatted deterministically and
// NaN/Inf are refused, so identical runs produce byte-identical files.
// ---------------------------------------------------------------------------

class MetricsWriter {
 public:
  MetricsWriter(const std::filesystem::path& path,
                std::vector<std::string> columns)
      : out_(path), columns_(std::move(columns)) {
    if (!out_) {
      throw std::runtime_error("metrics: cannot open " + path.string());
    }
    for (std::size_t i = 0; i < columns_.size(); ++i) {
      out_ << (i ? "\t" : "") << columns_[i];
    }
    out_ << "\n";
  }

  void row(const std::vector<double>& values) {
    if (values.size() != columns_.size()) {
      throw std::runtime_error("metrics: row width mismatch");
    }
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (!std::isfinite(values[i])) {
        throw std::runtime_error("metrics: refusing to write non-finite '" +
                                 columns_[i] + "'");
      }
      out_ << (i ? "\t" : "") << format(values[i]);
    }
    out_ << "\n";
  }

 private:
  static std::string format(double v) {
    std::ostringstream ss;
    ss << std::setprecision(12) << v;
    return ss.str();
  }

  std::ofstream out_;
  std::vector<std::string> columns_;
};

// ---------------------------------------------------------------------------
// Checkpoint assembly for training state.
// ---------------------------------------------------------------------------

inline ShapedParams train_checkpoint(const TrainState& st) {
  std::vector<ParamEntry> manifest{{"mu", st.transform.dim(), 1},
                                   {"log_sigma", st.transform.dim(), 1}};
  for (const auto& e : st.baseline.shaped_params().manifest()) {
    manifest.push_back({"baseline." + e.name, e.rows, e.cols});
  }
  const auto* aux = dynamic_cast<const AuxPolicy*>(st.policy.get());
  if (aux != nullptr) {
    for (const auto& e : aux->psi().manifest()) {
      manifest.push_back({"psi." + e.name, e.rows, e.cols});
    }
  }
  int total = 0;
  for (const auto& e : manifest) total += e.rows * e.cols;
  Vec data(total);
  int off = st.transform.dim();
  data.head(off) = st.transform.mu();
  data.segment(off, st.transform.dim()) = st.transform.log_sigma();
  off += st.transform.dim();
  data.segment(off, st.baseline.shaped_params().size()) =
      st.baseline.shaped_params().data();
  off += st.baseline.shaped_params().size();
  if (aux != nullptr) {
    data.segment(off, aux->psi().size()) = aux->psi().data();
  }
  return ShapedParams(std::move(manifest), std::move(data));
}

inline void restore_from_checkpoint(const ShapedParams& ck, TrainState& st) {
  const int d = st.transform.dim();
  const Vec& flat = ck.data();
  const int mu_at = ck.offset(ck.index_of("mu"));
  const int ls_at = ck.offset(ck.index_of("log_sigma"));
  st.transform = AffineTransform(flat.segment(mu_at, d),
                                 flat.segment(ls_at, d));
  const int nb = st.baseline.shaped_params().size();
  const int b_at = ck.offset(ck.index_of(
      "baseline." + st.baseline.shaped_params().manifest().front().name));
  st.baseline.set_params(flat.segment(b_at, nb));
  auto* aux = dynamic_cast<AuxPolicy*>(st.policy.get());
  if (aux != nullptr) {
    const int p_at =
        ck.offset(ck.index_of("psi." + aux->psi().manifest().front().name));
    aux->set_psi(flat.segment(p_at, aux->psi().size()));
  }
}

// ---------------------------------------------------------------------------
// Density targets from config.
// ---------------------------------------------------------------------------

inline Target make_density_target_from_config(const DensityFitConfig& dc) {
  if (dc.target == "gaussian") {
    if (static_cast<int>(dc.mu.size()) != dc.dim ||
        static_cast<int>(dc.sigma.size()) != dc.dim) {
      throw std::runtime_error(
          "density: mu/sigma lists must match density.dim");
    }
    Vec m(dc.dim), s(dc.dim);
    for (int i = 0; i < dc.dim; ++i) {
      m[i] = dc.mu[static_cast<std::size_t>(i)];
      s[i] = dc.sigma[static_cast<std::size_t>(i)];
    }
    const auto log_p = [m, s](const Vec& x) {
      double acc = 0.0;
      for (int i = 0; i < x.size(); ++i) {
        const double z = (x[i] - m[i]) / s[i];
        acc += -0.5 * z * z - std::log(s[i]) - 0.5 * std::log(2.0 * M_PI);
      }
      return acc;
    };
    const auto grad = [m, s](const Vec& x) {
      Vec g(x.size());
      for (int i = 0; i < x.size(); ++i) {
        g[i] = -(x[i] - m[i]) / (s[i] * s[i]);
      }
      return g;
    };
    return make_density_target(log_p, grad);
  }
  if (dc.dim != 1) {
    throw std::runtime_error("density: the mixture target is 1-D");
  }
  const double w = dc.mix_weight;
  const double m1 = dc.mix_mu1, m2 = dc.mix_mu2;
  const double s1 = dc.mix_sigma1, s2 = dc.mix_sigma2;
  const auto comp = [](double x, double m, double s) {
    const double z = (x - m) / s;
    return std::exp(-0.5 * z * z) / (s * std::sqrt(2.0 * M_PI));
  };
  const auto log_p = [=](const Vec& x) {
    return std::log(w * comp(x[0], m1, s1) + (1.0 - w) * comp(x[0], m2, s2));
  };
  const auto grad = [=](const Vec& x) {
    const double p1 = w * comp(x[0], m1, s1);
    const double p2 = (1.0 - w) * comp(x[0], m2, s2);
    Vec g(1);
    g[0] = (p1 * (-(x[0] - m1) / (s1 * s1)) +
            p2 * (-(x[0] - m2) / (s2 * s2))) /
           (p1 + p2);
    return g;
  };
  return make_density_target(log_p, grad);
}

// ---------------------------------------------------------------------------
// Commands.
// ---------------------------------------------------------------------------

namespace detail {

inline std::filesystem::path resolve_out_dir(const RunConfig& cfg) {
  const char* env_override = std::getenv("VPG_OUT");
  const std::filesystem::path dir =
      env_override != nullptr ? env_override : cfg.out_dir;
  std::filesystem::create_directories(dir);
  return dir;
}

inline void write_resolved_config(const RunConfig& cfg,
                                  const std::filesystem::path& dir) {
  std::ofstream out(dir / "config.resolved.txt");
  out << serialize_config(cfg);
}

}  // namespace detail

inline int run_train(const RunConfig& cfg) {
  const auto dir = detail::resolve_out_dir(cfg);
  detail::write_resolved_config(cfg, dir);

  TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  TrainResult result = train(tc);

  MetricsWriter metrics(dir / "metrics.tsv",
                        {"iteration", "alpha", "mean_return", "policy_kl",
                         "grad_norm", "mean_log_det", "trpo_accepted",
                         "cg_fallback", "inner_aborted"});
  MetricsWriter timing(dir / "timing.tsv", {"iteration", "wall_seconds"});
  for (const auto& m : result.metrics) {
    metrics.row({static_cast<double>(m.iteration), m.alpha, m.mean_return,
                 m.policy_kl, m.grad_norm, m.mean_log_det,
                 m.trpo_accepted ? 1.0 : 0.0, m.cg_fallback ? 1.0 : 0.0,
                 m.inner_aborted ? 1.0 : 0.0});
    timing.row({static_cast<double>(m.iteration), m.wall_seconds});
  }
  save_params_file(dir / "checkpoint.bin", train_checkpoint(result.state));

  if (result.aborted) {
    std::cerr << "train: aborted with non-finite parameters at iteration "
              << result.aborted_at << "; last good state checkpointed\n";
    return 1;
  }
  const double last_return =
      result.metrics.empty() ? 0.0 : result.metrics.back().mean_return;
  std::cout << "train: " << tc.algorithm << " on " << tc.env.name << ", "
            << result.metrics.size() << " iterations, final mean return "
            << last_return << "\n";
  return 0;
}

inline int run_fit_density(const RunConfig& cfg) {
  const auto dir = detail::resolve_out_dir(cfg);
  detail::write_resolved_config(cfg, dir);

  const Target target = make_density_target_from_config(cfg.density);
  AffineTransform t = AffineTransform::standard(cfg.density.dim);
  FitDensityOptions opt;
  opt.steps = cfg.density.steps;
  opt.step_size = cfg.density.step_size;
  opt.n_particles = cfg.density.particles;
  opt.momentum = cfg.density.momentum;
  opt.trace_every = cfg.density.trace_every;
  RngStream rng(cfg.seed, 0xd5);
  const FitDensityResult fit = fit_density(t, target, opt, rng);

  const bool quad = cfg.density.dim == 1;
  std::vector<std::string> cols{"step", "kl_minus_logz"};
  if (quad) cols.push_back("kl_quadrature");
  MetricsWriter metrics(dir / "metrics.tsv", cols);
  const BaseDensity base{cfg.density.dim};
  for (std::size_t i = 0; i < fit.kl_trace.size(); ++i) {
    const int step = static_cast<int>(i) * cfg.density.trace_every;
    std::vector<double> row{
        static_cast<double>(std::min(step, fit.steps_taken - 1)),
        fit.kl_trace[i]};
    if (quad) {
      AffineTransform snap(fit.param_trace[i].head(1),
                           fit.param_trace[i].tail(1));
      const double mu = snap.mu()[0];
      const double sg = snap.sigma()[0];
      row.push_back(quadrature_kl_1d(
          [&](double x) {
            Vec v(1);
            v[0] = x;
            return pushforward_logpdf(snap, base, v);
          },
          [&](double x) {
            Vec v(1);
            v[0] = x;
            return target.log_prob(v);
          },
          mu - 12.0 * sg, mu + 12.0 * sg, 4001));
    }
    metrics.row(row);
  }
  save_params_file(dir / "checkpoint.bin", t.params());
  std::cout << "fit-density: " << cfg.density.target << " target, final mu ";
  for (int i = 0; i < t.dim(); ++i) std::cout << t.mu()[i] << " ";
  std::cout << "sigma ";
  for (int i = 0; i < t.dim(); ++i) std::cout << t.sigma()[i] << " ";
  std::cout << "\n";
  return 0;
}

inline int run_gradcheck(const RunConfig& cfg) {
  const auto dir = detail::resolve_out_dir(cfg);
  detail::write_resolved_config(cfg, dir);
  const auto reports = run_all_gradchecks(100, cfg.seed);
  MetricsWriter metrics(dir / "gradcheck.tsv",
                        {"suite_index", "worst_rel_error", "passed"});
  bool all = true;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto& r = reports[i];
    std::cout << (r.passed ? "PASS" : "FAIL") << "  " << r.suite
              << "  worst relative error " << std::setprecision(3)
              << std::scientific << r.worst_rel_error << std::defaultfloat
              << " over " << r.cases << " cases\n";
    metrics.row({static_cast<double>(i), r.worst_rel_error,
                 r.passed ? 1.0 : 0.0});
    all = all && r.passed;
  }
  return all ? 0 : 1;
}

inline int run_eval(const RunConfig& cfg) {
  const auto dir = detail::resolve_out_dir(cfg);
  detail::write_resolved_config(cfg, dir);

  TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  TrainState st = init_train_state(tc);
  const std::filesystem::path ck_path =
      cfg.eval.checkpoint.empty()
          ? dir / "checkpoint.bin"
          : std::filesystem::path(cfg.eval.checkpoint);
  restore_from_checkpoint(load_params_file(ck_path), st);

  const RngStream eval_rng(cfg.seed, kEvalStream);
  const EvalResult res =
      evaluate_policy(tc.env, *st.policy, st.transform, cfg.eval.episodes,
                      eval_rng, cfg.eval.mode);
  MetricsWriter metrics(dir / "eval.tsv",
                        {"episodes", "mean_return", "std_error"});
  metrics.row({static_cast<double>(res.episodes), res.mean_return,
               res.std_error});
  std::cout << "eval: " << res.episodes << " episodes, mean return "
            << res.mean_return << " (se " << res.std_error << ", mode "
            << cfg.eval.mode << ")\n";
  return 0;
}

inline int run(const RunConfig& cfg) {
  if (cfg.command == "train") return run_train(cfg);
  if (cfg.command == "fit-density") return run_fit_density(cfg);
  if (cfg.command == "gradcheck") return run_gradcheck(cfg);
  if (cfg.command == "eval") return run_eval(cfg);
  std::cerr << "unknown command '" << cfg.command << "'\n";
  return 2;
}

}  // namespace vpg
