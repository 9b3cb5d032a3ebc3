#pragma once

#include "vpg/algos.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>

namespace vpg {

// ---------------------------------------------------------------------------
// Run configuration: a line-oriented `key = value` format with [section]
// headers.  Unknown keys are rejected with their line number; constraint
// violations name the field and the constraint.
// ---------------------------------------------------------------------------

struct DensityFitConfig {
  std::string target = "gaussian";  // gaussian | mixture
  int dim = 1;
  std::vector<double> mu = {2.0};
  std::vector<double> sigma = {0.5};
  double mix_weight = 0.5;
  double mix_mu1 = -0.5;
  double mix_mu2 = 0.5;
  double mix_sigma1 = 1.0;
  double mix_sigma2 = 1.0;
  int steps = 2000;
  double step_size = 0.05;
  int particles = 32;
  double momentum = 0.0;
  int trace_every = 10;
};

struct EvalConfig {
  int episodes = 100;
  std::string checkpoint;       // empty = <out>/checkpoint.bin
  std::string mode = "mean";    // mean | posterior
};

struct RunConfig {
  std::string command = "train";  // train | fit-density | gradcheck | eval
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out_dir = "runs/out";

  TrainConfig train;
  DensityFitConfig density;
  EvalConfig eval;

  bool operator==(const RunConfig& other) const;
};

namespace detail {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline double parse_double(const std::string& v, const std::string& key) {
  std::size_t pos = 0;
  double x = 0;
  try {
    x = std::stod(v, &pos);
  } catch (...) {
    throw ConfigError(key + ": unparseable number '" + v + "'");
  }
  if (pos != v.size()) {
    throw ConfigError(key + ": unparseable number '" + v + "'");
  }
  return x;
}

inline int parse_int(const std::string& v, const std::string& key) {
  std::size_t pos = 0;
  long long x = 0;
  try {
    x = std::stoll(v, &pos);
  } catch (...) {
    throw ConfigError(key + ": unparseable integer '" + v + "'");
  }
  if (pos != v.size()) {
    throw ConfigError(key + ": unparseable integer '" + v + "'");
  }
  return static_cast<int>(x);
}

inline std::uint64_t parse_u64(const std::string& v, const std::string& key) {
  std::size_t pos = 0;
  unsigned long long x = 0;
  try {
    x = std::stoull(v, &pos);
  } catch (...) {
    throw ConfigError(key + ": unparseable integer '" + v + "'");
  }
  if (pos != v.size()) {
    throw ConfigError(key + ": unparseable integer '" + v + "'");
  }
  return static_cast<std::uint64_t>(x);
}

inline bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true/false, got '" + v + "'");
}

inline std::vector<int> parse_int_list(const std::string& v,
                                       const std::string& key) {
  std::vector<int> out;
  std::string item;
  std::istringstream ss(v);
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(parse_int(item, key));
  }
  return out;
}

inline std::vector<double> parse_double_list(const std::string& v,
                                             const std::string& key) {
  std::vector<double> out;
  std::string item;
  std::istringstream ss(v);
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(parse_double(item, key));
  }
  return out;
}

template <typename T>
std::string join_list(const std::vector<T>& v) {
  std::ostringstream ss;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) ss << ",";
    ss << v[i];
  }
  return ss.str();
}

using KeyHandler = std::function<void(RunConfig&, const std::string&)>;

inline const std::map<std::string, KeyHandler>& config_handlers() {
  static const std::map<std::string, KeyHandler> handlers = [] {
    std::map<std::string, KeyHandler> h;
    auto req_pos = [](double x, const std::string& key) {
      if (!(x > 0.0)) throw ConfigError(key + ": must be > 0, got " +
                                        std::to_string(x));
      return x;
    };
    auto req_nonneg = [](double x, const std::string& key) {
      if (x < 0.0) throw ConfigError(key + ": must be >= 0, got " +
                                     std::to_string(x));
      return x;
    };

    h[".command"] = [](RunConfig& c, const std::string& v) {
      if (v != "train" && v != "fit-density" && v != "gradcheck" &&
          v != "eval") {
        throw ConfigError("command: unknown command '" + v + "'");
      }
      c.command = v;
    };
    h[".seed"] = [](RunConfig& c, const std::string& v) {
      c.seed = parse_u64(v, "seed");
      c.seed_set = true;
    };
    h[".out"] = [](RunConfig& c, const std::string& v) { c.out_dir = v; };

    // [env]; `name` resets horizon/gamma to that environment's defaults,
    // so it belongs first in the section.
    h["env.name"] = [](RunConfig& c, const std::string& v) {
      c.train.env = make_env(v);  // rejects unknown names
    };
    h["env.horizon"] = [](RunConfig& c, const std::string& v) {
      const int x = parse_int(v, "env.horizon");
      if (x < 1) throw ConfigError("env.horizon: must be >= 1");
      c.train.env.horizon = x;
    };
    h["env.gamma"] = [](RunConfig& c, const std::string& v) {
      const double x = parse_double(v, "env.gamma");
      if (!(x > 0.0 && x <= 1.0)) {
        throw ConfigError("env.gamma: must be in (0,1]");
      }
      c.train.env.gamma = x;
    };

    // [train]
    h["train.algorithm"] = [](RunConfig& c, const std::string& v) {
      if (v != "vpg" && v != "trpo" && v != "ppo") {
        throw ConfigError("train.algorithm: unknown algorithm '" + v + "'");
      }
      c.train.algorithm = v;
    };
    h["train.iterations"] = [req_nonneg](RunConfig& c, const std::string& v) {
      c.train.iterations = static_cast<int>(
          req_nonneg(parse_int(v, "train.iterations"), "train.iterations"));
    };
    h["train.particles"] = [req_pos](RunConfig& c, const std::string& v) {
      c.train.particles = static_cast<int>(
          req_pos(parse_int(v, "train.particles"), "train.particles"));
    };
    h["train.rollouts"] = [req_pos](RunConfig& c, const std::string& v) {
      c.train.rollouts_per_particle = static_cast<int>(
          req_pos(parse_int(v, "train.rollouts"), "train.rollouts"));
    };
    h["train.step_size"] = [req_pos](RunConfig& c, const std::string& v) {
      c.train.step_size =
          req_pos(parse_double(v, "train.step_size"), "train.step_size");
    };
    h["train.momentum"] = [req_nonneg](RunConfig& c, const std::string& v) {
      const double x = parse_double(v, "train.momentum");
      if (x < 0.0 || x >= 1.0) {
        throw ConfigError("train.momentum: must be in [0,1)");
      }
      c.train.momentum = x;
    };
    h["train.max_grad_norm"] = [req_nonneg](RunConfig& c,
                                            const std::string& v) {
      c.train.max_grad_norm = req_nonneg(
          parse_double(v, "train.max_grad_norm"), "train.max_grad_norm");
    };
    h["train.sigma0"] = [req_pos](RunConfig& c, const std::string& v) {
      c.train.sigma0 =
          req_pos(parse_double(v, "train.sigma0"), "train.sigma0");
    };
    h["train.policy"] = [](RunConfig& c, const std::string& v) {
      if (v != "mlp" && v != "simple" && v != "aux") {
        throw ConfigError("train.policy: unknown policy kind '" + v + "'");
      }
      c.train.policy_kind = v;
    };
    h["train.policy_hidden"] = [](RunConfig& c, const std::string& v) {
      c.train.policy_hidden = parse_int_list(v, "train.policy_hidden");
      for (int w : c.train.policy_hidden) {
        if (w < 1) throw ConfigError("train.policy_hidden: widths must be >= 1");
      }
    };
    h["train.aux_theta_dim"] = [req_pos](RunConfig& c, const std::string& v) {
      c.train.aux_theta_dim = static_cast<int>(req_pos(
          parse_int(v, "train.aux_theta_dim"), "train.aux_theta_dim"));
    };
    h["train.aux_hidden"] = [](RunConfig& c, const std::string& v) {
      c.train.aux_hidden = parse_int_list(v, "train.aux_hidden");
      for (int w : c.train.aux_hidden) {
        if (w < 1) throw ConfigError("train.aux_hidden: widths must be >= 1");
      }
    };
    h["train.aux_step_size"] = [req_pos](RunConfig& c, const std::string& v) {
      c.train.aux_step_size = req_pos(
          parse_double(v, "train.aux_step_size"), "train.aux_step_size");
    };
    h["train.zero_rewards"] = [](RunConfig& c, const std::string& v) {
      c.train.zero_rewards = parse_bool(v, "train.zero_rewards");
    };

    // [advantage]
    h["advantage.mode"] = [](RunConfig& c, const std::string& v) {
      if (v == "mc") {
        c.train.adv.mode = AdvantageMode::mc_return_minus_baseline;
      } else if (v == "td") {
        c.train.adv.mode = AdvantageMode::td;
      } else if (v == "gae") {
        c.train.adv.mode = AdvantageMode::gae;
      } else {
        throw ConfigError("advantage.mode: unknown mode '" + v + "'");
      }
    };
    h["advantage.lambda"] = [](RunConfig& c, const std::string& v) {
      const double x = parse_double(v, "advantage.lambda");
      if (x < 0.0 || x > 1.0) {
        throw ConfigError("advantage.lambda: must be in [0,1]");
      }
      c.train.adv.lambda = x;
    };
    h["advantage.normalize"] = [](RunConfig& c, const std::string& v) {
      c.train.adv.normalize = parse_bool(v, "advantage.normalize");
    };
    h["advantage.literal_td"] = [](RunConfig& c, const std::string& v) {
      c.train.adv.literal_td = parse_bool(v, "advantage.literal_td");
    };

    // [baseline]
    h["baseline.hidden"] = [req_pos](RunConfig& c, const std::string& v) {
      c.train.baseline_hidden = static_cast<int>(
          req_pos(parse_int(v, "baseline.hidden"), "baseline.hidden"));
    };
    h["baseline.epochs"] = [req_nonneg](RunConfig& c, const std::string& v) {
      c.train.baseline_epochs = static_cast<int>(
          req_nonneg(parse_int(v, "baseline.epochs"), "baseline.epochs"));
    };
    h["baseline.step_size"] = [req_pos](RunConfig& c, const std::string& v) {
      c.train.baseline_step = req_pos(
          parse_double(v, "baseline.step_size"), "baseline.step_size");
    };

    // [schedule]
    h["schedule.mode"] = [](RunConfig& c, const std::string& v) {
      if (v == "constant") {
        c.train.schedule.mode = ScheduleMode::constant;
      } else if (v == "geometric") {
        c.train.schedule.mode = ScheduleMode::geometric;
      } else {
        throw ConfigError("schedule.mode: unknown mode '" + v + "'");
      }
    };
    h["schedule.alpha0"] = [req_pos](RunConfig& c, const std::string& v) {
      c.train.schedule.alpha0 =
          req_pos(parse_double(v, "schedule.alpha0"), "schedule.alpha0");
    };
    h["schedule.decay"] = [](RunConfig& c, const std::string& v) {
      const double x = parse_double(v, "schedule.decay");
      if (!(x > 0.0 && x <= 1.0)) {
        throw ConfigError("schedule.decay: must be in (0,1]");
      }
      c.train.schedule.decay = x;
    };
    h["schedule.floor"] = [req_pos](RunConfig& c, const std::string& v) {
      c.train.schedule.floor =
          req_pos(parse_double(v, "schedule.floor"), "schedule.floor");
    };

    // [trpo]
    h["trpo.delta"] = [req_pos](RunConfig& c, const std::string& v) {
      c.train.trpo.delta =
          req_pos(parse_double(v, "trpo.delta"), "trpo.delta");
    };
    h["trpo.cg_iters"] = [req_pos](RunConfig& c, const std::string& v) {
      c.train.trpo.cg_iters = static_cast<int>(
          req_pos(parse_int(v, "trpo.cg_iters"), "trpo.cg_iters"));
    };
    h["trpo.cg_damping"] = [req_pos](RunConfig& c, const std::string& v) {
      c.train.trpo.cg_damping =
          req_pos(parse_double(v, "trpo.cg_damping"), "trpo.cg_damping");
    };
    h["trpo.backtrack_steps"] = [req_nonneg](RunConfig& c,
                                             const std::string& v) {
      c.train.trpo.backtrack_steps = static_cast<int>(req_nonneg(
          parse_int(v, "trpo.backtrack_steps"), "trpo.backtrack_steps"));
    };
    h["trpo.fisher_mode"] = [](RunConfig& c, const std::string& v) {
      if (v == "kl_hessian") {
        c.train.trpo.fisher_mode = FisherMode::kl_hessian;
      } else if (v == "score_covariance") {
        c.train.trpo.fisher_mode = FisherMode::score_covariance;
      } else {
        throw ConfigError("trpo.fisher_mode: unknown mode '" + v + "'");
      }
    };
    h["trpo.eta"] = [req_pos](RunConfig& c, const std::string& v) {
      c.train.trpo.eta = req_pos(parse_double(v, "trpo.eta"), "trpo.eta");
    };

    // [ppo]
    h["ppo.lambda_kl"] = [req_pos](RunConfig& c, const std::string& v) {
      c.train.ppo.lambda_kl =
          req_pos(parse_double(v, "ppo.lambda_kl"), "ppo.lambda_kl");
    };
    h["ppo.inner_epochs"] = [req_pos](RunConfig& c, const std::string& v) {
      c.train.ppo.inner_epochs = static_cast<int>(
          req_pos(parse_int(v, "ppo.inner_epochs"), "ppo.inner_epochs"));
    };
    h["ppo.inner_step_size"] = [req_pos](RunConfig& c, const std::string& v) {
      c.train.ppo.inner_step_size = req_pos(
          parse_double(v, "ppo.inner_step_size"), "ppo.inner_step_size");
    };

    // [density]
    h["density.target"] = [](RunConfig& c, const std::string& v) {
      if (v != "gaussian" && v != "mixture") {
        throw ConfigError("density.target: unknown target '" + v + "'");
      }
      c.density.target = v;
    };
    h["density.dim"] = [req_pos](RunConfig& c, const std::string& v) {
      c.density.dim = static_cast<int>(
          req_pos(parse_int(v, "density.dim"), "density.dim"));
    };
    h["density.mu"] = [](RunConfig& c, const std::string& v) {
      c.density.mu = parse_double_list(v, "density.mu");
    };
    h["density.sigma"] = [](RunConfig& c, const std::string& v) {
      c.density.sigma = parse_double_list(v, "density.sigma");
      for (double s : c.density.sigma) {
        if (!(s > 0.0)) throw ConfigError("density.sigma: must be > 0");
      }
    };
    h["density.mix_weight"] = [](RunConfig& c, const std::string& v) {
      const double x = parse_double(v, "density.mix_weight");
      if (!(x > 0.0 && x < 1.0)) {
        throw ConfigError("density.mix_weight: must be in (0,1)");
      }
      c.density.mix_weight = x;
    };
    h["density.mix_mu1"] = [](RunConfig& c, const std::string& v) {
      c.density.mix_mu1 = parse_double(v, "density.mix_mu1");
    };
    h["density.mix_mu2"] = [](RunConfig& c, const std::string& v) {
      c.density.mix_mu2 = parse_double(v, "density.mix_mu2");
    };
    h["density.mix_sigma1"] = [req_pos](RunConfig& c, const std::string& v) {
      c.density.mix_sigma1 = req_pos(
          parse_double(v, "density.mix_sigma1"), "density.mix_sigma1");
    };
    h["density.mix_sigma2"] = [req_pos](RunConfig& c, const std::string& v) {
      c.density.mix_sigma2 = req_pos(
          parse_double(v, "density.mix_sigma2"), "density.mix_sigma2");
    };
    h["density.steps"] = [req_pos](RunConfig& c, const std::string& v) {
      c.density.steps = static_cast<int>(
          req_pos(parse_int(v, "density.steps"), "density.steps"));
    };
    h["density.step_size"] = [req_pos](RunConfig& c, const std::string& v) {
      c.density.step_size = req_pos(
          parse_double(v, "density.step_size"), "density.step_size");
    };
    h["density.particles"] = [req_pos](RunConfig& c, const std::string& v) {
      c.density.particles = static_cast<int>(
          req_pos(parse_int(v, "density.particles"), "density.particles"));
    };
    h["density.momentum"] = [](RunConfig& c, const std::string& v) {
      const double x = parse_double(v, "density.momentum");
      if (x < 0.0 || x >= 1.0) {
        throw ConfigError("density.momentum: must be in [0,1)");
      }
      c.density.momentum = x;
    };
    h["density.trace_every"] = [req_pos](RunConfig& c, const std::string& v) {
      c.density.trace_every = static_cast<int>(req_pos(
          parse_int(v, "density.trace_every"), "density.trace_every"));
    };

    // [eval]
    h["eval.episodes"] = [req_pos](RunConfig& c, const std::string& v) {
      c.eval.episodes = static_cast<int>(
          req_pos(parse_int(v, "eval.episodes"), "eval.episodes"));
    };
    h["eval.checkpoint"] = [](RunConfig& c, const std::string& v) {
      c.eval.checkpoint = v;
    };
    h["eval.mode"] = [](RunConfig& c, const std::string& v) {
      if (v != "mean" && v != "posterior") {
        throw ConfigError("eval.mode: must be mean or posterior");
      }
      c.eval.mode = v;
    };
    return h;
  }();
  return handlers;
}

}  // namespace detail

inline RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::string section;
  int line_no = 0;
  const auto& handlers = detail::config_handlers();
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw std::runtime_error("config line " + std::to_string(line_no) +
                                 ": malformed section header");
      }
      section = detail::trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error("config line " + std::to_string(line_no) +
                               ": expected key = value");
    }
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    const std::string full = section + "." + key;
    const auto it = handlers.find(full);
    if (it == handlers.end()) {
      throw std::runtime_error("config line " + std::to_string(line_no) +
                               ": unknown key '" + full + "'");
    }
    try {
      it->second(cfg, value);
    } catch (const detail::ConfigError& e) {
      throw std::runtime_error("config line " + std::to_string(line_no) +
                               ": " + e.what());
    }
  }
  if (!cfg.seed_set) {
    throw std::runtime_error("config: missing required key 'seed'");
  }
  // Keep the advantage discount in lockstep with the environment.
  cfg.train.adv.gamma = cfg.train.env.gamma;
  cfg.train.validate();
  return cfg;
}

inline std::string serialize_config(const RunConfig& c) {
  std::ostringstream o;
  o.precision(17);
  o << "command = " << c.command << "\n";
  o << "seed = " << c.seed << "\n";
  o << "out = " << c.out_dir << "\n\n";

  o << "[env]\n";
  o << "name = " << c.train.env.name << "\n";
  o << "horizon = " << c.train.env.horizon << "\n";
  o << "gamma = " << c.train.env.gamma << "\n\n";

  o << "[train]\n";
  o << "algorithm = " << c.train.algorithm << "\n";
  o << "iterations = " << c.train.iterations << "\n";
  o << "particles = " << c.train.particles << "\n";
  o << "rollouts = " << c.train.rollouts_per_particle << "\n";
  o << "step_size = " << c.train.step_size << "\n";
  o << "momentum = " << c.train.momentum << "\n";
  o << "max_grad_norm = " << c.train.max_grad_norm << "\n";
  o << "sigma0 = " << c.train.sigma0 << "\n";
  o << "policy = " << c.train.policy_kind << "\n";
  o << "policy_hidden = " << detail::join_list(c.train.policy_hidden) << "\n";
  o << "aux_theta_dim = " << c.train.aux_theta_dim << "\n";
  o << "aux_hidden = " << detail::join_list(c.train.aux_hidden) << "\n";
  o << "aux_step_size = " << c.train.aux_step_size << "\n";
  o << "zero_rewards = " << (c.train.zero_rewards ? "true" : "false")
    << "\n\n";

  o << "[advantage]\n";
  o << "mode = "
    << (c.train.adv.mode == AdvantageMode::gae
            ? "gae"
            : c.train.adv.mode == AdvantageMode::td ? "td" : "mc")
    << "\n";
  o << "lambda = " << c.train.adv.lambda << "\n";
  o << "normalize = " << (c.train.adv.normalize ? "true" : "false") << "\n";
  o << "literal_td = " << (c.train.adv.literal_td ? "true" : "false")
    << "\n\n";

  o << "[baseline]\n";
  o << "hidden = " << c.train.baseline_hidden << "\n";
  o << "epochs = " << c.train.baseline_epochs << "\n";
  o << "step_size = " << c.train.baseline_step << "\n\n";

  o << "[schedule]\n";
  o << "mode = "
    << (c.train.schedule.mode == ScheduleMode::constant ? "constant"
                                                        : "geometric")
    << "\n";
  o << "alpha0 = " << c.train.schedule.alpha0 << "\n";
  o << "decay = " << c.train.schedule.decay << "\n";
  o << "floor = " << c.train.schedule.floor << "\n\n";

  o << "[trpo]\n";
  o << "delta = " << c.train.trpo.delta << "\n";
  o << "cg_iters = " << c.train.trpo.cg_iters << "\n";
  o << "cg_damping = " << c.train.trpo.cg_damping << "\n";
  o << "backtrack_steps = " << c.train.trpo.backtrack_steps << "\n";
  o << "fisher_mode = "
    << (c.train.trpo.fisher_mode == FisherMode::kl_hessian
            ? "kl_hessian"
            : "score_covariance")
    << "\n";
  o << "eta = " << c.train.trpo.eta << "\n\n";

  o << "[ppo]\n";
  o << "lambda_kl = " << c.train.ppo.lambda_kl << "\n";
  o << "inner_epochs = " << c.train.ppo.inner_epochs << "\n";
  o << "inner_step_size = " << c.train.ppo.inner_step_size << "\n\n";

  o << "[density]\n";
  o << "target = " << c.density.target << "\n";
  o << "dim = " << c.density.dim << "\n";
  o << "mu = " << detail::join_list(c.density.mu) << "\n";
  o << "sigma = " << detail::join_list(c.density.sigma) << "\n";
  o << "mix_weight = " << c.density.mix_weight << "\n";
  o << "mix_mu1 = " << c.density.mix_mu1 << "\n";
  o << "mix_mu2 = " << c.density.mix_mu2 << "\n";
  o << "mix_sigma1 = " << c.density.mix_sigma1 << "\n";
  o << "mix_sigma2 = " << c.density.mix_sigma2 << "\n";
  o << "steps = " << c.density.steps << "\n";
  o << "step_size = " << c.density.step_size << "\n";
  o << "particles = " << c.density.particles << "\n";
  o << "momentum = " << c.density.momentum << "\n";
  o << "trace_every = " << c.density.trace_every << "\n\n";

  o << "[eval]\n";
  o << "episodes = " << c.eval.episodes << "\n";
  o << "checkpoint = " << c.eval.checkpoint << "\n";
  o << "mode = " << c.eval.mode << "\n";
  return o.str();
}

inline bool RunConfig::operator==(const RunConfig& other) const {
  return serialize_config(*this) == serialize_config(other);
}

}  // namespace vpg
