#include "vpg/vpg.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"variational policy gradient toolkit"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed_override;
  std::optional<std::string> out_override;

  const std::vector<std::string> commands{"train", "fit-density", "gradcheck",
                                          "eval"};
  for (const auto& name : commands) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "path to the run config")
        ->required();
    sub->add_option("--seed", seed_override, "override the config seed");
    sub->add_option("--out", out_override, "override the output directory");
  }

  CLI11_PARSE(app, argc, argv);

  try {
    vpg::RunConfig cfg = vpg::parse_config(read_file(config_path));
    const std::string command = app.get_subcommands().front()->get_name();
    if (cfg.command != command) cfg.command = command;
    if (seed_override) cfg.seed = *seed_override;
    if (out_override) cfg.out_dir = *out_override;
    return vpg::run(cfg);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
