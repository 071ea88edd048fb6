#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cyclewarp/errors.hpp"
#include "cyclewarp/experiment.hpp"

namespace {

enum ExitCode { kOk = 0, kConfig = 2, kNumerical = 3, kIo = 4 };

struct Options {
  std::optional<std::string> config;
  std::optional<uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> jobs;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config, "JSON config file");
  cmd->add_option("--seed", o.seed, "run a single seed instead of the configured list");
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--jobs", o.jobs, "worker count (0 = logical cores)");
  cmd->add_option("--set", o.overrides, "override a config field: dotted.key=value")
      ->take_all();
}

cyclewarp::ExperimentConfig resolve(const Options& o) {
  std::vector<std::string> overrides = o.overrides;
  if (o.seed) overrides.push_back("scenes.seeds=[" + std::to_string(*o.seed) + "]");
  if (o.jobs) overrides.push_back("jobs=" + std::to_string(*o.jobs));
  if (o.out) overrides.push_back("out=" + cyclewarp::json(*o.out).dump());
  if (o.config) {
    const std::filesystem::path p(*o.config);
    if (!std::filesystem::exists(p)) throw cyclewarp::ConfigError("config file not found: " + *o.config);
    return cyclewarp::load_config(&p, overrides);
  }
  return cyclewarp::load_config(nullptr, overrides);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cycle-warping depth and pose recovery on synthetic scenes"};
  app.require_subcommand(1);
  Options opts;
  using Command = void (*)(const cyclewarp::ExperimentConfig&);
  const std::vector<std::tuple<const char*, const char*, Command>> commands{
      {"gen", "generate scene archives", cyclewarp::cmd_gen},
      {"perturb", "write brightness-perturbed copies of the scenes", cyclewarp::cmd_perturb},
      {"train", "optimize depth and pose per scene", cyclewarp::cmd_train},
      {"eval", "evaluate trained checkpoints", cyclewarp::cmd_eval},
      {"compare", "baseline vs cycle constraint under each perturbation", cyclewarp::cmd_compare},
  };
  std::map<CLI::App*, Command> dispatch;
  for (const auto& [name, help, fn] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    add_common(sub, opts);
    dispatch[sub] = fn;
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    const cyclewarp::ExperimentConfig cfg = resolve(opts);
    for (const auto& [sub, fn] : dispatch) {
      if (sub->parsed()) fn(cfg);
    }
    return kOk;
  } catch (const cyclewarp::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const cyclewarp::MisuseError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const cyclewarp::NumericalError& e) {
    std::cerr << "numerical abort: " << e.what() << '\n';
    return kNumerical;
  } catch (const cyclewarp::IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kIo;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kIo;
  }
}
