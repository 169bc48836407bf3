// Command-line front end for the staged attack pipeline.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "adapam/pipeline.hpp"

namespace {

using adapam::ConfigError;
using adapam::ExperimentConfig;
namespace fs = std::filesystem;

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<std::size_t> workers;
  std::string env;
  std::string methods;
  std::string rate_grid;
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

ExperimentConfig resolve_config(const Options& o) {
  nlohmann::json j = nlohmann::json::object();
  if (!o.config_path.empty()) {
    if (!fs::exists(o.config_path)) throw ConfigError("config file not found: " + o.config_path);
    try {
      j = nlohmann::json::parse(adapam::read_file(o.config_path));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
  }
  if (!o.env.empty()) j["env"] = o.env;
  if (o.seed) j["seed"] = *o.seed;
  if (o.workers) j["eval"]["workers"] = *o.workers;
  if (!o.methods.empty()) j["eval"]["methods"] = split_list(o.methods);
  if (!o.rate_grid.empty()) {
    std::vector<double> rates;
    for (const auto& r : split_list(o.rate_grid)) {
      try {
        std::size_t used = 0;
        rates.push_back(std::stod(r, &used));
        if (used != r.size()) throw std::invalid_argument(r);
      } catch (const std::exception&) {
        throw ConfigError("--rate-grid: not a number: " + r);
      }
    }
    j["eval"]["rate_grid"] = rates;
  }
  return adapam::config_from_json(j);
}

fs::path resolve_out(const Options& o, const ExperimentConfig& c) {
  if (!o.out.empty()) return o.out;
  if (!c.out.empty()) return c.out;
  const char* root = std::getenv("ADAPAM_OUT");
  fs::path base = root && *root ? fs::path(root) : fs::path("runs");
  return base / (c.env + "-seed" + std::to_string(c.seed));
}

void print_tables(const adapam::MethodTables& t) {
  std::cout << "performance\n" << t.performance << "\nstealth\n" << t.stealth << "\ndetection\n" << t.detection;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adaptive black-box observation attacks on cooperative multi-agent policies"};
  app.require_subcommand(1);
  Options o;

  const std::vector<std::pair<std::string, std::string>> commands{
      {"train-victim", "train the independent-learner victim team"},
      {"collect-expert", "record victim observation-action pairs"},
      {"train-proxy", "imitate each victim agent with an adversarially trained proxy"},
      {"train-attacker", "learn the adaptive agent and action selection policy"},
      {"train-detector", "fit the action-distribution anomaly detector on clean play"},
      {"run-attack", "evaluate every method at the configured rate over the eval seeds"},
      {"sweep-rate", "evaluate attack strength across the perturbation-rate grid"},
      {"report", "aggregate run-attack outputs into tables"},
      {"pipeline", "run every stage in order"},
  };
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", o.config_path, "experiment config (JSON)");
    sub->add_option("--seed", o.seed, "override the experiment seed");
    sub->add_option("--out", o.out, "output directory (default $ADAPAM_OUT/<env>-seed<seed>)");
    sub->add_option("--workers", o.workers, "parallel evaluation cells");
    sub->add_option("--env", o.env, "coop_spread or grid_battle");
    sub->add_option("--method", o.methods, "comma-separated attack methods");
    sub->add_option("--rate-grid", o.rate_grid, "comma-separated perturbation rates");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  const std::string cmd = app.get_subcommands().front()->get_name();
  try {
    ExperimentConfig cfg = resolve_config(o);
    adapam::Pipeline p(cfg, resolve_out(o, cfg));
    if (cmd == "train-victim") p.train_victim();
    else if (cmd == "collect-expert") p.collect_expert();
    else if (cmd == "train-proxy") p.train_proxy();
    else if (cmd == "train-attacker") p.train_attacker();
    else if (cmd == "train-detector") p.train_detector();
    else if (cmd == "run-attack") p.run_attack();
    else if (cmd == "sweep-rate") std::cout << adapam::sweep_csv(p.sweep_rate());
    else if (cmd == "report") print_tables(p.report());
    else if (cmd == "pipeline") {
      p.run_all();
      print_tables(p.report());
    }
    std::cerr << cmd << ": done, outputs in " << p.out().string() << "\n";
    return 0;
  } catch (const adapam::StagedDependencyError& e) {
    std::cerr << cmd << ": missing upstream stage \"" << e.stage() << "\"\n";
    return e.exit_code();
  } catch (const adapam::Error& e) {
    std::cerr << cmd << ": " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << cmd << ": unexpected error: " << e.what() << "\n";
    return 1;
  }
}
