#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "frontflow/frontflow.h"

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::vector<std::string> set;
};

void print_progress(const char* message, void*) { std::fprintf(stderr, "%s\n", message); }

int report(ff_status st) {
  if (st != FF_OK) std::fprintf(stderr, "error: %s\n", ff_last_error());
  return ff_exit_code(st);
}

class ConfigHandle {
 public:
  ~ConfigHandle() { ff_config_free(cfg_); }
  ff_status load(const Globals& g, const std::vector<std::pair<std::string, std::string>>& extra) {
    std::vector<std::string> kv;
    for (const auto& s : g.set) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) {
        kv.push_back(s);
        kv.emplace_back();
        continue;
      }
      kv.push_back(s.substr(0, eq));
      kv.push_back(s.substr(eq + 1));
    }
    for (const auto& [k, v] : extra) {
      kv.push_back(k);
      kv.push_back(v);
    }
    if (g.seed) {
      kv.emplace_back("seed");
      kv.push_back(std::to_string(*g.seed));
    }
    if (g.workers) {
      kv.emplace_back("workers");
      kv.push_back(std::to_string(*g.workers));
    }
    std::vector<const char*> ptrs;
    for (const auto& s : kv) ptrs.push_back(s.c_str());
    ptrs.push_back(nullptr);
    return ff_config_load(g.config.empty() ? nullptr : g.config.c_str(), ptrs.data(), 1, &cfg_);
  }
  const ff_config* get() const { return cfg_; }

 private:
  ff_config* cfg_ = nullptr;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Resin flow front simulation and Bayesian permeability inversion"};
  app.set_version_flag("--version", std::string(ff_version()));
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("-c,--config", g.config, "Run configuration (JSON)")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Master seed");
  app.add_option("--workers", g.workers, "Worker threads for ensemble evaluation (0: all cores)")
      ->check(CLI::NonNegativeNumber);
  app.add_option("--set", g.set, "Override a config key, e.g. --set eki.J=200");

  std::string out, input, weights, stats, mode;
  int n = 0;
  std::vector<std::pair<std::string, std::string>> extra;

  auto* sample = app.add_subcommand("sample-prior", "Draw prior samples and export their fields");
  sample->add_option("-n", n, "Number of samples")->required()->check(CLI::PositiveNumber);
  sample->add_option("-o,--out", out, "Output directory")->required();

  auto* simulate = app.add_subcommand("simulate", "Run the filling simulation for one parameter set");
  simulate->add_option("params", input, "PRM1 parameter file or JSON truth description")->required();
  simulate->add_option("-o,--out", out, "Output directory")->required();

  auto* data = app.add_subcommand("make-data", "Synthesise noisy sensor data from a truth");
  data->add_option("truth", input, "PRM1 parameter file or JSON truth description")->required();
  data->add_option("-o,--out", out, "Output CSV")->required();

  auto* corpus = app.add_subcommand("make-corpus", "Export prior draws and simulations for surrogate training");
  corpus->add_option("-n", n, "Number of samples")->required()->check(CLI::PositiveNumber);
  corpus->add_option("-o,--out", out, "Output directory")->required();

  auto* invert = app.add_subcommand("invert", "Ensemble Kalman inversion of a measurement CSV");
  invert->add_option("data", input, "Measurement CSV (time_s,sensor_id,pressure_Pa)")->required();
  invert->add_option("-o,--out", out, "Output directory")->required();
  invert->add_option("--mode", mode, "full or surrogate")->check(CLI::IsMember({"full", "surrogate"}));
  invert->add_option("--weights", weights, "DONW1 surrogate weights");
  invert->add_option("--stats", stats, "DOES1 modelling-error statistics");

  auto* summarize = app.add_subcommand("summarize", "Posterior summary of a saved ensemble");
  summarize->add_option("ensemble", input, "ENS1 ensemble file")->required();
  summarize->add_option("-o,--out", out, "Output directory")->required();

  auto* show = app.add_subcommand("config", "Print the resolved configuration");

  CLI11_PARSE(app, argc, argv);

  if (!mode.empty()) extra.emplace_back("eki.mode", mode);
  if (!weights.empty()) extra.emplace_back("eki.weights", weights);
  if (!stats.empty()) extra.emplace_back("eki.stats", stats);

  ConfigHandle cfg;
  if (const auto st = cfg.load(g, extra); st != FF_OK) return report(st);

  if (*show) {
    std::printf("%s\n", ff_config_json(cfg.get()));
    return 0;
  }
  if (*sample) return report(ff_cmd_sample_prior(cfg.get(), n, out.c_str()));
  if (*simulate) return report(ff_cmd_simulate(cfg.get(), input.c_str(), out.c_str()));
  if (*data) return report(ff_cmd_make_data(cfg.get(), input.c_str(), out.c_str()));
  if (*corpus) return report(ff_cmd_make_corpus(cfg.get(), n, out.c_str(), print_progress, nullptr));
  if (*summarize) return report(ff_cmd_summarize(cfg.get(), input.c_str(), out.c_str()));
  if (*invert) {
    ff_inversion_report r{};
    const auto st = ff_cmd_invert(cfg.get(), input.c_str(), out.c_str(), print_progress, nullptr, &r);
    if (st == FF_OK)
      std::fprintf(stderr, "done: %d iterations, misfit/MN %.6g, %.1f s\n", r.iterations, r.final_misfit,
                   r.wall_seconds);
    return report(st);
  }
  return 1;
}
