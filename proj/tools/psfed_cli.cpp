// Command-line front end. Builds a JSON config from flags (optionally merged
// over a --config file) and drives the shared library through its C API.
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "psfedpalm.h"

namespace {

using nlohmann::json;

int finish(psfed_status status, char* result_json, const std::string& command) {
  if (status == PSFED_OK) {
    if (result_json) std::cout << result_json << "\n";
    psfed_string_free(result_json);
    return 0;
  }
  json err;
  err["error"] = {{"command", command},
                  {"status", static_cast<int>(status)},
                  {"message", psfed_last_error()}};
  std::cerr << err.dump() << "\n";
  psfed_string_free(result_json);
  return static_cast<int>(status);
}

json load_base_config(const std::string& config_path) {
  if (config_path.empty()) return json::object();
  std::ifstream f(config_path);
  if (!f) throw CLI::ValidationError("--config", "cannot open " + config_path);
  try {
    json j;
    f >> j;
    return j;
  } catch (const std::exception& e) {
    throw CLI::ValidationError("--config", std::string("bad JSON: ") + e.what());
  }
}

struct CommonFlags {
  std::string config_path;
  std::string out;
  std::optional<std::string> data_path;
  std::optional<int> identities, train_per_id, test_per_id;
  std::optional<std::uint64_t> data_seed;

  void attach(CLI::App* cmd, bool with_data) {
    cmd->add_option("--config", config_path, "JSON config file; flags override its fields");
    cmd->add_option("--out", out, "output directory");
    if (with_data) {
      cmd->add_option("--data", data_path, "dataset directory (<band>/<identity>/...)");
      cmd->add_option("--identities", identities, "synthetic identities");
      cmd->add_option("--train-per-id", train_per_id, "session-1 images per identity/band");
      cmd->add_option("--test-per-id", test_per_id, "session-2 probes per identity/band");
      cmd->add_option("--data-seed", data_seed, "synthetic generator seed");
    }
  }

  json merge() const {
    json cfg = load_base_config(config_path);
    if (!out.empty()) cfg["out"] = out;
    if (data_path) cfg["clients"] = json{{"path", *data_path}};
    if (identities || train_per_id || test_per_id || data_seed) {
      json& synth = cfg["clients"]["synthetic"];
      if (identities) synth["identities"] = *identities;
      if (train_per_id) synth["train_per_identity"] = *train_per_id;
      if (test_per_id) synth["test_per_identity"] = *test_per_id;
      if (data_seed) synth["seed"] = *data_seed;
    }
    return cfg;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{std::string("psfed ") + psfed_version() +
               " - spectrum-consistent federated palmprint verification simulator"};
  app.require_subcommand(1);

  // gen-data ----------------------------------------------------------------
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic multi-spectrum dataset");
  CommonFlags gen_flags;
  gen_flags.attach(gen, true);

  // train ---------------------------------------------------------------
  auto* train = app.add_subcommand("train", "run federated training for one method");
  CommonFlags train_flags;
  train_flags.attach(train, true);
  std::optional<std::string> method;
  std::optional<int> rounds, epochs, batch_size, cadence;
  std::optional<double> lr, mu, tau, gamma;
  std::optional<std::uint64_t> seed;
  std::optional<bool> no_prox_global, no_prox_anchor, no_mse;
  train->add_option("--method", method,
                    "standalone | fedavg | fedprox | fedbn | fedper | psfed");
  train->add_option("--rounds", rounds, "communication rounds");
  train->add_option("--epochs", epochs, "local epochs per round");
  train->add_option("--batch-size", batch_size, "mini-batch size before two-view expansion");
  train->add_option("--lr", lr, "Adam learning rate");
  train->add_option("--mu", mu, "proximal temperature");
  train->add_option("--tau", tau, "representation-consistency temperature");
  train->add_option("--gamma", gamma, "contrastive temperature");
  train->add_option("--seed", seed, "experiment seed");
  train->add_option("--checkpoint-cadence", cadence, "also checkpoint every N rounds");
  train->add_flag("--no-prox-global{true}", no_prox_global, "disable the global proximal term");
  train->add_flag("--no-prox-anchor{true}", no_prox_anchor, "disable the anchor proximal term");
  train->add_flag("--no-mse{true}", no_mse, "disable the representation-consistency term");

  // eval ----------------------------------------------------------------
  auto* eval = app.add_subcommand("eval", "cross-spectrum verification metrics for a run");
  CommonFlags eval_flags;
  eval_flags.attach(eval, true);
  std::string run_dir;
  eval->add_option("--run", run_dir, "train output directory")->required();

  // ablate --------------------------------------------------------------
  auto* ablate = app.add_subcommand("ablate", "sweep loss components or hyperparameters");
  CommonFlags ablate_flags;
  ablate_flags.attach(ablate, true);
  std::string grid = "components";
  std::vector<std::uint64_t> seeds;
  std::optional<int> budget;
  std::optional<int> ab_rounds, ab_epochs, ab_batch;
  ablate->add_option("--grid", grid, "components | mu | tau | local_rounds");
  ablate->add_option("--seeds", seeds, "experiment seeds (default 1 2 3)");
  ablate->add_option("--epoch-round-budget", budget, "E*R budget for the local_rounds grid");
  ablate->add_option("--rounds", ab_rounds, "communication rounds per cell");
  ablate->add_option("--epochs", ab_epochs, "local epochs per cell");
  ablate->add_option("--batch-size", ab_batch, "mini-batch size");

  // report --------------------------------------------------------------
  auto* report = app.add_subcommand("report", "summarize eval/ablate outputs as markdown");
  CommonFlags report_flags;
  report_flags.attach(report, false);
  std::vector<std::string> inputs;
  report->add_option("--inputs", inputs, "eval/ablate output directories");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      json cfg = gen_flags.merge();
      char* result = nullptr;
      const psfed_status st = psfed_run_gen_data(cfg.dump().c_str(), &result);
      return finish(st, result, "gen-data");
    }
    if (train->parsed()) {
      json cfg = train_flags.merge();
      if (method) cfg["method"] = *method;
      if (rounds) cfg["rounds"] = *rounds;
      if (epochs) cfg["local_epochs"] = *epochs;
      if (batch_size) cfg["batch_size"] = *batch_size;
      if (lr) cfg["lr"] = *lr;
      if (mu) cfg["mu"] = *mu;
      if (tau) cfg["tau"] = *tau;
      if (gamma) cfg["gamma"] = *gamma;
      if (seed) cfg["seed"] = *seed;
      if (cadence) cfg["checkpoint_cadence"] = *cadence;
      if (no_prox_global) cfg["loss_components"]["prox_global"] = false;
      if (no_prox_anchor) cfg["loss_components"]["prox_anchor"] = false;
      if (no_mse) cfg["loss_components"]["mse"] = false;
      char* result = nullptr;
      const psfed_status st = psfed_run_train(cfg.dump().c_str(), &result);
      return finish(st, result, "train");
    }
    if (eval->parsed()) {
      json cfg = eval_flags.merge();
      cfg["run"] = run_dir;
      char* result = nullptr;
      const psfed_status st = psfed_run_eval(cfg.dump().c_str(), &result);
      return finish(st, result, "eval");
    }
    if (ablate->parsed()) {
      json cfg = ablate_flags.merge();
      cfg["grid"] = grid;
      if (!seeds.empty()) cfg["seeds"] = seeds;
      if (budget) cfg["epoch_round_budget"] = *budget;
      if (ab_rounds) cfg["rounds"] = *ab_rounds;
      if (ab_epochs) cfg["local_epochs"] = *ab_epochs;
      if (ab_batch) cfg["batch_size"] = *ab_batch;
      char* result = nullptr;
      const psfed_status st = psfed_run_ablate(cfg.dump().c_str(), &result);
      return finish(st, result, "ablate");
    }
    if (report->parsed()) {
      json cfg = report_flags.merge();
      cfg["inputs"] = inputs;
      char* result = nullptr;
      const psfed_status st = psfed_run_report(cfg.dump().c_str(), &result);
      return finish(st, result, "report");
    }
  } catch (const std::exception& e) {
    json err;
    err["error"] = {{"status", static_cast<int>(PSFED_ERROR_INVALID_ARGUMENT)},
                    {"message", e.what()}};
    std::cerr << err.dump() << "\n";
    return static_cast<int>(PSFED_ERROR_INVALID_ARGUMENT);
  }
  return 0;
}
