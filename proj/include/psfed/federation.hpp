#pragma once

#include <array>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "psfed/dataset.hpp"
#include "psfed/losses.hpp"
#include "psfed/model.hpp"
#include "psfed/spectrum.hpp"

namespace psfed {

enum class Method { Standalone, FedAvg, FedProx, FedBN, FedPer, PSFedPalm };

const char* to_string(Method m);
std::optional<Method> parse_method(std::string_view s);

struct MethodConfig {
  Method method = Method::PSFedPalm;
  int rounds = 30;
  int local_epochs = 3;
  int batch_size = 64;
  double lr = 0.01;
  LossHyperparams hp;
  LossToggles toggles;  // component ablation for the anchor-based method
  std::uint64_t seed = 1;
  int embedding_dim = 64;
  std::vector<int> conv_channels{8, 16};
  int image_size = 32;

  void validate() const;
};

struct ClientState {
  int client_id = 0;
  Band band = Band::NIR;
  std::vector<Sample> dataset;  // this client's samples only
  ParamVector params;
  AdamState adam;
};

struct RoundRecord {
  int round = 0;
  std::optional<ParamVector> theta_s;       // anchor-method rounds only
  std::optional<ParamVector> theta_l;
  std::optional<ParamVector> theta_global;  // absent for standalone training
  std::array<std::optional<ParamVector>, 4> theta_band;  // kept on request
  std::vector<LossBreakdown> client_losses;              // mean over the round's steps
  std::array<double, 4> band_distance{};  // ||theta_band - reference||_2
  double wall_seconds = 0.0;
};

// Sample-count weighted elementwise average. The reduction is a balanced
// pairwise tree over the models in ascending client order, which keeps
// aggregation deterministic and makes the grouped two-level average and the
// flat average coincide bitwise for equal weights.
ParamVector weighted_average(const std::vector<const ParamVector*>& models,
                             const std::vector<long>& weights);

// Per-band aggregate; all models must share one band.
ParamVector aggregate_spectrum(
    const std::vector<std::tuple<const ParamVector*, long, Band>>& models);

// Exact half-half averages of the group and global aggregation steps.
ParamVector aggregate_group(const ParamVector& a, const ParamVector& b);
ParamVector aggregate_global(const ParamVector& theta_s, const ParamVector& theta_l);

// Deterministic per-epoch sample order. Keyed on (seed, round, epoch) only,
// so clients holding identical data train identically and results cannot
// depend on the execution schedule.
std::vector<int> epoch_shuffle(std::size_t n, std::uint64_t seed, int round, int epoch);

// Builds the two-view batch for one step: rows [0,k) are the first views of
// the selected samples, rows [k,2k) the second; labels are duplicated
// accordingly. Augmentation noise is keyed per (seed, round, epoch, step,
// slot).
std::pair<ImageBatch, std::vector<int>> two_view_batch(const std::vector<Sample>& dataset,
                                                       const std::vector<int>& selected,
                                                       std::uint64_t seed, int round,
                                                       int epoch, int step);

// E local epochs of two-view mini-batch steps from the client's current
// parameters. `prox_global` / `anchor` are frozen references (never
// written); Adam state is reset at the start of the round. Returns the mean
// loss breakdown over the steps.
LossBreakdown client_local_training(ClientState& client, const ParamVector* prox_global,
                                    const ParamVector* anchor, const MethodConfig& cfg,
                                    int round);

struct ServerState {
  std::optional<ParamVector> global;
  std::optional<ParamVector> anchor_s;
  std::optional<ParamVector> anchor_l;
};

struct TrainingRun {
  MethodConfig cfg;
  ServerState server;
  std::vector<ClientState> clients;
  std::vector<RoundRecord> records;
};

using RoundObserver =
    std::function<void(const RoundRecord&, const ServerState&, const std::vector<ClientState>&)>;

struct TrainingOptions {
  bool keep_band_models = false;
  bool keep_round_models = false;  // keep theta_* in every record
  std::vector<int> schedule;       // client execution order; empty = ascending
  RoundObserver observer;
  std::string diagnostics_dir;  // dump the failing client here on a numeric abort
  int num_threads = 1;  // clients between barriers are independent work units
};

// One synchronized round: local training for every client (in schedule
// order, which must not change the result), method-specific aggregation,
// then redistribution into the client states. A failing client fails the
// round; no partial aggregation happens.
RoundRecord run_round(ServerState& server, std::vector<ClientState>& clients,
                      const MethodConfig& cfg, int round, const TrainingOptions& options);

TrainingRun run_training(const MethodConfig& cfg, const FederationDataset& data,
                         const TrainingOptions& options = {});

}  // namespace psfed
