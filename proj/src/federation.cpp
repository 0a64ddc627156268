#include "psfed/federation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <atomic>
#include <mutex>
#include <numeric>
#include <thread>
#include <stdexcept>

#include "psfed/checkpoint.hpp"
#include "psfed/rng.hpp"

namespace psfed {

namespace {

constexpr std::uint64_t kShuffleTag = 0x5117FFu;
constexpr std::uint64_t kAugmentTag = 0xA76u;

double l2_distance(const ParamVector& a, const ParamVector& b) {
  double sq = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    const double d = a.values[i] - b.values[i];
    sq += d * d;
  }
  return std::sqrt(sq);
}

void copy_slices_with_prefix(ParamVector& dst, const ParamVector& src,
                             std::string_view prefix) {
  for (const auto& s : dst.arch.layer_map()) {
    if (s.name.rfind(prefix, 0) != 0) continue;
    for (std::size_t i = 0; i < s.length; ++i)
      dst.values[s.offset + i] = src.values[s.offset + i];
  }
}

std::vector<int> shuffled_indices(std::size_t n, Rng rng) {
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1));
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

TotalLossConfig loss_config_for(const MethodConfig& cfg) {
  TotalLossConfig lc;
  lc.hp = cfg.hp;
  switch (cfg.method) {
    case Method::PSFedPalm:
      lc.toggles = cfg.toggles;
      break;
    case Method::FedProx:
      lc.toggles = {true, false, false};
      break;
    default:
      lc.toggles = {false, false, false};
      break;
  }
  return lc;
}

}  // namespace

const char* to_string(Method m) {
  switch (m) {
    case Method::Standalone: return "standalone";
    case Method::FedAvg: return "fedavg";
    case Method::FedProx: return "fedprox";
    case Method::FedBN: return "fedbn";
    case Method::FedPer: return "fedper";
    case Method::PSFedPalm: return "psfed";
  }
  return "?";
}

std::optional<Method> parse_method(std::string_view s) {
  for (Method m : {Method::Standalone, Method::FedAvg, Method::FedProx, Method::FedBN,
                   Method::FedPer, Method::PSFedPalm}) {
    if (s == to_string(m)) return m;
  }
  if (s == "psfedpalm" || s == "psfed-palm") return Method::PSFedPalm;
  if (s == "wo-fl" || s == "w/o-fl") return Method::Standalone;
  return std::nullopt;
}

void MethodConfig::validate() const {
  if (rounds < 0) throw std::invalid_argument("config: rounds must be >= 0");
  if (local_epochs < 0) throw std::invalid_argument("config: local_epochs must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("config: batch_size must be >= 1");
  if (lr < 0.0) throw std::invalid_argument("config: lr must be >= 0");
  if (hp.mu < 0.0) throw std::invalid_argument("config: mu must be >= 0");
  if (hp.tau < 0.0) throw std::invalid_argument("config: tau must be >= 0");
  if (hp.gamma <= 0.0) throw std::invalid_argument("config: gamma must be > 0");
  if (hp.w_ce < 0.0 || hp.w_con < 0.0)
    throw std::invalid_argument("config: task-loss weights must be >= 0");
  if (embedding_dim < 1) throw std::invalid_argument("config: embedding_dim must be >= 1");
  if (image_size < 4) throw std::invalid_argument("config: image_size too small");
}

ParamVector weighted_average(const std::vector<const ParamVector*>& models,
                             const std::vector<long>& weights) {
  if (models.empty()) throw std::invalid_argument("weighted_average: empty model list");
  if (models.size() != weights.size())
    throw std::invalid_argument("weighted_average: weight count mismatch");
  const std::size_t N = models[0]->values.size();
  long total = 0;
  for (std::size_t i = 0; i < models.size(); ++i) {
    if (!(models[i]->arch == models[0]->arch) || models[i]->values.size() != N)
      throw std::invalid_argument("weighted_average: mixed architectures");
    if (weights[i] <= 0) throw std::invalid_argument("weighted_average: weights must be > 0");
    total += weights[i];
  }

  // scale each model by its normalized weight, then reduce pairwise
  std::vector<std::vector<double>> level;
  level.reserve(models.size());
  for (std::size_t i = 0; i < models.size(); ++i) {
    const double alpha = static_cast<double>(weights[i]) / static_cast<double>(total);
    std::vector<double> scaled(N);
    for (std::size_t k = 0; k < N; ++k) scaled[k] = alpha * models[i]->values[k];
    level.push_back(std::move(scaled));
  }
  while (level.size() > 1) {
    std::vector<std::vector<double>> next;
    next.reserve((level.size() + 1) / 2);
    for (std::size_t i = 0; i + 1 < level.size(); i += 2) {
      std::vector<double> sum(N);
      for (std::size_t k = 0; k < N; ++k) sum[k] = level[i][k] + level[i + 1][k];
      next.push_back(std::move(sum));
    }
    if (level.size() % 2 == 1) next.push_back(std::move(level.back()));
    level = std::move(next);
  }
  return ParamVector{models[0]->arch, std::move(level[0])};
}

ParamVector aggregate_spectrum(
    const std::vector<std::tuple<const ParamVector*, long, Band>>& models) {
  if (models.empty())
    throw std::invalid_argument("aggregate_spectrum: no models for this band");
  const Band band = std::get<2>(models[0]);
  std::vector<const ParamVector*> ptrs;
  std::vector<long> weights;
  for (const auto& [p, w, b] : models) {
    if (b != band)
      throw std::invalid_argument("aggregate_spectrum: mixed bands in one aggregate");
    ptrs.push_back(p);
    weights.push_back(w);
  }
  return weighted_average(ptrs, weights);
}

ParamVector aggregate_group(const ParamVector& a, const ParamVector& b) {
  if (!(a.arch == b.arch) || a.values.size() != b.values.size())
    throw std::invalid_argument("aggregate_group: parameter vectors do not match");
  ParamVector out{a.arch, std::vector<double>(a.values.size())};
  for (std::size_t i = 0; i < a.values.size(); ++i)
    out.values[i] = 0.5 * a.values[i] + 0.5 * b.values[i];
  return out;
}

ParamVector aggregate_global(const ParamVector& theta_s, const ParamVector& theta_l) {
  return aggregate_group(theta_s, theta_l);
}

std::vector<int> epoch_shuffle(std::size_t n, std::uint64_t seed, int round, int epoch) {
  return shuffled_indices(n, derive_rng(seed, kShuffleTag, static_cast<std::uint64_t>(round),
                                        static_cast<std::uint64_t>(epoch)));
}

std::pair<ImageBatch, std::vector<int>> two_view_batch(const std::vector<Sample>& dataset,
                                                       const std::vector<int>& selected,
                                                       std::uint64_t seed, int round,
                                                       int epoch, int step) {
  if (selected.empty()) throw std::invalid_argument("two_view_batch: empty selection");
  const int k = static_cast<int>(selected.size());
  const int H = dataset.at(selected[0]).height;
  const int W = dataset.at(selected[0]).width;

  ImageBatch batch;
  batch.count = 2 * k;
  batch.height = H;
  batch.width = W;
  batch.pixels.resize(static_cast<std::size_t>(2 * k) * H * W);
  std::vector<int> labels(2 * k);
  for (int slot = 0; slot < k; ++slot) {
    const Sample& s = dataset.at(selected[slot]);
    Rng arng = derive_rng(seed, kAugmentTag, static_cast<std::uint64_t>(round),
                          static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(step),
                          static_cast<std::uint64_t>(slot));
    auto [va, vb] = augment(s.image, H, W, arng);
    std::copy(va.begin(), va.end(),
              batch.pixels.begin() + static_cast<std::size_t>(slot) * H * W);
    std::copy(vb.begin(), vb.end(),
              batch.pixels.begin() + static_cast<std::size_t>(k + slot) * H * W);
    labels[slot] = s.identity;
    labels[k + slot] = s.identity;
  }
  return {std::move(batch), std::move(labels)};
}

LossBreakdown client_local_training(ClientState& client, const ParamVector* prox_global,
                                    const ParamVector* anchor, const MethodConfig& cfg,
                                    int round) {
  client.adam = AdamState(client.params.values.size(), cfg.lr);
  const TotalLossConfig lc = loss_config_for(cfg);

  LossBreakdown acc;
  int steps = 0;
  const int n_samples = static_cast<int>(client.dataset.size());

  for (int epoch = 1; epoch <= cfg.local_epochs; ++epoch) {
    const std::vector<int> order = epoch_shuffle(n_samples, cfg.seed, round, epoch);
    const int n_steps = (n_samples + cfg.batch_size - 1) / cfg.batch_size;
    for (int step = 0; step < n_steps; ++step) {
      const int lo = step * cfg.batch_size;
      const int hi = std::min(n_samples, lo + cfg.batch_size);
      const std::vector<int> selected(order.begin() + lo, order.begin() + hi);
      auto [batch, labels] = two_view_batch(client.dataset, selected, cfg.seed, round,
                                            epoch, step);

      TotalLossResult res = total_loss(batch, labels, client.params, prox_global, anchor, lc);
      if (!std::isfinite(res.breakdown.total))
        throw std::runtime_error("non-finite loss in client " +
                                 std::to_string(client.client_id) + " at round " +
                                 std::to_string(round));
      commit_running_stats(client.params, res.local_forward);
      adam_step(client.adam, client.params, res.grad_params);

      acc.ce += res.breakdown.ce;
      acc.con += res.breakdown.con;
      acc.task += res.breakdown.task;
      acc.prox_global += res.breakdown.prox_global;
      acc.prox_anchor += res.breakdown.prox_anchor;
      acc.mse += res.breakdown.mse;
      acc.total += res.breakdown.total;
      ++steps;
    }
  }
  if (steps > 0) {
    acc.ce /= steps;
    acc.con /= steps;
    acc.task /= steps;
    acc.prox_global /= steps;
    acc.prox_anchor /= steps;
    acc.mse /= steps;
    acc.total /= steps;
  }
  return acc;
}

RoundRecord run_round(ServerState& server, std::vector<ClientState>& clients,
                      const MethodConfig& cfg, int round, const TrainingOptions& options) {
  const auto t0 = std::chrono::steady_clock::now();
  RoundRecord rec;
  rec.round = round;
  rec.client_losses.resize(clients.size());

  std::vector<int> schedule = options.schedule;
  if (schedule.empty()) {
    schedule.resize(clients.size());
    std::iota(schedule.begin(), schedule.end(), 0);
  }
  if (schedule.size() != clients.size())
    throw std::invalid_argument("run_round: schedule must list every client exactly once");

  auto train_client = [&](int ci) {
    ClientState& c = clients.at(ci);
    const ParamVector* prox_global = nullptr;
    const ParamVector* anchor = nullptr;
    if (cfg.method == Method::PSFedPalm) {
      prox_global = &*server.global;
      // anchor terms start inert: before the first aggregation the anchors
      // are the shared initialization, whose embeddings are noise, so round
      // one trains without an anchor reference
      if (round > 1)
        anchor = group_of(c.band) == Group::Short ? &*server.anchor_l : &*server.anchor_s;
    } else if (cfg.method == Method::FedProx) {
      prox_global = &*server.global;
    }
    rec.client_losses[ci] = client_local_training(c, prox_global, anchor, cfg, round);
  };
  auto report_failure = [&](int ci, const std::exception& e) {
    const ClientState& c = clients.at(ci);
    if (!options.diagnostics_dir.empty()) {
      std::filesystem::create_directories(options.diagnostics_dir);
      Checkpoint diag{c.params, c.adam, cfg.seed, round,
                      std::string("client_") + to_string(c.band)};
      save_checkpoint(diag, std::filesystem::path(options.diagnostics_dir) /
                                ("diagnostic_client" + std::to_string(c.client_id) +
                                 "_round" + std::to_string(round) + ".ckpt"));
    }
    throw std::runtime_error("round " + std::to_string(round) + " failed: " + e.what());
  };

  const int workers =
      std::max(1, std::min<int>(options.num_threads, static_cast<int>(schedule.size())));
  if (workers == 1) {
    for (int ci : schedule) {
      try {
        train_client(ci);
      } catch (const std::exception& e) {
        report_failure(ci, e);
      }
    }
  } else {
    // clients share no mutable state; the first failure wins after the barrier
    std::mutex fail_mutex;
    std::exception_ptr failure;
    int failed_client = -1;
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
      for (;;) {
        const std::size_t slot = next.fetch_add(1);
        if (slot >= schedule.size()) return;
        try {
          train_client(schedule[slot]);
        } catch (...) {
          std::lock_guard<std::mutex> lock(fail_mutex);
          if (!failure) {
            failure = std::current_exception();
            failed_client = schedule[slot];
          }
        }
      }
    };
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
    if (failure) {
      try {
        std::rethrow_exception(failure);
      } catch (const std::exception& e) {
        report_failure(failed_client, e);
      }
    }
  }

  // per-spectrum aggregation in ascending client order
  std::vector<int> by_id(clients.size());
  std::iota(by_id.begin(), by_id.end(), 0);
  std::sort(by_id.begin(), by_id.end(),
            [&](int a, int b) { return clients[a].client_id < clients[b].client_id; });

  std::array<std::optional<ParamVector>, 4> theta_band;
  for (Band band : kAllBands) {
    std::vector<std::tuple<const ParamVector*, long, Band>> members;
    for (int ci : by_id) {
      if (clients[ci].band == band)
        members.emplace_back(&clients[ci].params,
                             static_cast<long>(clients[ci].dataset.size()), band);
    }
    if (!members.empty()) theta_band[static_cast<int>(band)] = aggregate_spectrum(members);
  }
  for (Band band : kAllBands)
    if (!theta_band[static_cast<int>(band)])
      throw std::runtime_error(std::string("run_round: no client holds the ") +
                               to_string(band) + " band");

  switch (cfg.method) {
    case Method::PSFedPalm: {
      ParamVector ts = aggregate_group(*theta_band[static_cast<int>(Band::Green)],
                                       *theta_band[static_cast<int>(Band::Blue)]);
      ParamVector tl = aggregate_group(*theta_band[static_cast<int>(Band::NIR)],
                                       *theta_band[static_cast<int>(Band::Red)]);
      ParamVector tg = aggregate_global(ts, tl);
      for (ClientState& c : clients) c.params = tg;
      server.anchor_s = std::move(ts);
      server.anchor_l = std::move(tl);
      server.global = std::move(tg);
      rec.theta_s = server.anchor_s;
      rec.theta_l = server.anchor_l;
      rec.theta_global = server.global;
      break;
    }
    case Method::FedAvg:
    case Method::FedProx:
    case Method::FedBN:
    case Method::FedPer: {
      std::vector<const ParamVector*> ptrs;
      std::vector<long> weights;
      for (int ci : by_id) {
        ptrs.push_back(&clients[ci].params);
        weights.push_back(static_cast<long>(clients[ci].dataset.size()));
      }
      ParamVector tg = weighted_average(ptrs, weights);
      for (ClientState& c : clients) {
        if (cfg.method == Method::FedBN) {
          ParamVector merged = tg;
          copy_slices_with_prefix(merged, c.params, "norm");
          c.params = std::move(merged);
        } else if (cfg.method == Method::FedPer) {
          ParamVector merged = tg;
          copy_slices_with_prefix(merged, c.params, "head");
          c.params = std::move(merged);
        } else {
          c.params = tg;
        }
      }
      server.global = std::move(tg);
      rec.theta_global = server.global;
      break;
    }
    case Method::Standalone:
      break;  // no aggregation, no communication
  }

  // drift diagnostics: distance of each band aggregate from the shared model
  // (for standalone, from the equal-weight mean of the band aggregates)
  {
    const ParamVector* ref = nullptr;
    std::optional<ParamVector> standalone_ref;
    if (server.global) {
      ref = &*server.global;
    } else {
      std::vector<const ParamVector*> ptrs;
      for (Band band : kAllBands) ptrs.push_back(&*theta_band[static_cast<int>(band)]);
      standalone_ref = weighted_average(ptrs, {1, 1, 1, 1});
      ref = &*standalone_ref;
    }
    for (Band band : kAllBands) {
      const int bi = static_cast<int>(band);
      rec.band_distance[bi] = l2_distance(*theta_band[bi], *ref);
    }
  }

  if (options.keep_band_models)
    for (int bi = 0; bi < 4; ++bi) rec.theta_band[bi] = theta_band[bi];

  rec.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

TrainingRun run_training(const MethodConfig& cfg, const FederationDataset& data,
                         const TrainingOptions& options) {
  cfg.validate();
  if (data.num_identities < 2)
    throw std::invalid_argument("run_training: need at least two identities");
  for (Band band : kAllBands)
    if (data.train_by_band[static_cast<int>(band)].empty())
      throw std::invalid_argument(std::string("run_training: no training data for ") +
                                  to_string(band));

  Architecture arch;
  arch.input_height = cfg.image_size;
  arch.input_width = cfg.image_size;
  arch.conv_channels = cfg.conv_channels;
  arch.embedding_dim = cfg.embedding_dim;
  arch.num_classes = data.num_identities;
  arch.validate();

  for (Band band : kAllBands) {
    for (const Sample& s : data.train_by_band[static_cast<int>(band)]) {
      if (s.band != band)
        throw std::invalid_argument("run_training: sample band does not match its client");
      if (s.identity < 0 || s.identity >= data.num_identities)
        throw std::invalid_argument("run_training: identity label out of range");
      if (s.height != cfg.image_size || s.width != cfg.image_size)
        throw std::invalid_argument("run_training: sample size does not match config");
    }
  }

  TrainingRun run;
  run.cfg = cfg;
  const ParamVector theta1 = init_params(arch, cfg.seed);

  // one client per band, ids in band order
  for (Band band : kAllBands) {
    ClientState c;
    c.client_id = static_cast<int>(band);
    c.band = band;
    c.dataset = data.train_by_band[static_cast<int>(band)];
    c.params = theta1;
    c.adam = AdamState(theta1.values.size(), cfg.lr);
    run.clients.push_back(std::move(c));
  }

  if (cfg.method != Method::Standalone) run.server.global = theta1;
  if (cfg.method == Method::PSFedPalm) {
    // round-1 anchors: both groups start from the shared initialization
    run.server.anchor_s = theta1;
    run.server.anchor_l = theta1;
  }

  for (int r = 1; r <= cfg.rounds; ++r) {
    RoundRecord rec = run_round(run.server, run.clients, cfg, r, options);
    if (options.observer) options.observer(rec, run.server, run.clients);
    if (!options.keep_round_models) {
      rec.theta_s.reset();
      rec.theta_l.reset();
      rec.theta_global.reset();
    }
    run.records.push_back(std::move(rec));
  }
  return run;
}

}  // namespace psfed
