#pragma once

#include <utility>
#include <vector>

#include "psfed/model.hpp"

namespace psfed {

struct LossHyperparams {
  double mu = 0.01;     // proximal temperature
  double tau = 1000.0;  // representation-consistency temperature
  double gamma = 0.07;  // contrastive temperature
  double w_ce = 0.8;
  double w_con = 0.2;
};

// Which auxiliary terms participate in the local objective. The task loss
// always runs; a term whose toggle is off (or whose temperature is zero, or
// whose reference model is absent) is skipped entirely so that degenerate
// configurations follow bit-identical code paths.
struct LossToggles {
  bool prox_global = true;
  bool prox_anchor = true;
  bool mse = true;
};

struct LossBreakdown {
  double ce = 0.0;
  double con = 0.0;
  double task = 0.0;
  double prox_global = 0.0;
  double prox_anchor = 0.0;
  double mse = 0.0;
  double total = 0.0;
};

// Softmax cross-entropy, mean over the batch. Gradient is
// (softmax - onehot) / count. Labels outside [0, num_classes) are rejected.
std::pair<double, std::vector<double>> cross_entropy(const std::vector<double>& logits,
                                                     int count, int num_classes,
                                                     const std::vector<int>& labels);

// Supervised contrastive loss over a two-view batch, exactly the
// un-normalized sum over anchors with each anchor averaged over its positive
// set; similarities are scaled by 1/gamma and the denominator runs over all
// other samples. An anchor without positives is rejected.
std::pair<double, std::vector<double>> supcon(const std::vector<double>& embeddings,
                                              int count, int dim,
                                              const std::vector<int>& labels,
                                              double gamma);

struct TaskLossResult {
  double task = 0.0;
  double ce = 0.0;
  double con = 0.0;
  std::vector<double> grad_logits;
  std::vector<double> grad_embedding;
};

// w_ce * cross-entropy + w_con * supcon.
TaskLossResult task_loss(const std::vector<double>& logits, int count, int num_classes,
                         const std::vector<double>& embeddings, int dim,
                         const std::vector<int>& labels, const LossHyperparams& hp);

// (mu/2) * ||local - ref||^2 with gradient mu * (local - ref) on the local
// parameters only. Mismatched lengths are rejected.
std::pair<double, std::vector<double>> proximal(const ParamVector& local,
                                                const ParamVector& ref, double mu);

// The proximal penalty as it enters the local objective: restricted to the
// gradient-trained slices. Normalization running statistics are buffers kept
// by the momentum rule, not optimization variables, so they carry neither
// penalty nor gradient here.
std::pair<double, std::vector<double>> proximal_trained(const ParamVector& local,
                                                        const ParamVector& ref, double mu);

// tau * sum_j (anchor_j - local_j)^2 / dim per sample, averaged over the
// batch; the gradient flows to the local features only.
std::pair<double, std::vector<double>> repr_mse(const std::vector<double>& v_local,
                                                const std::vector<double>& v_anchor,
                                                int count, int dim, double tau);

struct TotalLossConfig {
  LossHyperparams hp;
  LossToggles toggles;
};

struct TotalLossResult {
  LossBreakdown breakdown;
  std::vector<double> grad_params;
  ForwardResult local_forward;  // carries the running-stat update to commit
};

// The full local objective: task loss on a train-mode forward of
// `theta_local`, plus (when enabled and referenced) the anchor proximal
// term, the global proximal term, and the representation-consistency term
// against an eval-mode anchor forward on the same batch. References receive
// no gradient and are never written. total = ((task + prox_anchor) +
// prox_global) + mse, in that order, always.
TotalLossResult total_loss(const ImageBatch& batch, const std::vector<int>& labels,
                           const ParamVector& theta_local, const ParamVector* theta_global,
                           const ParamVector* theta_anchor, const TotalLossConfig& cfg);

}  // namespace psfed
