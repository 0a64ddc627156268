#include "psfed/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace psfed {

std::pair<double, std::vector<double>> cross_entropy(const std::vector<double>& logits,
                                                     int count, int num_classes,
                                                     const std::vector<int>& labels) {
  if (count <= 0) throw std::invalid_argument("cross_entropy: empty batch");
  if (logits.size() != static_cast<std::size_t>(count) * num_classes)
    throw std::invalid_argument("cross_entropy: logits size mismatch");
  if (labels.size() != static_cast<std::size_t>(count))
    throw std::invalid_argument("cross_entropy: labels size mismatch");
  for (int y : labels)
    if (y < 0 || y >= num_classes)
      throw std::invalid_argument("cross_entropy: label " + std::to_string(y) +
                                  " outside [0, " + std::to_string(num_classes) + ")");

  std::vector<double> grad(logits.size(), 0.0);
  double loss = 0.0;
  const double inv_k = 1.0 / count;
  for (int i = 0; i < count; ++i) {
    const double* l = logits.data() + static_cast<std::size_t>(i) * num_classes;
    double* g = grad.data() + static_cast<std::size_t>(i) * num_classes;
    double mx = l[0];
    for (int c = 1; c < num_classes; ++c) mx = std::max(mx, l[c]);
    double sum = 0.0;
    for (int c = 0; c < num_classes; ++c) sum += std::exp(l[c] - mx);
    const double lse = mx + std::log(sum);
    loss += lse - l[labels[i]];
    for (int c = 0; c < num_classes; ++c) g[c] = std::exp(l[c] - lse) * inv_k;
    g[labels[i]] -= inv_k;
  }
  return {loss * inv_k, std::move(grad)};
}

std::pair<double, std::vector<double>> supcon(const std::vector<double>& embeddings,
                                              int count, int dim,
                                              const std::vector<int>& labels,
                                              double gamma) {
  if (count < 2) throw std::invalid_argument("supcon: need at least two samples");
  if (gamma <= 0.0) throw std::invalid_argument("supcon: gamma must be positive");
  if (embeddings.size() != static_cast<std::size_t>(count) * dim)
    throw std::invalid_argument("supcon: embedding size mismatch");
  if (labels.size() != static_cast<std::size_t>(count))
    throw std::invalid_argument("supcon: labels size mismatch");

  const auto z = [&](int i) { return embeddings.data() + static_cast<std::size_t>(i) * dim; };
  std::vector<double> sim(static_cast<std::size_t>(count) * count, 0.0);
  for (int i = 0; i < count; ++i) {
    for (int j = i + 1; j < count; ++j) {
      double d = 0.0;
      const double* a = z(i);
      const double* b = z(j);
      for (int k = 0; k < dim; ++k) d += a[k] * b[k];
      sim[static_cast<std::size_t>(i) * count + j] = d / gamma;
      sim[static_cast<std::size_t>(j) * count + i] = d / gamma;
    }
  }

  double loss = 0.0;
  // g[i][a] = d loss / d sim(i, a); accumulated per ordered pair, a != i
  std::vector<double> gpair(sim.size(), 0.0);
  for (int i = 0; i < count; ++i) {
    const double* srow = sim.data() + static_cast<std::size_t>(i) * count;
    int pos = 0;
    for (int a = 0; a < count; ++a)
      if (a != i && labels[a] == labels[i]) ++pos;
    if (pos == 0)
      throw std::invalid_argument("supcon: sample " + std::to_string(i) +
                                  " has no positive in the batch");
    double mx = -1e300;
    for (int a = 0; a < count; ++a)
      if (a != i) mx = std::max(mx, srow[a]);
    double denom = 0.0;
    for (int a = 0; a < count; ++a)
      if (a != i) denom += std::exp(srow[a] - mx);
    const double log_denom = mx + std::log(denom);
    double* grow = gpair.data() + static_cast<std::size_t>(i) * count;
    const double inv_pos = 1.0 / pos;
    for (int a = 0; a < count; ++a) {
      if (a == i) continue;
      const double soft = std::exp(srow[a] - log_denom);
      grow[a] = soft;
      if (labels[a] == labels[i]) {
        loss -= inv_pos * (srow[a] - log_denom);
        grow[a] -= inv_pos;
      }
    }
  }

  std::vector<double> grad(embeddings.size(), 0.0);
  const double inv_gamma = 1.0 / gamma;
  for (int i = 0; i < count; ++i) {
    const double* grow = gpair.data() + static_cast<std::size_t>(i) * count;
    double* gi = grad.data() + static_cast<std::size_t>(i) * dim;
    for (int a = 0; a < count; ++a) {
      if (a == i) continue;
      const double g = grow[a] * inv_gamma;
      if (g == 0.0) continue;
      const double* za = z(a);
      const double* zi = z(i);
      double* ga = grad.data() + static_cast<std::size_t>(a) * dim;
      for (int k = 0; k < dim; ++k) {
        gi[k] += g * za[k];
        ga[k] += g * zi[k];
      }
    }
  }
  return {loss, std::move(grad)};
}

TaskLossResult task_loss(const std::vector<double>& logits, int count, int num_classes,
                         const std::vector<double>& embeddings, int dim,
                         const std::vector<int>& labels, const LossHyperparams& hp) {
  TaskLossResult out;
  auto [ce, gce] = cross_entropy(logits, count, num_classes, labels);
  out.ce = ce;
  out.grad_logits = std::move(gce);
  for (double& g : out.grad_logits) g *= hp.w_ce;
  if (hp.w_con != 0.0) {
    auto [con, gcon] = supcon(embeddings, count, dim, labels, hp.gamma);
    out.con = con;
    out.grad_embedding = std::move(gcon);
    for (double& g : out.grad_embedding) g *= hp.w_con;
  } else {
    out.con = 0.0;
    out.grad_embedding.assign(embeddings.size(), 0.0);
  }
  out.task = hp.w_ce * out.ce + hp.w_con * out.con;
  return out;
}

std::pair<double, std::vector<double>> proximal(const ParamVector& local,
                                                const ParamVector& ref, double mu) {
  if (local.values.size() != ref.values.size())
    throw std::invalid_argument("proximal: parameter vectors have different lengths");
  const std::size_t N = local.values.size();
  std::vector<double> grad(N, 0.0);
  double sq = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    const double d = local.values[i] - ref.values[i];
    sq += d * d;
    grad[i] = mu * d;
  }
  return {0.5 * mu * sq, std::move(grad)};
}

std::pair<double, std::vector<double>> proximal_trained(const ParamVector& local,
                                                        const ParamVector& ref, double mu) {
  if (local.values.size() != ref.values.size())
    throw std::invalid_argument("proximal: parameter vectors have different lengths");
  std::vector<double> grad(local.values.size(), 0.0);
  double sq = 0.0;
  for (const auto& s : local.arch.layer_map()) {
    if (s.name.find(".mean") != std::string::npos ||
        s.name.find(".var") != std::string::npos)
      continue;
    for (std::size_t i = s.offset; i < s.offset + s.length; ++i) {
      const double d = local.values[i] - ref.values[i];
      sq += d * d;
      grad[i] = mu * d;
    }
  }
  return {0.5 * mu * sq, std::move(grad)};
}

std::pair<double, std::vector<double>> repr_mse(const std::vector<double>& v_local,
                                                const std::vector<double>& v_anchor,
                                                int count, int dim, double tau) {
  if (v_local.size() != v_anchor.size() ||
      v_local.size() != static_cast<std::size_t>(count) * dim)
    throw std::invalid_argument("repr_mse: feature shapes do not match");
  double acc = 0.0;
  std::vector<double> grad(v_local.size(), 0.0);
  const double gscale = 2.0 * tau / (static_cast<double>(dim) * count);
  for (int b = 0; b < count; ++b) {
    const double* vl = v_local.data() + static_cast<std::size_t>(b) * dim;
    const double* va = v_anchor.data() + static_cast<std::size_t>(b) * dim;
    double* g = grad.data() + static_cast<std::size_t>(b) * dim;
    double sq = 0.0;
    for (int j = 0; j < dim; ++j) {
      const double d = va[j] - vl[j];
      sq += d * d;
      g[j] = gscale * (vl[j] - va[j]);
    }
    acc += sq / dim;
  }
  return {tau * acc / count, std::move(grad)};
}

TotalLossResult total_loss(const ImageBatch& batch, const std::vector<int>& labels,
                           const ParamVector& theta_local, const ParamVector* theta_global,
                           const ParamVector* theta_anchor, const TotalLossConfig& cfg) {
  const bool use_anchor_prox =
      cfg.toggles.prox_anchor && theta_anchor != nullptr && cfg.hp.mu != 0.0;
  const bool use_global_prox =
      cfg.toggles.prox_global && theta_global != nullptr && cfg.hp.mu != 0.0;
  const bool use_mse = cfg.toggles.mse && theta_anchor != nullptr && cfg.hp.tau != 0.0;

  TotalLossResult out;
  out.local_forward = forward(theta_local, batch, RunMode::Train);
  const Architecture& arch = theta_local.arch;

  TaskLossResult task = task_loss(out.local_forward.logits, batch.count, arch.num_classes,
                                  out.local_forward.embedding, arch.embedding_dim, labels,
                                  cfg.hp);
  out.breakdown.ce = task.ce;
  out.breakdown.con = task.con;
  out.breakdown.task = task.task;

  std::vector<double> grad_embedding = std::move(task.grad_embedding);
  if (use_mse) {
    // the anchor sees the same batch under the same normalization regime as
    // the local model; its running statistics are never touched
    ForwardResult anchor_fwd = forward(*theta_anchor, batch, RunMode::Train);
    auto [mse, gmse] = repr_mse(out.local_forward.embedding, anchor_fwd.embedding,
                                batch.count, arch.embedding_dim, cfg.hp.tau);
    out.breakdown.mse = mse;
    for (std::size_t i = 0; i < grad_embedding.size(); ++i) grad_embedding[i] += gmse[i];
  }

  out.grad_params = backward(theta_local, *out.local_forward.cache, task.grad_logits,
                             grad_embedding);

  if (use_anchor_prox) {
    auto [pa, ga] = proximal_trained(theta_local, *theta_anchor, cfg.hp.mu);
    out.breakdown.prox_anchor = pa;
    for (std::size_t i = 0; i < out.grad_params.size(); ++i) out.grad_params[i] += ga[i];
  }
  if (use_global_prox) {
    auto [pg, gg] = proximal_trained(theta_local, *theta_global, cfg.hp.mu);
    out.breakdown.prox_global = pg;
    for (std::size_t i = 0; i < out.grad_params.size(); ++i) out.grad_params[i] += gg[i];
  }

  out.breakdown.total = ((out.breakdown.task + out.breakdown.prox_anchor) +
                         out.breakdown.prox_global) +
                        out.breakdown.mse;
  return out;
}

}  // namespace psfed
