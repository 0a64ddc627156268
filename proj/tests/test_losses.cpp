#include <doctest.h>

#include <cmath>
#include <numeric>

#include "oracles.hpp"
#include "psfed/losses.hpp"
#include "psfed/rng.hpp"

using namespace psfed;

namespace {

Architecture small_arch(int num_classes = 3) {
  Architecture a;
  a.num_classes = num_classes;
  return a;
}

ImageBatch random_batch(int count, std::uint64_t seed) {
  ImageBatch b;
  b.count = count;
  b.height = 32;
  b.width = 32;
  b.pixels.resize(static_cast<std::size_t>(count) * 32 * 32);
  Rng rng(seed);
  for (double& p : b.pixels) p = rng.uniform();
  return b;
}

std::vector<double> random_unit_rows(int count, int dim, std::uint64_t seed) {
  std::vector<double> z(static_cast<std::size_t>(count) * dim);
  Rng rng(seed);
  for (double& v : z) v = rng.normal();
  for (int i = 0; i < count; ++i) {
    double sq = 0.0;
    for (int j = 0; j < dim; ++j) sq += z[i * dim + j] * z[i * dim + j];
    const double r = std::sqrt(sq);
    for (int j = 0; j < dim; ++j) z[i * dim + j] /= r;
  }
  return z;
}

}  // namespace

TEST_CASE("cross-entropy: uniform two-class logits give ln 2") {
  auto [loss, grad] = cross_entropy({0.0, 0.0}, 1, 2, {0});
  CHECK(std::fabs(loss - std::log(2.0)) < 1e-12);
  CHECK(grad[0] == doctest::Approx(-0.5).epsilon(1e-12));
  CHECK(grad[1] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("cross-entropy is invariant under per-sample logit shifts") {
  Rng rng(5);
  std::vector<double> logits(4 * 3);
  for (double& v : logits) v = rng.normal();
  std::vector<int> labels{2, 0, 1, 0};
  const double base = cross_entropy(logits, 4, 3, labels).first;
  std::vector<double> shifted = logits;
  for (int i = 0; i < 4; ++i) {
    const double c = 10.0 * (i + 1);
    for (int k = 0; k < 3; ++k) shifted[i * 3 + k] += c;
  }
  const double moved = cross_entropy(shifted, 4, 3, labels).first;
  CHECK(std::fabs(base - moved) < 1e-12);
}

TEST_CASE("cross-entropy matches a brute-force softmax/NLL oracle") {
  Rng rng(6);
  std::vector<double> logits(4 * 3);
  for (double& v : logits) v = rng.normal();
  const std::vector<int> labels{1, 2, 0, 2};
  auto [loss, grad] = cross_entropy(logits, 4, 3, labels);

  double expected = 0.0;
  for (int i = 0; i < 4; ++i) {
    double denom = 0.0;
    for (int c = 0; c < 3; ++c) denom += std::exp(logits[i * 3 + c]);
    expected += -std::log(std::exp(logits[i * 3 + labels[i]]) / denom);
  }
  expected /= 4.0;
  CHECK(std::fabs(loss - expected) < 1e-12);

  const double fd = oracles::fd_max_rel_err_flat(
      logits, grad, [&](const std::vector<double>& l) {
        return cross_entropy(l, 4, 3, labels).first;
      });
  CHECK(fd < 1e-4);
}

TEST_CASE("cross-entropy rejects out-of-range labels") {
  CHECK_THROWS_AS(cross_entropy({0.0, 0.0}, 1, 2, {2}), std::invalid_argument);
  CHECK_THROWS_AS(cross_entropy({0.0, 0.0}, 1, 2, {-1}), std::invalid_argument);
}

TEST_CASE("supcon reproduces the hand-evaluated four-point value") {
  // z1=z2=(1,0), z3=z4=(0,1), labels (a,a,b,b), gamma=1:
  // each anchor contributes ln((e+2)/e); the sum over four anchors is
  // 4*(ln(e+2) - 1) = 2.2057789...
  const std::vector<double> z{1, 0, 1, 0, 0, 1, 0, 1};
  const std::vector<int> labels{0, 0, 1, 1};
  auto [loss, grad] = supcon(z, 4, 2, labels, 1.0);
  (void)grad;
  const double expected = 4.0 * (std::log(std::exp(1.0) + 2.0) - 1.0);
  CHECK(std::fabs(loss - expected) < 1e-12);
  CHECK(loss == doctest::Approx(2.2057789).epsilon(1e-7));
}

TEST_CASE("supcon is invariant under batch permutation") {
  const int count = 6, dim = 4;
  const std::vector<double> z = random_unit_rows(count, dim, 11);
  const std::vector<int> labels{0, 1, 0, 2, 1, 2};
  const double base = supcon(z, count, dim, labels, 0.07).first;

  const std::vector<int> perm{3, 0, 5, 1, 4, 2};
  std::vector<double> zp(z.size());
  std::vector<int> lp(count);
  for (int i = 0; i < count; ++i) {
    lp[i] = labels[perm[i]];
    for (int j = 0; j < dim; ++j) zp[i * dim + j] = z[perm[i] * dim + j];
  }
  const double moved = supcon(zp, count, dim, lp, 0.07).first;
  CHECK(std::fabs(base - moved) < 1e-12);
}

TEST_CASE("supcon rejects an anchor without positives") {
  const std::vector<double> z = random_unit_rows(3, 4, 12);
  CHECK_THROWS_AS(supcon(z, 3, 4, {0, 0, 1}, 1.0), std::invalid_argument);
}

TEST_CASE("supcon gradient matches finite differences") {
  const int count = 6, dim = 4;
  for (std::uint64_t trial = 0; trial < 5; ++trial) {
    const std::vector<double> z = random_unit_rows(count, dim, 20 + trial);
    const std::vector<int> labels{0, 1, 0, 1, 2, 2};
    auto [loss, grad] = supcon(z, count, dim, labels, 0.07);
    (void)loss;
    const double fd = oracles::fd_max_rel_err_flat(
        z, grad,
        [&](const std::vector<double>& v) { return supcon(v, count, dim, labels, 0.07).first; });
    CHECK(fd < 1e-4);
  }
}

TEST_CASE("task loss composes the weighted parts linearly") {
  const int count = 4, classes = 3, dim = 4;
  Rng rng(31);
  std::vector<double> logits(count * classes);
  for (double& v : logits) v = rng.normal();
  const std::vector<double> z = random_unit_rows(count, dim, 32);
  const std::vector<int> labels{0, 0, 1, 1};

  LossHyperparams hp;  // 0.8 / 0.2
  const TaskLossResult t = task_loss(logits, count, classes, z, dim, labels, hp);
  const double ce = cross_entropy(logits, count, classes, labels).first;
  const double con = supcon(z, count, dim, labels, hp.gamma).first;
  CHECK(std::fabs(t.task - (0.8 * ce + 0.2 * con)) < 1e-15);
  CHECK(t.ce == ce);
  CHECK(t.con == con);

  // contrastive weight zero degenerates to the scaled cross-entropy
  LossHyperparams ce_only = hp;
  ce_only.w_con = 0.0;
  const TaskLossResult t2 = task_loss(logits, count, classes, z, dim, labels, ce_only);
  CHECK(t2.task == doctest::Approx(0.8 * ce).epsilon(1e-15));
  for (double g : t2.grad_embedding) CHECK(g == 0.0);
}

TEST_CASE("proximal: trivial cases and the scalar-loop oracle") {
  const Architecture arch = small_arch();
  ParamVector a = init_params(arch, 40);
  auto [zero_loss, zero_grad] = proximal(a, a, 0.01);
  CHECK(zero_loss == 0.0);
  for (double g : zero_grad) CHECK(g == 0.0);

  // difference vector (2, 0) at mu = 0.01 gives 0.02
  Architecture dummy = small_arch();
  ParamVector x{dummy, {2.0, 0.0}};
  ParamVector y{dummy, {0.0, 0.0}};
  auto [small_loss, small_grad] = proximal(x, y, 0.01);
  CHECK(std::fabs(small_loss - 0.02) < 1e-15);
  CHECK(small_grad[0] == doctest::Approx(0.02).epsilon(1e-15));
  CHECK(small_grad[1] == 0.0);

  ParamVector u{dummy, std::vector<double>(100)};
  ParamVector v{dummy, std::vector<double>(100)};
  Rng rng(41);
  for (double& w : u.values) w = rng.normal();
  for (double& w : v.values) w = rng.normal();
  auto [loss, grad] = proximal(u, v, 0.37);
  double expected = 0.0;
  for (int i = 0; i < 100; ++i)
    expected += 0.37 / 2.0 * (u.values[i] - v.values[i]) * (u.values[i] - v.values[i]);
  CHECK(std::fabs(loss - expected) < 1e-12);
  for (int i = 0; i < 100; ++i)
    CHECK(grad[i] == doctest::Approx(0.37 * (u.values[i] - v.values[i])).epsilon(1e-15));

  ParamVector shorter{dummy, std::vector<double>(99)};
  CHECK_THROWS_AS(proximal(u, shorter, 0.1), std::invalid_argument);
}

TEST_CASE("representation consistency: point values and finite differences") {
  // n=2, v_A=(1,0), v_l=(0,1), tau=1000 -> 1000*(1+1)/2 = 1000
  auto [loss, grad] = repr_mse({0.0, 1.0}, {1.0, 0.0}, 1, 2, 1000.0);
  (void)grad;
  CHECK(std::fabs(loss - 1000.0) < 1e-12);

  auto [same, same_grad] = repr_mse({0.3, 0.4}, {0.3, 0.4}, 1, 2, 1000.0);
  CHECK(same == 0.0);
  for (double g : same_grad) CHECK(g == 0.0);

  const int count = 3, dim = 5;
  const std::vector<double> vl = random_unit_rows(count, dim, 50);
  const std::vector<double> va = random_unit_rows(count, dim, 51);
  auto [mse, mse_grad] = repr_mse(vl, va, count, dim, 1000.0);
  (void)mse;
  const double fd = oracles::fd_max_rel_err_flat(
      vl, mse_grad,
      [&](const std::vector<double>& v) { return repr_mse(v, va, count, dim, 1000.0).first; });
  CHECK(fd < 1e-4);

  std::vector<double> wrong(static_cast<std::size_t>(count) * (dim + 1));
  CHECK_THROWS_AS(repr_mse(vl, wrong, count, dim, 1.0), std::invalid_argument);
}

TEST_CASE("total loss: coincident references zero the proximal terms") {
  const Architecture arch = small_arch();
  const ParamVector theta = init_params(arch, 60);
  const ImageBatch batch = random_batch(4, 61);
  const std::vector<int> labels{0, 0, 1, 1};
  TotalLossConfig cfg;  // all terms on

  const TotalLossResult res = total_loss(batch, labels, theta, &theta, &theta, cfg);
  CHECK(res.breakdown.prox_global == 0.0);
  CHECK(res.breakdown.prox_anchor == 0.0);
  CHECK(res.breakdown.total ==
        doctest::Approx(res.breakdown.task + res.breakdown.mse).epsilon(1e-15));
}

TEST_CASE("total loss: zero temperatures reduce to the task loss") {
  const Architecture arch = small_arch();
  const ParamVector theta = init_params(arch, 62);
  const ParamVector other = init_params(arch, 63);
  const ImageBatch batch = random_batch(4, 64);
  const std::vector<int> labels{0, 1, 0, 1};
  TotalLossConfig cfg;
  cfg.hp.mu = 0.0;
  cfg.hp.tau = 0.0;

  const TotalLossResult res = total_loss(batch, labels, theta, &other, &other, cfg);
  CHECK(res.breakdown.prox_global == 0.0);
  CHECK(res.breakdown.prox_anchor == 0.0);
  CHECK(res.breakdown.mse == 0.0);
  CHECK(res.breakdown.total == res.breakdown.task);
}

TEST_CASE("total loss: breakdown adds up exactly and references stay frozen") {
  const Architecture arch = small_arch();
  const ParamVector theta = init_params(arch, 70);
  const ParamVector global = init_params(arch, 71);
  const ParamVector anchor = init_params(arch, 72);
  const ImageBatch batch = random_batch(4, 73);
  const std::vector<int> labels{0, 0, 2, 2};
  TotalLossConfig cfg;

  const std::vector<double> global_before = global.values;
  const std::vector<double> anchor_before = anchor.values;
  const TotalLossResult res = total_loss(batch, labels, theta, &global, &anchor, cfg);
  CHECK(global.values == global_before);
  CHECK(anchor.values == anchor_before);

  const LossBreakdown& b = res.breakdown;
  CHECK(b.total == ((b.task + b.prox_anchor) + b.prox_global) + b.mse);
  CHECK(b.ce >= 0.0);
  CHECK(b.prox_global >= 0.0);
  CHECK(b.prox_anchor >= 0.0);
  CHECK(b.mse >= 0.0);
  CHECK(b.task == doctest::Approx(0.8 * b.ce + 0.2 * b.con).epsilon(1e-15));
}

TEST_CASE("total loss gradient matches finite differences") {
  const Architecture arch = small_arch();
  const ImageBatch batch = random_batch(4, 80);
  const std::vector<int> labels{0, 0, 1, 1};
  TotalLossConfig cfg;

  for (std::uint64_t trial = 0; trial < 3; ++trial) {
    const ParamVector theta = init_params(arch, 81 + trial);
    const ParamVector global = init_params(arch, 91 + trial);
    const ParamVector anchor = init_params(arch, 101 + trial);
    const TotalLossResult res = total_loss(batch, labels, theta, &global, &anchor, cfg);

    Rng rng(111 + trial);
    const std::vector<std::size_t> idx = oracles::sample_param_indices(arch, 2, rng);
    const auto fd = oracles::fd_max_rel_err_smooth(
        theta, res.grad_params,
        [&](const ParamVector& p) {
          const TotalLossResult r = total_loss(batch, labels, p, &global, &anchor, cfg);
          return std::make_pair(r.breakdown.total,
                                activation_signature(*r.local_forward.cache));
        },
        idx);
    CHECK(fd.max_rel_err < 1e-4);
    CHECK(fd.checked > static_cast<int>(idx.size()) / 2);
  }
}
