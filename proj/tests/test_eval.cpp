#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "psfed/eval.hpp"
#include "psfed/rng.hpp"

using namespace psfed;

namespace {

constexpr double kPi = 3.14159265358979323846;

Template unit2(double x, double y, int identity) {
  return Template{identity, {x, y}};
}

MatchScores scores_from(std::vector<double> genuine, std::vector<double> impostor) {
  MatchScores s;
  s.genuine = std::move(genuine);
  s.impostor = std::move(impostor);
  return s;
}

Sample sample_from(const std::vector<double>& image, int identity, Band band, int session) {
  Sample s;
  s.identity = identity;
  s.band = band;
  s.session = session;
  s.image = image;
  return s;
}

}  // namespace

TEST_CASE("cosine distance: identical, orthogonal, antipodal, symmetric") {
  const std::vector<double> a{1.0, 0.0};
  const std::vector<double> b{0.0, 1.0};
  const std::vector<double> c{-1.0, 0.0};
  CHECK(cosine_distance(a, a) == 0.0);
  CHECK(cosine_distance(a, b) == doctest::Approx(kPi / 2).epsilon(1e-15));
  CHECK(cosine_distance(a, c) == doctest::Approx(kPi).epsilon(1e-15));
  const std::vector<double> u{0.6, 0.8};
  CHECK(cosine_distance(a, u) == cosine_distance(u, a));
  // zero templates land at pi/2 through the clamp path
  const std::vector<double> zero{0.0, 0.0};
  CHECK(cosine_distance(zero, a) == doctest::Approx(kPi / 2).epsilon(1e-15));
}

TEST_CASE("templates are deterministic unit vectors; a zero model gives zero") {
  Architecture arch;
  arch.num_classes = 3;
  const ParamVector params = init_params(arch, 5);
  Rng rng(6);
  std::vector<double> image(32 * 32);
  for (double& v : image) v = rng.uniform();
  const Sample s = sample_from(image, 0, Band::Red, 2);

  const std::vector<double> t1 = extract_template(params, s);
  const std::vector<double> t2 = extract_template(params, s);
  CHECK(t1 == t2);
  double sq = 0.0;
  for (double v : t1) sq += v * v;
  CHECK(std::fabs(std::sqrt(sq) - 1.0) < 1e-9);

  const ParamVector zero{arch, std::vector<double>(arch.param_count(), 0.0)};
  for (double v : extract_template(zero, s)) CHECK(v == 0.0);
}

TEST_CASE("match_all: counting, trivial distances and the enumeration oracle") {
  const std::vector<Template> gallery{unit2(1, 0, 0), unit2(0, 1, 1)};
  const std::vector<Template> probes{unit2(1, 0, 0), unit2(0, 1, 1)};
  const MatchScores s = match_all(gallery, probes);
  CHECK(s.genuine.size() == 2);
  CHECK(s.impostor.size() == 2);
  for (double d : s.genuine) CHECK(d == 0.0);
  for (double d : s.impostor) CHECK(d == doctest::Approx(kPi / 2).epsilon(1e-15));

  CHECK_THROWS_AS(match_all({}, probes), std::invalid_argument);
  CHECK_THROWS_AS(match_all(gallery, {}), std::invalid_argument);

  // randomized set against a direct pair enumeration
  Rng rng(9);
  std::vector<Template> g, p;
  for (int i = 0; i < 7; ++i) {
    const double a = rng.uniform(0.0, 2 * kPi);
    g.push_back(unit2(std::cos(a), std::sin(a), i % 3));
  }
  for (int i = 0; i < 5; ++i) {
    const double a = rng.uniform(0.0, 2 * kPi);
    p.push_back(unit2(std::cos(a), std::sin(a), i % 3));
  }
  const MatchScores got = match_all(g, p);
  std::vector<double> want_gen, want_imp;
  for (const auto& gi : g)
    for (const auto& pj : p) {
      double dot = gi.v[0] * pj.v[0] + gi.v[1] * pj.v[1];
      dot = std::min(1.0, std::max(-1.0, dot));
      (gi.identity == pj.identity ? want_gen : want_imp).push_back(std::acos(dot));
    }
  CHECK(got.genuine == want_gen);
  CHECK(got.impostor == want_imp);
  CHECK(got.genuine.size() + got.impostor.size() == g.size() * p.size());
}

TEST_CASE("roc: separated and coincident distributions") {
  const MatchScores good = scores_from({0.1, 0.2}, {0.6, 0.7});
  const RocCurve roc = compute_roc(good, 100);
  REQUIRE(!roc.far.empty());
  // endpoints: a zero-limit leading point and (1,1) at the top
  CHECK(roc.far.front() == 0.0);
  CHECK(roc.gar.front() == 0.0);
  CHECK(roc.far.back() == 1.0);
  CHECK(roc.gar.back() == 1.0);
  // perfectly separated scores pass through FAR=0, GAR=1
  bool hits_corner = false;
  for (std::size_t i = 0; i < roc.far.size(); ++i)
    if (roc.far[i] == 0.0 && roc.gar[i] == 1.0) hits_corner = true;
  CHECK(hits_corner);
  // monotone sweep
  for (std::size_t i = 1; i < roc.far.size(); ++i) {
    CHECK(roc.far[i] >= roc.far[i - 1]);
    CHECK(roc.gar[i] >= roc.gar[i - 1]);
  }

  // identical distributions track the diagonal
  const MatchScores flat = scores_from({0.1, 0.2, 0.3}, {0.1, 0.2, 0.3});
  const RocCurve diag = compute_roc(flat, 50);
  for (std::size_t i = 0; i < diag.far.size(); ++i)
    CHECK(diag.far[i] == doctest::Approx(diag.gar[i]).epsilon(1e-12));
}

TEST_CASE("roc matches an exhaustive threshold oracle pointwise") {
  Rng rng(21);
  std::vector<double> gen(20), imp(20);
  for (double& d : gen) d = rng.uniform(0.0, kPi);
  for (double& d : imp) d = rng.uniform(0.0, kPi);
  const MatchScores s = scores_from(gen, imp);
  const RocCurve roc = compute_roc(s, 200);
  for (std::size_t i = 0; i < roc.thresholds.size(); ++i) {
    long fa = 0, ga = 0;
    for (double d : imp)
      if (d <= roc.thresholds[i]) ++fa;
    for (double d : gen)
      if (d <= roc.thresholds[i]) ++ga;
    CHECK(roc.far[i] == doctest::Approx(fa / 20.0).epsilon(1e-12));
    CHECK(roc.gar[i] == doctest::Approx(ga / 20.0).epsilon(1e-12));
  }
}

TEST_CASE("eer: the three hand-swept systems") {
  // perfect separation
  CHECK(compute_eer(scores_from({0.1, 0.2}, {0.3, 0.4})) == 0.0);
  // interleaved: FAR = FRR = 0.5 at t = 0.2
  CHECK(compute_eer(scores_from({0.1, 0.3}, {0.2, 0.4})) ==
        doctest::Approx(0.5).epsilon(1e-12));
  // fully inverted distributions
  const double inverted = compute_eer(scores_from({0.9}, {0.1}));
  CHECK(inverted >= 0.5);
  CHECK(inverted == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("eer matches the brute-force enumeration on random score sets") {
  Rng rng(33);
  for (int trial = 0; trial < 100; ++trial) {
    const int ng = rng.uniform_int(1, 40);
    const int ni = rng.uniform_int(1, 40);
    std::vector<double> gen(ng), imp(ni);
    // mixture with deliberate overlap and occasional exact ties
    for (double& d : gen) d = std::round(rng.uniform(0.0, 1.0) * 20.0) / 20.0 * kPi / 2;
    for (double& d : imp)
      d = std::round(rng.uniform(0.3, 1.3) * 20.0) / 20.0 * kPi / 2;
    const double got = compute_eer(scores_from(gen, imp));
    const double want = oracles::brute_force_eer(gen, imp);
    CHECK(std::fabs(got - want) < 1e-9);
    CHECK(got >= 0.0);
    CHECK(got <= 1.0);
  }
}

TEST_CASE("eer matrix averages are arithmetic means") {
  EerMatrix m;
  double v = 0.0;
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) m.entries[r][c] = (v += 0.01);
  m.finalize();
  for (int r = 0; r < 4; ++r) {
    double acc = 0.0;
    for (int c = 0; c < 4; ++c) acc += m.entries[r][c];
    CHECK(m.row_avg[r] == doctest::Approx(acc / 4.0).epsilon(1e-15));
  }
  double grand = 0.0;
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) grand += m.entries[r][c];
  CHECK(m.grand_avg == doctest::Approx(grand / 16.0).epsilon(1e-15));
}

TEST_CASE("cross-spectrum matrix wiring: conventions and failure modes") {
  // toy split: 2 identities, distinct constant images per band/session
  EvalSplit split;
  Rng rng(44);
  auto image = [&](double base) {
    std::vector<double> img(32 * 32);
    for (double& p : img) p = std::min(1.0, std::max(0.0, base + 0.05 * rng.normal()));
    return img;
  };
  for (Band b : kAllBands) {
    const int bi = static_cast<int>(b);
    for (int id = 0; id < 2; ++id) {
      split.gallery_by_band[bi].push_back(
          sample_from(image(0.3 + 0.2 * id), id, b, 1));
      split.probe_by_band[bi].push_back(sample_from(image(0.3 + 0.2 * id), id, b, 2));
    }
  }

  Architecture arch;
  arch.num_classes = 2;
  ExtractorSet global_only;
  global_only.global = init_params(arch, 45);
  const CrossSpectrumResult res = cross_spectrum_matrix(global_only, split);
  CHECK(res.scores.size() == 16);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) {
      CHECK(res.matrix.entries[r][c] >= 0.0);
      CHECK(res.matrix.entries[r][c] <= 1.0);
    }

  // per-client mode rejects a missing band model
  ExtractorSet per_client;
  per_client.per_band[0] = init_params(arch, 46);
  CHECK_THROWS_AS(cross_spectrum_matrix(per_client, split), std::invalid_argument);

  // a zero model collapses all scores to pi/2: EER 0.5 everywhere
  ExtractorSet zero_model;
  zero_model.global = ParamVector{arch, std::vector<double>(arch.param_count(), 0.0)};
  const CrossSpectrumResult degenerate = cross_spectrum_matrix(zero_model, split);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c)
      CHECK(degenerate.matrix.entries[r][c] == doctest::Approx(0.5).epsilon(1e-12));
}
