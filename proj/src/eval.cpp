#include "psfed/eval.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace psfed {

std::vector<Template> extract_templates(const ParamVector& params,
                                        const std::vector<Sample>& samples,
                                        int batch_size) {
  std::vector<Template> out;
  out.reserve(samples.size());
  const int n = params.arch.embedding_dim;
  for (std::size_t start = 0; start < samples.size();
       start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(samples.size(), start + batch_size);
    ImageBatch batch;
    batch.count = static_cast<int>(end - start);
    batch.height = samples[start].height;
    batch.width = samples[start].width;
    batch.pixels.reserve(static_cast<std::size_t>(batch.count) * batch.height * batch.width);
    for (std::size_t i = start; i < end; ++i)
      batch.pixels.insert(batch.pixels.end(), samples[i].image.begin(),
                          samples[i].image.end());
    const ForwardResult fwd = forward(params, batch, RunMode::Eval);
    for (std::size_t i = start; i < end; ++i) {
      Template t;
      t.identity = samples[i].identity;
      const double* e = fwd.embedding.data() + (i - start) * n;
      t.v.assign(e, e + n);
      out.push_back(std::move(t));
    }
  }
  return out;
}

std::vector<double> extract_template(const ParamVector& params, const Sample& sample) {
  ImageBatch batch;
  batch.count = 1;
  batch.height = sample.height;
  batch.width = sample.width;
  batch.pixels = sample.image;
  return forward(params, batch, RunMode::Eval).embedding;
}

double cosine_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size())
    throw std::invalid_argument("cosine_distance: dimension mismatch");
  double dot = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i];
  dot = std::clamp(dot, -1.0, 1.0);
  return std::acos(dot);
}

MatchScores match_all(const std::vector<Template>& gallery,
                      const std::vector<Template>& probes) {
  if (gallery.empty() || probes.empty())
    throw std::invalid_argument("match_all: gallery and probe sets must be non-empty");
  MatchScores s;
  s.genuine.reserve(gallery.size());
  s.impostor.reserve(gallery.size() * probes.size());
  for (const Template& g : gallery) {
    for (const Template& p : probes) {
      const double d = cosine_distance(g.v, p.v);
      if (g.identity == p.identity)
        s.genuine.push_back(d);
      else
        s.impostor.push_back(d);
    }
  }
  return s;
}

RocCurve compute_roc(const MatchScores& scores, int num_thresholds) {
  if (scores.genuine.empty() || scores.impostor.empty())
    throw std::invalid_argument("compute_roc: need both genuine and impostor scores");
  if (num_thresholds < 2)
    throw std::invalid_argument("compute_roc: need at least two thresholds");
  std::vector<double> gen = scores.genuine;
  std::vector<double> imp = scores.impostor;
  std::sort(gen.begin(), gen.end());
  std::sort(imp.begin(), imp.end());
  const double lo = std::min(gen.front(), imp.front());
  const double hi = std::max(gen.back(), imp.back());

  auto frac_leq = [](const std::vector<double>& sorted, double t) {
    return static_cast<double>(std::upper_bound(sorted.begin(), sorted.end(), t) -
                               sorted.begin()) /
           static_cast<double>(sorted.size());
  };

  RocCurve roc;
  const double step = hi > lo ? (hi - lo) / (num_thresholds - 1) : 1.0;
  // leading point below every score: the zero-limit endpoint
  roc.thresholds.push_back(lo - step);
  roc.far.push_back(0.0);
  roc.gar.push_back(0.0);
  for (int k = 0; k < num_thresholds; ++k) {
    const double t = k + 1 == num_thresholds ? hi : lo + step * k;
    roc.thresholds.push_back(t);
    roc.far.push_back(frac_leq(imp, t));
    roc.gar.push_back(frac_leq(gen, t));
  }
  return roc;
}

double compute_eer(const MatchScores& scores) {
  if (scores.genuine.empty() || scores.impostor.empty())
    throw std::invalid_argument("compute_eer: need both genuine and impostor scores");
  std::vector<double> gen = scores.genuine;
  std::vector<double> imp = scores.impostor;
  std::sort(gen.begin(), gen.end());
  std::sort(imp.begin(), imp.end());

  std::vector<double> pooled;
  pooled.reserve(gen.size() + imp.size());
  pooled.insert(pooled.end(), gen.begin(), gen.end());
  pooled.insert(pooled.end(), imp.begin(), imp.end());
  std::sort(pooled.begin(), pooled.end());
  pooled.erase(std::unique(pooled.begin(), pooled.end()), pooled.end());

  auto frac_leq = [](const std::vector<double>& sorted, double t) {
    return static_cast<double>(std::upper_bound(sorted.begin(), sorted.end(), t) -
                               sorted.begin()) /
           static_cast<double>(sorted.size());
  };

  // virtual starting point below every score: FAR 0, FRR 1
  double prev_far = 0.0, prev_frr = 1.0;
  for (double t : pooled) {
    const double far = frac_leq(imp, t);
    const double frr = 1.0 - frac_leq(gen, t);
    const double d = far - frr;
    if (d == 0.0) return 0.5 * (far + frr);
    if (d > 0.0) {
      // crossing sits between the previous threshold and this one
      const double denom = (far - prev_far) + (prev_frr - frr);
      const double s = denom > 0.0 ? (prev_frr - prev_far) / denom : 0.5;
      return prev_far + s * (far - prev_far);
    }
    prev_far = far;
    prev_frr = frr;
  }
  return 1.0;  // unreachable: FAR(t_max) = 1, FRR(t_max) = 0
}

void EerMatrix::finalize() {
  double g = 0.0;
  for (int r = 0; r < 4; ++r) {
    double ra = 0.0;
    for (int c = 0; c < 4; ++c) ra += entries[r][c];
    row_avg[r] = ra / 4.0;
    g += ra;
  }
  for (int c = 0; c < 4; ++c) {
    double ca = 0.0;
    for (int r = 0; r < 4; ++r) ca += entries[r][c];
    col_avg[c] = ca / 4.0;
  }
  grand_avg = g / 16.0;
}

CrossSpectrumResult cross_spectrum_matrix(const ExtractorSet& extractors,
                                          const EvalSplit& data) {
  for (Band b : kAllBands) {
    const int bi = static_cast<int>(b);
    if (data.gallery_by_band[bi].empty())
      throw std::invalid_argument(std::string("cross_spectrum_matrix: empty gallery for ") +
                                  to_string(b));
    if (data.probe_by_band[bi].empty())
      throw std::invalid_argument(std::string("cross_spectrum_matrix: empty probe set for ") +
                                  to_string(b));
    if (extractors.per_client() && !extractors.per_band[bi].has_value())
      throw std::invalid_argument(std::string("cross_spectrum_matrix: missing model for ") +
                                  to_string(b));
  }

  CrossSpectrumResult result;
  if (!extractors.per_client()) {
    // one model extracts everything; do each set once
    std::array<std::vector<Template>, 4> gal, prb;
    for (Band b : kAllBands) {
      const int bi = static_cast<int>(b);
      gal[bi] = extract_templates(*extractors.global, data.gallery_by_band[bi]);
      prb[bi] = extract_templates(*extractors.global, data.probe_by_band[bi]);
    }
    for (Band gb : kAllBands) {
      for (Band pb : kAllBands) {
        MatchScores s = match_all(gal[static_cast<int>(gb)], prb[static_cast<int>(pb)]);
        s.gallery_band = gb;
        s.probe_band = pb;
        result.matrix.entries[static_cast<int>(gb)][static_cast<int>(pb)] = compute_eer(s);
        result.scores.push_back(std::move(s));
      }
    }
  } else {
    // the gallery band's model extracts both sides of every pairing
    for (Band gb : kAllBands) {
      const ParamVector& model = *extractors.per_band[static_cast<int>(gb)];
      const auto gal = extract_templates(model, data.gallery_by_band[static_cast<int>(gb)]);
      for (Band pb : kAllBands) {
        const auto prb = extract_templates(model, data.probe_by_band[static_cast<int>(pb)]);
        MatchScores s = match_all(gal, prb);
        s.gallery_band = gb;
        s.probe_band = pb;
        result.matrix.entries[static_cast<int>(gb)][static_cast<int>(pb)] = compute_eer(s);
        result.scores.push_back(std::move(s));
      }
    }
  }
  result.matrix.finalize();
  return result;
}

}  // namespace psfed
