#pragma once

#include <array>
#include <optional>
#include <span>
#include <vector>

#include "psfed/dataset.hpp"
#include "psfed/model.hpp"

namespace psfed {

struct Template {
  int identity = 0;
  std::vector<double> v;  // unit norm, or zero under the epsilon guard
};

// Eval-mode forward; returns the normalized embedding.
std::vector<double> extract_template(const ParamVector& params, const Sample& sample);
std::vector<Template> extract_templates(const ParamVector& params,
                                        const std::vector<Sample>& samples,
                                        int batch_size = 128);

// arccos of the clamped dot product; zero templates land at pi/2.
double cosine_distance(std::span<const double> a, std::span<const double> b);

struct MatchScores {
  Band gallery_band = Band::NIR;
  Band probe_band = Band::NIR;
  std::vector<double> genuine;   // same-identity distances (radians)
  std::vector<double> impostor;  // cross-identity distances (radians)
};

// Scores every gallery x probe pair. Empty inputs are rejected.
MatchScores match_all(const std::vector<Template>& gallery,
                      const std::vector<Template>& probes);

struct RocCurve {
  std::vector<double> thresholds;
  std::vector<double> far;  // fraction of impostor distances <= t
  std::vector<double> gar;  // fraction of genuine distances <= t
};

RocCurve compute_roc(const MatchScores& scores, int num_thresholds = 1000);

// Crossing of FAR(t) and FRR(t) over the pooled score thresholds; linear
// interpolation between the bracketing thresholds, midpoint at an exact tie.
double compute_eer(const MatchScores& scores);

struct EerMatrix {
  // rows: gallery band, cols: probe band, order NIR, Red, Green, Blue
  std::array<std::array<double, 4>, 4> entries{};
  std::array<double, 4> row_avg{};
  std::array<double, 4> col_avg{};
  double grand_avg = 0.0;

  void finalize();  // fills the averages from the entries
};

// Which model extracts templates. Global-model methods use one extractor
// for everything; per-client methods use the gallery band's client model
// for both the gallery and the probe templates.
struct ExtractorSet {
  std::optional<ParamVector> global;
  std::array<std::optional<ParamVector>, 4> per_band;
  bool per_client() const { return !global.has_value(); }
};

struct EvalSplit {
  std::array<std::vector<Sample>, 4> gallery_by_band;
  std::array<std::vector<Sample>, 4> probe_by_band;
};

struct CrossSpectrumResult {
  EerMatrix matrix;
  // scores for every (gallery, probe) pair, gallery-major order
  std::vector<MatchScores> scores;
};

CrossSpectrumResult cross_spectrum_matrix(const ExtractorSet& extractors,
                                          const EvalSplit& data);

}  // namespace psfed
