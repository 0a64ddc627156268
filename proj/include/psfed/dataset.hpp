#pragma once

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include "psfed/rng.hpp"
#include "psfed/spectrum.hpp"

namespace psfed {

// Per-identity latent fields the band images are rendered from: a
// high-frequency oriented line pattern and a low-frequency smooth branching
// pattern. Both deterministic per (identity, seed), values in [0, 1].
struct IdentityLatent {
  int identity_id = 0;
  int size = 32;
  std::vector<double> texture;  // size x size
  std::vector<double> vein;     // size x size
};

// How each band mixes the two fields. Longer wavelengths penetrate deeper,
// so the vein share grows strictly with the band center wavelength.
struct RenderProfile {
  struct BandMix {
    double w_texture = 0.0;
    double w_vein = 0.0;
  };
  std::array<BandMix, 4> mix{BandMix{0.28, 0.72},   // NIR
                             BandMix{0.42, 0.58},   // Red
                             BandMix{0.78, 0.22},   // Green
                             BandMix{0.88, 0.12}};  // Blue
  double gain_lo = 0.95;
  double gain_hi = 1.05;
  double noise_sigma = 0.02;
  double session2_gain_delta = 0.05;

  const BandMix& for_band(Band b) const { return mix[static_cast<int>(b)]; }
  void validate() const;  // throws std::invalid_argument
};

struct Sample {
  int identity = 0;
  Band band = Band::NIR;
  int session = 1;
  int index = 0;
  int height = 32;
  int width = 32;
  std::vector<double> image;  // height x width in [0, 1]
};

IdentityLatent gen_identity(int identity_id, std::uint64_t seed, int size = 32);

// image = gain * (w_texture * texture + w_vein * vein) + sensor noise,
// clipped to [0, 1]. Session 2 adds a fixed gain delta to model
// between-session variation.
Sample render(const IdentityLatent& latent, Band band, int session, int sample_idx,
              const RenderProfile& profile, std::uint64_t seed);

// Session-1 images feed both the per-client train sets and the enrollment
// gallery; session-2 images are the probes. Every identity appears in every
// band.
struct FederationDataset {
  int num_identities = 0;
  std::array<std::vector<Sample>, 4> train_by_band;
  std::array<std::vector<Sample>, 4> gallery_by_band;
  std::array<std::vector<Sample>, 4> probe_by_band;
};

FederationDataset build_federation_dataset(int num_identities, int train_per_identity,
                                           int test_per_identity,
                                           const RenderProfile& profile,
                                           std::uint64_t seed);

// Two augmented views: integer translation in [-max_shift, max_shift]
// (edge-padded) plus Gaussian pixel noise, clipped to [0, 1]. No flips;
// handedness carries identity.
std::pair<std::vector<double>, std::vector<double>> augment(
    const std::vector<double>& image, int height, int width, Rng& rng, int max_shift = 2,
    double noise_sigma = 0.05);

double field_correlation(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace psfed
