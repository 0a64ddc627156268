#include "psfed/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace psfed {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

double clip01(double v) { return std::min(1.0, std::max(0.0, v)); }

// marks pixels along a segment by marching in half-pixel steps
void rasterize_segment(std::vector<double>& canvas, int size, double x0, double y0,
                       double x1, double y1) {
  const double len = std::hypot(x1 - x0, y1 - y0);
  const int steps = std::max(1, static_cast<int>(std::ceil(len / 0.5)));
  for (int s = 0; s <= steps; ++s) {
    const double t = static_cast<double>(s) / steps;
    const int px = static_cast<int>(std::lround(x0 + t * (x1 - x0)));
    const int py = static_cast<int>(std::lround(y0 + t * (y1 - y0)));
    if (px >= 0 && px < size && py >= 0 && py < size)
      canvas[static_cast<std::size_t>(py) * size + px] = 1.0;
  }
}

void walk_polyline(std::vector<double>& canvas, int size, Rng& rng, double x, double y,
                   double heading, int segments, bool may_branch) {
  const int branch_at = may_branch && segments > 2 ? rng.uniform_int(1, segments - 1) : -1;
  for (int s = 0; s < segments; ++s) {
    heading += rng.uniform(-0.4, 0.4);
    const double len = rng.uniform(4.0, 8.0);
    const double nx = x + len * std::cos(heading);
    const double ny = y + len * std::sin(heading);
    rasterize_segment(canvas, size, x, y, nx, ny);
    if (s == branch_at) {
      const double sign = rng.uniform() < 0.5 ? 1.0 : -1.0;
      const double split = heading + sign * rng.uniform(0.6, 1.0);
      walk_polyline(canvas, size, rng, nx, ny, split, segments - s - 1, false);
    }
    x = nx;
    y = ny;
  }
}

std::vector<double> gaussian_blur(const std::vector<double>& src, int size, double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(2 * radius + 1);
  double ksum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    ksum += kernel[i + radius];
  }
  for (double& k : kernel) k /= ksum;

  std::vector<double> tmp(src.size(), 0.0), out(src.size(), 0.0);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        const int xx = x + i;
        if (xx >= 0 && xx < size)
          acc += kernel[i + radius] * src[static_cast<std::size_t>(y) * size + xx];
      }
      tmp[static_cast<std::size_t>(y) * size + x] = acc;
    }
  }
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        const int yy = y + i;
        if (yy >= 0 && yy < size)
          acc += kernel[i + radius] * tmp[static_cast<std::size_t>(yy) * size + x];
      }
      out[static_cast<std::size_t>(y) * size + x] = acc;
    }
  }
  return out;
}

}  // namespace

void RenderProfile::validate() const {
  for (Band b : kAllBands) {
    const BandMix& m = for_band(b);
    if (std::abs(m.w_texture + m.w_vein - 1.0) > 1e-12)
      throw std::invalid_argument("render profile: band weights must sum to 1");
    if (m.w_texture < 0.0 || m.w_vein < 0.0)
      throw std::invalid_argument("render profile: band weights must be non-negative");
  }
  // vein visibility must grow with the band center wavelength
  std::array<Band, 4> by_wavelength{Band::Blue, Band::Green, Band::Red, Band::NIR};
  for (int i = 0; i + 1 < 4; ++i) {
    if (!(for_band(by_wavelength[i]).w_vein < for_band(by_wavelength[i + 1]).w_vein))
      throw std::invalid_argument(
          "render profile: vein weight must strictly increase with wavelength");
  }
  if (gain_lo > gain_hi) throw std::invalid_argument("render profile: bad gain range");
  if (noise_sigma < 0.0) throw std::invalid_argument("render profile: negative noise sigma");
}

IdentityLatent gen_identity(int identity_id, std::uint64_t seed, int size) {
  IdentityLatent lat;
  lat.identity_id = identity_id;
  lat.size = size;
  const std::size_t area = static_cast<std::size_t>(size) * size;

  // oriented gratings
  Rng trng = derive_rng(seed, 0x7E47u, static_cast<std::uint64_t>(identity_id), 0u);
  struct Grating {
    double theta, freq, phase;
  };
  std::array<Grating, 4> gratings;
  for (auto& g : gratings) {
    g.theta = trng.uniform(0.0, 3.14159265358979323846);
    g.freq = trng.uniform(4.0, 8.0);
    g.phase = trng.uniform(0.0, kTwoPi);
  }
  lat.texture.resize(area);
  for (int y = 0; y < size; ++y) {
    const double ny = static_cast<double>(y) / size;
    for (int x = 0; x < size; ++x) {
      const double nx = static_cast<double>(x) / size;
      double s = 0.0;
      for (const auto& g : gratings)
        s += std::sin(kTwoPi * g.freq * (nx * std::cos(g.theta) + ny * std::sin(g.theta)) +
                      g.phase);
      lat.texture[static_cast<std::size_t>(y) * size + x] = clip01(0.5 + 0.3 * s);
    }
  }

  // branching polylines, blurred
  Rng vrng = derive_rng(seed, 0x7E47u, static_cast<std::uint64_t>(identity_id), 1u);
  std::vector<double> canvas(area, 0.0);
  const int lines = vrng.uniform_int(2, 3);
  for (int li = 0; li < lines; ++li) {
    const int side = vrng.uniform_int(0, 3);
    const double t = vrng.uniform(0.0, static_cast<double>(size - 1));
    double x = 0, y = 0, inward = 0;
    switch (side) {
      case 0: x = t; y = 0; inward = 1.5707963267948966; break;           // top
      case 1: x = t; y = size - 1; inward = -1.5707963267948966; break;   // bottom
      case 2: x = 0; y = t; inward = 0.0; break;                          // left
      default: x = size - 1; y = t; inward = 3.14159265358979323846; break;
    }
    const double heading = inward + vrng.uniform(-0.5, 0.5);
    const int segments = vrng.uniform_int(4, 7);
    walk_polyline(canvas, size, vrng, x, y, heading, segments, true);
  }
  lat.vein = gaussian_blur(canvas, size, 2.0);
  for (double& v : lat.vein) v = clip01(3.0 * v);
  return lat;
}

Sample render(const IdentityLatent& latent, Band band, int session, int sample_idx,
              const RenderProfile& profile, std::uint64_t seed) {
  profile.validate();
  if (session != 1 && session != 2)
    throw std::invalid_argument("render: session must be 1 or 2");
  Rng rng = derive_rng(seed, 0x4E4De2u, static_cast<std::uint64_t>(latent.identity_id),
                       static_cast<std::uint64_t>(static_cast<int>(band)),
                       static_cast<std::uint64_t>(session),
                       static_cast<std::uint64_t>(sample_idx));
  Sample s;
  s.identity = latent.identity_id;
  s.band = band;
  s.session = session;
  s.index = sample_idx;
  s.height = latent.size;
  s.width = latent.size;
  const RenderProfile::BandMix& mix = profile.for_band(band);
  double gain = rng.uniform(profile.gain_lo, profile.gain_hi);
  if (session == 2) gain += profile.session2_gain_delta;
  const std::size_t area = static_cast<std::size_t>(latent.size) * latent.size;
  s.image.resize(area);
  for (std::size_t i = 0; i < area; ++i) {
    double v = gain * (mix.w_texture * latent.texture[i] + mix.w_vein * latent.vein[i]);
    if (profile.noise_sigma > 0.0) v += profile.noise_sigma * rng.normal();
    s.image[i] = clip01(v);
  }
  return s;
}

FederationDataset build_federation_dataset(int num_identities, int train_per_identity,
                                           int test_per_identity,
                                           const RenderProfile& profile,
                                           std::uint64_t seed) {
  if (num_identities < 2)
    throw std::invalid_argument("dataset: need at least two identities");
  if (train_per_identity < 1 || test_per_identity < 1)
    throw std::invalid_argument("dataset: per-identity counts must be positive");
  profile.validate();

  FederationDataset ds;
  ds.num_identities = num_identities;
  for (int id = 0; id < num_identities; ++id) {
    const IdentityLatent lat = gen_identity(id, seed);
    for (Band b : kAllBands) {
      const int bi = static_cast<int>(b);
      for (int k = 0; k < train_per_identity; ++k) {
        Sample s = render(lat, b, 1, k, profile, seed);
        ds.train_by_band[bi].push_back(s);
        ds.gallery_by_band[bi].push_back(std::move(s));
      }
      for (int k = 0; k < test_per_identity; ++k)
        ds.probe_by_band[bi].push_back(render(lat, b, 2, k, profile, seed));
    }
  }
  return ds;
}

std::pair<std::vector<double>, std::vector<double>> augment(
    const std::vector<double>& image, int height, int width, Rng& rng, int max_shift,
    double noise_sigma) {
  auto one_view = [&]() {
    const int dy = max_shift > 0 ? rng.uniform_int(-max_shift, max_shift) : 0;
    const int dx = max_shift > 0 ? rng.uniform_int(-max_shift, max_shift) : 0;
    std::vector<double> out(image.size());
    for (int y = 0; y < height; ++y) {
      const int sy = std::clamp(y + dy, 0, height - 1);
      for (int x = 0; x < width; ++x) {
        const int sx = std::clamp(x + dx, 0, width - 1);
        double v = image[static_cast<std::size_t>(sy) * width + sx];
        if (noise_sigma > 0.0) v += noise_sigma * rng.normal();
        out[static_cast<std::size_t>(y) * width + x] = clip01(v);
      }
    }
    return out;
  };
  auto a = one_view();
  auto b = one_view();
  return {std::move(a), std::move(b)};
}

double field_correlation(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.empty())
    throw std::invalid_argument("field_correlation: size mismatch");
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    cov += da * db;
    va += da * da;
    vb += db * db;
  }
  if (va <= 0.0 || vb <= 0.0) return 0.0;
  return cov / std::sqrt(va * vb);
}

}  // namespace psfed
