#include "psfed/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "psfed/rng.hpp"

namespace psfed {

namespace {

constexpr double kBnEpsilon = 1e-5;
constexpr double kBnMomentum = 0.9;  // new = 0.9 * old + 0.1 * batch

std::size_t find_slice(const std::vector<Architecture::Slice>& lm, std::string_view name,
                       std::size_t* length = nullptr) {
  for (const auto& s : lm) {
    if (s.name == name) {
      if (length) *length = s.length;
      return s.offset;
    }
  }
  throw std::invalid_argument("unknown parameter slice: " + std::string(name));
}

// row-accumulator layout: each output row is built in a hot buffer with one
// store, instead of nine read-modify-write sweeps over the plane
void conv3x3_forward(const double* in, int B, int Cin, int H, int W, const double* w,
                     const double* bias, int Cout, double* out) {
  std::vector<double> rowbuf(W);
  double* const __restrict__ acc = rowbuf.data();
  for (int b = 0; b < B; ++b) {
    for (int oc = 0; oc < Cout; ++oc) {
      double* o = out + (static_cast<std::size_t>(b) * Cout + oc) * H * W;
      for (int y = 0; y < H; ++y) {
        std::fill(acc, acc + W, bias[oc]);
        for (int ic = 0; ic < Cin; ++ic) {
          const double* inp = in + (static_cast<std::size_t>(b) * Cin + ic) * H * W;
          const double* wk = w + (static_cast<std::size_t>(oc) * Cin + ic) * 9;
          for (int ky = 0; ky < 3; ++ky) {
            const int iy = y + ky - 1;
            if (iy < 0 || iy >= H) continue;
            const double* const __restrict__ irow = inp + static_cast<std::size_t>(iy) * W;
            const double w0 = wk[ky * 3 + 0];
            const double w1 = wk[ky * 3 + 1];
            const double w2 = wk[ky * 3 + 2];
            acc[0] += w1 * irow[0] + w2 * irow[1];
            for (int x = 1; x + 1 < W; ++x)
              acc[x] += w0 * irow[x - 1] + w1 * irow[x] + w2 * irow[x + 1];
            acc[W - 1] += w0 * irow[W - 2] + w1 * irow[W - 1];
          }
        }
        std::copy(acc, acc + W, o + static_cast<std::size_t>(y) * W);
      }
    }
  }
}

// Accumulates weight/bias gradients; optionally produces the input gradient.
void conv3x3_backward(const double* in, const double* dout, int B, int Cin, int H, int W,
                      const double* w, int Cout, double* dw, double* dbias, double* din) {
  for (int b = 0; b < B; ++b) {
    for (int oc = 0; oc < Cout; ++oc) {
      const double* do_ = dout + (static_cast<std::size_t>(b) * Cout + oc) * H * W;
      double acc = 0.0;
      for (std::size_t i = 0; i < static_cast<std::size_t>(H) * W; ++i) acc += do_[i];
      dbias[oc] += acc;
      for (int ic = 0; ic < Cin; ++ic) {
        const double* inp = in + (static_cast<std::size_t>(b) * Cin + ic) * H * W;
        double* const dwk = dw + (static_cast<std::size_t>(oc) * Cin + ic) * 9;
        for (int y = 0; y < H; ++y) {
          const double* const __restrict__ drow = do_ + static_cast<std::size_t>(y) * W;
          for (int ky = 0; ky < 3; ++ky) {
            const int iy = y + ky - 1;
            if (iy < 0 || iy >= H) continue;
            const double* const __restrict__ irow = inp + static_cast<std::size_t>(iy) * W;
            double a0 = 0.0, a1 = 0.0, a2 = 0.0;
            for (int x = 1; x + 1 < W; ++x) {
              a0 += drow[x] * irow[x - 1];
              a1 += drow[x] * irow[x];
              a2 += drow[x] * irow[x + 1];
            }
            a0 += drow[W - 1] * irow[W - 2];
            a1 += drow[0] * irow[0] + drow[W - 1] * irow[W - 1];
            a2 += drow[0] * irow[1];
            dwk[ky * 3 + 0] += a0;
            dwk[ky * 3 + 1] += a1;
            dwk[ky * 3 + 2] += a2;
          }
        }
      }
    }
  }
  if (!din) return;

  // input gradient: correlate the output gradient with the flipped kernel
  std::vector<double> rowbuf(W);
  double* const __restrict__ acc = rowbuf.data();
  for (int b = 0; b < B; ++b) {
    for (int ic = 0; ic < Cin; ++ic) {
      double* dip = din + (static_cast<std::size_t>(b) * Cin + ic) * H * W;
      for (int iy = 0; iy < H; ++iy) {
        std::fill(acc, acc + W, 0.0);
        for (int oc = 0; oc < Cout; ++oc) {
          const double* dop = dout + (static_cast<std::size_t>(b) * Cout + oc) * H * W;
          const double* wk = w + (static_cast<std::size_t>(oc) * Cin + ic) * 9;
          for (int ky = 0; ky < 3; ++ky) {
            const int y = iy - (ky - 1);
            if (y < 0 || y >= H) continue;
            const double* const __restrict__ drow = dop + static_cast<std::size_t>(y) * W;
            const double w0 = wk[ky * 3 + 0];
            const double w1 = wk[ky * 3 + 1];
            const double w2 = wk[ky * 3 + 2];
            acc[0] += w1 * drow[0] + w0 * drow[1];
            for (int ix = 1; ix + 1 < W; ++ix)
              acc[ix] += w2 * drow[ix - 1] + w1 * drow[ix] + w0 * drow[ix + 1];
            acc[W - 1] += w2 * drow[W - 2] + w1 * drow[W - 1];
          }
        }
        std::copy(acc, acc + W, dip + static_cast<std::size_t>(iy) * W);
      }
    }
  }
}

}  // namespace

void Architecture::validate() const {
  if (input_height <= 0 || input_width <= 0)
    throw std::invalid_argument("architecture: input size must be positive");
  if (conv_channels.empty())
    throw std::invalid_argument("architecture: at least one conv stage required");
  for (int c : conv_channels)
    if (c <= 0) throw std::invalid_argument("architecture: conv channels must be positive");
  const int k = static_cast<int>(conv_channels.size());
  if ((input_height % (1 << k)) != 0 || (input_width % (1 << k)) != 0)
    throw std::invalid_argument("architecture: input size must be divisible by 2^stages");
  if (embedding_dim <= 0)
    throw std::invalid_argument("architecture: embedding_dim must be positive");
  if (num_classes <= 1)
    throw std::invalid_argument("architecture: num_classes must be greater than 1");
}

int Architecture::feature_count() const {
  const int k = static_cast<int>(conv_channels.size());
  return conv_channels.back() * (input_height >> k) * (input_width >> k);
}

std::vector<Architecture::Slice> Architecture::layer_map() const {
  std::vector<Slice> lm;
  std::size_t off = 0;
  auto add = [&](std::string name, std::size_t len) {
    lm.push_back({std::move(name), off, len});
    off += len;
  };
  int cin = 1;
  for (std::size_t i = 0; i < conv_channels.size(); ++i) {
    const int co = conv_channels[i];
    const std::string idx = std::to_string(i + 1);
    add("conv" + idx + ".weight", static_cast<std::size_t>(co) * cin * 9);
    add("conv" + idx + ".bias", co);
    add("norm" + idx + ".scale", co);
    add("norm" + idx + ".shift", co);
    add("norm" + idx + ".mean", co);
    add("norm" + idx + ".var", co);
    cin = co;
  }
  const std::size_t feat = static_cast<std::size_t>(feature_count());
  add("head.embed.weight", static_cast<std::size_t>(embedding_dim) * feat);
  add("head.embed.bias", embedding_dim);
  add("head.logits.weight", static_cast<std::size_t>(num_classes) * embedding_dim);
  add("head.logits.bias", num_classes);
  return lm;
}

std::size_t Architecture::param_count() const {
  std::size_t n = 0;
  for (const auto& s : layer_map()) n += s.length;
  return n;
}

std::span<double> ParamVector::slice(std::string_view name) {
  const auto lm = arch.layer_map();
  std::size_t len = 0;
  const std::size_t off = find_slice(lm, name, &len);
  return {values.data() + off, len};
}

std::span<const double> ParamVector::slice(std::string_view name) const {
  const auto lm = arch.layer_map();
  std::size_t len = 0;
  const std::size_t off = find_slice(lm, name, &len);
  return {values.data() + off, len};
}

bool ParamVector::all_finite() const {
  for (double v : values)
    if (!std::isfinite(v)) return false;
  return true;
}

ParamVector init_params(const Architecture& arch, std::uint64_t seed) {
  arch.validate();
  ParamVector p{arch, std::vector<double>(arch.param_count(), 0.0)};
  Rng rng = derive_rng(seed, 0x1417u);  // init stream
  int cin = 1;
  for (std::size_t i = 0; i < arch.conv_channels.size(); ++i) {
    const int co = arch.conv_channels[i];
    const std::string idx = std::to_string(i + 1);
    const double std_w = std::sqrt(2.0 / (cin * 9));
    for (double& w : p.slice("conv" + idx + ".weight")) w = std_w * rng.normal();
    for (double& s : p.slice("norm" + idx + ".scale")) s = 1.0;
    for (double& v : p.slice("norm" + idx + ".var")) v = 1.0;
    cin = co;
  }
  const double std_e = std::sqrt(2.0 / arch.feature_count());
  for (double& w : p.slice("head.embed.weight")) w = std_e * rng.normal();
  const double std_h = std::sqrt(2.0 / arch.embedding_dim);
  for (double& w : p.slice("head.logits.weight")) w = std_h * rng.normal();
  return p;
}

struct ForwardCache {
  int count = 0;
  bool consumed = false;
  std::vector<double> input;  // B x 1 x H x W

  struct Stage {
    int channels = 0;
    int height = 0;  // pre-pool
    int width = 0;
    std::vector<double> xhat;
    std::vector<unsigned char> relu_mask;  // pre-ReLU value > 0
    std::vector<double> mean, var, inv_std;
    std::vector<int> pool_idx;     // flat argmax within the input plane
    std::vector<double> pool_out;  // B x C x H/2 x W/2
  };
  std::vector<Stage> stages;

  std::vector<double> raw_embedding;  // B x n
  std::vector<double> embedding;      // B x n
  std::vector<double> norms;          // B
};

ForwardResult forward(const ParamVector& params, const ImageBatch& batch, RunMode mode) {
  const Architecture& arch = params.arch;
  arch.validate();
  if (params.values.size() != arch.param_count())
    throw std::invalid_argument("parameter vector length does not match architecture");
  if (batch.count <= 0)
    throw std::invalid_argument("forward: batch must contain at least one image");
  if (batch.height != arch.input_height || batch.width != arch.input_width)
    throw std::invalid_argument(
        "forward: batch shape " + std::to_string(batch.height) + "x" +
        std::to_string(batch.width) + " does not match architecture input " +
        std::to_string(arch.input_height) + "x" + std::to_string(arch.input_width));
  if (batch.pixels.size() !=
      static_cast<std::size_t>(batch.count) * batch.height * batch.width)
    throw std::invalid_argument("forward: pixel buffer size does not match batch shape");

  const int B = batch.count;
  const int n = arch.embedding_dim;
  const int M = arch.num_classes;
  const bool train = mode == RunMode::Train;

  auto cache = std::make_shared<ForwardCache>();
  cache->count = B;
  if (train) cache->input = batch.pixels;

  ForwardResult out;
  out.count = B;

  std::vector<double> cur = batch.pixels;
  int cin = 1, H = arch.input_height, W = arch.input_width;
  for (std::size_t si = 0; si < arch.conv_channels.size(); ++si) {
    const int co = arch.conv_channels[si];
    const std::string idx = std::to_string(si + 1);
    const auto wconv = params.slice("conv" + idx + ".weight");
    const auto bconv = params.slice("conv" + idx + ".bias");
    const auto scale = params.slice("norm" + idx + ".scale");
    const auto shift = params.slice("norm" + idx + ".shift");
    const auto rmean = params.slice("norm" + idx + ".mean");
    const auto rvar = params.slice("norm" + idx + ".var");

    std::vector<double> conv_out(static_cast<std::size_t>(B) * co * H * W);
    conv3x3_forward(cur.data(), B, cin, H, W, wconv.data(), bconv.data(), co,
                    conv_out.data());

    const std::size_t plane = static_cast<std::size_t>(H) * W;
    const int Hp = H / 2, Wp = W / 2;
    const std::size_t oplane = static_cast<std::size_t>(Hp) * Wp;
    std::vector<double> pool_out(static_cast<std::size_t>(B) * co * oplane);

    if (train) {
      // batch statistics per channel
      const double m_count = static_cast<double>(B) * plane;
      std::vector<double> mean(co, 0.0), var(co, 0.0), inv_std(co, 0.0);
      for (int c = 0; c < co; ++c) {
        double s = 0.0;
        for (int b = 0; b < B; ++b) {
          const double* p = conv_out.data() + (static_cast<std::size_t>(b) * co + c) * plane;
          for (std::size_t i = 0; i < plane; ++i) s += p[i];
        }
        mean[c] = s / m_count;
        double sv = 0.0;
        for (int b = 0; b < B; ++b) {
          const double* p = conv_out.data() + (static_cast<std::size_t>(b) * co + c) * plane;
          for (std::size_t i = 0; i < plane; ++i) {
            const double d = p[i] - mean[c];
            sv += d * d;
          }
        }
        var[c] = sv / m_count;
        inv_std[c] = 1.0 / std::sqrt(var[c] + kBnEpsilon);
      }

      std::vector<double> xhat(conv_out.size());
      std::vector<unsigned char> relu_mask(conv_out.size());
      std::vector<int> pool_idx(pool_out.size());
      for (int b = 0; b < B; ++b) {
        for (int c = 0; c < co; ++c) {
          const std::size_t base = (static_cast<std::size_t>(b) * co + c) * plane;
          const double mu = mean[c], is = inv_std[c], g = scale[c], be = shift[c];
          for (std::size_t i = 0; i < plane; ++i)
            xhat[base + i] = (conv_out[base + i] - mu) * is;
          const std::size_t obase = (static_cast<std::size_t>(b) * co + c) * oplane;
          for (int y = 0; y < Hp; ++y) {
            for (int x = 0; x < Wp; ++x) {
              double best = -1.0;  // ReLU output is >= 0, so -1 loses to everything
              int best_i = 0;
              for (int py = 0; py < 2; ++py) {
                for (int px = 0; px < 2; ++px) {
                  const std::size_t ii = static_cast<std::size_t>(2 * y + py) * W + 2 * x + px;
                  const double bn = g * xhat[base + ii] + be;
                  relu_mask[base + ii] = bn > 0.0;
                  const double v = bn > 0.0 ? bn : 0.0;
                  if (v > best) {
                    best = v;
                    best_i = static_cast<int>(ii);
                  }
                }
              }
              pool_out[obase + static_cast<std::size_t>(y) * Wp + x] = best;
              pool_idx[obase + static_cast<std::size_t>(y) * Wp + x] = best_i;
            }
          }
        }
      }

      ForwardCache::Stage st;
      st.channels = co;
      st.height = H;
      st.width = W;
      st.xhat = std::move(xhat);
      st.relu_mask = std::move(relu_mask);
      st.mean = mean;
      st.var = var;
      st.inv_std = inv_std;
      st.pool_idx = std::move(pool_idx);
      st.pool_out = pool_out;
      cache->stages.push_back(std::move(st));

      // proposed momentum update of the running statistics
      for (int c = 0; c < co; ++c)
        out.running_stat_update.push_back(kBnMomentum * rmean[c] +
                                          (1.0 - kBnMomentum) * mean[c]);
      for (int c = 0; c < co; ++c)
        out.running_stat_update.push_back(kBnMomentum * rvar[c] +
                                          (1.0 - kBnMomentum) * var[c]);
    } else {
      // eval: running statistics, normalization/ReLU/pool fused in one pass
      for (int b = 0; b < B; ++b) {
        for (int c = 0; c < co; ++c) {
          const std::size_t base = (static_cast<std::size_t>(b) * co + c) * plane;
          const std::size_t obase = (static_cast<std::size_t>(b) * co + c) * oplane;
          const double mu = rmean[c];
          const double is = 1.0 / std::sqrt(rvar[c] + kBnEpsilon);
          const double g = scale[c], be = shift[c];
          for (int y = 0; y < Hp; ++y) {
            for (int x = 0; x < Wp; ++x) {
              double best = -1.0;
              for (int py = 0; py < 2; ++py) {
                for (int px = 0; px < 2; ++px) {
                  const std::size_t ii = static_cast<std::size_t>(2 * y + py) * W + 2 * x + px;
                  const double bn = g * (conv_out[base + ii] - mu) * is + be;
                  const double v = bn > 0.0 ? bn : 0.0;
                  if (v > best) best = v;
                }
              }
              pool_out[obase + static_cast<std::size_t>(y) * Wp + x] = best;
            }
          }
        }
      }
    }

    cur = std::move(pool_out);
    cin = co;
    H = Hp;
    W = Wp;
  }

  // features -> raw embedding -> normalized embedding, plus class logits
  const int F = arch.feature_count();
  const auto we = params.slice("head.embed.weight");
  const auto be = params.slice("head.embed.bias");
  const auto wh = params.slice("head.logits.weight");
  const auto bh = params.slice("head.logits.bias");

  out.raw_embedding.assign(static_cast<std::size_t>(B) * n, 0.0);
  out.embedding.assign(static_cast<std::size_t>(B) * n, 0.0);
  out.logits.assign(static_cast<std::size_t>(B) * M, 0.0);
  std::vector<double> norms(B, 0.0);

  for (int b = 0; b < B; ++b) {
    const double* f = cur.data() + static_cast<std::size_t>(b) * F;
    double* u = out.raw_embedding.data() + static_cast<std::size_t>(b) * n;
    for (int j = 0; j < n; ++j) {
      double acc = be[j];
      const double* wrow = we.data() + static_cast<std::size_t>(j) * F;
      for (int k = 0; k < F; ++k) acc += wrow[k] * f[k];
      u[j] = acc;
    }
    double sq = 0.0;
    for (int j = 0; j < n; ++j) sq += u[j] * u[j];
    const double r = std::sqrt(sq);
    norms[b] = r;
    double* e = out.embedding.data() + static_cast<std::size_t>(b) * n;
    if (r > kNormalizeEpsilon) {
      for (int j = 0; j < n; ++j) e[j] = u[j] / r;
    }  // else: zero embedding by the epsilon guard
    double* lg = out.logits.data() + static_cast<std::size_t>(b) * M;
    for (int m = 0; m < M; ++m) {
      double acc = bh[m];
      const double* wrow = wh.data() + static_cast<std::size_t>(m) * n;
      for (int j = 0; j < n; ++j) acc += wrow[j] * u[j];
      lg[m] = acc;
    }
  }

  if (train) {
    cache->raw_embedding = out.raw_embedding;
    cache->embedding = out.embedding;
    cache->norms = std::move(norms);
    out.cache = std::move(cache);
  }
  return out;
}

void commit_running_stats(ParamVector& params, const ForwardResult& result) {
  if (result.running_stat_update.empty()) return;
  std::size_t pos = 0;
  for (std::size_t si = 0; si < params.arch.conv_channels.size(); ++si) {
    const std::string idx = std::to_string(si + 1);
    for (double& v : params.slice("norm" + idx + ".mean"))
      v = result.running_stat_update[pos++];
    for (double& v : params.slice("norm" + idx + ".var"))
      v = result.running_stat_update[pos++];
  }
}

std::vector<double> backward(const ParamVector& params, ForwardCache& cache,
                             const std::vector<double>& grad_logits,
                             const std::vector<double>& grad_embedding) {
  const Architecture& arch = params.arch;
  if (cache.consumed)
    throw std::logic_error("backward: forward cache already consumed; run forward again");
  cache.consumed = true;

  const int B = cache.count;
  const int n = arch.embedding_dim;
  const int M = arch.num_classes;
  const int F = arch.feature_count();
  if (!grad_logits.empty() && grad_logits.size() != static_cast<std::size_t>(B) * M)
    throw std::invalid_argument("backward: grad_logits has wrong size");
  if (!grad_embedding.empty() && grad_embedding.size() != static_cast<std::size_t>(B) * n)
    throw std::invalid_argument("backward: grad_embedding has wrong size");

  std::vector<double> grad(params.values.size(), 0.0);
  const auto lm = arch.layer_map();
  auto gslice = [&](std::string_view name) {
    std::size_t len = 0;
    const std::size_t off = find_slice(lm, name, &len);
    return std::span<double>(grad.data() + off, len);
  };

  const auto wh = params.slice("head.logits.weight");
  const auto we = params.slice("head.embed.weight");
  auto dwh = gslice("head.logits.weight");
  auto dbh = gslice("head.logits.bias");
  auto dwe = gslice("head.embed.weight");
  auto dbe = gslice("head.embed.bias");

  // gradient w.r.t. the raw embedding: classifier path + normalization path
  std::vector<double> du(static_cast<std::size_t>(B) * n, 0.0);
  if (!grad_logits.empty()) {
    for (int b = 0; b < B; ++b) {
      const double* u = cache.raw_embedding.data() + static_cast<std::size_t>(b) * n;
      const double* gl = grad_logits.data() + static_cast<std::size_t>(b) * M;
      double* dub = du.data() + static_cast<std::size_t>(b) * n;
      for (int m = 0; m < M; ++m) {
        const double g = gl[m];
        if (g == 0.0) continue;
        const double* wrow = wh.data() + static_cast<std::size_t>(m) * n;
        double* dwrow = dwh.data() + static_cast<std::size_t>(m) * n;
        for (int j = 0; j < n; ++j) {
          dwrow[j] += g * u[j];
          dub[j] += g * wrow[j];
        }
        dbh[m] += g;
      }
    }
  }
  if (!grad_embedding.empty()) {
    for (int b = 0; b < B; ++b) {
      const double r = cache.norms[b];
      if (r <= kNormalizeEpsilon) continue;  // zero embedding: no gradient flows
      const double* e = cache.embedding.data() + static_cast<std::size_t>(b) * n;
      const double* ge = grad_embedding.data() + static_cast<std::size_t>(b) * n;
      double dot = 0.0;
      for (int j = 0; j < n; ++j) dot += e[j] * ge[j];
      double* dub = du.data() + static_cast<std::size_t>(b) * n;
      for (int j = 0; j < n; ++j) dub[j] += (ge[j] - e[j] * dot) / r;
    }
  }

  // embed layer: features were the last stage's pooled output
  const std::vector<double>& feat = cache.stages.back().pool_out;
  std::vector<double> dfeat(static_cast<std::size_t>(B) * F, 0.0);
  for (int b = 0; b < B; ++b) {
    const double* f = feat.data() + static_cast<std::size_t>(b) * F;
    const double* dub = du.data() + static_cast<std::size_t>(b) * n;
    double* dfb = dfeat.data() + static_cast<std::size_t>(b) * F;
    for (int j = 0; j < n; ++j) {
      const double g = dub[j];
      if (g == 0.0) continue;
      const double* wrow = we.data() + static_cast<std::size_t>(j) * F;
      double* dwrow = dwe.data() + static_cast<std::size_t>(j) * F;
      for (int k = 0; k < F; ++k) {
        dwrow[k] += g * f[k];
        dfb[k] += g * wrow[k];
      }
      dbe[j] += g;
    }
  }

  // walk the conv stages backwards
  std::vector<double> dpool = std::move(dfeat);
  for (int si = static_cast<int>(cache.stages.size()) - 1; si >= 0; --si) {
    const auto& st = cache.stages[si];
    const std::string idx = std::to_string(si + 1);
    const int C = st.channels, H = st.height, W = st.width;
    const std::size_t plane = static_cast<std::size_t>(H) * W;
    const std::size_t oplane = plane / 4;

    // max-pool scatter, then ReLU mask
    std::vector<double> dbn(static_cast<std::size_t>(B) * C * plane, 0.0);
    for (int b = 0; b < B; ++b) {
      for (int c = 0; c < C; ++c) {
        const std::size_t ob = (static_cast<std::size_t>(b) * C + c) * oplane;
        const std::size_t ib = (static_cast<std::size_t>(b) * C + c) * plane;
        for (std::size_t i = 0; i < oplane; ++i) {
          const double g = dpool[ob + i];
          if (g != 0.0) dbn[ib + st.pool_idx[ob + i]] += g;
        }
      }
    }
    for (std::size_t i = 0; i < dbn.size(); ++i)
      if (!st.relu_mask[i]) dbn[i] = 0.0;

    // normalization backward (through the batch statistics)
    const auto scale = params.slice("norm" + idx + ".scale");
    auto dscale = gslice("norm" + idx + ".scale");
    auto dshift = gslice("norm" + idx + ".shift");
    const double m_count = static_cast<double>(B) * plane;
    std::vector<double> dconv(dbn.size());
    for (int c = 0; c < C; ++c) {
      double sum_dy = 0.0, sum_dy_xhat = 0.0;
      for (int b = 0; b < B; ++b) {
        const std::size_t base = (static_cast<std::size_t>(b) * C + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          sum_dy += dbn[base + i];
          sum_dy_xhat += dbn[base + i] * st.xhat[base + i];
        }
      }
      dscale[c] += sum_dy_xhat;
      dshift[c] += sum_dy;
      const double g_is = scale[c] * st.inv_std[c];
      const double mdy = sum_dy / m_count;
      const double mdyx = sum_dy_xhat / m_count;
      for (int b = 0; b < B; ++b) {
        const std::size_t base = (static_cast<std::size_t>(b) * C + c) * plane;
        for (std::size_t i = 0; i < plane; ++i)
          dconv[base + i] = g_is * (dbn[base + i] - mdy - st.xhat[base + i] * mdyx);
      }
    }

    // conv backward; the image gradient is not needed below stage 1
    const int cin = si == 0 ? 1 : cache.stages[si - 1].channels;
    const double* stage_in =
        si == 0 ? cache.input.data() : cache.stages[si - 1].pool_out.data();
    const auto wconv = params.slice("conv" + idx + ".weight");
    auto dwconv = gslice("conv" + idx + ".weight");
    auto dbconv = gslice("conv" + idx + ".bias");
    std::vector<double> din;
    if (si > 0) din.assign(static_cast<std::size_t>(B) * cin * plane, 0.0);
    conv3x3_backward(stage_in, dconv.data(), B, cin, H, W, wconv.data(), C,
                     dwconv.data(), dbconv.data(), si > 0 ? din.data() : nullptr);
    dpool = std::move(din);
  }
  return grad;
}

std::uint64_t activation_signature(const ForwardCache& cache) {
  std::uint64_t h = 0x9E3779B97F4A7C15ull;
  auto mix = [&h](std::uint64_t v) {
    h ^= v + 0x9E3779B97F4A7C15ull + (h << 6) + (h >> 2);
    h *= 0xBF58476D1CE4E5B9ull;
    h ^= h >> 29;
  };
  for (const auto& st : cache.stages) {
    std::uint64_t word = 0;
    int filled = 0;
    for (unsigned char m : st.relu_mask) {
      word = (word << 1) | m;
      if (++filled == 64) {
        mix(word);
        word = 0;
        filled = 0;
      }
    }
    mix(word);
    for (int idx : st.pool_idx) mix(static_cast<std::uint64_t>(idx));
  }
  return h;
}

void adam_step(AdamState& state, ParamVector& params, const std::vector<double>& grads) {
  const std::size_t N = params.values.size();
  if (grads.size() != N)
    throw std::invalid_argument("adam_step: gradient length does not match parameters");
  if (state.m.size() != N || state.v.size() != N)
    throw std::invalid_argument("adam_step: optimizer state length does not match parameters");
  for (std::size_t i = 0; i < N; ++i)
    if (!std::isfinite(grads[i]))
      throw std::runtime_error("adam_step: non-finite gradient at index " +
                               std::to_string(i));
  state.t += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < N; ++i) {
    const double g = grads[i];
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    params.values[i] -= state.lr * mhat / (std::sqrt(vhat) + state.epsilon);
  }
  for (std::size_t i = 0; i < N; ++i)
    if (!std::isfinite(params.values[i]))
      throw std::runtime_error("adam_step: parameters became non-finite at index " +
                               std::to_string(i));
}

}  // namespace psfed
