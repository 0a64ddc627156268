#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace psfed {

// Embedding network: per conv stage 3x3/pad-1 convolution, per-channel
// feature normalization, ReLU, 2x2 max-pool; then a fully connected
// projection to the embedding and a linear classifier on top of it.
// Parameter layout is a flat vector of named slices; the normalization
// running statistics live in the vector as non-trained slices so that
// aggregation and checkpointing cover the full model state.
struct Architecture {
  int input_height = 32;
  int input_width = 32;
  std::vector<int> conv_channels{8, 16};
  int embedding_dim = 64;
  int num_classes = 0;

  struct Slice {
    std::string name;
    std::size_t offset = 0;
    std::size_t length = 0;
  };

  void validate() const;  // throws std::invalid_argument
  std::vector<Slice> layer_map() const;
  std::size_t param_count() const;
  int feature_count() const;  // flattened features entering the embed layer

  bool operator==(const Architecture& o) const {
    return input_height == o.input_height && input_width == o.input_width &&
           conv_channels == o.conv_channels && embedding_dim == o.embedding_dim &&
           num_classes == o.num_classes;
  }
};

struct ParamVector {
  Architecture arch;
  std::vector<double> values;

  std::span<double> slice(std::string_view name);
  std::span<const double> slice(std::string_view name) const;
  bool all_finite() const;
};

// He-style fan-in Gaussian weights, zero biases, normalization scale 1 /
// shift 0, running mean 0 / variance 1. Deterministic per (arch, seed).
ParamVector init_params(const Architecture& arch, std::uint64_t seed);

struct ImageBatch {
  int count = 0;
  int height = 0;
  int width = 0;
  std::vector<double> pixels;  // count * height * width, row-major
};

enum class RunMode { Train, Eval };

struct ForwardCache;  // defined in model.cpp, holds activations for backward

struct ForwardResult {
  int count = 0;
  std::vector<double> logits;         // count x num_classes
  std::vector<double> raw_embedding;  // count x embedding_dim
  std::vector<double> embedding;      // count x embedding_dim, unit rows (or zero)
  std::shared_ptr<ForwardCache> cache;        // train mode only
  std::vector<double> running_stat_update;    // train mode: proposed new stats
};

// Train mode normalizes with batch statistics and reports the momentum
// update of the running statistics in `running_stat_update` (it does not
// write to `params`); eval mode uses the stored running statistics and is
// side-effect free. Throws on a batch whose shape disagrees with the
// architecture.
ForwardResult forward(const ParamVector& params, const ImageBatch& batch, RunMode mode);

// Applies the running-statistic update proposed by a train-mode forward.
void commit_running_stats(ParamVector& params, const ForwardResult& result);

// Gradient of gl . logits + ge . embedding w.r.t. every parameter.
// Either gradient input may be empty; they are summed through the shared
// trunk. The cache is single-use: a second call on the same cache throws.
std::vector<double> backward(const ParamVector& params, ForwardCache& cache,
                             const std::vector<double>& grad_logits,
                             const std::vector<double>& grad_embedding);

// Hash of the discrete activation decisions (ReLU signs, pool argmax) in a
// train-mode cache. Finite-difference probes compare signatures at the
// stencil ends to recognize non-differentiable points.
std::uint64_t activation_signature(const ForwardCache& cache);

struct AdamState {
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::int64_t t = 0;
  std::vector<double> m;
  std::vector<double> v;

  AdamState() = default;
  AdamState(std::size_t n, double learning_rate)
      : lr(learning_rate), m(n, 0.0), v(n, 0.0) {}
};

// One bias-corrected Adam update. Rejects non-finite gradients and aborts
// if the updated parameters stop being finite.
void adam_step(AdamState& state, ParamVector& params, const std::vector<double>& grads);

// The epsilon below which a raw embedding is treated as the zero vector.
inline constexpr double kNormalizeEpsilon = 1e-12;

}  // namespace psfed
