#pragma once

// Shared between the forward, training and persistence translation units.

#include <span>
#include <vector>

#include "tracetrust/toylm.hpp"

namespace tracetrust::toylm::detail {

template <typename P>
struct BlockWeights {
  P ln1_g, ln1_b, wq, wk, wv, wo, ln2_g, ln2_b, w1, b1, w2, b2;
};

template <typename P>
struct Weights {
  P tok_emb, pos_emb;
  std::vector<BlockWeights<P>> blocks;
  P lnf_g, lnf_b;
};

using ConstWeights = Weights<const float*>;
using MutableWeights = Weights<float*>;

/// Contiguous storage in parameter_layout order.
struct FlatParameters {
  std::vector<float> values;
  std::vector<std::size_t> offsets;  // one per layout entry
};

FlatParameters flatten(const ToyLmCheckpoint& ckpt);
ParameterMap unflatten(const ToyLmConfig& config, std::span<const float> values);

ConstWeights bind(const ToyLmConfig& config, const float* flat);
MutableWeights bind_mutable(const ToyLmConfig& config, float* flat);
ConstWeights bind(const ToyLmCheckpoint& ckpt);

/// Activations kept for the backward pass of one sequence.
struct BlockCache {
  std::vector<float> x_in, xhat1, rstd1, a, q, k, v, probs, att, x_mid, xhat2, rstd2, m, u, g;
};

struct ForwardCache {
  std::size_t length = 0;
  std::vector<float> x0;  // embedding output (after any layer-0 intervention)
  std::vector<BlockCache> blocks;
  std::vector<float> x_final, xhatf, rstdf, f;
  std::vector<float> logits;  // length x vocab, or 1 x vocab when only the last row is requested
};

struct ForwardOptions {
  bool all_logits = false;
  std::span<const CaptureRequest> captures;
  const InterventionSpec* intervention = nullptr;
  std::vector<std::vector<float>>* captured = nullptr;
};

void check_tokens(const ToyLmConfig& config, std::span<const Token> tokens);

void forward_pass(const ToyLmConfig& config, const ConstWeights& w, std::span<const Token> tokens,
                  const ForwardOptions& options, ForwardCache& cache);

/// Accumulates gradients of scale * sum_t CE(t) into `grad`, given a cache
/// produced with all_logits = true. Returns the summed cross-entropy.
double backward_pass(const ToyLmConfig& config, const ConstWeights& w, std::span<const Token> tokens,
                     std::span<const Token> targets, const ForwardCache& cache, double scale,
                     const MutableWeights& grad);

}  // namespace tracetrust::toylm::detail
