#pragma once

// Proxy-tuning: steer a base model at decode time by the logit difference
// between a tuned expert and its untuned counterpart,
//   out = base + (tuned - untuned).

#include <span>
#include <vector>

#include "tracetrust/toylm.hpp"

namespace tracetrust {

/// Pre-softmax scores over a shared vocabulary, held in double so the
/// combination of float logits is exact in the identity cases.
using LogitVector = std::vector<double>;

/// Throws ArgumentError on length mismatch or non-finite entries.
LogitVector proxy_combine(std::span<const double> base, std::span<const double> tuned,
                          std::span<const double> untuned);

/// Index of the largest entry; the lowest index wins ties.
std::size_t argmax(std::span<const double> logits);

/// Greedy decoding on the combined final-position logits of the three
/// models. All three must share vocab_size.
toylm::Sequence proxy_generate(const toylm::ToyLmCheckpoint& base, const toylm::ToyLmCheckpoint& tuned,
                               const toylm::ToyLmCheckpoint& untuned, std::span<const toylm::Token> prompt,
                               std::size_t n_steps);

}  // namespace tracetrust
