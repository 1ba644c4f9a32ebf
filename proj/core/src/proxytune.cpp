#include "tracetrust/proxytune.hpp"

#include <cmath>

#include "tracetrust/errors.hpp"

namespace tracetrust {

LogitVector proxy_combine(std::span<const double> base, std::span<const double> tuned,
                          std::span<const double> untuned) {
  if (base.size() != tuned.size() || base.size() != untuned.size()) {
    throw ArgumentError("proxy_combine inputs differ in vocabulary size");
  }
  LogitVector out(base.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!std::isfinite(base[i]) || !std::isfinite(tuned[i]) || !std::isfinite(untuned[i])) {
      throw ArgumentError("proxy_combine inputs must be finite");
    }
    out[i] = base[i] + (tuned[i] - untuned[i]);
  }
  return out;
}

std::size_t argmax(std::span<const double> logits) {
  if (logits.empty()) throw ArgumentError("argmax of an empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i) {
    if (logits[i] > logits[best]) best = i;
  }
  return best;
}

toylm::Sequence proxy_generate(const toylm::ToyLmCheckpoint& base, const toylm::ToyLmCheckpoint& tuned,
                               const toylm::ToyLmCheckpoint& untuned, std::span<const toylm::Token> prompt,
                               std::size_t n_steps) {
  if (base.config.vocab_size != tuned.config.vocab_size || base.config.vocab_size != untuned.config.vocab_size) {
    throw ArgumentError("proxy-tuning models must share vocab_size");
  }
  auto logits_of = [](const toylm::ToyLmCheckpoint& m, std::span<const toylm::Token> seq) {
    const auto r = toylm::forward(m, seq);
    return LogitVector(r.logits.begin(), r.logits.end());
  };
  toylm::Sequence seq(prompt.begin(), prompt.end());
  for (std::size_t i = 0; i < n_steps; ++i) {
    const LogitVector combined = proxy_combine(logits_of(base, seq), logits_of(tuned, seq), logits_of(untuned, seq));
    seq.push_back(static_cast<toylm::Token>(argmax(combined)));
  }
  return seq;
}

}  // namespace tracetrust
