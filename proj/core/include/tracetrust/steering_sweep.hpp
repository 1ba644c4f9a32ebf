#pragma once

// Intervention-strength sweep on the toy model: steered-layer probe score
// and perplexity for each alpha, with a perplexity ceiling relative to the
// unsteered baseline.

#include <span>
#include <vector>

#include "tracetrust/probes.hpp"
#include "tracetrust/steering.hpp"
#include "tracetrust/toylm.hpp"

namespace tracetrust {

struct StrengthSweepConfig {
  std::size_t generation_steps = 8;
  /// Rows whose perplexity exceeds factor * baseline perplexity are flagged.
  double ppl_ceiling_factor = 1.5;
};

struct StrengthRow {
  double alpha = 0.0;
  double mean_probe_score = 0.0;
  double perplexity = 0.0;
  bool exceeds_ceiling = false;
};

struct StrengthSweep {
  double baseline_probe_score = 0.0;
  double baseline_perplexity = 0.0;
  double ppl_ceiling = 0.0;
  std::vector<StrengthRow> rows;  // ordered by alpha, duplicates kept
};

/// Mean probe logit of the last-token residual at `layer` after greedy
/// generation from each prompt, with the optional intervention active during
/// generation and the final capture.
double steered_probe_score(const toylm::ToyLmCheckpoint& ckpt, std::span<const toylm::Sequence> prompts,
                           std::uint64_t layer, const ProbeModel& probe, std::size_t generation_steps,
                           const InterventionSpec* intervention);

/// For each alpha, copies `spec_template` with that alpha and reports the
/// steered probe score and steered perplexity on `ppl_corpus`.
StrengthSweep strength_sweep(const toylm::ToyLmCheckpoint& ckpt, const InterventionSpec& spec_template,
                             std::span<const double> alphas, std::span<const toylm::Sequence> eval_prompts,
                             const ProbeModel& probe, std::span<const toylm::Sequence> ppl_corpus,
                             const StrengthSweepConfig& config = {});

}  // namespace tracetrust
