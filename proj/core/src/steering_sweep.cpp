#include "tracetrust/steering_sweep.hpp"

#include <algorithm>

#include "tracetrust/errors.hpp"
#include "tracetrust/parallel.hpp"

namespace tracetrust {

double steered_probe_score(const toylm::ToyLmCheckpoint& ckpt, std::span<const toylm::Sequence> prompts,
                           std::uint64_t layer, const ProbeModel& probe, std::size_t generation_steps,
                           const InterventionSpec* intervention) {
  if (prompts.empty()) throw ArgumentError("no evaluation prompts");
  if (probe.dimension() != ckpt.config.d_model) {
    throw ArgumentError("probe dimension does not match the model hidden size");
  }
  const toylm::CaptureRequest capture{layer};
  std::vector<double> scores(prompts.size());
  parallel_for(prompts.size(), [&](std::size_t i) {
    const toylm::Sequence text = toylm::generate(ckpt, prompts[i], generation_steps, intervention);
    const auto result = toylm::forward(ckpt, text, std::span(&capture, 1), intervention);
    scores[i] = probe.logit(result.captures[0]);
  });
  double sum = 0.0;
  for (const double s : scores) sum += s;
  return sum / static_cast<double>(scores.size());
}

StrengthSweep strength_sweep(const toylm::ToyLmCheckpoint& ckpt, const InterventionSpec& spec_template,
                             std::span<const double> alphas, std::span<const toylm::Sequence> eval_prompts,
                             const ProbeModel& probe, std::span<const toylm::Sequence> ppl_corpus,
                             const StrengthSweepConfig& config) {
  if (alphas.empty()) throw ArgumentError("strength sweep needs at least one alpha");
  if (spec_template.vector.dimension() != ckpt.config.d_model) {
    throw ArgumentError("steering vector dimension does not match the model hidden size");
  }
  if (!(config.ppl_ceiling_factor > 0.0)) throw ArgumentError("perplexity ceiling factor must be positive");

  StrengthSweep sweep;
  sweep.baseline_probe_score =
      steered_probe_score(ckpt, eval_prompts, spec_template.layer, probe, config.generation_steps, nullptr);
  sweep.baseline_perplexity = toylm::perplexity(ckpt, ppl_corpus);
  sweep.ppl_ceiling = config.ppl_ceiling_factor * sweep.baseline_perplexity;

  std::vector<double> sorted(alphas.begin(), alphas.end());
  std::stable_sort(sorted.begin(), sorted.end());
  for (const double alpha : sorted) {
    InterventionSpec spec = spec_template;
    spec.alpha = alpha;
    StrengthRow row;
    row.alpha = alpha;
    row.mean_probe_score =
        steered_probe_score(ckpt, eval_prompts, spec.layer, probe, config.generation_steps, &spec);
    row.perplexity = toylm::perplexity(ckpt, ppl_corpus, &spec);
    row.exceeds_ceiling = row.perplexity > sweep.ppl_ceiling;
    sweep.rows.push_back(row);
  }
  return sweep;
}

}  // namespace tracetrust
