#pragma once

// Linear probes: L2-regularised logistic regression on standardised
// activations, and the checkpoint x layer probing sweep.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tracetrust/actv.hpp"
#include "tracetrust/datasets.hpp"

namespace tracetrust {

struct ProbeConfig {
  double l2_penalty = 1e-3;
  int max_iterations = 2000;
  double gradient_tolerance = 1e-6;
  /// Fixed gradient-descent step. Zero selects 1 / L, where L bounds the
  /// curvature of the objective on the training set.
  double step_size = 0.0;
  bool standardize = true;
};

struct ProbeModel {
  std::vector<double> weights;
  double bias = 0.0;
  std::vector<double> feature_mean;
  std::vector<double> feature_scale;
  int iterations = 0;
  double final_gradient_norm = 0.0;

  std::size_t dimension() const { return weights.size(); }
  /// Affine score on the standardised features.
  double logit(std::span<const float> x) const;
  /// Class 1 when sigmoid(logit) >= 0.5, i.e. logit >= 0.
  int predict(std::span<const float> x) const { return logit(x) >= 0.0 ? 1 : 0; }
};

/// Full-batch gradient descent from zero weights; deterministic for a given
/// dataset and config. Throws ArgumentError on a single-class training set.
ProbeModel fit_probe(const ActivationDataset& train, const ProbeConfig& config = {});

/// Fraction of rows whose predicted class equals the label.
double probe_accuracy(const ProbeModel& model, const ActivationDataset& data);

struct ProbeReport {
  SweepKey key;
  double test_accuracy = 0.0;
  double train_accuracy = 0.0;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  std::uint64_t seed = 0;
};

/// Evaluates on `test`; the key comes from the dataset meta and train fields
/// are left zero. Throws ArgumentError on dimension mismatch.
ProbeReport eval_probe(const ProbeModel& model, const ActivationDataset& test);

/// Splits, fits on the train indices and evaluates on the test indices.
ProbeReport train_and_evaluate(const ActivationDataset& data, const SplitPlan& split, const ProbeConfig& config);

struct SweepOutcome {
  SweepKey key;
  std::optional<ProbeReport> report;
  std::string error;  // set when report is empty

  bool ok() const { return report.has_value(); }
};

/// One outcome per entry, in entry order. Each dataset is split with
/// make_split(scheme, n, seed); per-key failures are recorded, never thrown.
std::vector<SweepOutcome> probe_sweep(std::span<const ManifestEntry> entries, SplitScheme scheme,
                                      const ProbeConfig& config, std::uint64_t seed);

/// CSV columns: checkpoint_id,layer,test_accuracy,train_accuracy,n_train,n_test,seed.
/// Failed outcomes are omitted.
void write_sweep_csv(std::span<const SweepOutcome> outcomes, std::ostream& out);

}  // namespace tracetrust
