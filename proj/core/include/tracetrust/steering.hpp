#pragma once

// Mass-mean steering vectors and the additive residual-stream intervention
//   h' = h + alpha * v,   v = mean(A[positives]) - mean(A[negatives]).

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "tracetrust/actv.hpp"

namespace tracetrust {

struct SteeringVector {
  std::vector<double> direction;
  std::uint64_t layer = 0;
  std::string source_checkpoint;
  std::size_t n_positive = 0;
  std::size_t n_negative = 0;

  std::size_t dimension() const { return direction.size(); }
};

struct InterventionSpec {
  SteeringVector vector;
  double alpha = 0.0;
  std::uint64_t layer = 0;
};

/// Centroid difference of two row sets, accumulated in double. Layer and
/// source checkpoint are taken from the positives' meta.
SteeringVector mass_mean_vector(const ActivationDataset& positives, const ActivationDataset& negatives);

/// Splits one labelled dataset by label (1 = positive) and takes the
/// centroid difference.
SteeringVector mass_mean_vector(const ActivationDataset& labelled);

/// h + alpha * direction. alpha == 0 returns h unchanged, bitwise.
std::vector<double> apply_intervention(std::span<const double> h, const InterventionSpec& spec);

/// In-place form on a float residual stream; each coordinate is computed as
/// float(double(h) + alpha * direction). Skipped entirely when alpha == 0.
void apply_intervention_inplace(std::span<float> h, const InterventionSpec& spec);

/// Writes <stem>.actv (one row, f32) and <stem>.json sidecar
/// {layer, source_checkpoint, n_positive, n_negative}.
void save_steering_vector(const SteeringVector& vector, const std::filesystem::path& stem);
/// Accepts the stem, the .actv path or the .json path.
SteeringVector load_steering_vector(const std::filesystem::path& path);

}  // namespace tracetrust
