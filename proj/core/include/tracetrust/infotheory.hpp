#pragma once

// HSIC dependence estimates as a mutual-information proxy, the I(T,X) /
// I(T,Y) sweep over checkpoints, fitting/compression phase detection and
// Pearson correlation.
//
// Estimator: HSIC(X, Y) = tr(K_X H K_Y H) / (n - 1)^2 with the Gaussian
// kernel k(a, b) = exp(-|a - b|^2 / (2 sigma^2)) and H = I - 11^T / n.

#include <Eigen/Core>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "tracetrust/actv.hpp"

namespace tracetrust {

using Matrix = Eigen::MatrixXd;

/// Symmetric kernel matrix with unit diagonal. Throws ArgumentError when
/// sigma <= 0 or a point is non-finite.
Matrix gaussian_kernel_matrix(const Matrix& points, double sigma);

/// Pairwise squared Euclidean distances (exactly symmetric, zero diagonal).
Matrix squared_distances(const Matrix& points);

struct HsicEstimate {
  double value = 0.0;  // max(raw, 0)
  double raw = 0.0;    // estimator output before clamping
  double sigma_x = 0.0;
  double sigma_y = 0.0;
  std::size_t n = 0;
};

/// Requires equal row counts and n >= 2.
HsicEstimate hsic(const Matrix& x, const Matrix& y, double sigma_x, double sigma_y);

/// {50, 100, ..., 400}.
std::vector<double> default_sigma_grid();
/// Parses "lo:hi:step" into lo, lo+step, ... <= hi (with a small tolerance).
std::vector<double> parse_sigma_grid(std::string_view spec);

/// Maximises hsic over grid x grid (one sigma per side). Ties keep the
/// smaller sigma_x, then the smaller sigma_y.
HsicEstimate sigma_search(const Matrix& x, const Matrix& y, std::span<const double> grid);

/// Activations as an n x d double matrix.
Matrix to_matrix(const ActivationDataset& data);
/// Labels as an n x 1 matrix of 0.0 / 1.0.
Matrix label_matrix(const ActivationDataset& data);

struct MiPoint {
  std::int64_t step = 0;
  double i_tx = 0.0;
  double i_ty = 0.0;
  double sigma_tx = 0.0;  // sigma on T for I(T,X)
  double sigma_ty = 0.0;  // sigma on T for I(T,Y)
  double sigma_x = 0.0;
  double sigma_y = 0.0;
};

struct MiTrace {
  std::uint64_t layer = 0;
  std::vector<MiPoint> points;  // strictly increasing steps
};

/// Per-checkpoint input to mi_sweep: X is the first-layer dataset, T the
/// target-layer dataset. Rows must align and labels (Y) must agree.
struct MiCheckpoint {
  std::int64_t step = 0;
  const ActivationDataset* first_layer = nullptr;
  const ActivationDataset* target_layer = nullptr;
};

MiTrace mi_sweep(std::span<const MiCheckpoint> checkpoints, std::uint64_t target_layer,
                 std::span<const double> grid);

/// Loads (first_layer, target_layer) pairs from manifest entries, grouping by
/// checkpoint. Steps come from the manifest "step" field, else the trailing
/// integer of the checkpoint id.
MiTrace mi_sweep_manifest(std::span<const ManifestEntry> entries, std::uint64_t target_layer,
                          std::uint64_t first_layer, std::span<const double> grid);

struct StepRange {
  std::int64_t first = 0;
  std::int64_t last = 0;
  bool empty = true;
};

struct PhaseReport {
  std::int64_t peak_step = 0;
  std::size_t peak_index = 0;
  StepRange fitting;      // steps <= peak
  StepRange compression;  // steps > peak
  std::size_t smoothing_window = 1;
  std::vector<double> smoothed_i_tx;
};

/// Centred moving average of the given odd width; the window is truncated at
/// the ends of the series.
std::vector<double> moving_average(std::span<const double> values, std::size_t window);

/// Throws ArgumentError for an even window or a trace shorter than the
/// window ("too-short trace").
PhaseReport detect_phases(const MiTrace& trace, std::size_t smoothing_window = 3);

/// Sample Pearson correlation. Throws ArgumentError for mismatched lengths,
/// fewer than two points, or a constant input ("undefined correlation").
double pearson(std::span<const double> xs, std::span<const double> ys);

/// Columns: step,i_tx,i_ty,sigma_tx,sigma_ty,sigma_x,sigma_y.
void write_mi_csv(const MiTrace& trace, std::ostream& out);
std::string phase_report_json(const PhaseReport& report, std::uint64_t layer);

}  // namespace tracetrust
