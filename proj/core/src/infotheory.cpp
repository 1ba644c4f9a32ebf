#include "tracetrust/infotheory.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <ostream>
#include <string>

#include "json.hpp"
#include "tracetrust/errors.hpp"
#include "tracetrust/parallel.hpp"

namespace tracetrust {

namespace {

void require_finite(const Matrix& m, const char* what) {
  if (!m.allFinite()) throw ArgumentError(std::string(what) + " contains non-finite values");
}

Matrix kernel_from_distances(const Matrix& sq_dist, double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ArgumentError("kernel sigma must be positive");
  const double scale = -1.0 / (2.0 * sigma * sigma);
  constexpr double kTiny = std::numeric_limits<double>::min();
  const Eigen::Index n = sq_dist.rows();
  Matrix k(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    k(j, j) = 1.0;
    for (Eigen::Index i = j + 1; i < n; ++i) {
      // Stay strictly positive when the exponential underflows.
      const double v = std::max(std::exp(scale * sq_dist(i, j)), kTiny);
      k(i, j) = v;
      k(j, i) = v;
    }
  }
  return k;
}

// H K H computed from row means in O(n^2).
Matrix center(const Matrix& k) {
  const Eigen::Index n = k.rows();
  const Eigen::VectorXd row_mean = k.rowwise().mean();
  const double grand = row_mean.mean();
  Matrix c(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = 0; i < n; ++i) c(i, j) = k(i, j) - row_mean(i) - row_mean(j) + grand;
  }
  return c;
}

HsicEstimate finish(double raw, double sigma_x, double sigma_y, std::size_t n) {
  return {std::max(raw, 0.0), raw, sigma_x, sigma_y, n};
}

double centered_inner(const Matrix& a, const Matrix& b) {
  const double n1 = static_cast<double>(a.rows() - 1);
  return a.cwiseProduct(b).sum() / (n1 * n1);
}

void check_pair(const Matrix& x, const Matrix& y) {
  if (x.rows() != y.rows()) {
    throw ArgumentError("hsic inputs have " + std::to_string(x.rows()) + " and " + std::to_string(y.rows()) +
                        " rows");
  }
  if (x.rows() < 2) throw ArgumentError("hsic needs at least two samples");
  require_finite(x, "hsic input x");
  require_finite(y, "hsic input y");
}

std::vector<double> normalized_grid(std::span<const double> grid) {
  if (grid.empty()) throw ArgumentError("sigma grid is empty");
  std::vector<double> g(grid.begin(), grid.end());
  for (const double s : g) {
    if (!(s > 0.0) || !std::isfinite(s)) throw ArgumentError("sigma grid values must be positive");
  }
  std::sort(g.begin(), g.end());
  g.erase(std::unique(g.begin(), g.end()), g.end());
  return g;
}

std::optional<std::int64_t> trailing_integer(const std::string& id) {
  std::size_t start = id.size();
  while (start > 0 && id[start - 1] >= '0' && id[start - 1] <= '9') --start;
  if (start == id.size()) return std::nullopt;
  std::int64_t value = 0;
  auto [ptr, ec] = std::from_chars(id.data() + start, id.data() + id.size(), value);
  if (ec != std::errc{}) return std::nullopt;
  return value;
}

}  // namespace

Matrix squared_distances(const Matrix& points) {
  const Eigen::Index n = points.rows();
  Matrix d = Matrix::Zero(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = j + 1; i < n; ++i) {
      const double v = (points.row(i) - points.row(j)).squaredNorm();
      d(i, j) = v;
      d(j, i) = v;
    }
  }
  return d;
}

Matrix gaussian_kernel_matrix(const Matrix& points, double sigma) {
  require_finite(points, "kernel input");
  if (!(sigma > 0.0)) throw ArgumentError("kernel sigma must be positive");
  return kernel_from_distances(squared_distances(points), sigma);
}

HsicEstimate hsic(const Matrix& x, const Matrix& y, double sigma_x, double sigma_y) {
  check_pair(x, y);
  const Matrix kx = center(gaussian_kernel_matrix(x, sigma_x));
  const Matrix ky = center(gaussian_kernel_matrix(y, sigma_y));
  return finish(centered_inner(kx, ky), sigma_x, sigma_y, static_cast<std::size_t>(x.rows()));
}

std::vector<double> default_sigma_grid() { return {50, 100, 150, 200, 250, 300, 350, 400}; }

std::vector<double> parse_sigma_grid(std::string_view spec) {
  double parts[3] = {0, 0, 0};
  std::size_t begin = 0;
  for (int k = 0; k < 3; ++k) {
    const std::size_t end = k < 2 ? spec.find(':', begin) : spec.size();
    if (end == std::string_view::npos) throw ArgumentError("sigma grid must be lo:hi:step");
    const std::string token(spec.substr(begin, end - begin));
    try {
      std::size_t used = 0;
      parts[k] = std::stod(token, &used);
      if (used != token.size()) throw std::invalid_argument(token);
    } catch (const std::exception&) {
      throw ArgumentError("sigma grid field '" + token + "' is not a number");
    }
    begin = end + 1;
  }
  const auto [lo, hi, step] = parts;
  if (!(lo > 0.0) || !(hi >= lo) || !(step > 0.0)) {
    throw ArgumentError("sigma grid needs 0 < lo <= hi and step > 0");
  }
  std::vector<double> grid;
  for (std::size_t i = 0;; ++i) {
    const double v = lo + static_cast<double>(i) * step;
    if (v > hi * (1.0 + 1e-12)) break;
    grid.push_back(v);
  }
  return grid;
}

HsicEstimate sigma_search(const Matrix& x, const Matrix& y, std::span<const double> grid) {
  const std::vector<double> sigmas = normalized_grid(grid);
  check_pair(x, y);
  const Matrix dx = squared_distances(x);
  const Matrix dy = squared_distances(y);

  std::vector<Matrix> kx(sigmas.size());
  std::vector<Matrix> ky(sigmas.size());
  parallel_for(sigmas.size(), [&](std::size_t i) {
    kx[i] = center(kernel_from_distances(dx, sigmas[i]));
    ky[i] = center(kernel_from_distances(dy, sigmas[i]));
  });

  std::optional<HsicEstimate> best;
  const auto n = static_cast<std::size_t>(x.rows());
  for (std::size_t i = 0; i < sigmas.size(); ++i) {
    for (std::size_t j = 0; j < sigmas.size(); ++j) {
      const HsicEstimate e = finish(centered_inner(kx[i], ky[j]), sigmas[i], sigmas[j], n);
      if (!best || e.raw > best->raw) best = e;
    }
  }
  return *best;
}

Matrix to_matrix(const ActivationDataset& data) {
  Matrix m(static_cast<Eigen::Index>(data.rows()), static_cast<Eigen::Index>(data.cols()));
  for (std::size_t i = 0; i < data.rows(); ++i) {
    const auto row = data.row(i);
    for (std::size_t j = 0; j < data.cols(); ++j) {
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = row[j];
    }
  }
  return m;
}

Matrix label_matrix(const ActivationDataset& data) {
  Matrix m(static_cast<Eigen::Index>(data.rows()), 1);
  for (std::size_t i = 0; i < data.rows(); ++i) m(static_cast<Eigen::Index>(i), 0) = data.label(i);
  return m;
}

MiTrace mi_sweep(std::span<const MiCheckpoint> checkpoints, std::uint64_t target_layer,
                 std::span<const double> grid) {
  const std::vector<double> sigmas = normalized_grid(grid);
  for (std::size_t i = 0; i < checkpoints.size(); ++i) {
    const MiCheckpoint& c = checkpoints[i];
    if (c.first_layer == nullptr || c.target_layer == nullptr) {
      throw ArgumentError("mi_sweep checkpoint " + std::to_string(c.step) + " is missing a layer");
    }
    if (c.first_layer->rows() != c.target_layer->rows() ||
        !std::equal(c.first_layer->labels().begin(), c.first_layer->labels().end(),
                    c.target_layer->labels().begin())) {
      throw ValidationError("row misalignment between layers at step " + std::to_string(c.step));
    }
    if (i > 0 && c.step <= checkpoints[i - 1].step) {
      throw ArgumentError("mi_sweep steps must be strictly increasing");
    }
  }

  MiTrace trace;
  trace.layer = target_layer;
  trace.points.resize(checkpoints.size());
  for (std::size_t i = 0; i < checkpoints.size(); ++i) {
    const MiCheckpoint& c = checkpoints[i];
    const Matrix t = to_matrix(*c.target_layer);
    const Matrix x = to_matrix(*c.first_layer);
    const Matrix y = label_matrix(*c.target_layer);
    const HsicEstimate tx = sigma_search(t, x, sigmas);
    const HsicEstimate ty = sigma_search(t, y, sigmas);
    trace.points[i] = {c.step, tx.value, ty.value, tx.sigma_x, ty.sigma_x, tx.sigma_y, ty.sigma_y};
  }
  return trace;
}

MiTrace mi_sweep_manifest(std::span<const ManifestEntry> entries, std::uint64_t target_layer,
                          std::uint64_t first_layer, std::span<const double> grid) {
  struct Pair {
    std::optional<std::int64_t> step;
    const ManifestEntry* first = nullptr;
    const ManifestEntry* target = nullptr;
  };
  std::map<std::string, Pair> by_checkpoint;
  for (const auto& e : entries) {
    Pair& p = by_checkpoint[e.key.checkpoint_id];
    if (e.step) p.step = e.step;
    if (e.key.layer == first_layer) p.first = &e;
    if (e.key.layer == target_layer) p.target = &e;
  }

  struct Loaded {
    std::int64_t step;
    ActivationDataset first;
    ActivationDataset target;
  };
  std::vector<Loaded> loaded;
  for (auto& [id, p] : by_checkpoint) {
    if (p.first == nullptr || p.target == nullptr) {
      throw ValidationError("checkpoint '" + id + "' lacks layer " +
                            std::to_string(p.first == nullptr ? first_layer : target_layer));
    }
    const auto step = p.step ? p.step : trailing_integer(id);
    if (!step) throw ValidationError("cannot determine training step for checkpoint '" + id + "'");
    loaded.push_back({*step, read_actv_file(p.first->path), read_actv_file(p.target->path)});
  }
  std::sort(loaded.begin(), loaded.end(), [](const Loaded& a, const Loaded& b) { return a.step < b.step; });

  std::vector<MiCheckpoint> checkpoints;
  for (const auto& l : loaded) checkpoints.push_back({l.step, &l.first, &l.target});
  return mi_sweep(checkpoints, target_layer, grid);
}

std::vector<double> moving_average(std::span<const double> values, std::size_t window) {
  if (window == 0 || window % 2 == 0) throw ArgumentError("smoothing window must be a positive odd integer");
  const std::size_t half = window / 2;
  std::vector<double> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::size_t lo = i >= half ? i - half : 0;
    const std::size_t hi = std::min(values.size() - 1, i + half);
    double s = 0.0;
    for (std::size_t j = lo; j <= hi; ++j) s += values[j];
    out[i] = s / static_cast<double>(hi - lo + 1);
  }
  return out;
}

PhaseReport detect_phases(const MiTrace& trace, std::size_t smoothing_window) {
  if (smoothing_window == 0 || smoothing_window % 2 == 0) {
    throw ArgumentError("smoothing window must be a positive odd integer");
  }
  const auto& pts = trace.points;
  if (pts.empty() || pts.size() < smoothing_window) {
    throw ArgumentError("too-short trace: " + std::to_string(pts.size()) + " points for smoothing window " +
                        std::to_string(smoothing_window));
  }
  std::vector<double> itx;
  itx.reserve(pts.size());
  for (const auto& p : pts) itx.push_back(p.i_tx);

  PhaseReport report;
  report.smoothing_window = smoothing_window;
  report.smoothed_i_tx = moving_average(itx, smoothing_window);
  const auto peak = std::max_element(report.smoothed_i_tx.begin(), report.smoothed_i_tx.end());
  report.peak_index = static_cast<std::size_t>(peak - report.smoothed_i_tx.begin());
  report.peak_step = pts[report.peak_index].step;
  report.fitting = {pts.front().step, report.peak_step, false};
  if (report.peak_index + 1 < pts.size()) {
    report.compression = {pts[report.peak_index + 1].step, pts.back().step, false};
  }
  return report;
}

double pearson(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw ArgumentError("pearson inputs differ in length");
  if (xs.size() < 2) throw ArgumentError("pearson needs at least two points");
  const double n = static_cast<double>(xs.size());
  double mx = 0.0;
  double my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - mx;
    const double dy = ys[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw ArgumentError("undefined correlation: constant input");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

void write_mi_csv(const MiTrace& trace, std::ostream& out) {
  out << "step,i_tx,i_ty,sigma_tx,sigma_ty,sigma_x,sigma_y\n";
  char buf[256];
  for (const auto& p : trace.points) {
    std::snprintf(buf, sizeof buf, "%lld,%.17g,%.17g,%g,%g,%g,%g\n", static_cast<long long>(p.step), p.i_tx,
                  p.i_ty, p.sigma_tx, p.sigma_ty, p.sigma_x, p.sigma_y);
    out << buf;
  }
}

std::string phase_report_json(const PhaseReport& report, std::uint64_t layer) {
  using nlohmann::json;
  auto range = [](const StepRange& r) { return r.empty ? json(nullptr) : json::array({r.first, r.last}); };
  json doc = {{"layer", layer},
              {"peak_step", report.peak_step},
              {"smoothing_window", report.smoothing_window},
              {"fitting_range", range(report.fitting)},
              {"compression_range", range(report.compression)},
              {"smoothed_i_tx", report.smoothed_i_tx}};
  return doc.dump(2);
}

}  // namespace tracetrust
