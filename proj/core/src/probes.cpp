#include "tracetrust/probes.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <cstdio>
#include <ostream>

#include "tracetrust/errors.hpp"
#include "tracetrust/parallel.hpp"

namespace tracetrust {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Standardised design matrix with a trailing column of ones for the bias.
MatrixXd design_matrix(const ActivationDataset& data, const std::vector<double>& mean,
                       const std::vector<double>& scale) {
  const auto n = static_cast<Eigen::Index>(data.rows());
  const auto d = static_cast<Eigen::Index>(data.cols());
  MatrixXd z(n, d + 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto row = data.row(static_cast<std::size_t>(i));
    for (Eigen::Index j = 0; j < d; ++j) {
      const auto jj = static_cast<std::size_t>(j);
      z(i, j) = (static_cast<double>(row[jj]) - mean[jj]) / scale[jj];
    }
    z(i, d) = 1.0;
  }
  return z;
}

double sigmoid(double t) {
  if (t >= 0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

// Largest eigenvalue of Z^T Z / n by power iteration from a fixed start.
double gram_spectral_norm(const MatrixXd& z) {
  const MatrixXd gram = (z.transpose() * z) / static_cast<double>(z.rows());
  VectorXd v = VectorXd::Ones(gram.rows()).normalized();
  double lambda = 0.0;
  for (int it = 0; it < 200; ++it) {
    VectorXd w = gram * v;
    const double norm = w.norm();
    if (norm == 0.0) return 0.0;
    v = w / norm;
    if (std::abs(norm - lambda) <= 1e-12 * norm) {
      lambda = norm;
      break;
    }
    lambda = norm;
  }
  return lambda;
}

}  // namespace

double ProbeModel::logit(std::span<const float> x) const {
  if (x.size() != weights.size()) {
    throw ArgumentError("probe expects dimension " + std::to_string(weights.size()) + ", got " +
                        std::to_string(x.size()));
  }
  double s = bias;
  for (std::size_t j = 0; j < x.size(); ++j) {
    s += weights[j] * ((static_cast<double>(x[j]) - feature_mean[j]) / feature_scale[j]);
  }
  return s;
}

ProbeModel fit_probe(const ActivationDataset& train, const ProbeConfig& config) {
  const std::size_t n = train.rows();
  const std::size_t d = train.cols();
  const std::size_t positives = train.count_positive();
  if (positives == 0 || positives == n) {
    throw ArgumentError("probe training set must contain both classes");
  }
  if (config.max_iterations < 0 || config.l2_penalty < 0.0 || config.step_size < 0.0) {
    throw ArgumentError("invalid probe configuration");
  }

  ProbeModel model;
  model.feature_mean.assign(d, 0.0);
  model.feature_scale.assign(d, 1.0);
  if (config.standardize) {
    for (std::size_t i = 0; i < n; ++i) {
      const auto row = train.row(i);
      for (std::size_t j = 0; j < d; ++j) model.feature_mean[j] += row[j];
    }
    for (auto& m : model.feature_mean) m /= static_cast<double>(n);
    std::vector<double> var(d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto row = train.row(i);
      for (std::size_t j = 0; j < d; ++j) {
        const double c = row[j] - model.feature_mean[j];
        var[j] += c * c;
      }
    }
    for (std::size_t j = 0; j < d; ++j) {
      const double sd = std::sqrt(var[j] / static_cast<double>(n));
      model.feature_scale[j] = sd > 0.0 ? sd : 1.0;
    }
  }

  const MatrixXd z = design_matrix(train, model.feature_mean, model.feature_scale);
  VectorXd y(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) y(static_cast<Eigen::Index>(i)) = train.label(i);

  const double lambda = config.l2_penalty;
  double step = config.step_size;
  if (step == 0.0) {
    // Logistic curvature is at most 1/4 of the Gram matrix; 5% headroom
    // covers the power-iteration estimate approaching from below.
    const double curvature = 0.25 * gram_spectral_norm(z) * 1.05 + lambda;
    step = 1.0 / curvature;
  }

  const auto dim = static_cast<Eigen::Index>(d + 1);
  VectorXd theta = VectorXd::Zero(dim);
  VectorXd grad(dim);
  VectorXd residual(static_cast<Eigen::Index>(n));
  const double inv_n = 1.0 / static_cast<double>(n);

  int it = 0;
  double grad_norm = 0.0;
  for (;; ++it) {
    const VectorXd scores = z * theta;
    for (Eigen::Index i = 0; i < scores.size(); ++i) residual(i) = sigmoid(scores(i)) - y(i);
    grad.noalias() = z.transpose() * residual * inv_n;
    grad.head(dim - 1) += lambda * theta.head(dim - 1);
    grad_norm = grad.norm();
    if (grad_norm <= config.gradient_tolerance || it >= config.max_iterations) break;
    theta -= step * grad;
  }

  model.weights.assign(theta.data(), theta.data() + d);
  model.bias = theta(dim - 1);
  model.iterations = it;
  model.final_gradient_norm = grad_norm;
  for (const double w : model.weights) {
    if (!std::isfinite(w)) throw ValidationError("probe training diverged");
  }
  return model;
}

double probe_accuracy(const ProbeModel& model, const ActivationDataset& data) {
  if (data.cols() != model.dimension()) {
    throw ArgumentError("dataset dimension " + std::to_string(data.cols()) + " != probe dimension " +
                        std::to_string(model.dimension()));
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.rows(); ++i) {
    if (model.predict(data.row(i)) == data.label(i)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.rows());
}

ProbeReport eval_probe(const ProbeModel& model, const ActivationDataset& test) {
  ProbeReport report;
  report.key = {test.meta().checkpoint_id, test.meta().layer};
  report.test_accuracy = probe_accuracy(model, test);
  report.n_test = test.rows();
  return report;
}

ProbeReport train_and_evaluate(const ActivationDataset& data, const SplitPlan& split, const ProbeConfig& config) {
  const ActivationDataset train = data.subset(split.train);
  const ActivationDataset test = data.subset(split.test);
  const ProbeModel model = fit_probe(train, config);
  ProbeReport report = eval_probe(model, test);
  report.train_accuracy = probe_accuracy(model, train);
  report.n_train = train.rows();
  report.seed = split.seed;
  return report;
}

std::vector<SweepOutcome> probe_sweep(std::span<const ManifestEntry> entries, SplitScheme scheme,
                                      const ProbeConfig& config, std::uint64_t seed) {
  std::vector<SweepOutcome> outcomes(entries.size());
  parallel_for(entries.size(), [&](std::size_t i) {
    SweepOutcome& out = outcomes[i];
    out.key = entries[i].key;
    try {
      const ActivationDataset data = read_actv_file(entries[i].path);
      const SplitPlan split = make_split(scheme, data.rows(), seed);
      ProbeReport report = train_and_evaluate(data, split, config);
      report.key = entries[i].key;
      out.report = report;
    } catch (const std::exception& e) {
      out.error = e.what();
    }
  });
  return outcomes;
}

void write_sweep_csv(std::span<const SweepOutcome> outcomes, std::ostream& out) {
  out << "checkpoint_id,layer,test_accuracy,train_accuracy,n_train,n_test,seed\n";
  char buf[64];
  for (const auto& o : outcomes) {
    if (!o.ok()) continue;
    const ProbeReport& r = *o.report;
    out << r.key.checkpoint_id << ',' << r.key.layer << ',';
    std::snprintf(buf, sizeof buf, "%.6f,%.6f", r.test_accuracy, r.train_accuracy);
    out << buf << ',' << r.n_train << ',' << r.n_test << ',' << r.seed << '\n';
  }
}

}  // namespace tracetrust
