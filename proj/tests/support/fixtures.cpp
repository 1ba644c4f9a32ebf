#include "fixtures.hpp"

#include <atomic>
#include <cmath>
#include <unistd.h>

#include "tracetrust/rng.hpp"

namespace tracetrust::testing {

namespace {

DatasetMeta make_meta(const std::string& checkpoint_id, std::uint64_t layer, const std::string& name) {
  DatasetMeta meta;
  meta.dataset_name = name;
  meta.dimension = Dimension::other;
  meta.checkpoint_id = checkpoint_id;
  meta.layer = layer;
  return meta;
}

}  // namespace

ActivationDataset random_dataset(std::size_t n, std::size_t d, std::uint64_t seed, double scale,
                                 const std::string& checkpoint_id, std::uint64_t layer) {
  Rng rng(seed);
  std::vector<float> values(n * d);
  for (auto& v : values) v = static_cast<float>(rng.normal() * scale);
  std::vector<std::uint8_t> labels(n);
  for (auto& y : labels) y = static_cast<std::uint8_t>(rng.below(2));
  return ActivationDataset(n, d, std::move(values), std::move(labels), make_meta(checkpoint_id, layer, "random"));
}

ActivationDataset gaussian_blobs(std::size_t n, std::size_t d, double separation, std::uint64_t seed,
                                 const std::string& checkpoint_id, std::uint64_t layer) {
  Rng rng(seed);
  std::vector<std::uint8_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<std::uint8_t>(i < n / 2 ? 0 : 1);
  rng.shuffle(std::span<std::uint8_t>(labels));
  std::vector<float> values(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      double v = rng.normal();
      if (j == 0) v += (labels[i] ? 0.5 : -0.5) * separation;
      values[i * d + j] = static_cast<float>(v);
    }
  }
  DatasetMeta meta = make_meta(checkpoint_id, layer, "blobs");
  meta.balanced = labels_balanced(labels);
  return ActivationDataset(n, d, std::move(values), std::move(labels), std::move(meta));
}

ActivationDataset shuffled_labels(const ActivationDataset& data, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::uint8_t> labels(data.rows());
  for (auto& y : labels) y = static_cast<std::uint8_t>(rng.below(2));
  DatasetMeta meta = data.meta();
  meta.balanced = false;
  return ActivationDataset(data.rows(), data.cols(), std::vector<float>(data.values().begin(), data.values().end()),
                           std::move(labels), std::move(meta));
}

std::vector<MiCheckpoint> StagedTrajectory::checkpoints() const {
  std::vector<MiCheckpoint> out;
  for (std::size_t i = 0; i < steps.size(); ++i) out.push_back({steps[i], &first_layer[i], &target_layer[i]});
  return out;
}

StagedTrajectory staged_trajectory(std::uint64_t seed, std::size_t n, std::size_t d, std::size_t steps_per_stage) {
  // Scale chosen so pairwise distances sit inside the default sigma grid.
  constexpr double kScale = 100.0;
  Rng rng(seed);
  std::vector<float> x(n * d);
  for (auto& v : x) v = static_cast<float>(rng.normal() * kScale);
  std::vector<std::uint8_t> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = static_cast<std::uint8_t>(i % 2);
  rng.shuffle(std::span<std::uint8_t>(y));

  StagedTrajectory traj;
  for (int stage = 1; stage <= 3; ++stage) {
    for (std::size_t s = 0; s < steps_per_stage; ++s) {
      const auto step = static_cast<std::int64_t>(traj.steps.size()) * 50;
      const std::string id = "step_" + std::to_string(step);
      std::vector<float> t(n * d);
      if (stage == 1) {
        for (auto& v : t) v = static_cast<float>(rng.normal() * kScale);
      } else if (stage == 2) {
        t = x;
      } else {
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < d; ++j) {
            const double signal = j == 0 ? (y[i] ? 2.0 : -2.0) * kScale : 0.0;
            t[i * d + j] = static_cast<float>(signal + rng.normal() * 0.1 * kScale);
          }
        }
      }
      traj.steps.push_back(step);
      traj.stage.push_back(stage);
      traj.first_layer.emplace_back(n, d, x, y, make_meta(id, 0, "staged"));
      traj.target_layer.emplace_back(n, d, std::move(t), y, make_meta(id, 2, "staged"));
    }
  }
  return traj;
}

std::filesystem::path write_staged_manifest(const StagedTrajectory& trajectory, const std::filesystem::path& dir,
                                            std::uint64_t first_layer, std::uint64_t target_layer) {
  std::vector<ManifestEntry> entries;
  auto add = [&](const ActivationDataset& data, std::uint64_t layer, std::int64_t step) {
    DatasetMeta meta = data.meta();
    meta.layer = layer;
    const ActivationDataset copy(data.rows(), data.cols(),
                                 std::vector<float>(data.values().begin(), data.values().end()),
                                 std::vector<std::uint8_t>(data.labels().begin(), data.labels().end()), meta);
    const auto path = dir / (meta.checkpoint_id + "_L" + std::to_string(layer) + ".actv");
    write_actv_file(copy, path);
    entries.push_back({{meta.checkpoint_id, layer}, path, meta.dataset_name, meta.dimension, step});
  };
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < trajectory.steps.size(); ++i) {
    add(trajectory.first_layer[i], first_layer, trajectory.steps[i]);
    add(trajectory.target_layer[i], target_layer, trajectory.steps[i]);
  }
  const auto manifest = dir / "manifest.json";
  write_manifest_file(entries, manifest);
  return manifest;
}

double naive_hsic(const Matrix& x, const Matrix& y, double sigma_x, double sigma_y) {
  const Eigen::Index n = x.rows();
  auto kernel = [n](const Matrix& p, double sigma) {
    Matrix k(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) {
        double sq = 0.0;
        for (Eigen::Index c = 0; c < p.cols(); ++c) {
          const double diff = p(i, c) - p(j, c);
          sq += diff * diff;
        }
        k(i, j) = std::exp(-0.5 * sq / (sigma * sigma));
      }
    }
    return k;
  };
  const Matrix h = Matrix::Identity(n, n) - Matrix::Constant(n, n, 1.0 / static_cast<double>(n));
  const Matrix product = kernel(x, sigma_x) * h * kernel(y, sigma_y) * h;
  const double n1 = static_cast<double>(n - 1);
  return product.trace() / (n1 * n1);
}

TwoStyleCorpus two_style_corpus(std::size_t n, std::uint64_t seed) {
  static constexpr char kPairs[4][2] = {{'a', 'b'}, {'c', 'd'}, {'e', 'f'}, {'g', 'h'}};
  Rng rng(seed);
  TwoStyleCorpus out;
  out.probe.dimension = Dimension::other;
  for (std::size_t i = 0; i < n; ++i) {
    const int style = static_cast<int>(i % 2);
    std::string s(static_cast<std::size_t>(rng.below(4)), 'z');
    const auto pairs = 3 + rng.below(4);
    for (std::uint64_t p = 0; p < pairs; ++p) {
      const auto& pair = kPairs[rng.below(4)];
      s.push_back(pair[style]);
      s.push_back(pair[1 - style]);
    }
    s.push_back('.');
    out.probe.sentences.push_back(s);
    out.probe.labels.push_back(static_cast<std::uint8_t>(style));
    auto seq = toylm::encode_text(s);
    seq.push_back(style == 0 ? 'x' : 'y');
    out.training.push_back(std::move(seq));
  }
  return out;
}

toylm::ToyLmConfig small_config(std::uint64_t seed) {
  toylm::ToyLmConfig c;
  c.vocab_size = 256;
  c.d_model = 32;
  c.n_layers = 4;
  c.n_heads = 4;
  c.d_ff = 128;
  c.max_seq_len = 32;
  c.seed = seed;
  return c;
}

TempDir::TempDir(const std::string& prefix) {
  static std::atomic<int> counter{0};
  path_ = std::filesystem::temp_directory_path() /
          (prefix + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
  std::filesystem::remove_all(path_);
  std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

}  // namespace tracetrust::testing
