#pragma once

// Synthetic data shared by the unit, acceptance and benchmark suites.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tracetrust/actv.hpp"
#include "tracetrust/datasets.hpp"
#include "tracetrust/infotheory.hpp"
#include "tracetrust/toylm.hpp"

namespace tracetrust::testing {

/// Dataset with entries drawn from N(0, scale^2) and uniform labels.
ActivationDataset random_dataset(std::size_t n, std::size_t d, std::uint64_t seed, double scale = 1.0,
                                 const std::string& checkpoint_id = "ckpt_0", std::uint64_t layer = 0);

/// Two unit-variance Gaussian blobs centred at -separation/2 and
/// +separation/2 on axis 0 (label 0 and 1), n/2 rows each, shuffled.
ActivationDataset gaussian_blobs(std::size_t n, std::size_t d, double separation, std::uint64_t seed,
                                 const std::string& checkpoint_id = "ckpt_0", std::uint64_t layer = 0);

/// Same features as `data`, labels replaced by independent fair coin flips.
ActivationDataset shuffled_labels(const ActivationDataset& data, std::uint64_t seed);

/// Three-stage trajectory used for phase detection. Every checkpoint shares
/// X (first layer, random) and labels Y. Target T is
///   stage 1: independent noise, stage 2: T = X, stage 3: T = f(Y) + noise.
struct StagedTrajectory {
  std::vector<std::int64_t> steps;
  std::vector<int> stage;  // 1, 2 or 3 for each step
  std::vector<ActivationDataset> first_layer;
  std::vector<ActivationDataset> target_layer;

  std::vector<MiCheckpoint> checkpoints() const;
};
StagedTrajectory staged_trajectory(std::uint64_t seed, std::size_t n = 60, std::size_t d = 8,
                                   std::size_t steps_per_stage = 4);

/// Writes every dataset of the trajectory plus a manifest; returns its path.
std::filesystem::path write_staged_manifest(const StagedTrajectory& trajectory, const std::filesystem::path& dir,
                                            std::uint64_t first_layer = 0, std::uint64_t target_layer = 2);

/// Naive HSIC with explicit centring matrices and full matrix products.
double naive_hsic(const Matrix& x, const Matrix& y, double sigma_x, double sigma_y);

/// Two-style corpus for the toy LM. Each sentence is 0-3 filler 'z' bytes,
/// 3-6 letter pairs from {ab, cd, ef, gh} and a final '.'. Style 0 writes
/// each pair in order ("ab"), style 1 reversed ("ba"), so both styles share
/// letter frequencies and differ only in order.
struct TwoStyleCorpus {
  LabeledCorpus probe;                    // sentences ending in '.'
  std::vector<toylm::Sequence> training;  // sentence + style marker ('x' or 'y')
};
TwoStyleCorpus two_style_corpus(std::size_t n, std::uint64_t seed);

/// Small model config used by the toy pipeline tests.
toylm::ToyLmConfig small_config(std::uint64_t seed = 0);

/// Fresh, empty temporary directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& prefix = "tracetrust");
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace tracetrust::testing
