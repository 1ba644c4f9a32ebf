#include <gtest/gtest.h>

#include <cmath>
#include <cstring>

#include "fixtures.hpp"
#include "tracetrust/errors.hpp"
#include "tracetrust/rng.hpp"
#include "tracetrust/steering.hpp"

namespace tt = tracetrust;
using tt::testing::random_dataset;
using tt::testing::TempDir;

namespace {

tt::ActivationDataset rows_of(std::vector<float> values, std::size_t d, std::uint8_t label,
                              const std::string& ckpt = "step_000100", std::uint64_t layer = 2) {
  const std::size_t n = values.size() / d;
  tt::DatasetMeta meta;
  meta.checkpoint_id = ckpt;
  meta.layer = layer;
  return {n, d, std::move(values), std::vector<std::uint8_t>(n, label), meta};
}

tt::InterventionSpec spec_with(std::vector<double> direction, double alpha) {
  tt::InterventionSpec s;
  s.vector.direction = std::move(direction);
  s.alpha = alpha;
  return s;
}

}  // namespace

TEST(MassMean, CentroidDifference) {
  const auto pos = rows_of({1, 0, 3, 0}, 2, 1);
  const auto neg = rows_of({0, 2, 0, 4}, 2, 0);
  const auto v = tt::mass_mean_vector(pos, neg);
  EXPECT_EQ(v.direction, (std::vector<double>{2.0, -3.0}));
  EXPECT_EQ(v.n_positive, 2u);
  EXPECT_EQ(v.n_negative, 2u);
  EXPECT_EQ(v.layer, 2u);
  EXPECT_EQ(v.source_checkpoint, "step_000100");
}

TEST(MassMean, IdenticalSetsGiveZero) {
  const auto a = random_dataset(7, 5, 1);
  const auto v = tt::mass_mean_vector(a, a);
  for (double x : v.direction) EXPECT_EQ(x, 0.0);
}

TEST(MassMean, SinglePointsGiveDifference) {
  const auto p = rows_of({1.5f, -2.0f, 4.0f}, 3, 1);
  const auto q = rows_of({0.5f, 1.0f, -4.0f}, 3, 0);
  EXPECT_EQ(tt::mass_mean_vector(p, q).direction, (std::vector<double>{1.0, -3.0, 8.0}));
}

TEST(MassMean, Antisymmetric) {
  const auto p = random_dataset(9, 6, 2);
  const auto n = random_dataset(5, 6, 3);
  const auto a = tt::mass_mean_vector(p, n).direction;
  const auto b = tt::mass_mean_vector(n, p).direction;
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], -b[i]);
}

TEST(MassMean, TranslationInvariant) {
  // Dyadic entries and integer shifts keep every float exact, so the only
  // rounding left is in the double centroid arithmetic.
  tt::Rng rng(4);
  auto dyadic = [&](std::size_t n) {
    std::vector<float> v(n * 4);
    for (auto& x : v) x = static_cast<float>(static_cast<double>(rng.below(257)) / 64.0 - 2.0);
    return v;
  };
  const std::vector<float> c{10.0f, -3.0f, 1024.0f, 7.0f};
  auto shifted = [&](std::vector<float> v) {
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += c[i % 4];
    return v;
  };
  const auto pv = dyadic(9);
  const auto nv = dyadic(6);
  const auto a = tt::mass_mean_vector(rows_of(pv, 4, 1), rows_of(nv, 4, 0)).direction;
  const auto b = tt::mass_mean_vector(rows_of(shifted(pv), 4, 1), rows_of(shifted(nv), 4, 0)).direction;
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(MassMean, LabelledFormSplitsByLabel) {
  const tt::ActivationDataset d(4, 1, {1, 3, 10, 20}, {0, 0, 1, 1}, {});
  const auto v = tt::mass_mean_vector(d);
  EXPECT_EQ(v.direction, std::vector<double>{13.0});
}

TEST(MassMean, Errors) {
  const auto a = random_dataset(3, 2, 1);
  const auto b = random_dataset(3, 3, 1);
  EXPECT_THROW(tt::mass_mean_vector(a, b), tt::ArgumentError);
  const tt::ActivationDataset single(2, 1, {1, 2}, {1, 1}, {});
  EXPECT_THROW(tt::mass_mean_vector(single), tt::ArgumentError);
}

TEST(Apply, ZeroAlphaBitwiseIdentity) {
  const std::vector<double> h{0.1, -0.0, 1e300};
  const auto out = tt::apply_intervention(h, spec_with({std::nan(""), 1.0, 1e300}, 0.0));
  EXPECT_EQ(std::memcmp(out.data(), h.data(), h.size() * sizeof(double)), 0);
}

TEST(Apply, ZeroStateGivesDirection) {
  const std::vector<double> h{0.0, 0.0};
  EXPECT_EQ(tt::apply_intervention(h, spec_with({2.0, -3.0}, 1.0)), (std::vector<double>{2.0, -3.0}));
}

TEST(Apply, HalfStrength) {
  const std::vector<double> h{1.0, 1.0};
  EXPECT_EQ(tt::apply_intervention(h, spec_with({2.0, -3.0}, 0.5)), (std::vector<double>{2.0, -0.5}));
}

TEST(Apply, Linearity) {
  tt::Rng rng(3);
  std::vector<double> h(16);
  std::vector<double> v(16);
  for (auto& x : h) x = rng.normal();
  for (auto& x : v) x = rng.normal();
  const double a1 = 0.7;
  const double a2 = -1.9;
  const auto once = tt::apply_intervention(h, spec_with(v, a1 + a2));
  const auto twice = tt::apply_intervention(tt::apply_intervention(h, spec_with(v, a1)), spec_with(v, a2));
  for (std::size_t i = 0; i < h.size(); ++i) EXPECT_NEAR(once[i], twice[i], 1e-12);
}

TEST(Apply, InPlaceFloatForm) {
  std::vector<float> h{1.0f, 1.0f};
  tt::apply_intervention_inplace(h, spec_with({2.0, -3.0}, 0.5));
  EXPECT_EQ(h, (std::vector<float>{2.0f, -0.5f}));
  std::vector<float> g{0.3f};
  tt::apply_intervention_inplace(g, spec_with({std::nan("")}, 0.0));
  EXPECT_EQ(g[0], 0.3f);
}

TEST(Apply, DimensionMismatch) {
  const std::vector<double> h{1.0};
  EXPECT_THROW(tt::apply_intervention(h, spec_with({1.0, 2.0}, 1.0)), tt::ArgumentError);
  std::vector<float> f{1.0f};
  EXPECT_THROW(tt::apply_intervention_inplace(f, spec_with({1.0, 2.0}, 1.0)), tt::ArgumentError);
}

TEST(VectorFile, RoundTripThroughAllPathForms) {
  TempDir dir;
  tt::SteeringVector v;
  v.direction = {0.25, -1.5, 3.0};
  v.layer = 2;
  v.source_checkpoint = "step_000500";
  v.n_positive = 40;
  v.n_negative = 38;
  const auto stem = dir.path() / "vec";
  tt::save_steering_vector(v, stem);
  EXPECT_TRUE(std::filesystem::exists(dir.path() / "vec.actv"));
  EXPECT_TRUE(std::filesystem::exists(dir.path() / "vec.json"));
  for (const auto& p : {stem, dir.path() / "vec.actv", dir.path() / "vec.json"}) {
    const auto back = tt::load_steering_vector(p);
    EXPECT_EQ(back.direction, v.direction);
    EXPECT_EQ(back.layer, 2u);
    EXPECT_EQ(back.source_checkpoint, "step_000500");
    EXPECT_EQ(back.n_positive, 40u);
    EXPECT_EQ(back.n_negative, 38u);
  }
  const auto row = tt::read_actv_file(dir.path() / "vec.actv");
  EXPECT_EQ(row.rows(), 1u);
  EXPECT_EQ(row.cols(), 3u);
}
