#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <fstream>

#include "fixtures.hpp"
#include "tracetrust/errors.hpp"
#include "tracetrust/rng.hpp"
#include "tracetrust/toylm.hpp"

namespace tt = tracetrust;
namespace lm = tracetrust::toylm;
using tt::testing::TempDir;

namespace {

lm::ToyLmConfig tiny_config(std::uint32_t vocab = 16) {
  lm::ToyLmConfig c;
  c.vocab_size = vocab;
  c.d_model = 8;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_ff = 16;
  c.max_seq_len = 12;
  c.seed = 5;
  return c;
}

// Parameters with O(1) scale so finite differences see real curvature.
lm::ToyLmCheckpoint rough_checkpoint(const lm::ToyLmConfig& config) {
  auto ckpt = lm::init(config);
  tt::Rng rng(77);
  for (auto& [name, tensor] : ckpt.parameters) {
    const bool gain = name.find("gain") != std::string::npos;
    for (auto& v : tensor.data) v = static_cast<float>(gain ? 1.0 + 0.2 * rng.normal() : 0.4 * rng.normal());
  }
  return ckpt;
}

tt::InterventionSpec spec_for(const lm::ToyLmConfig& config, std::uint64_t layer, double alpha, std::uint64_t seed) {
  tt::InterventionSpec s;
  tt::Rng rng(seed);
  s.vector.direction.resize(config.d_model);
  for (auto& v : s.vector.direction) v = rng.normal();
  s.layer = layer;
  s.alpha = alpha;
  return s;
}

bool bitwise_equal(const std::vector<float>& a, const std::vector<float>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

std::vector<lm::Sequence> repeat_corpus(std::initializer_list<lm::Token> pattern, std::size_t length,
                                        std::size_t count) {
  std::vector<lm::Sequence> out;
  const std::vector<lm::Token> p(pattern);
  for (std::size_t s = 0; s < count; ++s) {
    lm::Sequence seq;
    for (std::size_t i = 0; i < length; ++i) seq.push_back(p[(i + s) % p.size()]);
    out.push_back(seq);
  }
  return out;
}

}  // namespace

TEST(ToyLmInit, Deterministic) {
  const auto a = lm::init(tiny_config());
  const auto b = lm::init(tiny_config());
  EXPECT_EQ(a.parameters, b.parameters);
  EXPECT_EQ(a.step, 0u);
  EXPECT_EQ(a.id(), "step_000000");
  auto other = tiny_config();
  other.seed = 6;
  EXPECT_NE(lm::init(other).parameters, a.parameters);
  EXPECT_NO_THROW(a.validate());
}

TEST(ToyLmInit, LayoutMatchesParameters) {
  const auto config = tiny_config();
  const auto ckpt = lm::init(config);
  const auto layout = lm::parameter_layout(config);
  ASSERT_EQ(layout.size(), ckpt.parameters.size());
  for (const auto& [name, shape] : layout) EXPECT_EQ(ckpt.parameters.at(name).shape, shape) << name;
  EXPECT_EQ(ckpt.parameters.at("tok_emb").shape, (std::vector<std::size_t>{16, 8}));
}

TEST(ToyLmInit, InvalidConfigs) {
  auto c = tiny_config();
  c.d_model = 8;
  c.n_heads = 3;
  EXPECT_THROW(lm::init(c), tt::ArgumentError);
  c = tiny_config();
  c.vocab_size = 1;
  EXPECT_THROW(lm::init(c), tt::ArgumentError);
  c = tiny_config();
  c.n_layers = 0;
  EXPECT_THROW(lm::init(c), tt::ArgumentError);
}

TEST(ToyLmInit, DefaultConfigSizes) {
  const lm::ToyLmConfig c;
  EXPECT_EQ(c.vocab_size, 256u);
  EXPECT_EQ(c.d_model, 64u);
  EXPECT_EQ(c.n_layers, 4u);
  EXPECT_EQ(c.n_heads, 4u);
  EXPECT_EQ(c.d_ff, 256u);
  EXPECT_EQ(c.max_seq_len, 128u);
}

TEST(ToyLmForward, InputValidation) {
  const auto ckpt = lm::init(tiny_config());
  const lm::Sequence bad_token{1, 16};
  EXPECT_THROW(lm::forward(ckpt, bad_token), tt::ArgumentError);
  EXPECT_THROW(lm::forward(ckpt, lm::Sequence{}), tt::ArgumentError);
  EXPECT_THROW(lm::forward(ckpt, lm::Sequence(13, 1)), tt::ArgumentError);
  const lm::CaptureRequest too_deep{3};
  EXPECT_THROW(lm::forward(ckpt, lm::Sequence{1, 2}, std::span(&too_deep, 1)), tt::ArgumentError);
  auto spec = spec_for(tiny_config(), 3, 1.0, 1);
  EXPECT_THROW(lm::forward(ckpt, lm::Sequence{1, 2}, {}, &spec), tt::ArgumentError);
  spec.layer = 1;
  spec.vector.direction.pop_back();
  EXPECT_THROW(lm::forward(ckpt, lm::Sequence{1, 2}, {}, &spec), tt::ArgumentError);
}

TEST(ToyLmForward, ZeroAlphaIsBitwiseNoOp) {
  const auto config = tiny_config();
  const auto ckpt = rough_checkpoint(config);
  const lm::Sequence toks{3, 1, 4, 1, 5};
  const std::vector<lm::CaptureRequest> caps{{0}, {1}, {2}};
  const auto plain = lm::forward(ckpt, toks, caps);
  for (std::uint64_t layer = 0; layer <= 2; ++layer) {
    const auto spec = spec_for(config, layer, 0.0, 9);
    const auto steered = lm::forward(ckpt, toks, caps, &spec);
    EXPECT_TRUE(bitwise_equal(plain.logits, steered.logits));
    for (std::size_t c = 0; c < caps.size(); ++c) EXPECT_TRUE(bitwise_equal(plain.captures[c], steered.captures[c]));
  }
}

TEST(ToyLmForward, LayerZeroIsEmbeddingSum) {
  const auto config = tiny_config();
  const auto ckpt = rough_checkpoint(config);
  const lm::Sequence toks{7, 2, 9};
  const lm::CaptureRequest cap{0};
  const auto r = lm::forward(ckpt, toks, std::span(&cap, 1));
  const auto& tok = ckpt.parameters.at("tok_emb").data;
  const auto& pos = ckpt.parameters.at("pos_emb").data;
  for (std::size_t j = 0; j < config.d_model; ++j) {
    EXPECT_EQ(r.captures[0][j], tok[9 * config.d_model + j] + pos[2 * config.d_model + j]);
  }
  // Changing a deep parameter leaves layer 0 untouched.
  auto altered = ckpt;
  for (auto& v : altered.parameters.at("blocks.1.mlp.w2").data) v += 1.0f;
  EXPECT_TRUE(bitwise_equal(lm::forward(altered, toks, std::span(&cap, 1)).captures[0], r.captures[0]));
}

TEST(ToyLmForward, CaptureSeesSteeredStream) {
  const auto config = tiny_config();
  const auto ckpt = rough_checkpoint(config);
  const lm::Sequence toks{1, 2, 3, 4};
  for (std::uint64_t layer = 0; layer <= 2; ++layer) {
    const lm::CaptureRequest cap{layer};
    auto h = lm::forward(ckpt, toks, std::span(&cap, 1)).captures[0];
    const auto spec = spec_for(config, layer, 1.7, layer + 1);
    const auto steered = lm::forward(ckpt, toks, std::span(&cap, 1), &spec).captures[0];
    tt::apply_intervention_inplace(h, spec);
    EXPECT_TRUE(bitwise_equal(steered, h)) << layer;
  }
}

TEST(ToyLmForward, InterventionLocality) {
  const auto config = tiny_config();
  const auto ckpt = rough_checkpoint(config);
  const lm::Sequence toks{5, 6, 7, 8, 9};
  const std::vector<lm::CaptureRequest> caps{{0}, {1}, {2}};
  const auto plain = lm::forward(ckpt, toks, caps);
  const auto spec = spec_for(config, 1, 2.0, 4);
  const auto steered = lm::forward(ckpt, toks, caps, &spec);
  EXPECT_TRUE(bitwise_equal(plain.captures[0], steered.captures[0]));
  EXPECT_FALSE(bitwise_equal(plain.captures[1], steered.captures[1]));
  EXPECT_FALSE(bitwise_equal(plain.captures[2], steered.captures[2]));
  EXPECT_FALSE(bitwise_equal(plain.logits, steered.logits));
}

TEST(ToyLmForward, Causality) {
  const auto config = tiny_config();
  const auto ckpt = rough_checkpoint(config);
  const lm::Sequence a{1, 2, 3, 4, 5, 6, 7, 8};
  lm::Sequence b = a;
  for (std::size_t i = 4; i < b.size(); ++i) b[i] = 15 - b[i];
  const auto la = lm::position_logits(ckpt, a);
  const auto lb = lm::position_logits(ckpt, b);
  const std::size_t V = config.vocab_size;
  ASSERT_EQ(la.size(), a.size() * V);
  EXPECT_EQ(std::memcmp(la.data(), lb.data(), 4 * V * sizeof(float)), 0);
  EXPECT_NE(std::memcmp(la.data() + 4 * V, lb.data() + 4 * V, V * sizeof(float)), 0);
  // The final row agrees with forward().
  const auto last = lm::forward(ckpt, a).logits;
  EXPECT_EQ(std::memcmp(last.data(), la.data() + 7 * V, V * sizeof(float)), 0);
}

TEST(ToyLmGenerate, Basics) {
  const auto config = tiny_config();
  const auto ckpt = rough_checkpoint(config);
  const lm::Sequence prompt{2, 3};
  EXPECT_EQ(lm::generate(ckpt, prompt, 0), prompt);
  const auto g1 = lm::generate(ckpt, prompt, 6);
  EXPECT_EQ(g1.size(), 8u);
  EXPECT_EQ(g1, lm::generate(ckpt, prompt, 6));
  const auto zero = spec_for(config, 1, 0.0, 3);
  EXPECT_EQ(lm::generate(ckpt, prompt, 6, &zero), g1);
  // Each token is the argmax of the previous forward pass.
  const auto logits = lm::forward(ckpt, prompt).logits;
  EXPECT_EQ(g1[2], static_cast<lm::Token>(std::max_element(logits.begin(), logits.end()) - logits.begin()));
}

TEST(ToyLmTrain, GradientMatchesFiniteDifferences) {
  const auto config = tiny_config();
  const auto ckpt = rough_checkpoint(config);
  const std::vector<lm::Sequence> batch{{1, 5, 2, 9, 3, 3}, {4, 4, 7, 0}};
  const auto grad = lm::loss_gradient(ckpt, batch);
  tt::Rng rng(8);
  int checked = 0;
  for (const auto& [name, tensor] : ckpt.parameters) {
    for (int k = 0; k < 4; ++k) {
      const std::size_t idx = static_cast<std::size_t>(rng.below(tensor.data.size()));
      auto plus = ckpt;
      auto minus = ckpt;
      const float h = 1e-2f;
      plus.parameters.at(name).data[idx] += h;
      minus.parameters.at(name).data[idx] -= h;
      const double step = static_cast<double>(plus.parameters.at(name).data[idx]) -
                          static_cast<double>(minus.parameters.at(name).data[idx]);
      const double fd = (lm::mean_cross_entropy(plus, batch) - lm::mean_cross_entropy(minus, batch)) / step;
      const double an = grad.at(name).data[idx];
      EXPECT_NEAR(an, fd, 2e-3 + 2e-2 * std::abs(fd)) << name << "[" << idx << "]";
      ++checked;
    }
  }
  EXPECT_GT(checked, 40);
}

TEST(ToyLmTrain, CheckpointSchedule) {
  const auto ckpt = lm::init(tiny_config());
  const auto corpus = repeat_corpus({1, 2}, 8, 4);
  const auto none = lm::train(ckpt, corpus, 0, 50, {}, 1);
  ASSERT_EQ(none.checkpoints.size(), 1u);
  EXPECT_EQ(none.checkpoints[0].parameters, ckpt.parameters);
  const auto r = lm::train(ckpt, corpus, 200, 50, {}, 1);
  ASSERT_EQ(r.checkpoints.size(), 5u);
  for (std::size_t i = 0; i < r.checkpoints.size(); ++i) EXPECT_EQ(r.checkpoints[i].step, 50 * i);
  EXPECT_EQ(r.losses.size(), 200u);
  const auto odd = lm::train(ckpt, corpus, 70, 50, {}, 1);
  ASSERT_EQ(odd.checkpoints.size(), 3u);
  EXPECT_EQ(odd.checkpoints.back().step, 70u);
}

TEST(ToyLmTrain, Deterministic) {
  const auto ckpt = lm::init(tiny_config());
  const auto corpus = repeat_corpus({1, 2, 3}, 9, 6);
  lm::OptimizerConfig adam;
  adam.kind = lm::OptimizerConfig::Kind::adam;
  adam.learning_rate = 1e-2;
  const auto a = lm::train(ckpt, corpus, 20, 10, adam, 4);
  const auto b = lm::train(ckpt, corpus, 20, 10, adam, 4);
  EXPECT_EQ(a.checkpoints.back().parameters, b.checkpoints.back().parameters);
  EXPECT_EQ(a.losses, b.losses);
}

TEST(ToyLmTrain, Errors) {
  const auto ckpt = lm::init(tiny_config());
  EXPECT_THROW(lm::train(ckpt, {}, 10, 5, {}, 0), tt::ArgumentError);
  const auto corpus = repeat_corpus({1, 2}, 4, 2);
  EXPECT_THROW(lm::train(ckpt, corpus, 10, 0, {}, 0), tt::ArgumentError);
}

TEST(ToyLmTrain, LossDecreasesOnTwoSymbolPattern) {
  const auto ckpt = lm::init(tt::testing::small_config(2));
  const auto corpus = repeat_corpus({'a', 'b'}, 16, 8);
  const auto r = lm::train(ckpt, corpus, 200, 50, {}, 3);
  EXPECT_LT(lm::mean_cross_entropy(r.checkpoints.back(), corpus),
            lm::mean_cross_entropy(r.checkpoints.front(), corpus));
}

TEST(ToyLmPerplexity, UntrainedNearVocabSize) {
  auto config = tiny_config(32);
  config.d_model = 16;
  config.max_seq_len = 32;
  const auto ckpt = lm::init(config);
  tt::Rng rng(12);
  std::vector<lm::Sequence> corpus(330, lm::Sequence(32));
  for (auto& s : corpus)
    for (auto& t : s) t = static_cast<lm::Token>(rng.below(32));
  const double ppl = lm::perplexity(ckpt, corpus);
  EXPECT_GE(ppl, 0.9 * 32);
  EXPECT_LE(ppl, 1.1 * 32);
}

TEST(ToyLmPerplexity, RepeatedTokenLearnedToNearOne) {
  const auto ckpt = lm::init(tt::testing::small_config(4));
  const auto corpus = repeat_corpus({'q'}, 16, 4);
  lm::OptimizerConfig opt;
  const auto r = lm::train(ckpt, corpus, 300, 300, opt, 5);
  const double ppl = lm::perplexity(r.checkpoints.back(), corpus);
  EXPECT_LE(ppl, 1.2);
  EXPECT_GE(ppl, 1.0);
}

TEST(ToyLmPerplexity, AtLeastOneAndErrors) {
  const auto ckpt = rough_checkpoint(tiny_config());
  const std::vector<lm::Sequence> corpus{{1, 2, 3}, {4, 5}};
  EXPECT_GE(lm::perplexity(ckpt, corpus), 1.0);
  EXPECT_THROW(lm::perplexity(ckpt, {}), tt::ArgumentError);
  const std::vector<lm::Sequence> singles{{1}, {2}};
  EXPECT_THROW(lm::perplexity(ckpt, singles), tt::ArgumentError);
}

TEST(ToyLmIo, CheckpointRoundTripBitwise) {
  TempDir dir;
  const auto config = tiny_config();
  auto ckpt = rough_checkpoint(config);
  ckpt.step = 150;
  lm::save_checkpoint(ckpt, dir.path() / "ck");
  EXPECT_TRUE(std::filesystem::exists(dir.path() / "ck" / "index.json"));
  const auto back = lm::load_checkpoint(dir.path() / "ck");
  EXPECT_EQ(back.config, config);
  EXPECT_EQ(back.step, 150u);
  EXPECT_EQ(back.parameters, ckpt.parameters);
  const lm::Sequence toks{1, 2, 3};
  EXPECT_TRUE(bitwise_equal(lm::forward(back, toks).logits, lm::forward(ckpt, toks).logits));
  EXPECT_THROW(lm::load_checkpoint(dir.path() / "missing"), tt::IoError);
}

TEST(ToyLmIo, Tokenizer) {
  const auto t = lm::encode_text("h\xc3\xa9!");
  EXPECT_EQ(t, (lm::Sequence{'h', 0xc3, 0xa9, '!'}));
  EXPECT_EQ(lm::decode_text(t), "h\xc3\xa9!");
}

TEST(ToyLmExtract, ShapeDeterminismAndAlignment) {
  TempDir dir;
  const auto config = tiny_config(256);
  const auto ckpt = rough_checkpoint(config);
  tt::LabeledCorpus corpus;
  for (int i = 0; i < 10; ++i) {
    corpus.sentences.push_back("sentence " + std::to_string(i));
    corpus.labels.push_back(static_cast<std::uint8_t>(i % 2));
  }
  const std::vector<std::uint64_t> layers{1, 2};
  const std::vector<lm::ToyLmCheckpoint> ckpts{ckpt};
  const auto r1 = lm::extract_activations(ckpts, corpus, layers, dir.path() / "a", "toy");
  const auto r2 = lm::extract_activations(ckpts, corpus, layers, dir.path() / "b", "toy");
  ASSERT_EQ(r1.entries.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    const auto ds = tt::read_actv_file(r1.entries[i].path);
    EXPECT_EQ(ds.rows(), 10u);
    EXPECT_EQ(ds.cols(), config.d_model);
    EXPECT_EQ(ds.meta().token_position, "last_token");
    EXPECT_EQ(std::vector<std::uint8_t>(ds.labels().begin(), ds.labels().end()), corpus.labels);
    std::ifstream fa(r1.entries[i].path, std::ios::binary);
    std::ifstream fb(r2.entries[i].path, std::ios::binary);
    EXPECT_EQ(std::string(std::istreambuf_iterator<char>(fa), {}), std::string(std::istreambuf_iterator<char>(fb), {}));
  }
  EXPECT_EQ(tt::validate_manifest_file(r1.manifest_path).size(), 2u);

  // An over-long and an empty sentence are dropped from every layer.
  corpus.sentences[3] = std::string(40, 'x');
  corpus.sentences[6] = "";
  const auto r3 = lm::extract_activations(ckpts, corpus, layers, dir.path() / "c", "toy");
  ASSERT_EQ(r3.skipped.size(), 2u);
  EXPECT_EQ(r3.skipped[0].index, 3u);
  EXPECT_EQ(r3.skipped[1].index, 6u);
  const auto l1 = tt::read_actv_file(r3.entries[0].path);
  const auto l2 = tt::read_actv_file(r3.entries[1].path);
  EXPECT_EQ(l1.rows(), 8u);
  EXPECT_EQ(l2.rows(), 8u);
  EXPECT_EQ(l1.label(3), corpus.labels[4]);
}

TEST(ToyLmExtract, RowsMatchDirectForward) {
  const auto config = tiny_config(256);
  const auto ckpt = rough_checkpoint(config);
  tt::LabeledCorpus corpus;
  corpus.sentences = {"ab", "cde", "f"};
  corpus.labels = {0, 1, 0};
  const std::vector<std::uint64_t> layers{2};
  const auto cap = lm::capture_activations(ckpt, corpus, layers, "toy");
  for (std::size_t i = 0; i < 3; ++i) {
    const lm::CaptureRequest req{2};
    const auto direct = lm::forward(ckpt, lm::encode_text(corpus.sentences[i]), std::span(&req, 1)).captures[0];
    const auto row = cap.per_layer[0].row(i);
    EXPECT_TRUE(bitwise_equal(direct, std::vector<float>(row.begin(), row.end())));
  }
}
