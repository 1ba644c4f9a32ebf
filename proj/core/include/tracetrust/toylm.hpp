#pragma once

// A miniature decoder-only transformer used as a desk-scale stand-in for a
// pre-training checkpoint series.
//
// Architecture: learned token + positional embeddings, n_layers pre-norm
// blocks (causal multi-head self-attention, GELU MLP), final LayerNorm and an
// output head tied to the token embedding. Tokens are UTF-8 bytes.
//
// Layer numbering for capture and intervention: layer 0 is the embedding
// output, layer l (1..n_layers) is the residual stream after block l.

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tracetrust/actv.hpp"
#include "tracetrust/datasets.hpp"
#include "tracetrust/steering.hpp"

namespace tracetrust::toylm {

using Token = std::uint32_t;
using Sequence = std::vector<Token>;

struct ToyLmConfig {
  std::uint32_t vocab_size = 256;
  std::uint32_t d_model = 64;
  std::uint32_t n_layers = 4;
  std::uint32_t n_heads = 4;
  std::uint32_t d_ff = 256;
  std::uint32_t max_seq_len = 128;
  std::uint64_t seed = 0;

  /// Throws ArgumentError when a size is zero, vocab_size < 2 or d_model is
  /// not divisible by n_heads.
  void validate() const;
  bool operator==(const ToyLmConfig&) const = default;
};

struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<float> data;

  bool operator==(const Tensor&) const = default;
};

using ParameterMap = std::map<std::string, Tensor>;

struct ToyLmCheckpoint {
  ToyLmConfig config;
  std::uint64_t step = 0;
  ParameterMap parameters;

  /// "step_000123".
  std::string id() const;
  /// Throws ValidationError when a tensor is missing, misshapen or non-finite.
  void validate() const;
};

/// Parameter names and shapes, in canonical order.
std::vector<std::pair<std::string, std::vector<std::size_t>>> parameter_layout(const ToyLmConfig& config);

/// Seeded initialisation at step 0; bitwise identical for identical configs.
ToyLmCheckpoint init(const ToyLmConfig& config);

struct CaptureRequest {
  std::uint64_t layer = 0;  // last-token residual stream
};

struct ForwardResult {
  std::vector<float> logits;                  // final position, vocab_size
  std::vector<std::vector<float>> captures;   // one per request, d_model each
};

/// Runs the model over `tokens` (1..max_seq_len ids below vocab_size). With
/// an intervention at layer l, h + alpha * v replaces the residual stream
/// after layer l at every position; captures at layer l see the steered
/// stream.
ForwardResult forward(const ToyLmCheckpoint& ckpt, std::span<const Token> tokens,
                      std::span<const CaptureRequest> captures = {},
                      const InterventionSpec* intervention = nullptr);

/// Logits for every position, row-major (tokens.size() x vocab_size). Row t
/// depends only on tokens[0..t].
std::vector<float> position_logits(const ToyLmCheckpoint& ckpt, std::span<const Token> tokens,
                                   const InterventionSpec* intervention = nullptr);

/// Greedy decoding (lowest token id wins ties). Returns prompt + n_steps
/// tokens; the intervention applies at every step.
Sequence generate(const ToyLmCheckpoint& ckpt, std::span<const Token> prompt, std::size_t n_steps,
                  const InterventionSpec* intervention = nullptr);

/// Mean next-token cross-entropy in nats over every predicted position.
double mean_cross_entropy(const ToyLmCheckpoint& ckpt, std::span<const Sequence> corpus,
                          const InterventionSpec* intervention = nullptr);

/// exp(mean_cross_entropy). Sequences shorter than two tokens contribute no
/// predictions; throws ArgumentError when nothing is predicted.
double perplexity(const ToyLmCheckpoint& ckpt, std::span<const Sequence> corpus,
                  const InterventionSpec* intervention = nullptr);

// ---------------------------------------------------------------------------
// Training

struct OptimizerConfig {
  enum class Kind { sgd, adam };
  Kind kind = Kind::sgd;
  double learning_rate = 0.1;
  double momentum = 0.0;  // sgd only
  double beta1 = 0.9;     // adam only
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t batch_size = 8;
  /// Global gradient-norm clip; zero disables clipping.
  double clip_norm = 1.0;
};

struct TrainResult {
  /// The starting checkpoint, then one every checkpoint_every steps, then the
  /// final step if it is not already a multiple.
  std::vector<ToyLmCheckpoint> checkpoints;
  /// Mini-batch loss before each update.
  std::vector<double> losses;
};

/// Next-token cross-entropy training on sequences of 2..max_seq_len+1
/// tokens; batches are drawn with replacement from a seeded stream.
TrainResult train(const ToyLmCheckpoint& start, std::span<const Sequence> corpus, std::size_t steps,
                  std::size_t checkpoint_every, const OptimizerConfig& optimizer, std::uint64_t seed);

/// Parameter gradients of mean_cross_entropy (for gradient checks).
ParameterMap loss_gradient(const ToyLmCheckpoint& ckpt, std::span<const Sequence> batch);

// ---------------------------------------------------------------------------
// Tokenizer, persistence and activation extraction

/// Byte-level tokenizer: each UTF-8 byte is a token id in [0, 256).
Sequence encode_text(std::string_view text);
/// Ids >= 256 are dropped.
std::string decode_text(std::span<const Token> tokens);

/// Directory with index.json and one ACTV1 container per tensor.
void save_checkpoint(const ToyLmCheckpoint& ckpt, const std::filesystem::path& dir);
ToyLmCheckpoint load_checkpoint(const std::filesystem::path& dir);

struct SkippedRow {
  std::size_t index = 0;
  std::string reason;
};

struct LayerCapture {
  std::vector<ActivationDataset> per_layer;  // same order as the layer list
  std::vector<std::size_t> kept_rows;        // corpus indices present in every dataset
  std::vector<SkippedRow> skipped;
};

/// In-memory last-token activations of one checkpoint. Sentences that are
/// empty or exceed max_seq_len after tokenisation are skipped for all layers.
LayerCapture capture_activations(const ToyLmCheckpoint& ckpt, const LabeledCorpus& corpus,
                                 std::span<const std::uint64_t> layers, const std::string& dataset_name,
                                 const std::string& label_semantics = {});

struct ExtractionResult {
  std::vector<ManifestEntry> entries;
  std::filesystem::path manifest_path;
  std::vector<SkippedRow> skipped;
};

/// Writes <out_dir>/<checkpoint id>_L<layer>.actv for every checkpoint and
/// layer plus <out_dir>/manifest.json. Rows are skipped consistently across
/// all checkpoints and layers.
ExtractionResult extract_activations(std::span<const ToyLmCheckpoint> ckpts, const LabeledCorpus& corpus,
                                     std::span<const std::uint64_t> layers, const std::filesystem::path& out_dir,
                                     const std::string& dataset_name, const std::string& label_semantics = {});

}  // namespace tracetrust::toylm
