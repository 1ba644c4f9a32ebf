#include <cmath>

#include "toylm_internal.hpp"
#include "tracetrust/errors.hpp"
#include "tracetrust/rng.hpp"

namespace tracetrust::toylm {

namespace {

void check_sequence(const ToyLmConfig& config, const Sequence& seq) {
  if (seq.size() < 2) throw ArgumentError("training sequences need at least two tokens");
  detail::check_tokens(config, std::span<const Token>(seq.data(), seq.size() - 1));
  detail::check_tokens(config, std::span<const Token>(seq.data() + 1, seq.size() - 1));
}

// Accumulates the gradient of the mean cross-entropy over `batch` into grad.
double accumulate_gradient(const ToyLmConfig& config, const detail::ConstWeights& weights,
                           std::span<const Sequence* const> batch, std::vector<float>& grad) {
  std::size_t predictions = 0;
  for (const Sequence* seq : batch) predictions += seq->size() - 1;
  const double scale = 1.0 / static_cast<double>(predictions);

  const auto grad_view = detail::bind_mutable(config, grad.data());
  detail::ForwardCache cache;
  detail::ForwardOptions options;
  options.all_logits = true;
  double loss = 0.0;
  for (const Sequence* seq : batch) {
    const std::span<const Token> inputs(seq->data(), seq->size() - 1);
    const std::span<const Token> targets(seq->data() + 1, seq->size() - 1);
    detail::forward_pass(config, weights, inputs, options, cache);
    loss += detail::backward_pass(config, weights, inputs, targets, cache, scale, grad_view);
  }
  return loss * scale;
}

class Optimizer {
 public:
  Optimizer(const OptimizerConfig& config, std::size_t size) : config_(config) {
    if (config.kind == OptimizerConfig::Kind::adam) {
      m_.assign(size, 0.0F);
      v_.assign(size, 0.0F);
    } else if (config.momentum != 0.0) {
      m_.assign(size, 0.0F);
    }
  }

  void step(std::vector<float>& params, const std::vector<float>& grad) {
    ++t_;
    const auto lr = static_cast<float>(config_.learning_rate);
    if (config_.kind == OptimizerConfig::Kind::sgd) {
      if (m_.empty()) {
        for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr * grad[i];
      } else {
        const auto mu = static_cast<float>(config_.momentum);
        for (std::size_t i = 0; i < params.size(); ++i) {
          m_[i] = mu * m_[i] + grad[i];
          params[i] -= lr * m_[i];
        }
      }
      return;
    }
    const auto b1 = static_cast<float>(config_.beta1);
    const auto b2 = static_cast<float>(config_.beta2);
    const auto eps = static_cast<float>(config_.epsilon);
    const auto c1 = static_cast<float>(1.0 - std::pow(config_.beta1, static_cast<double>(t_)));
    const auto c2 = static_cast<float>(1.0 - std::pow(config_.beta2, static_cast<double>(t_)));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = b1 * m_[i] + (1.0F - b1) * grad[i];
      v_[i] = b2 * v_[i] + (1.0F - b2) * grad[i] * grad[i];
      const float mhat = m_[i] / c1;
      const float vhat = v_[i] / c2;
      params[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }

 private:
  OptimizerConfig config_;
  std::vector<float> m_;
  std::vector<float> v_;
  std::uint64_t t_ = 0;
};

void clip(std::vector<float>& grad, double max_norm) {
  if (max_norm <= 0.0) return;
  double sq = 0.0;
  for (const float g : grad) sq += static_cast<double>(g) * g;
  const double norm = std::sqrt(sq);
  if (norm <= max_norm) return;
  const auto factor = static_cast<float>(max_norm / norm);
  for (auto& g : grad) g *= factor;
}

}  // namespace

TrainResult train(const ToyLmCheckpoint& start, std::span<const Sequence> corpus, std::size_t steps,
                  std::size_t checkpoint_every, const OptimizerConfig& optimizer, std::uint64_t seed) {
  start.validate();
  if (corpus.empty()) throw ArgumentError("training corpus is empty");
  if (checkpoint_every == 0) throw ArgumentError("checkpoint_every must be positive");
  if (optimizer.batch_size == 0) throw ArgumentError("batch_size must be positive");
  if (!(optimizer.learning_rate > 0.0)) throw ArgumentError("learning rate must be positive");
  for (const Sequence& seq : corpus) check_sequence(start.config, seq);

  TrainResult result;
  result.checkpoints.push_back(start);
  if (steps == 0) return result;

  const ToyLmConfig& config = start.config;
  detail::FlatParameters flat = detail::flatten(start);
  std::vector<float> grad(flat.values.size());
  Optimizer opt(optimizer, flat.values.size());
  Rng rng(seed);
  std::vector<const Sequence*> batch(optimizer.batch_size);

  for (std::size_t s = 1; s <= steps; ++s) {
    for (auto& b : batch) b = &corpus[static_cast<std::size_t>(rng.below(corpus.size()))];
    std::fill(grad.begin(), grad.end(), 0.0F);
    const auto weights = detail::bind(config, flat.values.data());
    result.losses.push_back(accumulate_gradient(config, weights, batch, grad));
    clip(grad, optimizer.clip_norm);
    opt.step(flat.values, grad);

    if (s % checkpoint_every == 0 || s == steps) {
      ToyLmCheckpoint ckpt;
      ckpt.config = config;
      ckpt.step = start.step + s;
      ckpt.parameters = detail::unflatten(config, flat.values);
      ckpt.validate();
      result.checkpoints.push_back(std::move(ckpt));
    }
  }
  return result;
}

ParameterMap loss_gradient(const ToyLmCheckpoint& ckpt, std::span<const Sequence> batch) {
  ckpt.validate();
  if (batch.empty()) throw ArgumentError("gradient batch is empty");
  std::vector<const Sequence*> ptrs;
  for (const Sequence& seq : batch) {
    check_sequence(ckpt.config, seq);
    ptrs.push_back(&seq);
  }
  const detail::FlatParameters flat = detail::flatten(ckpt);
  std::vector<float> grad(flat.values.size(), 0.0F);
  accumulate_gradient(ckpt.config, detail::bind(ckpt.config, flat.values.data()), ptrs, grad);
  return detail::unflatten(ckpt.config, grad);
}

}  // namespace tracetrust::toylm
