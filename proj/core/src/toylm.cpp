#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "toylm_internal.hpp"
#include "tracetrust/errors.hpp"
#include "tracetrust/rng.hpp"

namespace tracetrust::toylm {

namespace detail {

namespace {

constexpr float kLayerNormEps = 1e-5F;

// y[t, :] += sum_k a[t, k] * w[k, :]
void matmul_acc(float* y, const float* a, const float* w, std::size_t rows, std::size_t inner, std::size_t cols) {
  for (std::size_t t = 0; t < rows; ++t) {
    float* yt = y + t * cols;
    const float* at = a + t * inner;
    for (std::size_t k = 0; k < inner; ++k) {
      const float s = at[k];
      const float* wk = w + k * cols;
      for (std::size_t n = 0; n < cols; ++n) yt[n] += s * wk[n];
    }
  }
}

// da[t, k] += sum_n dy[t, n] * w[k, n]
void matmul_bt_acc(float* da, const float* dy, const float* w, std::size_t rows, std::size_t inner,
                   std::size_t cols) {
  for (std::size_t t = 0; t < rows; ++t) {
    const float* dyt = dy + t * cols;
    float* dat = da + t * inner;
    for (std::size_t k = 0; k < inner; ++k) {
      const float* wk = w + k * cols;
      float s = 0.0F;
      for (std::size_t n = 0; n < cols; ++n) s += dyt[n] * wk[n];
      dat[k] += s;
    }
  }
}

// dw[k, :] += sum_t a[t, k] * dy[t, :]
void outer_acc(float* dw, const float* a, const float* dy, std::size_t rows, std::size_t inner, std::size_t cols) {
  for (std::size_t t = 0; t < rows; ++t) {
    const float* at = a + t * inner;
    const float* dyt = dy + t * cols;
    for (std::size_t k = 0; k < inner; ++k) {
      const float s = at[k];
      float* dwk = dw + k * cols;
      for (std::size_t n = 0; n < cols; ++n) dwk[n] += s * dyt[n];
    }
  }
}

void add_bias(float* y, const float* b, std::size_t rows, std::size_t cols) {
  for (std::size_t t = 0; t < rows; ++t) {
    for (std::size_t n = 0; n < cols; ++n) y[t * cols + n] += b[n];
  }
}

void sum_rows_acc(float* db, const float* dy, std::size_t rows, std::size_t cols) {
  for (std::size_t t = 0; t < rows; ++t) {
    for (std::size_t n = 0; n < cols; ++n) db[n] += dy[t * cols + n];
  }
}

void layer_norm(const float* x, const float* gain, const float* bias, float* xhat, float* rstd, float* y,
                std::size_t rows, std::size_t dim) {
  for (std::size_t t = 0; t < rows; ++t) {
    const float* xt = x + t * dim;
    double mean = 0.0;
    for (std::size_t j = 0; j < dim; ++j) mean += xt[j];
    mean /= static_cast<double>(dim);
    double var = 0.0;
    for (std::size_t j = 0; j < dim; ++j) {
      const double c = xt[j] - mean;
      var += c * c;
    }
    var /= static_cast<double>(dim);
    const auto r = static_cast<float>(1.0 / std::sqrt(var + kLayerNormEps));
    rstd[t] = r;
    for (std::size_t j = 0; j < dim; ++j) {
      const float h = (xt[j] - static_cast<float>(mean)) * r;
      xhat[t * dim + j] = h;
      y[t * dim + j] = h * gain[j] + bias[j];
    }
  }
}

void layer_norm_backward(const float* dy, const float* xhat, const float* rstd, const float* gain, float* dgain,
                         float* dbias, float* dx, std::size_t rows, std::size_t dim) {
  std::vector<float> dxhat(dim);
  for (std::size_t t = 0; t < rows; ++t) {
    const float* dyt = dy + t * dim;
    const float* ht = xhat + t * dim;
    float mean1 = 0.0F;
    float mean2 = 0.0F;
    for (std::size_t j = 0; j < dim; ++j) {
      dxhat[j] = dyt[j] * gain[j];
      dgain[j] += dyt[j] * ht[j];
      dbias[j] += dyt[j];
      mean1 += dxhat[j];
      mean2 += dxhat[j] * ht[j];
    }
    mean1 /= static_cast<float>(dim);
    mean2 /= static_cast<float>(dim);
    for (std::size_t j = 0; j < dim; ++j) dx[t * dim + j] += rstd[t] * (dxhat[j] - mean1 - ht[j] * mean2);
  }
}

constexpr float kGeluC = 0.7978845608028654F;  // sqrt(2 / pi)

float gelu(float x) { return 0.5F * x * (1.0F + std::tanh(kGeluC * (x + 0.044715F * x * x * x))); }

float gelu_grad(float x) {
  const float th = std::tanh(kGeluC * (x + 0.044715F * x * x * x));
  return 0.5F * (1.0F + th) + 0.5F * x * (1.0F - th * th) * kGeluC * (1.0F + 3.0F * 0.044715F * x * x);
}

void capture_if_requested(const ForwardOptions& options, std::uint64_t layer, const float* x, std::size_t rows,
                          std::size_t dim) {
  if (options.captured == nullptr) return;
  for (std::size_t i = 0; i < options.captures.size(); ++i) {
    if (options.captures[i].layer == layer) {
      const float* last = x + (rows - 1) * dim;
      (*options.captured)[i].assign(last, last + dim);
    }
  }
}

void intervene_if_requested(const ForwardOptions& options, std::uint64_t layer, float* x, std::size_t rows,
                            std::size_t dim) {
  if (options.intervention == nullptr || options.intervention->layer != layer) return;
  for (std::size_t t = 0; t < rows; ++t) apply_intervention_inplace({x + t * dim, dim}, *options.intervention);
}

template <typename P>
Weights<P> bind_impl(const ToyLmConfig& config, P flat) {
  const auto layout = parameter_layout(config);
  std::size_t offset = 0;
  std::size_t index = 0;
  auto next = [&]() {
    P p = flat + offset;
    std::size_t size = 1;
    for (const auto s : layout[index].second) size *= s;
    offset += size;
    ++index;
    return p;
  };
  Weights<P> w;
  w.tok_emb = next();
  w.pos_emb = next();
  w.blocks.resize(config.n_layers);
  for (auto& b : w.blocks) {
    b.ln1_g = next();
    b.ln1_b = next();
    b.wq = next();
    b.wk = next();
    b.wv = next();
    b.wo = next();
    b.ln2_g = next();
    b.ln2_b = next();
    b.w1 = next();
    b.b1 = next();
    b.w2 = next();
    b.b2 = next();
  }
  w.lnf_g = next();
  w.lnf_b = next();
  return w;
}

}  // namespace

FlatParameters flatten(const ToyLmCheckpoint& ckpt) {
  FlatParameters flat;
  for (const auto& [name, shape] : parameter_layout(ckpt.config)) {
    const auto it = ckpt.parameters.find(name);
    if (it == ckpt.parameters.end()) throw ValidationError("checkpoint lacks parameter " + name);
    if (it->second.shape != shape) throw ValidationError("parameter " + name + " has the wrong shape");
    flat.offsets.push_back(flat.values.size());
    flat.values.insert(flat.values.end(), it->second.data.begin(), it->second.data.end());
  }
  return flat;
}

ParameterMap unflatten(const ToyLmConfig& config, std::span<const float> values) {
  ParameterMap params;
  std::size_t offset = 0;
  for (const auto& [name, shape] : parameter_layout(config)) {
    std::size_t size = 1;
    for (const auto s : shape) size *= s;
    Tensor t;
    t.shape = shape;
    t.data.assign(values.begin() + static_cast<std::ptrdiff_t>(offset),
                  values.begin() + static_cast<std::ptrdiff_t>(offset + size));
    offset += size;
    params.emplace(name, std::move(t));
  }
  return params;
}

ConstWeights bind(const ToyLmConfig& config, const float* flat) { return bind_impl(config, flat); }
MutableWeights bind_mutable(const ToyLmConfig& config, float* flat) { return bind_impl(config, flat); }

ConstWeights bind(const ToyLmCheckpoint& ckpt) {
  const auto& p = ckpt.parameters;
  auto get = [&](const std::string& name) -> const float* {
    const auto it = p.find(name);
    if (it == p.end()) throw ValidationError("checkpoint lacks parameter " + name);
    return it->second.data.data();
  };
  ConstWeights w;
  w.tok_emb = get("tok_emb");
  w.pos_emb = get("pos_emb");
  w.blocks.resize(ckpt.config.n_layers);
  for (std::size_t i = 0; i < w.blocks.size(); ++i) {
    const std::string pre = "blocks." + std::to_string(i) + ".";
    auto& b = w.blocks[i];
    b.ln1_g = get(pre + "ln1.gain");
    b.ln1_b = get(pre + "ln1.bias");
    b.wq = get(pre + "attn.wq");
    b.wk = get(pre + "attn.wk");
    b.wv = get(pre + "attn.wv");
    b.wo = get(pre + "attn.wo");
    b.ln2_g = get(pre + "ln2.gain");
    b.ln2_b = get(pre + "ln2.bias");
    b.w1 = get(pre + "mlp.w1");
    b.b1 = get(pre + "mlp.b1");
    b.w2 = get(pre + "mlp.w2");
    b.b2 = get(pre + "mlp.b2");
  }
  w.lnf_g = get("ln_f.gain");
  w.lnf_b = get("ln_f.bias");
  return w;
}

void check_tokens(const ToyLmConfig& config, std::span<const Token> tokens) {
  if (tokens.empty()) throw ArgumentError("token sequence is empty");
  if (tokens.size() > config.max_seq_len) {
    throw ArgumentError("sequence length " + std::to_string(tokens.size()) + " exceeds max_seq_len " +
                        std::to_string(config.max_seq_len));
  }
  for (const Token t : tokens) {
    if (t >= config.vocab_size) {
      throw ArgumentError("token id " + std::to_string(t) + " out of range for vocab " +
                          std::to_string(config.vocab_size));
    }
  }
}

void forward_pass(const ToyLmConfig& config, const ConstWeights& w, std::span<const Token> tokens,
                  const ForwardOptions& options, ForwardCache& cache) {
  const std::size_t T = tokens.size();
  const std::size_t D = config.d_model;
  const std::size_t F = config.d_ff;
  const std::size_t H = config.n_heads;
  const std::size_t V = config.vocab_size;
  const std::size_t hd = D / H;
  const float scale = 1.0F / std::sqrt(static_cast<float>(hd));

  cache.length = T;
  cache.x0.assign(T * D, 0.0F);
  for (std::size_t t = 0; t < T; ++t) {
    const float* te = w.tok_emb + static_cast<std::size_t>(tokens[t]) * D;
    const float* pe = w.pos_emb + t * D;
    for (std::size_t j = 0; j < D; ++j) cache.x0[t * D + j] = te[j] + pe[j];
  }
  intervene_if_requested(options, 0, cache.x0.data(), T, D);
  capture_if_requested(options, 0, cache.x0.data(), T, D);

  std::vector<float> x = cache.x0;
  cache.blocks.resize(w.blocks.size());
  for (std::size_t l = 0; l < w.blocks.size(); ++l) {
    const auto& b = w.blocks[l];
    BlockCache& c = cache.blocks[l];
    c.x_in = x;

    c.xhat1.resize(T * D);
    c.rstd1.resize(T);
    c.a.resize(T * D);
    layer_norm(c.x_in.data(), b.ln1_g, b.ln1_b, c.xhat1.data(), c.rstd1.data(), c.a.data(), T, D);

    c.q.assign(T * D, 0.0F);
    c.k.assign(T * D, 0.0F);
    c.v.assign(T * D, 0.0F);
    matmul_acc(c.q.data(), c.a.data(), b.wq, T, D, D);
    matmul_acc(c.k.data(), c.a.data(), b.wk, T, D, D);
    matmul_acc(c.v.data(), c.a.data(), b.wv, T, D, D);

    c.probs.assign(H * T * T, 0.0F);
    c.att.assign(T * D, 0.0F);
    for (std::size_t h = 0; h < H; ++h) {
      for (std::size_t t = 0; t < T; ++t) {
        float* p = c.probs.data() + (h * T + t) * T;
        const float* qt = c.q.data() + t * D + h * hd;
        float maxv = -INFINITY;
        for (std::size_t s = 0; s <= t; ++s) {
          const float* ks = c.k.data() + s * D + h * hd;
          float dot = 0.0F;
          for (std::size_t j = 0; j < hd; ++j) dot += qt[j] * ks[j];
          p[s] = dot * scale;
          maxv = std::max(maxv, p[s]);
        }
        float sum = 0.0F;
        for (std::size_t s = 0; s <= t; ++s) {
          p[s] = std::exp(p[s] - maxv);
          sum += p[s];
        }
        const float inv = 1.0F / sum;
        float* out = c.att.data() + t * D + h * hd;
        for (std::size_t s = 0; s <= t; ++s) {
          p[s] *= inv;
          const float* vs = c.v.data() + s * D + h * hd;
          for (std::size_t j = 0; j < hd; ++j) out[j] += p[s] * vs[j];
        }
      }
    }

    c.x_mid = c.x_in;
    matmul_acc(c.x_mid.data(), c.att.data(), b.wo, T, D, D);

    c.xhat2.resize(T * D);
    c.rstd2.resize(T);
    c.m.resize(T * D);
    layer_norm(c.x_mid.data(), b.ln2_g, b.ln2_b, c.xhat2.data(), c.rstd2.data(), c.m.data(), T, D);

    c.u.assign(T * F, 0.0F);
    matmul_acc(c.u.data(), c.m.data(), b.w1, T, D, F);
    add_bias(c.u.data(), b.b1, T, F);
    c.g.resize(T * F);
    for (std::size_t i = 0; i < T * F; ++i) c.g[i] = gelu(c.u[i]);

    x = c.x_mid;
    matmul_acc(x.data(), c.g.data(), b.w2, T, F, D);
    add_bias(x.data(), b.b2, T, D);

    intervene_if_requested(options, l + 1, x.data(), T, D);
    capture_if_requested(options, l + 1, x.data(), T, D);
  }

  cache.x_final = std::move(x);
  cache.xhatf.resize(T * D);
  cache.rstdf.resize(T);
  cache.f.resize(T * D);
  layer_norm(cache.x_final.data(), w.lnf_g, w.lnf_b, cache.xhatf.data(), cache.rstdf.data(), cache.f.data(), T, D);

  const std::size_t first = options.all_logits ? 0 : T - 1;
  const std::size_t rows = T - first;
  cache.logits.assign(rows * V, 0.0F);
  for (std::size_t r = 0; r < rows; ++r) {
    const float* ft = cache.f.data() + (first + r) * D;
    float* lt = cache.logits.data() + r * V;
    for (std::size_t v = 0; v < V; ++v) {
      const float* e = w.tok_emb + v * D;
      float s = 0.0F;
      for (std::size_t j = 0; j < D; ++j) s += ft[j] * e[j];
      lt[v] = s;
    }
  }
}

double backward_pass(const ToyLmConfig& config, const ConstWeights& w, std::span<const Token> tokens,
                     std::span<const Token> targets, const ForwardCache& cache, double scale,
                     const MutableWeights& grad) {
  const std::size_t T = cache.length;
  const std::size_t D = config.d_model;
  const std::size_t F = config.d_ff;
  const std::size_t H = config.n_heads;
  const std::size_t V = config.vocab_size;
  const std::size_t hd = D / H;
  const float att_scale = 1.0F / std::sqrt(static_cast<float>(hd));

  // Cross-entropy and d(loss)/d(logits).
  double loss = 0.0;
  std::vector<float> dlogits(T * V);
  for (std::size_t t = 0; t < T; ++t) {
    const float* lt = cache.logits.data() + t * V;
    const float maxv = *std::max_element(lt, lt + V);
    double sum = 0.0;
    for (std::size_t v = 0; v < V; ++v) sum += std::exp(static_cast<double>(lt[v] - maxv));
    const double lse = std::log(sum) + maxv;
    loss += lse - lt[targets[t]];
    float* dt = dlogits.data() + t * V;
    for (std::size_t v = 0; v < V; ++v) {
      dt[v] = static_cast<float>(std::exp(static_cast<double>(lt[v]) - lse) * scale);
    }
    dt[targets[t]] -= static_cast<float>(scale);
  }

  // Tied output head.
  std::vector<float> df(T * D, 0.0F);
  for (std::size_t t = 0; t < T; ++t) {
    const float* ft = cache.f.data() + t * D;
    float* dft = df.data() + t * D;
    for (std::size_t v = 0; v < V; ++v) {
      const float cv = dlogits[t * V + v];
      const float* e = w.tok_emb + v * D;
      float* de = grad.tok_emb + v * D;
      for (std::size_t j = 0; j < D; ++j) {
        dft[j] += cv * e[j];
        de[j] += cv * ft[j];
      }
    }
  }

  std::vector<float> dx(T * D, 0.0F);
  layer_norm_backward(df.data(), cache.xhatf.data(), cache.rstdf.data(), w.lnf_g, grad.lnf_g, grad.lnf_b,
                      dx.data(), T, D);

  std::vector<float> dg;
  std::vector<float> dm;
  std::vector<float> dx_mid;
  std::vector<float> datt;
  std::vector<float> dq;
  std::vector<float> dk;
  std::vector<float> dv;
  std::vector<float> da;
  std::vector<float> dp(T);
  for (std::size_t l = w.blocks.size(); l-- > 0;) {
    const auto& b = w.blocks[l];
    const auto& gb = grad.blocks[l];
    const BlockCache& c = cache.blocks[l];

    // MLP.
    sum_rows_acc(gb.b2, dx.data(), T, D);
    outer_acc(gb.w2, c.g.data(), dx.data(), T, F, D);
    dg.assign(T * F, 0.0F);
    matmul_bt_acc(dg.data(), dx.data(), b.w2, T, F, D);
    for (std::size_t i = 0; i < T * F; ++i) dg[i] *= gelu_grad(c.u[i]);
    sum_rows_acc(gb.b1, dg.data(), T, F);
    outer_acc(gb.w1, c.m.data(), dg.data(), T, D, F);
    dm.assign(T * D, 0.0F);
    matmul_bt_acc(dm.data(), dg.data(), b.w1, T, D, F);

    dx_mid = dx;
    layer_norm_backward(dm.data(), c.xhat2.data(), c.rstd2.data(), b.ln2_g, gb.ln2_g, gb.ln2_b, dx_mid.data(), T,
                        D);

    // Attention output projection.
    outer_acc(gb.wo, c.att.data(), dx_mid.data(), T, D, D);
    datt.assign(T * D, 0.0F);
    matmul_bt_acc(datt.data(), dx_mid.data(), b.wo, T, D, D);

    dq.assign(T * D, 0.0F);
    dk.assign(T * D, 0.0F);
    dv.assign(T * D, 0.0F);
    for (std::size_t h = 0; h < H; ++h) {
      for (std::size_t t = 0; t < T; ++t) {
        const float* p = c.probs.data() + (h * T + t) * T;
        const float* dot = datt.data() + t * D + h * hd;
        float weighted = 0.0F;
        for (std::size_t s = 0; s <= t; ++s) {
          const float* vs = c.v.data() + s * D + h * hd;
          float* dvs = dv.data() + s * D + h * hd;
          float acc = 0.0F;
          for (std::size_t j = 0; j < hd; ++j) {
            acc += dot[j] * vs[j];
            dvs[j] += p[s] * dot[j];
          }
          dp[s] = acc;
          weighted += p[s] * acc;
        }
        const float* qt = c.q.data() + t * D + h * hd;
        float* dqt = dq.data() + t * D + h * hd;
        for (std::size_t s = 0; s <= t; ++s) {
          const float ds = p[s] * (dp[s] - weighted) * att_scale;
          const float* ks = c.k.data() + s * D + h * hd;
          float* dks = dk.data() + s * D + h * hd;
          for (std::size_t j = 0; j < hd; ++j) {
            dqt[j] += ds * ks[j];
            dks[j] += ds * qt[j];
          }
        }
      }
    }

    outer_acc(gb.wq, c.a.data(), dq.data(), T, D, D);
    outer_acc(gb.wk, c.a.data(), dk.data(), T, D, D);
    outer_acc(gb.wv, c.a.data(), dv.data(), T, D, D);
    da.assign(T * D, 0.0F);
    matmul_bt_acc(da.data(), dq.data(), b.wq, T, D, D);
    matmul_bt_acc(da.data(), dk.data(), b.wk, T, D, D);
    matmul_bt_acc(da.data(), dv.data(), b.wv, T, D, D);

    dx = dx_mid;
    layer_norm_backward(da.data(), c.xhat1.data(), c.rstd1.data(), b.ln1_g, gb.ln1_g, gb.ln1_b, dx.data(), T, D);
  }

  for (std::size_t t = 0; t < T; ++t) {
    float* dte = grad.tok_emb + static_cast<std::size_t>(tokens[t]) * D;
    float* dpe = grad.pos_emb + t * D;
    for (std::size_t j = 0; j < D; ++j) {
      dte[j] += dx[t * D + j];
      dpe[j] += dx[t * D + j];
    }
  }
  return loss;
}

}  // namespace detail

// ---------------------------------------------------------------------------

void ToyLmConfig::validate() const {
  if (vocab_size < 2) throw ArgumentError("vocab_size must be at least 2");
  if (d_model == 0 || n_layers == 0 || n_heads == 0 || d_ff == 0 || max_seq_len == 0) {
    throw ArgumentError("toy LM sizes must be positive");
  }
  if (d_model % n_heads != 0) {
    throw ArgumentError("d_model " + std::to_string(d_model) + " is not divisible by n_heads " +
                        std::to_string(n_heads));
  }
}

std::string ToyLmCheckpoint::id() const {
  char buf[32];
  std::snprintf(buf, sizeof buf, "step_%06llu", static_cast<unsigned long long>(step));
  return buf;
}

void ToyLmCheckpoint::validate() const {
  config.validate();
  for (const auto& [name, shape] : parameter_layout(config)) {
    const auto it = parameters.find(name);
    if (it == parameters.end()) throw ValidationError("checkpoint lacks parameter " + name);
    std::size_t size = 1;
    for (const auto s : shape) size *= s;
    if (it->second.shape != shape || it->second.data.size() != size) {
      throw ValidationError("parameter " + name + " has the wrong shape");
    }
    for (const float v : it->second.data) {
      if (!std::isfinite(v)) throw ValidationError("parameter " + name + " has non-finite values");
    }
  }
  if (parameters.size() != parameter_layout(config).size()) {
    throw ValidationError("checkpoint holds unexpected parameters");
  }
}

std::vector<std::pair<std::string, std::vector<std::size_t>>> parameter_layout(const ToyLmConfig& config) {
  const std::size_t V = config.vocab_size;
  const std::size_t D = config.d_model;
  const std::size_t F = config.d_ff;
  std::vector<std::pair<std::string, std::vector<std::size_t>>> layout;
  layout.push_back({"tok_emb", {V, D}});
  layout.push_back({"pos_emb", {config.max_seq_len, D}});
  for (std::uint32_t i = 0; i < config.n_layers; ++i) {
    const std::string pre = "blocks." + std::to_string(i) + ".";
    layout.push_back({pre + "ln1.gain", {D}});
    layout.push_back({pre + "ln1.bias", {D}});
    layout.push_back({pre + "attn.wq", {D, D}});
    layout.push_back({pre + "attn.wk", {D, D}});
    layout.push_back({pre + "attn.wv", {D, D}});
    layout.push_back({pre + "attn.wo", {D, D}});
    layout.push_back({pre + "ln2.gain", {D}});
    layout.push_back({pre + "ln2.bias", {D}});
    layout.push_back({pre + "mlp.w1", {D, F}});
    layout.push_back({pre + "mlp.b1", {F}});
    layout.push_back({pre + "mlp.w2", {F, D}});
    layout.push_back({pre + "mlp.b2", {D}});
  }
  layout.push_back({"ln_f.gain", {D}});
  layout.push_back({"ln_f.bias", {D}});
  return layout;
}

ToyLmCheckpoint init(const ToyLmConfig& config) {
  config.validate();
  constexpr double kStd = 0.02;
  const double residual_std = kStd / std::sqrt(2.0 * config.n_layers);

  Rng rng(config.seed);
  ToyLmCheckpoint ckpt;
  ckpt.config = config;
  ckpt.step = 0;
  for (const auto& [name, shape] : parameter_layout(config)) {
    std::size_t size = 1;
    for (const auto s : shape) size *= s;
    Tensor t;
    t.shape = shape;
    t.data.resize(size);
    const bool is_gain = name.ends_with(".gain");
    const bool is_bias = name.ends_with(".bias") || name.ends_with(".b1") || name.ends_with(".b2");
    const double std = (name.ends_with("attn.wo") || name.ends_with("mlp.w2")) ? residual_std : kStd;
    for (auto& v : t.data) {
      if (is_gain) {
        v = 1.0F;
      } else if (is_bias) {
        v = 0.0F;
      } else {
        v = static_cast<float>(rng.normal() * std);
      }
    }
    ckpt.parameters.emplace(name, std::move(t));
  }
  return ckpt;
}

namespace {

void check_intervention(const ToyLmConfig& config, const InterventionSpec* intervention) {
  if (intervention == nullptr) return;
  if (intervention->layer > config.n_layers) {
    throw ArgumentError("intervention layer " + std::to_string(intervention->layer) + " outside 0.." +
                        std::to_string(config.n_layers));
  }
  if (intervention->vector.dimension() != config.d_model) {
    throw ArgumentError("steering vector dimension " + std::to_string(intervention->vector.dimension()) +
                        " != d_model " + std::to_string(config.d_model));
  }
}

}  // namespace

ForwardResult forward(const ToyLmCheckpoint& ckpt, std::span<const Token> tokens,
                      std::span<const CaptureRequest> captures, const InterventionSpec* intervention) {
  const ToyLmConfig& config = ckpt.config;
  detail::check_tokens(config, tokens);
  for (const auto& c : captures) {
    if (c.layer > config.n_layers) {
      throw ArgumentError("capture layer " + std::to_string(c.layer) + " outside 0.." +
                          std::to_string(config.n_layers));
    }
  }
  check_intervention(config, intervention);

  ForwardResult result;
  result.captures.resize(captures.size());
  detail::ForwardOptions options;
  options.captures = captures;
  options.intervention = intervention;
  options.captured = &result.captures;
  detail::ForwardCache cache;
  detail::forward_pass(config, detail::bind(ckpt), tokens, options, cache);
  result.logits = std::move(cache.logits);
  return result;
}

std::vector<float> position_logits(const ToyLmCheckpoint& ckpt, std::span<const Token> tokens,
                                   const InterventionSpec* intervention) {
  detail::check_tokens(ckpt.config, tokens);
  check_intervention(ckpt.config, intervention);
  detail::ForwardOptions options;
  options.all_logits = true;
  options.intervention = intervention;
  detail::ForwardCache cache;
  detail::forward_pass(ckpt.config, detail::bind(ckpt), tokens, options, cache);
  return std::move(cache.logits);
}

Sequence generate(const ToyLmCheckpoint& ckpt, std::span<const Token> prompt, std::size_t n_steps,
                  const InterventionSpec* intervention) {
  Sequence seq(prompt.begin(), prompt.end());
  if (n_steps == 0) return seq;
  for (std::size_t i = 0; i < n_steps; ++i) {
    const ForwardResult r = forward(ckpt, seq, {}, intervention);
    const auto best = std::max_element(r.logits.begin(), r.logits.end());
    seq.push_back(static_cast<Token>(best - r.logits.begin()));
  }
  return seq;
}

double mean_cross_entropy(const ToyLmCheckpoint& ckpt, std::span<const Sequence> corpus,
                          const InterventionSpec* intervention) {
  const ToyLmConfig& config = ckpt.config;
  const auto weights = detail::bind(ckpt);
  check_intervention(config, intervention);
  const std::size_t V = config.vocab_size;
  double total = 0.0;
  std::size_t count = 0;
  detail::ForwardCache cache;
  detail::ForwardOptions options;
  options.all_logits = true;
  options.intervention = intervention;
  for (const Sequence& seq : corpus) {
    if (seq.size() < 2) continue;
    const std::span<const Token> inputs(seq.data(), seq.size() - 1);
    detail::check_tokens(config, inputs);
    detail::check_tokens(config, std::span<const Token>(seq.data() + 1, seq.size() - 1));
    detail::forward_pass(config, weights, inputs, options, cache);
    for (std::size_t t = 0; t < inputs.size(); ++t) {
      const float* lt = cache.logits.data() + t * V;
      const float maxv = *std::max_element(lt, lt + V);
      double sum = 0.0;
      for (std::size_t v = 0; v < V; ++v) sum += std::exp(static_cast<double>(lt[v] - maxv));
      total += std::log(sum) + maxv - lt[seq[t + 1]];
      ++count;
    }
  }
  if (count == 0) throw ArgumentError("corpus has no predictable positions");
  return total / static_cast<double>(count);
}

double perplexity(const ToyLmCheckpoint& ckpt, std::span<const Sequence> corpus,
                  const InterventionSpec* intervention) {
  if (corpus.empty()) throw ArgumentError("perplexity corpus is empty");
  return std::exp(mean_cross_entropy(ckpt, corpus, intervention));
}

Sequence encode_text(std::string_view text) {
  Sequence out;
  out.reserve(text.size());
  for (const char c : text) out.push_back(static_cast<unsigned char>(c));
  return out;
}

std::string decode_text(std::span<const Token> tokens) {
  std::string out;
  for (const Token t : tokens) {
    if (t < 256) out.push_back(static_cast<char>(t));
  }
  return out;
}

}  // namespace tracetrust::toylm
