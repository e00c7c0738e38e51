#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "noisefacts/params.hpp"
#include "noisefacts/tensor.hpp"

namespace noisefacts {

// Forward-pass mode. Eval mode is deterministic: no dropout, no rng.
struct FwdMode {
  bool train = false;
  Rng* rng = nullptr;
};

namespace nn {

template <class T>
Var<T> maybe_dropout(const Var<T>& x, double p, const FwdMode& mode) {
  if (!mode.train || p <= 0.0) return x;
  return dropout(x, p, *mode.rng);
}

template <class T>
void init_linear(ParameterStore<T>& ps, const std::string& prefix, int in,
                 int out, uint64_t seed) {
  double std = std::sqrt(2.0 / double(in + out));
  ps.create(prefix + ".w", in, out, std, seed);
  ps.create(prefix + ".b", 1, out, 0.0, seed);
}

template <class T>
Var<T> linear(const ParameterStore<T>& ps, const std::string& prefix,
              const Var<T>& x) {
  return add_rowwise(matmul(x, ps.get(prefix + ".w")), ps.get(prefix + ".b"));
}

template <class T>
void init_layer_norm(ParameterStore<T>& ps, const std::string& prefix, int d) {
  ps.create_const(prefix + ".g", 1, d, 1.0);
  ps.create_const(prefix + ".b", 1, d, 0.0);
}

template <class T>
Var<T> layer_norm(const ParameterStore<T>& ps, const std::string& prefix,
                  const Var<T>& x) {
  return layer_norm_rows(x, ps.get(prefix + ".g"), ps.get(prefix + ".b"));
}

template <class T>
void init_attention(ParameterStore<T>& ps, const std::string& prefix, int d,
                    uint64_t seed) {
  init_linear(ps, prefix + ".q", d, d, seed);
  init_linear(ps, prefix + ".k", d, d, seed);
  init_linear(ps, prefix + ".v", d, d, seed);
  init_linear(ps, prefix + ".o", d, d, seed);
}

// Multi-head attention; queries from x, keys/values from mem. An additive
// mask (queries x keys), when present, is applied to every head's logits.
template <class T>
Var<T> attention(const ParameterStore<T>& ps, const std::string& prefix,
                 const Var<T>& x, const Var<T>& mem, int n_heads,
                 const Mat<T>* addmask, const FwdMode& mode, double dropout_p) {
  int d = x->cols();
  int dk = d / n_heads;
  Var<T> q = linear(ps, prefix + ".q", x);
  Var<T> k = linear(ps, prefix + ".k", mem);
  Var<T> v = linear(ps, prefix + ".v", mem);
  Var<T> out;
  for (int h = 0; h < n_heads; ++h) {
    Var<T> qh = slice_cols(q, h * dk, dk);
    Var<T> kh = slice_cols(k, h * dk, dk);
    Var<T> vh = slice_cols(v, h * dk, dk);
    Var<T> logits = scale(matmul_nt(qh, kh), 1.0 / std::sqrt(double(dk)));
    Var<T> probs = softmax_rows(logits, addmask);
    probs = maybe_dropout(probs, dropout_p, mode);
    Var<T> oh = matmul(probs, vh);
    out = h == 0 ? oh : concat_cols(out, oh);
  }
  return linear(ps, prefix + ".o", out);
}

template <class T>
void init_ffn(ParameterStore<T>& ps, const std::string& prefix, int d, int d_ff,
              uint64_t seed) {
  init_linear(ps, prefix + ".w1", d, d_ff, seed);
  init_linear(ps, prefix + ".w2", d_ff, d, seed);
}

template <class T>
Var<T> ffn(const ParameterStore<T>& ps, const std::string& prefix,
           const Var<T>& x, const FwdMode& mode, double dropout_p) {
  Var<T> h = gelu(linear(ps, prefix + ".w1", x));
  h = maybe_dropout(h, dropout_p, mode);
  return linear(ps, prefix + ".w2", h);
}

template <class T>
Mat<T> causal_mask(int n) {
  Mat<T> m = Mat<T>::Zero(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) m(i, j) = static_cast<T>(-1e9);
  return m;
}

// Sinusoidal embedding of an integer step, broadcast later to all positions.
template <class T>
Mat<T> sinusoid_embedding(int t, int d) {
  Mat<T> pe = Mat<T>::Zero(1, d);
  for (int i = 0; 2 * i < d; ++i) {
    double div = std::pow(10000.0, 2.0 * i / double(d));
    pe(0, 2 * i) = static_cast<T>(std::sin(t / div));
    if (2 * i + 1 < d) pe(0, 2 * i + 1) = static_cast<T>(std::cos(t / div));
  }
  return pe;
}

}  // namespace nn

// Bidirectional self-attention encoder over token ids (pre-norm residual
// stack with a final layer norm). Shared by the context encoder, the fact
// embedder encoder and the relation classifier.
template <class T>
struct TextEncoder {
  ModelConfig cfg;
  std::string prefix;
  ParameterStore<T>* ps = nullptr;

  void init(int vocab_size, uint64_t seed) {
    ps->create(prefix + ".tok", vocab_size, cfg.d, 0.02, seed);
    ps->create(prefix + ".pos", cfg.max_positions, cfg.d, 0.02, seed);
    for (int l = 0; l < cfg.n_layers; ++l) {
      std::string lp = prefix + ".layer" + std::to_string(l);
      nn::init_layer_norm(*ps, lp + ".ln1", cfg.d);
      nn::init_attention(*ps, lp + ".attn", cfg.d, seed);
      nn::init_layer_norm(*ps, lp + ".ln2", cfg.d);
      nn::init_ffn(*ps, lp + ".ffn", cfg.d, cfg.d_ff, seed);
    }
    nn::init_layer_norm(*ps, prefix + ".ln_f", cfg.d);
  }

  Var<T> forward(const std::vector<int>& ids, const FwdMode& mode) const {
    if (ids.empty()) throw std::invalid_argument("encoder: empty input");
    if (static_cast<int>(ids.size()) > cfg.max_positions)
      throw std::invalid_argument("encoder: input longer than max_positions");
    std::vector<int> pos_ids(ids.size());
    for (size_t i = 0; i < ids.size(); ++i) pos_ids[i] = static_cast<int>(i);
    Var<T> h = add(gather_rows(ps->get(prefix + ".tok"), ids),
                   gather_rows(ps->get(prefix + ".pos"), pos_ids));
    h = nn::maybe_dropout(h, cfg.dropout, mode);
    for (int l = 0; l < cfg.n_layers; ++l) {
      std::string lp = prefix + ".layer" + std::to_string(l);
      Var<T> a = nn::layer_norm(*ps, lp + ".ln1", h);
      h = add(h, nn::attention(*ps, lp + ".attn", a, a, cfg.n_heads,
                               static_cast<const Mat<T>*>(nullptr), mode,
                               cfg.dropout));
      Var<T> f = nn::layer_norm(*ps, lp + ".ln2", h);
      h = add(h, nn::ffn(*ps, lp + ".ffn", f, mode, cfg.dropout));
    }
    return nn::layer_norm(*ps, prefix + ".ln_f", h);
  }
};

// Autoregressive decoder with causal self-attention and cross-attention to a
// memory block; emits vocabulary logits per position.
template <class T>
struct SeqDecoder {
  ModelConfig cfg;
  std::string prefix;
  ParameterStore<T>* ps = nullptr;
  int vocab_size = 0;

  void init(int vocab, uint64_t seed) {
    vocab_size = vocab;
    ps->create(prefix + ".tok", vocab, cfg.d, 0.02, seed);
    ps->create(prefix + ".pos", cfg.max_positions, cfg.d, 0.02, seed);
    for (int l = 0; l < cfg.n_layers; ++l) {
      std::string lp = prefix + ".layer" + std::to_string(l);
      nn::init_layer_norm(*ps, lp + ".ln1", cfg.d);
      nn::init_attention(*ps, lp + ".self", cfg.d, seed);
      nn::init_layer_norm(*ps, lp + ".ln2", cfg.d);
      nn::init_attention(*ps, lp + ".cross", cfg.d, seed);
      nn::init_layer_norm(*ps, lp + ".ln3", cfg.d);
      nn::init_ffn(*ps, lp + ".ffn", cfg.d, cfg.d_ff, seed);
    }
    nn::init_layer_norm(*ps, prefix + ".ln_f", cfg.d);
    nn::init_linear(*ps, prefix + ".out", cfg.d, vocab, seed);
  }

  // ids: teacher-forced input tokens; memory: M x d conditioning block.
  Var<T> forward(const std::vector<int>& ids, const Var<T>& memory,
                 const FwdMode& mode) const {
    if (ids.empty()) throw std::invalid_argument("decoder: empty input");
    int n = static_cast<int>(ids.size());
    if (n > cfg.max_positions)
      throw std::invalid_argument("decoder: input longer than max_positions");
    std::vector<int> pos_ids(ids.size());
    for (size_t i = 0; i < ids.size(); ++i) pos_ids[i] = static_cast<int>(i);
    Var<T> h = add(gather_rows(ps->get(prefix + ".tok"), ids),
                   gather_rows(ps->get(prefix + ".pos"), pos_ids));
    h = nn::maybe_dropout(h, cfg.dropout, mode);
    Mat<T> cmask = nn::causal_mask<T>(n);
    for (int l = 0; l < cfg.n_layers; ++l) {
      std::string lp = prefix + ".layer" + std::to_string(l);
      Var<T> a = nn::layer_norm(*ps, lp + ".ln1", h);
      h = add(h, nn::attention(*ps, lp + ".self", a, a, cfg.n_heads, &cmask,
                               mode, cfg.dropout));
      Var<T> c = nn::layer_norm(*ps, lp + ".ln2", h);
      h = add(h, nn::attention(*ps, lp + ".cross", c, memory, cfg.n_heads,
                               static_cast<const Mat<T>*>(nullptr), mode,
                               cfg.dropout));
      Var<T> f = nn::layer_norm(*ps, lp + ".ln3", h);
      h = add(h, nn::ffn(*ps, lp + ".ffn", f, mode, cfg.dropout));
    }
    h = nn::layer_norm(*ps, prefix + ".ln_f", h);
    return nn::linear(*ps, prefix + ".out", h);
  }
};

// Non-autoregressive denoising stack. The noisy latent and the previous
// clean-sample prediction are concatenated per slot, projected back to d,
// offset by slot position and shared time embeddings, then refined by
// bidirectional self-attention with cross-attention to the context states.
template <class T>
struct Denoiser {
  ModelConfig cfg;
  std::string prefix;
  ParameterStore<T>* ps = nullptr;

  void init(uint64_t seed) {
    nn::init_linear(*ps, prefix + ".in", 2 * cfg.d, cfg.d, seed);
    ps->create(prefix + ".pos", cfg.max_slots, cfg.d, 0.02, seed);
    for (int l = 0; l < cfg.n_layers; ++l) {
      std::string lp = prefix + ".layer" + std::to_string(l);
      nn::init_layer_norm(*ps, lp + ".ln1", cfg.d);
      nn::init_attention(*ps, lp + ".self", cfg.d, seed);
      nn::init_layer_norm(*ps, lp + ".ln2", cfg.d);
      nn::init_attention(*ps, lp + ".cross", cfg.d, seed);
      nn::init_layer_norm(*ps, lp + ".ln3", cfg.d);
      nn::init_ffn(*ps, lp + ".ffn", cfg.d, cfg.d_ff, seed);
    }
    nn::init_layer_norm(*ps, prefix + ".ln_f", cfg.d);
    nn::init_linear(*ps, prefix + ".out", cfg.d, cfg.d, seed);
  }

  // z_t, z0_prev: N x d slot blocks; ctx: L x d context hidden states.
  Var<T> forward(const Var<T>& z_t, const Var<T>& z0_prev, int t,
                 const Var<T>& ctx, const FwdMode& mode) const {
    if (z_t->rows() != z0_prev->rows() || z_t->cols() != z0_prev->cols())
      throw std::invalid_argument("denoiser: z_t / z0_prev shape mismatch");
    int n = z_t->rows();
    if (n < 1 || n > cfg.max_slots)
      throw std::invalid_argument("denoiser: slot count out of range");
    std::vector<int> pos_ids(n);
    for (int i = 0; i < n; ++i) pos_ids[i] = i;
    Var<T> h = nn::linear(*ps, prefix + ".in", concat_cols(z_t, z0_prev));
    h = add(h, gather_rows(ps->get(prefix + ".pos"), pos_ids));
    Mat<T> te = nn::sinusoid_embedding<T>(t, cfg.d);
    h = add_rowwise(h, constant<T>(std::move(te)));
    h = nn::maybe_dropout(h, cfg.dropout, mode);
    for (int l = 0; l < cfg.n_layers; ++l) {
      std::string lp = prefix + ".layer" + std::to_string(l);
      Var<T> a = nn::layer_norm(*ps, lp + ".ln1", h);
      h = add(h, nn::attention(*ps, lp + ".self", a, a, cfg.n_heads,
                               static_cast<const Mat<T>*>(nullptr), mode,
                               cfg.dropout));
      Var<T> c = nn::layer_norm(*ps, lp + ".ln2", h);
      h = add(h, nn::attention(*ps, lp + ".cross", c, ctx, cfg.n_heads,
                               static_cast<const Mat<T>*>(nullptr), mode,
                               cfg.dropout));
      Var<T> f = nn::layer_norm(*ps, lp + ".ln3", h);
      h = add(h, nn::ffn(*ps, lp + ".ffn", f, mode, cfg.dropout));
    }
    h = nn::layer_norm(*ps, prefix + ".ln_f", h);
    return nn::linear(*ps, prefix + ".out", h);
  }
};

}  // namespace noisefacts
