#pragma once

#include <string>
#include <vector>

#include "noisefacts/corpus.hpp"
#include "noisefacts/nn.hpp"
#include "noisefacts/optim.hpp"
#include "noisefacts/params.hpp"
#include "noisefacts/schedule.hpp"
#include "noisefacts/tensor.hpp"

namespace noisefacts {

// Gold embedding columns for one knowledge set: one row per fact, <eok> last.
template <class T>
struct EmbeddingBlock {
  Mat<T> m;
  int slots() const { return static_cast<int>(m.rows()); }
  int dim() const { return static_cast<int>(m.cols()); }
};

// Context-independent fact/entity embedding module: an encoder mapping a
// verbalized item to the <s> hidden state, and a decoder reconstructing the
// item from that single vector via cross-attention.
template <class T>
struct Embedder {
  ModelConfig cfg;
  ParameterStore<T> ps;
  TextEncoder<T> enc;
  SeqDecoder<T> dec;
  Vocabulary vocab;

  Embedder() = default;
  Embedder(const Embedder&) = delete;
  Embedder& operator=(const Embedder&) = delete;
  Embedder(Embedder&& o) noexcept { *this = std::move(o); }
  // the encoder/decoder views point at this->ps; rebind them on move
  Embedder& operator=(Embedder&& o) noexcept {
    cfg = o.cfg;
    ps = std::move(o.ps);
    vocab = std::move(o.vocab);
    enc = std::move(o.enc);
    dec = std::move(o.dec);
    enc.ps = &ps;
    dec.ps = &ps;
    return *this;
  }

  void init(const Vocabulary& v, const ModelConfig& c, uint64_t seed) {
    cfg = c;
    cfg.validate();
    vocab = v;
    enc = TextEncoder<T>{cfg, "embed.enc", &ps};
    dec = SeqDecoder<T>{cfg, "embed.dec", &ps};
    enc.init(vocab.size(), Rng::derive(seed, "embed.enc"));
    dec.init(vocab.size(), Rng::derive(seed, "embed.dec"));
  }

  bool frozen() const { return ps.frozen; }

  // In-graph embedding: encoder output at the <s> position (1 x d).
  Var<T> embed_tokens_var(const std::vector<int>& ids, const FwdMode& mode) const {
    return slice_rows(enc.forward(ids, mode), 0, 1);
  }

  Mat<T> embed_tokens(const std::vector<int>& ids) const {
    return embed_tokens_var(ids, FwdMode{})->val;
  }

  Mat<T> embed_fact(const FactTriple& k, const RelationCatalog& catalog) const {
    return embed_tokens(verbalize_fact(k, catalog, vocab));
  }
  Mat<T> embed_eok() const { return embed_tokens(verbalize_eok()); }
  Mat<T> embed_entity(const std::string& text) const {
    return embed_tokens(verbalize_entity(text, vocab));
  }

  // Greedy autoregressive decode conditioned on e as a length-1 memory.
  // Returns the full sequence starting at <s>, generating at most max_len
  // tokens, stopping after </s>.
  std::vector<int> decode_tokens(const Mat<T>& e, int max_len) const {
    if (e.rows() != 1 || e.cols() != cfg.d)
      throw std::invalid_argument("decode_tokens: e must be 1 x d");
    Var<T> memory = constant<T>(e);
    std::vector<int> seq{Vocabulary::kBos};
    for (int step = 0; step < max_len; ++step) {
      Var<T> logits = dec.forward(seq, memory, FwdMode{});
      int best = 0;
      T best_v = logits->val(logits->rows() - 1, 0);
      for (int j = 1; j < logits->cols(); ++j) {
        T v = logits->val(logits->rows() - 1, j);
        if (v > best_v) {
          best_v = v;
          best = j;
        }
      }
      seq.push_back(best);
      if (best == Vocabulary::kEos) break;
    }
    return seq;
  }

  // Teacher-forced token cross-entropy (sum) of reconstructing target_ids
  // from the given 1 x d memory. Used by pretraining and the anchor loss.
  Var<T> reconstruction_loss(const Var<T>& memory, const std::vector<int>& target_ids,
                             const FwdMode& mode) const {
    if (target_ids.size() < 2)
      throw std::invalid_argument("reconstruction_loss: need at least <s> x </s>");
    std::vector<int> input(target_ids.begin(), target_ids.end() - 1);
    std::vector<int> targets(target_ids.begin() + 1, target_ids.end());
    Var<T> logits = dec.forward(input, memory, mode);
    return cross_entropy_sum(logits, targets);
  }
};

struct PretrainReport {
  std::vector<double> epoch_loss;  // mean per-token loss per epoch
  double initial_loss = 0.0;
  double reconstruction_rate = 0.0;
  double eok_reconstruction_rate = 0.0;
  size_t n_items = 0;
};

namespace detail {

// Deduplicated verbalized items; the <eok> pseudo-item is always appended.
inline std::vector<std::vector<int>> dedupe_items(
    const std::vector<std::vector<int>>& raw) {
  std::vector<std::vector<int>> items;
  std::set<std::vector<int>> seen;
  for (const auto& ids : raw)
    if (seen.insert(ids).second) items.push_back(ids);
  items.push_back(verbalize_eok());
  return items;
}

}  // namespace detail

// Joint encoder/decoder pretraining by reconstruction cross-entropy over a
// fixed item list. Returns with parameters frozen.
template <class T>
void pretrain_items(Embedder<T>& em, const std::vector<std::vector<int>>& items,
                    int epochs, const OptimConfig& oc, uint64_t seed,
                    PretrainReport* report, int batch_size = 16) {
  if (items.empty()) throw std::invalid_argument("pretrain: empty item list");
  if (em.frozen()) throw std::logic_error("pretrain: embedder already frozen");
  PretrainReport rep;
  rep.n_items = items.size();

  Rng shuffle_rng(Rng::derive(seed, "pretrain.shuffle"));
  Rng drop_rng(Rng::derive(seed, "pretrain.dropout"));
  FwdMode train_mode{true, &drop_rng};

  auto item_loss = [&em](const std::vector<int>& ids, const FwdMode& mode) {
    Var<T> e = em.embed_tokens_var(ids, mode);
    return em.reconstruction_loss(e, ids, mode);
  };

  {
    double tokens = 0.0, total = 0.0;
    for (const auto& ids : items) {
      total += item_loss(ids, FwdMode{})->val(0, 0);
      tokens += double(ids.size() - 1);
    }
    rep.initial_loss = total / tokens;
  }

  std::vector<size_t> order(items.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.uniform_int(0, int64_t(i) - 1)]);
    double tokens = 0.0, total = 0.0;
    for (size_t start = 0; start < order.size(); start += batch_size) {
      size_t end = std::min(order.size(), start + batch_size);
      Var<T> batch_loss;
      double batch_tokens = 0.0;
      for (size_t i = start; i < end; ++i) {
        const auto& ids = items[order[i]];
        Var<T> l = item_loss(ids, train_mode);
        total += l->val(0, 0);
        tokens += double(ids.size() - 1);
        batch_tokens += double(ids.size() - 1);
        batch_loss = batch_loss ? add(batch_loss, l) : l;
      }
      if (!std::isfinite(double(batch_loss->val(0, 0))))
        throw NumericError("pretrain: non-finite loss in epoch " +
                           std::to_string(epoch));
      backward(scale(batch_loss, 1.0 / batch_tokens));
      adamw_step(em.ps, oc);
    }
    rep.epoch_loss.push_back(total / tokens);
  }

  size_t exact = 0;
  for (const auto& ids : items)
    if (em.decode_tokens(em.embed_tokens(ids), int(ids.size()) + 4) == ids) ++exact;
  rep.reconstruction_rate = double(exact) / double(items.size());
  auto eok = verbalize_eok();
  rep.eok_reconstruction_rate =
      em.decode_tokens(em.embed_tokens(eok), 8) == eok ? 1.0 : 0.0;

  em.ps.freeze();
  if (report) *report = rep;
}

template <class T>
Embedder<T> pretrain_embedder(const KnowledgeSet& kg, const RelationCatalog& catalog,
                              const Vocabulary& vocab, const ModelConfig& cfg,
                              int epochs, const OptimConfig& oc, uint64_t seed,
                              PretrainReport* report = nullptr) {
  if (kg.facts.empty()) throw std::invalid_argument("pretrain_embedder: empty knowledge set");
  Embedder<T> em;
  em.init(vocab, cfg, seed);
  std::vector<std::vector<int>> raw;
  raw.reserve(kg.facts.size());
  for (const auto& k : kg.facts) raw.push_back(verbalize_fact(k, catalog, vocab));
  pretrain_items(em, detail::dedupe_items(raw), epochs, oc, seed, report);
  return em;
}

template <class T>
Embedder<T> pretrain_entity_embedder(const std::vector<std::string>& entities,
                                     const Vocabulary& vocab, const ModelConfig& cfg,
                                     int epochs, const OptimConfig& oc, uint64_t seed,
                                     PretrainReport* report = nullptr) {
  if (entities.empty())
    throw std::invalid_argument("pretrain_entity_embedder: empty entity list");
  Embedder<T> em;
  em.init(vocab, cfg, seed);
  std::vector<std::vector<int>> raw;
  raw.reserve(entities.size());
  for (const auto& e : entities) raw.push_back(verbalize_entity(e, vocab));
  pretrain_items(em, detail::dedupe_items(raw), epochs, oc, seed, report);
  return em;
}

// Gold embedding block for one sample: fact embeddings in order, <eok> last.
template <class T>
EmbeddingBlock<T> embed_knowledge_set(const Embedder<T>& em, const KnowledgeSet& ks,
                                      const RelationCatalog& catalog) {
  int n = static_cast<int>(ks.facts.size());
  if (n + 1 > em.cfg.max_slots)
    throw std::invalid_argument(
        "knowledge set with " + std::to_string(n) + " facts + <eok> exceeds max_slots=" +
        std::to_string(em.cfg.max_slots));
  EmbeddingBlock<T> block;
  block.m.resize(n + 1, em.cfg.d);
  for (int i = 0; i < n; ++i) block.m.row(i) = em.embed_fact(ks.facts[i], catalog).row(0);
  block.m.row(n) = em.embed_eok().row(0);
  return block;
}

// z_0 ~ N(e, beta_0 I) per slot.
template <class T>
LatentBlock<T> sample_z0(const EmbeddingBlock<T>& block, const NoiseSchedule& sched,
                         Rng& rng, int max_slots) {
  if (block.slots() > max_slots)
    throw std::invalid_argument("sample_z0: block exceeds max_slots");
  LatentBlock<T> z;
  z.t = 0;
  z.m.resize(block.m.rows(), block.m.cols());
  for (int n = 0; n < block.slots(); ++n) {
    double sd = std::sqrt(sched.beta(0, n));
    for (int j = 0; j < block.dim(); ++j)
      z.m(n, j) = static_cast<T>(double(block.m(n, j)) + sd * rng.normal());
  }
  return z;
}

}  // namespace noisefacts
