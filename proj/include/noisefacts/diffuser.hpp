#pragma once

#include <optional>
#include <string>
#include <vector>

#include "noisefacts/corpus.hpp"
#include "noisefacts/embedder.hpp"
#include "noisefacts/nn.hpp"
#include "noisefacts/optim.hpp"
#include "noisefacts/schedule.hpp"

namespace noisefacts {

struct GenerationConfig {
  int inference_steps = 0;  // 0: use the schedule's full T
  int n_slots = 16;
  uint64_t seed = 0;
  int max_decode_len = 24;

  void validate(int T, int max_slots) const {
    if (inference_steps < 0 || inference_steps > T)
      throw std::invalid_argument("GenerationConfig: inference_steps must be in [0, T]");
    if (n_slots < 1 || n_slots > max_slots)
      throw std::invalid_argument("GenerationConfig: n_slots must be in [1, max_slots]");
  }
};

// Context encoder + self-conditioned denoiser pair.
template <class T>
struct Diffuser {
  ModelConfig cfg;
  ParameterStore<T> ps;
  TextEncoder<T> ctx_enc;
  Denoiser<T> den;
  double gamma = 1.0;

  Diffuser() = default;
  Diffuser(const Diffuser&) = delete;
  Diffuser& operator=(const Diffuser&) = delete;
  Diffuser(Diffuser&& o) noexcept { *this = std::move(o); }
  Diffuser& operator=(Diffuser&& o) noexcept {
    cfg = o.cfg;
    ps = std::move(o.ps);
    ctx_enc = std::move(o.ctx_enc);
    den = std::move(o.den);
    gamma = o.gamma;
    ctx_enc.ps = &ps;
    den.ps = &ps;
    return *this;
  }

  void init(int vocab_size, const ModelConfig& c, uint64_t seed) {
    cfg = c;
    cfg.validate();
    ctx_enc = TextEncoder<T>{cfg, "ctx", &ps};
    den = Denoiser<T>{cfg, "den", &ps};
    ctx_enc.init(vocab_size, Rng::derive(seed, "ctx"));
    den.init(Rng::derive(seed, "den"));
  }

  Var<T> encode_context(const std::vector<int>& ctx_ids, const FwdMode& mode) const {
    return ctx_enc.forward(ctx_ids, mode);
  }

  // Self-conditioned prediction of z_0 for the stage t -> t-1.
  Var<T> denoise_step(const Var<T>& z0_prev, const Var<T>& z_t, int t,
                      const Var<T>& ctx, const FwdMode& mode) const {
    return den.forward(z_t, z0_prev, t, ctx, mode);
  }
};

// One precomputed training item: context tokens, gold embedding block
// (<eok> row last) and the verbalized target for each slot.
template <class T>
struct TrainingItem {
  std::vector<int> ctx_ids;
  EmbeddingBlock<T> gold;
  std::vector<std::vector<int>> slot_targets;
};

struct TrainConfig {
  int64_t steps = 5000;
  int batch = 4;
  double gamma = 1.0;
  OptimConfig optim;
  uint64_t seed = 0;
  int64_t adapt_every = kAdaptCadence;
  int64_t log_every = 50;
};

struct TrainLogRow {
  int64_t step = 0;
  double mse = 0.0;
  double anchor = 0.0;
  double total = 0.0;
};

struct TrainStats {
  std::vector<TrainLogRow> log;
  std::vector<NoiseSchedule> schedule_dumps;
  size_t skipped_samples = 0;
};

// Builds fact-level training items; samples whose gold set (+<eok>) exceeds
// max_slots are skipped and counted.
template <class T>
std::vector<TrainingItem<T>> build_fact_items(const std::vector<NarrativeSample>& data,
                                              const Embedder<T>& embedder,
                                              const RelationCatalog& catalog,
                                              size_t* skipped = nullptr) {
  std::vector<TrainingItem<T>> items;
  size_t n_skipped = 0;
  for (const auto& s : data) {
    if (static_cast<int>(s.gold.facts.size()) + 1 > embedder.cfg.max_slots) {
      ++n_skipped;
      continue;
    }
    TrainingItem<T> it;
    it.ctx_ids = context_tokens(s.context, embedder.vocab);
    it.gold = embed_knowledge_set(embedder, s.gold, catalog);
    for (const auto& k : s.gold.facts)
      it.slot_targets.push_back(verbalize_fact(k, catalog, embedder.vocab));
    it.slot_targets.push_back(verbalize_eok());
    items.push_back(std::move(it));
  }
  if (skipped) *skipped = n_skipped;
  return items;
}

// Dual-loss diffusion training: z0-MSE (target e at the final stage, z_0
// elsewhere) plus gamma-weighted anchor reconstruction through the frozen
// decoder. Self-conditioning feeds a detached first pass half the time.
// The schedule adapts in place every adapt_every steps.
template <class T>
TrainStats train_diffuser(Diffuser<T>& diff, const std::vector<TrainingItem<T>>& items,
                          const Embedder<T>& embedder, NoiseSchedule& sched,
                          const TrainConfig& tc) {
  if (!embedder.frozen())
    throw std::logic_error("train_diffuser: embedder must be frozen");
  if (items.empty()) throw std::invalid_argument("train_diffuser: no training items");
  diff.gamma = tc.gamma;
  if (!(tc.gamma >= 0.0)) throw std::invalid_argument("train_diffuser: gamma >= 0");

  Rng pick_rng(Rng::derive(tc.seed, "train.pick"));
  Rng t_rng(Rng::derive(tc.seed, "train.t"));
  Rng noise_rng(Rng::derive(tc.seed, "train.noise"));
  Rng cond_rng(Rng::derive(tc.seed, "train.selfcond"));
  Rng drop_rng(Rng::derive(tc.seed, "train.dropout"));
  FwdMode train_mode{true, &drop_rng};

  AdaptiveState adapt_state(sched.T, diff.cfg.max_slots);
  TrainStats stats;
  double win_mse = 0.0, win_anchor = 0.0, win_total = 0.0;
  int64_t win_n = 0;

  for (int64_t step = 0; step < tc.steps; ++step) {
    Var<T> batch_loss;
    double batch_mse = 0.0, batch_anchor = 0.0;
    for (int b = 0; b < tc.batch; ++b) {
      const TrainingItem<T>& it =
          items[pick_rng.uniform_int(0, int64_t(items.size()) - 1)];
      int n_slots = it.gold.slots();
      int t = static_cast<int>(t_rng.uniform_int(1, sched.T));

      LatentBlock<T> z0 = sample_z0(it.gold, sched, noise_rng, diff.cfg.max_slots);
      LatentBlock<T> z_t = forward_jump(z0, t, sched, noise_rng);
      Var<T> z_t_var = constant<T>(z_t.m);
      Var<T> zeros = constant<T>(Mat<T>::Zero(n_slots, diff.cfg.d));

      Var<T> ctx = diff.encode_context(it.ctx_ids, train_mode);

      Var<T> z0_prev = zeros;
      if (cond_rng.uniform() < 0.5) {
        Var<T> first =
            diff.denoise_step(zeros, z_t_var, t, constant<T>(ctx->val), FwdMode{});
        z0_prev = constant<T>(first->val);  // detached first pass
      }
      Var<T> pred = diff.denoise_step(z0_prev, z_t_var, t, ctx, train_mode);

      Var<T> target = t == 1 ? constant<T>(it.gold.m) : constant<T>(z0.m);
      Var<T> mse = mse_sum(pred, target);

      Var<T> item_loss = mse;
      double anchor_val = 0.0;
      if (tc.gamma > 0.0) {
        Var<T> anchor;
        for (int n = 0; n < n_slots; ++n) {
          Var<T> l = embedder.reconstruction_loss(slice_rows(pred, n, 1),
                                                  it.slot_targets[n], train_mode);
          anchor = anchor ? add(anchor, l) : l;
        }
        anchor_val = anchor->val(0, 0);
        item_loss = add(item_loss, scale(anchor, tc.gamma));
      }
      batch_mse += mse->val(0, 0);
      batch_anchor += anchor_val;
      batch_loss = batch_loss ? add(batch_loss, item_loss) : item_loss;

      for (int n = 0; n < n_slots; ++n)
        adapt_state.record(t, n,
                           (pred->val.row(n) - z0.m.row(n)).squaredNorm());
    }
    if (!std::isfinite(double(batch_loss->val(0, 0))))
      throw NumericError("train_diffuser: non-finite loss at step " +
                         std::to_string(step));
    backward(scale(batch_loss, 1.0 / tc.batch));
    adamw_step(diff.ps, tc.optim);

    win_mse += batch_mse / tc.batch;
    win_anchor += batch_anchor / tc.batch;
    win_total += batch_loss->val(0, 0) / tc.batch;
    ++win_n;
    if ((step + 1) % tc.log_every == 0 || step + 1 == tc.steps) {
      stats.log.push_back({step + 1, win_mse / win_n, win_anchor / win_n,
                           win_total / win_n});
      win_mse = win_anchor = win_total = 0.0;
      win_n = 0;
    }
    if (tc.adapt_every > 0 && (step + 1) % tc.adapt_every == 0) {
      sched = adapt_schedule(adapt_state, sched);
      adapt_state.reset();
      stats.schedule_dumps.push_back(sched);
    }
  }
  return stats;
}

// Descending inference step sequence: inference_steps values uniformly
// subsampled from T down to 1.
inline std::vector<int> inference_step_sequence(int T, int inference_steps) {
  if (inference_steps < 1 || inference_steps > T)
    throw std::invalid_argument("inference_step_sequence: steps in [1, T]");
  std::vector<int> ts;
  if (inference_steps == 1) return {T};
  for (int i = 0; i < inference_steps; ++i) {
    double x = double(T) - double(i) * double(T - 1) / double(inference_steps - 1);
    int t = static_cast<int>(std::lround(x));
    if (ts.empty() || t < ts.back()) ts.push_back(t);
  }
  if (ts.back() != 1) ts.push_back(1);
  return ts;
}

// Raw column decode of one reverse-diffusion run; fact/entity interpretation
// happens on top of this.
template <class T>
std::vector<std::vector<int>> generate_columns(const Diffuser<T>& diff,
                                               const Embedder<T>& embedder,
                                               const NoiseSchedule& sched,
                                               const std::vector<int>& ctx_ids,
                                               const GenerationConfig& gen) {
  int steps = gen.inference_steps == 0 ? sched.T : gen.inference_steps;
  gen.validate(sched.T, diff.cfg.max_slots);
  std::vector<int> ts = inference_step_sequence(sched.T, steps);

  Rng rng(Rng::derive(gen.seed, "generate"));
  Var<T> ctx = diff.encode_context(ctx_ids, FwdMode{});

  Mat<T> z(gen.n_slots, diff.cfg.d);
  for (int i = 0; i < z.rows(); ++i)
    for (int j = 0; j < z.cols(); ++j)
      z(i, j) = static_cast<T>(rng.normal() * sched.A_amp);

  Var<T> z0_prev = constant<T>(Mat<T>::Zero(gen.n_slots, diff.cfg.d));
  Var<T> pred;
  for (size_t i = 0; i < ts.size(); ++i) {
    pred = diff.denoise_step(z0_prev, constant<T>(z), ts[i], ctx, FwdMode{});
    if (i + 1 < ts.size()) {
      LatentBlock<T> zb{pred->val, 0};
      z = forward_jump(zb, ts[i + 1], sched, rng).m;
      z0_prev = pred;
    }
  }

  std::vector<std::vector<int>> cols;
  for (int n = 0; n < gen.n_slots; ++n) {
    Mat<T> e = pred->val.row(n);
    cols.push_back(embedder.decode_tokens(e, gen.max_decode_len));
  }
  return cols;
}

inline bool decodes_to_eok(const std::vector<int>& seq) {
  return seq.size() >= 2 && seq[1] == Vocabulary::kEok;
}

// Columns strictly before the first <eok> column; everything at or beyond it
// is discarded.
inline std::vector<std::vector<int>> columns_before_eok(
    const std::vector<std::vector<int>>& cols) {
  std::vector<std::vector<int>> kept;
  for (const auto& seq : cols) {
    if (decodes_to_eok(seq)) break;
    kept.push_back(seq);
  }
  return kept;
}

struct FactGeneration {
  std::vector<FactTriple> facts;
  int n_dropped = 0;
};

// Full fact-level generation: reverse diffusion, per-column decoding,
// truncation at the first <eok> column, triple parsing with drop counting.
template <class T>
FactGeneration generate_facts(const Diffuser<T>& diff, const Embedder<T>& embedder,
                              const NoiseSchedule& sched, const std::string& context,
                              const RelationCatalog& catalog,
                              const GenerationConfig& gen) {
  auto cols = generate_columns(diff, embedder, sched,
                               context_tokens(context, embedder.vocab), gen);
  FactGeneration out;
  for (const auto& seq : columns_before_eok(cols)) {
    auto fact = parse_verbalized(seq, catalog, embedder.vocab);
    if (fact)
      out.facts.push_back(*fact);
    else
      ++out.n_dropped;
  }
  return out;
}

struct EntityGeneration {
  std::vector<std::string> entities;
  int n_dropped = 0;
};

// Entity-level generation: columns decode to entity surface strings.
template <class T>
EntityGeneration generate_entities(const Diffuser<T>& diff, const Embedder<T>& embedder,
                                   const NoiseSchedule& sched,
                                   const std::vector<int>& ctx_ids,
                                   const GenerationConfig& gen) {
  auto cols = generate_columns(diff, embedder, sched, ctx_ids, gen);
  EntityGeneration out;
  for (const auto& seq : columns_before_eok(cols)) {
    bool ok = true;
    for (int id : seq)
      if (id == Vocabulary::kUnk || id == Vocabulary::kPad ||
          id == Vocabulary::kFsep || id == Vocabulary::kEok)
        ok = false;
    std::string text = ok ? detokenize(seq, embedder.vocab) : std::string();
    if (!text.empty())
      out.entities.push_back(text);
    else
      ++out.n_dropped;
  }
  return out;
}

}  // namespace noisefacts
