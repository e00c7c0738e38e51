#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "noisefacts/corpus.hpp"
#include "noisefacts/diffuser.hpp"
#include "noisefacts/embedder.hpp"

namespace noisefacts {

// Context tokens expanded with generated entities: <s> ctx <fsep> head
// [<fsep> tail] </s>.
inline std::vector<int> expanded_context_tokens(const std::string& context,
                                                const Vocabulary& vocab,
                                                const std::string& head,
                                                const std::string* tail = nullptr) {
  std::vector<int> ids{Vocabulary::kBos};
  for (const auto& t : tokenize(context)) ids.push_back(vocab.id(t));
  ids.push_back(Vocabulary::kFsep);
  for (const auto& t : tokenize(head)) ids.push_back(vocab.id(t));
  if (tail) {
    ids.push_back(Vocabulary::kFsep);
    for (const auto& t : tokenize(*tail)) ids.push_back(vocab.id(t));
  }
  ids.push_back(Vocabulary::kEos);
  return ids;
}

inline std::vector<std::string> dedupe_preserve_order(
    const std::vector<std::string>& items) {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& s : items)
    if (seen.insert(s).second) out.push_back(s);
  return out;
}

// Encoder + linear softmax head over the relation label set, scored at <s>.
template <class T>
struct RelationClassifier {
  ModelConfig cfg;
  ParameterStore<T> ps;
  TextEncoder<T> enc;
  std::vector<std::string> labels;
  Vocabulary vocab;

  RelationClassifier() = default;
  RelationClassifier(const RelationClassifier&) = delete;
  RelationClassifier& operator=(const RelationClassifier&) = delete;
  RelationClassifier(RelationClassifier&& o) noexcept { *this = std::move(o); }
  RelationClassifier& operator=(RelationClassifier&& o) noexcept {
    cfg = o.cfg;
    ps = std::move(o.ps);
    enc = std::move(o.enc);
    labels = std::move(o.labels);
    vocab = std::move(o.vocab);
    enc.ps = &ps;
    return *this;
  }

  void init(const Vocabulary& v, const RelationCatalog& catalog, const ModelConfig& c,
            uint64_t seed) {
    cfg = c;
    cfg.validate();
    vocab = v;
    labels = catalog.labels();
    if (labels.empty())
      throw std::invalid_argument("relation classifier needs a closed catalog");
    enc = TextEncoder<T>{cfg, "rel.enc", &ps};
    enc.init(vocab.size(), Rng::derive(seed, "rel.enc"));
    nn::init_linear(ps, "rel.head", cfg.d, static_cast<int>(labels.size()),
                    Rng::derive(seed, "rel.head"));
  }

  Var<T> logits(const std::vector<int>& ids, const FwdMode& mode) const {
    Var<T> h = slice_rows(enc.forward(ids, mode), 0, 1);
    return nn::linear(ps, "rel.head", h);
  }

  // Normalized label distribution (1 x |labels|).
  Mat<T> scores(const std::string& context, const std::string& head,
                const std::string& tail) const {
    auto ids = expanded_context_tokens(context, vocab, head, &tail);
    return softmax_rows(logits(ids, FwdMode{}))->val;
  }

  std::string predict(const std::string& context, const std::string& head,
                      const std::string& tail) const {
    Mat<T> p = scores(context, head, tail);
    int best = 0;
    for (int j = 1; j < p.cols(); ++j)
      if (p(0, j) > p(0, best)) best = j;
    return labels[best];
  }
};

struct RelationTrainReport {
  std::vector<double> epoch_loss;
  double accuracy = 0.0;
};

template <class T>
void train_relation_classifier(RelationClassifier<T>& rc,
                               const std::vector<NarrativeSample>& data, int epochs,
                               const OptimConfig& oc, uint64_t seed,
                               RelationTrainReport* report = nullptr,
                               int batch_size = 16) {
  struct Example {
    std::vector<int> ids;
    int label;
  };
  std::map<std::string, int> label_idx;
  for (size_t i = 0; i < rc.labels.size(); ++i) label_idx[rc.labels[i]] = int(i);
  std::vector<Example> examples;
  for (const auto& s : data)
    for (const auto& k : s.gold.facts) {
      auto it = label_idx.find(k.relation);
      if (it == label_idx.end()) continue;
      examples.push_back(
          {expanded_context_tokens(s.context, rc.vocab, k.head, &k.tail), it->second});
    }
  if (examples.empty())
    throw std::invalid_argument("train_relation_classifier: no examples");

  Rng shuffle_rng(Rng::derive(seed, "rel.shuffle"));
  Rng drop_rng(Rng::derive(seed, "rel.dropout"));
  FwdMode train_mode{true, &drop_rng};
  RelationTrainReport rep;

  std::vector<size_t> order(examples.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.uniform_int(0, int64_t(i) - 1)]);
    double total = 0.0;
    for (size_t start = 0; start < order.size(); start += batch_size) {
      size_t end = std::min(order.size(), start + batch_size);
      Var<T> batch_loss;
      for (size_t i = start; i < end; ++i) {
        const Example& ex = examples[order[i]];
        Var<T> l = cross_entropy_sum(rc.logits(ex.ids, train_mode), {ex.label});
        total += l->val(0, 0);
        batch_loss = batch_loss ? add(batch_loss, l) : l;
      }
      backward(scale(batch_loss, 1.0 / double(end - start)));
      adamw_step(rc.ps, oc);
    }
    rep.epoch_loss.push_back(total / double(examples.size()));
  }

  size_t correct = 0;
  for (const auto& ex : examples) {
    Mat<T> p = softmax_rows(rc.logits(ex.ids, FwdMode{}))->val;
    int best = 0;
    for (int j = 1; j < p.cols(); ++j)
      if (p(0, j) > p(0, best)) best = j;
    if (best == ex.label) ++correct;
  }
  rep.accuracy = double(correct) / double(examples.size());
  if (report) *report = rep;
}

// Head diffuser, tail diffuser and relation classifier around one shared
// frozen entity embedder.
template <class T>
struct EntityPipeline {
  Diffuser<T> head_diff;
  Diffuser<T> tail_diff;
  RelationClassifier<T> rel;
  const Embedder<T>* entity_embedder = nullptr;  // shared, frozen
  NoiseSchedule head_sched;
  NoiseSchedule tail_sched;
  const RelationCatalog* catalog = nullptr;

  std::vector<std::string> generate_heads(const std::string& context,
                                          const GenerationConfig& gen) const {
    auto out = generate_entities(head_diff, *entity_embedder, head_sched,
                                 context_tokens(context, entity_embedder->vocab), gen);
    return dedupe_preserve_order(out.entities);
  }

  std::vector<std::string> generate_tails(const std::string& context,
                                          const std::string& head,
                                          const GenerationConfig& gen) const {
    if (normalize_ws(head).empty())
      throw std::invalid_argument("generate_tails: empty head");
    auto ids = expanded_context_tokens(context, entity_embedder->vocab, head);
    auto out = generate_entities(tail_diff, *entity_embedder, tail_sched, ids, gen);
    return dedupe_preserve_order(out.entities);
  }

  std::string predict_relation(const std::string& context, const std::string& head,
                               const std::string& tail) const {
    return rel.predict(context, head, tail);
  }

  struct GraphGeneration {
    std::vector<FactTriple> facts;
    std::vector<std::string> heads;
    int pairs_scored = 0;
  };

  // generate_heads -> per-head generate_tails -> per-pair relation, composed
  // in head-major order with duplicate triples removed. Child seeds keep the
  // sub-generations decoupled.
  GraphGeneration generate_fact_graph(const std::string& context,
                                      const GenerationConfig& gen) const {
    GraphGeneration out;
    GenerationConfig hgen = gen;
    hgen.seed = Rng::derive(gen.seed, "heads");
    out.heads = generate_heads(context, hgen);
    std::set<FactTriple> seen;
    for (size_t i = 0; i < out.heads.size(); ++i) {
      GenerationConfig tgen = gen;
      tgen.seed = Rng::derive(gen.seed, "tails." + std::to_string(i));
      for (const auto& tail : generate_tails(context, out.heads[i], tgen)) {
        ++out.pairs_scored;
        FactTriple k{out.heads[i], predict_relation(context, out.heads[i], tail), tail};
        if (seen.insert(k).second) out.facts.push_back(k);
      }
    }
    return out;
  }
};

// Training item builders for the two entity diffusers. Heads: the unique
// head list of each sample. Tails: per gold head, the tails related to it.
template <class T>
std::vector<TrainingItem<T>> build_head_items(const std::vector<NarrativeSample>& data,
                                              const Embedder<T>& em,
                                              size_t* skipped = nullptr) {
  std::vector<TrainingItem<T>> items;
  size_t n_skipped = 0;
  for (const auto& s : data) {
    auto heads = s.gold.heads();
    if (static_cast<int>(heads.size()) + 1 > em.cfg.max_slots) {
      ++n_skipped;
      continue;
    }
    TrainingItem<T> it;
    it.ctx_ids = context_tokens(s.context, em.vocab);
    it.gold.m.resize(static_cast<int>(heads.size()) + 1, em.cfg.d);
    for (size_t i = 0; i < heads.size(); ++i) {
      it.gold.m.row(static_cast<int>(i)) = em.embed_entity(heads[i]).row(0);
      it.slot_targets.push_back(verbalize_entity(heads[i], em.vocab));
    }
    it.gold.m.row(static_cast<int>(heads.size())) = em.embed_eok().row(0);
    it.slot_targets.push_back(verbalize_eok());
    items.push_back(std::move(it));
  }
  if (skipped) *skipped = n_skipped;
  return items;
}

template <class T>
std::vector<TrainingItem<T>> build_tail_items(const std::vector<NarrativeSample>& data,
                                              const Embedder<T>& em,
                                              size_t* skipped = nullptr) {
  std::vector<TrainingItem<T>> items;
  size_t n_skipped = 0;
  for (const auto& s : data) {
    for (const auto& head : s.gold.heads()) {
      std::vector<std::string> tails;
      std::set<std::string> seen;
      for (const auto& k : s.gold.facts)
        if (k.head == head && seen.insert(k.tail).second) tails.push_back(k.tail);
      if (static_cast<int>(tails.size()) + 1 > em.cfg.max_slots) {
        ++n_skipped;
        continue;
      }
      TrainingItem<T> it;
      it.ctx_ids = expanded_context_tokens(s.context, em.vocab, head);
      it.gold.m.resize(static_cast<int>(tails.size()) + 1, em.cfg.d);
      for (size_t i = 0; i < tails.size(); ++i) {
        it.gold.m.row(static_cast<int>(i)) = em.embed_entity(tails[i]).row(0);
        it.slot_targets.push_back(verbalize_entity(tails[i], em.vocab));
      }
      it.gold.m.row(static_cast<int>(tails.size())) = em.embed_eok().row(0);
      it.slot_targets.push_back(verbalize_eok());
      items.push_back(std::move(it));
    }
  }
  if (skipped) *skipped = n_skipped;
  return items;
}

}  // namespace noisefacts
