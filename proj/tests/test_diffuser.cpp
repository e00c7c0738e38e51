#include <gtest/gtest.h>

#include <set>

#include "noisefacts/diffuser.hpp"
#include "support/toy.hpp"

using namespace noisefacts;

namespace {

ModelConfig small_cfg() {
  ModelConfig cfg;
  cfg.d = 32;
  cfg.n_layers = 2;
  cfg.n_heads = 4;
  cfg.d_ff = 128;
  cfg.max_slots = 8;
  cfg.max_positions = 64;
  cfg.dropout = 0.0;
  return cfg;
}

struct Fixture {
  toy::ToyData data = toy::make_toy_data(10, 6);
  Embedder<float> em;
  Diffuser<float> diff;
  NoiseSchedule sched = sqrt_schedule(50, 1e-4, 1.0);
  TrainStats stats;
  std::vector<TrainingItem<float>> items;

  Fixture() {
    OptimConfig oc;
    oc.lr = 2e-3;
    oc.warmup = 20;
    oc.total = 100000;
    em = pretrain_embedder<float>(data.kg, data.catalog, data.vocab, small_cfg(), 130,
                                  oc, 11, nullptr);
    diff.init(data.vocab.size(), small_cfg(), 12);
    items = build_fact_items(data.corpus, em, data.catalog);
    TrainConfig tc;
    tc.steps = 700;
    tc.batch = 4;
    tc.gamma = 1.0;
    tc.optim.lr = 2e-3;
    tc.optim.warmup = 50;
    tc.optim.total = 100000;
    tc.seed = 13;
    tc.adapt_every = 400;  // exercise one adaptive update
    tc.log_every = 50;
    stats = train_diffuser(diff, items, em, sched, tc);
  }
};

Fixture& fx() {
  static Fixture f;
  return f;
}

}  // namespace

TEST(StepSequence, SingleStepUsesOnlyT) {
  EXPECT_EQ(inference_step_sequence(200, 1), std::vector<int>{200});
}

TEST(StepSequence, DescendingUniformEndsAtOne) {
  auto ts = inference_step_sequence(200, 10);
  EXPECT_EQ(ts.front(), 200);
  EXPECT_EQ(ts.back(), 1);
  for (size_t i = 1; i < ts.size(); ++i) EXPECT_LT(ts[i], ts[i - 1]);
  EXPECT_EQ(ts.size(), 10u);
  auto full = inference_step_sequence(50, 50);
  EXPECT_EQ(full.size(), 50u);
}

TEST(ColumnsBeforeEok, TruncatesAtFirstEokColumn) {
  std::vector<int> fact_seq{Vocabulary::kBos, 10, 11, Vocabulary::kEos};
  std::vector<int> eok_seq{Vocabulary::kBos, Vocabulary::kEok, Vocabulary::kEos};
  auto kept = columns_before_eok({fact_seq, fact_seq, eok_seq, fact_seq});
  EXPECT_EQ(kept.size(), 2u);
  EXPECT_TRUE(columns_before_eok({eok_seq, fact_seq}).empty());
}

TEST(Train, AnchorLossDropsSharply) {
  ASSERT_GE(fx().stats.log.size(), 2u);
  double first = fx().stats.log.front().anchor;
  double last = fx().stats.log.back().anchor;
  EXPECT_LT(last, 0.5 * first);
}

TEST(Train, AdaptiveUpdateProducedScheduleDump) {
  EXPECT_GE(fx().stats.schedule_dumps.size(), 1u);
  EXPECT_TRUE(fx().sched.per_position_active());
  EXPECT_NO_THROW(fx().sched.check_valid());
}

TEST(Train, GammaZeroRemovesAnchorTerm) {
  auto data = toy::make_toy_data(6, 3);
  OptimConfig oc;
  oc.lr = 2e-3;
  oc.warmup = 5;
  auto em = pretrain_embedder<float>(data.kg, data.catalog, data.vocab, small_cfg(),
                                     4, oc, 21, nullptr);
  Diffuser<float> diff;
  diff.init(data.vocab.size(), small_cfg(), 22);
  auto items = build_fact_items(data.corpus, em, data.catalog);
  NoiseSchedule sched = sqrt_schedule(20, 1e-4, 1.0);
  TrainConfig tc;
  tc.steps = 10;
  tc.batch = 2;
  tc.gamma = 0.0;
  tc.seed = 23;
  tc.log_every = 1;
  TrainStats st = train_diffuser(diff, items, em, sched, tc);
  for (const auto& row : st.log) {
    EXPECT_EQ(row.anchor, 0.0);
    EXPECT_NEAR(row.total, row.mse, 1e-6 * std::max(1.0, std::abs(row.total)));
  }
}

TEST(Train, RequiresFrozenEmbedder) {
  auto data = toy::make_toy_data(6, 3);
  Embedder<float> em;
  em.init(data.vocab, small_cfg(), 31);
  Diffuser<float> diff;
  diff.init(data.vocab.size(), small_cfg(), 32);
  NoiseSchedule sched = sqrt_schedule(20, 1e-4, 1.0);
  TrainConfig tc;
  std::vector<TrainingItem<float>> items;
  EXPECT_THROW(train_diffuser(diff, items, em, sched, tc), std::logic_error);
}

TEST(Train, SlotOverflowSkipsSampleWithCount) {
  auto data = toy::make_toy_data(10, 3);
  NarrativeSample big;
  big.context = "the overloaded sample";
  for (int i = 0; i < 12; ++i) big.gold.facts.push_back(data.kg.facts[i]);
  auto corpus = data.corpus;
  corpus.push_back(big);
  size_t skipped = 0;
  auto items = build_fact_items(corpus, fx().em, data.catalog, &skipped);
  EXPECT_EQ(skipped, 1u);
  EXPECT_EQ(items.size(), corpus.size() - 1);
}

TEST(Train, FrozenEmbedderBytesUntouched) {
  auto data = toy::make_toy_data(6, 3);
  OptimConfig oc;
  oc.lr = 2e-3;
  oc.warmup = 5;
  auto em = pretrain_embedder<float>(data.kg, data.catalog, data.vocab, small_cfg(),
                                     3, oc, 41, nullptr);
  std::map<std::string, Mat<float>> before;
  for (const auto& [k, v] : em.ps.params) before[k] = v->val;
  Diffuser<float> diff;
  diff.init(data.vocab.size(), small_cfg(), 42);
  auto items = build_fact_items(data.corpus, em, data.catalog);
  NoiseSchedule sched = sqrt_schedule(20, 1e-4, 1.0);
  TrainConfig tc;
  tc.steps = 30;
  tc.batch = 2;
  tc.gamma = 1.0;
  tc.seed = 43;
  train_diffuser(diff, items, em, sched, tc);
  for (const auto& [k, v] : em.ps.params) {
    ASSERT_EQ(before[k].size(), v->val.size());
    EXPECT_EQ(0, std::memcmp(before[k].data(), v->val.data(),
                             sizeof(float) * v->val.size()))
        << k;
  }
}

TEST(EncodeContext, DeterministicWithTokenWidth) {
  auto ids = context_tokens(fx().data.corpus[0].context, fx().em.vocab);
  auto a = fx().diff.encode_context(ids, FwdMode{});
  auto b = fx().diff.encode_context(ids, FwdMode{});
  EXPECT_EQ(a->rows(), static_cast<int>(ids.size()));
  EXPECT_EQ(a->cols(), fx().diff.cfg.d);
  EXPECT_TRUE(a->val.isApprox(b->val, 0.0f));
}

TEST(EncodeContext, DistinctContextsDistinctEncodings) {
  const auto& corpus = fx().data.corpus;
  for (size_t i = 0; i < corpus.size(); ++i)
    for (size_t j = i + 1; j < corpus.size(); ++j) {
      auto a = fx().diff.encode_context(context_tokens(corpus[i].context, fx().em.vocab),
                                        FwdMode{});
      auto b = fx().diff.encode_context(context_tokens(corpus[j].context, fx().em.vocab),
                                        FwdMode{});
      Mat<float> am = a->val.colwise().mean();
      Mat<float> bm = b->val.colwise().mean();
      EXPECT_GT((am - bm).norm(), 1e-6) << i << " vs " << j;
    }
}

TEST(DenoiseStep, SelfConditioningIsLive) {
  const auto& item = fx().items[0];
  auto ctx = fx().diff.encode_context(item.ctx_ids, FwdMode{});
  int n = item.gold.slots();
  Rng rng(55);
  Mat<float> zt(n, fx().diff.cfg.d);
  for (int i = 0; i < zt.rows(); ++i)
    for (int j = 0; j < zt.cols(); ++j) zt(i, j) = float(rng.normal());
  auto zt_var = constant<float>(zt);
  auto zeros = constant<float>(Mat<float>::Zero(n, fx().diff.cfg.d));
  auto first = fx().diff.denoise_step(zeros, zt_var, 25, ctx, FwdMode{});
  auto second = fx().diff.denoise_step(first, zt_var, 25, ctx, FwdMode{});
  EXPECT_GT((first->val - second->val).norm(), 1e-6);
  EXPECT_EQ(second->rows(), n);
  EXPECT_EQ(second->cols(), fx().diff.cfg.d);
}

TEST(Generate, SeededEndToEndDeterminism) {
  GenerationConfig gen;
  gen.inference_steps = 0;
  gen.n_slots = fx().diff.cfg.max_slots;
  gen.seed = 777;
  auto a = generate_facts(fx().diff, fx().em, fx().sched, fx().data.corpus[1].context,
                          fx().data.catalog, gen);
  auto b = generate_facts(fx().diff, fx().em, fx().sched, fx().data.corpus[1].context,
                          fx().data.catalog, gen);
  ASSERT_EQ(a.facts.size(), b.facts.size());
  for (size_t i = 0; i < a.facts.size(); ++i) EXPECT_TRUE(a.facts[i] == b.facts[i]);
  EXPECT_EQ(a.n_dropped, b.n_dropped);
}

TEST(Generate, NoCrashAcrossStepCounts) {
  GenerationConfig gen;
  gen.n_slots = fx().diff.cfg.max_slots;
  for (int k : {1, 2, 7, 25, 50}) {
    gen.inference_steps = k;
    gen.seed = 100 + k;
    auto out = generate_facts(fx().diff, fx().em, fx().sched,
                              fx().data.corpus[2].context, fx().data.catalog, gen);
    for (const auto& f : out.facts) {
      EXPECT_FALSE(f.head.empty());
      EXPECT_TRUE(fx().data.catalog.contains(f.relation));
      EXPECT_FALSE(f.tail.empty());
    }
  }
}

TEST(Generate, OverfitCorpusLargelyReproduced) {
  GenerationConfig gen;
  gen.inference_steps = 0;  // full T
  gen.n_slots = fx().diff.cfg.max_slots;
  int match = 0;
  for (size_t i = 0; i < fx().data.corpus.size(); ++i) {
    gen.seed = 3000 + i;
    auto out = generate_facts(fx().diff, fx().em, fx().sched,
                              fx().data.corpus[i].context, fx().data.catalog, gen);
    std::multiset<std::string> got, want;
    for (const auto& k : out.facts) got.insert(fact_display(k, fx().data.catalog));
    for (const auto& k : fx().data.corpus[i].gold.facts)
      want.insert(fact_display(k, fx().data.catalog));
    match += got == want;
  }
  EXPECT_GE(match, static_cast<int>(fx().data.corpus.size() / 2));
}

TEST(Generate, InvalidConfigRejected) {
  GenerationConfig gen;
  gen.inference_steps = fx().sched.T + 1;
  gen.n_slots = 4;
  gen.seed = 1;
  EXPECT_THROW(generate_facts(fx().diff, fx().em, fx().sched, "a context",
                              fx().data.catalog, gen),
               std::invalid_argument);
  gen.inference_steps = 1;
  gen.n_slots = fx().diff.cfg.max_slots + 1;
  EXPECT_THROW(generate_facts(fx().diff, fx().em, fx().sched, "a context",
                              fx().data.catalog, gen),
               std::invalid_argument);
}
