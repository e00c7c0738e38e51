#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "noisefacts/nn.hpp"
#include "noisefacts/optim.hpp"
#include "noisefacts/params.hpp"
#include "noisefacts/tensor.hpp"

using namespace noisefacts;

namespace {

ModelConfig tiny_cfg() {
  ModelConfig cfg;
  cfg.d = 8;
  cfg.n_layers = 2;
  cfg.n_heads = 2;
  cfg.d_ff = 16;
  cfg.max_slots = 6;
  cfg.max_positions = 32;
  cfg.dropout = 0.0;
  return cfg;
}

Mat<double> random_mat(int r, int c, Rng& rng, double scale = 1.0) {
  Mat<double> m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = rng.normal() * scale;
  return m;
}

}  // namespace

TEST(Tensor, SumBackwardIsOnes) {
  ParameterStore<double> ps;
  auto p = ps.create("p", 3, 4, 1.0, 7);
  auto loss = sum_all(p);
  backward(loss);
  EXPECT_TRUE(p->grad.isApprox(Mat<double>::Ones(3, 4)));
}

TEST(Tensor, MseOfIdenticalArgsHasZeroGradient) {
  ParameterStore<double> ps;
  auto p = ps.create("p", 2, 3, 1.0, 7);
  auto loss = mse_sum(p, p);
  backward(loss);
  EXPECT_DOUBLE_EQ(loss->val(0, 0), 0.0);
  EXPECT_TRUE(p->grad.isZero(0.0));
}

TEST(Tensor, BackwardRequiresRecordedScalar) {
  auto c = constant<double>(Mat<double>::Ones(1, 1));
  EXPECT_THROW(backward(c), std::logic_error);
  ParameterStore<double> ps;
  auto p = ps.create("p", 2, 2, 1.0, 7);
  auto nonscalar = add(p, p);
  EXPECT_THROW(backward(nonscalar), std::invalid_argument);
}

TEST(Tensor, SoftmaxRowsSumToOne) {
  Rng rng(3);
  auto x = constant<double>(random_mat(6, 9, rng, 3.0));
  auto s = softmax_rows(x);
  for (int i = 0; i < s->rows(); ++i)
    EXPECT_NEAR(s->val.row(i).sum(), 1.0, 1e-6);
}

TEST(Tensor, LayerNormPreAffineMoments) {
  Rng rng(4);
  auto x = constant<double>(random_mat(5, 16, rng, 2.5));
  auto g = constant<double>(Mat<double>::Ones(1, 16));
  auto b = constant<double>(Mat<double>::Zero(1, 16));
  auto y = layer_norm_rows(x, g, b);
  for (int i = 0; i < y->rows(); ++i) {
    double mu = y->val.row(i).mean();
    double var = (y->val.row(i).array() - mu).square().mean();
    EXPECT_LT(std::abs(mu), 1e-6);
    EXPECT_NEAR(var, 1.0, 1e-4);
  }
}

TEST(Tensor, GatherRejectsOutOfRangeIds) {
  ParameterStore<double> ps;
  auto table = ps.create("t", 4, 3, 1.0, 7);
  EXPECT_THROW(gather_rows(table, {0, 4}), std::out_of_range);
}

// finite-difference oracles

TEST(GradCheck, LinearLayer) {
  ParameterStore<double> ps;
  ps.create("w", 3, 2, 0.5, 11);
  ps.create("b", 1, 2, 0.5, 12);
  Rng rng(13);
  Mat<double> x = random_mat(4, 3, rng);
  Mat<double> target = random_mat(4, 2, rng);
  auto make_loss = [&]() {
    auto y = add_rowwise(matmul(constant<double>(x), ps.get("w")), ps.get("b"));
    return mse_sum(y, constant<double>(target));
  };
  EXPECT_LT(grad_check(ps, make_loss, 6), 1e-7);
}

TEST(GradCheck, SoftmaxCrossEntropy) {
  ParameterStore<double> ps;
  ps.create("logits", 3, 5, 1.0, 21);
  std::vector<int> targets{1, 4, 0};
  auto make_loss = [&]() { return cross_entropy_sum(ps.get("logits"), targets); };
  EXPECT_LT(grad_check(ps, make_loss, 15), 1e-6);
}

TEST(GradCheck, TwoLayerNet) {
  ParameterStore<double> ps;
  ps.create("w1", 4, 6, 0.5, 31);
  ps.create("b1", 1, 6, 0.5, 32);
  ps.create("w2", 6, 3, 0.5, 33);
  ps.create("b2", 1, 3, 0.5, 34);
  Rng rng(35);
  Mat<double> x = random_mat(5, 4, rng);
  Mat<double> target = random_mat(5, 3, rng);
  auto make_loss = [&]() {
    auto h = gelu(add_rowwise(matmul(constant<double>(x), ps.get("w1")), ps.get("b1")));
    auto y = add_rowwise(matmul(h, ps.get("w2")), ps.get("b2"));
    return mse_sum(y, constant<double>(target));
  };
  EXPECT_LT(grad_check(ps, make_loss, 4), 1e-4);
}

TEST(GradCheck, EncoderBlock) {
  ModelConfig cfg = tiny_cfg();
  ParameterStore<double> ps;
  TextEncoder<double> enc{cfg, "enc", &ps};
  enc.init(12, 101);
  std::vector<int> ids{0, 5, 7, 3, 1};
  auto make_loss = [&]() { return mean_all(enc.forward(ids, FwdMode{})); };
  EXPECT_LT(grad_check(ps, make_loss, 2), 1e-4);
}

TEST(GradCheck, DecoderBlock) {
  ModelConfig cfg = tiny_cfg();
  ParameterStore<double> ps;
  SeqDecoder<double> dec{cfg, "dec", &ps};
  dec.init(12, 102);
  Rng rng(103);
  Mat<double> memory = random_mat(1, cfg.d, rng);
  std::vector<int> ids{0, 4, 6, 2};
  std::vector<int> targets{4, 6, 2, 1};
  auto make_loss = [&]() {
    auto logits = dec.forward(ids, constant<double>(memory), FwdMode{});
    return cross_entropy_sum(logits, targets);
  };
  EXPECT_LT(grad_check(ps, make_loss, 2), 1e-4);
}

TEST(GradCheck, DenoiserBlockWithSelfConditioning) {
  ModelConfig cfg = tiny_cfg();
  ParameterStore<double> ps;
  Denoiser<double> den{cfg, "den", &ps};
  den.init(104);
  Rng rng(105);
  Mat<double> z_t = random_mat(3, cfg.d, rng);
  Mat<double> z0_prev = random_mat(3, cfg.d, rng);
  Mat<double> ctx = random_mat(5, cfg.d, rng);
  Mat<double> target = random_mat(3, cfg.d, rng);
  auto make_loss = [&]() {
    auto out = den.forward(constant<double>(z_t), constant<double>(z0_prev), 7,
                           constant<double>(ctx), FwdMode{});
    return mse_sum(out, constant<double>(target));
  };
  EXPECT_LT(grad_check(ps, make_loss, 2), 1e-4);
}

// encoder / denoiser contracts

TEST(Encoder, SingleTokenShape) {
  ModelConfig cfg = tiny_cfg();
  ParameterStore<double> ps;
  TextEncoder<double> enc{cfg, "enc", &ps};
  enc.init(10, 41);
  auto h = enc.forward({3}, FwdMode{});
  EXPECT_EQ(h->rows(), 1);
  EXPECT_EQ(h->cols(), cfg.d);
}

TEST(Encoder, PermutingTokensChangesOutput) {
  ModelConfig cfg = tiny_cfg();
  ParameterStore<double> ps;
  TextEncoder<double> enc{cfg, "enc", &ps};
  enc.init(10, 42);
  auto a = enc.forward({0, 5, 6, 1}, FwdMode{});
  auto b = enc.forward({0, 6, 5, 1}, FwdMode{});
  EXPECT_GT((a->val - b->val).norm(), 1e-8);
}

TEST(Encoder, EvalModeIsBitwiseDeterministic) {
  ModelConfig cfg = tiny_cfg();
  cfg.dropout = 0.1;  // must be ignored outside train mode
  ParameterStore<double> ps;
  TextEncoder<double> enc{cfg, "enc", &ps};
  enc.init(10, 43);
  auto a = enc.forward({0, 2, 7, 1}, FwdMode{});
  auto b = enc.forward({0, 2, 7, 1}, FwdMode{});
  ASSERT_EQ(a->val.size(), b->val.size());
  EXPECT_EQ(0, std::memcmp(a->val.data(), b->val.data(),
                           sizeof(double) * a->val.size()));
}

TEST(Encoder, RejectsIdOutOfRange) {
  ModelConfig cfg = tiny_cfg();
  ParameterStore<double> ps;
  TextEncoder<double> enc{cfg, "enc", &ps};
  enc.init(10, 44);
  EXPECT_THROW(enc.forward({0, 10}, FwdMode{}), std::out_of_range);
}

TEST(Denoiser, OutputShapeMatchesSlots) {
  ModelConfig cfg = tiny_cfg();
  ParameterStore<double> ps;
  Denoiser<double> den{cfg, "den", &ps};
  den.init(51);
  Rng rng(52);
  auto z = constant<double>(random_mat(4, cfg.d, rng));
  auto z0 = constant<double>(random_mat(4, cfg.d, rng));
  auto ctx = constant<double>(random_mat(6, cfg.d, rng));
  auto out = den.forward(z, z0, 3, ctx, FwdMode{});
  EXPECT_EQ(out->rows(), 4);
  EXPECT_EQ(out->cols(), cfg.d);
}

TEST(Denoiser, ContextChangesOutput) {
  ModelConfig cfg = tiny_cfg();
  ParameterStore<double> ps;
  Denoiser<double> den{cfg, "den", &ps};
  den.init(53);
  Rng rng(54);
  auto z = constant<double>(random_mat(3, cfg.d, rng));
  auto z0 = constant<double>(random_mat(3, cfg.d, rng));
  auto ctx1 = constant<double>(random_mat(5, cfg.d, rng));
  auto ctx2 = constant<double>(random_mat(5, cfg.d, rng));
  auto a = den.forward(z, z0, 3, ctx1, FwdMode{});
  auto b = den.forward(z, z0, 3, ctx2, FwdMode{});
  EXPECT_GT((a->val - b->val).norm(), 1e-8);
}

TEST(Denoiser, TimeStepChangesOutput) {
  ModelConfig cfg = tiny_cfg();
  ParameterStore<double> ps;
  Denoiser<double> den{cfg, "den", &ps};
  den.init(55);
  Rng rng(56);
  auto z = constant<double>(random_mat(3, cfg.d, rng));
  auto z0 = constant<double>(random_mat(3, cfg.d, rng));
  auto ctx = constant<double>(random_mat(5, cfg.d, rng));
  auto a = den.forward(z, z0, 0, ctx, FwdMode{});
  auto b = den.forward(z, z0, 2000, ctx, FwdMode{});
  EXPECT_GT((a->val - b->val).norm(), 1e-8);
}

TEST(Denoiser, ShapeMismatchIsHardError) {
  ModelConfig cfg = tiny_cfg();
  ParameterStore<double> ps;
  Denoiser<double> den{cfg, "den", &ps};
  den.init(57);
  Rng rng(58);
  auto z = constant<double>(random_mat(3, cfg.d, rng));
  auto z0 = constant<double>(random_mat(2, cfg.d, rng));
  auto ctx = constant<double>(random_mat(5, cfg.d, rng));
  EXPECT_THROW(den.forward(z, z0, 3, ctx, FwdMode{}), std::invalid_argument);
}

// optimizer

TEST(Optimizer, ZeroGradZeroDecayIsFixedPoint) {
  ParameterStore<double> ps;
  auto p = ps.create("p", 2, 3, 1.0, 61);
  Mat<double> before = p->val;
  p->accum_grad(Mat<double>::Zero(2, 3));
  OptimConfig oc;
  oc.lr = 0.1;
  oc.weight_decay = 0.0;
  adamw_step(ps, oc);
  EXPECT_TRUE(p->val.isApprox(before));
}

TEST(Optimizer, WarmupStepZeroLr) {
  OptimConfig oc;
  oc.lr = 1e-5;
  oc.warmup = 2000;
  oc.total = 150000;
  EXPECT_DOUBLE_EQ(effective_lr(oc, 0), oc.lr / 2000.0);
  EXPECT_DOUBLE_EQ(effective_lr(oc, oc.warmup - 1), oc.lr);
  EXPECT_DOUBLE_EQ(effective_lr(oc, oc.total), 0.0);
}

TEST(Optimizer, QuadraticBowlConverges) {
  ParameterStore<double> ps;
  auto p = ps.create("p", 1, 4, 0.0, 0);
  p->val << 3.0, -2.0, 1.0, 0.5;
  OptimConfig oc;
  oc.lr = 0.05;
  oc.warmup = 10;
  oc.total = 2000;
  double loss = 0.0;
  for (int step = 0; step < 2000; ++step) {
    ps.zero_grads();
    auto l = sum_all(hadamard(p, p));
    backward(l);
    adamw_step(ps, oc);
    loss = sum_all(hadamard(p, p))->val(0, 0);
    if (loss < 1e-6) break;
  }
  EXPECT_LT(loss, 1e-6);
}

TEST(Optimizer, NonFiniteGradientSkipsUpdate) {
  ParameterStore<double> ps;
  auto p = ps.create("p", 1, 2, 1.0, 62);
  Mat<double> before = p->val;
  Mat<double> g(1, 2);
  g << std::numeric_limits<double>::quiet_NaN(), 1.0;
  p->accum_grad(g);
  OptimConfig oc;
  EXPECT_FALSE(adamw_step(ps, oc));
  EXPECT_TRUE(p->val.isApprox(before));
  EXPECT_EQ(ps.nonfinite_skips, 1);
}

// checkpoints

TEST(Checkpoint, ResaveIsByteIdentical) {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "nf_ckpt_test";
  fs::remove_all(dir);
  ModelConfig cfg = tiny_cfg();
  ParameterStore<float> ps;
  TextEncoder<float> enc{cfg, "enc", &ps};
  enc.init(10, 71);
  save_checkpoint(dir / "a", ps, cfg);

  ParameterStore<float> loaded;
  ModelConfig cfg2 = load_checkpoint(dir / "a", loaded);
  EXPECT_EQ(cfg2.d, cfg.d);
  EXPECT_EQ(loaded.params.size(), ps.params.size());
  save_checkpoint(dir / "b", loaded, cfg2);

  for (const char* f : {"manifest.json", "params.bin"}) {
    std::ifstream fa(dir / "a" / f, std::ios::binary);
    std::ifstream fb(dir / "b" / f, std::ios::binary);
    std::string sa((std::istreambuf_iterator<char>(fa)), {});
    std::string sb((std::istreambuf_iterator<char>(fb)), {});
    EXPECT_EQ(sa, sb) << f;
  }
  fs::remove_all(dir);
}

TEST(Checkpoint, UnreachableParamsGetZeroGrad) {
  ParameterStore<double> ps;
  auto a = ps.create("a", 2, 2, 1.0, 81);
  auto b = ps.create("b", 2, 2, 1.0, 82);
  backward(sum_all(a));
  EXPECT_TRUE(a->grad_set);
  EXPECT_FALSE(b->grad_set);
  EXPECT_TRUE(b->grad_or_zero().isZero(0.0));
}
