#include "laso/losses.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "laso/optim.hpp"
#include "laso/synth.hpp"
#include "test_util.hpp"

namespace laso {
namespace {

using testing::random_tensor;

constexpr double kLn2 = 0.6931471805599453;
// log1p(exp(-10)) to 24 digits, computed with arbitrary precision.
constexpr double kSoftplusMinus10 = 4.53988992168646467694878e-05;

TEST(Bce, Examples) {
  EXPECT_NEAR(bce_value(std::vector<double>{0, 0}, std::vector<double>{1, 0}), 2 * kLn2, 1e-12);
  EXPECT_NEAR(bce_value(std::vector<double>{10}, std::vector<double>{1}), kSoftplusMinus10,
              1e-15);
  EXPECT_NEAR(bce_value(std::vector<double>{0.5}, std::vector<double>{0}),
              std::log1p(std::exp(0.5)), 1e-12);
  EXPECT_NEAR(bce_value(std::vector<double>{0}, std::vector<double>{0.5}), kLn2, 1e-12);
  EXPECT_THROW(bce_value(std::vector<double>{0, 1}, std::vector<double>{1}), ShapeError);
}

TEST(Bce, TapeMatchesScalarAndRejectsBadLabels) {
  Tensor s = Tensor::matrix(2, 2);
  s.at(0, 0) = 10;
  Tensor l = Tensor::matrix(2, 2);
  l.at(0, 0) = 1;
  l.at(1, 0) = 1;
  ad::Tape t;
  Var v = bce(t.constant(s), l);
  const double expected = (kSoftplusMinus10 + kLn2 + 2 * kLn2) / 2;
  EXPECT_NEAR(v.value().item(), expected, 1e-12);
  l.at(1, 1) = 1.5;
  EXPECT_THROW(bce(t.constant(s), l), ConfigError);
}

TEST(Bce, NonNegativeAndMonotone) {
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    const double s = uniform(rng, -30, 30);
    const double l = uniform01(rng) < 0.5 ? 1.0 : 0.0;
    const double v = bce_value(std::vector<double>{s}, std::vector<double>{l});
    EXPECT_GE(v, 0.0);
    const double v1 = bce_value(std::vector<double>{s + 0.1}, std::vector<double>{1.0});
    EXPECT_LE(v1, bce_value(std::vector<double>{s}, std::vector<double>{1.0}));
  }
}

std::vector<LabelVec> labels_of(std::initializer_list<std::initializer_list<std::size_t>> sets,
                                std::size_t L) {
  std::vector<LabelVec> out;
  for (auto s : sets) out.push_back(LabelVec::of(L, s));
  return out;
}

TEST(ClassifierLoss, ZeroClassifierIsTwoLLn2) {
  const std::size_t L = 5;
  auto c = LinearClassifier::zeros(4, L);
  Tensor f = random_tensor(Shape{3, 4}, 1, 0, 1);
  auto lx = labels_of({{0}, {1, 2}, {4}}, L);
  ad::Tape t;
  Var v = classifier_loss(t, c, t.constant(f), t.constant(f), lx, lx);
  EXPECT_NEAR(v.value().item(), 2.0 * L * kLn2, 1e-12);
}

TEST(ClassifierLoss, MaskRestrictsToSeenClasses) {
  const std::size_t L = 4;
  auto c = LinearClassifier::zeros(3, L);
  Tensor f = random_tensor(Shape{2, 3}, 1, 0, 1);
  auto lx = labels_of({{0}, {3}}, L);
  const std::vector<double> mask = {1, 1, 0, 0};
  ad::Tape t;
  Var v = classifier_loss(t, c, t.constant(f), t.constant(f), lx, lx, mask);
  EXPECT_NEAR(v.value().item(), 2.0 * 2 * kLn2, 1e-12);
}

TEST(ClassifierLoss, SelfPairIsTwiceSingleBce) {
  Rng rng(2);
  auto c = LinearClassifier::create(4, 3, rng);
  Tensor f = random_tensor(Shape{3, 4}, 5, 0, 1);
  auto lx = labels_of({{0}, {1, 2}, {}}, 3);
  ad::Tape t;
  Var pair = classifier_loss(t, c, t.constant(f), t.constant(f), lx, lx);
  Var single = bce(c.forward(t, t.constant(f)), label_matrix(lx));
  EXPECT_NEAR(pair.value().item(), 2 * single.value().item(), 1e-12);
}

TEST(LasoLoss, ClassifierReceivesNoGradient) {
  Rng rng(7);
  auto model = LasoModel::create(NetConfig{.feature_dim = 4}, 3, rng);
  Tensor fx = random_tensor(Shape{4, 4}, 8, 0, 1), fy = random_tensor(Shape{4, 4}, 9, 0, 1);
  auto lx = labels_of({{0}, {1}, {0, 2}, {}}, 3), ly = labels_of({{1}, {1}, {2}, {0}}, 3);
  ad::Tape t;
  auto ctx = ForwardContext::eval();
  auto terms = laso_objective(t, model, ctx, t.constant(fx), t.constant(fy), lx, ly, {},
                              LossOptions{});
  t.backward(terms.total);
  for (auto& p : model.classifier_params()) {
    for (double g : p.tensor->grad()) EXPECT_EQ(g, 0.0) << p.name;
  }
  double norm = 0;
  for (auto& p : model.operator_params())
    for (double g : p.tensor->grad()) norm += g * g;
  EXPECT_GT(norm, 0.0);
}

TEST(LasoLoss, TargetsAreExactSetOperations) {
  // With an oracle-like classifier and features equal to the target
  // indicators, the loss reduces to the sum of BCE against each target.
  const std::size_t L = 3;
  auto c = LinearClassifier::zeros(L, L);
  for (std::size_t k = 0; k < L; ++k) {
    c.weight.at(k, k) = 40;
    c.bias[k] = -20;
  }
  auto lx = labels_of({{0, 1}}, L), ly = labels_of({{1, 2}}, L);
  auto indicator = [&](const LabelVec& v) {
    Tensor t = Tensor::matrix(1, L);
    for (auto k : v.members()) t.at(0, k) = 1;
    return t;
  };
  ad::Tape t;
  Var loss = laso_loss(t, c, t.constant(indicator(LabelVec::of(L, {1}))),
                       t.constant(indicator(LabelVec::of(L, {0, 1, 2}))),
                       t.constant(indicator(LabelVec::of(L, {0}))), lx, ly);
  EXPECT_NEAR(loss.value().item(), 9 * std::log1p(std::exp(-20.0)), 1e-15);
}

TEST(SymLoss, ZeroOnEqualInputsAndSymmetricNets) {
  Rng rng(11);
  auto model = LasoModel::create(NetConfig{.feature_dim = 5}, 4, rng);
  Tensor fx = random_tensor(Shape{3, 5}, 1, 0, 1), fy = random_tensor(Shape{3, 5}, 2, 0, 1);
  ad::Tape t;
  auto ctx = ForwardContext::eval();
  Var same = sym_loss(t, ctx, model.inter, model.uni, t.constant(fx), t.constant(fx));
  EXPECT_EQ(same.value().item(), 0.0);

  Var x = t.constant(fx), y = t.constant(fy);
  Var sym = sym_loss(ad::min(x, y), ad::min(y, x), ad::max(x, y), ad::max(y, x));
  EXPECT_EQ(sym.value().item(), 0.0);

  Var xy = sym_loss(t, ctx, model.inter, model.uni, x, y);
  Var yx = sym_loss(t, ctx, model.inter, model.uni, y, x);
  EXPECT_NEAR(xy.value().item(), yx.value().item(), 1e-12);
  EXPECT_GT(xy.value().item(), 0.0);
}

TEST(SymLoss, UnsquaredNormScaledByDimension) {
  Tensor a = Tensor::matrix(1, 4), b = Tensor::matrix(1, 4);
  a.at(0, 0) = 3;
  a.at(0, 1) = 4;
  ad::Tape t;
  EXPECT_NEAR(scaled_row_distance(t.constant(a), t.constant(b), false).value().item(), 5.0 / 4,
              1e-15);
  EXPECT_NEAR(scaled_row_distance(t.constant(a), t.constant(b), true).value().item(), 25.0 / 4,
              1e-15);
}

TEST(McLoss, AnalyticMinMaxReconstructsCleanData) {
  auto spec = GeneratorSpec::clean();
  auto bank = generate_bank(spec, SplitSizes{.train = 40, .test = 0, .reserve = 0}, 5);
  std::vector<std::size_t> a, b;
  for (std::size_t i = 0; i < 20; ++i) {
    a.push_back(i);
    b.push_back(i + 20);
  }
  Tensor fx = bank.gather(a), fy = bank.gather(b);
  const auto op = [&](SetOp o, const Tensor& p, const Tensor& q) {
    return analytic_op(o, AnalyticVariant::kMinMax, p, q);
  };
  const Tensor z_int = op(SetOp::kIntersection, fx, fy);
  const Tensor z_sub = op(SetOp::kSubtraction, fx, fy);
  const Tensor recon_x = op(SetOp::kUnion, z_sub, z_int);
  const Tensor recon_y = op(SetOp::kUnion, op(SetOp::kSubtraction, fy, fx), z_int);
  ad::Tape t;
  Var mc = mc_loss(t.constant(fx), t.constant(fy), t.constant(recon_x), t.constant(recon_y));
  EXPECT_LE(mc.value().item(), 1e-12);
}

TEST(Objective, WeightsCombineTerms) {
  Rng rng(3);
  auto model = LasoModel::create(NetConfig{.feature_dim = 4}, 3, rng);
  Tensor fx = random_tensor(Shape{4, 4}, 8, 0, 1), fy = random_tensor(Shape{4, 4}, 9, 0, 1);
  auto lx = labels_of({{0}, {1}, {0, 2}, {}}, 3), ly = labels_of({{1}, {1}, {2}, {0}}, 3);
  LossOptions opts;
  opts.weights = {.laso = 0.5, .sym = 2.0, .mc = 0.0};
  ad::Tape t;
  auto ctx = ForwardContext::eval();
  auto terms = laso_objective(t, model, ctx, t.constant(fx), t.constant(fy), lx, ly, {}, opts);
  EXPECT_NEAR(terms.total.value().item(),
              0.5 * terms.laso.value().item() + 2.0 * terms.sym.value().item(), 1e-12);
  LossWeights bad{.laso = -1};
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Objective, GradientsMatchFiniteDifferences) {
  int checked = 0;
  for (std::uint64_t seed = 0; seed < 20 && checked < 4; ++seed) {
    Rng rng(seed);
    auto model = LasoModel::create(NetConfig{.feature_dim = 4}, 3, rng);
    Tensor fx = random_tensor(Shape{4, 4}, seed + 10, 0, 1);
    Tensor fy = random_tensor(Shape{4, 4}, seed + 20, 0, 1);
    auto lx = labels_of({{0}, {1}, {0, 2}, {2}}, 3), ly = labels_of({{1}, {1}, {2}, {}}, 3);
    std::vector<Tensor*> tensors;
    for (auto& p : model.operator_params()) tensors.push_back(p.tensor);
    const std::uint64_t dropout_seed = derive_seed(seed, 99);
    double margin = 0;
    // The train-mode value does not depend on running statistics, so their
    // drift between evaluations is harmless.
    auto eval = [&](bool backward) {
      Rng drop(dropout_seed);
      ad::Tape t;
      auto ctx = ForwardContext::train(drop);
      auto terms = laso_objective(t, model, ctx, t.constant(fx), t.constant(fy), lx, ly, {},
                                  LossOptions{});
      margin = t.kink_margin();
      if (backward) t.backward(terms.total);
      return terms.total.value().item();
    };
    for (auto* p : tensors) p->zero_grad();
    eval(true);
    if (margin < 1e-3) continue;
    const auto analytic = testing::flat_grads(tensors);
    const auto numeric = testing::numeric_grad([&] { return eval(false); }, tensors);
    EXPECT_LT(testing::rel_error(analytic, numeric), 1e-5) << "seed " << seed;
    ++checked;
  }
  EXPECT_GE(checked, 4);
}

TEST(Objective, OperatorStepLeavesClassifierUntouched) {
  Rng rng(21);
  auto model = LasoModel::create(NetConfig{.feature_dim = 4}, 3, rng);
  auto cparams = model.classifier_params();
  const auto before = checksum(cparams);
  Adam opt(model.operator_params());
  Tensor fx = random_tensor(Shape{4, 4}, 8, 0, 1), fy = random_tensor(Shape{4, 4}, 9, 0, 1);
  auto lx = labels_of({{0}, {1}, {0, 2}, {}}, 3), ly = labels_of({{1}, {1}, {2}, {0}}, 3);
  Rng drop(3);
  ad::Tape t;
  auto ctx = ForwardContext::train(drop);
  opt.zero_grad();
  auto terms = laso_objective(t, model, ctx, t.constant(fx), t.constant(fy), lx, ly, {},
                              LossOptions{});
  t.backward(terms.total);
  opt.step();
  EXPECT_EQ(checksum(cparams), before);
}

TEST(Objective, SingleLasoStepDoesNotIncreaseLoss) {
  int improved = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    auto model = LasoModel::create(NetConfig{.feature_dim = 4}, 3, rng);
    Tensor fx = random_tensor(Shape{8, 4}, seed + 1, 0, 1);
    Tensor fy = random_tensor(Shape{8, 4}, seed + 2, 0, 1);
    auto lx = labels_of({{0}, {1}, {0, 2}, {}, {0}, {1}, {2}, {0, 1}}, 3);
    auto ly = labels_of({{1}, {1}, {2}, {0}, {2}, {0}, {1, 2}, {1}}, 3);
    LossOptions opts;
    opts.weights = {.laso = 1, .sym = 0, .mc = 0};
    auto value = [&] {
      ad::Tape t;
      auto ctx = ForwardContext::eval();
      return laso_objective(t, model, ctx, t.constant(fx), t.constant(fy), lx, ly, {}, opts)
          .laso.value()
          .item();
    };
    const double before = value();
    Adam opt(model.operator_params(), AdamConfig{.learning_rate = 1e-4});
    ad::Tape t;
    auto ctx = ForwardContext::eval();
    auto terms = laso_objective(t, model, ctx, t.constant(fx), t.constant(fy), lx, ly, {}, opts);
    opt.zero_grad();
    t.backward(terms.laso);
    opt.step();
    if (value() <= before) ++improved;
  }
  EXPECT_GE(improved, 9);
}

}  // namespace
}  // namespace laso
