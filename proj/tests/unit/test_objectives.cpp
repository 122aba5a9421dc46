#include <cmath>

#include <gtest/gtest.h>

#include "gradcheck.hpp"
#include "test_support.hpp"
#include "wgmri/errors.hpp"
#include "wgmri/networks.hpp"
#include "wgmri/objectives.hpp"

using namespace wgmri;

namespace {

torch::Tensor vec(std::vector<double> v) { return torch::tensor(v, torch::kFloat64); }

double value(const torch::Tensor& t) { return t.item<double>(); }

// D(x) = <w, x> per sample, with w scaled to the requested norm.
CriticFn linear_critic(std::vector<int64_t> shape, double norm, uint64_t seed) {
  auto w = test::random_real(shape, seed);
  w = w * (norm / w.norm().item<double>());
  return [w](const torch::Tensor& x) { return (x * w).flatten(1).sum(1); };
}

}  // namespace

TEST(GradientPenalty, UnitNormLinearCriticIsFree) {
  auto d = linear_critic({2, 8, 8}, 1.0, 1);
  auto fake = test::random_real({3, 2, 8, 8}, 2);
  auto real = test::random_real({3, 2, 8, 8}, 3);
  auto gp = gradient_penalty(d, fake, real, vec({0.1, 0.5, 0.9}), 10.0);
  EXPECT_NEAR(value(gp), 0.0, 1e-20);
}

TEST(GradientPenalty, NormThreeLinearCritic) {
  auto d = linear_critic({2, 8, 8}, 3.0, 4);
  auto fake = test::random_real({4, 2, 8, 8}, 5);
  auto real = test::random_real({4, 2, 8, 8}, 6);
  auto gp = gradient_penalty(d, fake, real, vec({0.0, 0.3, 0.6, 1.0}), 10.0);
  EXPECT_NEAR(value(gp), 40.0, 1e-10);
}

TEST(GradientPenalty, ZeroAlphaGivesRealBatch) {
  auto fake = test::random_real({3, 2, 4, 4}, 7);
  auto real = test::random_real({3, 2, 4, 4}, 8);
  EXPECT_TRUE(torch::equal(interpolate(fake, real, torch::zeros({3}, torch::kFloat64)), real));
  EXPECT_TRUE(torch::allclose(interpolate(fake, real, torch::ones({3}, torch::kFloat64)), fake));
  auto mixed = interpolate(fake, real, vec({0.0, 1.0, 0.25}));
  EXPECT_TRUE(torch::equal(mixed[0], real[0]));
  EXPECT_TRUE(torch::allclose(mixed[2], 0.25 * fake[2] + 0.75 * real[2]));
}

TEST(GradientPenalty, ShapeErrors) {
  auto fake = test::random_real({3, 2, 4, 4}, 9);
  EXPECT_THROW(interpolate(fake, test::random_real({2, 2, 4, 4}, 10), vec({0.5, 0.5})), DimensionError);
  EXPECT_THROW(interpolate(fake, fake, vec({0.5, 0.5})), DimensionError);
}

TEST(GradientPenalty, NonnegativeOnRandomCritics) {
  for (uint64_t s = 0; s < 5; ++s) {
    torch::manual_seed(100 + s);
    CriticArch arch;
    arch.base_features = 2;
    arch.tail_features = {4, 4, 1};
    Critic d(arch);
    d->to(torch::kFloat64);
    auto fake = test::random_real({2, 2, 32, 32}, 200 + s);
    auto real = test::random_real({2, 2, 32, 32}, 300 + s);
    auto gp = gradient_penalty([&](const torch::Tensor& x) { return d->forward(x); }, fake, real,
                               vec({0.2, 0.7}), 10.0);
    EXPECT_GE(value(gp), 0.0);
    EXPECT_TRUE(std::isfinite(value(gp)));
  }
}

TEST(GradientPenalty, DifferentiableInCriticParameters) {
  auto w = torch::full({1, 4, 4}, 0.5, torch::kFloat64).requires_grad_(true);
  CriticFn d = [&](const torch::Tensor& x) { return (x * w).flatten(1).sum(1); };
  auto fake = test::random_real({2, 1, 4, 4}, 11);
  auto real = test::random_real({2, 1, 4, 4}, 12);
  gradient_penalty(d, fake, real, vec({0.5, 0.5}), 10.0).backward();
  // ||w|| = 2, penalty 10 (||w|| - 1)^2, so d/dw = 20 (||w|| - 1) w / ||w||
  EXPECT_TRUE(torch::allclose(w.grad(), torch::full_like(w, 20.0 * 1.0 * 0.5 / 2.0)));
}

TEST(CriticLoss, Arithmetic) {
  auto zero = torch::zeros({}, torch::kFloat64);
  EXPECT_DOUBLE_EQ(value(critic_loss(vec({1, 3}), vec({2, 2}), zero)), 0.0);
  auto s = test::random_real({6}, 13);
  EXPECT_DOUBLE_EQ(value(critic_loss(s, s, zero)), 0.0);
  EXPECT_DOUBLE_EQ(value(critic_loss(vec({0}), vec({5}), torch::full({}, 2.0, torch::kFloat64))), -3.0);
}

TEST(CriticLoss, Errors) {
  auto zero = torch::zeros({}, torch::kFloat64);
  EXPECT_THROW(critic_loss(torch::zeros({0}), torch::zeros({0}), zero), ParameterError);
  EXPECT_THROW(critic_loss(vec({1, 2}), vec({1}), zero), DimensionError);
}

TEST(CriticLoss, ShiftInvariant) {
  auto zero = torch::zeros({}, torch::kFloat64);
  auto fake = vec({0.5, -1.25, 2.0, 0.75});
  auto real = vec({1.5, 0.25, -0.5, 3.0});
  const double base = value(critic_loss(fake, real, zero));
  for (double c : {-8.0, 0.5, 16.0}) {
    EXPECT_DOUBLE_EQ(value(critic_loss(fake + c, real + c, zero)), base);
    EXPECT_DOUBLE_EQ(value(generator_loss_wgan(fake + c)), value(generator_loss_wgan(fake)) - c);
  }
}

TEST(GeneratorLoss, Wgan) {
  EXPECT_DOUBLE_EQ(value(generator_loss_wgan(vec({0, 0}))), 0.0);
  EXPECT_DOUBLE_EQ(value(generator_loss_wgan(vec({2, 4}))), -3.0);
  EXPECT_THROW(generator_loss_wgan(torch::zeros({0})), ParameterError);
  auto s = vec({0.1, -0.4, 1.2});
  double prev = value(generator_loss_wgan(s));
  for (int i = 1; i <= 5; ++i) {
    double next = value(generator_loss_wgan(s + 0.1 * i));
    EXPECT_LT(next, prev);
    prev = next;
  }
}

TEST(L1Distance, ComplexUsesRealAndImaginaryParts) {
  auto out = torch::zeros({1, 2, 2}, torch::kComplexDouble);
  auto label = torch::complex(torch::tensor({{{1.0, -2.0}, {0.0, 0.5}}}, torch::kFloat64),
                              torch::tensor({{{3.0, 0.0}, {-1.0, 0.5}}}, torch::kFloat64));
  // (1+3 + 2+0 + 0+1 + 0.5+0.5) / 4
  EXPECT_DOUBLE_EQ(value(l1_distance(out, label)), 2.0);
  auto real = torch::tensor({{{{1.0, -1.0}, {2.0, 0.0}}}, {{{0.0, 0.0}, {0.0, 4.0}}}}, torch::kFloat64);
  EXPECT_DOUBLE_EQ(value(l1_distance(real, torch::zeros_like(real))), (1.0 + 1.0) / 2.0);
  EXPECT_THROW(l1_distance(out, torch::zeros({1, 2, 3}, torch::kComplexDouble)), DimensionError);
}

TEST(HybridLoss, Endpoints) {
  auto out = test::random_complex({2, 4, 4}, 14);
  auto label = test::random_complex({2, 4, 4}, 15);
  auto fake = vec({0.3, -1.1});
  EXPECT_DOUBLE_EQ(value(hybrid_generator_loss(fake, out, label, 1.0)), value(l1_distance(out, label)));
  EXPECT_DOUBLE_EQ(value(hybrid_generator_loss(torch::Tensor(), out, label, 1.0)), value(l1_distance(out, label)));
  EXPECT_DOUBLE_EQ(value(hybrid_generator_loss(fake, out, label, 0.0)), value(generator_loss_wgan(fake)));
  EXPECT_DOUBLE_EQ(value(hybrid_generator_loss(vec({2}), out, out, 0.5)), -1.0);
  auto mid = hybrid_generator_loss(fake, out, label, 0.25);
  EXPECT_NEAR(value(mid), 0.75 * value(generator_loss_wgan(fake)) + 0.25 * value(l1_distance(out, label)), 1e-14);
}

TEST(HybridLoss, Errors) {
  auto out = test::random_complex({1, 4, 4}, 16);
  EXPECT_THROW(hybrid_generator_loss(vec({0}), out, out, 1.5), ParameterError);
  EXPECT_THROW(hybrid_generator_loss(vec({0}), out, out, -0.1), ParameterError);
  EXPECT_THROW(hybrid_generator_loss(vec({0}), out, test::random_complex({1, 4, 3}, 17), 0.5), DimensionError);
}

TEST(HybridLoss, PureL1KeepsCriticOutOfTheGraph) {
  auto w = torch::ones({1}, torch::kFloat64).requires_grad_(true);
  auto fake = w * vec({1.0, 2.0});
  auto out = test::random_complex({2, 4, 4}, 18).requires_grad_(true);
  auto label = test::random_complex({2, 4, 4}, 19);
  hybrid_generator_loss(fake, out, label, 1.0).backward();
  EXPECT_FALSE(w.grad().defined());
  EXPECT_TRUE(out.grad().defined());
}

TEST(LambdaSchedule, Defaults) {
  LambdaSchedule s;
  EXPECT_DOUBLE_EQ(lambda_at(s, 0), 1.0);
  EXPECT_DOUBLE_EQ(lambda_at(s, 500), 1.0);
  EXPECT_NEAR(lambda_at(s, 750), 0.995, 1e-15);
  EXPECT_DOUBLE_EQ(lambda_at(s, 1000), 0.99);
  EXPECT_DOUBLE_EQ(lambda_at(s, 5000), 0.99);
  double prev = 1.0;
  for (int64_t t = 0; t <= 1200; t += 7) {
    double l = lambda_at(s, t);
    EXPECT_LE(l, prev);
    EXPECT_GE(l, 0.99);
    prev = l;
  }
}

TEST(LambdaSchedule, L1WeightByFamily) {
  ObjectiveConfig c;
  EXPECT_DOUBLE_EQ(l1_weight(c, 0), 0.0);
  c.hybrid = true;
  EXPECT_DOUBLE_EQ(l1_weight(c, 0), 1.0);
  EXPECT_DOUBLE_EQ(l1_weight(c, 2000), 0.99);
  c.family = ObjectiveFamily::l1_only;
  c.hybrid = false;
  EXPECT_DOUBLE_EQ(l1_weight(c, 2000), 1.0);
}

TEST(ObjectiveConfig, Validation) {
  ObjectiveConfig c;
  EXPECT_NO_THROW(c.validate());
  c.eta = 0;
  EXPECT_THROW(c.validate(), ParameterError);
  c.family = ObjectiveFamily::lsgan;
  EXPECT_NO_THROW(c.validate());
  c.eta = -1;
  EXPECT_THROW(c.validate(), ParameterError);
  c = ObjectiveConfig{};
  c.critic_steps_per_gen_step = 0;
  EXPECT_THROW(c.validate(), ParameterError);
  c = ObjectiveConfig{};
  c.lambda_schedule.ramp_end_step = 100;
  EXPECT_THROW(c.validate(), ParameterError);
  c = ObjectiveConfig{};
  c.lambda_schedule.final_lambda = 1.2;
  EXPECT_THROW(c.validate(), ParameterError);
  EXPECT_EQ(objective_family_from_string(to_string(ObjectiveFamily::egan)), ObjectiveFamily::egan);
  EXPECT_THROW(objective_family_from_string("wgan"), ParameterError);
}

TEST(Baselines, Lsgan) {
  auto perfect = lsgan_losses(vec({0}), vec({1}));
  EXPECT_DOUBLE_EQ(value(perfect.critic), 0.0);
  EXPECT_DOUBLE_EQ(value(lsgan_losses(vec({1}), vec({1})).generator), 0.0);
  auto l = lsgan_losses(vec({2, 0}), vec({0, 3}));
  EXPECT_DOUBLE_EQ(value(l.critic), 0.5 * (1.0 + 4.0) / 2 + 0.5 * (4.0 + 0.0) / 2);
  EXPECT_DOUBLE_EQ(value(l.generator), 0.5 * (1.0 + 1.0) / 2);
}

TEST(Baselines, EganAtZeroLogits) {
  auto l = egan_losses(vec({0, 0, 0}), vec({0, 0, 0}));
  EXPECT_NEAR(value(l.critic), 2 * std::log(2.0), 1e-15);
  EXPECT_NEAR(value(l.generator), std::log(2.0), 1e-15);
  // softplus(-r) + softplus(f) at r = 2, f = -1
  auto m = egan_losses(vec({-1}), vec({2}));
  EXPECT_NEAR(value(m.critic), std::log1p(std::exp(-2.0)) + std::log1p(std::exp(-1.0)), 1e-14);
  EXPECT_NEAR(value(m.generator), std::log1p(std::exp(1.0)), 1e-14);
}

TEST(GradCheck, CriticLossWithPenalty) {
  torch::manual_seed(50);
  CriticArch arch;
  arch.base_features = 2;
  arch.tail_features = {4, 4, 1};
  Critic d(arch);
  d->to(torch::kFloat64);
  auto fake = test::random_real({2, 2, 32, 32}, 51);
  auto real = test::random_real({2, 2, 32, 32}, 52);
  auto alphas = vec({0.3, 0.8});
  CriticFn fn = [&](const torch::Tensor& x) { return d->forward(x); };
  auto loss = [&] {
    return critic_loss(d->forward(fake), d->forward(real), gradient_penalty(fn, fake, real, alphas, 10.0));
  };
  auto r = test::gradcheck_parameters(loss, d->parameters(), 80, 53, 1e-5);
  EXPECT_EQ(r.checked, 80);
  EXPECT_LE(r.worst_relative, 1e-2);
}
