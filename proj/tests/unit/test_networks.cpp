#include <gtest/gtest.h>

#include "gradcheck.hpp"
#include "test_support.hpp"
#include "wgmri/errors.hpp"
#include "wgmri/kspace.hpp"
#include "wgmri/networks.hpp"

using namespace wgmri;

namespace {

struct Problem {
  torch::Tensor x_zf;  // [B, H, W]
  KSpaceBatch k;
  torch::Tensor truth;
};

Problem make_problem(int64_t b, int64_t h, int64_t w, int64_t coils, uint64_t seed, bool full = false,
                     torch::ScalarType real = torch::kFloat64) {
  auto complex = real == torch::kFloat64 ? torch::kComplexDouble : torch::kComplexFloat;
  auto maps = generate_coil_maps(h, w, coils).maps.to(complex);
  std::vector<torch::Tensor> masks;
  for (int64_t i = 0; i < b; ++i) {
    masks.push_back(full ? torch::ones({h, w}) : generate_poisson_mask(h, w, 3, {4, 4}, seed + i).mask);
  }
  Problem p;
  p.truth = test::random_complex({b, h, w}, seed).to(complex);
  p.k.mask = torch::stack(masks).to(real);
  p.k.maps = maps;
  p.k.samples = ops::forward(p.truth, maps, p.k.mask);
  p.x_zf = ops::adjoint(p.k.samples, maps);
  return p;
}

void fill_parameters(torch::nn::Module& m, double value) {
  torch::NoGradGuard no_grad;
  for (auto& p : m.parameters()) p.fill_(value);
}

void randomize_parameters(torch::nn::Module& m, uint64_t seed, double scale = 0.3) {
  torch::NoGradGuard no_grad;
  auto gen = make_torch_generator(seed);
  for (auto& p : m.parameters()) p.copy_(torch::rand(p.sizes(), gen, p.options()).mul_(2).sub_(1).mul_(scale));
}

GeneratorArch tiny_unrolled(int k) {
  auto a = GeneratorArch::unrolled_default();
  a.unroll_iterations = k;
  a.residual_blocks = 1;
  a.feature_width = 4;
  return a;
}

GeneratorArch tiny_plain() {
  auto a = GeneratorArch::plain_default();
  a.residual_blocks = 1;
  a.tail_convs = 2;
  a.feature_width = 4;
  return a;
}

}  // namespace

TEST(Channels, ImaginaryUnitImage) {
  auto x = torch::complex(torch::zeros({8, 8}), torch::ones({8, 8}));
  auto c = complex_to_channels(x);
  ASSERT_EQ(c.sizes(), (std::vector<int64_t>{2, 8, 8}));
  EXPECT_TRUE((c[0] == 0).all().item<bool>());
  EXPECT_TRUE((c[1] == 1).all().item<bool>());
}

TEST(Channels, RoundTripsAreBitIdentical) {
  auto x = test::random_complex({4, 4}, 1).to(torch::kComplexFloat);
  EXPECT_TRUE(torch::equal(channels_to_complex(complex_to_channels(x)), x));
  auto c = test::random_real({2, 4, 4}, 2).to(torch::kFloat32);
  EXPECT_TRUE(torch::equal(complex_to_channels(channels_to_complex(c)), c));
  auto xr = test::to_vector(x);
  auto cr = complex_to_channels(x);
  for (int64_t i = 0; i < 16; ++i) {
    EXPECT_EQ(cr[0].flatten()[i].item<float>(), static_cast<float>(xr[i].real()));
    EXPECT_EQ(cr[1].flatten()[i].item<float>(), static_cast<float>(xr[i].imag()));
  }
  auto batch = test::random_complex({3, 5, 6}, 3);
  EXPECT_TRUE(torch::equal(channels_to_complex(complex_to_channels(batch)), batch));
  EXPECT_EQ(complex_to_channels(batch).sizes(), (std::vector<int64_t>{3, 2, 5, 6}));
}

TEST(Channels, ShapeErrors) {
  EXPECT_THROW(complex_to_channels(torch::zeros({4, 4})), DimensionError);
  EXPECT_THROW(channels_to_complex(torch::zeros({3, 4, 4})), DimensionError);
}

TEST(Magnitude, Examples) {
  auto real = torch::rand({6, 6}, torch::kFloat64);
  EXPECT_TRUE(torch::equal(magnitude_view(real)[0], real));
  auto x = torch::zeros({2, 2}, torch::kComplexDouble);
  x[1][1] = c10::complex<double>(3, 4);
  EXPECT_DOUBLE_EQ(magnitude_view(x)[0][1][1].item<double>(), 5.0);
  auto r = test::random_complex({16, 16}, 4);
  EXPECT_NEAR(magnitude_view(r).norm().item<double>(), r.abs().square().sum().sqrt().item<double>(), 1e-10);
}

TEST(Generator, DefaultArchitectures) {
  auto plain = GeneratorArch::plain_default();
  EXPECT_EQ(plain.residual_blocks, 5);
  EXPECT_EQ(plain.tail_convs, 3);
  Generator g(plain);
  auto named = g->named_parameters();
  for (int i = 0; i < 5; ++i) EXPECT_TRUE(named.contains("net.body." + std::to_string(i) + ".conv1.weight"));
  EXPECT_FALSE(named.contains("net.body.5.conv1.weight"));
  EXPECT_TRUE(named.contains("net.tail.0.weight"));
  EXPECT_TRUE(named.contains("net.tail.3.weight"));
  EXPECT_FALSE(named.contains("net.tail.6.weight"));
  EXPECT_FALSE(g->mu().defined());

  auto unrolled = GeneratorArch::unrolled_default();
  EXPECT_EQ(unrolled.unroll_iterations, 3);
  EXPECT_EQ(unrolled.residual_blocks, 2);
  EXPECT_EQ(unrolled.feature_width, 32);
  Generator u(unrolled);
  EXPECT_EQ(u->mu().sizes(), (std::vector<int64_t>{3}));
  EXPECT_TRUE((u->mu() == -1).all().item<bool>());
  EXPECT_TRUE(u->named_parameters().contains("block2.body.1.conv2.weight"));
  EXPECT_FALSE(u->named_parameters().contains("block2.body.2.conv2.weight"));
}

TEST(Generator, PlainShapeAndDataConsistency) {
  Generator g(GeneratorArch::plain_default());
  g->eval();
  auto p = make_problem(2, 64, 64, 1, 10, false, torch::kFloat32);
  torch::NoGradGuard no_grad;
  auto out = g->forward(p.x_zf, p.k);
  EXPECT_EQ(out.sizes(), p.x_zf.sizes());
  auto sampled = p.k.mask.to(torch::kBool);
  auto per_coil = fft2c(out.unsqueeze(1) * p.k.maps)[0][0];
  auto got = per_coil.masked_select(sampled[0]);
  auto want = p.k.samples[0][0].masked_select(sampled[0]);
  EXPECT_LT(((got - want).abs().max() / want.abs().max()).item<double>(), 1e-5);
}

TEST(Generator, PlainFullMaskIgnoresParameters) {
  Generator g(tiny_plain());
  g->to(torch::kFloat64);
  g->eval();
  randomize_parameters(*g, 11);
  auto p = make_problem(1, 16, 16, 1, 12, true);
  torch::NoGradGuard no_grad;
  auto out = g->forward(test::random_complex({1, 16, 16}, 13), p.k);
  EXPECT_LT((out - ifft2c(p.k.samples[0][0])).abs().max().item<double>(), 1e-10);
}

TEST(Generator, PlainZeroWeightsComposeManually) {
  Generator g(tiny_plain());
  g->to(torch::kFloat64);
  g->eval();
  fill_parameters(*g, 0.0);
  auto p = make_problem(2, 16, 16, 2, 14);
  torch::NoGradGuard no_grad;
  auto out = g->forward(p.x_zf, p.k);
  auto refined = channels_to_complex(g->block(0)->forward(complex_to_channels(p.x_zf)));
  auto manual = ops::hard_dc(refined, p.k.samples, p.k.maps, p.k.mask);
  EXPECT_LT((out - manual).abs().max().item<double>(), 1e-12);
  // The zero-weight network is the identity through its skip path.
  EXPECT_LT((refined - p.x_zf).abs().max().item<double>(), 1e-12);
}

TEST(Generator, UnrolledDegenerateIsZeroFilled) {
  Generator g(tiny_unrolled(1));
  g->to(torch::kFloat64);
  g->eval();
  fill_parameters(*g, 0.0);
  auto p = make_problem(2, 16, 16, 1, 15);
  torch::NoGradGuard no_grad;
  EXPECT_LT((g->forward(p.x_zf, p.k) - p.x_zf).abs().max().item<double>(), 1e-12);
}

TEST(Generator, UnrolledCallCounts) {
  Generator g(tiny_unrolled(3));
  auto p = make_problem(1, 16, 16, 1, 16, false, torch::kFloat32);
  torch::NoGradGuard no_grad;
  g->forward(p.x_zf, p.k);
  EXPECT_EQ(g->last_forward_stats().dc_calls, 3);
  EXPECT_EQ(g->last_forward_stats().block_calls, 3);
  Generator plain(tiny_plain());
  plain->forward(p.x_zf, p.k);
  EXPECT_EQ(plain->last_forward_stats().dc_calls, 1);
  EXPECT_EQ(plain->last_forward_stats().block_calls, 1);
}

TEST(Generator, UnrolledTwoIterationsComposeManually) {
  Generator g(tiny_unrolled(2));
  g->to(torch::kFloat64);
  g->eval();
  randomize_parameters(*g, 17);
  {
    torch::NoGradGuard no_grad;
    g->mu().copy_(torch::tensor({-0.7, -1.3}, torch::kFloat64));
  }
  auto p = make_problem(2, 16, 16, 2, 18);
  torch::NoGradGuard no_grad;
  auto out = g->forward(p.x_zf, p.k);
  auto nn = [&](size_t i, const torch::Tensor& v) { return channels_to_complex(g->block(i)->forward(complex_to_channels(v))); };
  auto v1 = ops::soft_dc(p.x_zf, p.x_zf, p.k.maps, p.k.mask, torch::tensor(-0.7, torch::kFloat64));
  auto x1 = nn(0, v1);
  auto v2 = ops::soft_dc(x1, p.x_zf, p.k.maps, p.k.mask, torch::tensor(-1.3, torch::kFloat64));
  auto x2 = nn(1, v2);
  EXPECT_LT((out - x2).abs().max().item<double>(), 1e-12);
  EXPECT_GT((x2 - p.x_zf).abs().max().item<double>(), 1e-3);
}

TEST(Generator, ShapeMismatchIsDimensionError) {
  Generator g(tiny_unrolled(1));
  auto p = make_problem(2, 16, 16, 1, 19, false, torch::kFloat32);
  EXPECT_THROW(g->forward(p.x_zf[0], p.k), DimensionError);
  EXPECT_THROW(g->forward(p.x_zf.slice(0, 0, 1), p.k), DimensionError);
  auto wrong = p.k;
  wrong.samples = p.k.samples.slice(-1, 0, 8);
  EXPECT_THROW(g->forward(p.x_zf, wrong), DimensionError);
}

TEST(Generator, InferenceModeIsDeterministic) {
  Generator g(tiny_unrolled(3));
  randomize_parameters(*g, 20, 0.1);
  g->eval();
  auto p = make_problem(2, 16, 16, 1, 21, false, torch::kFloat32);
  torch::NoGradGuard no_grad;
  EXPECT_TRUE(torch::equal(g->forward(p.x_zf, p.k), g->forward(p.x_zf, p.k)));
}

TEST(Critic, ArchitectureMatchesDescription) {
  Critic d(CriticArch{});
  EXPECT_EQ(d->arch().layers(), 7);
  auto named = d->named_parameters();
  const std::vector<std::vector<int64_t>> shapes{{4, 2, 3, 3},   {8, 4, 3, 3},   {16, 8, 3, 3}, {32, 16, 3, 3},
                                                 {64, 32, 3, 3}, {64, 64, 3, 3}, {1, 64, 3, 3}};
  for (size_t i = 0; i < shapes.size(); ++i) {
    EXPECT_EQ(named["conv" + std::to_string(i) + ".weight"].sizes().vec(), shapes[i]);
  }
  EXPECT_FALSE(named.contains("conv7.weight"));
  EXPECT_EQ(d->forward(torch::randn({1, 2, 64, 64})).sizes(), (std::vector<int64_t>{1}));
}

TEST(Critic, ZeroInputZeroBiasGivesZero) {
  Critic d(CriticArch{});
  {
    torch::NoGradGuard no_grad;
    for (auto& p : d->named_parameters())
      if (p.key().find("bias") != std::string::npos) p.value().zero_();
  }
  EXPECT_EQ(d->forward(torch::zeros({3, 2, 32, 32})).abs().max().item<double>(), 0.0);
}

TEST(Critic, ScalarPerImageAtAnySize) {
  Critic d(CriticArch{});
  for (int64_t s : {64, 128}) {
    auto out = d->forward(torch::randn({2, 2, s, s}));
    EXPECT_EQ(out.sizes(), (std::vector<int64_t>{2}));
    EXPECT_TRUE(torch::isfinite(out).all().item<bool>());
  }
}

TEST(Critic, ChannelMismatchIsDimensionError) {
  Critic d(CriticArch{});
  EXPECT_THROW(d->forward(torch::randn({1, 1, 32, 32})), DimensionError);
  CriticArch mag;
  mag.input_channels = 1;
  Critic m(mag);
  EXPECT_NO_THROW(m->forward(torch::randn({1, 1, 32, 32})));
  EXPECT_THROW(m->forward(torch::randn({2, 32, 32})), DimensionError);
}

TEST(Critic, Deterministic) {
  Critic d(CriticArch{});
  auto x = torch::randn({2, 2, 32, 32});
  EXPECT_TRUE(torch::equal(d->forward(x), d->forward(x)));
}

TEST(GradCheck, PlainGenerator) {
  torch::manual_seed(30);
  Generator g(tiny_plain());
  g->to(torch::kFloat64);
  randomize_parameters(*g, 31);
  auto p = make_problem(2, 16, 16, 2, 32);
  auto loss = [&] { return torch::real(g->forward(p.x_zf, p.k)).sum(); };
  auto r = test::gradcheck_parameters(loss, g->parameters(), 60, 33);
  EXPECT_EQ(r.checked, 60);
  EXPECT_LE(r.worst_relative, 1e-2);
}

TEST(GradCheck, UnrolledGeneratorIncludingStepSizes) {
  torch::manual_seed(34);
  Generator g(tiny_unrolled(3));
  g->to(torch::kFloat64);
  randomize_parameters(*g, 35);
  {
    torch::NoGradGuard no_grad;
    g->mu().copy_(torch::tensor({-0.9, -1.1, -0.6}, torch::kFloat64));
  }
  auto p = make_problem(2, 16, 16, 2, 36);
  auto loss = [&] { return torch::real(g->forward(p.x_zf, p.k)).sum(); };
  auto r = test::gradcheck_parameters(loss, g->parameters(), 60, 37);
  EXPECT_LE(r.worst_relative, 1e-2);
  auto mu_only = test::gradcheck_parameters(loss, {g->mu()}, 3, 38);
  EXPECT_EQ(mu_only.checked, 3);
  EXPECT_LE(mu_only.worst_relative, 1e-2);
}

TEST(GradCheck, Critic) {
  torch::manual_seed(39);
  Critic d(CriticArch{});
  d->to(torch::kFloat64);
  auto x = test::random_real({2, 2, 32, 32}, 40);
  auto loss = [&] { return d->forward(x).sum(); };
  auto r = test::gradcheck_parameters(loss, d->parameters(), 80, 41);
  EXPECT_LE(r.worst_relative, 1e-2);
}
