#include <benchmark/benchmark.h>
#include <torch/torch.h>

#include "wgmri/kspace.hpp"
#include "wgmri/networks.hpp"
#include "wgmri/objectives.hpp"
#include "wgmri/rng.hpp"
#include "wgmri/wasserstein.hpp"

using namespace wgmri;

namespace {

struct Problem {
  torch::Tensor x, x_zf;
  KSpaceBatch k;
};

Problem make(int64_t b, int64_t size, int64_t coils) {
  torch::set_num_threads(1);
  auto gen = make_torch_generator(1);
  Problem p;
  p.k.maps = generate_coil_maps(size, size, coils).maps.to(torch::kComplexFloat);
  p.k.mask = generate_poisson_mask(size, size, 3, {8, 8}, 2).mask.expand({b, size, size}).contiguous();
  p.x = torch::randn({b, size, size}, gen, torch::kComplexFloat);
  p.k.samples = ops::forward(p.x, p.k.maps, p.k.mask);
  p.x_zf = ops::adjoint(p.k.samples, p.k.maps);
  return p;
}

void BM_Fft2c(benchmark::State& state) {
  auto p = make(1, state.range(0), 1);
  for (auto _ : state) benchmark::DoNotOptimize(fft2c(p.x));
}
BENCHMARK(BM_Fft2c)->Arg(64)->Arg(256);

void BM_ForwardOperator(benchmark::State& state) {
  auto p = make(4, 64, state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(ops::forward(p.x, p.k.maps, p.k.mask));
}
BENCHMARK(BM_ForwardOperator)->Arg(1)->Arg(4);

void BM_HardDc(benchmark::State& state) {
  auto p = make(4, 64, state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(ops::hard_dc(p.x, p.k.samples, p.k.maps, p.k.mask));
}
BENCHMARK(BM_HardDc)->Arg(1)->Arg(4);

void BM_SoftDc(benchmark::State& state) {
  auto p = make(4, 64, state.range(0));
  auto mu = torch::tensor(-1.0f);
  for (auto _ : state) benchmark::DoNotOptimize(ops::soft_dc(p.x, p.x_zf, p.k.maps, p.k.mask, mu));
}
BENCHMARK(BM_SoftDc)->Arg(1)->Arg(4);

void BM_UnrolledGenerator(benchmark::State& state) {
  auto p = make(4, 64, 1);
  auto arch = GeneratorArch::unrolled_default();
  arch.feature_width = static_cast<int>(state.range(0));
  Generator g(arch);
  g->eval();
  torch::NoGradGuard ng;
  for (auto _ : state) benchmark::DoNotOptimize(g->forward(p.x_zf, p.k));
}
BENCHMARK(BM_UnrolledGenerator)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_Critic(benchmark::State& state) {
  torch::set_num_threads(1);
  CriticArch arch;
  arch.base_features = static_cast<int>(state.range(0));
  Critic d(arch);
  auto x = torch::randn({4, 2, 64, 64});
  torch::NoGradGuard ng;
  for (auto _ : state) benchmark::DoNotOptimize(d->forward(x));
}
BENCHMARK(BM_Critic)->Arg(4)->Arg(16)->Unit(benchmark::kMillisecond);

void BM_GradientPenalty(benchmark::State& state) {
  torch::set_num_threads(1);
  Critic d(CriticArch{});
  auto gen = make_torch_generator(3);
  auto fake = torch::randn({4, 2, 64, 64}, gen);
  auto real = torch::randn({4, 2, 64, 64}, gen);
  auto alphas = torch::rand({4}, gen, torch::kFloat64);
  CriticFn fn = [&](const torch::Tensor& x) { return d->forward(x); };
  for (auto _ : state) {
    auto gp = gradient_penalty(fn, fake, real, alphas, 10.0);
    gp.backward();
  }
}
BENCHMARK(BM_GradientPenalty)->Unit(benchmark::kMillisecond);

void BM_TransportLp(benchmark::State& state) {
  const auto n = static_cast<size_t>(state.range(0));
  std::mt19937_64 e(4);
  std::normal_distribution<double> nd;
  std::vector<std::vector<double>> a(n), b(n);
  for (size_t i = 0; i < n; ++i) {
    a[i] = {nd(e), nd(e)};
    b[i] = {nd(e) + 1, nd(e)};
  }
  auto p = DiscreteMeasure::uniform(a), q = DiscreteMeasure::uniform(b);
  for (auto _ : state) benchmark::DoNotOptimize(w1_lp(p, q));
}
BENCHMARK(BM_TransportLp)->Arg(32)->Arg(128)->Arg(512)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
