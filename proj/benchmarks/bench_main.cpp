#include <benchmark/benchmark.h>

#include <sbm/sbm.hpp>

namespace {

sbm::SSMParams<float> make_params(std::size_t lanes, std::size_t L, std::size_t D, std::size_t N,
                                  sbm::RandomStream& rng) {
  sbm::SSMParams<float> p;
  p.a = sbm::Tensor::uniform({N}, rng, -1.0f, -0.1f);
  p.delta = sbm::Tensor::uniform({lanes, L, D}, rng, 0.05f, 0.5f);
  p.b = sbm::Tensor::randn({lanes, L, N}, rng);
  p.c_out = sbm::Tensor::randn({lanes, L, N}, rng);
  p.d_skip = sbm::Tensor::randn({D}, rng);
  return p;
}

void BM_ScanSequential(benchmark::State& state) {
  const std::size_t L = static_cast<std::size_t>(state.range(0));
  sbm::RandomStream rng(1);
  auto p = make_params(4, L, 16, 8, rng);
  auto u = sbm::Tensor::randn({4, L, 16}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(sbm::scan_sequential(u, p).value().data());
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * 4 * L * 16));
}
BENCHMARK(BM_ScanSequential)->Arg(64)->Arg(256)->Arg(1024);

void BM_ScanParallel(benchmark::State& state) {
  const std::size_t L = static_cast<std::size_t>(state.range(0));
  sbm::RandomStream rng(1);
  auto p = make_params(4, L, 16, 8, rng);
  auto u = sbm::Tensor::randn({4, L, 16}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(sbm::scan_parallel(u, p).value().data());
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * 4 * L * 16));
}
BENCHMARK(BM_ScanParallel)->Arg(64)->Arg(256)->Arg(1024);

void BM_Matmul(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  sbm::RandomStream rng(2);
  auto a = sbm::Tensor::randn({n, n}, rng);
  auto b = sbm::Tensor::randn({n, n}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(sbm::matmul(a, b).value().data());
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(256);

void BM_Stft(benchmark::State& state) {
  const std::size_t n_fft = static_cast<std::size_t>(state.range(0));
  sbm::StftTransform<float> tf(n_fft, n_fft / 4);
  sbm::RandomStream rng(3);
  auto w = sbm::Tensor::randn({1, 16000}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(tf.stft(w).planes.value().data());
}
BENCHMARK(BM_Stft)->Arg(128)->Arg(512);

void BM_BackboneForward(benchmark::State& state) {
  sbm::RandomStream rng(4);
  sbm::BackboneConfig bc;
  bc.n_blocks = 2;
  bc.d_model = 32;
  bc.d_state = 8;
  sbm::Backbone<float> model(bc, rng);
  sbm::StftTransform<float> tf(256, 64);
  auto s = tf.stft(sbm::Tensor::randn({1, 16000}, rng));
  for (auto _ : state) benchmark::DoNotOptimize(model.forward(s, 0.5).planes.value().data());
}
BENCHMARK(BM_BackboneForward);

}  // namespace

BENCHMARK_MAIN();
