// Serial reference vs OpenMP kernels. Arg 0 selects the policy (0 serial, 1 parallel).

#include <benchmark/benchmark.h>

#include "docbreg/kernels.hpp"

using namespace docbreg;

namespace {

Matrix filled(std::size_t r, std::size_t c, std::uint64_t seed) {
  Rng rng(seed);
  Matrix m(r, c);
  for (double& v : m.data) v = rng.uniform(-1, 1);
  return m;
}

ExecPolicy policy(const benchmark::State& s) { return s.range(0) ? ExecPolicy::parallel : ExecPolicy::serial; }

void BM_AffineForward(benchmark::State& s) {
  const auto n = static_cast<std::size_t>(s.range(1));
  const Matrix x = filled(n, 128, 1), w = filled(128, 128, 2);
  const std::vector<double> b(128, 0.1);
  Matrix y(n, 128);
  for (auto _ : s) {
    affine_forward(policy(s), x, w, b, y);
    benchmark::DoNotOptimize(y.data.data());
  }
}

void BM_AffineBackward(benchmark::State& s) {
  const auto n = static_cast<std::size_t>(s.range(1));
  const Matrix x = filled(n, 128, 1), w = filled(128, 128, 2), dy = filled(n, 128, 3);
  Matrix dx(n, 128), dw(128, 128);
  std::vector<double> db(128);
  for (auto _ : s) {
    affine_backward(policy(s), x, w, dy, &dx, dw, db);
    benchmark::DoNotOptimize(dw.data.data());
  }
}

void BM_Cosine(benchmark::State& s) {
  const auto n = static_cast<std::size_t>(s.range(1));
  const Matrix a = filled(n, 128, 4), b = filled(n, 128, 5);
  Matrix out(n, n);
  for (auto _ : s) {
    cosine_similarity(policy(s), a, b, out);
    benchmark::DoNotOptimize(out.data.data());
  }
}

void BM_Attention(benchmark::State& s) {
  const auto n = static_cast<std::size_t>(s.range(1));
  const std::size_t d = 64;
  const Matrix q = filled(n, d, 6), k = filled(n, d, 7), v = filled(n, d, 8);
  const Matrix gk = filled(n, d, 9), gv = filled(n, d, 10), gq = filled(1, d, 11);
  const std::vector<std::uint8_t> valid(n, 1);
  const AttentionInputs in{q, k, v, gq.data, gk, gv, valid, 64};
  Matrix ctx(n, d);
  for (auto _ : s) {
    auto map = attention_pattern(n, valid, 64);
    attention_forward(policy(s), in, map, ctx);
    benchmark::DoNotOptimize(ctx.data.data());
  }
  s.counters["pairs"] = static_cast<double>(attention_pattern(n, valid, 64).pair_visits());
}

}  // namespace

BENCHMARK(BM_AffineForward)->ArgsProduct({{0, 1}, {64, 512}});
BENCHMARK(BM_AffineBackward)->ArgsProduct({{0, 1}, {64, 512}});
BENCHMARK(BM_Cosine)->ArgsProduct({{0, 1}, {64, 256}});
BENCHMARK(BM_Attention)->ArgsProduct({{0, 1}, {512, 2048}});

BENCHMARK_MAIN();
