#include <benchmark/benchmark.h>

#include "vtc/ann_index.hpp"
#include "vtc/matrix.hpp"
#include "vtc/text.hpp"
#include "vtc/vtc_attention.hpp"

using namespace vtc;

namespace {

Matrix gaussian(std::size_t rows, std::size_t cols, Seed seed) {
  Rng rng(seed);
  Matrix m(rows, cols);
  for (double& v : m.data()) v = rng.normal();
  return m;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix a = gaussian(n, n, 1), b = gaussian(n, n, 2);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(16)->Arg(64)->Arg(128);

void BM_TextEncoder(benchmark::State& state) {
  EncoderConfig c;
  TextEncoder enc("bench", c, 3);
  const TextItem item = make_text_item("t", "a man is driving a red car down a long empty road", "v");
  for (auto _ : state) benchmark::DoNotOptimize(enc.embed(item));
}
BENCHMARK(BM_TextEncoder);

void BM_VtcAtt(benchmark::State& state) {
  const auto k = static_cast<std::size_t>(state.range(0));
  constexpr std::size_t o = 32, d = 16;
  Rng rng(4);
  VtcAttentionWeights w(o, d, 2, rng);
  const Matrix f = gaussian(8, o, 5), n = gaussian(k + 1, o, 6), h = gaussian(k + 1, d, 7);
  for (auto _ : state) {
    Tape tape;
    benchmark::DoNotOptimize(vtc_att(tape.constant(f), tape.constant(n), tape.constant(h), w).value());
  }
}
BENCHMARK(BM_VtcAtt)->Arg(0)->Arg(5)->Arg(50);

void BM_Fuse(benchmark::State& state) {
  constexpr std::size_t o = 32;
  Rng rng(8);
  VtcAttentionWeights w(o, 16, 2, rng);
  const Matrix t = gaussian(1, o, 9), f = gaussian(8, o, 10);
  for (auto _ : state) {
    Tape tape;
    benchmark::DoNotOptimize(fuse(tape.constant(t), tape.constant(f), w).value());
  }
}
BENCHMARK(BM_Fuse);

void BM_Knn(benchmark::State& state) {
  const auto mode = state.range(0) == 0 ? IndexMode::exact : IndexMode::lsh;
  constexpr std::size_t n = 4096, o = 32;
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < n; ++i) ids.push_back("x" + std::to_string(i));
  const VectorIndex index(ids, gaussian(n, o, 11), mode);
  const Matrix queries = gaussian(64, o, 12);
  std::size_t q = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(index.knn(queries.row(q), 5));
    q = (q + 1) % queries.rows();
  }
  state.SetLabel(mode == IndexMode::exact ? "exact" : "lsh");
}
BENCHMARK(BM_Knn)->Arg(0)->Arg(1);

}  // namespace

BENCHMARK_MAIN();
