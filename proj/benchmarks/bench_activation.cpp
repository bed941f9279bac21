#include <benchmark/benchmark.h>

#include "tslab/activation.hpp"

using namespace tslab;

namespace {

Tensor preactivations(std::size_t n) {
  Tensor t({n});
  unsigned s = 12345;
  for (auto& v : t.values()) {
    s = s * 1664525u + 1013904223u;
    v = -8.0f + 16.0f * float(s >> 8) / float(1 << 24);
  }
  return t;
}

void BM_EvalMap(benchmark::State& state, const ActivationSpec& spec) {
  Tensor t = preactivations(std::size_t(state.range(0)));
  for (auto _ : state) {
    Tensor out = eval_map(spec, t);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_DerivMap(benchmark::State& state, const ActivationSpec& spec) {
  Tensor t = preactivations(std::size_t(state.range(0)));
  for (auto _ : state) {
    Tensor out = deriv_map(spec, t);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

}  // namespace

BENCHMARK_CAPTURE(BM_EvalMap, relu, ActivationSpec::relu())->Arg(1 << 14);
BENCHMARK_CAPTURE(BM_EvalMap, swish, ActivationSpec::swish())->Arg(1 << 14);
BENCHMARK_CAPTURE(BM_EvalMap, softplus, ActivationSpec::softplus())->Arg(1 << 14);
BENCHMARK_CAPTURE(BM_EvalMap, tanhsoft1, ActivationSpec::tanhsoft1(0.87))->Arg(1 << 14);
BENCHMARK_CAPTURE(BM_EvalMap, tanhsoft2, ActivationSpec::tanhsoft2(0.6, 1.0))->Arg(1 << 14);
BENCHMARK_CAPTURE(BM_EvalMap, family, ActivationSpec::family(Hyperparams(1, 1, 1, 1)))
    ->Arg(1 << 14);

BENCHMARK_CAPTURE(BM_DerivMap, relu, ActivationSpec::relu())->Arg(1 << 14);
BENCHMARK_CAPTURE(BM_DerivMap, swish, ActivationSpec::swish())->Arg(1 << 14);
BENCHMARK_CAPTURE(BM_DerivMap, tanhsoft2, ActivationSpec::tanhsoft2(0.6, 1.0))->Arg(1 << 14);
BENCHMARK_CAPTURE(BM_DerivMap, family, ActivationSpec::family(Hyperparams(1, 1, 1, 1)))
    ->Arg(1 << 14);

BENCHMARK_MAIN();
