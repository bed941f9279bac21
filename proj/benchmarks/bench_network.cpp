#include <benchmark/benchmark.h>

#include "tslab/network.hpp"
#include "tslab/training.hpp"

using namespace tslab;

namespace {

Tensor fake_batch(std::size_t b) {
  Tensor t({b, 1, 28, 28});
  unsigned s = 777;
  for (auto& v : t.values()) {
    s = s * 1664525u + 1013904223u;
    v = float(s >> 8) / float(1 << 24);
  }
  return t;
}

void BM_Cnn5Forward(benchmark::State& state) {
  Network net = make_network("cnn5", {1, 28, 28}, 10, ActivationSpec::tanhsoft2(0.6, 1.0));
  init_params(net, 1);
  Tensor batch = fake_batch(std::size_t(state.range(0)));
  for (auto _ : state) {
    Tensor logits = forward(net, batch, int(state.range(1)));
    benchmark::DoNotOptimize(logits.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_Cnn5TrainStep(benchmark::State& state) {
  Network net = make_network("cnn5", {1, 28, 28}, 10, ActivationSpec::tanhsoft2(0.6, 1.0));
  init_params(net, 1);
  Tensor batch = fake_batch(std::size_t(state.range(0)));
  std::vector<std::int32_t> labels(std::size_t(state.range(0)));
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = std::int32_t(i % 10);

  std::vector<Tensor*> params;
  for (auto& l : net.layers) {
    if (!l.has_params()) continue;
    params.push_back(&l.weight);
    params.push_back(&l.bias);
  }
  AdamState opt = make_adam_state(params);
  std::int64_t t = 0;
  for (auto _ : state) {
    ForwardCache cache;
    Tensor logits = forward(net, batch, cache, true, std::uint64_t(t), int(state.range(1)));
    auto [loss, grad] = cross_entropy_with_grad(logits, labels);
    benchmark::DoNotOptimize(loss);
    ParamGrads grads = backward(net, cache, grad, int(state.range(1)));
    std::vector<const Tensor*> gp;
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
      if (!net.layers[i].has_params()) continue;
      gp.push_back(&grads.weight[i]);
      gp.push_back(&grads.bias[i]);
    }
    adam_step(params, gp, opt, ++t, AdamConfig{}, 0.0);
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

}  // namespace

BENCHMARK(BM_Cnn5Forward)->Args({128, 1})->Args({128, 0})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Cnn5TrainStep)->Args({128, 1})->Args({128, 0})->Unit(benchmark::kMillisecond);
