#include <benchmark/benchmark.h>

#include "ftwa/ops.hpp"
#include "ftwa/raft.hpp"
#include "ftwa/swa.hpp"
#include "ftwa/trainer.hpp"

using namespace ftwa;

namespace {

template <typename T>
Var<T> noise(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<T> t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(normal01(rng));
  return Var<T>::constant(t);
}

void BM_Conv3x3(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  const Var<float> x = noise<float>({16, c, 16, 8}, 1);
  Rng rng(2);
  const Conv2d<float> conv(c, c, 3, 1, 1, false, rng);
  for (auto _ : state) benchmark::DoNotOptimize(conv(x).value().data());
  state.SetItemsProcessed(state.iterations() * 16);
}
BENCHMARK(BM_Conv3x3)->Arg(32)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_RaftForward(benchmark::State& state) {
  Rng rng(3);
  const Raft<float> raft(RaftConfig::for_backbone(BackboneConfig::tiny()), rng);
  const Var<float> f = noise<float>({static_cast<int>(state.range(0)), 256, 8, 4}, 4);
  NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(raft.transform(f).value().data());
}
BENCHMARK(BM_RaftForward)->Arg(1)->Arg(16)->Unit(benchmark::kMillisecond);

void BM_RaftForwardBackward(benchmark::State& state) {
  Rng rng(3);
  const Raft<float> raft(RaftConfig::for_backbone(BackboneConfig::tiny()), rng);
  const Var<float> f = noise<float>({16, 256, 8, 4}, 4);
  for (auto _ : state) backward(ops::mean(raft.transform(f)));
}
BENCHMARK(BM_RaftForwardBackward)->Unit(benchmark::kMillisecond);

void BM_TripletBatchAll(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const Var<double> v = noise<double>({n, 256, 1, 1}, 5);
  std::vector<int> labels(n);
  for (int i = 0; i < n; ++i) labels[i] = i / 4;
  for (auto _ : state) benchmark::DoNotOptimize(triplet_loss<double>(v, labels, 0.3).loss.value().data());
  state.SetComplexityN(n);
}
BENCHMARK(BM_TripletBatchAll)->RangeMultiplier(2)->Range(16, 128)->Complexity(benchmark::oNCubed);

void BM_TrainStep(benchmark::State& state) {
  TrainConfig config = TrainConfig::desk();
  config.variant = static_cast<Variant>(state.range(0));
  const MlrSplit split = build_mlr_split(generate_synthetic_corpus(config.corpus), config.mlr_config());
  Trainer<float> trainer(config, split);
  const BatchInputs<float> inputs = trainer.batch_inputs(0);
  for (auto _ : state) trainer.step(inputs, 1e-4);
  state.SetLabel(to_string(config.variant));
}
BENCHMARK(BM_TrainStep)
    ->Arg(static_cast<int>(Variant::kBaseline))
    ->Arg(static_cast<int>(Variant::kFtwa))
    ->Unit(benchmark::kMillisecond)
    ->Iterations(5);

}  // namespace

BENCHMARK_MAIN();
