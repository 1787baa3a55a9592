#include <benchmark/benchmark.h>

#include "cytonet/explain.hpp"
#include "cytonet/metrics.hpp"
#include "cytonet/synth.hpp"
#include "cytonet/trainer.hpp"

using namespace cytonet;

namespace {

template <typename T>
Tensor<T> rand_tensor(Rng& rng, Shape shape) {
  Tensor<T> t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(rng.uniform(-1.0, 1.0));
  return t;
}

void BM_Conv2dForward(benchmark::State& state) {
  Rng rng(1);
  const int c = static_cast<int>(state.range(0));
  Tensor<float> x = rand_tensor<float>(rng, {16, c, 24, 24});
  Tensor<float> w = rand_tensor<float>(rng, {c, c, 3, 3});
  for (auto _ : state) {
    Tape<float> t(false);
    auto y = ops::conv2d(t, t.leaf(x, false), t.leaf(w, false),
                         std::optional<Tape<float>::Var>{}, 1, 1);
    benchmark::DoNotOptimize(t.value(y).data());
  }
  state.SetItemsProcessed(state.iterations() * 16);
}
BENCHMARK(BM_Conv2dForward)->Arg(12)->Arg(24)->Arg(48);

void BM_Conv2dBackward(benchmark::State& state) {
  Rng rng(2);
  Tensor<float> x = rand_tensor<float>(rng, {16, 24, 24, 24});
  Tensor<float> w = rand_tensor<float>(rng, {24, 24, 3, 3});
  for (auto _ : state) {
    Tape<float> t(true);
    auto xv = t.leaf(x, true);
    auto y = ops::conv2d(t, xv, t.leaf(w, true), std::optional<Tape<float>::Var>{}, 1, 1);
    auto loss = ops::reduce_mean(t, y);
    t.backward(loss);
    benchmark::DoNotOptimize(t.grad(xv).data());
  }
  state.SetItemsProcessed(state.iterations() * 16);
}
BENCHMARK(BM_Conv2dBackward);

void BM_TrainStep(benchmark::State& state) {
  Dataset ds = synthesize_dataset(SyntheticSpec::default_five(96, 8, 5));
  const DatasetSplit split = stratified_split(ds, {0.7, 0.2, 0.1}, 5);
  normalize_in_place(ds, split);
  ModelConfig cfg = ModelConfig::mini(ModelFamily::rcan_densenet);
  cfg.seed = 5;
  auto model = build_model<float>(cfg);
  std::vector<Param<float>*> registry;
  ModelVisitor<float> v;
  v.param = [&registry](const std::string&, Param<float>& p) { registry.push_back(&p); };
  v.buffer = [](const std::string&, Tensor<float>&) {};
  v.counter = [](const std::string&, std::int64_t&) {};
  model->visit(v);
  Adam<float> adam(registry, AdamConfig{});
  std::vector<int> labels;
  const Tensor<float> batch = assemble_batch(ds, split.train, 0, 16, &labels);
  for (auto _ : state) {
    Tape<float> t(true);
    auto in = t.leaf(batch, false);
    auto logits = model->forward(t, in, Mode::train);
    auto loss = ops::cross_entropy_with_logits(t, logits, labels);
    t.backward(loss);
    std::vector<const Tensor<float>*> grads;
    for (Param<float>* p : registry) {
      grads.push_back(t.has_grad(p->bound) ? &t.grad(p->bound) : nullptr);
    }
    adam.step(grads);
  }
  state.SetItemsProcessed(state.iterations() * 16);
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

void BM_IntegratedGradients(benchmark::State& state) {
  Dataset ds = synthesize_dataset(SyntheticSpec::default_five(48, 10, 7));
  const DatasetSplit split = stratified_split(ds, {0.7, 0.2, 0.1}, 7);
  normalize_in_place(ds, split);
  ModelConfig cfg = ModelConfig::mini(ModelFamily::densenet);
  cfg.input_resolution = 48;
  cfg.seed = 7;
  auto model = build_model<float>(cfg);
  TrainConfig tc;
  tc.epochs = 1;
  tc.batch_size = 8;
  train_model(*model, ds, split, tc);
  auto fn = model_logit_fn(*model, Mode::eval);
  const Tensor<float>& x = ds.samples[0].image;
  Tensor<float> baseline(x.shape());
  const int steps = static_cast<int>(state.range(0));
  for (auto _ : state) {
    const AttributionMap map = integrated_gradients(fn, x, baseline, steps, 0);
    benchmark::DoNotOptimize(map.completeness_gap);
  }
}
BENCHMARK(BM_IntegratedGradients)->Arg(8)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_WeightedF1(benchmark::State& state) {
  Rng rng(9);
  std::vector<int> y_true, y_pred;
  for (int i = 0; i < 10000; ++i) {
    y_true.push_back(rng.uniform_int(5));
    y_pred.push_back(rng.uniform_int(5));
  }
  for (auto _ : state) {
    const MetricsReport rep = compute_metrics(y_true, y_pred, 5);
    benchmark::DoNotOptimize(rep.weighted_f1);
  }
}
BENCHMARK(BM_WeightedF1);

}  // namespace

BENCHMARK_MAIN();
