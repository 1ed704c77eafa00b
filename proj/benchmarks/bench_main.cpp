#include <benchmark/benchmark.h>

#include <sedepth/data_pipeline.hpp>
#include <sedepth/metrics_eval.hpp>
#include <sedepth/pipeline.hpp>
#include <sedepth/trainer.hpp>

using namespace sedepth;

namespace {

void BM_ComputeMetrics(benchmark::State& state) {
    const auto side = state.range(0);
    auto gen = at::make_generator<at::CPUGeneratorImpl>(1);
    const auto gt = torch::rand({side, side}, gen) * 79 + 1;
    const auto pred = torch::rand({side, side}, gen) * 79 + 1;
    const auto mask = torch::rand({side, side}, gen) < 0.3;
    for (auto _ : state) {
        benchmark::DoNotOptimize(compute_metrics(pred, gt, mask));
    }
    state.SetItemsProcessed(state.iterations() * side * side);
}
BENCHMARK(BM_ComputeMetrics)->Arg(64)->Arg(256)->Arg(1024);

void BM_SplitFlipFuse(benchmark::State& state) {
    const ImagePredictor stub = [](const torch::Tensor& x) { return x[0] * 10 + 1; };
    const auto img = torch::rand({3, 128, state.range(0)});
    const EvalProtocolConfig cfg;
    for (auto _ : state) {
        benchmark::DoNotOptimize(split_flip_fuse_predict(stub, img, cfg));
    }
}
BENCHMARK(BM_SplitFlipFuse)->Arg(256)->Arg(1242);

void BM_Predict(benchmark::State& state) {
    DepthModel model(ModelConfig{}, 1);
    const auto side = state.range(0);
    const auto img = torch::rand({3, side, side});
    for (auto _ : state) {
        benchmark::DoNotOptimize(model->predict(img));
    }
}
BENCHMARK(BM_Predict)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
    TrainerConfig cfg;
    cfg.batch_size = 4;
    cfg.total_steps = 1000000;
    Trainer trainer(ModelConfig{}, cfg);
    std::vector<RgbdSample> batch;
    for (std::uint64_t i = 0; i < 4; ++i) {
        SyntheticSceneSpec spec;
        spec.seed = i;
        batch.push_back(generate_synthetic(spec, "b" + std::to_string(i)));
    }
    for (auto _ : state) {
        benchmark::DoNotOptimize(trainer.train_step(batch));
    }
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
