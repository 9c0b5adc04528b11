#include <benchmark/benchmark.h>

#include <filesystem>

#include "charbench/data.hpp"
#include "charbench/synth.hpp"

using namespace charbench;
namespace fs = std::filesystem;

namespace {

const fs::path& bench_dataset() {
    static const fs::path root = [] {
        fs::path p = fs::temp_directory_path() / "charbench_bench_data";
        if (!fs::exists(p / "class_00")) synth_generate(p, 4, 64, 5);
        return p;
    }();
    return root;
}

void BM_synth_render(benchmark::State& state) {
    const fs::path out = fs::temp_directory_path() / "charbench_bench_synth";
    for (auto _ : state) {
        synth_generate(out, 2, 8, static_cast<uint64_t>(state.iterations()));
    }
    state.SetItemsProcessed(state.iterations() * 16);
    fs::remove_all(out);
}
BENCHMARK(BM_synth_render);

void BM_load_and_transform(benchmark::State& state) {
    LabeledDataset ds = ingest(bench_dataset());
    TransformConfig cfg;
    cfg.target_size = {static_cast<int>(state.range(0)), static_cast<int>(state.range(0))};
    size_t i = 0;
    for (auto _ : state) {
        Tensor img = load_and_transform(ds.samples[i++ % ds.samples.size()], cfg);
        benchmark::DoNotOptimize(img.data().data());
    }
    state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_load_and_transform)->Arg(64)->Arg(224);

void BM_batch_stream_epoch(benchmark::State& state) {
    LabeledDataset ds = ingest(bench_dataset());
    TransformConfig cfg;
    cfg.target_size = {64, 64};
    for (auto _ : state) {
        BatchStream stream(ds.samples, cfg, 32, epoch_order(ds.samples.size(), 1, 0, true),
                           static_cast<int>(state.range(0)));
        while (auto b = stream.next()) benchmark::DoNotOptimize(b->images.data().data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(ds.samples.size()));
}
BENCHMARK(BM_batch_stream_epoch)->Arg(1)->Arg(2)->Arg(4);

} // namespace
