#include <benchmark/benchmark.h>

#include "cfisac/agent.hpp"
#include "cfisac/detection.hpp"
#include "cfisac/scenario.hpp"
#include "cfisac/twin.hpp"

using namespace cfisac;

static void BM_NoncentralTail(benchmark::State& state) {
    const double nc = static_cast<double>(state.range(0));
    for (auto _ : state)
        benchmark::DoNotOptimize(noncentral_chi2_ccdf(26.124, 8, nc));
}
BENCHMARK(BM_NoncentralTail)->Arg(1)->Arg(30)->Arg(1000)->Arg(100000);

static void BM_ThresholdInverse(benchmark::State& state) {
    for (auto _ : state)
        benchmark::DoNotOptimize(chi2_ccdf_inverse(1e-3, 8));
}
BENCHMARK(BM_ThresholdInverse);

static void BM_SceneObserve(benchmark::State& state) {
    ScenarioConfig cfg;
    Scene scene(cfg);
    Rng rng(5);
    const Vec2 target{180.0, 310.0};
    int mu = 0;
    for (auto _ : state) {
        benchmark::DoNotOptimize(scene.observe(mu, target, rng));
        mu = (mu + 1) % scene.codebook_size();
    }
}
BENCHMARK(BM_SceneObserve);

static void BM_QNetUpdate(benchmark::State& state) {
    Rng rng(7);
    AgentConfig cfg;
    EnvParams env;
    DqnAgent agent(cfg, env, rng);
    std::vector<Transition> rows;
    for (int i = 0; i < 256; ++i) {
        Transition t;
        t.s = {i % 64, 0.3, 0};
        t.action = i % num_actions(env.tau);
        t.reward_base = -1.0;
        t.next = {(i + 3) % 64, 0.4, 1};
        t.done = i % 17 == 0;
        rows.push_back(t);
    }
    agent.seed_replay(rows);
    Rng sampler(11);
    for (auto _ : state) {
        auto batch = [&] {
            std::vector<const Transition*> b;
            for (int i = 0; i < cfg.batch_size; ++i)
                b.push_back(&rows[static_cast<std::size_t>(
                    sampler.uniform_int(0, static_cast<int>(rows.size()) - 1))]);
            return b;
        }();
        benchmark::DoNotOptimize(agent.update_from_batch(batch));
    }
}
BENCHMARK(BM_QNetUpdate);

static void BM_TwinSample(benchmark::State& state) {
    Rng rng(9);
    TwinConfig cfg;
    TwinModel model = make_twin(cfg, rng);
    model.trained = true;
    for (auto _ : state)
        benchmark::DoNotOptimize(model.sample(12, 9, 0.4, 1, rng));
}
BENCHMARK(BM_TwinSample);

BENCHMARK_MAIN();
