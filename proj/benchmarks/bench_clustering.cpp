/*
    Licensed under the Apache License, Version 2.0 (the "License");
    you may not use this file except in compliance with the License.
    You may obtain a copy of the License at

        https://www.apache.org/licenses/LICENSE-2.0

    Unless required by applicable law or agreed to in writing, software
    distributed under the License is distributed on an "AS IS" BASIS,
    WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
    See the License for the specific language governing permissions and
    limitations under the License.
*/

#include <random>

#include <benchmark/benchmark.h>

#include "evotaxo/clustering.hpp"

namespace {

using evotaxo::DistanceMatrix;

/// Euclidean distances between points drawn around eight centres in the plane.
DistanceMatrix blobs(std::size_t n, unsigned seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> jitter(0.0, 0.4);
    std::vector<std::pair<double, double>> pts(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double cx = static_cast<double>(i % 8) * 5.0;
        const double cy = static_cast<double>((i / 8) % 3) * 5.0;
        pts[i] = {cx + jitter(rng), cy + jitter(rng)};
    }
    DistanceMatrix d(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            d.set(i, j, std::hypot(pts[i].first - pts[j].first, pts[i].second - pts[j].second));
    return d;
}

void BM_Hdbscan(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const auto d = blobs(n, 42);
    for (auto _ : state) benchmark::DoNotOptimize(evotaxo::hdbscan(d, {10, 10, true}));
    state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_Hdbscan)->RangeMultiplier(2)->Range(64, 2048)->Complexity(benchmark::oNSquared);

void BM_CoreDistances(benchmark::State& state) {
    const auto d = blobs(static_cast<std::size_t>(state.range(0)), 7);
    for (auto _ : state) benchmark::DoNotOptimize(evotaxo::core_distances(d, 10));
}
BENCHMARK(BM_CoreDistances)->Arg(256)->Arg(1024);

void BM_MinimumSpanningTree(benchmark::State& state) {
    const auto d = blobs(static_cast<std::size_t>(state.range(0)), 9);
    const auto mr = evotaxo::mutual_reachability(d, evotaxo::core_distances(d, 10));
    for (auto _ : state) benchmark::DoNotOptimize(evotaxo::minimum_spanning_tree(mr));
}
BENCHMARK(BM_MinimumSpanningTree)->Arg(256)->Arg(1024);

}  // namespace
