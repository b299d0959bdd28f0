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

#include <benchmark/benchmark.h>

#include "evotaxo/consolidation.hpp"
#include "evotaxo/evaluation.hpp"
#include "evotaxo/providers.hpp"

namespace {

using namespace evotaxo;

const char* const kLabels[] = {"Rent control", "Rent caps",  "Tenant unions", "Eviction notices",
                               "Lease terms",  "Rent strike", "Deposits",      "Landlord repairs"};

/// One add_child bucket of `n` drafts spread over ninety days.
struct BucketFixture {
    Taxonomy tax = Taxonomy::init("City");
    Backlog backlog;
    EmbeddingCache cache;
    explicit BucketFixture(std::size_t n) {
        const auto topic = tax.add_child(tax.root_id(), "Housing", {"Homes.", {}, {}});
        for (std::size_t i = 0; i < n; ++i) {
            const auto post = "p" + std::to_string(i);
            backlog.add(DraftAction{draft_id_for(post), ActionKind::add_child, post,
                                    static_cast<Instant>(1'700'000'000 + (i * 7919) % (90 * 86400)), topic,
                                    ChildPayload{kLabels[i % 8], {"Posts about renting.", {}, {}}}, "r"});
        }
        std::vector<DraftAction> drafts;
        for (const auto& e : backlog.entries()) drafts.push_back(e.action);
        HashEmbedder embedder(std::make_shared<UsageLedger>());
        cache.ensure(drafts, tax, embedder);
    }
};

void BM_Consolidate(benchmark::State& state) {
    const BucketFixture f(static_cast<std::size_t>(state.range(0)));
    const auto buckets = partition_backlog(f.backlog);
    const ConsolidationParams params;
    for (auto _ : state) benchmark::DoNotOptimize(consolidate(buckets.front(), params, f.cache));
}
BENCHMARK(BM_Consolidate)->Arg(100)->Arg(400)->Arg(1000);

void BM_JointMatrix(benchmark::State& state) {
    const BucketFixture f(static_cast<std::size_t>(state.range(0)));
    const auto buckets = partition_backlog(f.backlog);
    for (auto _ : state) benchmark::DoNotOptimize(joint_matrix(buckets.front(), f.cache, 0.5));
}
BENCHMARK(BM_JointMatrix)->Arg(400)->Arg(1000);

void BM_HashEmbed(benchmark::State& state) {
    HashEmbedder e(std::make_shared<UsageLedger>());
    const std::string text = "add_child | City>Housing | Rent control | tenants organise against rising rents";
    for (auto _ : state) benchmark::DoNotOptimize(e.embed_one(text));
}
BENCHMARK(BM_HashEmbed);

void BM_RenderView(benchmark::State& state) {
    auto tax = Taxonomy::init("City");
    for (int t = 0; t < 8; ++t) {
        const auto topic = tax.add_child(tax.root_id(), "Topic " + std::to_string(t), {"A topic definition.", {"cue a", "cue b"}, {}});
        for (int s = 0; s < 12; ++s)
            tax.add_child(topic, "Subtopic " + std::to_string(s), {"A subtopic definition.", {"cue c"}, {"cue d"}});
    }
    const auto budget = static_cast<std::size_t>(state.range(0));
    for (auto _ : state) benchmark::DoNotOptimize(render_view(tax, budget));
}
BENCHMARK(BM_RenderView)->Arg(2000)->Arg(8000)->Arg(100000);

void BM_NormalizedEntropy(benchmark::State& state) {
    std::vector<double> p(static_cast<std::size_t>(state.range(0)));
    double sum = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) sum += (p[i] = 1.0 + static_cast<double>(i % 5));
    for (auto& x : p) x /= sum;
    for (auto _ : state) benchmark::DoNotOptimize(normalized_entropy(p));
}
BENCHMARK(BM_NormalizedEntropy)->Arg(16)->Arg(256);

}  // namespace
