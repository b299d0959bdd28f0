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

#include <atomic>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "evotaxo/engine.hpp"
#include "support.hpp"

namespace evotaxo {
namespace {

using json = nlohmann::json;
using testing::TempDir;
using testing::data_dir;
using testing::read_file;

json golden_script() { return json::parse(read_file(data_dir() / "golden" / "script.json")); }

std::vector<Post> golden_corpus() { return load_posts(data_dir() / "golden" / "corpus.jsonl"); }

RunConfig golden_config() {
    RunConfig c;
    c.root_label = "City life";
    c.workers = 2;
    return c;
}

/// Model whose propose() starts failing after a number of calls.
class FlakyModel : public ActionModel {
public:
    FlakyModel(std::shared_ptr<ActionModel> inner, int healthy_calls) : inner_(std::move(inner)), left_(healthy_calls) {}
    std::vector<SeedNode> seed_taxonomy(const std::string& r) override { return inner_->seed_taxonomy(r); }
    DraftAction propose(const Post& p, const TaxonomyView& v) override {
        if (left_-- <= 0) throw ProviderError("model unavailable", true);
        return inner_->propose(p, v);
    }
    RefineOutcome refine(const ClusterEvidence& e, const TaxonomyView& v) override { return inner_->refine(e, v); }
    std::vector<FinalAction> arbitrate(const std::vector<RefinedAction>& r, const TaxonomyView& v) override {
        return inner_->arbitrate(r, v);
    }

private:
    std::shared_ptr<ActionModel> inner_;
    std::atomic<int> left_;
};

TEST(Engine, ConfigValidation) {
    RunConfig c;
    EXPECT_NO_THROW(c.validate());
    auto bad = [](auto edit) {
        RunConfig c;
        edit(c);
        EXPECT_THROW(c.validate(), ConfigError);
    };
    bad([](RunConfig& c) { c.root_label = "  "; });
    bad([](RunConfig& c) { c.consolidation.lambda = 1.5; });
    bad([](RunConfig& c) { c.consolidation.lambda = std::nan(""); });
    bad([](RunConfig& c) { c.consolidation.min_cluster_size = 1; });
    bad([](RunConfig& c) { c.consolidation.dedup_jaccard = 0.0; });
    bad([](RunConfig& c) { c.retention = -1; });
    bad([](RunConfig& c) { c.workers = 0; });
    bad([](RunConfig& c) { c.granularity = Granularity::fixed_span; });
}

TEST(Engine, ConfigJsonOmitsOperationalFields) {
    auto c = golden_config();
    c.consolidation.lambda = 0.25;
    c.retention = 5;
    const auto j = to_json(c);
    EXPECT_FALSE(j.contains("workers"));
    EXPECT_EQ(to_json(run_config_from_json(j)), j);
    c.workers = 7;
    c.dump_clusters = true;
    EXPECT_EQ(to_json(c), j);
}

TEST(Engine, SeedingCapsAndSkipsConflicts) {
    json script = {{"seed", json::array()}};
    for (int i = 0; i < 10; ++i) script["seed"].push_back({{"label", "T" + std::to_string(i)}, {"definition", "d"}});
    script["seed"].push_back({{"label", "t0"}, {"definition", "dup"}});
    script["seed"][0]["subtopics"] = json::array();
    for (int i = 0; i < 6; ++i) script["seed"][0]["subtopics"].push_back({{"label", "S" + std::to_string(i)}, {"definition", "d"}});
    ScriptedActionModel model(script, std::make_shared<UsageLedger>());
    const auto tax = seed_taxonomy("Root", model);
    EXPECT_EQ(tax.children(tax.root_id()).size(), kMaxSeedTopics);
    const auto* t0 = tax.find_topic("T0");
    ASSERT_TRUE(t0);
    EXPECT_EQ(tax.children(t0->id).size(), kMaxSeedSubtopics);
    for (const auto& [id, n] : tax.nodes()) EXPECT_EQ(n.created_window, 0);
}

TEST(Engine, ImmediateExecution) {
    auto tax = Taxonomy::init("Root");
    const auto topic = tax.add_child(tax.root_id(), "Housing", {"d", {}, {}});
    DraftAction set{"d:p1", ActionKind::set_node, "p1", 0, topic, std::monostate{}, "r"};
    const auto rec = execute_immediate(set, tax, 2);
    ASSERT_TRUE(rec);
    EXPECT_EQ(rec->node_id, topic);
    EXPECT_EQ(rec->window_index, 2);
    EXPECT_EQ(rec->action_type, "set_node");

    DraftAction skip{"d:p2", ActionKind::skip_post, "p2", 0, "", std::monostate{}, "r"};
    EXPECT_EQ(execute_immediate(skip, tax, 2)->node_id, kSkipNode);

    DraftAction ghost = set;
    ghost.target_node = "n9999";
    EXPECT_FALSE(execute_immediate(ghost, tax, 2));
    DraftAction structural{"d:p3", ActionKind::add_child, "p3", 0, topic, ChildPayload{"Rent", {"d", {}, {}}}, "r"};
    EXPECT_FALSE(execute_immediate(structural, tax, 2));
    EXPECT_EQ(tax.grounding().size(), 2u);
}

TEST(Engine, InMemoryRunIsDeterministic) {
    const auto posts = golden_corpus();
    const auto a = run(posts, golden_config(), make_mock_providers(golden_script()));
    auto cfg = golden_config();
    cfg.workers = 1;
    const auto b = run(posts, cfg, make_mock_providers(golden_script()));
    EXPECT_EQ(a.snapshots, b.snapshots);
    EXPECT_EQ(a.decisions, b.decisions);
    EXPECT_EQ(a.windows, b.windows);
    EXPECT_EQ(a.snapshots.size(), a.decisions.size() + 1);
    EXPECT_FALSE(a.halted);
    EXPECT_NO_THROW(a.taxonomy.check_invariants());

    std::size_t total = 0;
    for (const auto& w : a.windows) total += w.posts;
    EXPECT_EQ(total, posts.size());
}

TEST(Engine, EveryPostIsGroundedOrBackloggedOrEvicted) {
    const auto posts = golden_corpus();
    const auto r = run(posts, golden_config(), make_mock_providers(golden_script()));
    std::set<std::string> grounded;
    for (const auto& g : r.taxonomy.grounding()) grounded.insert(g.post_id);
    std::set<std::string> pending;
    for (const auto& e : r.backlog.entries()) pending.insert(e.action.post_id);
    std::set<std::string> evicted;
    for (const auto& d : r.decisions)
        for (const auto& id : d.evicted_draft_ids) evicted.insert(id.substr(2));
    for (const auto& p : posts) EXPECT_TRUE(grounded.count(p.id) + pending.count(p.id) + evicted.count(p.id) >= 1) << p.id;
}

TEST(Engine, RunDirectoryReplaysAndResumes) {
    TempDir full, split;
    const auto posts = golden_corpus();
    const auto cfg = golden_config();
    const auto whole = run(posts, cfg, make_mock_providers(golden_script()), full.path());
    EXPECT_EQ(replay_run(full.path()), std::vector<std::string>(whole.snapshots.begin() + 1, whole.snapshots.end()));

    auto halted_cfg = cfg;
    halted_cfg.halt_after = 1;
    const auto first = run(posts, halted_cfg, make_mock_providers(golden_script()), split.path());
    EXPECT_TRUE(first.halted);
    EXPECT_EQ(first.decisions.size(), 1u);
    const auto rest = resume(split.path(), posts, cfg, make_mock_providers(golden_script()));
    EXPECT_EQ(rest.taxonomy.nodes(), whole.taxonomy.nodes());
    EXPECT_EQ(rest.taxonomy.sorted_grounding(), whole.taxonomy.sorted_grounding());
    for (const char* f : {"decisions.jsonl", "grounding.jsonl", "usage.json"})
        EXPECT_EQ(read_file(split / f), read_file(full / f)) << f;
}

TEST(Engine, ResumeRefusesDifferentSettings) {
    TempDir dir;
    const auto posts = golden_corpus();
    auto cfg = golden_config();
    cfg.halt_after = 1;
    run(posts, cfg, make_mock_providers(golden_script()), dir.path());
    auto other = golden_config();
    other.consolidation.lambda = 0.0;
    EXPECT_THROW(resume(dir.path(), posts, other, make_mock_providers(golden_script())), ConfigError);
    TempDir empty;
    EXPECT_THROW(resume(empty.path(), posts, golden_config(), make_mock_providers(golden_script())), Error);
}

TEST(Engine, OutageKeepsTheLastCheckpoint) {
    TempDir dir, full;
    const auto posts = golden_corpus();
    const auto cfg = golden_config();
    auto flaky = make_mock_providers(golden_script());
    flaky.model = std::make_shared<FlakyModel>(flaky.model, 60);
    EXPECT_THROW(run(posts, cfg, flaky, dir.path()), ProviderError);
    const auto checkpoint = json::parse(read_file(dir / "checkpoint.json"));
    EXPECT_GE(checkpoint.at("next_window").get<int>(), 1);

    const auto resumed = resume(dir.path(), posts, cfg, make_mock_providers(golden_script()));
    const auto whole = run(posts, cfg, make_mock_providers(golden_script()), full.path());
    EXPECT_EQ(resumed.taxonomy.nodes(), whole.taxonomy.nodes());
    EXPECT_EQ(resumed.taxonomy.sorted_grounding(), whole.taxonomy.sorted_grounding());
    EXPECT_EQ(read_file(dir / "decisions.jsonl"), read_file(full / "decisions.jsonl"));
}

TEST(Engine, EmptyCorpusOnlySeeds) {
    const auto r = run({}, golden_config(), make_mock_providers(golden_script()));
    EXPECT_TRUE(r.decisions.empty());
    EXPECT_EQ(r.snapshots.size(), 1u);
    EXPECT_EQ(r.taxonomy.stats().topic_count, 2u);
}

}  // namespace
}  // namespace evotaxo
