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

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "evotaxo/review.hpp"

namespace evotaxo {
namespace {

using json = nlohmann::json;

ConceptMemoryBank cmb(std::string def) { return {std::move(def), {}, {}}; }

DraftAction child_draft(const std::string& post, const std::string& parent, const std::string& label, Instant ts = 0) {
    return DraftAction{draft_id_for(post), ActionKind::add_child, post, ts, parent, ChildPayload{label, cmb("d")}, "r"};
}

RefinedAction refined_child(const std::string& id, const std::string& parent, const std::string& label,
                            std::vector<std::string> posts) {
    RefinedAction r;
    r.id = id;
    r.kind = ActionKind::add_child;
    r.target_node = parent;
    r.payload = ChildPayload{label, cmb("def " + label)};
    for (const auto& p : posts) {
        r.support.push_back(draft_id_for(p));
        r.support_posts.push_back(p);
    }
    return r;
}

RefinedAction refined_path(const std::string& id, const std::string& topic, const std::string& sub,
                           std::vector<std::string> posts) {
    auto r = refined_child(id, "", "", std::move(posts));
    r.kind = ActionKind::add_path;
    r.payload = PathPayload{topic, cmb("t"), sub, cmb("s")};
    return r;
}

FinalAction final_of(const RefinedAction& r) {
    FinalAction f;
    static_cast<RefinedAction&>(f) = r;
    return f;
}

/// Scripted refine / arbitrate answers keyed by cluster id.
class FakeModel : public ActionModel {
public:
    std::map<std::string, RefineOutcome> refine_answers;
    std::set<std::string> failing;
    std::vector<FinalAction> arbitration;
    bool arbiter_fails = false;
    std::vector<std::string> seen_representatives;

    std::vector<SeedNode> seed_taxonomy(const std::string&) override { return {}; }
    DraftAction propose(const Post&, const TaxonomyView&) override { return {}; }
    RefineOutcome refine(const ClusterEvidence& ev, const TaxonomyView&) override {
        if (failing.count(ev.cluster_id)) throw ProviderError("refiner down", true);
        const auto it = refine_answers.find(ev.cluster_id);
        return it == refine_answers.end() ? RefineOutcome{} : it->second;
    }
    std::vector<FinalAction> arbitrate(const std::vector<RefinedAction>&, const TaxonomyView&) override {
        if (arbiter_fails) throw ProviderError("arbiter down", true);
        return arbitration;
    }
};

struct Fixture {
    Taxonomy tax = Taxonomy::init("City");
    std::string housing;
    Backlog backlog;
    EmbeddingCache cache;
    std::map<std::string, Post> posts;
    Fixture() {
        housing = tax.add_child(tax.root_id(), "Housing", cmb("homes"));
        for (int i = 0; i < 12; ++i) {
            const auto pid = "p" + std::to_string(i);
            posts.emplace(pid, Post{pid, "post " + std::to_string(i), i, {}});
            backlog.add(child_draft(pid, housing, i % 2 ? "Rent control" : "Rent controls", i));
        }
        std::vector<DraftAction> drafts;
        for (const auto& e : backlog.entries()) drafts.push_back(e.action);
        HashEmbedder embedder(std::make_shared<UsageLedger>());
        cache.ensure(drafts, tax, embedder);
    }
    CandidateCluster cluster(const std::string& id, std::vector<int> members, int medoid) {
        CandidateCluster c;
        c.id = id;
        c.key = BucketKey{ActionKind::add_child, housing};
        for (int m : members) c.members.push_back(draft_id_for("p" + std::to_string(m)));
        std::sort(c.members.begin(), c.members.end());
        c.medoid = draft_id_for("p" + std::to_string(medoid));
        return c;
    }
};

TEST(Review, EvidenceStartsAtTheMedoidAndIsCapped) {
    Fixture f;
    const auto c = f.cluster("c1", {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10}, 5);
    const auto ev = build_evidence(c, f.backlog, f.cache, f.posts);
    EXPECT_EQ(ev.cluster_id, "c1");
    EXPECT_EQ(ev.target_node, f.housing);
    ASSERT_EQ(ev.representatives.size(), kMaxRepresentatives);
    EXPECT_EQ(ev.representatives[0].id, "p5");
    EXPECT_EQ(ev.members.size(), 11u);
    for (std::size_t i = 1; i < ev.members.size(); ++i) EXPECT_LT(ev.members[i - 1].id, ev.members[i].id);
    for (std::size_t i = 2; i < ev.representatives.size(); ++i) {
        const auto& m = f.cache.at(draft_id_for("p5"));
        EXPECT_LE(d_sem(m, f.cache.at(draft_id_for(ev.representatives[i - 1].id))),
                  d_sem(m, f.cache.at(draft_id_for(ev.representatives[i].id))));
    }

    auto ghost = c;
    ghost.members.push_back("d:ghost");
    EXPECT_THROW(build_evidence(ghost, f.backlog, f.cache, f.posts), Error);
}

TEST(Review, RefineRestrictsSupportAndDefersFailures) {
    Fixture f;
    const std::vector<CandidateCluster> clusters = {f.cluster("c2", {0, 1, 2}, 0), f.cluster("c1", {3, 4, 5}, 3),
                                                    f.cluster("c3", {6, 7}, 6), f.cluster("c4", {8, 9}, 8)};
    FakeModel model;
    // c1 claims support outside its members; only p3 and p4 survive.
    model.refine_answers["c1"] = RefineOutcome{false, {refined_child("r1", f.housing, "Rent control", {"p4", "p3", "p0"})}};
    // c2 returns a kind that does not match its bucket and a valid action.
    auto wrong = refined_path("r2", "Transit", "Bus", {"p0"});
    model.refine_answers["c2"] = RefineOutcome{false, {wrong, refined_child("r3", f.housing, "Evictions", {"p1", "p2"})}};
    model.failing.insert("c3");
    // c4 only returns an action whose support is all outside the cluster.
    model.refine_answers["c4"] = RefineOutcome{false, {refined_child("r4", f.housing, "Rent", {"p0"})}};

    const auto r = refine_clusters(clusters, f.tax, f.backlog, f.cache, f.posts, model, 3);
    ASSERT_EQ(r.refined.size(), 2u);
    EXPECT_EQ(r.refined[0].id, "r1");
    EXPECT_EQ(r.refined[0].source_cluster, "c1");
    EXPECT_EQ(r.refined[0].support, (std::vector<std::string>{"d:p3", "d:p4"}));
    EXPECT_EQ(r.refined[0].support_posts, (std::vector<std::string>{"p3", "p4"}));
    EXPECT_EQ(r.refined[1].id, "r3");
    EXPECT_EQ(r.deferred, (std::vector<std::string>{"c3", "c4"}));
    ASSERT_EQ(r.dropped.size(), 2u);
    EXPECT_EQ(r.dropped[0].id, "r2");
    EXPECT_EQ(r.dropped[1].id, "r4");
}

TEST(Review, RefineIsIndependentOfWorkerCount) {
    Fixture f;
    std::vector<CandidateCluster> clusters;
    FakeModel model;
    for (int i = 0; i < 6; ++i) {
        const auto id = "c" + std::to_string(i);
        clusters.push_back(f.cluster(id, {2 * i, 2 * i + 1}, 2 * i));
        model.refine_answers[id] = RefineOutcome{
            false, {refined_child("r" + std::to_string(i), f.housing, "L" + std::to_string(i),
                                  {"p" + std::to_string(2 * i), "p" + std::to_string(2 * i + 1)})}};
    }
    const auto one = refine_clusters(clusters, f.tax, f.backlog, f.cache, f.posts, model, 1);
    const auto many = refine_clusters(clusters, f.tax, f.backlog, f.cache, f.posts, model, 8);
    EXPECT_EQ(one.refined, many.refined);
    EXPECT_EQ(one.deferred, many.deferred);
}

TEST(Review, EnforceRejectsUnknownAndDuplicateIds) {
    Fixture f;
    const std::vector<RefinedAction> refined = {refined_child("r1", f.housing, "Rent", {"p1"})};
    auto ghost = final_of(refined_child("zz", f.housing, "Ghost", {"p2"}));
    const auto out = enforce_batch({final_of(refined[0]), final_of(refined[0]), ghost}, refined, f.tax);
    ASSERT_EQ(out.finals.size(), 1u);
    ASSERT_EQ(out.rejected.size(), 2u);
    EXPECT_EQ(out.rejected[0].reason, "duplicate final id");
    EXPECT_EQ(out.rejected[1].id, "zz");
}

TEST(Review, EnforceRestoresEditedPayloadsAndForeignSupport) {
    Fixture f;
    const std::vector<RefinedAction> refined = {refined_child("r1", f.housing, "Rent", {"p1", "p2"}),
                                                refined_child("r2", f.housing, "Zoning", {"p3"})};
    auto edited = final_of(refined[0]);
    std::get<ChildPayload>(edited.payload).label = "Something else";
    edited.arbitration_note = "kept";
    edited.support = {"d:p3"};
    auto out = enforce_batch({edited}, refined, f.tax);
    ASSERT_EQ(out.finals.size(), 1u);
    EXPECT_EQ(std::get<ChildPayload>(out.finals[0].payload).label, "Rent");
    EXPECT_EQ(out.finals[0].arbitration_note, "kept");
    EXPECT_EQ(out.finals[0].support, refined[0].support);  // an edited action is restored whole

    auto widened = final_of(refined[0]);
    widened.support = {"d:p3", "d:p9"};  // p3 belongs to r2, p9 to nobody
    out = enforce_batch({widened}, refined, f.tax);
    ASSERT_EQ(out.finals.size(), 1u);
    EXPECT_EQ(out.finals[0].support, (std::vector<std::string>{"d:p1", "d:p2", "d:p3"}));
    EXPECT_EQ(out.finals[0].support_posts, (std::vector<std::string>{"p1", "p2", "p3"}));
}

TEST(Review, EnforceMergesDuplicateCreations) {
    Fixture f;
    const std::vector<RefinedAction> refined = {refined_child("r1", f.housing, "Rent", {"p1"}),
                                                refined_child("r2", f.housing, " rent ", {"p2"}),
                                                refined_path("r3", "Transit", "Bus", {"p3"}),
                                                refined_path("r4", "transit", "BUS", {"p4"}),
                                                refined_path("r5", "Transit", "Rail", {"p5"})};
    std::vector<FinalAction> proposed;
    for (const auto& r : refined) proposed.push_back(final_of(r));
    const auto out = enforce_batch(proposed, refined, f.tax);
    EXPECT_TRUE(out.rejected.empty());
    ASSERT_EQ(out.finals.size(), 3u);
    EXPECT_EQ(out.finals[0].id, "r3");
    EXPECT_EQ(out.finals[0].support, (std::vector<std::string>{"d:p3", "d:p4"}));
    EXPECT_EQ(out.finals[1].id, "r5");
    EXPECT_EQ(out.finals[2].id, "r1");
    EXPECT_EQ(out.finals[2].support, (std::vector<std::string>{"d:p1", "d:p2"}));
    EXPECT_NE(out.finals[2].arbitration_note.find("merged r2"), std::string::npos);
}

TEST(Review, EnforceRejectsPathCollidingWithChildAndSecondPatch) {
    Fixture f;
    auto patch = [&](const std::string& id, const std::string& def, const std::string& post) {
        RefinedAction r = refined_child(id, f.housing, "", {post});
        r.kind = ActionKind::update_cmb;
        r.payload = CmbPatch{def, {}, {}, {}};
        return r;
    };
    const std::vector<RefinedAction> refined = {refined_path("r1", "Transit", "Bus", {"p1"}),
                                                refined_child("r2", f.tax.root_id(), "Transit", {"p2"}),
                                                patch("r3", "one", "p3"), patch("r4", "two", "p4")};
    std::vector<FinalAction> proposed;
    for (const auto& r : refined) proposed.push_back(final_of(r));
    const auto out = enforce_batch(proposed, refined, f.tax);
    ASSERT_EQ(out.finals.size(), 2u);
    EXPECT_EQ(out.finals[0].id, "r2");
    EXPECT_EQ(out.finals[1].id, "r3");
    ASSERT_EQ(out.rejected.size(), 2u);
    EXPECT_EQ(out.rejected[0].id, "r1");
    EXPECT_EQ(out.rejected[1].id, "r4");
}

TEST(Review, ArbitrationFailureAndOmissions) {
    Fixture f;
    const std::vector<RefinedAction> refined = {refined_child("r1", f.housing, "Rent", {"p1"}),
                                                refined_child("r2", f.housing, "Zoning", {"p2"})};
    FakeModel model;
    model.arbiter_fails = true;
    auto out = arbitrate_window(refined, f.tax, model);
    EXPECT_TRUE(out.finals.empty());
    EXPECT_EQ(out.rejected.size(), 2u);

    model.arbiter_fails = false;
    model.arbitration = {final_of(refined[1])};
    out = arbitrate_window(refined, f.tax, model);
    ASSERT_EQ(out.finals.size(), 1u);
    ASSERT_EQ(out.rejected.size(), 1u);
    EXPECT_EQ(out.rejected[0].id, "r1");
    EXPECT_EQ(out.rejected[0].reason, "not selected by the arbiter");
    EXPECT_TRUE(arbitrate_window({}, f.tax, model).finals.empty());
}

TEST(Review, ExecutionOrder) {
    Fixture f;
    std::vector<FinalAction> finals = {final_of(refined_child("a", f.housing, "Zoning", {"p1"})),
                                       final_of(refined_child("b", f.housing, "Rent", {"p2"})),
                                       final_of(refined_path("c", "Transit", "Bus", {"p3"}))};
    sort_for_execution(finals, f.tax);
    EXPECT_EQ(finals[0].id, "c");
    EXPECT_EQ(finals[1].id, "b");
    EXPECT_EQ(finals[2].id, "a");
}

TEST(Review, ExecuteGroundsSupportAndSkipsTombstones) {
    Fixture f;
    const std::vector<FinalAction> finals = {final_of(refined_path("a", "Transit", "Bus", {"p1", "p2"})),
                                             final_of(refined_child("b", f.housing, "Rent", {"p2", "p3"})),
                                             final_of(refined_child("c", f.housing, "Zoning", {"p4"}))};
    const auto before = f.tax.revision();
    const auto out = execute_finals(f.tax, finals, 3, {"d:p4"});
    EXPECT_EQ(out.committed, (std::vector<std::string>{"d:p1", "d:p2", "d:p3"}));
    EXPECT_EQ(out.created_nodes.size(), 3u);
    ASSERT_EQ(out.skipped.size(), 1u);  // c lost all support
    EXPECT_EQ(out.skipped[0].id, "c");
    EXPECT_FALSE(f.tax.find_child(f.housing, "Zoning"));
    const auto* rent = f.tax.find_child(f.housing, "Rent");
    ASSERT_TRUE(rent);
    EXPECT_EQ(rent->created_window, 3);
    std::size_t rent_records = 0;
    for (const auto& g : f.tax.grounding())
        if (g.node_id == rent->id) {
            ++rent_records;
            EXPECT_EQ(g.post_id, "p3");  // p2 was already committed by a
        }
    EXPECT_EQ(rent_records, 1u);
    EXPECT_GT(f.tax.revision(), before);
}

TEST(Review, ExecuteSkipsInvalidFinalsWithoutPartialEffects) {
    Fixture f;
    const auto rent = f.tax.add_child(f.housing, "Rent", cmb("r"));
    const auto nodes = f.tax.nodes();
    const auto grounding = f.tax.grounding();
    const std::vector<FinalAction> finals = {final_of(refined_child("a", rent, "Too deep", {"p1"})),
                                             final_of(refined_child("b", f.housing, "RENT", {"p2"}))};
    const auto out = execute_finals(f.tax, finals, 1, {});
    EXPECT_EQ(out.skipped.size(), 2u);
    EXPECT_TRUE(out.committed.empty());
    EXPECT_EQ(f.tax.nodes(), nodes);
    EXPECT_EQ(f.tax.grounding(), grounding);
}

TEST(Review, ApplyMovesCommittedDraftsToTombstones) {
    Fixture f;
    WindowDecision d;
    d.window = 2;
    d.finals = {final_of(refined_child("a", f.housing, "Rent", {"p0", "p1"}))};
    std::set<std::string> tombstones;
    apply_final_actions(f.tax, f.backlog, tombstones, 0, d);
    EXPECT_EQ(d.committed_draft_ids, (std::vector<std::string>{"d:p0", "d:p1"}));
    EXPECT_EQ(tombstones, (std::set<std::string>{"d:p0", "d:p1"}));
    EXPECT_EQ(d.retained_draft_ids.size(), 10u);
    EXPECT_EQ(d.evicted_draft_ids, d.retained_draft_ids);  // retention 0 evicts after one window
    EXPECT_TRUE(f.backlog.empty());
}

TEST(Review, ReplayReproducesTheLiveTree) {
    Fixture f;
    const auto start = f.tax;
    WindowDecision d;
    d.window = 1;
    d.immediate = {GroundingRecord{"p11", f.housing, 1, "d:p11", "set_node"}};
    for (const auto& r : d.immediate) f.tax.ground(r);
    d.finals = {final_of(refined_child("a", f.housing, "Rent", {"p0", "p1"}))};
    std::set<std::string> tombstones = {"d:p1"};
    apply_final_actions(f.tax, f.backlog, tombstones, 5, d);

    auto replay = start;
    replay_decision(replay, window_decision_from_json(to_json(d)));
    EXPECT_EQ(replay.nodes(), f.tax.nodes());
    EXPECT_EQ(replay.grounding(), f.tax.grounding());
}

TEST(Review, DecisionJsonRoundTrip) {
    WindowDecision d;
    d.window = 4;
    d.candidate_ids = {"c1"};
    d.refined = {refined_child("r1", "n0001", "Rent", {"p1"})};
    d.finals = {final_of(d.refined[0])};
    d.finals[0].arbitration_note = "ok";
    d.rejected_finals = {{"r9", "why"}};
    d.dropped_refined = {{"r8", "bad"}};
    d.skipped = {{"r7", "gone"}};
    d.deferred_cluster_ids = {"c2"};
    d.committed_draft_ids = {"d:p1"};
    d.retained_draft_ids = {"d:p2"};
    d.evicted_draft_ids = {"d:p3"};
    d.created_nodes = {"n0002"};
    d.immediate = {GroundingRecord{"p4", std::string(kSkipNode), 4, "d:p4", "skip_post"}};
    EXPECT_EQ(window_decision_from_json(to_json(d)), d);
    EXPECT_THROW(window_decision_from_json(json{{"window", 1}}), ParseError);
}

}  // namespace
}  // namespace evotaxo
