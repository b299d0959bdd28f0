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

#include "evotaxo/taxonomy.hpp"

namespace evotaxo {
namespace {

ConceptMemoryBank cmb(std::string def, std::vector<std::string> inc = {}, std::vector<std::string> exc = {}) {
    return ConceptMemoryBank{std::move(def), std::move(inc), std::move(exc)};
}

TaxonomyError::Code code_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const TaxonomyError& e) {
        return e.code();
    }
    ADD_FAILURE() << "no TaxonomyError raised";
    return TaxonomyError::Code::malformed;
}

TEST(Taxonomy, InitHasOnlyTheRoot) {
    const auto t = Taxonomy::init("City life");
    EXPECT_EQ(t.root_id(), "n0000");
    EXPECT_EQ(t.root().label, "City life");
    EXPECT_EQ(t.root().level, Level::root);
    EXPECT_EQ(t.revision(), 0u);
    EXPECT_EQ(t.stats(), TaxonomyStats{});
    EXPECT_TRUE(t.leaves().empty());
    EXPECT_THROW(Taxonomy::init(""), TaxonomyError);
}

TEST(Taxonomy, AddChildAssignsLevelsAndIds) {
    auto t = Taxonomy::init("Root");
    const auto topic = t.add_child(t.root_id(), "Housing", cmb("Homes."), 1);
    const auto sub = t.add_child(topic, "  Tenant rights ", cmb("Renters."), 2);
    EXPECT_EQ(topic, "n0001");
    EXPECT_EQ(sub, "n0002");
    EXPECT_EQ(t.node(topic).level, Level::topic);
    EXPECT_EQ(t.node(sub).level, Level::subtopic);
    EXPECT_EQ(t.node(sub).label, "Tenant rights");
    EXPECT_EQ(t.node(sub).created_window, 2);
    EXPECT_EQ(t.revision(), 2u);
    EXPECT_EQ(t.children(t.root_id()), std::vector<std::string>{topic});
    EXPECT_EQ(t.label_path(sub), (std::vector<std::string>{"Root", "Housing", "Tenant rights"}));
    EXPECT_EQ(t.topic_of(sub), topic);
    EXPECT_EQ(t.topic_of(topic), topic);
    EXPECT_EQ(t.leaves(), std::vector<std::string>{sub});
    const auto s = t.stats();
    EXPECT_EQ(s.node_count, 2u);
    EXPECT_EQ(s.max_depth, 2u);
}

TEST(Taxonomy, RejectsThirdLevel) {
    auto t = Taxonomy::init("Root");
    const auto topic = t.add_child(t.root_id(), "Housing", cmb("Homes."));
    const auto sub = t.add_child(topic, "Rent", cmb("Rent."));
    const auto rev = t.revision();
    EXPECT_EQ(code_of([&] { t.add_child(sub, "Deeper", cmb("No.")); }), TaxonomyError::Code::depth_violation);
    EXPECT_EQ(t.revision(), rev);
}

TEST(Taxonomy, SiblingLabelsAreUniqueIgnoringCase) {
    auto t = Taxonomy::init("Root");
    t.add_child(t.root_id(), "Housing", cmb("Homes."));
    EXPECT_EQ(code_of([&] { t.add_child(t.root_id(), "HOUSING ", cmb("Again.")); }),
              TaxonomyError::Code::label_conflict);
    EXPECT_NE(t.find_topic("housing"), nullptr);
    // Same label under different parents is fine.
    const auto a = t.add_child(t.root_id(), "Transit", cmb("Moving."));
    EXPECT_NO_THROW(t.add_child(a, "Housing", cmb("Transit housing.")));
}

TEST(Taxonomy, RejectsBadConceptBanks) {
    auto t = Taxonomy::init("Root");
    EXPECT_EQ(code_of([&] { t.add_child(t.root_id(), "A", cmb("  ")); }), TaxonomyError::Code::invalid_cmb);
    EXPECT_EQ(code_of([&] { t.add_child(t.root_id(), "A", cmb("A.", {"x"}, {"x"})); }),
              TaxonomyError::Code::invalid_cmb);
    EXPECT_EQ(code_of([&] { t.add_child(t.root_id(), " ", cmb("A.")); }), TaxonomyError::Code::invalid_argument);
    EXPECT_EQ(code_of([&] { t.add_child("n0042", "A", cmb("A.")); }), TaxonomyError::Code::unknown_node);
    EXPECT_EQ(t.revision(), 0u);
}

TEST(Taxonomy, CueListsAreOrderedSets) {
    auto t = Taxonomy::init("Root");
    const auto id = t.add_child(t.root_id(), "A", cmb("A.", {"b", " a", "b", "", "a"}));
    EXPECT_EQ(t.node(id).cmb->inclusion, (std::vector<std::string>{"b", "a"}));
    EXPECT_EQ(dedup_cues({"x", " x ", "y", "  "}), (std::vector<std::string>{"x", "y"}));
}

TEST(Taxonomy, AddPathCreatesOrReusesTheTopic) {
    auto t = Taxonomy::init("Root");
    const auto r1 = t.add_path("Schools", cmb("Schools."), "Teacher pay", cmb("Pay."), 3);
    EXPECT_EQ(r1.created, 2);
    const auto r2 = t.add_path("schools", cmb("Ignored."), "Bus routes", cmb("Buses."), 3);
    EXPECT_EQ(r2.created, 1);
    EXPECT_EQ(r2.topic_id, r1.topic_id);
    EXPECT_EQ(t.node(r1.topic_id).cmb->definition, "Schools.");
    EXPECT_EQ(code_of([&] { t.add_path("Schools", cmb("S."), "TEACHER PAY", cmb("P.")); }),
              TaxonomyError::Code::label_conflict);
}

TEST(Taxonomy, AddPathIsAtomic) {
    auto t = Taxonomy::init("Root");
    const auto before = snapshot(t);
    EXPECT_THROW(t.add_path("Schools", cmb("Schools."), "Pay", cmb("")), TaxonomyError);
    EXPECT_EQ(snapshot(t), before);
    EXPECT_EQ(t.find_topic("Schools"), nullptr);
}

TEST(Taxonomy, UpdateCmbAppliesPatch) {
    auto t = Taxonomy::init("Root");
    const auto id = t.add_child(t.root_id(), "A", cmb("Old.", {"x", "y"}, {"z"}));
    CmbPatch p;
    p.definition = " New. ";
    p.add_inclusion = {"w", "x"};
    p.remove_cues = {"y", "z"};
    t.update_cmb(id, p);
    EXPECT_EQ(*t.node(id).cmb, cmb("New.", {"x", "w"}, {}));
    EXPECT_EQ(t.revision(), 2u);
    EXPECT_EQ(code_of([&] { t.update_cmb(id, CmbPatch{}); }), TaxonomyError::Code::invalid_cmb);
    EXPECT_THROW(t.update_cmb(t.root_id(), p), TaxonomyError);
    CmbPatch clash;
    clash.add_exclusion = {"x"};
    EXPECT_EQ(code_of([&] { t.update_cmb(id, clash); }), TaxonomyError::Code::invalid_cmb);
    EXPECT_EQ(t.revision(), 2u);
}

TEST(Taxonomy, GroundingIsIdempotentAndAppendOnly) {
    auto t = Taxonomy::init("Root");
    const auto id = t.add_child(t.root_id(), "A", cmb("A."));
    GroundingRecord r{"p1", id, 1, "d:p1", "set_node"};
    EXPECT_TRUE(t.ground(r));
    EXPECT_FALSE(t.ground(r));
    EXPECT_TRUE(t.ground(GroundingRecord{"p2", std::string(kSkipNode), 1, "d:p2", "skip_post"}));
    EXPECT_EQ(t.grounding().size(), 2u);
    auto conflicting = r;
    conflicting.window_index = 2;
    EXPECT_THROW(t.ground(conflicting), TaxonomyError);
    EXPECT_THROW(t.ground(GroundingRecord{"p3", "n0099", 1, "d:p3", "set_node"}), TaxonomyError);
    EXPECT_THROW(t.ground(GroundingRecord{"", id, 1, "d:p3", "set_node"}), TaxonomyError);
    EXPECT_EQ(t.grounding().size(), 2u);
}

TEST(Taxonomy, SortedGroundingOrdersByWindowPostAction) {
    auto t = Taxonomy::init("Root");
    const auto id = t.add_child(t.root_id(), "A", cmb("A."));
    t.ground({"p2", id, 2, "a", "set_node"});
    t.ground({"p9", id, 1, "b", "set_node"});
    t.ground({"p1", id, 2, "c", "set_node"});
    const auto g = t.sorted_grounding();
    ASSERT_EQ(g.size(), 3u);
    EXPECT_EQ(g[0].post_id, "p9");
    EXPECT_EQ(g[1].post_id, "p1");
    EXPECT_EQ(g[2].post_id, "p2");
}

TEST(Taxonomy, SnapshotRoundTripsByteIdentically) {
    auto t = Taxonomy::init("Root \"quoted\" ∅");
    const auto a = t.add_child(t.root_id(), "Housing", cmb("Homes.", {"home"}, {"hotel"}), 1);
    t.add_child(a, "Rent", cmb("Rent."), 2);
    t.ground({"p1", a, 1, "d:p1", "set_node"});
    const auto bytes = snapshot(t);
    const auto back = restore(bytes);
    EXPECT_EQ(back, t);
    EXPECT_EQ(snapshot(back), bytes);
    // Ids continue after the restored ones.
    auto more = back;
    EXPECT_EQ(more.add_child(more.root_id(), "Transit", cmb("T.")), "n0003");
}

TEST(Taxonomy, RestoreRejectsMalformedInput) {
    EXPECT_THROW(restore("not json"), TaxonomyError);
    EXPECT_THROW(restore("{}"), TaxonomyError);
    auto t = Taxonomy::init("Root");
    t.add_child(t.root_id(), "A", cmb("A."));
    auto j = taxonomy_to_json(t);
    j["nodes"][1]["parent"] = "n0077";
    EXPECT_THROW(taxonomy_from_json(j), TaxonomyError);
}

TEST(Taxonomy, LevelNames) {
    for (auto l : {Level::root, Level::topic, Level::subtopic}) EXPECT_EQ(parse_level(to_string(l)), l);
    EXPECT_THROW(parse_level("leaf"), TaxonomyError);
}

}  // namespace
}  // namespace evotaxo
