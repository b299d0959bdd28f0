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

#include <sstream>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "evotaxo/evaluation.hpp"

namespace evotaxo {
namespace {

using json = nlohmann::json;

std::shared_ptr<UsageLedger> ledger() { return std::make_shared<UsageLedger>(); }

/// Root > {Housing > {Rent, Zoning}, Transit > {Bus}}.
struct City {
    Taxonomy tax = Taxonomy::init("City life");
    std::string housing, rent, zoning, transit, bus;
    City() {
        housing = tax.add_child(tax.root_id(), "Housing", {"Posts about housing.", {}, {}});
        rent = tax.add_child(housing, "Rent", {"Posts about housing costs.", {}, {}}, 1);
        zoning = tax.add_child(housing, "Zoning", {"Land use rules.", {}, {}}, 2);
        transit = tax.add_child(tax.root_id(), "Transit", {"Getting around.", {}, {}});
        bus = tax.add_child(transit, "Bus", {"Buses.", {}, {}}, 2);
    }
};

TEST(Evaluation, NormalizedEntropyEdges) {
    EXPECT_EQ(normalized_entropy(std::vector<double>{0.5, 0.5}), 1.0);
    EXPECT_EQ(normalized_entropy(std::vector<double>{0.0, 1.0, 0.0}), 0.0);
    EXPECT_NEAR(normalized_entropy(std::vector<double>{0.7, 0.2, 0.1}), 0.7298466991620976, 1e-15);
    EXPECT_THROW(normalized_entropy(std::vector<double>{1.0}), Error);
    for (std::size_t n = 2; n <= 300; ++n) EXPECT_EQ(normalized_entropy(std::vector<double>(n, 1.0 / n)), 1.0) << n;
}

TEST(Evaluation, EntropyDropsOthersAndRenormalises) {
    LeafDistribution d{"p", {"a", "b", "others"}, {0.25, 0.25, 0.5}, "others"};
    EXPECT_EQ(entropy(d), 1.0);
    d.probs = {0.0, 0.0, 1.0};
    EXPECT_EQ(entropy(d), std::nullopt);
    LeafDistribution one{"p", {"a", "others"}, {0.5, 0.5}, "a"};
    EXPECT_THROW(entropy(one), Error);
}

TEST(Evaluation, LeafDistributionUsesKeywordScorer) {
    MockScorer scorer(ledger(), MockScorer::Mode::keyword, "others");
    const auto d = leaf_distribution(Post{"p", "my rent went up", 0, {}}, {"Zoning", "Rent"}, scorer);
    EXPECT_EQ(d.labels, (std::vector<std::string>{"Zoning", "Rent", "others"}));
    EXPECT_EQ(d.top, "Rent");
    EXPECT_DOUBLE_EQ(d.probs[1], 0.9);
    const auto miss = leaf_distribution(Post{"q", "nothing relevant", 0, {}}, {"Zoning", "Rent"}, scorer);
    EXPECT_EQ(miss.top, "others");
    EXPECT_THROW(leaf_distribution(Post{"q", "x", 0, {}}, {}, scorer), Error);
}

class BadScorer : public Scorer {
public:
    std::vector<double> result;
    std::vector<double> classify(const std::string&, const std::vector<std::string>&) override { return result; }
    double entail(const std::string&, const std::string&) override { return 0.0; }
};

TEST(Evaluation, LeafDistributionRejectsMalformedScores) {
    BadScorer s;
    const Post p{"p", "x", 0, {}};
    s.result = {0.5, 0.5};
    EXPECT_THROW(leaf_distribution(p, {"a", "b"}, s), ProviderError);
    s.result = {0.5, 0.6, -0.1};
    EXPECT_THROW(leaf_distribution(p, {"a", "b"}, s), ProviderError);
    s.result = {0.2, 0.2, 0.2};
    EXPECT_THROW(leaf_distribution(p, {"a", "b"}, s), ProviderError);
}

TEST(Evaluation, UnclassifiedRates) {
    std::vector<LeafDistribution> ds = {{"a", {}, {}, "x"}, {"b", {}, {}, "others"}, {"c", {}, {}, "others"},
                                        {"d", {}, {}, "y"}};
    EXPECT_EQ(unclassified_rate(ds), 0.5);
    EXPECT_THROW(unclassified_rate({}), Error);

    City c;
    c.tax.ground({"p1", c.rent, 1, "d:p1", "set_node"});
    c.tax.ground({"p2", std::string(kSkipNode), 1, "d:p2", "skip_post"});
    EXPECT_EQ(grounding_unclassified_rate(c.tax, {"p1", "p2", "p3", "p4"}), 0.75);
    EXPECT_EQ(grounding_unclassified_rate(c.tax, {}), std::nullopt);
}

TEST(Evaluation, NlivScoresTopicToSubtopicEdges) {
    City c;
    MockScorer scorer(ledger(), MockScorer::Mode::keyword);
    const auto r = nliv_s(c.tax, scorer, 2);
    ASSERT_EQ(r.edges.size(), 3u);
    EXPECT_EQ(r.edges[0].child, c.rent);
    EXPECT_EQ(r.edges[0].parent, c.housing);
    EXPECT_EQ(r.edges[0].score, 1.0);  // "housing" occurs in the rent definition
    EXPECT_EQ(r.edges[1].score, 0.0);
    EXPECT_DOUBLE_EQ(r.mean, 1.0 / 3.0);
    EXPECT_THROW(nliv_s(Taxonomy::init("Empty"), scorer), Error);
}

TEST(Evaluation, JudgePromptsFillPlaceholders) {
    const auto p = judge_prompt(JudgeKind::path, "City life", "City life > Housing > Rent");
    EXPECT_NE(p.find("The path is: City life > Housing > Rent."), std::string::npos);
    EXPECT_NE(p.find("1\xE2\x80\x93" "5 scale"), std::string::npos);
    EXPECT_EQ(p.find("{{"), std::string::npos);
    EXPECT_NE(p.back(), '\n');
    const auto s = judge_prompt(JudgeKind::sib_coherence, "City life", "Housing", {"Rent", "Zoning"});
    EXPECT_NE(s.find("Rent, Zoning"), std::string::npos);
    EXPECT_EQ(s.find("{{"), std::string::npos);
    EXPECT_EQ(judge_prompt(JudgeKind::sib_separability, "R", "P", {"a", "b"}).find("{{"), std::string::npos);
}

TEST(Evaluation, ParseScoreTakesTheLastTag) {
    EXPECT_EQ(parse_score("fine <score: 4>"), 4);
    EXPECT_EQ(parse_score("<score: 2> then revised <score:5>"), 5);
    EXPECT_EQ(parse_score("<score: 3 >"), 3);
    EXPECT_THROW(parse_score("no tag"), ParseError);
    EXPECT_THROW(parse_score("<score: 6>"), ParseError);
    EXPECT_THROW(parse_score("<score: 0>"), ParseError);
    EXPECT_THROW(parse_score("<score: 4.5>"), ParseError);
    EXPECT_THROW(parse_score("<score: 45>"), ParseError);
}

TEST(Evaluation, JudgeMetricItemsAndFailures) {
    City c;
    ScriptedJudge judge(json{{"default", 3}, {"rules", {{{"contains", "Rent"}, {"score", 5}},
                                                        {{"contains", "Bus"}, {"text", "no score here"}}}}},
                        ledger());
    const auto path = judge_metric(JudgeKind::path, c.tax, judge);
    ASSERT_EQ(path.items.size(), 3u);
    EXPECT_EQ(path.items[0].item, "City life > Housing > Rent");
    EXPECT_EQ(path.items[0].score, 5);
    EXPECT_EQ(path.failures, 1u);
    EXPECT_DOUBLE_EQ(*path.mean, 4.0);

    const auto sib = judge_metric(JudgeKind::sib_coherence, c.tax, judge);
    ASSERT_EQ(sib.items.size(), 2u);  // root (Housing, Transit) and Housing (Rent, Zoning)
    EXPECT_EQ(sib.single_child_skipped, 1u);
    EXPECT_EQ(sib.items[0].item, c.tax.root_id());
}

TEST(Evaluation, JudgeCapSamplesDeterministically) {
    City c;
    ScriptedJudge judge(json{{"default", 2}}, ledger());
    const auto a = judge_metric(JudgeKind::path, c.tax, judge, 2, 9);
    const auto b = judge_metric(JudgeKind::path, c.tax, judge, 2, 9);
    ASSERT_EQ(a.items.size(), 2u);
    EXPECT_EQ(a.items[0].item, b.items[0].item);
    EXPECT_EQ(a.items[1].item, b.items[1].item);
    EXPECT_LT(a.items[0].item, a.items[1].item);  // original order kept
    EXPECT_EQ(judge_metric(JudgeKind::path, c.tax, judge, 10).items.size(), 3u);
}

TEST(Evaluation, Agreement) {
    const auto a = agreement({1, 2, 3, 4}, {1, 3, 5, 4});
    EXPECT_EQ(a.exact, 0.5);
    EXPECT_EQ(a.within_one, 0.75);
    EXPECT_THROW(agreement({1}, {1, 2}), Error);
    EXPECT_THROW(agreement({}, {}), Error);
}

TEST(Evaluation, FullReportWithMocks) {
    City c;
    c.tax.ground({"p1", c.rent, 1, "d:p1", "set_node"});
    Providers providers;
    providers.ledger = ledger();
    providers.scorer = std::make_shared<MockScorer>(providers.ledger, MockScorer::Mode::keyword, "others");
    providers.judge = std::make_shared<ScriptedJudge>(json{{"default", 4}}, providers.ledger);
    const std::vector<Post> posts = {{"p1", "rent is high", 0, {}}, {"p2", "the bus was late", 0, {}},
                                     {"p3", "lunch", 0, {}}};
    const auto r = evaluate(c.tax, posts, providers, EvalOptions{0, 1, 2, true});
    EXPECT_EQ(r.posts, 3u);
    EXPECT_EQ(r.leaves, 3u);
    EXPECT_DOUBLE_EQ(*r.unclassified_rate, 1.0 / 3.0);
    EXPECT_DOUBLE_EQ(*r.grounding_unclassified_rate, 2.0 / 3.0);
    ASSERT_TRUE(r.entropy_mean);
    EXPECT_EQ(r.entropy_excluded, 0u);
    ASSERT_TRUE(r.nliv);
    ASSERT_EQ(r.judges.size(), 3u);
    EXPECT_EQ(*r.judges[0].mean, 4.0);
    EXPECT_EQ(r.usage.at(CallSite::classify).calls, 3u);
    EXPECT_EQ(r.usage.at(CallSite::entail).calls, 3u);

    const auto j = to_json(r);
    EXPECT_EQ(j.at("path_granularity").at("items"), 3);
    EXPECT_EQ(j.at("leaves"), 3);
    std::ostringstream detail;
    write_metric_details(detail, r);
    std::istringstream lines(detail.str());
    std::size_t n = 0;
    for (std::string line; std::getline(lines, line); ++n) EXPECT_TRUE(json::accept(line)) << line;
    EXPECT_EQ(n, 3u + 3u + 3u + 2u + 2u);
}

TEST(Evaluation, ReportSkipsWhatItCannotCompute) {
    Providers none;
    none.ledger = ledger();
    const auto r = evaluate(Taxonomy::init("Empty"), {}, none);
    EXPECT_FALSE(r.entropy_mean);
    EXPECT_FALSE(r.nliv);
    EXPECT_TRUE(r.judges.empty());
    EXPECT_EQ(r.notices.size(), 2u);
    EXPECT_TRUE(to_json(r).at("sib_coherence").is_null());
}

TEST(Evaluation, TrendsUseDistinctPostsPerTopic) {
    City c;
    auto w1 = c.tax;
    w1.ground({"p1", c.rent, 1, "d:p1", "set_node"});
    w1.ground({"p1", c.zoning, 1, "w1/a", "add_child"});  // same post twice under Housing
    w1.ground({"p2", c.bus, 1, "d:p2", "set_node"});
    w1.ground({"p3", std::string(kSkipNode), 1, "d:p3", "skip_post"});
    auto w2 = w1;
    const auto rows = trend_report({{1, w1}, {2, w2}}, w1.grounding());
    ASSERT_EQ(rows.size(), 4u);
    EXPECT_EQ(rows[0].topic_label, "Housing");
    EXPECT_EQ(rows[0].share, 0.5);
    EXPECT_EQ(rows[0].new_subtopics, 1u);
    EXPECT_EQ(rows[1].share, 0.5);
    EXPECT_EQ(rows[2].share, std::nullopt);
    EXPECT_EQ(rows[3].new_subtopics, 1u);

    std::ostringstream csv;
    write_trends_csv(csv, rows);
    EXPECT_EQ(csv.str(),
              "window,topic_label,share,new_subtopics\n1,Housing,0.500000,1\n1,Transit,0.500000,0\n"
              "2,Housing,,1\n2,Transit,,1\n");
    EXPECT_FALSE(trend_summary(rows).empty());
}

TEST(Evaluation, TrendCsvQuotesLabels) {
    std::ostringstream csv;
    write_trends_csv(csv, {TrendRow{1, "n0001", "Rent, \"fees\"", 0.25, 0}});
    EXPECT_EQ(csv.str(), "window,topic_label,share,new_subtopics\n1,\"Rent, \"\"fees\"\"\",0.250000,0\n");
}

}  // namespace
}  // namespace evotaxo
