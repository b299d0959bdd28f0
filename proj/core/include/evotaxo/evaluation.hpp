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

#pragma once

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "evotaxo/corpus.hpp"
#include "evotaxo/providers.hpp"
#include "evotaxo/taxonomy.hpp"

namespace evotaxo {

inline constexpr std::string_view kOthersLabel = "others";

struct LeafDistribution {
    std::string post_id;
    std::vector<std::string> labels;  // leaf labels, then "others"
    std::vector<double> probs;        // aligned with labels
    std::string top;                  // argmax before removing "others"; ties to the earlier label
};

/// Scores `leaves` plus "others" in one classify call. Requires at least one leaf.
LeafDistribution leaf_distribution(const Post& post, const std::vector<std::string>& leaves, Scorer& scorer);

/// -sum p ln p / ln n over a distribution already normalised to sum 1, with
/// 0 ln 0 = 0. Requires n >= 2.
double normalized_entropy(std::span<const double> p);

/// Drops the "others" mass, renormalises over the leaves and returns the
/// normalised entropy. Empty when no mass remains on any leaf. Throws
/// Error for fewer than two leaves.
std::optional<double> entropy(const LeafDistribution& dist);

/// Fraction of distributions whose top label is "others". Throws on empty input.
double unclassified_rate(const std::vector<LeafDistribution>& dists);

/// Fraction of posts whose grounding consists only of skip records, or that
/// have none. Empty when `post_ids` is empty.
std::optional<double> grounding_unclassified_rate(const Taxonomy& tax, const std::vector<std::string>& post_ids);

struct EdgeScore {
    std::string parent;
    std::string child;
    double score = 0.0;
};

struct NlivResult {
    double mean = 0.0;
    std::vector<EdgeScore> edges;  // sorted by child id
};

/// Mean entailment of "This is about <parent>" from "<child label>; <child
/// definition>" over every topic-to-subtopic edge. Throws when there is none.
NlivResult nliv_s(const Taxonomy& tax, Scorer& scorer, std::size_t workers = 8);

/// Prompt for one judged item. `subject` is the path (path kind) or the parent
/// label (sibling kinds); `siblings` is used by the sibling kinds only.
std::string judge_prompt(JudgeKind kind, std::string_view root_label, std::string_view subject,
                         const std::vector<std::string>& siblings = {});

/// Value of the last `<score: X>` tag. Throws ParseError unless X is 1..5.
int parse_score(std::string_view reply);

struct JudgeItem {
    std::string item;  // path "A > B > C" or parent id
    std::string prompt;
    std::optional<int> score;
    std::string error;
};

struct JudgeResult {
    JudgeKind kind = JudgeKind::path;
    std::optional<double> mean;  // empty when no item was scored
    std::vector<JudgeItem> items;
    std::size_t failures = 0;
    std::size_t single_child_skipped = 0;
};

/// Every root-to-leaf path (path kind) or every parent with at least two
/// children (sibling kinds), capped to a seeded sample of `cap` items when
/// `cap` is nonzero.
JudgeResult judge_metric(JudgeKind kind, const Taxonomy& tax, Judge& judge, std::size_t cap = 0,
                         std::uint64_t seed = 0, std::size_t workers = 8);

struct Agreement {
    double exact = 0.0;
    double within_one = 0.0;
};

/// Throws Error on length mismatch or empty input.
Agreement agreement(const std::vector<int>& human, const std::vector<int>& llm);

struct EvalOptions {
    std::size_t judge_cap = 0;
    std::uint64_t seed = 0;
    std::size_t workers = 8;
    bool judges = true;
};

struct MetricReport {
    std::size_t posts = 0;
    std::size_t leaves = 0;
    std::optional<double> entropy_mean;
    std::size_t entropy_excluded = 0;  // all mass on "others"
    std::optional<double> unclassified_rate;
    std::optional<double> grounding_unclassified_rate;
    std::optional<NlivResult> nliv;
    std::vector<JudgeResult> judges;  // path, sib_coherence, sib_separability when computed
    std::vector<LeafDistribution> distributions;
    std::vector<std::string> notices;
    UsageTotals usage;
};

/// All metrics for a finished taxonomy. Metrics whose preconditions fail are
/// left empty with a notice rather than raising.
MetricReport evaluate(const Taxonomy& tax, const std::vector<Post>& posts, const Providers& providers,
                      const EvalOptions& options = {});

/// Summary document (metrics.json).
nlohmann::json to_json(const MetricReport& report);
/// One JSON object per scored item (metrics_detail.jsonl).
void write_metric_details(std::ostream& out, const MetricReport& report);

struct TrendRow {
    int window = 0;
    std::string topic_id;
    std::string topic_label;
    std::optional<double> share;  // empty when the window grounded nothing
    std::size_t new_subtopics = 0;

    friend bool operator==(const TrendRow&, const TrendRow&) = default;
};

/// One row per (window, topic present at the end of that window). Shares are
/// distinct grounded posts under the topic over the window's total across topics.
std::vector<TrendRow> trend_report(const std::vector<std::pair<int, Taxonomy>>& snapshots,
                                   const std::vector<GroundingRecord>& grounding);

/// Columns: window, topic_label, share, new_subtopics. Shares use six decimals.
void write_trends_csv(std::ostream& out, const std::vector<TrendRow>& rows);

/// Plain-text per-window summary.
std::string trend_summary(const std::vector<TrendRow>& rows);

}  // namespace evotaxo
