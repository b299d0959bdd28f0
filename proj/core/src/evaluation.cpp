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

#include "evotaxo/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <ostream>
#include <regex>
#include <set>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "evotaxo/rng.hpp"
#include "evotaxo/text.hpp"
#include "parallel.hpp"

namespace evotaxo {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Leaf distributions and entropy

LeafDistribution leaf_distribution(const Post& post, const std::vector<std::string>& leaves, Scorer& scorer) {
    if (leaves.empty()) throw Error("leaf distribution needs at least one leaf");
    LeafDistribution d;
    d.post_id = post.id;
    d.labels = leaves;
    d.labels.emplace_back(kOthersLabel);
    d.probs = scorer.classify(post.text, d.labels);
    if (d.probs.size() != d.labels.size())
        throw ProviderError("classifier returned " + std::to_string(d.probs.size()) + " probabilities for " +
                                std::to_string(d.labels.size()) + " labels on post " + post.id,
                            false);
    double sum = 0.0;
    for (double p : d.probs) {
        if (!(p >= 0.0)) throw ProviderError("classifier returned a negative probability on post " + post.id, false);
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-6)
        throw ProviderError(fmt::format("classifier probabilities sum to {} on post {}", sum, post.id), false);
    const auto top = std::max_element(d.probs.begin(), d.probs.end()) - d.probs.begin();
    d.top = d.labels[static_cast<std::size_t>(top)];
    return d;
}

double normalized_entropy(std::span<const double> p) {
    if (p.size() < 2) throw Error("entropy needs at least two labels");
    // 1 - sum p ln(n p) / ln n equals -sum p ln p / ln n; this form is exact at
    // both ends: ln(n * (1/n)) is 0 for a uniform input and ln n / ln n is 1
    // for a point mass.
    const double n = static_cast<double>(p.size());
    double s = 0.0;
    for (double x : p)
        if (x > 0.0) s += x * std::log(n * x);
    return std::clamp(1.0 - s / std::log(n), 0.0, 1.0);
}

std::optional<double> entropy(const LeafDistribution& dist) {
    const auto leaves = dist.labels.size() - 1;
    if (dist.labels.empty() || leaves < 2) throw Error("entropy is undefined for fewer than two leaves");
    double mass = 0.0;
    for (std::size_t i = 0; i < leaves; ++i) mass += dist.probs[i];
    if (!(mass > 0.0)) return std::nullopt;
    std::vector<double> q(leaves);
    for (std::size_t i = 0; i < leaves; ++i) q[i] = dist.probs[i] / mass;
    return normalized_entropy(q);
}

double unclassified_rate(const std::vector<LeafDistribution>& dists) {
    if (dists.empty()) throw Error("unclassified rate of an empty set");
    const auto others = std::count_if(dists.begin(), dists.end(), [](const auto& d) { return d.top == kOthersLabel; });
    return static_cast<double>(others) / static_cast<double>(dists.size());
}

std::optional<double> grounding_unclassified_rate(const Taxonomy& tax, const std::vector<std::string>& post_ids) {
    if (post_ids.empty()) return std::nullopt;
    std::set<std::string> classified;
    for (const auto& r : tax.grounding())
        if (r.node_id != kSkipNode) classified.insert(r.post_id);
    const auto unclassified =
        std::count_if(post_ids.begin(), post_ids.end(), [&](const auto& id) { return !classified.count(id); });
    return static_cast<double>(unclassified) / static_cast<double>(post_ids.size());
}

// ---------------------------------------------------------------------------
// NLIV-S

NlivResult nliv_s(const Taxonomy& tax, Scorer& scorer, std::size_t workers) {
    std::vector<const TaxonomyNode*> children;
    for (const auto& [id, n] : tax.nodes())
        if (n.level == Level::subtopic) children.push_back(&n);
    if (children.empty()) throw Error("NLIV-S needs at least one topic with a subtopic");

    NlivResult out;
    out.edges.resize(children.size());
    detail::parallel_for(children.size(), workers, [&](std::size_t i) {
        const auto& child = *children[i];
        const auto& parent = tax.node(*child.parent);
        const auto premise = child.label + "; " + child.cmb->definition;
        const auto hypothesis = "This is about " + parent.label;
        out.edges[i] = EdgeScore{parent.id, child.id, scorer.entail(premise, hypothesis)};
    });
    double sum = 0.0;
    for (const auto& e : out.edges) sum += e.score;
    out.mean = sum / static_cast<double>(out.edges.size());
    return out;
}

// ---------------------------------------------------------------------------
// Judges

namespace {

std::string_view template_name(JudgeKind kind) {
    switch (kind) {
        case JudgeKind::path: return "judge_path";
        case JudgeKind::sib_coherence: return "judge_sib_coherence";
        case JudgeKind::sib_separability: return "judge_sib_separability";
    }
    return "judge_path";
}

}  // namespace

std::string judge_prompt(JudgeKind kind, std::string_view root_label, std::string_view subject,
                         const std::vector<std::string>& siblings) {
    std::string out(prompt_template(template_name(kind)));
    while (!out.empty() && out.back() == '\n') out.pop_back();
    out = text::replace_all(out, "{{root}}", root_label);
    if (kind == JudgeKind::path) return text::replace_all(out, "{{path}}", subject);
    out = text::replace_all(out, "{{parent}}", subject);
    return text::replace_all(out, "{{siblings}}", text::join(siblings, ", "));
}

int parse_score(std::string_view reply) {
    static const std::regex tag(R"(<score:\s*([^>]*)>)");
    std::string last;
    bool found = false;
    const std::string s(reply);
    for (auto it = std::sregex_iterator(s.begin(), s.end(), tag); it != std::sregex_iterator(); ++it) {
        last = (*it)[1].str();
        found = true;
    }
    if (!found) throw ParseError("no <score: X> tag in judge reply");
    const auto value = text::trim(last);
    if (value.size() != 1 || value[0] < '1' || value[0] > '5')
        throw ParseError("judge score '" + std::string(value) + "' is not an integer in 1..5");
    return value[0] - '0';
}

JudgeResult judge_metric(JudgeKind kind, const Taxonomy& tax, Judge& judge, std::size_t cap, std::uint64_t seed,
                         std::size_t workers) {
    JudgeResult out;
    out.kind = kind;
    const auto& root = tax.root().label;
    if (kind == JudgeKind::path) {
        for (const auto& leaf : tax.leaves()) {
            const auto item = text::join(tax.label_path(leaf), " > ");
            out.items.push_back(JudgeItem{item, judge_prompt(kind, root, item), std::nullopt, {}});
        }
    } else {
        std::vector<std::string> parents{tax.root_id()};
        for (const auto& t : tax.children(tax.root_id())) parents.push_back(t);
        for (const auto& p : parents) {
            const auto kids = tax.children(p);
            if (kids.size() < 2) {
                if (kids.size() == 1) ++out.single_child_skipped;
                continue;
            }
            std::vector<std::string> labels;
            for (const auto& k : kids) labels.push_back(tax.node(k).label);
            out.items.push_back(JudgeItem{p, judge_prompt(kind, root, tax.node(p).label, labels), std::nullopt, {}});
        }
    }

    if (cap != 0 && out.items.size() > cap) {
        // Partial Fisher-Yates, then back to the original order.
        std::vector<std::size_t> idx(out.items.size());
        std::iota(idx.begin(), idx.end(), 0);
        Rng rng(seed);
        for (std::size_t i = 0; i < cap; ++i) std::swap(idx[i], idx[i + rng.below(idx.size() - i)]);
        idx.resize(cap);
        std::sort(idx.begin(), idx.end());
        std::vector<JudgeItem> kept;
        for (auto i : idx) kept.push_back(std::move(out.items[i]));
        out.items = std::move(kept);
    }

    detail::parallel_for(out.items.size(), workers, [&](std::size_t i) {
        auto& item = out.items[i];
        const auto reply = judge.judge(kind, item.prompt);
        try {
            item.score = parse_score(reply);
        } catch (const ParseError& e) {
            item.error = e.what();
        }
    });
    double sum = 0.0;
    std::size_t scored = 0;
    for (const auto& item : out.items) {
        if (item.score) {
            sum += *item.score;
            ++scored;
        } else {
            ++out.failures;
        }
    }
    if (scored) out.mean = sum / static_cast<double>(scored);
    return out;
}

Agreement agreement(const std::vector<int>& human, const std::vector<int>& llm) {
    if (human.size() != llm.size()) throw Error("agreement needs equally long score lists");
    if (human.empty()) throw Error("agreement needs at least one score pair");
    std::size_t exact = 0;
    std::size_t near = 0;
    for (std::size_t i = 0; i < human.size(); ++i) {
        exact += human[i] == llm[i];
        near += std::abs(human[i] - llm[i]) <= 1;
    }
    const auto n = static_cast<double>(human.size());
    return Agreement{static_cast<double>(exact) / n, static_cast<double>(near) / n};
}

// ---------------------------------------------------------------------------
// Full report

MetricReport evaluate(const Taxonomy& tax, const std::vector<Post>& posts, const Providers& providers,
                      const EvalOptions& options) {
    MetricReport r;
    const auto usage_before = providers.ledger ? providers.ledger->totals() : UsageTotals{};
    r.posts = posts.size();

    std::vector<std::string> post_ids;
    for (const auto& p : posts) post_ids.push_back(p.id);
    r.grounding_unclassified_rate = grounding_unclassified_rate(tax, post_ids);

    std::vector<std::string> leaves;
    std::set<std::string> seen;
    for (const auto& id : tax.leaves()) {
        const auto& label = tax.node(id).label;
        if (seen.insert(text::lower(label)).second) leaves.push_back(label);
    }
    r.leaves = leaves.size();

    if (!providers.scorer) {
        r.notices.emplace_back("no scorer configured; entropy, unclassified rate and NLIV-S skipped");
    } else {
        if (leaves.empty()) {
            r.notices.emplace_back("taxonomy has no leaves; entropy and unclassified rate skipped");
        } else if (!posts.empty()) {
            r.distributions.resize(posts.size());
            detail::parallel_for(posts.size(), options.workers, [&](std::size_t i) {
                r.distributions[i] = leaf_distribution(posts[i], leaves, *providers.scorer);
            });
            r.unclassified_rate = unclassified_rate(r.distributions);
            if (leaves.size() < 2) {
                r.notices.emplace_back("fewer than two leaves; entropy is undefined");
            } else {
                double sum = 0.0;
                std::size_t counted = 0;
                for (const auto& d : r.distributions) {
                    if (auto h = entropy(d)) {
                        sum += *h;
                        ++counted;
                    } else {
                        ++r.entropy_excluded;
                    }
                }
                if (counted) r.entropy_mean = sum / static_cast<double>(counted);
            }
        }
        try {
            r.nliv = nliv_s(tax, *providers.scorer, options.workers);
        } catch (const ProviderError&) {
            throw;
        } catch (const Error& e) {
            r.notices.emplace_back(std::string("NLIV-S skipped: ") + e.what());
        }
    }

    if (!options.judges || !providers.judge) {
        r.notices.emplace_back("judge metrics skipped: no judge configured");
    } else if (tax.children(tax.root_id()).empty()) {
        r.notices.emplace_back("judge metrics skipped: taxonomy has no topics");
    } else {
        for (auto kind : {JudgeKind::path, JudgeKind::sib_coherence, JudgeKind::sib_separability})
            r.judges.push_back(judge_metric(kind, tax, *providers.judge, options.judge_cap, options.seed, options.workers));
    }
    if (providers.ledger) r.usage = providers.ledger->totals() - usage_before;
    return r;
}

namespace {

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::string_view metric_name(JudgeKind kind) {
    switch (kind) {
        case JudgeKind::path: return "path_granularity";
        case JudgeKind::sib_coherence: return "sib_coherence";
        case JudgeKind::sib_separability: return "sib_separability";
    }
    return "path_granularity";
}

}  // namespace

json to_json(const MetricReport& r) {
    json j{{"posts", r.posts},
           {"leaves", r.leaves},
           {"entropy", json{{"mean", optional_json(r.entropy_mean)}, {"excluded_all_others", r.entropy_excluded}}},
           {"unclassified_rate", optional_json(r.unclassified_rate)},
           {"grounding_unclassified_rate", optional_json(r.grounding_unclassified_rate)},
           {"nliv_s", r.nliv ? json{{"mean", r.nliv->mean}, {"edges", r.nliv->edges.size()}} : json(nullptr)},
           {"notices", r.notices},
           {"usage", to_json(r.usage)}};
    for (auto kind : {JudgeKind::path, JudgeKind::sib_coherence, JudgeKind::sib_separability})
        j[std::string(metric_name(kind))] = nullptr;
    for (const auto& jr : r.judges)
        j[std::string(metric_name(jr.kind))] = json{{"mean", optional_json(jr.mean)},
                                                     {"items", jr.items.size()},
                                                     {"failures", jr.failures},
                                                     {"single_child_skipped", jr.single_child_skipped}};
    return j;
}

void write_metric_details(std::ostream& out, const MetricReport& r) {
    for (const auto& d : r.distributions) {
        json probs = json::object();
        for (std::size_t i = 0; i < d.labels.size(); ++i) probs[d.labels[i]] = d.probs[i];
        std::optional<double> h;
        if (d.labels.size() >= 3) h = entropy(d);
        out << json{{"metric", "leaf_distribution"}, {"post_id", d.post_id}, {"top", d.top},
                    {"entropy", optional_json(h)}, {"probs", std::move(probs)}}
                   .dump()
            << '\n';
    }
    if (r.nliv)
        for (const auto& e : r.nliv->edges)
            out << json{{"metric", "nliv_s"}, {"parent", e.parent}, {"child", e.child}, {"score", e.score}}.dump() << '\n';
    for (const auto& jr : r.judges)
        for (const auto& item : jr.items) {
            json line{{"metric", metric_name(jr.kind)}, {"item", item.item}};
            line["score"] = item.score ? json(*item.score) : json(nullptr);
            if (!item.error.empty()) line["error"] = item.error;
            out << line.dump() << '\n';
        }
}

// ---------------------------------------------------------------------------
// Trends

std::vector<TrendRow> trend_report(const std::vector<std::pair<int, Taxonomy>>& snapshots,
                                   const std::vector<GroundingRecord>& grounding) {
    std::vector<TrendRow> rows;
    for (const auto& [window, tax] : snapshots) {
        std::map<std::string, std::set<std::string>> posts_by_topic;
        for (const auto& r : grounding) {
            if (r.window_index != window || r.node_id == kSkipNode || !tax.find(r.node_id)) continue;
            if (tax.node(r.node_id).level == Level::root) continue;
            posts_by_topic[tax.topic_of(r.node_id)].insert(r.post_id);
        }
        std::size_t total = 0;
        for (const auto& [t, ps] : posts_by_topic) total += ps.size();
        for (const auto& topic : tax.children(tax.root_id())) {
            TrendRow row;
            row.window = window;
            row.topic_id = topic;
            row.topic_label = tax.node(topic).label;
            if (total) {
                const auto it = posts_by_topic.find(topic);
                row.share = static_cast<double>(it == posts_by_topic.end() ? 0 : it->second.size()) /
                            static_cast<double>(total);
            }
            for (const auto& s : tax.children(topic)) row.new_subtopics += tax.node(s).created_window == window;
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

namespace {

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
    return "\"" + text::replace_all(s, "\"", "\"\"") + "\"";
}

}  // namespace

void write_trends_csv(std::ostream& out, const std::vector<TrendRow>& rows) {
    out << "window,topic_label,share,new_subtopics\n";
    for (const auto& r : rows)
        out << r.window << ',' << csv_field(r.topic_label) << ',' << (r.share ? fmt::format("{:.6f}", *r.share) : "")
            << ',' << r.new_subtopics << '\n';
}

std::string trend_summary(const std::vector<TrendRow>& rows) {
    std::string out;
    std::size_t i = 0;
    while (i < rows.size()) {
        const int w = rows[i].window;
        std::vector<std::string> shares;
        std::size_t created = 0;
        for (; i < rows.size() && rows[i].window == w; ++i) {
            created += rows[i].new_subtopics;
            if (rows[i].share && *rows[i].share > 0.0)
                shares.push_back(fmt::format("{} {:.1f}%", rows[i].topic_label, *rows[i].share * 100.0));
        }
        out += fmt::format("window {:04d}: {} | new subtopics: {}\n", w,
                           shares.empty() ? std::string("no grounded posts") : text::join(shares, ", "), created);
    }
    return out;
}

}  // namespace evotaxo
