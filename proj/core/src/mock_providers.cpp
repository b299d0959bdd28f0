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

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "evotaxo/providers.hpp"
#include "evotaxo/text.hpp"

namespace evotaxo {

using nlohmann::json;

namespace {

std::vector<std::string> string_list(const json& j, const char* key) {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) return {};
    if (it->is_string()) return {it->get<std::string>()};
    return it->get<std::vector<std::string>>();
}

std::string expand(std::string_view tmpl, const Post& post, std::string_view label) {
    auto out = text::replace_all(std::string(tmpl), "{text}", post.text);
    return text::replace_all(std::move(out), "{label}", label);
}

std::vector<SeedNode> parse_seed(const json& arr, int depth) {
    std::vector<SeedNode> out;
    if (arr.is_null()) return out;
    for (const auto& j : arr) {
        SeedNode n;
        n.label = j.at("label").get<std::string>();
        n.cmb.definition = j.value("definition", "Posts about " + n.label + ".");
        n.cmb.inclusion = string_list(j, "inclusion");
        n.cmb.exclusion = string_list(j, "exclusion");
        if (depth == 0 && j.contains("subtopics")) n.children = parse_seed(j.at("subtopics"), 1);
        out.push_back(std::move(n));
    }
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// ScriptedActionModel

struct ScriptedActionModel::Impl {
    struct Rule {
        std::set<std::string> any;
        std::set<std::string> all;
        ActionKind kind = ActionKind::skip_post;
        std::string node;    // set_node / update_cmb target path
        std::string parent;  // add_child parent path; empty is the root
        std::string label;
        std::string topic;
        std::string subtopic;
        std::string definition;
        std::string topic_definition;
        std::vector<std::string> inclusion;
        std::vector<std::string> exclusion;
        std::vector<std::string> remove;
        std::string rationale = "{text}";
    };

    std::vector<SeedNode> seed;
    std::vector<Rule> rules;
    std::size_t min_support = 10;
    double min_share = 0.8;
    std::string arbitrate_mode = "dedup";

    static std::set<std::string> token_set(const json& j, const char* key) {
        std::set<std::string> out;
        for (const auto& s : string_list(j, key))
            for (auto& t : text::tokens(s)) out.insert(std::move(t));
        return out;
    }

    bool matches(const Rule& r, const std::set<std::string>& toks) const {
        if (!r.any.empty() && std::none_of(r.any.begin(), r.any.end(), [&](const auto& t) { return toks.count(t); }))
            return false;
        return std::all_of(r.all.begin(), r.all.end(), [&](const auto& t) { return toks.count(t) > 0; });
    }

    /// "Topic" or "Topic>Sub"; empty resolves to the root.
    static const std::string* resolve(const TaxonomyView& view, const std::string& path) {
        if (text::trim(path).empty()) return &view.root_id;
        const auto sep = path.find('>');
        const auto* topic = view.find_topic(path.substr(0, sep));
        if (!topic) return nullptr;
        if (sep == std::string::npos) return &topic->id;
        const auto* sub = view.find_child(topic->id, path.substr(sep + 1));
        return sub ? &sub->id : nullptr;
    }

    std::optional<DraftAction> apply(const Rule& r, const Post& post, const TaxonomyView& view) const {
        DraftAction a;
        a.id = draft_id_for(post.id);
        a.kind = r.kind;
        a.post_id = post.id;
        a.timestamp = post.timestamp;
        switch (r.kind) {
            case ActionKind::set_node: {
                const auto* id = resolve(view, r.node);
                if (!id || *id == view.root_id) return std::nullopt;
                a.target_node = *id;
                break;
            }
            case ActionKind::add_child: {
                const auto* id = resolve(view, r.parent);
                if (!id) return std::nullopt;
                a.target_node = *id;
                a.payload = ChildPayload{r.label, ConceptMemoryBank{expand(r.definition, post, r.label), r.inclusion,
                                                                    r.exclusion}};
                break;
            }
            case ActionKind::add_path:
                a.payload = PathPayload{r.topic, ConceptMemoryBank{expand(r.topic_definition, post, r.topic), {}, {}},
                                        r.subtopic,
                                        ConceptMemoryBank{expand(r.definition, post, r.subtopic), r.inclusion,
                                                          r.exclusion}};
                break;
            case ActionKind::update_cmb: {
                const auto* id = resolve(view, r.node);
                if (!id || *id == view.root_id) return std::nullopt;
                a.target_node = *id;
                CmbPatch patch;
                if (!r.definition.empty()) patch.definition = expand(r.definition, post, r.label);
                patch.add_inclusion = r.inclusion;
                patch.add_exclusion = r.exclusion;
                patch.remove_cues = r.remove;
                a.payload = std::move(patch);
                break;
            }
            case ActionKind::skip_post: break;
        }
        a.rationale = expand(r.rationale, post, r.label.empty() ? r.subtopic : r.label);
        return a;
    }
};

ScriptedActionModel::ScriptedActionModel(const json& script, std::shared_ptr<UsageLedger> ledger)
    : impl_(std::make_unique<Impl>()), ledger_(std::move(ledger)) {
    try {
        impl_->seed = parse_seed(script.value("seed", json::array()), 0);
        const json propose = script.value("propose", json::object());
        for (const auto& jr : propose.value("rules", json::array())) {
            Impl::Rule r;
            r.any = Impl::token_set(jr, "any");
            r.all = Impl::token_set(jr, "all");
            r.kind = parse_action_kind(jr.at("kind").get<std::string>());
            r.node = jr.value("node", "");
            r.parent = jr.value("parent", "");
            r.label = jr.value("label", "");
            r.topic = jr.value("topic", "");
            r.subtopic = jr.value("subtopic", "");
            const bool creates = r.kind == ActionKind::add_child || r.kind == ActionKind::add_path;
            r.definition = jr.value("definition", creates ? "Posts about {label}." : "");
            r.topic_definition = jr.value("topic_definition", "Posts about " + r.topic + ".");
            r.inclusion = string_list(jr, "inclusion");
            r.exclusion = string_list(jr, "exclusion");
            r.remove = string_list(jr, "remove");
            r.rationale = jr.value("rationale", "{text}");
            impl_->rules.push_back(std::move(r));
        }
        const json refine = script.value("refine", json::object());
        impl_->min_support = refine.value("min_support", std::size_t{10});
        impl_->min_share = refine.value("min_share", 0.8);
        impl_->arbitrate_mode = script.value("arbitrate", json::object()).value("mode", "dedup");
        if (impl_->arbitrate_mode != "dedup" && impl_->arbitrate_mode != "pass" && impl_->arbitrate_mode != "reject")
            throw ConfigError("unknown arbitrate mode '" + impl_->arbitrate_mode + "'");
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed mock script: ") + e.what());
    } catch (const ParseError& e) {
        throw ConfigError(std::string("malformed mock script: ") + e.what());
    }
}

ScriptedActionModel::~ScriptedActionModel() = default;

std::vector<SeedNode> ScriptedActionModel::seed_taxonomy(const std::string&) {
    ledger_->record({CallSite::seed, 0, 0});
    return impl_->seed;
}

DraftAction ScriptedActionModel::propose(const Post& post, const TaxonomyView& view) {
    ledger_->record({CallSite::propose, 0, 0});
    const auto toks = text::tokens(post.text);
    const std::set<std::string> tokset(toks.begin(), toks.end());
    for (const auto& rule : impl_->rules) {
        if (!impl_->matches(rule, tokset)) continue;
        if (auto a = impl_->apply(rule, post, view)) return *a;
    }
    DraftAction skip;
    skip.id = draft_id_for(post.id);
    skip.kind = ActionKind::skip_post;
    skip.post_id = post.id;
    skip.timestamp = post.timestamp;
    skip.rationale = "no rule matched";
    return skip;
}

RefineOutcome ScriptedActionModel::refine(const ClusterEvidence& evidence, const TaxonomyView&) {
    if (evidence.members.empty()) throw Error("refine called with an empty cluster");
    ledger_->record({CallSite::refine, 0, 0});

    std::map<std::string, std::vector<const DraftAction*>> groups;
    for (const auto& m : evidence.members) groups[payload_key(m.kind, m.payload)].push_back(&m);
    const auto dominant = std::max_element(groups.begin(), groups.end(), [](const auto& a, const auto& b) {
        return a.second.size() < b.second.size();
    });
    const auto count = dominant->second.size();
    const double share = static_cast<double>(count) / static_cast<double>(evidence.members.size());
    if (count < impl_->min_support || share < impl_->min_share) return RefineOutcome{true, {}};

    auto members = dominant->second;
    std::sort(members.begin(), members.end(), [](const auto* a, const auto* b) { return a->id < b->id; });
    RefinedAction r;
    r.id = evidence.cluster_id + "-r1";
    r.kind = evidence.kind;
    r.target_node = members.front()->target_node;
    r.payload = members.front()->payload;
    r.rationale = std::to_string(count) + " of " + std::to_string(evidence.members.size()) + " drafts agree";
    for (const auto* m : members) {
        r.support.push_back(m->id);
        r.support_posts.push_back(m->post_id);
    }
    r.source_cluster = evidence.cluster_id;
    return RefineOutcome{false, {std::move(r)}};
}

std::vector<FinalAction> ScriptedActionModel::arbitrate(const std::vector<RefinedAction>& refined,
                                                        const TaxonomyView&) {
    ledger_->record({CallSite::arbitrate, 0, 0});
    std::vector<FinalAction> out;
    if (impl_->arbitrate_mode == "reject") return out;
    std::map<std::string, std::size_t> seen;
    for (const auto& r : refined) {
        const std::string key = std::string(to_string(r.kind)) + "|" + r.target_node + "|" + payload_key(r.kind, r.payload);
        auto it = impl_->arbitrate_mode == "dedup" ? seen.find(key) : seen.end();
        if (it == seen.end()) {
            FinalAction f;
            static_cast<RefinedAction&>(f) = r;
            f.arbitration_note = "accepted";
            seen.emplace(key, out.size());
            out.push_back(std::move(f));
            continue;
        }
        auto& f = out[it->second];
        std::map<std::string, std::string> support;
        for (std::size_t i = 0; i < f.support.size(); ++i) support[f.support[i]] = f.support_posts[i];
        for (std::size_t i = 0; i < r.support.size(); ++i) support[r.support[i]] = r.support_posts[i];
        f.support.clear();
        f.support_posts.clear();
        for (const auto& [d, p] : support) {
            f.support.push_back(d);
            f.support_posts.push_back(p);
        }
        f.arbitration_note += "; merged " + r.id;
    }
    return out;
}

// ---------------------------------------------------------------------------
// HashEmbedder

HashEmbedder::HashEmbedder(std::shared_ptr<UsageLedger> ledger, std::size_t dimension)
    : ledger_(std::move(ledger)), dimension_(dimension) {
    if (dimension_ == 0) throw ConfigError("embedding dimension must be positive");
}

Embedding HashEmbedder::embed_one(std::string_view raw) const {
    if (text::trim(raw).empty()) throw ProviderError("cannot embed an empty string", false);
    const std::string s = " " + text::lower(raw) + " ";
    Embedding v(dimension_, 0.0);
    for (std::size_t i = 0; i + 3 <= s.size(); ++i) {
        std::uint64_t h = 14695981039346656037ull;
        for (std::size_t k = i; k < i + 3; ++k) {
            h ^= static_cast<unsigned char>(s[k]);
            h *= 1099511628211ull;
        }
        v[h % dimension_] += (h >> 63) ? -1.0 : 1.0;
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    if (norm == 0.0) {
        v[0] = 1.0;
        return v;
    }
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;
    return v;
}

std::vector<Embedding> HashEmbedder::embed(const std::vector<std::string>& texts) {
    ledger_->record({CallSite::embed, 0, 0});
    std::vector<Embedding> out;
    out.reserve(texts.size());
    for (const auto& t : texts) out.push_back(embed_one(t));
    return out;
}

// ---------------------------------------------------------------------------
// MockScorer

bool is_stopword(std::string_view token) {
    static const std::set<std::string, std::less<>> words = {"this", "is", "about", "a",  "an",  "the", "of",
                                                             "and",  "or", "to",    "in", "for", "on",  "with"};
    return words.count(token) > 0;
}

MockScorer::MockScorer(std::shared_ptr<UsageLedger> ledger, Mode mode, std::string fallback_label)
    : ledger_(std::move(ledger)), mode_(mode), fallback_(std::move(fallback_label)) {}

std::vector<double> MockScorer::classify(const std::string& body, const std::vector<std::string>& labels) {
    ledger_->record({CallSite::classify, 0, 0});
    if (labels.empty()) throw ProviderError("classify needs at least one label", false);
    const std::size_t n = labels.size();
    std::vector<double> probs(n, 1.0 / static_cast<double>(n));
    if (mode_ == Mode::uniform || n == 1) return probs;

    const auto haystack = text::lower(body);
    std::optional<std::size_t> hit;
    for (std::size_t i = 0; i < n && !hit; ++i) {
        const auto needle = text::lower(text::trim(labels[i]));
        if (!needle.empty() && needle != text::lower(fallback_) && haystack.find(needle) != std::string::npos) hit = i;
    }
    if (!hit && !fallback_.empty()) {
        for (std::size_t i = 0; i < n && !hit; ++i)
            if (text::iequals(labels[i], fallback_)) hit = i;
    }
    if (!hit) return probs;
    const double rest = 0.1 / static_cast<double>(n - 1);
    std::fill(probs.begin(), probs.end(), rest);
    probs[*hit] = 0.9;
    return probs;
}

double MockScorer::entail(const std::string& premise, const std::string& hypothesis) {
    ledger_->record({CallSite::entail, 0, 0});
    if (premise == hypothesis) return 1.0;
    const auto ptoks = text::tokens(premise);
    const std::set<std::string> pset(ptoks.begin(), ptoks.end());
    std::set<std::string> hset;
    for (auto& t : text::tokens(hypothesis))
        if (!is_stopword(t)) hset.insert(std::move(t));
    if (hset.empty()) return 0.0;
    std::size_t covered = 0;
    for (const auto& t : hset) covered += pset.count(t);
    return static_cast<double>(covered) / static_cast<double>(hset.size());
}

// ---------------------------------------------------------------------------
// ScriptedJudge

namespace {
std::string score_reply(int k) { return "Scripted judgement. <score: " + std::to_string(k) + ">"; }
}  // namespace

ScriptedJudge::ScriptedJudge(const json& script, std::shared_ptr<UsageLedger> ledger) : ledger_(std::move(ledger)) {
    try {
        default_reply_ = script.contains("default_text") ? script.at("default_text").get<std::string>()
                                                         : score_reply(script.value("default", 3));
        for (const auto& jr : script.value("rules", json::array())) {
            Rule r;
            r.contains = jr.at("contains").get<std::string>();
            r.reply = jr.contains("text") ? jr.at("text").get<std::string>() : score_reply(jr.at("score").get<int>());
            rules_.push_back(std::move(r));
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed judge script: ") + e.what());
    }
}

std::string ScriptedJudge::judge(JudgeKind, const std::string& prompt) {
    ledger_->record({CallSite::judge, 0, 0});
    if (text::trim(prompt).empty()) throw ProviderError("judge prompt is empty", false);
    for (const auto& r : rules_)
        if (prompt.find(r.contains) != std::string::npos) return r.reply;
    return default_reply_;
}

// ---------------------------------------------------------------------------
// Bundles

Providers make_mock_providers(const json& script) {
    Providers p;
    p.ledger = std::make_shared<UsageLedger>();
    p.model = std::make_shared<ScriptedActionModel>(script, p.ledger);
    try {
        const json emb = script.value("embedder", json::object());
        p.embedder = std::make_shared<HashEmbedder>(p.ledger, emb.value("dimension", std::size_t{256}));
        const json sc = script.value("scorer", json::object());
        const auto mode = sc.value("mode", "keyword");
        if (mode != "keyword" && mode != "uniform") throw ConfigError("unknown mock scorer mode '" + mode + "'");
        p.scorer = std::make_shared<MockScorer>(p.ledger, mode == "uniform" ? MockScorer::Mode::uniform
                                                                            : MockScorer::Mode::keyword,
                                                sc.value("fallback", "others"));
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed mock script: ") + e.what());
    }
    p.judge = std::make_shared<ScriptedJudge>(script.value("judge", json::object()), p.ledger);
    return p;
}

Providers make_providers(const ProviderConfig& config) {
    if (config.mode == "mock") {
        if (config.scripts.empty()) return make_mock_providers(json::object());
        std::ifstream in(config.scripts);
        if (!in) throw ConfigError("cannot open mock script " + config.scripts.string());
        try {
            return make_mock_providers(json::parse(in));
        } catch (const json::parse_error& e) {
            throw ConfigError("mock script " + config.scripts.string() + " is not valid JSON: " + e.what());
        }
    }
    if (config.mode != "live") throw ConfigError("providers.mode must be 'mock' or 'live', got '" + config.mode + "'");

    if (config.llm_url.empty() || config.llm_model.empty())
        throw ConfigError("live mode needs EVOTAXO_LLM_URL and EVOTAXO_LLM_MODEL");
    Providers p;
    p.ledger = std::make_shared<UsageLedger>();
    std::shared_ptr<HttpTransport> http = make_http_transport();
    auto chat = std::make_shared<ChatClient>(http, ChatEndpoint{config.llm_url, config.llm_key, config.llm_model},
                                             p.ledger, config.retry);
    p.model = std::make_shared<LlmActionModel>(chat);
    p.judge = std::make_shared<LlmJudge>(chat);
    if (!config.embed_model.empty()) {
        const auto url = config.embed_url.empty() ? config.llm_url : config.embed_url;
        p.embedder = std::make_shared<HttpEmbedder>(http, ChatEndpoint{url, config.llm_key, config.embed_model},
                                                    p.ledger, config.retry);
    }
    if (!config.nli_url.empty())
        p.scorer = std::make_shared<NliServiceScorer>(http, config.nli_url, p.ledger, config.retry);
    return p;
}

}  // namespace evotaxo
