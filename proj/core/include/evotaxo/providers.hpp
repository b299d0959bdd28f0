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

#include <array>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "evotaxo/actions.hpp"
#include "evotaxo/corpus.hpp"
#include "evotaxo/taxonomy.hpp"

namespace evotaxo {

// ---------------------------------------------------------------------------
// Usage accounting

enum class CallSite { seed, propose, refine, arbitrate, judge, embed, classify, entail };
inline constexpr std::size_t kCallSiteCount = 8;

std::string_view to_string(CallSite site);
CallSite parse_call_site(std::string_view s);

struct TokenUsage {
    CallSite site = CallSite::propose;
    std::uint64_t prompt_tokens = 0;
    std::uint64_t completion_tokens = 0;
};

struct UsageCounts {
    std::uint64_t calls = 0;
    std::uint64_t prompt_tokens = 0;
    std::uint64_t completion_tokens = 0;

    std::uint64_t total() const { return prompt_tokens + completion_tokens; }
    UsageCounts& operator+=(const UsageCounts& o);
    friend bool operator==(const UsageCounts&, const UsageCounts&) = default;
};

struct UsageTotals {
    std::array<UsageCounts, kCallSiteCount> by_site{};

    const UsageCounts& at(CallSite s) const { return by_site[static_cast<std::size_t>(s)]; }
    UsageCounts grand() const;
    UsageTotals& operator+=(const UsageTotals& o);
    friend UsageTotals operator-(const UsageTotals& a, const UsageTotals& b);
    friend bool operator==(const UsageTotals&, const UsageTotals&) = default;
};

nlohmann::json to_json(const UsageTotals& totals);
UsageTotals usage_from_json(const nlohmann::json& j);

/// One decimal place in millions: 35'300'000 -> "35.3M".
std::string format_millions(std::uint64_t tokens);

/// Append-only, internally synchronised log of provider calls. A baseline
/// carries totals over from a resumed run.
class UsageLedger {
public:
    void record(const TokenUsage& usage);
    std::size_t size() const;
    std::vector<TokenUsage> entries() const;
    UsageTotals totals() const;
    void set_baseline(const UsageTotals& baseline);

private:
    mutable std::mutex mutex_;
    std::vector<TokenUsage> entries_;
    UsageTotals baseline_;
};

// ---------------------------------------------------------------------------
// Taxonomy as seen by model-backed providers

struct ViewNode {
    std::string id;
    std::string label;
    Level level = Level::topic;
    std::string parent;
};

struct TaxonomyView {
    std::string text;
    std::uint64_t revision = 0;
    std::string root_id;
    std::string root_label;
    std::vector<ViewNode> nodes;  // depth-first, children by id

    const ViewNode* find_topic(std::string_view label) const;
    const ViewNode* find_child(std::string_view parent_id, std::string_view label) const;
};

inline constexpr std::size_t kDefaultViewBudget = 8000;

/// Deterministic outline of the tree with concept memory banks. When the
/// rendering exceeds `budget` characters, cue lists are dropped first, then
/// subtopic definitions, then topic definitions; anything still over budget is
/// cut at the budget.
TaxonomyView render_view(const Taxonomy& tax, std::size_t budget = kDefaultViewBudget);

// ---------------------------------------------------------------------------
// Provider interfaces

struct SeedNode {
    std::string label;
    ConceptMemoryBank cmb;
    std::vector<SeedNode> children;
};

inline constexpr std::size_t kMaxSeedTopics = 8;
inline constexpr std::size_t kMaxSeedSubtopics = 4;

struct ClusterEvidence {
    std::string cluster_id;
    ActionKind kind = ActionKind::add_child;
    std::string target_node;
    std::vector<Post> representatives;
    std::vector<DraftAction> members;  // sorted by id
};

struct RefineOutcome {
    bool deferred = true;
    std::vector<RefinedAction> actions;
};

/// The LLM-backed functions of the pipeline: seeding, per-post proposing,
/// cluster refinement and window arbitration.
class ActionModel {
public:
    virtual ~ActionModel() = default;
    virtual std::vector<SeedNode> seed_taxonomy(const std::string& root_label) = 0;
    /// Returns a draft whose id, post id and timestamp come from `post`.
    virtual DraftAction propose(const Post& post, const TaxonomyView& view) = 0;
    /// Returned actions carry support drawn from the evidence members.
    virtual RefineOutcome refine(const ClusterEvidence& evidence, const TaxonomyView& view) = 0;
    virtual std::vector<FinalAction> arbitrate(const std::vector<RefinedAction>& refined, const TaxonomyView& view) = 0;
};

using Embedding = std::vector<double>;

class Embedder {
public:
    virtual ~Embedder() = default;
    /// Unit-norm vectors of one dimension, aligned with `texts`.
    virtual std::vector<Embedding> embed(const std::vector<std::string>& texts) = 0;
};

class Scorer {
public:
    virtual ~Scorer() = default;
    /// Probability distribution aligned with `labels`.
    virtual std::vector<double> classify(const std::string& text, const std::vector<std::string>& labels) = 0;
    /// Probability that `premise` entails `hypothesis`, in [0,1].
    virtual double entail(const std::string& premise, const std::string& hypothesis) = 0;
};

enum class JudgeKind { path, sib_coherence, sib_separability };
std::string_view to_string(JudgeKind kind);

class Judge {
public:
    virtual ~Judge() = default;
    /// Raw model text; scores are parsed downstream.
    virtual std::string judge(JudgeKind kind, const std::string& prompt) = 0;
};

// ---------------------------------------------------------------------------
// Deterministic mocks

/// Pure, script-driven action model. The script is a JSON document:
///
///   seed:      [{label, definition, inclusion?, exclusion?, subtopics?: [...]}]
///   propose:   {rules: [{any?, all?, kind, parent?, label?, topic?, subtopic?,
///               node?, definition?, inclusion?, exclusion?, remove?, rationale?}],
///               default?: "skip_post"}
///   refine:    {min_support, min_share}
///   arbitrate: {mode: "dedup" | "pass" | "reject"}
///
/// Rules match on post tokens (`any`: at least one, `all`: every one) and fire
/// in order. Labels address nodes by label path ("Topic" or "Topic>Sub").
/// `{text}` and `{label}` expand in definitions and rationales. A rule whose
/// nodes do not resolve against the view falls through to the next one.
class ScriptedActionModel : public ActionModel {
public:
    ScriptedActionModel(const nlohmann::json& script, std::shared_ptr<UsageLedger> ledger);
    ~ScriptedActionModel() override;

    std::vector<SeedNode> seed_taxonomy(const std::string& root_label) override;
    DraftAction propose(const Post& post, const TaxonomyView& view) override;
    RefineOutcome refine(const ClusterEvidence& evidence, const TaxonomyView& view) override;
    std::vector<FinalAction> arbitrate(const std::vector<RefinedAction>& refined, const TaxonomyView& view) override;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
    std::shared_ptr<UsageLedger> ledger_;
};

/// Signed FNV-1a feature hashing of character 3-grams, L2-normalised.
class HashEmbedder : public Embedder {
public:
    explicit HashEmbedder(std::shared_ptr<UsageLedger> ledger, std::size_t dimension = 256);
    std::vector<Embedding> embed(const std::vector<std::string>& texts) override;
    Embedding embed_one(std::string_view text) const;
    std::size_t dimension() const { return dimension_; }

private:
    std::shared_ptr<UsageLedger> ledger_;
    std::size_t dimension_;
};

/// Tokens ignored by the overlap entailment mock.
bool is_stopword(std::string_view token);

class MockScorer : public Scorer {
public:
    enum class Mode { uniform, keyword };

    /// keyword mode: the first label found verbatim (case-insensitive) in the
    /// text gets 0.9 and the rest share 0.1; with no match the fallback label,
    /// when present among the labels, gets 0.9 instead, otherwise uniform.
    /// entail is the fraction of the hypothesis' non-stopword tokens that occur
    /// in the premise.
    MockScorer(std::shared_ptr<UsageLedger> ledger, Mode mode, std::string fallback_label = {});
    std::vector<double> classify(const std::string& text, const std::vector<std::string>& labels) override;
    double entail(const std::string& premise, const std::string& hypothesis) override;

private:
    std::shared_ptr<UsageLedger> ledger_;
    Mode mode_;
    std::string fallback_;
};

/// judge script: {default?: k, rules?: [{contains, score? | text?}]}. First
/// rule whose `contains` occurs in the prompt wins.
class ScriptedJudge : public Judge {
public:
    ScriptedJudge(const nlohmann::json& script, std::shared_ptr<UsageLedger> ledger);
    std::string judge(JudgeKind kind, const std::string& prompt) override;

private:
    struct Rule {
        std::string contains;
        std::string reply;
    };
    std::vector<Rule> rules_;
    std::string default_reply_;
    std::shared_ptr<UsageLedger> ledger_;
};

// ---------------------------------------------------------------------------
// Live providers

struct HttpResponse {
    int status = 0;
    std::string body;
};

/// Minimal HTTP seam so clients can be tested without a network.
class HttpTransport {
public:
    virtual ~HttpTransport() = default;
    /// Throws ProviderError(retryable) when no response was received.
    virtual HttpResponse post(const std::string& url, const std::string& body,
                              const std::map<std::string, std::string>& headers) = 0;
    virtual HttpResponse get(const std::string& url, const std::map<std::string, std::string>& headers) = 0;
};

std::unique_ptr<HttpTransport> make_http_transport(std::chrono::seconds timeout = std::chrono::seconds(120));

struct RetryPolicy {
    int attempts = 3;
    std::chrono::milliseconds backoff{1000};
};

/// Posts `body` as JSON, retrying transport errors, HTTP 429 and 5xx with a
/// fixed backoff. Other statuses fail immediately.
nlohmann::json post_json(HttpTransport& http, const std::string& url, const nlohmann::json& body,
                         const std::map<std::string, std::string>& headers, const RetryPolicy& retry);

struct ChatMessage {
    std::string role;
    std::string content;
};

struct ChatEndpoint {
    std::string url;  // base URL; "/chat/completions" is appended unless already present
    std::string key;
    std::string model;
};

/// OpenAI-compatible chat completions with temperature pinned to 0.
class ChatClient {
public:
    ChatClient(std::shared_ptr<HttpTransport> http, ChatEndpoint endpoint, std::shared_ptr<UsageLedger> ledger,
               RetryPolicy retry = {});

    nlohmann::json request_body(const std::vector<ChatMessage>& messages) const;
    std::string complete(const std::vector<ChatMessage>& messages, CallSite site);

private:
    std::shared_ptr<HttpTransport> http_;
    ChatEndpoint endpoint_;
    std::shared_ptr<UsageLedger> ledger_;
    RetryPolicy retry_;
};

/// First JSON object or array in a model reply, ignoring code fences and prose.
nlohmann::json extract_json(std::string_view reply);

/// Prompt templates shipped with the library, keyed by name
/// ("seed", "propose", "refine", "arbitrate").
std::string_view prompt_template(std::string_view name);

class LlmActionModel : public ActionModel {
public:
    explicit LlmActionModel(std::shared_ptr<ChatClient> chat);

    std::vector<SeedNode> seed_taxonomy(const std::string& root_label) override;
    DraftAction propose(const Post& post, const TaxonomyView& view) override;
    RefineOutcome refine(const ClusterEvidence& evidence, const TaxonomyView& view) override;
    std::vector<FinalAction> arbitrate(const std::vector<RefinedAction>& refined, const TaxonomyView& view) override;

private:
    std::shared_ptr<ChatClient> chat_;
};

/// OpenAI-compatible /embeddings endpoint.
class HttpEmbedder : public Embedder {
public:
    HttpEmbedder(std::shared_ptr<HttpTransport> http, ChatEndpoint endpoint, std::shared_ptr<UsageLedger> ledger,
                 RetryPolicy retry = {});
    std::vector<Embedding> embed(const std::vector<std::string>& texts) override;

private:
    std::shared_ptr<HttpTransport> http_;
    ChatEndpoint endpoint_;
    std::shared_ptr<UsageLedger> ledger_;
    RetryPolicy retry_;
};

/// Client for the NLI microservice: POST /classify, POST /entail, GET /health.
class NliServiceScorer : public Scorer {
public:
    NliServiceScorer(std::shared_ptr<HttpTransport> http, std::string base_url, std::shared_ptr<UsageLedger> ledger,
                     RetryPolicy retry = {});
    std::vector<double> classify(const std::string& text, const std::vector<std::string>& labels) override;
    double entail(const std::string& premise, const std::string& hypothesis) override;
    /// True when /health answers 200.
    bool healthy();

private:
    std::shared_ptr<HttpTransport> http_;
    std::string base_;
    std::shared_ptr<UsageLedger> ledger_;
    RetryPolicy retry_;
};

class LlmJudge : public Judge {
public:
    explicit LlmJudge(std::shared_ptr<ChatClient> chat);
    std::string judge(JudgeKind kind, const std::string& prompt) override;

private:
    std::shared_ptr<ChatClient> chat_;
};

// ---------------------------------------------------------------------------
// Bundles

struct ProviderConfig {
    std::string mode = "mock";      // mock | live
    std::filesystem::path scripts;  // mock script file; empty uses built-in defaults
    std::string llm_url;
    std::string llm_key;
    std::string llm_model;
    std::string embed_url;
    std::string embed_model;
    std::string nli_url;
    RetryPolicy retry;
};

struct Providers {
    std::shared_ptr<UsageLedger> ledger;
    std::shared_ptr<ActionModel> model;
    std::shared_ptr<Embedder> embedder;
    std::shared_ptr<Scorer> scorer;
    std::shared_ptr<Judge> judge;
};

/// Mock providers from a parsed script document (sections: seed, propose,
/// refine, arbitrate, judge, scorer, embedder).
Providers make_mock_providers(const nlohmann::json& script);
/// Throws ConfigError on an unknown mode, a missing script or missing endpoints.
Providers make_providers(const ProviderConfig& config);

}  // namespace evotaxo
