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

#include <cmath>
#include <set>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "evotaxo/providers.hpp"
#include "evotaxo/text.hpp"

namespace evotaxo {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Transport

namespace {

struct SplitUrl {
    std::string origin;  // scheme://host[:port]
    std::string path;
};

SplitUrl split_url(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw ConfigError("URL needs a scheme: '" + url + "'");
    const auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
}

class HttplibTransport : public HttpTransport {
public:
    explicit HttplibTransport(std::chrono::seconds timeout) : timeout_(timeout) {}

    HttpResponse post(const std::string& url, const std::string& body,
                      const std::map<std::string, std::string>& headers) override {
        const auto u = split_url(url);
        auto cli = client(u.origin);
        auto res = cli.Post(u.path, to_headers(headers), body, "application/json");
        return unwrap(res, url);
    }

    HttpResponse get(const std::string& url, const std::map<std::string, std::string>& headers) override {
        const auto u = split_url(url);
        auto cli = client(u.origin);
        auto res = cli.Get(u.path, to_headers(headers));
        return unwrap(res, url);
    }

private:
    httplib::Client client(const std::string& origin) const {
        httplib::Client cli(origin);
        cli.set_connection_timeout(timeout_);
        cli.set_read_timeout(timeout_);
        cli.set_write_timeout(timeout_);
        return cli;
    }

    static httplib::Headers to_headers(const std::map<std::string, std::string>& headers) {
        return httplib::Headers(headers.begin(), headers.end());
    }

    static HttpResponse unwrap(const httplib::Result& res, const std::string& url) {
        if (!res) throw ProviderError("request to " + url + " failed: " + httplib::to_string(res.error()), true);
        return HttpResponse{res->status, res->body};
    }

    std::chrono::seconds timeout_;
};

}  // namespace

std::unique_ptr<HttpTransport> make_http_transport(std::chrono::seconds timeout) {
    return std::make_unique<HttplibTransport>(timeout);
}

json post_json(HttpTransport& http, const std::string& url, const json& body,
               const std::map<std::string, std::string>& headers, const RetryPolicy& retry) {
    const auto payload = body.dump();
    std::string last_error;
    for (int attempt = 1; attempt <= std::max(1, retry.attempts); ++attempt) {
        if (attempt > 1) std::this_thread::sleep_for(retry.backoff);
        HttpResponse res;
        try {
            res = http.post(url, payload, headers);
        } catch (const ProviderError& e) {
            if (!e.retryable()) throw;
            last_error = e.what();
            spdlog::warn("attempt {} of {}: {}", attempt, retry.attempts, last_error);
            continue;
        }
        if (res.status == 429 || res.status >= 500) {
            last_error = url + " answered HTTP " + std::to_string(res.status);
            spdlog::warn("attempt {} of {}: {}", attempt, retry.attempts, last_error);
            continue;
        }
        if (res.status < 200 || res.status >= 300)
            throw ProviderError(url + " answered HTTP " + std::to_string(res.status) + ": " + res.body, false);
        try {
            return json::parse(res.body);
        } catch (const json::parse_error& e) {
            throw ProviderError(url + " returned a body that is not JSON: " + e.what(), false);
        }
    }
    throw ProviderError("giving up after " + std::to_string(retry.attempts) + " attempts: " + last_error, true);
}

namespace {

std::map<std::string, std::string> auth_headers(const std::string& key) {
    std::map<std::string, std::string> h;
    if (!key.empty()) h["Authorization"] = "Bearer " + key;
    return h;
}

std::string with_suffix(const std::string& base, std::string_view suffix) {
    if (base.size() >= suffix.size() && base.compare(base.size() - suffix.size(), suffix.size(), suffix) == 0)
        return base;
    auto b = base;
    while (!b.empty() && b.back() == '/') b.pop_back();
    return b + std::string(suffix);
}

}  // namespace

// ---------------------------------------------------------------------------
// Chat

ChatClient::ChatClient(std::shared_ptr<HttpTransport> http, ChatEndpoint endpoint, std::shared_ptr<UsageLedger> ledger,
                       RetryPolicy retry)
    : http_(std::move(http)), endpoint_(std::move(endpoint)), ledger_(std::move(ledger)), retry_(retry) {}

json ChatClient::request_body(const std::vector<ChatMessage>& messages) const {
    json msgs = json::array();
    for (const auto& m : messages) msgs.push_back(json{{"role", m.role}, {"content", m.content}});
    return json{{"model", endpoint_.model}, {"temperature", 0.0}, {"messages", std::move(msgs)}};
}

std::string ChatClient::complete(const std::vector<ChatMessage>& messages, CallSite site) {
    const auto url = with_suffix(endpoint_.url, "/chat/completions");
    const json res = post_json(*http_, url, request_body(messages), auth_headers(endpoint_.key), retry_);
    TokenUsage usage{site, 0, 0};
    if (auto u = res.find("usage"); u != res.end() && u->is_object()) {
        usage.prompt_tokens = u->value("prompt_tokens", std::uint64_t{0});
        usage.completion_tokens = u->value("completion_tokens", std::uint64_t{0});
    }
    ledger_->record(usage);
    try {
        const auto& content = res.at("choices").at(0).at("message").at("content");
        if (!content.is_string()) throw ProviderError("chat reply has no text content", false);
        return content.get<std::string>();
    } catch (const json::exception& e) {
        throw ProviderError(std::string("malformed chat completion: ") + e.what(), false);
    }
}

json extract_json(std::string_view reply) {
    const auto obj = reply.find('{');
    const auto arr = reply.find('[');
    const auto start = std::min(obj, arr);
    if (start == std::string_view::npos) throw ParseError("reply contains no JSON");
    const char close = reply[start] == '{' ? '}' : ']';
    const auto end = reply.rfind(close);
    if (end == std::string_view::npos || end < start) throw ParseError("reply contains no complete JSON value");
    try {
        return json::parse(reply.substr(start, end - start + 1));
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("reply is not valid JSON: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// LlmActionModel

namespace {

std::string fill(std::string_view tmpl, const std::map<std::string, std::string>& values) {
    std::string out(tmpl);
    for (const auto& [k, v] : values) out = text::replace_all(std::move(out), "{{" + k + "}}", v);
    return out;
}

/// Asks once and retries a single time when the reply does not parse.
template <typename F>
auto ask_parsed(ChatClient& chat, const std::string& prompt, CallSite site, F&& parse)
    -> std::optional<decltype(parse(json{}))> {
    for (int attempt = 0; attempt < 2; ++attempt) {
        const auto reply = chat.complete({{"user", prompt}}, site);
        try {
            return parse(extract_json(reply));
        } catch (const ParseError& e) {
            spdlog::warn("{} reply unparseable (attempt {}): {}", to_string(site), attempt + 1, e.what());
        } catch (const json::exception& e) {
            spdlog::warn("{} reply malformed (attempt {}): {}", to_string(site), attempt + 1, e.what());
        }
    }
    return std::nullopt;
}

SeedNode seed_node(const json& j) {
    SeedNode n;
    n.label = j.at("label").get<std::string>();
    n.cmb = cmb_from_json(j);
    if (auto s = j.find("subtopics"); s != j.end())
        for (const auto& c : *s) n.children.push_back(seed_node(c));
    return n;
}

}  // namespace

LlmActionModel::LlmActionModel(std::shared_ptr<ChatClient> chat) : chat_(std::move(chat)) {}

std::vector<SeedNode> LlmActionModel::seed_taxonomy(const std::string& root_label) {
    const auto prompt = fill(prompt_template("seed"), {{"root", root_label}});
    auto topics = ask_parsed(*chat_, prompt, CallSite::seed, [](const json& j) {
        std::vector<SeedNode> out;
        for (const auto& t : j.at("topics")) out.push_back(seed_node(t));
        return out;
    });
    if (!topics) throw ProviderError("seed taxonomy reply could not be parsed", false);
    return *topics;
}

DraftAction LlmActionModel::propose(const Post& post, const TaxonomyView& view) {
    const auto prompt = fill(prompt_template("propose"), {{"root", view.root_label}, {"view", view.text}, {"post", post.text}});
    auto draft = ask_parsed(*chat_, prompt, CallSite::propose, [&](const json& j) { return draft_from_wire(j, post); });
    if (draft) return *draft;
    DraftAction skip;
    skip.id = draft_id_for(post.id);
    skip.kind = ActionKind::skip_post;
    skip.post_id = post.id;
    skip.timestamp = post.timestamp;
    skip.rationale = "unparseable proposer output";
    return skip;
}

RefineOutcome LlmActionModel::refine(const ClusterEvidence& evidence, const TaxonomyView& view) {
    if (evidence.members.empty()) throw Error("refine called with an empty cluster");
    std::string posts;
    for (const auto& p : evidence.representatives) posts += "- " + p.text + "\n";
    std::string drafts;
    std::map<std::string, std::string> post_of;
    for (const auto& m : evidence.members) {
        json wire{{"kind", std::string(to_string(m.kind))},
                  {"target_node", m.target_node},
                  {"payload", payload_to_json(m.kind, m.payload)},
                  {"rationale", m.rationale}};
        drafts += m.id + ": " + wire.dump() + "\n";
        post_of[m.id] = m.post_id;
    }
    const auto prompt = fill(prompt_template("refine"), {{"root", view.root_label},
                                                         {"view", view.text},
                                                         {"count", std::to_string(evidence.members.size())},
                                                         {"kind", std::string(to_string(evidence.kind))},
                                                         {"target", evidence.target_node.empty() ? "(root)" : evidence.target_node},
                                                         {"posts", posts},
                                                         {"drafts", drafts}});
    auto outcome = ask_parsed(*chat_, prompt, CallSite::refine, [&](const json& j) {
        RefineOutcome out;
        if (j.at("decision").get<std::string>() == "defer") return out;
        out.deferred = false;
        int n = 0;
        for (const auto& a : j.at("actions")) {
            RefinedAction r;
            r.id = evidence.cluster_id + "-r" + std::to_string(++n);
            r.kind = parse_action_kind(a.at("kind").get<std::string>());
            r.target_node = a.value("target_node", "");
            r.payload = payload_from_json(r.kind, a.value("payload", json(nullptr)));
            r.rationale = a.value("rationale", "");
            std::set<std::string> support;
            for (const auto& s : a.value("support", std::vector<std::string>{}))
                if (post_of.count(s)) support.insert(s);
            if (support.empty())
                for (const auto& [d, p] : post_of) support.insert(d);
            for (const auto& d : support) {
                r.support.push_back(d);
                r.support_posts.push_back(post_of.at(d));
            }
            r.source_cluster = evidence.cluster_id;
            out.actions.push_back(std::move(r));
        }
        if (out.actions.empty()) out.deferred = true;
        return out;
    });
    return outcome ? *outcome : RefineOutcome{true, {}};
}

std::vector<FinalAction> LlmActionModel::arbitrate(const std::vector<RefinedAction>& refined, const TaxonomyView& view) {
    if (refined.empty()) return {};
    std::string actions;
    std::map<std::string, const RefinedAction*> by_id;
    for (const auto& r : refined) {
        json wire{{"id", r.id},
                  {"kind", std::string(to_string(r.kind))},
                  {"target_node", r.target_node},
                  {"payload", payload_to_json(r.kind, r.payload)},
                  {"rationale", r.rationale},
                  {"support_count", r.support.size()}};
        actions += wire.dump() + "\n";
        by_id[r.id] = &r;
    }
    const auto prompt = fill(prompt_template("arbitrate"), {{"root", view.root_label}, {"view", view.text}, {"actions", actions}});
    auto finals = ask_parsed(*chat_, prompt, CallSite::arbitrate, [&](const json& j) {
        std::vector<FinalAction> out;
        std::set<std::string> taken;
        for (const auto& f : j.at("final")) {
            const auto id = f.at("id").get<std::string>();
            auto it = by_id.find(id);
            if (it == by_id.end() || !taken.insert(id).second) continue;
            FinalAction fa;
            static_cast<RefinedAction&>(fa) = *it->second;
            fa.arbitration_note = f.value("note", "");
            out.push_back(std::move(fa));
        }
        return out;
    });
    return finals ? *finals : std::vector<FinalAction>{};
}

// ---------------------------------------------------------------------------
// Embeddings

HttpEmbedder::HttpEmbedder(std::shared_ptr<HttpTransport> http, ChatEndpoint endpoint,
                           std::shared_ptr<UsageLedger> ledger, RetryPolicy retry)
    : http_(std::move(http)), endpoint_(std::move(endpoint)), ledger_(std::move(ledger)), retry_(retry) {}

std::vector<Embedding> HttpEmbedder::embed(const std::vector<std::string>& texts) {
    if (texts.empty()) return {};
    const json body{{"model", endpoint_.model}, {"input", texts}};
    const json res = post_json(*http_, with_suffix(endpoint_.url, "/embeddings"), body, auth_headers(endpoint_.key), retry_);
    TokenUsage usage{CallSite::embed, 0, 0};
    if (auto u = res.find("usage"); u != res.end() && u->is_object())
        usage.prompt_tokens = u->value("prompt_tokens", std::uint64_t{0});
    ledger_->record(usage);

    std::vector<Embedding> out(texts.size());
    try {
        const auto& data = res.at("data");
        if (data.size() != texts.size()) throw ProviderError("embedding count does not match input count", false);
        for (std::size_t i = 0; i < data.size(); ++i) {
            const auto idx = data[i].value("index", i);
            if (idx >= out.size() || !out[idx].empty()) throw ProviderError("bad embedding index", false);
            out[idx] = data[i].at("embedding").get<Embedding>();
        }
    } catch (const json::exception& e) {
        throw ProviderError(std::string("malformed embedding response: ") + e.what(), false);
    }
    const auto dim = out.front().size();
    for (auto& v : out) {
        if (v.size() != dim || dim == 0) throw ProviderError("embedding dimensions differ within a batch", false);
        double norm = 0.0;
        for (double x : v) norm += x * x;
        if (!(norm > 0.0)) throw ProviderError("zero embedding vector", false);
        norm = std::sqrt(norm);
        for (double& x : v) x /= norm;
    }
    return out;
}

// ---------------------------------------------------------------------------
// NLI service

NliServiceScorer::NliServiceScorer(std::shared_ptr<HttpTransport> http, std::string base_url,
                                   std::shared_ptr<UsageLedger> ledger, RetryPolicy retry)
    : http_(std::move(http)), base_(std::move(base_url)), ledger_(std::move(ledger)), retry_(retry) {
    while (!base_.empty() && base_.back() == '/') base_.pop_back();
}

std::vector<double> NliServiceScorer::classify(const std::string& body, const std::vector<std::string>& labels) {
    if (labels.empty()) throw ProviderError("classify needs at least one label", false);
    const json req{{"text", body}, {"labels", labels}, {"multi_class", false}};
    const json res = post_json(*http_, base_ + "/classify", req, {}, retry_);
    ledger_->record({CallSite::classify, 0, 0});
    std::vector<double> probs;
    try {
        probs = res.at("probs").get<std::vector<double>>();
    } catch (const json::exception& e) {
        throw ProviderError(std::string("malformed classify response: ") + e.what(), false);
    }
    if (probs.size() != labels.size()) throw ProviderError("classify returned a misaligned distribution", false);
    double sum = 0.0;
    for (double p : probs) {
        if (!(p >= 0.0) || !std::isfinite(p)) throw ProviderError("classify returned an invalid probability", false);
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-6) throw ProviderError("classify probabilities do not sum to one", false);
    return probs;
}

double NliServiceScorer::entail(const std::string& premise, const std::string& hypothesis) {
    const json req{{"premise", premise}, {"hypothesis", hypothesis}};
    const json res = post_json(*http_, base_ + "/entail", req, {}, retry_);
    ledger_->record({CallSite::entail, 0, 0});
    try {
        const double p = res.at("entail").get<double>();
        if (!(p >= 0.0 && p <= 1.0)) throw ProviderError("entail probability out of range", false);
        return p;
    } catch (const json::exception& e) {
        throw ProviderError(std::string("malformed entail response: ") + e.what(), false);
    }
}

bool NliServiceScorer::healthy() {
    try {
        return http_->get(base_ + "/health", {}).status == 200;
    } catch (const ProviderError&) {
        return false;
    }
}

// ---------------------------------------------------------------------------
// Judge

LlmJudge::LlmJudge(std::shared_ptr<ChatClient> chat) : chat_(std::move(chat)) {}

std::string LlmJudge::judge(JudgeKind, const std::string& prompt) {
    if (text::trim(prompt).empty()) throw ProviderError("judge prompt is empty", false);
    return chat_->complete({{"user", prompt}}, CallSite::judge);
}

}  // namespace evotaxo
