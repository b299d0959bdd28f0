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

#include "evotaxo/engine.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "parallel.hpp"

namespace evotaxo {

using nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Configuration

void RunConfig::validate() const {
    if (root_label.find_first_not_of(" \t\r\n") == std::string::npos) throw ConfigError("root_label must be nonempty");
    if (!(consolidation.lambda >= 0.0 && consolidation.lambda <= 1.0))
        throw ConfigError(fmt::format("lambda must lie in [0, 1], got {}", consolidation.lambda));
    if (consolidation.min_cluster_size < 2) throw ConfigError("min_cluster_size must be at least 2");
    if (!(consolidation.dedup_jaccard > 0.0 && consolidation.dedup_jaccard <= 1.0))
        throw ConfigError("dedup_jaccard must lie in (0, 1]");
    if (retention < 0) throw ConfigError("retention must be nonnegative");
    if (workers < 1) throw ConfigError("workers must be at least 1");
    if (granularity == Granularity::fixed_span && span_seconds <= 0)
        throw ConfigError("fixed_span windows need a positive span_seconds");
}

json to_json(const RunConfig& c) {
    return json{{"root_label", c.root_label},
                {"granularity", to_string(c.granularity)},
                {"span_seconds", c.span_seconds},
                {"lambda", c.consolidation.lambda},
                {"min_cluster_size", c.consolidation.min_cluster_size},
                {"min_samples", c.consolidation.min_samples},
                {"allow_single_cluster", c.consolidation.allow_single_cluster},
                {"dedup_jaccard", c.consolidation.dedup_jaccard},
                {"retention", c.retention},
                {"view_budget", c.view_budget}};
}

RunConfig run_config_from_json(const json& j) {
    RunConfig c;
    try {
        c.root_label = j.at("root_label").get<std::string>();
        c.granularity = parse_granularity(j.at("granularity").get<std::string>());
        c.span_seconds = j.at("span_seconds").get<Instant>();
        c.consolidation.lambda = j.at("lambda").get<double>();
        c.consolidation.min_cluster_size = j.at("min_cluster_size").get<std::size_t>();
        c.consolidation.min_samples = j.at("min_samples").get<std::size_t>();
        c.consolidation.allow_single_cluster = j.at("allow_single_cluster").get<bool>();
        c.consolidation.dedup_jaccard = j.at("dedup_jaccard").get<double>();
        c.retention = j.at("retention").get<int>();
        c.view_budget = j.at("view_budget").get<std::size_t>();
    } catch (const json::exception& e) {
        throw ParseError(std::string("malformed run config: ") + e.what());
    }
    return c;
}

json to_json(const WindowCounters& c) {
    json drafts = json::object();
    for (auto k : kAllActionKinds) drafts[std::string(to_string(k))] = c.drafts[static_cast<std::size_t>(k)];
    return json{{"window", c.window},
                {"posts", c.posts},
                {"drafts", std::move(drafts)},
                {"invalid", c.invalid},
                {"backlogged", c.backlogged},
                {"backlog_size", c.backlog_size},
                {"candidates", c.candidates},
                {"refined", c.refined},
                {"finals", c.finals},
                {"new_nodes", c.new_nodes},
                {"committed", c.committed},
                {"evicted", c.evicted},
                {"usage", to_json(c.usage)}};
}

fs::path RunPaths::snapshot(int window) const { return snapshots() / fmt::format("window_{:04d}.json", window); }

// ---------------------------------------------------------------------------
// Seeding and immediate execution

Taxonomy seed_taxonomy(const std::string& root_label, ActionModel& model) {
    auto tax = Taxonomy::init(root_label);
    auto topics = model.seed_taxonomy(root_label);
    if (topics.size() > kMaxSeedTopics) topics.resize(kMaxSeedTopics);
    for (auto& t : topics) {
        std::string topic_id;
        try {
            topic_id = tax.add_child(tax.root_id(), t.label, t.cmb, 0);
        } catch (const TaxonomyError& e) {
            spdlog::warn("seed topic '{}' dropped: {}", t.label, e.what());
            continue;
        }
        if (t.children.size() > kMaxSeedSubtopics) t.children.resize(kMaxSeedSubtopics);
        for (auto& s : t.children) {
            try {
                tax.add_child(topic_id, s.label, s.cmb, 0);
            } catch (const TaxonomyError& e) {
                spdlog::warn("seed subtopic '{}' dropped: {}", s.label, e.what());
            }
        }
    }
    return tax;
}

std::optional<GroundingRecord> execute_immediate(const DraftAction& action, Taxonomy& tax, int window) {
    try {
        if (route(action) != Route::immediate)
            throw ActionError(ActionError::Code::not_structural, "only set_node and skip_post execute immediately");
        validate_draft(action, tax);
        GroundingRecord r{action.post_id,
                          action.kind == ActionKind::skip_post ? std::string(kSkipNode) : action.target_node, window,
                          action.id, std::string(to_string(action.kind))};
        if (!tax.ground(r)) return std::nullopt;
        return r;
    } catch (const Error& e) {
        spdlog::warn("dropping {} for post {}: {}", to_string(action.kind), action.post_id, e.what());
        return std::nullopt;
    }
}

// ---------------------------------------------------------------------------
// Run directory I/O

namespace {

const char* const kLogs[] = {"decisions.jsonl", "grounding.jsonl", "windows.jsonl", "clusters.csv"};

void write_atomic(const fs::path& path, const std::string& bytes) {
    const auto tmp = fs::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw CorpusError("cannot write " + tmp.string());
        out << bytes;
        if (!out.flush()) throw CorpusError("cannot write " + tmp.string());
    }
    fs::rename(tmp, path);
}

void append(const fs::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::app);
    if (!out) throw CorpusError("cannot append to " + path.string());
    out << bytes;
}

std::string posts_jsonl(const std::vector<Post>& posts) {
    std::ostringstream out;
    write_posts(out, posts);
    return out.str();
}

json usage_json(const EngineState& s) {
    json windows = json::array();
    for (const auto& [w, u] : s.window_usage) windows.push_back(json{{"window", w}, {"usage", to_json(u)}});
    return json{{"total", to_json(s.usage)}, {"windows", std::move(windows)}};
}

struct WindowPlan {
    std::size_t count = 0;
    Instant first_start = 0;
};

json checkpoint_json(const EngineState& s, const RunConfig& config, const WindowPlan& plan, const RunPaths& paths) {
    json logs = json::object();
    for (const auto* name : kLogs) {
        const auto p = paths.root / name;
        logs[name] = fs::exists(p) ? fs::file_size(p) : std::uintmax_t{0};
    }
    json usage = json::array();
    for (const auto& [w, u] : s.window_usage) usage.push_back(json{{"window", w}, {"usage", to_json(u)}});
    std::vector<Post> posts;
    for (const auto& [id, p] : s.posts) posts.push_back(p);
    return json{{"config", to_json(config)},
                {"next_window", s.next_window},
                {"window_count", plan.count},
                {"first_window_start", plan.first_start},
                {"taxonomy", taxonomy_to_json(s.taxonomy)},
                {"backlog", to_json(s.backlog)},
                {"tombstones", s.tombstones},
                {"embeddings", to_json(s.embeddings)},
                {"posts", posts_jsonl(posts)},
                {"usage", to_json(s.usage)},
                {"window_usage", std::move(usage)},
                {"logs", std::move(logs)}};
}

class Runner {
public:
    Runner(const RunConfig& config, const Providers& providers, std::optional<RunPaths> paths)
        : config_(config), providers_(providers), paths_(std::move(paths)) {
        config_.validate();
        if (!providers_.model || !providers_.ledger) throw ConfigError("an action model is required");
    }

    EngineState state;
    RunResult result;
    UsageTotals last_usage;
    WindowPlan plan;

    void checkpoint() {
        if (!paths_) return;
        write_atomic(paths_->usage(), usage_json(state).dump(2) + "\n");
        write_atomic(paths_->checkpoint(), checkpoint_json(state, config_, plan, *paths_).dump() + "\n");
    }

    void emit_snapshot(int window) {
        auto snap = snapshot(state.taxonomy);
        if (paths_) write_atomic(paths_->snapshot(window), snap);
        result.snapshots.push_back(std::move(snap));
    }

    UsageTotals take_usage() {
        const auto now = providers_.ledger->totals();
        const auto delta = now - last_usage;
        last_usage = now;
        return delta;
    }

    void process(const WindowSlice& slice);

    const RunConfig& config() const { return config_; }

private:
    RunConfig config_;
    const Providers& providers_;
    std::optional<RunPaths> paths_;
};

void Runner::process(const WindowSlice& slice) {
    const int w = slice.window.index;
    WindowCounters counters;
    counters.window = w;
    counters.posts = slice.posts.size();
    WindowDecision decision;
    decision.window = w;
    auto& tax = state.taxonomy;
    const auto grounding_before = tax.grounding().size();

    // Structure is frozen until the boundary, so one view serves the whole window.
    const auto view = render_view(tax, config_.view_budget);
    std::vector<DraftAction> drafts(slice.posts.size());
    detail::parallel_for(slice.posts.size(), config_.workers,
                         [&](std::size_t i) { drafts[i] = providers_.model->propose(slice.posts[i], view); });

    for (std::size_t i = 0; i < drafts.size(); ++i) {
        const auto& post = slice.posts[i];
        auto d = std::move(drafts[i]);
        d.id = draft_id_for(post.id);
        d.post_id = post.id;
        d.timestamp = post.timestamp;
        d = normalize_draft(std::move(d), tax);
        try {
            validate_draft(d, tax);
        } catch (const ActionError& e) {
            spdlog::warn("window {}: {} for post {} is invalid: {}", w, to_string(d.kind), post.id, e.what());
            d = as_skip(d, e.what());
            ++counters.invalid;
        }
        ++counters.drafts[static_cast<std::size_t>(d.kind)];
        if (route(d) == Route::immediate) {
            if (auto r = execute_immediate(d, tax, w)) decision.immediate.push_back(*r);
            continue;
        }
        if (state.tombstones.count(d.id) || state.backlog.find(d.id)) {
            spdlog::warn("window {}: draft {} already handled; ignoring the repeat", w, d.id);
            continue;
        }
        state.backlog.add(d);
        state.posts.emplace(post.id, post);
        ++counters.backlogged;
    }

    // Boundary phase.
    const auto buckets = partition_backlog(state.backlog);
    std::vector<DraftAction> to_embed;
    for (const auto& b : buckets)
        if (b.members.size() >= config_.consolidation.min_cluster_size)
            to_embed.insert(to_embed.end(), b.members.begin(), b.members.end());
    if (!to_embed.empty()) {
        if (!providers_.embedder) throw ConfigError("consolidation needs an embedding provider");
        state.embeddings.ensure(to_embed, tax, *providers_.embedder);
    }
    const auto candidates =
        consolidate_all(buckets, config_.consolidation, state.embeddings, fmt::format("w{:04d}/", w));
    for (const auto& c : candidates) decision.candidate_ids.push_back(c.id);
    if (paths_ && config_.dump_clusters) {
        std::ostringstream csv;
        write_cluster_csv(csv, w, candidates, !fs::exists(paths_->clusters()) || fs::file_size(paths_->clusters()) == 0);
        append(paths_->clusters(), csv.str());
    }

    auto refined = refine_clusters(candidates, tax, state.backlog, state.embeddings, state.posts, *providers_.model,
                                   config_.workers);
    decision.refined = std::move(refined.refined);
    decision.dropped_refined = std::move(refined.dropped);
    decision.deferred_cluster_ids = std::move(refined.deferred);
    auto arbitration = arbitrate_window(decision.refined, tax, *providers_.model);
    decision.finals = std::move(arbitration.finals);
    decision.rejected_finals = std::move(arbitration.rejected);
    apply_final_actions(tax, state.backlog, state.tombstones, config_.retention, decision);
    tax.check_invariants();

    state.embeddings.retain(state.backlog);
    std::set<std::string> live_posts;
    for (const auto& e : state.backlog.entries()) live_posts.insert(e.action.post_id);
    std::erase_if(state.posts, [&](const auto& kv) { return !live_posts.count(kv.first); });

    counters.backlog_size = state.backlog.size();
    counters.candidates = candidates.size();
    counters.refined = decision.refined.size();
    counters.finals = decision.finals.size();
    counters.new_nodes = decision.created_nodes.size();
    counters.committed = decision.committed_draft_ids.size();
    counters.evicted = decision.evicted_draft_ids.size();
    counters.usage = take_usage();
    state.usage += counters.usage;
    state.window_usage.emplace_back(w, counters.usage);
    state.next_window = w + 1;

    emit_snapshot(w);
    if (paths_) {
        append(paths_->decisions(), to_json(decision).dump() + "\n");
        std::string lines;
        for (auto i = grounding_before; i < tax.grounding().size(); ++i) lines += to_json(tax.grounding()[i]).dump() + "\n";
        append(paths_->grounding(), lines);
        append(paths_->windows(), to_json(counters).dump() + "\n");
    }
    checkpoint();
    result.decisions.push_back(std::move(decision));
    result.windows.push_back(std::move(counters));
}

RunResult drive(Runner& runner, const std::vector<WindowSlice>& slices) {
    for (const auto& slice : slices) {
        if (slice.window.index < runner.state.next_window) continue;
        runner.process(slice);
        if (runner.config().halt_after && slice.window.index == *runner.config().halt_after) {
            runner.result.halted = true;
            break;
        }
    }
    runner.result.taxonomy = runner.state.taxonomy;
    runner.result.backlog = runner.state.backlog;
    runner.result.usage = runner.state.usage;
    return std::move(runner.result);
}

std::vector<WindowSlice> windows_of(const std::vector<Post>& corpus, const RunConfig& config) {
    return partition_windows(corpus, config.granularity, config.span_seconds);
}

}  // namespace

// ---------------------------------------------------------------------------
// Entry points

RunResult run(const std::vector<Post>& corpus, const RunConfig& config, const Providers& providers,
              const std::optional<fs::path>& run_dir) {
    std::optional<RunPaths> paths;
    if (run_dir) {
        paths = RunPaths{*run_dir};
        fs::remove_all(paths->snapshots());
        fs::create_directories(paths->snapshots());
        for (const auto* name : kLogs) fs::remove(paths->root / name);
        write_atomic(paths->corpus(), posts_jsonl(corpus));
    }
    Runner runner(config, providers, paths);
    const auto slices = windows_of(corpus, config);
    runner.plan = WindowPlan{slices.size(), slices.empty() ? 0 : slices.front().window.start};

    runner.state.taxonomy = seed_taxonomy(config.root_label, *providers.model);
    const auto seed_usage = runner.take_usage();
    runner.state.usage += seed_usage;
    runner.state.window_usage.emplace_back(0, seed_usage);
    runner.emit_snapshot(0);
    runner.checkpoint();
    return drive(runner, slices);
}

RunResult resume(const fs::path& run_dir, const std::vector<Post>& corpus, const RunConfig& config,
                 const Providers& providers) {
    RunPaths paths{run_dir};
    if (!fs::exists(paths.checkpoint())) throw CorpusError("no checkpoint in " + run_dir.string());
    json cp;
    try {
        std::ifstream in(paths.checkpoint());
        cp = json::parse(in);
    } catch (const json::exception& e) {
        throw CorpusError(std::string("unreadable checkpoint: ") + e.what());
    }

    const auto saved = run_config_from_json(cp.at("config"));
    const auto wanted = to_json(config);
    const auto had = to_json(saved);
    for (const auto& [key, value] : had.items())
        if (wanted.at(key) != value)
            throw ConfigError(fmt::format("cannot resume: {} was {} and is now {}", key, value.dump(), wanted.at(key).dump()));

    Runner runner(config, providers, paths);
    const auto slices = windows_of(corpus, config);
    runner.plan = WindowPlan{slices.size(), slices.empty() ? 0 : slices.front().window.start};
    if (runner.plan.count != cp.at("window_count").get<std::size_t>() ||
        runner.plan.first_start != cp.at("first_window_start").get<Instant>())
        throw CorpusError("cannot resume: the corpus windows differ from the checkpointed run");

    try {
        auto& s = runner.state;
        s.taxonomy = taxonomy_from_json(cp.at("taxonomy"));
        s.backlog = backlog_from_json(cp.at("backlog"));
        s.tombstones = cp.at("tombstones").get<std::set<std::string>>();
        s.embeddings = embedding_cache_from_json(cp.at("embeddings"));
        std::istringstream posts(cp.at("posts").get<std::string>());
        for (auto& p : parse_posts(posts)) s.posts.emplace(p.id, std::move(p));
        s.next_window = cp.at("next_window").get<int>();
        s.usage = usage_from_json(cp.at("usage"));
        for (const auto& u : cp.at("window_usage"))
            s.window_usage.emplace_back(u.at("window").get<int>(), usage_from_json(u.at("usage")));
        // Drop anything written after the checkpoint by a window that never finished.
        for (const auto& [name, size] : cp.at("logs").items()) {
            const auto p = run_dir / name;
            const auto want = size.get<std::uintmax_t>();
            if (fs::exists(p)) {
                fs::resize_file(p, want);
            } else if (want != 0) {
                throw CorpusError("cannot resume: " + p.string() + " is missing");
            }
        }
    } catch (const json::exception& e) {
        throw CorpusError(std::string("malformed checkpoint: ") + e.what());
    }
    runner.last_usage = providers.ledger->totals();
    return drive(runner, slices);
}

std::vector<std::string> replay_run(const fs::path& run_dir) {
    RunPaths paths{run_dir};
    std::ifstream seed(paths.snapshot(0), std::ios::binary);
    if (!seed) throw CorpusError("missing seed snapshot in " + run_dir.string());
    std::stringstream bytes;
    bytes << seed.rdbuf();
    auto tax = restore(bytes.str());

    std::ifstream decisions(paths.decisions());
    if (!decisions) throw CorpusError("missing decisions.jsonl in " + run_dir.string());
    std::vector<std::string> out;
    std::string line;
    while (std::getline(decisions, line)) {
        if (line.empty()) continue;
        replay_decision(tax, window_decision_from_json(json::parse(line)));
        out.push_back(snapshot(tax));
    }
    return out;
}

}  // namespace evotaxo
