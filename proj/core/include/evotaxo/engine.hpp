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
#include <filesystem>
#include <iterator>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "evotaxo/actions.hpp"
#include "evotaxo/consolidation.hpp"
#include "evotaxo/corpus.hpp"
#include "evotaxo/providers.hpp"
#include "evotaxo/review.hpp"
#include "evotaxo/taxonomy.hpp"

namespace evotaxo {

struct RunConfig {
    std::string root_label = "Root";
    Granularity granularity = Granularity::month;
    Instant span_seconds = 0;  // fixed_span only
    ConsolidationParams consolidation;
    int retention = 3;
    std::size_t view_budget = kDefaultViewBudget;
    std::size_t workers = 8;
    bool dump_clusters = false;
    /// Stops after this window as if the process died there; the checkpoint stays.
    std::optional<int> halt_after;

    /// Throws ConfigError.
    void validate() const;
};

/// Behaviour-relevant fields only; workers, dump_clusters and halt_after are omitted.
nlohmann::json to_json(const RunConfig& c);
RunConfig run_config_from_json(const nlohmann::json& j);

struct WindowCounters {
    int window = 0;
    std::size_t posts = 0;
    std::array<std::size_t, std::size(kAllActionKinds)> drafts{};  // indexed by ActionKind
    std::size_t invalid = 0;  // drafts that failed validation and became skips
    std::size_t backlogged = 0;
    std::size_t backlog_size = 0;  // after the boundary phase
    std::size_t candidates = 0;
    std::size_t refined = 0;
    std::size_t finals = 0;
    std::size_t new_nodes = 0;
    std::size_t committed = 0;
    std::size_t evicted = 0;
    UsageTotals usage;

    friend bool operator==(const WindowCounters&, const WindowCounters&) = default;
};

nlohmann::json to_json(const WindowCounters& c);

struct RunResult {
    Taxonomy taxonomy = Taxonomy::init("Root");
    std::vector<std::string> snapshots;  // seed snapshot first when the run started fresh
    std::vector<WindowDecision> decisions;
    std::vector<WindowCounters> windows;
    UsageTotals usage;
    Backlog backlog;
    bool halted = false;
};

/// Everything needed to continue after the last completed window.
struct EngineState {
    Taxonomy taxonomy = Taxonomy::init("Root");
    Backlog backlog;
    std::set<std::string> tombstones;
    EmbeddingCache embeddings;
    std::map<std::string, Post> posts;  // source posts of backlogged drafts
    int next_window = 1;
    UsageTotals usage;
    std::vector<std::pair<int, UsageTotals>> window_usage;  // window 0 holds seeding and ingestion
};


/// Run directory layout.
struct RunPaths {
    std::filesystem::path root;

    std::filesystem::path config() const { return root / "config.toml"; }
    std::filesystem::path snapshots() const { return root / "snapshots"; }
    std::filesystem::path snapshot(int window) const;
    std::filesystem::path decisions() const { return root / "decisions.jsonl"; }
    std::filesystem::path grounding() const { return root / "grounding.jsonl"; }
    std::filesystem::path windows() const { return root / "windows.jsonl"; }
    std::filesystem::path clusters() const { return root / "clusters.csv"; }
    std::filesystem::path usage() const { return root / "usage.json"; }
    std::filesystem::path checkpoint() const { return root / "checkpoint.json"; }
    std::filesystem::path corpus() const { return root / "corpus.jsonl"; }
};

/// Seeds a fresh taxonomy from the model. Seed nodes carry created_window 0.
Taxonomy seed_taxonomy(const std::string& root_label, ActionModel& model);

/// set_node grounds the post to its target; skip_post grounds it to kSkipNode.
/// Invalid actions are logged and dropped. Returns the record when one was added.
std::optional<GroundingRecord> execute_immediate(const DraftAction& action, Taxonomy& tax, int window);

/// Runs every window of `corpus` from a freshly seeded taxonomy. When `run_dir`
/// is given, snapshots, logs and a checkpoint are written after each window.
/// A provider outage saves the last consistent checkpoint and rethrows.
RunResult run(const std::vector<Post>& corpus, const RunConfig& config, const Providers& providers,
              const std::optional<std::filesystem::path>& run_dir = std::nullopt);

/// Continues a run from `run_dir/checkpoint.json`. Throws ConfigError when the
/// checkpoint was written under different behaviour-relevant settings.
RunResult resume(const std::filesystem::path& run_dir, const std::vector<Post>& corpus, const RunConfig& config,
                 const Providers& providers);

/// Snapshot after each window, rebuilt from the seed snapshot and decisions.jsonl.
std::vector<std::string> replay_run(const std::filesystem::path& run_dir);

}  // namespace evotaxo
