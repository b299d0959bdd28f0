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

#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "evotaxo/actions.hpp"
#include "evotaxo/consolidation.hpp"
#include "evotaxo/providers.hpp"

namespace evotaxo {

inline constexpr std::size_t kMaxRepresentatives = 8;

/// Id and reason of an action that did not make it through a stage.
struct DroppedAction {
    std::string id;
    std::string reason;

    friend bool operator==(const DroppedAction&, const DroppedAction&) = default;
};

/// Grounding done by set_node / skip_post during the window, kept so a
/// decision can be replayed from the start-of-window snapshot.
using ImmediateRecord = GroundingRecord;

struct WindowDecision {
    int window = 0;
    std::vector<std::string> candidate_ids;
    std::vector<RefinedAction> refined;
    std::vector<DroppedAction> dropped_refined;   // failed validation after refinement
    std::vector<FinalAction> finals;              // after enforcement, in execution order
    std::vector<DroppedAction> rejected_finals;   // removed by arbitration enforcement
    std::vector<DroppedAction> skipped;           // failed at execution time
    std::vector<std::string> deferred_cluster_ids;
    std::vector<std::string> committed_draft_ids;  // sorted
    std::vector<std::string> retained_draft_ids;   // sorted
    std::vector<std::string> evicted_draft_ids;    // sorted
    std::vector<std::string> created_nodes;
    std::vector<ImmediateRecord> immediate;

    friend bool operator==(const WindowDecision&, const WindowDecision&) = default;
};

nlohmann::json to_json(const WindowDecision& d);
WindowDecision window_decision_from_json(const nlohmann::json& j);

/// Medoid first, then members by semantic distance to the medoid (ties by id),
/// at most kMaxRepresentatives posts.
ClusterEvidence build_evidence(const CandidateCluster& cluster, const Backlog& backlog, const EmbeddingCache& cache,
                               const std::map<std::string, Post>& posts);

struct RefineResult {
    std::vector<RefinedAction> refined;  // cluster-id order
    std::vector<std::string> deferred;   // sorted
    std::vector<DroppedAction> dropped;
};

/// Refiner calls run on up to `workers` threads; results are merged in
/// cluster-id order. Support outside the cluster is discarded, support_posts
/// are rebuilt from the backlog, and actions failing validation are dropped.
/// A provider failure defers the cluster.
RefineResult refine_clusters(const std::vector<CandidateCluster>& clusters, const Taxonomy& tax,
                             const Backlog& backlog, const EmbeddingCache& cache,
                             const std::map<std::string, Post>& posts, ActionModel& model, std::size_t workers = 8);

struct ArbitrationResult {
    std::vector<FinalAction> finals;  // execution order
    std::vector<DroppedAction> rejected;
};

/// Makes an arbiter's output executable as one batch: unknown ids and invalid
/// actions are rejected, duplicate creations merge their support, an add_path
/// colliding with an accepted add_child is rejected, and only the first patch
/// per node survives. Result is sorted into execution order.
ArbitrationResult enforce_batch(std::vector<FinalAction> proposed, const std::vector<RefinedAction>& refined,
                                const Taxonomy& tax);

/// Calls the arbiter (a provider failure yields no finals) and enforces the batch.
ArbitrationResult arbitrate_window(const std::vector<RefinedAction>& refined, const Taxonomy& tax,
                                   ActionModel& model);

/// add_path, then add_child, then update_cmb; within a kind by parent id, then label.
void sort_for_execution(std::vector<FinalAction>& finals, const Taxonomy& tax);

struct ExecutionResult {
    std::vector<std::string> committed;  // draft ids, sorted
    std::vector<std::string> created_nodes;
    std::vector<DroppedAction> skipped;
};

/// Executes finals in the given order. Each final applies fully or not at all;
/// its supporting posts are grounded to the implied node. Drafts already in
/// `tombstones` are never committed again.
ExecutionResult execute_finals(Taxonomy& tax, const std::vector<FinalAction>& finals, int window,
                               const std::set<std::string>& tombstones);

/// Executes finals, removes committed drafts from the backlog, tombstones
/// them, then ages the backlog and evicts entries past `retention`.
void apply_final_actions(Taxonomy& tax, Backlog& backlog, std::set<std::string>& tombstones, int retention,
                         WindowDecision& decision);

/// Re-applies a recorded decision (immediate groundings, then finals) to the
/// start-of-window taxonomy.
void replay_decision(Taxonomy& tax, const WindowDecision& decision);

}  // namespace evotaxo
