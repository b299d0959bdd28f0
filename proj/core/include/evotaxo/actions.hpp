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

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "evotaxo/corpus.hpp"
#include "evotaxo/taxonomy.hpp"

namespace evotaxo {

enum class ActionKind { set_node, add_child, add_path, update_cmb, skip_post };

inline constexpr ActionKind kAllActionKinds[] = {ActionKind::set_node, ActionKind::add_child, ActionKind::add_path,
                                                 ActionKind::update_cmb, ActionKind::skip_post};

std::string_view to_string(ActionKind kind);
/// Throws ParseError on unknown kinds.
ActionKind parse_action_kind(std::string_view s);
bool is_structural(ActionKind kind);

struct ChildPayload {
    std::string label;
    ConceptMemoryBank cmb;
    friend bool operator==(const ChildPayload&, const ChildPayload&) = default;
};

struct PathPayload {
    std::string topic_label;
    ConceptMemoryBank topic_cmb;
    std::string subtopic_label;
    ConceptMemoryBank subtopic_cmb;
    friend bool operator==(const PathPayload&, const PathPayload&) = default;
};

/// monostate for set_node / skip_post.
using Payload = std::variant<std::monostate, ChildPayload, PathPayload, CmbPatch>;

struct DraftAction {
    std::string id;
    ActionKind kind = ActionKind::skip_post;
    std::string post_id;
    Instant timestamp = 0;
    std::string target_node;  // empty when absent
    Payload payload;
    std::string rationale;

    friend bool operator==(const DraftAction&, const DraftAction&) = default;
};

/// Draft ids are derived from the source post so re-proposing a post is idempotent.
std::string draft_id_for(std::string_view post_id);

struct RefinedAction {
    std::string id;
    ActionKind kind = ActionKind::add_child;
    std::string target_node;
    Payload payload;
    std::string rationale;
    std::vector<std::string> support;        // draft ids, sorted
    std::vector<std::string> support_posts;  // post ids aligned with `support`
    std::string source_cluster;

    friend bool operator==(const RefinedAction&, const RefinedAction&) = default;
};

struct FinalAction : RefinedAction {
    std::string arbitration_note;

    friend bool operator==(const FinalAction&, const FinalAction&) = default;
};

class ActionError : public Error {
public:
    enum class Code { unknown_target, bad_payload, depth_violation, not_assignable, label_conflict, not_structural };

    ActionError(Code code, const std::string& what) : Error(what), code_(code) {}
    Code code() const noexcept { return code_; }

private:
    Code code_;
};

std::string_view to_string(ActionError::Code code);

/// Throws ActionError with a code specific to the failed check.
void validate_draft(const DraftAction& action, const Taxonomy& tax);
/// Same checks for refined / final actions, which are always structural.
void validate_refined(const RefinedAction& action, const Taxonomy& tax);

/// Rewrites structural drafts that would only restate existing structure:
/// add_child / add_path naming an existing node become set_node on that node,
/// and add_path under an existing topic becomes add_child under it.
DraftAction normalize_draft(DraftAction action, const Taxonomy& tax);

/// A skip_post for the same post, used when a draft fails validation.
DraftAction as_skip(const DraftAction& action, std::string reason);

enum class Route { immediate, structural };
Route route(const DraftAction& action);

/// `kind | Root>...>target | labels | rationale`. Separator characters are
/// backslash-escaped inside fields, so distinct inputs never collide.
std::string canonical_text(const DraftAction& action, const Taxonomy& tax);

/// Label under which a draft or refined action would create or edit a node,
/// lower-cased. add_path yields "topic>subtopic"; update_cmb yields the patch.
std::string payload_key(ActionKind kind, const Payload& payload);

/// Ordered buffer of structural drafts awaiting consolidation.
class Backlog {
public:
    struct Entry {
        DraftAction action;
        int age_windows = 0;
        friend bool operator==(const Entry&, const Entry&) = default;
    };

    /// Throws ActionError for non-structural drafts and CorpusError for duplicate ids.
    void add(DraftAction action, int age_windows = 0);
    /// Number of entries removed.
    std::size_t remove(const std::set<std::string>& ids);
    /// Ages every entry by one window and evicts entries older than `retention`.
    std::vector<std::string> age_and_evict(int retention);

    const std::vector<Entry>& entries() const { return entries_; }
    const DraftAction* find(std::string_view id) const;
    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }

    friend bool operator==(const Backlog&, const Backlog&) = default;

private:
    std::vector<Entry> entries_;
};

// Wire forms. The provider boundary uses `{kind, target_node?, payload?, rationale}`;
// the full forms add ids and provenance for logs and checkpoints.
nlohmann::json payload_to_json(ActionKind kind, const Payload& payload);
Payload payload_from_json(ActionKind kind, const nlohmann::json& j);

nlohmann::json to_json(const DraftAction& action);
DraftAction draft_from_json(const nlohmann::json& j);
/// Builds a draft for `post` from a provider wire object. Throws ParseError.
DraftAction draft_from_wire(const nlohmann::json& j, const Post& post);

nlohmann::json to_json(const RefinedAction& action);
RefinedAction refined_from_json(const nlohmann::json& j);
nlohmann::json to_json(const FinalAction& action);
FinalAction final_from_json(const nlohmann::json& j);

nlohmann::json to_json(const Backlog& backlog);
Backlog backlog_from_json(const nlohmann::json& j);

}  // namespace evotaxo
