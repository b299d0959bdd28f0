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
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "evotaxo/errors.hpp"

namespace evotaxo {

enum class Level { root, topic, subtopic };

std::string_view to_string(Level level);
Level parse_level(std::string_view s);

/// Definition plus inclusion / exclusion cues. Cue lists behave as ordered
/// sets: insertion order is kept and duplicates are dropped.
struct ConceptMemoryBank {
    std::string definition;
    std::vector<std::string> inclusion;
    std::vector<std::string> exclusion;

    friend bool operator==(const ConceptMemoryBank&, const ConceptMemoryBank&) = default;
};

struct CmbPatch {
    std::optional<std::string> definition;
    std::vector<std::string> add_inclusion;
    std::vector<std::string> add_exclusion;
    std::vector<std::string> remove_cues;

    bool empty() const {
        return !definition && add_inclusion.empty() && add_exclusion.empty() && remove_cues.empty();
    }
    friend bool operator==(const CmbPatch&, const CmbPatch&) = default;
};

struct TaxonomyNode {
    std::string id;
    std::string label;
    Level level = Level::topic;
    std::optional<std::string> parent;
    std::optional<ConceptMemoryBank> cmb;
    int created_window = 0;

    friend bool operator==(const TaxonomyNode&, const TaxonomyNode&) = default;
};

/// Node id used for skip_post audit records; never a real node.
inline constexpr std::string_view kSkipNode = "\xE2\x88\x85";  // U+2205

struct GroundingRecord {
    std::string post_id;
    std::string node_id;
    int window_index = 0;
    std::string action_id;
    std::string action_type;

    friend bool operator==(const GroundingRecord&, const GroundingRecord&) = default;
};

struct TaxonomyStats {
    std::size_t node_count = 0;  // excludes the root
    std::size_t leaf_count = 0;
    std::size_t max_depth = 0;
    std::size_t topic_count = 0;
    std::size_t subtopic_count = 0;

    friend bool operator==(const TaxonomyStats&, const TaxonomyStats&) = default;
};

class TaxonomyError : public Error {
public:
    enum class Code { invalid_argument, unknown_node, depth_violation, label_conflict, invalid_cmb, malformed };

    TaxonomyError(Code code, const std::string& what) : Error(what), code_(code) {}
    Code code() const noexcept { return code_; }

private:
    Code code_;
};

/// Rooted tree of depth at most two below the root (topics, subtopics).
/// Every successful mutation bumps `revision()` by exactly one; the grounding
/// log only grows.
class Taxonomy {
public:
    static Taxonomy init(std::string root_label);

    const std::string& root_id() const { return root_id_; }
    const TaxonomyNode& root() const { return nodes_.at(root_id_); }
    std::uint64_t revision() const { return revision_; }

    const std::map<std::string, TaxonomyNode>& nodes() const { return nodes_; }
    const TaxonomyNode* find(std::string_view id) const;
    const TaxonomyNode& node(std::string_view id) const;

    /// Children sorted by id.
    std::vector<std::string> children(std::string_view id) const;
    /// Case-insensitive sibling lookup.
    const TaxonomyNode* find_child(std::string_view parent_id, std::string_view label) const;
    const TaxonomyNode* find_topic(std::string_view label) const { return find_child(root_id_, label); }

    std::string add_child(std::string_view parent_id, std::string label, ConceptMemoryBank cmb,
                          int created_window = 0);

    struct PathResult {
        std::string topic_id;
        std::string subtopic_id;
        int created = 0;
    };
    /// Reuses an existing topic with the same label (case-insensitive); the
    /// supplied topic CMB is ignored in that case.
    PathResult add_path(std::string topic_label, ConceptMemoryBank topic_cmb, std::string subtopic_label,
                        ConceptMemoryBank subtopic_cmb, int created_window = 0);

    void update_cmb(std::string_view node_id, const CmbPatch& patch);

    /// Returns false when an identical record is already present.
    bool ground(GroundingRecord record);
    const std::vector<GroundingRecord>& grounding() const { return grounding_; }
    /// Grounding sorted by (window, post_id, action_id).
    std::vector<GroundingRecord> sorted_grounding() const;

    std::vector<std::string> leaves() const;
    TaxonomyStats stats() const;

    /// Labels from the root down to `id`, inclusive.
    std::vector<std::string> label_path(std::string_view id) const;
    /// Topic ancestor of a topic or subtopic (the node itself for topics).
    std::string topic_of(std::string_view id) const;

    /// Throws TaxonomyError describing the first violated structural invariant.
    void check_invariants() const;

    friend bool operator==(const Taxonomy& a, const Taxonomy& b);

private:
    Taxonomy() = default;

    std::string next_id();
    void validate_cmb(const ConceptMemoryBank& cmb) const;

    std::map<std::string, TaxonomyNode> nodes_;
    std::map<std::string, std::vector<std::string>> children_;
    std::string root_id_;
    std::vector<GroundingRecord> grounding_;
    std::map<std::pair<std::string, std::string>, std::size_t> grounding_index_;
    std::uint64_t revision_ = 0;
    std::uint64_t next_serial_ = 0;

    friend Taxonomy restore(std::string_view);
    friend Taxonomy taxonomy_from_json(const nlohmann::json&);
};

/// Normalises a cue list into an ordered set (trimmed, empties and duplicates dropped).
std::vector<std::string> dedup_cues(const std::vector<std::string>& cues);

/// Canonical JSON form: sorted keys, nodes sorted by id, grounding sorted by
/// (window, post_id, action_id). Byte-identical for equal trees.
std::string snapshot(const Taxonomy& tax);
Taxonomy restore(std::string_view bytes);

nlohmann::json taxonomy_to_json(const Taxonomy& tax);
Taxonomy taxonomy_from_json(const nlohmann::json& j);

nlohmann::json to_json(const ConceptMemoryBank& cmb);
ConceptMemoryBank cmb_from_json(const nlohmann::json& j);
nlohmann::json to_json(const CmbPatch& patch);
CmbPatch cmb_patch_from_json(const nlohmann::json& j);
nlohmann::json to_json(const GroundingRecord& record);
GroundingRecord grounding_from_json(const nlohmann::json& j);

}  // namespace evotaxo
