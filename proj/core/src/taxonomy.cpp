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

#include "evotaxo/taxonomy.hpp"

#include <algorithm>
#include <cstdio>
#include <set>
#include <tuple>

#include <nlohmann/json.hpp>

#include "evotaxo/text.hpp"

namespace evotaxo {

using nlohmann::json;
using Code = TaxonomyError::Code;

std::string_view to_string(Level level) {
    switch (level) {
        case Level::root: return "root";
        case Level::topic: return "topic";
        case Level::subtopic: return "subtopic";
    }
    return "topic";
}

Level parse_level(std::string_view s) {
    if (s == "root") return Level::root;
    if (s == "topic") return Level::topic;
    if (s == "subtopic") return Level::subtopic;
    throw TaxonomyError(Code::malformed, "unknown level '" + std::string(s) + "'");
}

std::vector<std::string> dedup_cues(const std::vector<std::string>& cues) {
    std::vector<std::string> out;
    for (const auto& raw : cues) {
        auto cue = text::trim(raw);
        if (cue.empty() || std::find(out.begin(), out.end(), cue) != out.end()) continue;
        out.push_back(std::move(cue));
    }
    return out;
}

namespace {

ConceptMemoryBank normalised(ConceptMemoryBank cmb) {
    cmb.definition = text::trim(cmb.definition);
    cmb.inclusion = dedup_cues(cmb.inclusion);
    cmb.exclusion = dedup_cues(cmb.exclusion);
    return cmb;
}

bool contains(const std::vector<std::string>& v, const std::string& s) {
    return std::find(v.begin(), v.end(), s) != v.end();
}

}  // namespace

Taxonomy Taxonomy::init(std::string root_label) {
    root_label = text::trim(root_label);
    if (root_label.empty()) throw TaxonomyError(Code::invalid_argument, "root label must be nonempty");
    Taxonomy tax;
    tax.root_id_ = tax.next_id();
    tax.nodes_.emplace(tax.root_id_, TaxonomyNode{tax.root_id_, std::move(root_label), Level::root, std::nullopt,
                                                  std::nullopt, 0});
    tax.children_[tax.root_id_];
    return tax;
}

std::string Taxonomy::next_id() {
    char buf[16];
    std::snprintf(buf, sizeof buf, "n%04llu", static_cast<unsigned long long>(next_serial_++));
    return buf;
}

const TaxonomyNode* Taxonomy::find(std::string_view id) const {
    auto it = nodes_.find(std::string(id));
    return it == nodes_.end() ? nullptr : &it->second;
}

const TaxonomyNode& Taxonomy::node(std::string_view id) const {
    if (const auto* n = find(id)) return *n;
    throw TaxonomyError(Code::unknown_node, "unknown node '" + std::string(id) + "'");
}

std::vector<std::string> Taxonomy::children(std::string_view id) const {
    auto it = children_.find(std::string(id));
    if (it == children_.end()) return {};
    return it->second;
}

const TaxonomyNode* Taxonomy::find_child(std::string_view parent_id, std::string_view label) const {
    auto it = children_.find(std::string(parent_id));
    if (it == children_.end()) return nullptr;
    const auto wanted = text::trim(label);
    for (const auto& cid : it->second) {
        const auto& child = nodes_.at(cid);
        if (text::iequals(child.label, wanted)) return &child;
    }
    return nullptr;
}

void Taxonomy::validate_cmb(const ConceptMemoryBank& cmb) const {
    if (cmb.definition.empty()) throw TaxonomyError(Code::invalid_cmb, "concept definition must be nonempty");
    for (const auto& cue : cmb.inclusion)
        if (contains(cmb.exclusion, cue))
            throw TaxonomyError(Code::invalid_cmb, "cue '" + cue + "' is both an inclusion and an exclusion cue");
}

std::string Taxonomy::add_child(std::string_view parent_id, std::string label, ConceptMemoryBank cmb,
                                int created_window) {
    const auto& parent = node(parent_id);
    if (parent.level == Level::subtopic)
        throw TaxonomyError(Code::depth_violation, "cannot add a child under subtopic '" + parent.label + "'");
    label = text::trim(label);
    if (label.empty()) throw TaxonomyError(Code::invalid_argument, "node label must be nonempty");
    if (find_child(parent.id, label))
        throw TaxonomyError(Code::label_conflict, "'" + parent.label + "' already has a child labelled '" + label + "'");
    cmb = normalised(std::move(cmb));
    validate_cmb(cmb);

    const Level level = parent.level == Level::root ? Level::topic : Level::subtopic;
    std::string id = next_id();
    nodes_.emplace(id, TaxonomyNode{id, std::move(label), level, parent.id, std::move(cmb), created_window});
    children_[parent.id].push_back(id);
    children_[id];
    ++revision_;
    return id;
}

Taxonomy::PathResult Taxonomy::add_path(std::string topic_label, ConceptMemoryBank topic_cmb,
                                        std::string subtopic_label, ConceptMemoryBank subtopic_cmb,
                                        int created_window) {
    topic_label = text::trim(topic_label);
    subtopic_label = text::trim(subtopic_label);
    if (topic_label.empty() || subtopic_label.empty())
        throw TaxonomyError(Code::invalid_argument, "add_path needs both a topic and a subtopic label");

    // Validate everything up front so a failure never leaves half a path behind.
    const TaxonomyNode* topic = find_topic(topic_label);
    if (topic && find_child(topic->id, subtopic_label))
        throw TaxonomyError(Code::label_conflict,
                            "'" + topic->label + "' already has a child labelled '" + subtopic_label + "'");
    subtopic_cmb = normalised(std::move(subtopic_cmb));
    validate_cmb(subtopic_cmb);
    if (!topic) {
        topic_cmb = normalised(std::move(topic_cmb));
        validate_cmb(topic_cmb);
    }

    PathResult result;
    if (topic) {
        result.topic_id = topic->id;
    } else {
        result.topic_id = add_child(root_id_, std::move(topic_label), std::move(topic_cmb), created_window);
        ++result.created;
    }
    result.subtopic_id = add_child(result.topic_id, std::move(subtopic_label), std::move(subtopic_cmb), created_window);
    ++result.created;
    return result;
}

void Taxonomy::update_cmb(std::string_view node_id, const CmbPatch& patch) {
    const auto& target = node(node_id);
    if (target.level == Level::root) throw TaxonomyError(Code::invalid_argument, "the root carries no concept memory bank");
    if (patch.empty()) throw TaxonomyError(Code::invalid_cmb, "empty concept memory bank patch");

    ConceptMemoryBank cmb = *target.cmb;
    if (patch.definition) cmb.definition = text::trim(*patch.definition);
    for (const auto& raw : patch.remove_cues) {
        const auto cue = text::trim(raw);
        std::erase(cmb.inclusion, cue);
        std::erase(cmb.exclusion, cue);
    }
    cmb.inclusion.insert(cmb.inclusion.end(), patch.add_inclusion.begin(), patch.add_inclusion.end());
    cmb.exclusion.insert(cmb.exclusion.end(), patch.add_exclusion.begin(), patch.add_exclusion.end());
    cmb = normalised(std::move(cmb));
    validate_cmb(cmb);

    nodes_.at(target.id).cmb = std::move(cmb);
    ++revision_;
}

bool Taxonomy::ground(GroundingRecord record) {
    if (record.node_id != kSkipNode && !find(record.node_id))
        throw TaxonomyError(Code::unknown_node, "cannot ground to unknown node '" + record.node_id + "'");
    if (record.post_id.empty() || record.action_id.empty())
        throw TaxonomyError(Code::invalid_argument, "grounding record needs a post id and an action id");
    auto key = std::make_pair(record.post_id, record.action_id);
    if (auto it = grounding_index_.find(key); it != grounding_index_.end()) {
        if (grounding_[it->second] == record) return false;
        throw TaxonomyError(Code::invalid_argument,
                            "conflicting grounding for post '" + record.post_id + "' and action '" + record.action_id + "'");
    }
    grounding_index_.emplace(std::move(key), grounding_.size());
    grounding_.push_back(std::move(record));
    return true;
}

std::vector<GroundingRecord> Taxonomy::sorted_grounding() const {
    auto out = grounding_;
    std::sort(out.begin(), out.end(), [](const GroundingRecord& a, const GroundingRecord& b) {
        return std::tie(a.window_index, a.post_id, a.action_id) < std::tie(b.window_index, b.post_id, b.action_id);
    });
    return out;
}

std::vector<std::string> Taxonomy::leaves() const {
    std::vector<std::string> out;
    for (const auto& [id, n] : nodes_)
        if (n.level != Level::root && children_.at(id).empty()) out.push_back(id);
    return out;
}

TaxonomyStats Taxonomy::stats() const {
    TaxonomyStats s;
    for (const auto& [id, n] : nodes_) {
        if (n.level == Level::topic) {
            ++s.topic_count;
            s.max_depth = std::max<std::size_t>(s.max_depth, 1);
        } else if (n.level == Level::subtopic) {
            ++s.subtopic_count;
            s.max_depth = 2;
        }
    }
    s.node_count = s.topic_count + s.subtopic_count;
    s.leaf_count = leaves().size();
    return s;
}

std::vector<std::string> Taxonomy::label_path(std::string_view id) const {
    std::vector<std::string> path;
    const TaxonomyNode* cur = &node(id);
    while (true) {
        path.push_back(cur->label);
        if (!cur->parent) break;
        cur = &node(*cur->parent);
    }
    std::reverse(path.begin(), path.end());
    return path;
}

std::string Taxonomy::topic_of(std::string_view id) const {
    const auto& n = node(id);
    switch (n.level) {
        case Level::topic: return n.id;
        case Level::subtopic: return *n.parent;
        case Level::root: break;
    }
    throw TaxonomyError(Code::invalid_argument, "the root has no topic");
}

void Taxonomy::check_invariants() const {
    auto fail = [](const std::string& what) { throw TaxonomyError(Code::malformed, "invariant violated: " + what); };
    std::size_t roots = 0;
    for (const auto& [id, n] : nodes_) {
        if (id != n.id) fail("node key mismatch for '" + id + "'");
        if (text::trim(n.label).empty()) fail("empty label on '" + id + "'");
        switch (n.level) {
            case Level::root:
                ++roots;
                if (n.parent || n.cmb || id != root_id_) fail("malformed root '" + id + "'");
                break;
            case Level::topic:
                if (!n.parent || *n.parent != root_id_) fail("topic '" + id + "' is not a child of the root");
                break;
            case Level::subtopic: {
                if (!n.parent) fail("subtopic '" + id + "' has no parent");
                const auto* p = find(*n.parent);
                if (!p || p->level != Level::topic) fail("subtopic '" + id + "' is not under a topic");
                break;
            }
        }
        if (n.level != Level::root) {
            if (!n.cmb || n.cmb->definition.empty()) fail("missing concept definition on '" + id + "'");
            if (dedup_cues(n.cmb->inclusion) != n.cmb->inclusion || dedup_cues(n.cmb->exclusion) != n.cmb->exclusion)
                fail("duplicate cues on '" + id + "'");
            for (const auto& cue : n.cmb->inclusion)
                if (contains(n.cmb->exclusion, cue)) fail("cue in both sets on '" + id + "'");
        }
    }
    if (roots != 1) fail("expected exactly one root");
    std::size_t linked = 0;
    for (const auto& [pid, kids] : children_) {
        if (!find(pid)) fail("child list for unknown node '" + pid + "'");
        std::set<std::string> seen;
        for (const auto& k : kids) {
            const auto* child = find(k);
            if (!child || child->parent != pid) fail("bad child link " + pid + " -> " + k);
            if (!seen.insert(text::lower(child->label)).second)
                fail("duplicate sibling label '" + child->label + "' under '" + pid + "'");
            ++linked;
        }
    }
    if (linked + 1 != nodes_.size()) fail("tree is not connected");
}

bool operator==(const Taxonomy& a, const Taxonomy& b) {
    return a.root_id_ == b.root_id_ && a.revision_ == b.revision_ && a.nodes_ == b.nodes_ &&
           a.sorted_grounding() == b.sorted_grounding();
}

// ---------------------------------------------------------------------------
// JSON

json to_json(const ConceptMemoryBank& cmb) {
    return json{{"definition", cmb.definition}, {"inclusion", cmb.inclusion}, {"exclusion", cmb.exclusion}};
}

ConceptMemoryBank cmb_from_json(const json& j) {
    ConceptMemoryBank cmb;
    cmb.definition = j.at("definition").get<std::string>();
    if (j.contains("inclusion")) cmb.inclusion = j.at("inclusion").get<std::vector<std::string>>();
    if (j.contains("exclusion")) cmb.exclusion = j.at("exclusion").get<std::vector<std::string>>();
    return cmb;
}

json to_json(const CmbPatch& patch) {
    json j = json::object();
    if (patch.definition) j["definition"] = *patch.definition;
    j["add_inclusion"] = patch.add_inclusion;
    j["add_exclusion"] = patch.add_exclusion;
    j["remove_cues"] = patch.remove_cues;
    return j;
}

CmbPatch cmb_patch_from_json(const json& j) {
    if (!j.is_object()) throw ParseError("cmb patch must be an object");
    CmbPatch p;
    if (j.contains("definition") && !j.at("definition").is_null()) p.definition = j.at("definition").get<std::string>();
    if (j.contains("add_inclusion")) p.add_inclusion = j.at("add_inclusion").get<std::vector<std::string>>();
    if (j.contains("add_exclusion")) p.add_exclusion = j.at("add_exclusion").get<std::vector<std::string>>();
    if (j.contains("remove_cues")) p.remove_cues = j.at("remove_cues").get<std::vector<std::string>>();
    return p;
}

json to_json(const GroundingRecord& r) {
    return json{{"post_id", r.post_id},     {"node_id", r.node_id},         {"window", r.window_index},
                {"action_id", r.action_id}, {"action_type", r.action_type}};
}

GroundingRecord grounding_from_json(const json& j) {
    return GroundingRecord{j.at("post_id").get<std::string>(), j.at("node_id").get<std::string>(),
                           j.at("window").get<int>(), j.at("action_id").get<std::string>(),
                           j.at("action_type").get<std::string>()};
}

json taxonomy_to_json(const Taxonomy& tax) {
    json nodes = json::array();
    for (const auto& [id, n] : tax.nodes()) {
        json jn{{"id", n.id},
                {"label", n.label},
                {"level", std::string(to_string(n.level))},
                {"parent", n.parent ? json(*n.parent) : json(nullptr)},
                {"cmb", n.cmb ? to_json(*n.cmb) : json(nullptr)},
                {"created_window", n.created_window}};
        nodes.push_back(std::move(jn));
    }
    json grounding = json::array();
    for (const auto& r : tax.sorted_grounding()) grounding.push_back(to_json(r));
    return json{{"root", tax.root_id()}, {"nodes", std::move(nodes)}, {"grounding", std::move(grounding)},
                {"revision", tax.revision()}};
}

Taxonomy taxonomy_from_json(const json& j) {
    try {
        Taxonomy tax;
        tax.root_id_ = j.at("root").get<std::string>();
        tax.revision_ = j.at("revision").get<std::uint64_t>();
        std::uint64_t max_serial = 0;
        for (const auto& jn : j.at("nodes")) {
            TaxonomyNode n;
            n.id = jn.at("id").get<std::string>();
            n.label = jn.at("label").get<std::string>();
            n.level = parse_level(jn.at("level").get<std::string>());
            if (!jn.at("parent").is_null()) n.parent = jn.at("parent").get<std::string>();
            if (!jn.at("cmb").is_null()) n.cmb = cmb_from_json(jn.at("cmb"));
            n.created_window = jn.at("created_window").get<int>();
            if (n.id.size() < 2 || n.id[0] != 'n') throw TaxonomyError(Code::malformed, "bad node id '" + n.id + "'");
            max_serial = std::max<std::uint64_t>(max_serial, std::stoull(n.id.substr(1)));
            tax.children_[n.id];
            if (!tax.nodes_.emplace(n.id, n).second) throw TaxonomyError(Code::malformed, "duplicate node id '" + n.id + "'");
        }
        for (const auto& [id, n] : tax.nodes_)
            if (n.parent) tax.children_[*n.parent].push_back(id);
        tax.next_serial_ = tax.nodes_.empty() ? 0 : max_serial + 1;
        tax.check_invariants();
        for (const auto& jr : j.at("grounding")) tax.ground(grounding_from_json(jr));
        return tax;
    } catch (const json::exception& e) {
        throw TaxonomyError(Code::malformed, std::string("malformed taxonomy: ") + e.what());
    } catch (const std::logic_error& e) {  // bad or out-of-range node id serials
        throw TaxonomyError(Code::malformed, std::string("malformed taxonomy: ") + e.what());
    }
}

std::string snapshot(const Taxonomy& tax) { return taxonomy_to_json(tax).dump(2) + "\n"; }

Taxonomy restore(std::string_view bytes) {
    json j;
    try {
        j = json::parse(bytes);
    } catch (const json::parse_error& e) {
        throw TaxonomyError(Code::malformed, std::string("snapshot is not valid JSON: ") + e.what());
    }
    return taxonomy_from_json(j);
}

}  // namespace evotaxo
