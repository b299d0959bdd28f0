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

#include "evotaxo/actions.hpp"

#include <algorithm>

#include <nlohmann/json.hpp>

#include "evotaxo/text.hpp"

namespace evotaxo {

using nlohmann::json;
using Code = ActionError::Code;

std::string_view to_string(ActionKind kind) {
    switch (kind) {
        case ActionKind::set_node: return "set_node";
        case ActionKind::add_child: return "add_child";
        case ActionKind::add_path: return "add_path";
        case ActionKind::update_cmb: return "update_cmb";
        case ActionKind::skip_post: return "skip_post";
    }
    return "skip_post";
}

ActionKind parse_action_kind(std::string_view s) {
    for (auto k : kAllActionKinds)
        if (to_string(k) == s) return k;
    throw ParseError("unknown action kind '" + std::string(s) + "'");
}

bool is_structural(ActionKind kind) {
    return kind == ActionKind::add_child || kind == ActionKind::add_path || kind == ActionKind::update_cmb;
}

std::string draft_id_for(std::string_view post_id) { return "d:" + std::string(post_id); }

std::string_view to_string(ActionError::Code code) {
    switch (code) {
        case Code::unknown_target: return "unknown_target";
        case Code::bad_payload: return "bad_payload";
        case Code::depth_violation: return "depth_violation";
        case Code::not_assignable: return "not_assignable";
        case Code::label_conflict: return "label_conflict";
        case Code::not_structural: return "not_structural";
    }
    return "bad_payload";
}

namespace {

[[noreturn]] void fail(Code code, const std::string& what) { throw ActionError(code, what); }

const TaxonomyNode& require_target(const std::string& id, const Taxonomy& tax) {
    if (id.empty()) fail(Code::unknown_target, "action needs a target node");
    const auto* n = tax.find(id);
    if (!n) fail(Code::unknown_target, "unknown target node '" + id + "'");
    return *n;
}

void check_cmb(const ConceptMemoryBank& cmb, const char* what) {
    if (text::trim(cmb.definition).empty()) fail(Code::bad_payload, std::string(what) + " definition is empty");
    const auto inc = dedup_cues(cmb.inclusion);
    for (const auto& cue : dedup_cues(cmb.exclusion))
        if (std::find(inc.begin(), inc.end(), cue) != inc.end())
            fail(Code::bad_payload, std::string(what) + " cue '" + cue + "' is both included and excluded");
}

void check_structural(ActionKind kind, const std::string& target, const Payload& payload, const Taxonomy& tax) {
    switch (kind) {
        case ActionKind::add_child: {
            const auto& parent = require_target(target, tax);
            if (parent.level == Level::subtopic)
                fail(Code::depth_violation, "add_child under subtopic '" + parent.label + "'");
            const auto* p = std::get_if<ChildPayload>(&payload);
            if (!p) fail(Code::bad_payload, "add_child needs a child payload");
            if (text::trim(p->label).empty()) fail(Code::bad_payload, "add_child label is empty");
            check_cmb(p->cmb, "child");
            if (tax.find_child(parent.id, p->label))
                fail(Code::label_conflict, "'" + parent.label + "' already has a child '" + text::trim(p->label) + "'");
            return;
        }
        case ActionKind::add_path: {
            if (!target.empty() && target != tax.root_id())
                fail(Code::bad_payload, "add_path carries no target other than the root");
            const auto* p = std::get_if<PathPayload>(&payload);
            if (!p) fail(Code::bad_payload, "add_path needs a path payload");
            if (text::trim(p->topic_label).empty() || text::trim(p->subtopic_label).empty())
                fail(Code::bad_payload, "add_path needs both a topic and a subtopic label");
            check_cmb(p->subtopic_cmb, "subtopic");
            const auto* topic = tax.find_topic(p->topic_label);
            if (!topic) check_cmb(p->topic_cmb, "topic");
            if (topic && tax.find_child(topic->id, p->subtopic_label))
                fail(Code::label_conflict, "path '" + topic->label + ">" + text::trim(p->subtopic_label) + "' exists");
            return;
        }
        case ActionKind::update_cmb: {
            const auto& node = require_target(target, tax);
            if (node.level == Level::root) fail(Code::not_assignable, "the root carries no concept memory bank");
            const auto* p = std::get_if<CmbPatch>(&payload);
            if (!p) fail(Code::bad_payload, "update_cmb needs a patch payload");
            if (p->empty()) fail(Code::bad_payload, "update_cmb patch is empty");
            ConceptMemoryBank cmb = *node.cmb;
            if (p->definition) cmb.definition = *p->definition;
            for (const auto& raw : p->remove_cues) {
                const auto cue = text::trim(raw);
                std::erase(cmb.inclusion, cue);
                std::erase(cmb.exclusion, cue);
            }
            cmb.inclusion.insert(cmb.inclusion.end(), p->add_inclusion.begin(), p->add_inclusion.end());
            cmb.exclusion.insert(cmb.exclusion.end(), p->add_exclusion.begin(), p->add_exclusion.end());
            check_cmb(cmb, "patched");
            return;
        }
        default: fail(Code::not_structural, std::string(to_string(kind)) + " is not structural");
    }
}

}  // namespace

void validate_draft(const DraftAction& action, const Taxonomy& tax) {
    switch (action.kind) {
        case ActionKind::set_node: {
            const auto& n = require_target(action.target_node, tax);
            if (n.level == Level::root) fail(Code::not_assignable, "posts cannot be assigned to the root");
            if (!std::holds_alternative<std::monostate>(action.payload))
                fail(Code::bad_payload, "set_node carries no payload");
            return;
        }
        case ActionKind::skip_post:
            if (!action.target_node.empty() || !std::holds_alternative<std::monostate>(action.payload))
                fail(Code::bad_payload, "skip_post carries no target or payload");
            return;
        default: check_structural(action.kind, action.target_node, action.payload, tax);
    }
}

void validate_refined(const RefinedAction& action, const Taxonomy& tax) {
    if (!is_structural(action.kind))
        fail(Code::not_structural, std::string(to_string(action.kind)) + " is not a structural action");
    if (action.support.empty()) fail(Code::bad_payload, "refined action has no support");
    check_structural(action.kind, action.target_node, action.payload, tax);
}

DraftAction normalize_draft(DraftAction action, const Taxonomy& tax) {
    auto to_set_node = [&](const std::string& node_id) {
        action.kind = ActionKind::set_node;
        action.target_node = node_id;
        action.payload = std::monostate{};
    };
    if (action.kind == ActionKind::add_child) {
        const auto* p = std::get_if<ChildPayload>(&action.payload);
        if (p && tax.find(action.target_node))
            if (const auto* existing = tax.find_child(action.target_node, p->label)) to_set_node(existing->id);
    } else if (action.kind == ActionKind::add_path) {
        const auto* p = std::get_if<PathPayload>(&action.payload);
        const auto* topic = p ? tax.find_topic(p->topic_label) : nullptr;
        if (topic) {
            if (const auto* sub = tax.find_child(topic->id, p->subtopic_label)) {
                to_set_node(sub->id);
            } else {
                ChildPayload child{p->subtopic_label, p->subtopic_cmb};
                action.kind = ActionKind::add_child;
                action.target_node = topic->id;
                action.payload = std::move(child);
            }
        }
    }
    return action;
}

DraftAction as_skip(const DraftAction& action, std::string reason) {
    DraftAction skip;
    skip.id = action.id;
    skip.kind = ActionKind::skip_post;
    skip.post_id = action.post_id;
    skip.timestamp = action.timestamp;
    skip.rationale = std::move(reason);
    return skip;
}

Route route(const DraftAction& action) {
    return is_structural(action.kind) ? Route::structural : Route::immediate;
}

namespace {

std::string esc(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s) {
        if (c == '\\' || c == '|' || c == '>' || c == ',') out.push_back('\\');
        out.push_back(c);
    }
    return out;
}

std::string escaped_path(const Taxonomy& tax, const std::string& id) {
    std::vector<std::string> parts;
    for (const auto& label : tax.label_path(id)) parts.push_back(esc(label));
    return text::join(parts, ">");
}

std::string patch_items(const CmbPatch& p) {
    std::vector<std::string> items;
    if (p.definition) items.push_back("def:" + esc(*p.definition));
    for (const auto& c : p.add_inclusion) items.push_back("+" + esc(c));
    for (const auto& c : p.add_exclusion) items.push_back("-" + esc(c));
    for (const auto& c : p.remove_cues) items.push_back("~" + esc(c));
    return text::join(items, ", ");
}

}  // namespace

std::string canonical_text(const DraftAction& action, const Taxonomy& tax) {
    std::string path;
    std::string labels;
    switch (action.kind) {
        case ActionKind::add_child:
            path = tax.find(action.target_node) ? escaped_path(tax, action.target_node) : esc(action.target_node);
            if (const auto* p = std::get_if<ChildPayload>(&action.payload)) labels = esc(text::trim(p->label));
            break;
        case ActionKind::add_path:
            path = esc(tax.root().label);
            if (const auto* p = std::get_if<PathPayload>(&action.payload))
                labels = esc(text::trim(p->topic_label)) + ", " + esc(text::trim(p->subtopic_label));
            break;
        case ActionKind::update_cmb:
            path = tax.find(action.target_node) ? escaped_path(tax, action.target_node) : esc(action.target_node);
            if (const auto* p = std::get_if<CmbPatch>(&action.payload)) labels = patch_items(*p);
            break;
        case ActionKind::set_node:
            path = tax.find(action.target_node) ? escaped_path(tax, action.target_node) : esc(action.target_node);
            break;
        case ActionKind::skip_post: break;
    }
    return std::string(to_string(action.kind)) + " | " + path + " | " + labels + " | " + esc(action.rationale);
}

std::string payload_key(ActionKind kind, const Payload& payload) {
    switch (kind) {
        case ActionKind::add_child:
            if (const auto* p = std::get_if<ChildPayload>(&payload)) return text::lower(text::trim(p->label));
            break;
        case ActionKind::add_path:
            if (const auto* p = std::get_if<PathPayload>(&payload))
                return text::lower(text::trim(p->topic_label)) + ">" + text::lower(text::trim(p->subtopic_label));
            break;
        case ActionKind::update_cmb:
            if (const auto* p = std::get_if<CmbPatch>(&payload)) return text::lower(patch_items(*p));
            break;
        default: break;
    }
    return {};
}

// ---------------------------------------------------------------------------
// Backlog

void Backlog::add(DraftAction action, int age_windows) {
    if (!is_structural(action.kind))
        throw ActionError(Code::not_structural, "backlog accepts structural drafts only, got " +
                                                    std::string(to_string(action.kind)));
    if (find(action.id)) throw CorpusError("draft '" + action.id + "' is already in the backlog");
    entries_.push_back(Entry{std::move(action), age_windows});
}

std::size_t Backlog::remove(const std::set<std::string>& ids) {
    const auto before = entries_.size();
    std::erase_if(entries_, [&](const Entry& e) { return ids.count(e.action.id) > 0; });
    return before - entries_.size();
}

std::vector<std::string> Backlog::age_and_evict(int retention) {
    std::vector<std::string> evicted;
    for (auto& e : entries_)
        if (++e.age_windows > retention) evicted.push_back(e.action.id);
    std::erase_if(entries_, [&](const Entry& e) { return e.age_windows > retention; });
    return evicted;
}

const DraftAction* Backlog::find(std::string_view id) const {
    for (const auto& e : entries_)
        if (e.action.id == id) return &e.action;
    return nullptr;
}

// ---------------------------------------------------------------------------
// JSON

namespace {

json labelled(const std::string& label, const ConceptMemoryBank& cmb) { return json{{"label", label}, {"cmb", to_json(cmb)}}; }

ConceptMemoryBank wire_cmb(const json& j) {
    if (!j.is_object()) throw ParseError("cmb must be an object");
    if (!j.contains("definition") || !j.at("definition").is_string()) throw ParseError("cmb needs a definition string");
    return cmb_from_json(j);
}

std::string opt_string(const json& j, const char* key) {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) return {};
    if (!it->is_string()) throw ParseError(std::string("'") + key + "' must be a string");
    return it->get<std::string>();
}

}  // namespace

json payload_to_json(ActionKind kind, const Payload& payload) {
    switch (kind) {
        case ActionKind::add_child:
            if (const auto* p = std::get_if<ChildPayload>(&payload)) return labelled(p->label, p->cmb);
            break;
        case ActionKind::add_path:
            if (const auto* p = std::get_if<PathPayload>(&payload))
                return json{{"topic", labelled(p->topic_label, p->topic_cmb)},
                            {"subtopic", labelled(p->subtopic_label, p->subtopic_cmb)}};
            break;
        case ActionKind::update_cmb:
            if (const auto* p = std::get_if<CmbPatch>(&payload)) return to_json(*p);
            break;
        default: break;
    }
    return nullptr;
}

Payload payload_from_json(ActionKind kind, const json& j) {
    try {
        switch (kind) {
            case ActionKind::add_child:
                if (!j.is_object()) throw ParseError("add_child needs a payload object");
                return ChildPayload{j.at("label").get<std::string>(), wire_cmb(j.at("cmb"))};
            case ActionKind::add_path: {
                if (!j.is_object()) throw ParseError("add_path needs a payload object");
                const auto& t = j.at("topic");
                const auto& s = j.at("subtopic");
                ConceptMemoryBank topic_cmb;
                if (t.contains("cmb") && !t.at("cmb").is_null()) topic_cmb = wire_cmb(t.at("cmb"));
                return PathPayload{t.at("label").get<std::string>(), std::move(topic_cmb),
                                   s.at("label").get<std::string>(), wire_cmb(s.at("cmb"))};
            }
            case ActionKind::update_cmb: return cmb_patch_from_json(j);
            default:
                if (!j.is_null() && !(j.is_object() && j.empty()))
                    throw ParseError(std::string(to_string(kind)) + " carries no payload");
                return std::monostate{};
        }
    } catch (const json::exception& e) {
        throw ParseError(std::string("malformed payload: ") + e.what());
    }
}

json to_json(const DraftAction& a) {
    return json{{"id", a.id},
                {"kind", std::string(to_string(a.kind))},
                {"post_id", a.post_id},
                {"timestamp", a.timestamp},
                {"target_node", a.target_node.empty() ? json(nullptr) : json(a.target_node)},
                {"payload", payload_to_json(a.kind, a.payload)},
                {"rationale", a.rationale}};
}

DraftAction draft_from_json(const json& j) {
    try {
        DraftAction a;
        a.id = j.at("id").get<std::string>();
        a.kind = parse_action_kind(j.at("kind").get<std::string>());
        a.post_id = j.at("post_id").get<std::string>();
        a.timestamp = j.at("timestamp").get<Instant>();
        a.target_node = opt_string(j, "target_node");
        a.payload = payload_from_json(a.kind, j.value("payload", json(nullptr)));
        a.rationale = opt_string(j, "rationale");
        return a;
    } catch (const json::exception& e) {
        throw ParseError(std::string("malformed draft action: ") + e.what());
    }
}

DraftAction draft_from_wire(const json& j, const Post& post) {
    if (!j.is_object()) throw ParseError("action must be a JSON object");
    auto kind_it = j.find("kind");
    if (kind_it == j.end() || !kind_it->is_string()) throw ParseError("action needs a string 'kind'");
    DraftAction a;
    a.id = draft_id_for(post.id);
    a.kind = parse_action_kind(kind_it->get<std::string>());
    a.post_id = post.id;
    a.timestamp = post.timestamp;
    a.target_node = opt_string(j, "target_node");
    a.payload = payload_from_json(a.kind, j.value("payload", json(nullptr)));
    a.rationale = opt_string(j, "rationale");
    return a;
}

json to_json(const RefinedAction& a) {
    return json{{"id", a.id},
                {"kind", std::string(to_string(a.kind))},
                {"target_node", a.target_node.empty() ? json(nullptr) : json(a.target_node)},
                {"payload", payload_to_json(a.kind, a.payload)},
                {"rationale", a.rationale},
                {"support", a.support},
                {"support_posts", a.support_posts},
                {"source_cluster", a.source_cluster}};
}

RefinedAction refined_from_json(const json& j) {
    try {
        RefinedAction a;
        a.id = j.at("id").get<std::string>();
        a.kind = parse_action_kind(j.at("kind").get<std::string>());
        a.target_node = opt_string(j, "target_node");
        a.payload = payload_from_json(a.kind, j.value("payload", json(nullptr)));
        a.rationale = opt_string(j, "rationale");
        a.support = j.at("support").get<std::vector<std::string>>();
        a.support_posts = j.value("support_posts", std::vector<std::string>{});
        a.source_cluster = opt_string(j, "source_cluster");
        return a;
    } catch (const json::exception& e) {
        throw ParseError(std::string("malformed refined action: ") + e.what());
    }
}

json to_json(const FinalAction& a) {
    json j = to_json(static_cast<const RefinedAction&>(a));
    j["arbitration_note"] = a.arbitration_note;
    return j;
}

FinalAction final_from_json(const json& j) {
    FinalAction f;
    static_cast<RefinedAction&>(f) = refined_from_json(j);
    f.arbitration_note = opt_string(j, "arbitration_note");
    return f;
}

json to_json(const Backlog& backlog) {
    json arr = json::array();
    for (const auto& e : backlog.entries()) arr.push_back(json{{"action", to_json(e.action)}, {"age", e.age_windows}});
    return arr;
}

Backlog backlog_from_json(const json& j) {
    Backlog b;
    try {
        for (const auto& e : j) {
            b.add(draft_from_json(e.at("action")), e.at("age").get<int>());
        }
    } catch (const json::exception& e) {
        throw ParseError(std::string("malformed backlog: ") + e.what());
    }
    return b;
}

}  // namespace evotaxo
