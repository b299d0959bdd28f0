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

#include "evotaxo/review.hpp"

#include <algorithm>
#include <tuple>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "evotaxo/text.hpp"
#include "parallel.hpp"

namespace evotaxo {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Refinement

ClusterEvidence build_evidence(const CandidateCluster& cluster, const Backlog& backlog, const EmbeddingCache& cache,
                               const std::map<std::string, Post>& posts) {
    ClusterEvidence ev;
    ev.cluster_id = cluster.id;
    ev.kind = cluster.key.kind;
    ev.target_node = cluster.key.target == kPathTarget ? std::string() : cluster.key.target;
    for (const auto& id : cluster.members) {
        const auto* d = backlog.find(id);
        if (!d) throw Error("cluster member " + id + " is not in the backlog");
        ev.members.push_back(*d);
    }

    const auto& medoid = cache.at(cluster.medoid);
    std::vector<std::pair<double, std::string>> ranked;
    for (const auto& id : cluster.members)
        ranked.emplace_back(id == cluster.medoid ? -1.0 : d_sem(medoid, cache.at(id)), id);
    std::sort(ranked.begin(), ranked.end());
    for (const auto& [dist, id] : ranked) {
        if (ev.representatives.size() == kMaxRepresentatives) break;
        const auto it = posts.find(backlog.find(id)->post_id);
        if (it != posts.end()) ev.representatives.push_back(it->second);
    }
    return ev;
}

namespace {

/// Keeps support inside `allowed` (draft id -> post id), sorted, with aligned posts.
void restrict_support(RefinedAction& r, const std::map<std::string, std::string>& allowed) {
    std::set<std::string> ids(r.support.begin(), r.support.end());
    r.support.clear();
    r.support_posts.clear();
    for (const auto& id : ids) {
        const auto it = allowed.find(id);
        if (it == allowed.end()) continue;
        r.support.push_back(id);
        r.support_posts.push_back(it->second);
    }
}

}  // namespace

RefineResult refine_clusters(const std::vector<CandidateCluster>& clusters, const Taxonomy& tax,
                             const Backlog& backlog, const EmbeddingCache& cache,
                             const std::map<std::string, Post>& posts, ActionModel& model, std::size_t workers) {
    std::vector<const CandidateCluster*> order;
    for (const auto& c : clusters) order.push_back(&c);
    std::sort(order.begin(), order.end(), [](const auto* a, const auto* b) { return a->id < b->id; });

    const auto view = render_view(tax);
    std::vector<RefineOutcome> outcomes(order.size());
    std::vector<std::string> failures(order.size());
    detail::parallel_for(order.size(), workers, [&](std::size_t i) {
        const auto evidence = build_evidence(*order[i], backlog, cache, posts);
        try {
            outcomes[i] = model.refine(evidence, view);
        } catch (const ProviderError& e) {
            failures[i] = e.what();
            outcomes[i] = RefineOutcome{true, {}};
        }
    });

    RefineResult result;
    std::set<std::string> seen_ids;
    for (std::size_t i = 0; i < order.size(); ++i) {
        const auto& cluster = *order[i];
        if (!failures[i].empty()) spdlog::warn("refining {} failed, deferring: {}", cluster.id, failures[i]);
        if (outcomes[i].deferred) {
            result.deferred.push_back(cluster.id);
            continue;
        }
        std::map<std::string, std::string> members;
        for (const auto& id : cluster.members) members.emplace(id, backlog.find(id)->post_id);
        std::size_t kept = 0;
        for (auto r : outcomes[i].actions) {
            r.source_cluster = cluster.id;
            restrict_support(r, members);
            try {
                if (r.kind != cluster.key.kind)
                    throw ActionError(ActionError::Code::bad_payload, "refined kind differs from the cluster's bucket");
                if (!seen_ids.insert(r.id).second)
                    throw ActionError(ActionError::Code::bad_payload, "duplicate refined action id");
                validate_refined(r, tax);
            } catch (const ActionError& e) {
                spdlog::warn("dropping refined action {} from {}: {}", r.id, cluster.id, e.what());
                result.dropped.push_back(DroppedAction{r.id, e.what()});
                continue;
            }
            result.refined.push_back(std::move(r));
            ++kept;
        }
        if (kept == 0) result.deferred.push_back(cluster.id);
    }
    std::sort(result.deferred.begin(), result.deferred.end());
    return result;
}

// ---------------------------------------------------------------------------
// Arbitration

namespace {

std::string parent_of(const FinalAction& f, const Taxonomy& tax) {
    return f.kind == ActionKind::add_path ? tax.root_id() : f.target_node;
}

/// Node a creation would occupy, as "parent-key|lower(label)". New topics use
/// the label as their parent key since they have no id yet.
std::vector<std::string> creation_slots(const FinalAction& f, const Taxonomy& tax) {
    if (f.kind == ActionKind::add_child) {
        const auto& p = std::get<ChildPayload>(f.payload);
        return {f.target_node + "|" + text::lower(text::trim(p.label))};
    }
    if (f.kind == ActionKind::add_path) {
        const auto& p = std::get<PathPayload>(f.payload);
        const auto topic = text::lower(text::trim(p.topic_label));
        const auto sub = text::lower(text::trim(p.subtopic_label));
        if (const auto* t = tax.find_topic(p.topic_label)) return {t->id + "|" + sub};
        return {tax.root_id() + "|" + topic, "new:" + topic + "|" + sub};
    }
    return {};
}

void merge_support(FinalAction& into, const FinalAction& from) {
    std::map<std::string, std::string> all;
    for (std::size_t i = 0; i < into.support.size(); ++i) all[into.support[i]] = into.support_posts[i];
    for (std::size_t i = 0; i < from.support.size(); ++i) all[from.support[i]] = from.support_posts[i];
    into.support.clear();
    into.support_posts.clear();
    for (const auto& [d, p] : all) {
        into.support.push_back(d);
        into.support_posts.push_back(p);
    }
    into.arbitration_note += (into.arbitration_note.empty() ? "" : "; ") + std::string("merged ") + from.id;
}

}  // namespace

ArbitrationResult enforce_batch(std::vector<FinalAction> proposed, const std::vector<RefinedAction>& refined,
                                const Taxonomy& tax) {
    ArbitrationResult out;
    std::map<std::string, const RefinedAction*> by_id;
    std::map<std::string, std::string> support_posts;
    for (const auto& r : refined) {
        by_id.emplace(r.id, &r);
        for (std::size_t i = 0; i < r.support.size(); ++i) support_posts.emplace(r.support[i], r.support_posts[i]);
    }

    std::vector<FinalAction> valid;
    std::set<std::string> ids;
    for (auto& f : proposed) {
        const auto it = by_id.find(f.id);
        std::string reason;
        if (it == by_id.end()) {
            reason = "no refined action with this id";
        } else if (!ids.insert(f.id).second) {
            reason = "duplicate final id";
        } else {
            const std::string note = f.arbitration_note;
            if (f.kind != it->second->kind || f.target_node != it->second->target_node ||
                !(f.payload == it->second->payload)) {
                // The arbiter selects refined actions; it does not edit them.
                static_cast<RefinedAction&>(f) = *it->second;
            }
            f.arbitration_note = note;
            auto support = f.support;
            support.insert(support.end(), it->second->support.begin(), it->second->support.end());
            f.support = std::move(support);
            restrict_support(f, support_posts);
            try {
                validate_refined(f, tax);
            } catch (const ActionError& e) {
                reason = e.what();
            }
        }
        if (!reason.empty()) {
            out.rejected.push_back(DroppedAction{f.id, reason});
            continue;
        }
        valid.push_back(std::move(f));
    }

    // add_child first so a colliding add_path is the one rejected.
    std::stable_sort(valid.begin(), valid.end(), [](const FinalAction& a, const FinalAction& b) {
        auto rank = [](ActionKind k) { return k == ActionKind::add_child ? 0 : k == ActionKind::add_path ? 1 : 2; };
        return rank(a.kind) < rank(b.kind);
    });
    std::map<std::string, std::size_t> slot_owner;  // creation slot -> index in accepted
    std::set<std::string> patched;
    std::vector<FinalAction> accepted;
    for (auto& f : valid) {
        if (f.kind == ActionKind::update_cmb) {
            if (!patched.insert(f.target_node).second) {
                out.rejected.push_back(DroppedAction{f.id, "another patch to " + f.target_node + " was accepted"});
                continue;
            }
            accepted.push_back(std::move(f));
            continue;
        }
        const auto slots = creation_slots(f, tax);
        const auto& leaf = slots.back();
        if (const auto owner = slot_owner.find(leaf); owner != slot_owner.end()) {
            auto& first = accepted[owner->second];
            if (first.kind == f.kind && payload_key(first.kind, first.payload) == payload_key(f.kind, f.payload)) {
                merge_support(first, f);
            } else {
                out.rejected.push_back(DroppedAction{f.id, "collides with accepted " + first.id});
            }
            continue;
        }
        // A new topic may be shared by several add_path actions but not by an add_child.
        if (slots.size() == 2) {
            if (const auto owner = slot_owner.find(slots.front());
                owner != slot_owner.end() && accepted[owner->second].kind != ActionKind::add_path) {
                out.rejected.push_back(DroppedAction{f.id, "collides with accepted " + accepted[owner->second].id});
                continue;
            }
        }
        for (const auto& s : slots) slot_owner.emplace(s, accepted.size());
        accepted.push_back(std::move(f));
    }
    sort_for_execution(accepted, tax);
    out.finals = std::move(accepted);
    return out;
}

ArbitrationResult arbitrate_window(const std::vector<RefinedAction>& refined, const Taxonomy& tax,
                                   ActionModel& model) {
    if (refined.empty()) return {};
    std::vector<FinalAction> proposed;
    try {
        proposed = model.arbitrate(refined, render_view(tax));
    } catch (const ProviderError& e) {
        spdlog::warn("arbitration failed, deferring all refined actions: {}", e.what());
        ArbitrationResult out;
        for (const auto& r : refined) out.rejected.push_back(DroppedAction{r.id, std::string("arbiter failed: ") + e.what()});
        return out;
    }
    auto out = enforce_batch(std::move(proposed), refined, tax);
    std::set<std::string> accounted;
    for (const auto& f : out.finals) {
        accounted.insert(f.id);
        accounted.insert(f.support.begin(), f.support.end());
    }
    for (const auto& r : out.rejected) accounted.insert(r.id);
    for (const auto& r : refined) {
        const bool merged = std::any_of(r.support.begin(), r.support.end(), [&](const auto& d) { return accounted.count(d); });
        if (!accounted.count(r.id) && !merged) out.rejected.push_back(DroppedAction{r.id, "not selected by the arbiter"});
    }
    return out;
}

void sort_for_execution(std::vector<FinalAction>& finals, const Taxonomy& tax) {
    auto rank = [](ActionKind k) { return k == ActionKind::add_path ? 0 : k == ActionKind::add_child ? 1 : 2; };
    std::stable_sort(finals.begin(), finals.end(), [&](const FinalAction& a, const FinalAction& b) {
        return std::make_tuple(rank(a.kind), parent_of(a, tax), payload_key(a.kind, a.payload), a.id) <
               std::make_tuple(rank(b.kind), parent_of(b, tax), payload_key(b.kind, b.payload), b.id);
    });
}

// ---------------------------------------------------------------------------
// Execution

ExecutionResult execute_finals(Taxonomy& tax, const std::vector<FinalAction>& finals, int window,
                               const std::set<std::string>& tombstones) {
    ExecutionResult out;
    std::set<std::string> committed;
    for (const auto& original : finals) {
        FinalAction f = original;
        f.support.clear();
        f.support_posts.clear();
        for (std::size_t i = 0; i < original.support.size(); ++i) {
            const auto& d = original.support[i];
            if (tombstones.count(d) || committed.count(d)) continue;
            f.support.push_back(d);
            f.support_posts.push_back(original.support_posts[i]);
        }
        try {
            validate_refined(f, tax);
        } catch (const ActionError& e) {
            out.skipped.push_back(DroppedAction{f.id, e.what()});
            continue;
        }

        std::string node;
        switch (f.kind) {
            case ActionKind::add_path: {
                const auto& p = std::get<PathPayload>(f.payload);
                const auto r = tax.add_path(p.topic_label, p.topic_cmb, p.subtopic_label, p.subtopic_cmb, window);
                if (r.created == 2) out.created_nodes.push_back(r.topic_id);
                out.created_nodes.push_back(r.subtopic_id);
                node = r.subtopic_id;
                break;
            }
            case ActionKind::add_child: {
                const auto& p = std::get<ChildPayload>(f.payload);
                node = tax.add_child(f.target_node, p.label, p.cmb, window);
                out.created_nodes.push_back(node);
                break;
            }
            case ActionKind::update_cmb:
                tax.update_cmb(f.target_node, std::get<CmbPatch>(f.payload));
                node = f.target_node;
                break;
            default: break;
        }
        for (std::size_t i = 0; i < f.support.size(); ++i) {
            tax.ground(GroundingRecord{f.support_posts[i], node, window, f.id, std::string(to_string(f.kind))});
            committed.insert(f.support[i]);
        }
    }
    out.committed.assign(committed.begin(), committed.end());
    return out;
}

void apply_final_actions(Taxonomy& tax, Backlog& backlog, std::set<std::string>& tombstones, int retention,
                         WindowDecision& decision) {
    auto exec = execute_finals(tax, decision.finals, decision.window, tombstones);
    backlog.remove(std::set<std::string>(exec.committed.begin(), exec.committed.end()));
    tombstones.insert(exec.committed.begin(), exec.committed.end());
    decision.committed_draft_ids = exec.committed;
    decision.created_nodes = std::move(exec.created_nodes);
    decision.skipped = std::move(exec.skipped);

    decision.retained_draft_ids.clear();
    for (const auto& e : backlog.entries()) decision.retained_draft_ids.push_back(e.action.id);
    std::sort(decision.retained_draft_ids.begin(), decision.retained_draft_ids.end());
    auto evicted = backlog.age_and_evict(retention);
    std::sort(evicted.begin(), evicted.end());
    for (const auto& id : evicted) spdlog::info("window {}: evicted draft {} after {} windows", decision.window, id, retention);
    decision.evicted_draft_ids = std::move(evicted);
}

void replay_decision(Taxonomy& tax, const WindowDecision& decision) {
    for (const auto& r : decision.immediate) tax.ground(r);
    // Support the live run did not commit was tombstoned by an earlier window.
    const std::set<std::string> committed(decision.committed_draft_ids.begin(), decision.committed_draft_ids.end());
    std::set<std::string> excluded;
    for (const auto& f : decision.finals)
        for (const auto& d : f.support)
            if (!committed.count(d)) excluded.insert(d);
    execute_finals(tax, decision.finals, decision.window, excluded);
}

// ---------------------------------------------------------------------------
// JSON

namespace {

json dropped_json(const std::vector<DroppedAction>& v) {
    json a = json::array();
    for (const auto& d : v) a.push_back(json{{"id", d.id}, {"reason", d.reason}});
    return a;
}

std::vector<DroppedAction> dropped_from(const json& a) {
    std::vector<DroppedAction> v;
    for (const auto& d : a) v.push_back(DroppedAction{d.at("id").get<std::string>(), d.at("reason").get<std::string>()});
    return v;
}

}  // namespace

json to_json(const WindowDecision& d) {
    json refined = json::array();
    for (const auto& r : d.refined) refined.push_back(to_json(r));
    json finals = json::array();
    for (const auto& f : d.finals) finals.push_back(to_json(f));
    json immediate = json::array();
    for (const auto& r : d.immediate) immediate.push_back(to_json(r));
    return json{{"window", d.window},
                {"candidates", d.candidate_ids},
                {"refined", std::move(refined)},
                {"dropped_refined", dropped_json(d.dropped_refined)},
                {"finals", std::move(finals)},
                {"rejected_finals", dropped_json(d.rejected_finals)},
                {"skipped", dropped_json(d.skipped)},
                {"deferred_clusters", d.deferred_cluster_ids},
                {"committed", d.committed_draft_ids},
                {"retained", d.retained_draft_ids},
                {"evicted", d.evicted_draft_ids},
                {"created_nodes", d.created_nodes},
                {"immediate", std::move(immediate)}};
}

WindowDecision window_decision_from_json(const json& j) {
    WindowDecision d;
    try {
        d.window = j.at("window").get<int>();
        d.candidate_ids = j.at("candidates").get<std::vector<std::string>>();
        for (const auto& r : j.at("refined")) d.refined.push_back(refined_from_json(r));
        d.dropped_refined = dropped_from(j.at("dropped_refined"));
        for (const auto& f : j.at("finals")) d.finals.push_back(final_from_json(f));
        d.rejected_finals = dropped_from(j.at("rejected_finals"));
        d.skipped = dropped_from(j.at("skipped"));
        d.deferred_cluster_ids = j.at("deferred_clusters").get<std::vector<std::string>>();
        d.committed_draft_ids = j.at("committed").get<std::vector<std::string>>();
        d.retained_draft_ids = j.at("retained").get<std::vector<std::string>>();
        d.evicted_draft_ids = j.at("evicted").get<std::vector<std::string>>();
        d.created_nodes = j.at("created_nodes").get<std::vector<std::string>>();
        for (const auto& r : j.at("immediate")) d.immediate.push_back(grounding_from_json(r));
    } catch (const json::exception& e) {
        throw ParseError(std::string("malformed window decision: ") + e.what());
    }
    return d;
}

}  // namespace evotaxo
