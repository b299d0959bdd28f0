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

#include <algorithm>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "evotaxo/providers.hpp"
#include "evotaxo/text.hpp"

namespace evotaxo {

using nlohmann::json;

std::string_view to_string(CallSite site) {
    switch (site) {
        case CallSite::seed: return "seed";
        case CallSite::propose: return "propose";
        case CallSite::refine: return "refine";
        case CallSite::arbitrate: return "arbitrate";
        case CallSite::judge: return "judge";
        case CallSite::embed: return "embed";
        case CallSite::classify: return "classify";
        case CallSite::entail: return "entail";
    }
    return "propose";
}

CallSite parse_call_site(std::string_view s) {
    for (std::size_t i = 0; i < kCallSiteCount; ++i)
        if (to_string(static_cast<CallSite>(i)) == s) return static_cast<CallSite>(i);
    throw ParseError("unknown call site '" + std::string(s) + "'");
}

std::string_view to_string(JudgeKind kind) {
    switch (kind) {
        case JudgeKind::path: return "path";
        case JudgeKind::sib_coherence: return "sib_coherence";
        case JudgeKind::sib_separability: return "sib_separability";
    }
    return "path";
}

UsageCounts& UsageCounts::operator+=(const UsageCounts& o) {
    calls += o.calls;
    prompt_tokens += o.prompt_tokens;
    completion_tokens += o.completion_tokens;
    return *this;
}

UsageCounts UsageTotals::grand() const {
    UsageCounts g;
    for (const auto& c : by_site) g += c;
    return g;
}

UsageTotals& UsageTotals::operator+=(const UsageTotals& o) {
    for (std::size_t i = 0; i < kCallSiteCount; ++i) by_site[i] += o.by_site[i];
    return *this;
}

UsageTotals operator-(const UsageTotals& a, const UsageTotals& b) {
    UsageTotals d;
    for (std::size_t i = 0; i < kCallSiteCount; ++i) {
        d.by_site[i].calls = a.by_site[i].calls - b.by_site[i].calls;
        d.by_site[i].prompt_tokens = a.by_site[i].prompt_tokens - b.by_site[i].prompt_tokens;
        d.by_site[i].completion_tokens = a.by_site[i].completion_tokens - b.by_site[i].completion_tokens;
    }
    return d;
}

namespace {
json counts_json(const UsageCounts& c) {
    return json{{"calls", c.calls},
                {"prompt_tokens", c.prompt_tokens},
                {"completion_tokens", c.completion_tokens},
                {"total_tokens", c.total()}};
}
}  // namespace

json to_json(const UsageTotals& totals) {
    json sites = json::object();
    for (std::size_t i = 0; i < kCallSiteCount; ++i)
        sites[std::string(to_string(static_cast<CallSite>(i)))] = counts_json(totals.by_site[i]);
    const auto g = totals.grand();
    json grand = counts_json(g);
    grand["total_millions"] = format_millions(g.total());
    return json{{"by_site", std::move(sites)}, {"grand", std::move(grand)}};
}

UsageTotals usage_from_json(const json& j) {
    UsageTotals t;
    try {
        for (const auto& [name, c] : j.at("by_site").items()) {
            auto& slot = t.by_site[static_cast<std::size_t>(parse_call_site(name))];
            slot.calls = c.at("calls").get<std::uint64_t>();
            slot.prompt_tokens = c.at("prompt_tokens").get<std::uint64_t>();
            slot.completion_tokens = c.at("completion_tokens").get<std::uint64_t>();
        }
    } catch (const json::exception& e) {
        throw ParseError(std::string("malformed usage totals: ") + e.what());
    }
    return t;
}

std::string format_millions(std::uint64_t tokens) {
    // Integer rounding to one decimal keeps the output platform-independent.
    const std::uint64_t tenths = (tokens + 50'000) / 100'000;
    return fmt::format("{}.{}M", tenths / 10, tenths % 10);
}

void UsageLedger::record(const TokenUsage& usage) {
    std::lock_guard lock(mutex_);
    entries_.push_back(usage);
}

std::size_t UsageLedger::size() const {
    std::lock_guard lock(mutex_);
    return entries_.size();
}

std::vector<TokenUsage> UsageLedger::entries() const {
    std::lock_guard lock(mutex_);
    return entries_;
}

UsageTotals UsageLedger::totals() const {
    std::lock_guard lock(mutex_);
    UsageTotals t = baseline_;
    for (const auto& e : entries_) {
        auto& slot = t.by_site[static_cast<std::size_t>(e.site)];
        ++slot.calls;
        slot.prompt_tokens += e.prompt_tokens;
        slot.completion_tokens += e.completion_tokens;
    }
    return t;
}

void UsageLedger::set_baseline(const UsageTotals& baseline) {
    std::lock_guard lock(mutex_);
    baseline_ = baseline;
}

// ---------------------------------------------------------------------------
// TaxonomyView

const ViewNode* TaxonomyView::find_topic(std::string_view label) const { return find_child(root_id, label); }

const ViewNode* TaxonomyView::find_child(std::string_view parent_id, std::string_view label) const {
    const auto wanted = text::trim(label);
    for (const auto& n : nodes)
        if (n.parent == parent_id && text::iequals(n.label, wanted)) return &n;
    return nullptr;
}

namespace {

struct RenderDetail {
    bool cues = true;
    bool subtopic_definitions = true;
    bool topic_definitions = true;
};

void render_node(const Taxonomy& tax, const std::string& id, int depth, const RenderDetail& detail, std::string& out) {
    const auto& n = tax.node(id);
    const std::string indent(static_cast<std::size_t>(depth - 1) * 2, ' ');
    out += indent + "- " + n.label + " [" + n.id + "]";
    const bool show_def = n.level == Level::topic ? detail.topic_definitions : detail.subtopic_definitions;
    if (show_def) out += ": " + n.cmb->definition;
    out += '\n';
    if (detail.cues) {
        if (!n.cmb->inclusion.empty()) out += indent + "    include: " + text::join(n.cmb->inclusion, "; ") + '\n';
        if (!n.cmb->exclusion.empty()) out += indent + "    exclude: " + text::join(n.cmb->exclusion, "; ") + '\n';
    }
    auto kids = tax.children(id);
    std::sort(kids.begin(), kids.end());
    for (const auto& k : kids) render_node(tax, k, depth + 1, detail, out);
}

std::string render_text(const Taxonomy& tax, const RenderDetail& detail) {
    std::string out = "Root: " + tax.root().label + " [" + tax.root_id() + "]\n";
    auto topics = tax.children(tax.root_id());
    std::sort(topics.begin(), topics.end());
    for (const auto& t : topics) render_node(tax, t, 1, detail, out);
    return out;
}

}  // namespace

TaxonomyView render_view(const Taxonomy& tax, std::size_t budget) {
    TaxonomyView view;
    view.revision = tax.revision();
    view.root_id = tax.root_id();
    view.root_label = tax.root().label;

    auto topics = tax.children(tax.root_id());
    std::sort(topics.begin(), topics.end());
    for (const auto& t : topics) {
        const auto& tn = tax.node(t);
        view.nodes.push_back(ViewNode{tn.id, tn.label, tn.level, tax.root_id()});
        auto subs = tax.children(t);
        std::sort(subs.begin(), subs.end());
        for (const auto& s : subs) {
            const auto& sn = tax.node(s);
            view.nodes.push_back(ViewNode{sn.id, sn.label, sn.level, tn.id});
        }
    }

    const RenderDetail levels[] = {
        {true, true, true}, {false, true, true}, {false, false, true}, {false, false, false}};
    for (const auto& detail : levels) {
        view.text = render_text(tax, detail);
        if (view.text.size() <= budget) return view;
    }
    view.text.resize(budget);
    return view;
}

}  // namespace evotaxo
