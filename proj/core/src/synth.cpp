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

#include "evotaxo/synth.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include <fmt/format.h>
#include <toml.hpp>

#include "evotaxo/errors.hpp"
#include "evotaxo/rng.hpp"
#include "evotaxo/text.hpp"
#include "toml_read.hpp"

namespace evotaxo {

namespace {

constexpr Instant kDay = 86400;
constexpr Instant kHour = 3600;

const detail::TomlReader kRead("synth spec");

Instant to_instant(const toml::date_time& dt) {
    using namespace std::chrono;
    const auto days = sys_days{year{dt.date.year} / month{dt.date.month} / day{dt.date.day}};
    Instant t = days.time_since_epoch().count() * kDay + dt.time.hour * kHour + dt.time.minute * 60 + dt.time.second;
    if (dt.offset) t -= static_cast<Instant>(dt.offset->minutes) * 60;
    return t;
}

Instant read_instant(const toml::node& n, std::string_view key) {
    if (const auto* i = n.as_integer()) return i->get();
    if (const auto* dt = n.as_date_time()) return to_instant(dt->get());
    if (const auto* d = n.as_date()) return to_instant(toml::date_time{d->get(), toml::time{}});
    if (const auto* s = n.as_string()) {
        try {
            const auto parsed = toml::parse(fmt::format("v = {}", s->get()));
            if (const auto* dt = parsed["v"].as_date_time()) return to_instant(dt->get());
        } catch (const toml::parse_error&) {
        }
    }
    kRead.fail(n, key, "must be a date-time or epoch seconds");
}

SynthSubtopic parse_subtopic(const toml::table& t) {
    kRead.reject_unknown(t, {"label", "keywords", "posts"}, "subtopic");
    SynthSubtopic s;
    if (auto n = t.get("label")) s.label = kRead.string(*n, "label");
    if (auto n = t.get("keywords")) s.keywords = kRead.strings(*n, "keywords");
    if (auto n = t.get("posts")) s.posts = kRead.number<std::size_t>(*n, "posts");
    return s;
}

SynthTopic parse_topic(const toml::table& t) {
    kRead.reject_unknown(t, {"label", "keywords", "subtopics"}, "topic");
    SynthTopic topic;
    if (auto n = t.get("label")) topic.label = kRead.string(*n, "label");
    if (auto n = t.get("keywords")) topic.keywords = kRead.strings(*n, "keywords");
    if (auto n = t.get("subtopics"))
        for (const auto& e : kRead.tables(*n, "subtopics")) topic.subtopics.push_back(parse_subtopic(*e.as_table()));
    return topic;
}

SynthBurst parse_burst(const toml::table& t) {
    kRead.reject_unknown(t, {"subtopic", "center", "width_seconds", "width_hours", "extra_posts"}, "burst");
    SynthBurst b;
    if (auto n = t.get("subtopic")) b.subtopic = kRead.string(*n, "subtopic");
    if (auto n = t.get("center")) b.center = read_instant(*n, "center");
    if (auto n = t.get("width_seconds")) b.width = kRead.number<Instant>(*n, "width_seconds");
    if (auto n = t.get("width_hours")) b.width = kRead.number<Instant>(*n, "width_hours") * kHour;
    if (auto n = t.get("extra_posts")) b.extra_posts = kRead.number<std::size_t>(*n, "extra_posts");
    return b;
}

struct Planted {
    std::size_t topic = 0;
    std::size_t subtopic = 0;
};

// Resolves "Topic>Subtopic" or a bare subtopic label that is unique across topics.
Planted resolve_burst(const SynthSpec& spec, std::string_view name) {
    std::vector<Planted> hits;
    const auto sep = name.find('>');
    const std::string topic = sep == std::string_view::npos ? "" : text::trim(name.substr(0, sep));
    const std::string sub = text::trim(sep == std::string_view::npos ? name : name.substr(sep + 1));
    for (std::size_t i = 0; i < spec.topics.size(); ++i) {
        if (!topic.empty() && !text::iequals(spec.topics[i].label, topic)) continue;
        for (std::size_t j = 0; j < spec.topics[i].subtopics.size(); ++j)
            if (text::iequals(spec.topics[i].subtopics[j].label, sub)) hits.push_back({i, j});
    }
    if (hits.size() != 1)
        throw ConfigError(fmt::format("synth spec: burst subtopic '{}' matches {} subtopics", name, hits.size()));
    return hits.front();
}

std::string draw_text(Rng& rng, const std::vector<std::string>& primary, std::size_t n_primary,
                      const std::vector<std::string>& secondary, std::size_t n_secondary) {
    std::vector<std::string> words;
    for (std::size_t i = 0; i < n_primary; ++i) words.push_back(primary[rng.below(primary.size())]);
    if (!secondary.empty())
        for (std::size_t i = 0; i < n_secondary; ++i) words.push_back(secondary[rng.below(secondary.size())]);
    for (std::size_t i = words.size(); i > 1; --i) std::swap(words[i - 1], words[rng.below(i)]);
    return text::join(words, " ");
}

std::set<std::string> token_set(std::string_view s) {
    const auto toks = text::tokens(text::lower(s));
    return {toks.begin(), toks.end()};
}

// Greedy one-to-one matching over (overlap desc, truth id, induced id).
void match_level(const Taxonomy& induced, const std::vector<std::string>& induced_ids, const Taxonomy& truth,
                 const std::vector<std::string>& truth_ids, std::vector<std::pair<std::string, std::string>>& matches,
                 std::vector<std::string>& unmatched_induced) {
    std::vector<std::tuple<double, std::string, std::string>> pairs;
    for (const auto& t : truth_ids)
        for (const auto& i : induced_ids) {
            const double o = label_overlap(truth.node(t).label, induced.node(i).label);
            if (o >= 0.5) pairs.emplace_back(o, t, i);
        }
    std::sort(pairs.begin(), pairs.end(), [](const auto& a, const auto& b) {
        if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) > std::get<0>(b);
        return std::tie(std::get<1>(a), std::get<2>(a)) < std::tie(std::get<1>(b), std::get<2>(b));
    });
    std::set<std::string> used_truth, used_induced;
    for (const auto& [o, t, i] : pairs) {
        if (used_truth.count(t) || used_induced.count(i)) continue;
        used_truth.insert(t);
        used_induced.insert(i);
        matches.emplace_back(truth.node(t).label, induced.node(i).label);
    }
    for (const auto& i : induced_ids)
        if (!used_induced.count(i)) unmatched_induced.push_back(induced.node(i).label);
}

std::vector<std::string> ids_at(const Taxonomy& tax, Level level) {
    std::vector<std::string> out;
    for (const auto& [id, n] : tax.nodes())
        if (n.level == level) out.push_back(id);
    return out;
}

}  // namespace

void SynthSpec::validate() const {
    if (span <= 0) throw ConfigError("synth spec: span must be positive");
    if (topics.empty()) throw ConfigError("synth spec: at least one topic is required");
    if (!(noise_fraction >= 0.0 && noise_fraction < 1.0))
        throw ConfigError("synth spec: noise_fraction must be in [0, 1)");
    if (noise_fraction > 0.0 && noise_keywords.empty())
        throw ConfigError("synth spec: noise posts need a nonempty noise keyword pool");
    if (subtopic_words == 0) throw ConfigError("synth spec: subtopic_words must be positive");

    std::set<std::string> topic_labels;
    std::map<std::string, std::string> owner;  // keyword -> subtopic
    for (const auto& t : topics) {
        if (text::trim(t.label).empty()) throw ConfigError("synth spec: topic label must be nonempty");
        if (!topic_labels.insert(text::lower(t.label)).second)
            throw ConfigError("synth spec: duplicate topic '" + t.label + "'");
        if (t.subtopics.empty()) throw ConfigError("synth spec: topic '" + t.label + "' has no subtopics");
        std::set<std::string> sub_labels;
        for (const auto& s : t.subtopics) {
            if (text::trim(s.label).empty()) throw ConfigError("synth spec: subtopic label must be nonempty");
            if (!sub_labels.insert(text::lower(s.label)).second)
                throw ConfigError("synth spec: duplicate subtopic '" + s.label + "' under '" + t.label + "'");
            if (s.keywords.empty()) throw ConfigError("synth spec: subtopic '" + s.label + "' has no keywords");
            const std::string name = t.label + ">" + s.label;
            for (const auto& k : std::set<std::string>(s.keywords.begin(), s.keywords.end())) {
                const auto [it, fresh] = owner.emplace(text::lower(k), name);
                if (!fresh)
                    throw ConfigError(fmt::format("synth spec: keyword '{}' is shared by '{}' and '{}'", k,
                                                  it->second, name));
            }
        }
    }
    for (const auto& b : bursts) {
        resolve_burst(*this, b.subtopic);
        if (b.width < 0 || b.width >= span) throw ConfigError("synth spec: burst width must be in [0, span)");
        if (b.center - b.width < start || b.center + b.width >= start + span)
            throw ConfigError("synth spec: burst '" + b.subtopic + "' extends outside the span");
    }
}

SynthSpec parse_synth_spec(std::string_view toml_text) {
    const toml::table root = kRead.parse(toml_text);
    kRead.reject_unknown(root,
                   {"seed", "root_label", "start", "span_seconds", "span_days", "posts_per_subtopic",
                    "subtopic_words", "topic_words", "noise_fraction", "noise_keywords", "topics", "bursts"},
                   "top level");
    SynthSpec spec;
    if (auto n = root.get("seed")) spec.seed = kRead.number<std::uint64_t>(*n, "seed");
    if (auto n = root.get("root_label")) spec.root_label = kRead.string(*n, "root_label");
    if (auto n = root.get("start")) spec.start = read_instant(*n, "start");
    if (auto n = root.get("span_seconds")) spec.span = kRead.number<Instant>(*n, "span_seconds");
    if (auto n = root.get("span_days")) spec.span = kRead.number<Instant>(*n, "span_days") * kDay;
    if (auto n = root.get("posts_per_subtopic")) spec.posts_per_subtopic = kRead.number<std::size_t>(*n, "posts_per_subtopic");
    if (auto n = root.get("subtopic_words")) spec.subtopic_words = kRead.number<std::size_t>(*n, "subtopic_words");
    if (auto n = root.get("topic_words")) spec.topic_words = kRead.number<std::size_t>(*n, "topic_words");
    if (auto n = root.get("noise_fraction")) spec.noise_fraction = kRead.number<double>(*n, "noise_fraction");
    if (auto n = root.get("noise_keywords")) spec.noise_keywords = kRead.strings(*n, "noise_keywords");
    if (auto n = root.get("topics"))
        for (const auto& e : kRead.tables(*n, "topics")) spec.topics.push_back(parse_topic(*e.as_table()));
    if (auto n = root.get("bursts"))
        for (const auto& e : kRead.tables(*n, "bursts")) spec.bursts.push_back(parse_burst(*e.as_table()));
    spec.validate();
    return spec;
}

SynthSpec load_synth_spec(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read synth spec " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_synth_spec(buf.str());
}

SynthOutput generate(const SynthSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    SynthOutput out{{}, Taxonomy::init(spec.root_label)};

    std::vector<std::vector<std::size_t>> extra(spec.topics.size());
    for (std::size_t i = 0; i < spec.topics.size(); ++i) extra[i].assign(spec.topics[i].subtopics.size(), 0);

    std::size_t serial = 0;
    auto emit = [&](std::string text, Instant ts, std::string truth_topic, std::string truth_sub) {
        Post p{fmt::format("s{:05d}", serial++), std::move(text), ts, {}};
        p.meta["truth_topic"] = std::move(truth_topic);
        p.meta["truth_subtopic"] = std::move(truth_sub);
        out.posts.push_back(std::move(p));
    };

    std::size_t planted = 0;
    for (const auto& topic : spec.topics) {
        const auto topic_id = out.truth.add_child(out.truth.root_id(), topic.label,
                                                  ConceptMemoryBank{"Posts about " + topic.label + ".", {}, {}});
        for (const auto& sub : topic.subtopics) {
            out.truth.add_child(topic_id, sub.label, ConceptMemoryBank{"Posts about " + sub.label + ".", sub.keywords, {}});
            const std::size_t n = sub.posts.value_or(spec.posts_per_subtopic);
            for (std::size_t k = 0; k < n; ++k) {
                const Instant ts = rng.between(spec.start, spec.start + spec.span - 1);
                emit(draw_text(rng, sub.keywords, spec.subtopic_words, topic.keywords, spec.topic_words), ts,
                     topic.label, sub.label);
            }
            planted += n;
        }
    }
    for (const auto& b : spec.bursts) {
        const auto [ti, si] = resolve_burst(spec, b.subtopic);
        const auto& topic = spec.topics[ti];
        const auto& sub = topic.subtopics[si];
        for (std::size_t k = 0; k < b.extra_posts; ++k) {
            const Instant ts = rng.between(b.center - b.width, b.center + b.width);
            emit(draw_text(rng, sub.keywords, spec.subtopic_words, topic.keywords, spec.topic_words), ts, topic.label,
                 sub.label);
        }
        planted += b.extra_posts;
    }
    const auto noise = static_cast<std::size_t>(std::llround(spec.noise_fraction * static_cast<double>(planted)));
    for (std::size_t k = 0; k < noise; ++k) {
        const Instant ts = rng.between(spec.start, spec.start + spec.span - 1);
        emit(draw_text(rng, spec.noise_keywords, spec.subtopic_words + spec.topic_words, {}, 0), ts, "", "");
    }

    std::sort(out.posts.begin(), out.posts.end(), [](const Post& a, const Post& b) {
        return a.timestamp != b.timestamp ? a.timestamp < b.timestamp : a.id < b.id;
    });
    return out;
}

double label_overlap(std::string_view a, std::string_view b) {
    const auto sa = token_set(a), sb = token_set(b);
    if (sa.empty() && sb.empty()) return 0.0;
    std::size_t inter = 0;
    for (const auto& t : sa) inter += sb.count(t);
    return static_cast<double>(inter) / static_cast<double>(sa.size() + sb.size() - inter);
}

RecoveryScore score_recovery(const Taxonomy& induced, const Taxonomy& truth) {
    RecoveryScore score;
    std::vector<std::pair<std::string, std::string>> topic_matches;
    match_level(induced, ids_at(induced, Level::topic), truth, ids_at(truth, Level::topic), topic_matches,
                score.spurious_labels);
    match_level(induced, ids_at(induced, Level::subtopic), truth, ids_at(truth, Level::subtopic), score.matches,
                score.spurious_labels);
    score.truth_subtopics = ids_at(truth, Level::subtopic).size();
    score.spurious = score.spurious_labels.size();
    score.recall = score.truth_subtopics == 0
                       ? 0.0
                       : static_cast<double>(score.matches.size()) / static_cast<double>(score.truth_subtopics);
    return score;
}

}  // namespace evotaxo
