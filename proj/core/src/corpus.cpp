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

#include "evotaxo/corpus.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "evotaxo/errors.hpp"
#include "evotaxo/providers.hpp"
#include "evotaxo/rng.hpp"
#include "evotaxo/text.hpp"

namespace evotaxo {

using nlohmann::json;

std::string_view to_string(Granularity g) {
    switch (g) {
        case Granularity::year: return "year";
        case Granularity::quarter: return "quarter";
        case Granularity::month: return "month";
        case Granularity::fixed_span: return "fixed-span";
    }
    return "month";
}

Granularity parse_granularity(std::string_view s) {
    if (s == "year") return Granularity::year;
    if (s == "quarter") return Granularity::quarter;
    if (s == "month") return Granularity::month;
    if (s == "fixed-span" || s == "fixed_span") return Granularity::fixed_span;
    throw ConfigError("unknown window granularity '" + std::string(s) + "'");
}

std::vector<Post> parse_posts(std::istream& in) {
    std::vector<Post> posts;
    std::set<std::string> seen;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (text::trim(line).empty()) continue;
        json obj;
        try {
            obj = json::parse(line);
        } catch (const json::parse_error& e) {
            throw ParseError(std::string("invalid JSON: ") + e.what(), lineno);
        }
        if (!obj.is_object()) throw ParseError("record is not a JSON object", lineno);
        auto require = [&](const char* key) -> const json& {
            auto it = obj.find(key);
            if (it == obj.end()) throw ParseError(std::string("missing field '") + key + "'", lineno);
            return *it;
        };
        const json& id = require("id");
        const json& body = require("text");
        const json& created = require("created_utc");
        if (!id.is_string() || id.get_ref<const std::string&>().empty())
            throw ParseError("'id' must be a nonempty string", lineno);
        if (!body.is_string()) throw ParseError("'text' must be a string", lineno);
        if (text::trim(body.get_ref<const std::string&>()).empty())
            throw ParseError("'text' is empty after trimming", lineno);
        if (!created.is_number_integer()) throw ParseError("'created_utc' must be an integer", lineno);

        Post post;
        post.id = id.get<std::string>();
        post.text = body.get<std::string>();
        post.timestamp = created.get<Instant>();
        for (const auto& [key, value] : obj.items()) {
            if (key == "id" || key == "text" || key == "created_utc") continue;
            post.meta[key] = value.is_string() ? value.get<std::string>() : value.dump();
        }
        if (!seen.insert(post.id).second) throw CorpusError("duplicate post id '" + post.id + "'");
        posts.push_back(std::move(post));
    }
    std::stable_sort(posts.begin(), posts.end(), [](const Post& a, const Post& b) {
        return a.timestamp != b.timestamp ? a.timestamp < b.timestamp : a.id < b.id;
    });
    return posts;
}

std::vector<Post> load_posts(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw CorpusError("cannot open corpus file " + path.string());
    return parse_posts(in);
}

void write_posts(std::ostream& out, std::span<const Post> posts) {
    for (const auto& p : posts) {
        json obj = json::object();
        for (const auto& [k, v] : p.meta) obj[k] = v;
        obj["id"] = p.id;
        obj["text"] = p.text;
        obj["created_utc"] = p.timestamp;
        out << obj.dump() << '\n';
    }
}

std::vector<Post> filter_posts(std::span<const Post> posts, Scorer& scorer, const std::vector<std::string>& labels,
                               const std::string& keep_label, double threshold) {
    if (!(threshold >= 0.0 && threshold <= 1.0)) throw ConfigError("filter threshold must lie in [0,1]");
    if (labels.empty()) throw ConfigError("filter labels must be nonempty");
    auto keep = std::find(labels.begin(), labels.end(), keep_label);
    if (keep == labels.end()) throw ConfigError("keep label '" + keep_label + "' is not among the filter labels");
    const auto keep_index = static_cast<std::size_t>(keep - labels.begin());

    std::vector<Post> out;
    for (const auto& post : posts) {
        std::vector<double> probs;
        try {
            probs = scorer.classify(post.text, labels);
        } catch (const ProviderError& e) {
            throw ProviderError("classification failed for post '" + post.id + "': " + e.what(), e.retryable());
        }
        if (probs.size() != labels.size())
            throw ProviderError("classifier returned " + std::to_string(probs.size()) + " probabilities for post '" +
                                    post.id + "'",
                                false);
        if (probs[keep_index] > threshold) out.push_back(post);
    }
    return out;
}

std::vector<Post> sample_posts(std::span<const Post> posts, std::size_t count, std::uint64_t seed) {
    if (count >= posts.size()) return {posts.begin(), posts.end()};
    Rng rng(seed);
    std::vector<std::size_t> idx(posts.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    // Partial Fisher-Yates.
    for (std::size_t i = 0; i < count; ++i)
        std::swap(idx[i], idx[i + static_cast<std::size_t>(rng.below(idx.size() - i))]);
    idx.resize(count);
    std::sort(idx.begin(), idx.end());
    std::vector<Post> out;
    out.reserve(count);
    for (auto i : idx) out.push_back(posts[i]);
    return out;
}

namespace {

using namespace std::chrono;

Instant to_instant(const year_month_day& ymd) {
    return duration_cast<seconds>(sys_days{ymd}.time_since_epoch()).count();
}

year_month_day civil(Instant t) {
    return year_month_day{floor<days>(sys_seconds{seconds{t}})};
}

/// Start of the calendar period containing t.
year_month_day period_start(Instant t, Granularity g) {
    const auto ymd = civil(t);
    switch (g) {
        case Granularity::year: return ymd.year() / January / 1;
        case Granularity::quarter: {
            const unsigned m = static_cast<unsigned>(ymd.month());
            return ymd.year() / month{((m - 1) / 3) * 3 + 1} / 1;
        }
        default: return ymd.year() / ymd.month() / 1;
    }
}

year_month_day next_period(const year_month_day& start, Granularity g) {
    switch (g) {
        case Granularity::year: return start + years{1};
        case Granularity::quarter: return start + months{3};
        default: return start + months{1};
    }
}

}  // namespace

std::vector<WindowSlice> partition_windows(std::span<const Post> posts, Granularity granularity, Instant span_seconds) {
    std::vector<WindowSlice> out;
    if (posts.empty()) return out;
    if (!std::is_sorted(posts.begin(), posts.end(),
                        [](const Post& a, const Post& b) { return a.timestamp < b.timestamp; }))
        throw CorpusError("partition_windows requires posts sorted by timestamp");

    const Instant last = posts.back().timestamp;
    std::size_t cursor = 0;
    auto fill = [&](TimeWindow w) {
        WindowSlice slice{w, {}};
        while (cursor < posts.size() && posts[cursor].timestamp < w.end) slice.posts.push_back(posts[cursor++]);
        out.push_back(std::move(slice));
    };

    if (granularity == Granularity::fixed_span) {
        if (span_seconds <= 0) throw ConfigError("fixed-span windows need a positive span");
        Instant start = posts.front().timestamp;
        int index = 1;
        while (start <= last) {
            fill(TimeWindow{index++, start, start + span_seconds, granularity});
            start += span_seconds;
        }
        return out;
    }

    auto start = period_start(posts.front().timestamp, granularity);
    int index = 1;
    while (to_instant(start) <= last) {
        const auto end = next_period(start, granularity);
        fill(TimeWindow{index++, to_instant(start), to_instant(end), granularity});
        start = end;
    }
    return out;
}

}  // namespace evotaxo
