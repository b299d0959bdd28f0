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
#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace evotaxo {

/// Seconds since the Unix epoch, UTC.
using Instant = std::int64_t;

struct Post {
    std::string id;
    std::string text;
    Instant timestamp = 0;
    std::map<std::string, std::string> meta;

    friend bool operator==(const Post&, const Post&) = default;
};

enum class Granularity { year, quarter, month, fixed_span };

std::string_view to_string(Granularity g);
Granularity parse_granularity(std::string_view s);

/// Half-open interval [start, end).
struct TimeWindow {
    int index = 1;
    Instant start = 0;
    Instant end = 0;
    Granularity granularity = Granularity::month;

    bool contains(Instant t) const { return t >= start && t < end; }
    friend bool operator==(const TimeWindow&, const TimeWindow&) = default;
};

struct WindowSlice {
    TimeWindow window;
    std::vector<Post> posts;
};

/// Parses JSON Lines with required keys `id`, `text`, `created_utc`; other
/// keys are kept in `meta` (strings verbatim, everything else as compact JSON).
/// Result is sorted by (timestamp, id). Throws ParseError / CorpusError.
std::vector<Post> parse_posts(std::istream& in);
std::vector<Post> load_posts(const std::filesystem::path& path);

void write_posts(std::ostream& out, std::span<const Post> posts);

class Scorer;

/// Keeps posts whose probability for `keep_label` is strictly greater than
/// `threshold`. Order is preserved.
std::vector<Post> filter_posts(std::span<const Post> posts, Scorer& scorer,
                               const std::vector<std::string>& labels,
                               const std::string& keep_label, double threshold);

/// Deterministic uniform sample of `count` posts without replacement, returned
/// in the input order. `count >= posts.size()` returns everything.
std::vector<Post> sample_posts(std::span<const Post> posts, std::size_t count, std::uint64_t seed);

/// Splits a timestamp-sorted stream into contiguous windows. Calendar
/// granularities are aligned in UTC; fixed_span windows start at the first
/// post and last `span_seconds` each. Empty periods between the first and last
/// post are emitted as empty windows.
std::vector<WindowSlice> partition_windows(std::span<const Post> posts, Granularity granularity,
                                           Instant span_seconds = 0);

}  // namespace evotaxo
