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
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "evotaxo/corpus.hpp"
#include "evotaxo/taxonomy.hpp"

namespace evotaxo {

struct SynthSubtopic {
    std::string label;
    std::vector<std::string> keywords;
    std::optional<std::size_t> posts;  // overrides posts_per_subtopic; 0 makes a burst-only subtopic
};

struct SynthTopic {
    std::string label;
    std::vector<std::string> keywords;
    std::vector<SynthSubtopic> subtopics;
};

struct SynthBurst {
    std::string subtopic;  // "Topic>Subtopic" or a subtopic label unique across topics
    Instant center = 0;
    Instant width = 0;  // posts fall in [center - width, center + width]
    std::size_t extra_posts = 0;
};

struct SynthSpec {
    std::uint64_t seed = 0;
    std::string root_label = "Synthetic";
    Instant start = 0;
    Instant span = 0;  // seconds; timestamps fall in [start, start + span)
    std::size_t posts_per_subtopic = 20;
    std::size_t subtopic_words = 6;  // drawn from the subtopic pool
    std::size_t topic_words = 2;     // drawn from the topic pool
    double noise_fraction = 0.0;
    std::vector<std::string> noise_keywords;
    std::vector<SynthTopic> topics;
    std::vector<SynthBurst> bursts;

    /// Throws ConfigError: pools must be nonempty and pairwise disjoint across
    /// subtopics, labels unique, bursts inside the span with width < span.
    void validate() const;
};

/// Parses the TOML form. Timestamps accept RFC 3339 strings or epoch seconds;
/// `span_days` and `width_hours` are accepted as conveniences.
SynthSpec parse_synth_spec(std::string_view toml_text);
SynthSpec load_synth_spec(const std::filesystem::path& path);

struct SynthOutput {
    std::vector<Post> posts;  // sorted by (timestamp, id)
    Taxonomy truth = Taxonomy::init("Synthetic");
};

/// Noise posts number round(noise_fraction * planted posts), planted posts
/// being subtopic and burst posts together. Same spec, same bytes.
SynthOutput generate(const SynthSpec& spec);

struct RecoveryScore {
    double recall = 0.0;
    std::size_t truth_subtopics = 0;
    std::vector<std::pair<std::string, std::string>> matches;  // (truth label, induced label)
    std::size_t spurious = 0;
    std::vector<std::string> spurious_labels;
};

/// Jaccard overlap of lower-cased alphanumeric token sets.
double label_overlap(std::string_view a, std::string_view b);

/// Greedy one-to-one matching at overlap >= 0.5, best pairs first, separately
/// for topics and subtopics. Recall covers subtopics; spurious counts induced
/// topics and subtopics left unmatched.
RecoveryScore score_recovery(const Taxonomy& induced, const Taxonomy& truth);

}  // namespace evotaxo
