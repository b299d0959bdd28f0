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
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "evotaxo/engine.hpp"
#include "evotaxo/providers.hpp"

namespace evotaxo {

struct IngestConfig {
    std::vector<std::string> labels;  // empty disables the relevance filter
    std::string keep_label;
    double threshold = 0.75;
    std::size_t sample = 0;  // 0 keeps every post
    std::uint64_t sample_seed = 0;
};

struct EvalConfig {
    std::size_t judge_cap = 0;
    std::size_t workers = 8;
    std::uint64_t seed = 0;
    bool judges = true;
};

struct AppConfig {
    RunConfig run;
    ProviderConfig providers;
    IngestConfig ingest;
    EvalConfig evaluation;

    /// Throws ConfigError.
    void validate() const;
};

/// Parses the TOML form. Unknown sections and keys are errors. Relative
/// script paths resolve against `base_dir`. The API key is never read from
/// the file; it comes from the environment only.
AppConfig parse_config(std::string_view toml_text, const std::filesystem::path& base_dir = {});
AppConfig load_config(const std::filesystem::path& path);

using EnvLookup = std::function<std::optional<std::string>(const char*)>;
/// Reads EVOTAXO_LLM_URL, EVOTAXO_LLM_KEY, EVOTAXO_LLM_MODEL, EVOTAXO_EMBED_URL,
/// EVOTAXO_EMBED_MODEL and EVOTAXO_NLI_URL. Set variables override file values.
void apply_env(AppConfig& config, const EnvLookup& lookup);
/// apply_env over the process environment.
void apply_process_env(AppConfig& config);

/// TOML echo of the effective configuration with the API key redacted.
std::string render_config(const AppConfig& config);

}  // namespace evotaxo
