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

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "evotaxo/config.hpp"

namespace evotaxo::cli {

enum ExitCode : int {
    kOk = 0,
    kFailure = 1,
    kConfigError = 2,
    kCorpusError = 3,  // also a missing or unusable run directory
    kProviderOutage = 4,
};

/// Command-line overrides; unset fields leave the file and environment values alone.
struct Overrides {
    std::optional<std::string> granularity;
    std::optional<double> lambda;
    std::optional<std::size_t> min_cluster_size;
    std::optional<std::string> providers;
    std::optional<std::filesystem::path> scripts;
    bool dump_clusters = false;
    std::optional<std::size_t> sample;
};

struct Args {
    std::optional<std::filesystem::path> corpus;
    std::optional<std::filesystem::path> config;
    std::filesystem::path out;
    Overrides overrides;
    bool force = false;
    std::optional<int> halt_after;  // testing aid: stop after this window as if killed
};

/// Defaults, then the config file, then EVOTAXO_* variables, then flags.
AppConfig resolve_config(const Args& args, const EnvLookup& env);

/// Seeds a taxonomy and writes it as the window-0 snapshot of `out`.
int cmd_seed(const Args& args, const EnvLookup& env, std::ostream& out, std::ostream& err);
/// Ingests the corpus and runs every window into `out`.
int cmd_run(const Args& args, const EnvLookup& env, std::ostream& out, std::ostream& err);
/// Continues the run in `out` from its checkpoint with its echoed config.
int cmd_resume(const Args& args, const EnvLookup& env, std::ostream& out, std::ostream& err);
/// Scores the last snapshot of run `out`; writes metrics.json and metrics_detail.jsonl.
int cmd_evaluate(const Args& args, const EnvLookup& env, std::ostream& out, std::ostream& err);
/// Writes trends.csv and trends.txt for run `out` and prints the summary.
int cmd_report(const Args& args, const EnvLookup& env, std::ostream& out, std::ostream& err);
/// Reads a synth spec (`--config`) and writes corpus.jsonl and truth.json into `out`.
int cmd_synth(const Args& args, const EnvLookup& env, std::ostream& out, std::ostream& err);

/// Parses `argv` (program name first) and dispatches to a command.
int main(const std::vector<std::string>& argv, const EnvLookup& env, std::ostream& out, std::ostream& err);

}  // namespace evotaxo::cli
