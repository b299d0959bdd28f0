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

#include "evotaxo/config.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <toml.hpp>

#include "evotaxo/errors.hpp"
#include "toml_read.hpp"

namespace evotaxo {

namespace {

const detail::TomlReader kRead("config");

constexpr std::string_view kRedacted = "<redacted>";

const toml::table* section(const toml::table& root, std::string_view name,
                           std::initializer_list<std::string_view> keys) {
    const auto* node = root.get(name);
    if (!node) return nullptr;
    const auto& t = kRead.table(*node, name);
    kRead.reject_unknown(t, keys, fmt::format("[{}]", name));
    return &t;
}

template <typename F>
void with(const toml::table* t, std::string_view key, F&& apply) {
    if (!t) return;
    if (const auto* n = t->get(key)) apply(*n, fmt::format("{}", key));
}

}  // namespace

void AppConfig::validate() const {
    run.validate();
    if (providers.mode != "mock" && providers.mode != "live")
        throw ConfigError("providers.mode must be 'mock' or 'live', got '" + providers.mode + "'");
    if (providers.retry.attempts < 1) throw ConfigError("providers.retry_attempts must be at least 1");
    if (providers.retry.backoff.count() < 0) throw ConfigError("providers.retry_backoff_ms must be nonnegative");
    if (!ingest.labels.empty()) {
        if (ingest.keep_label.empty()) throw ConfigError("ingest.keep_label is required when ingest.labels is set");
        if (std::find(ingest.labels.begin(), ingest.labels.end(), ingest.keep_label) == ingest.labels.end())
            throw ConfigError("ingest.keep_label '" + ingest.keep_label + "' is not among ingest.labels");
    }
    if (!(ingest.threshold >= 0.0 && ingest.threshold < 1.0))
        throw ConfigError("ingest.threshold must lie in [0, 1)");
    if (evaluation.workers < 1) throw ConfigError("evaluation.workers must be at least 1");
}

AppConfig parse_config(std::string_view toml_text, const std::filesystem::path& base_dir) {
    const toml::table root = kRead.parse(toml_text);
    kRead.reject_unknown(root,
                         {"root_label", "window", "consolidation", "backlog", "view", "engine", "providers", "ingest",
                          "evaluation"},
                         "the top level");
    AppConfig c;
    if (const auto* n = root.get("root_label")) c.run.root_label = kRead.string(*n, "root_label");

    const auto* window = section(root, "window", {"granularity", "span_seconds"});
    with(window, "granularity",
         [&](auto& n, auto k) { c.run.granularity = parse_granularity(kRead.string(n, k)); });
    with(window, "span_seconds", [&](auto& n, auto k) { c.run.span_seconds = kRead.number<Instant>(n, k); });

    const auto* cons = section(root, "consolidation",
                               {"lambda", "min_cluster_size", "min_samples", "allow_single_cluster", "dedup_jaccard"});
    auto& cp = c.run.consolidation;
    with(cons, "lambda", [&](auto& n, auto k) { cp.lambda = kRead.number<double>(n, k); });
    with(cons, "min_cluster_size", [&](auto& n, auto k) { cp.min_cluster_size = kRead.number<std::size_t>(n, k); });
    with(cons, "min_samples", [&](auto& n, auto k) { cp.min_samples = kRead.number<std::size_t>(n, k); });
    with(cons, "allow_single_cluster", [&](auto& n, auto k) { cp.allow_single_cluster = kRead.boolean(n, k); });
    with(cons, "dedup_jaccard", [&](auto& n, auto k) { cp.dedup_jaccard = kRead.number<double>(n, k); });

    const auto* backlog = section(root, "backlog", {"retention"});
    with(backlog, "retention", [&](auto& n, auto k) { c.run.retention = kRead.number<int>(n, k); });

    const auto* view = section(root, "view", {"budget"});
    with(view, "budget", [&](auto& n, auto k) { c.run.view_budget = kRead.number<std::size_t>(n, k); });

    const auto* engine = section(root, "engine", {"workers", "dump_clusters"});
    with(engine, "workers", [&](auto& n, auto k) { c.run.workers = kRead.number<std::size_t>(n, k); });
    with(engine, "dump_clusters", [&](auto& n, auto k) { c.run.dump_clusters = kRead.boolean(n, k); });

    const auto* prov = section(root, "providers",
                               {"mode", "scripts", "llm_url", "llm_model", "embed_url", "embed_model", "nli_url",
                                "retry_attempts", "retry_backoff_ms"});
    auto& pc = c.providers;
    with(prov, "mode", [&](auto& n, auto k) { pc.mode = kRead.string(n, k); });
    with(prov, "scripts", [&](auto& n, auto k) {
        std::filesystem::path p = kRead.string(n, k);
        pc.scripts = p.is_relative() && !base_dir.empty() ? base_dir / p : p;
    });
    with(prov, "llm_url", [&](auto& n, auto k) { pc.llm_url = kRead.string(n, k); });
    with(prov, "llm_model", [&](auto& n, auto k) { pc.llm_model = kRead.string(n, k); });
    with(prov, "embed_url", [&](auto& n, auto k) { pc.embed_url = kRead.string(n, k); });
    with(prov, "embed_model", [&](auto& n, auto k) { pc.embed_model = kRead.string(n, k); });
    with(prov, "nli_url", [&](auto& n, auto k) { pc.nli_url = kRead.string(n, k); });
    with(prov, "retry_attempts", [&](auto& n, auto k) { pc.retry.attempts = kRead.number<int>(n, k); });
    with(prov, "retry_backoff_ms",
         [&](auto& n, auto k) { pc.retry.backoff = std::chrono::milliseconds(kRead.number<std::int64_t>(n, k)); });

    const auto* ingest = section(root, "ingest", {"labels", "keep_label", "threshold", "sample", "sample_seed"});
    auto& ic = c.ingest;
    with(ingest, "labels", [&](auto& n, auto k) { ic.labels = kRead.strings(n, k); });
    with(ingest, "keep_label", [&](auto& n, auto k) { ic.keep_label = kRead.string(n, k); });
    with(ingest, "threshold", [&](auto& n, auto k) { ic.threshold = kRead.number<double>(n, k); });
    with(ingest, "sample", [&](auto& n, auto k) { ic.sample = kRead.number<std::size_t>(n, k); });
    with(ingest, "sample_seed", [&](auto& n, auto k) { ic.sample_seed = kRead.number<std::uint64_t>(n, k); });

    const auto* eval = section(root, "evaluation", {"judge_cap", "workers", "seed", "judges"});
    auto& ec = c.evaluation;
    with(eval, "judge_cap", [&](auto& n, auto k) { ec.judge_cap = kRead.number<std::size_t>(n, k); });
    with(eval, "workers", [&](auto& n, auto k) { ec.workers = kRead.number<std::size_t>(n, k); });
    with(eval, "seed", [&](auto& n, auto k) { ec.seed = kRead.number<std::uint64_t>(n, k); });
    with(eval, "judges", [&](auto& n, auto k) { ec.judges = kRead.boolean(n, k); });

    c.validate();
    return c;
}

AppConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str(), path.parent_path());
}

void apply_env(AppConfig& config, const EnvLookup& lookup) {
    auto set = [&](const char* name, std::string& field) {
        if (auto v = lookup(name); v && !v->empty()) field = *v;
    };
    set("EVOTAXO_LLM_URL", config.providers.llm_url);
    set("EVOTAXO_LLM_KEY", config.providers.llm_key);
    set("EVOTAXO_LLM_MODEL", config.providers.llm_model);
    set("EVOTAXO_EMBED_URL", config.providers.embed_url);
    set("EVOTAXO_EMBED_MODEL", config.providers.embed_model);
    set("EVOTAXO_NLI_URL", config.providers.nli_url);
}

void apply_process_env(AppConfig& config) {
    apply_env(config, [](const char* name) -> std::optional<std::string> {
        if (const char* v = std::getenv(name)) return std::string(v);
        return std::nullopt;
    });
}

std::string render_config(const AppConfig& c) {
    const auto& cp = c.run.consolidation;
    toml::table window{{"granularity", std::string(to_string(c.run.granularity))},
                       {"span_seconds", c.run.span_seconds}};
    toml::table cons{{"lambda", cp.lambda},
                     {"min_cluster_size", static_cast<std::int64_t>(cp.min_cluster_size)},
                     {"min_samples", static_cast<std::int64_t>(cp.min_samples)},
                     {"allow_single_cluster", cp.allow_single_cluster},
                     {"dedup_jaccard", cp.dedup_jaccard}};
    toml::table prov{{"mode", c.providers.mode},
                     {"scripts", c.providers.scripts.string()},
                     {"llm_url", c.providers.llm_url},
                     {"llm_model", c.providers.llm_model},
                     {"embed_url", c.providers.embed_url},
                     {"embed_model", c.providers.embed_model},
                     {"nli_url", c.providers.nli_url},
                     {"retry_attempts", c.providers.retry.attempts},
                     {"retry_backoff_ms", static_cast<std::int64_t>(c.providers.retry.backoff.count())}};
    toml::array labels;
    for (const auto& l : c.ingest.labels) labels.push_back(l);
    toml::table ingest{{"labels", labels},
                       {"keep_label", c.ingest.keep_label},
                       {"threshold", c.ingest.threshold},
                       {"sample", static_cast<std::int64_t>(c.ingest.sample)},
                       {"sample_seed", static_cast<std::int64_t>(c.ingest.sample_seed)}};
    toml::table eval{{"judge_cap", static_cast<std::int64_t>(c.evaluation.judge_cap)},
                     {"workers", static_cast<std::int64_t>(c.evaluation.workers)},
                     {"seed", static_cast<std::int64_t>(c.evaluation.seed)},
                     {"judges", c.evaluation.judges}};
    toml::table root{{"root_label", c.run.root_label},
                     {"window", window},
                     {"consolidation", cons},
                     {"backlog", toml::table{{"retention", c.run.retention}}},
                     {"view", toml::table{{"budget", static_cast<std::int64_t>(c.run.view_budget)}}},
                     {"engine", toml::table{{"workers", static_cast<std::int64_t>(c.run.workers)},
                                            {"dump_clusters", c.run.dump_clusters}}},
                     {"providers", prov},
                     {"ingest", ingest},
                     {"evaluation", eval}};
    std::ostringstream out;
    // The key itself is never written; only whether one was supplied.
    out << "# llm_key: " << (c.providers.llm_key.empty() ? "unset" : kRedacted) << "\n";
    out << root << "\n";
    return out.str();
}

}  // namespace evotaxo
