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

#include "evotaxo/cli.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <regex>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "evotaxo/corpus.hpp"
#include "evotaxo/engine.hpp"
#include "evotaxo/errors.hpp"
#include "evotaxo/evaluation.hpp"
#include "evotaxo/synth.hpp"
#include "evotaxo/taxonomy.hpp"

namespace evotaxo::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Raised for a run directory that is missing, unusable, or would be clobbered.
class RunDirError : public Error {
public:
    using Error::Error;
};

void write_file(const fs::path& path, const std::string& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw RunDirError("cannot write " + path.string());
    f << bytes;
    if (!f) throw RunDirError("failed writing " + path.string());
}

std::string read_file(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw RunDirError("cannot read " + path.string());
    std::ostringstream buf;
    buf << f.rdbuf();
    return buf.str();
}

// Output files a command may own; --force clears exactly these.
const std::vector<std::string> kOwnedFiles = {
    "config.toml", "decisions.jsonl", "grounding.jsonl",      "windows.jsonl", "clusters.csv", "usage.json",
    "checkpoint.json", "corpus.jsonl", "metrics.json",     "metrics_detail.jsonl", "trends.csv", "trends.txt",
    "truth.json"};

void prepare_out_dir(const fs::path& dir, bool force) {
    if (dir.empty()) throw RunDirError("--out is required");
    if (fs::exists(dir)) {
        if (!fs::is_directory(dir)) throw RunDirError(dir.string() + " exists and is not a directory");
        if (!fs::is_empty(dir)) {
            if (!force) throw RunDirError(dir.string() + " is not empty; pass --force to overwrite");
            for (const auto& name : kOwnedFiles) fs::remove(dir / name);
            fs::remove_all(dir / "snapshots");
        }
    }
    fs::create_directories(dir);
}

void require_run_dir(const fs::path& dir) {
    if (dir.empty()) throw RunDirError("--out is required");
    if (!fs::is_directory(dir)) throw RunDirError("run directory " + dir.string() + " does not exist");
}

std::vector<Post> load_corpus(const fs::path& path) {
    try {
        return load_posts(path);
    } catch (const ParseError& e) {
        throw CorpusError(fmt::format("{}: {}", path.string(), e.what()));
    }
}

// Sampling happens before the relevance filter.
std::vector<Post> ingest(std::vector<Post> posts, const AppConfig& config, const Providers& providers,
                         std::ostream& err) {
    if (config.ingest.sample > 0) posts = sample_posts(posts, config.ingest.sample, config.ingest.sample_seed);
    if (!config.ingest.labels.empty()) {
        if (!providers.scorer) throw ConfigError("ingest.labels needs a scorer; set EVOTAXO_NLI_URL in live mode");
        const auto before = posts.size();
        posts = filter_posts(posts, *providers.scorer, config.ingest.labels, config.ingest.keep_label,
                             config.ingest.threshold);
        err << fmt::format("ingest: kept {} of {} posts\n", posts.size(), before);
    }
    return posts;
}

std::vector<std::pair<int, fs::path>> snapshot_files(const fs::path& run_dir) {
    std::vector<std::pair<int, fs::path>> out;
    const fs::path dir = RunPaths{run_dir}.snapshots();
    if (!fs::is_directory(dir)) return out;
    static const std::regex pattern(R"(window_(\d{4,})\.json)");
    for (const auto& e : fs::directory_iterator(dir)) {
        std::smatch m;
        const std::string name = e.path().filename().string();
        if (std::regex_match(name, m, pattern)) out.emplace_back(std::stoi(m[1].str()), e.path());
    }
    std::sort(out.begin(), out.end());
    return out;
}

AppConfig run_dir_config(const Args& args, const EnvLookup& env) {
    Args effective = args;
    if (!effective.config) {
        const fs::path echoed = RunPaths{args.out}.config();
        if (fs::exists(echoed)) effective.config = echoed;
    }
    return resolve_config(effective, env);
}

// Maps library errors to exit codes; everything funnels through here.
int guarded(std::ostream& err, const std::function<int()>& body) {
    try {
        return body();
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kConfigError;
    } catch (const CorpusError& e) {
        err << "corpus error: " << e.what() << "\n";
        return kCorpusError;
    } catch (const RunDirError& e) {
        err << "run directory error: " << e.what() << "\n";
        return kCorpusError;
    } catch (const ProviderError& e) {
        err << "provider outage: " << e.what() << "\n";
        return kProviderOutage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kFailure;
    }
}

}  // namespace

AppConfig resolve_config(const Args& args, const EnvLookup& env) {
    AppConfig c;
    if (args.config) {
        if (!fs::exists(*args.config)) throw ConfigError("config file " + args.config->string() + " does not exist");
        c = load_config(*args.config);
    }
    apply_env(c, env);
    const auto& o = args.overrides;
    if (o.granularity) c.run.granularity = parse_granularity(*o.granularity);
    if (o.lambda) c.run.consolidation.lambda = *o.lambda;
    if (o.min_cluster_size) c.run.consolidation.min_cluster_size = *o.min_cluster_size;
    if (o.providers) c.providers.mode = *o.providers;
    if (o.scripts) c.providers.scripts = *o.scripts;
    if (o.dump_clusters) c.run.dump_clusters = true;
    if (o.sample) c.ingest.sample = *o.sample;
    if (!c.providers.scripts.empty()) c.providers.scripts = fs::absolute(c.providers.scripts).lexically_normal();
    c.run.halt_after = args.halt_after;
    c.validate();
    return c;
}

int cmd_seed(const Args& args, const EnvLookup& env, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        const AppConfig config = resolve_config(args, env);
        const Providers providers = make_providers(config.providers);
        prepare_out_dir(args.out, args.force);
        const Taxonomy tax = seed_taxonomy(config.run.root_label, *providers.model);
        const RunPaths paths{args.out};
        fs::create_directories(paths.snapshots());
        write_file(paths.snapshot(0), snapshot(tax));
        write_file(paths.config(), render_config(config));
        write_file(paths.usage(), to_json(providers.ledger->totals()).dump(2) + "\n");
        const auto stats = tax.stats();
        out << fmt::format("seeded {} topics, {} subtopics into {}\n", stats.topic_count, stats.subtopic_count,
                           paths.snapshot(0).string());
        return kOk;
    });
}

int cmd_run(const Args& args, const EnvLookup& env, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        const AppConfig config = resolve_config(args, env);
        if (!args.corpus) throw CorpusError("--corpus is required");
        auto posts = load_corpus(*args.corpus);
        const Providers providers = make_providers(config.providers);
        prepare_out_dir(args.out, args.force);
        write_file(RunPaths{args.out}.config(), render_config(config));
        posts = ingest(std::move(posts), config, providers, err);
        const RunResult result = run(posts, config.run, providers, args.out);
        const auto stats = result.taxonomy.stats();
        out << fmt::format("{} windows, {} topics, {} subtopics, {} tokens{}\n", result.windows.size(),
                           stats.topic_count, stats.subtopic_count, format_millions(result.usage.grand().total()),
                           result.halted ? " (halted)" : "");
        return kOk;
    });
}

int cmd_resume(const Args& args, const EnvLookup& env, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        require_run_dir(args.out);
        const AppConfig config = run_dir_config(args, env);
        const RunPaths paths{args.out};
        const auto posts = load_corpus(args.corpus.value_or(paths.corpus()));
        const Providers providers = make_providers(config.providers);
        const RunResult result = resume(args.out, posts, config.run, providers);
        const auto stats = result.taxonomy.stats();
        out << fmt::format("resumed: {} windows, {} topics, {} subtopics{}\n", result.windows.size(),
                           stats.topic_count, stats.subtopic_count, result.halted ? " (halted)" : "");
        return kOk;
    });
}

int cmd_evaluate(const Args& args, const EnvLookup& env, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        require_run_dir(args.out);
        const auto snaps = snapshot_files(args.out);
        if (snaps.empty()) throw RunDirError("no snapshot in " + args.out.string());
        const AppConfig config = run_dir_config(args, env);
        const RunPaths paths{args.out};
        const auto posts = load_corpus(args.corpus.value_or(paths.corpus()));
        const Taxonomy tax = restore(read_file(snaps.back().second));
        const Providers providers = make_providers(config.providers);
        EvalOptions options;
        options.judge_cap = config.evaluation.judge_cap;
        options.seed = config.evaluation.seed;
        options.workers = config.evaluation.workers;
        options.judges = config.evaluation.judges;
        const MetricReport report = evaluate(tax, posts, providers, options);
        write_file(args.out / "metrics.json", to_json(report).dump(2) + "\n");
        std::ostringstream detail;
        write_metric_details(detail, report);
        write_file(args.out / "metrics_detail.jsonl", detail.str());
        for (const auto& notice : report.notices) err << "notice: " << notice << "\n";
        out << fmt::format("evaluated window {} snapshot: {} posts, {} leaves\n", snaps.back().first, report.posts,
                           report.leaves);
        return kOk;
    });
}

int cmd_report(const Args& args, const EnvLookup&, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        require_run_dir(args.out);
        const auto files = snapshot_files(args.out);
        if (files.empty()) throw RunDirError("no snapshot in " + args.out.string());
        std::vector<std::pair<int, Taxonomy>> snaps;
        for (const auto& [w, path] : files) snaps.emplace_back(w, restore(read_file(path)));
        const auto grounding = snaps.back().second.sorted_grounding();
        const auto rows = trend_report(snaps, grounding);
        std::ostringstream csv;
        write_trends_csv(csv, rows);
        write_file(args.out / "trends.csv", csv.str());
        const std::string summary = trend_summary(rows);
        write_file(args.out / "trends.txt", summary);
        out << summary;
        return kOk;
    });
}

int cmd_synth(const Args& args, const EnvLookup&, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        if (!args.config) throw ConfigError("--config must name a synth spec");
        const SynthSpec spec = load_synth_spec(*args.config);
        prepare_out_dir(args.out, args.force);
        const SynthOutput data = generate(spec);
        std::ostringstream corpus;
        write_posts(corpus, data.posts);
        write_file(args.out / "corpus.jsonl", corpus.str());
        write_file(args.out / "truth.json", snapshot(data.truth));
        out << fmt::format("wrote {} posts and a {}-subtopic truth taxonomy to {}\n", data.posts.size(),
                           data.truth.stats().subtopic_count, args.out.string());
        return kOk;
    });
}

int main(const std::vector<std::string>& argv, const EnvLookup& env, std::ostream& out, std::ostream& err) {
    CLI::App app{"Incremental, time-aware taxonomy construction over timestamped posts", "evotaxo"};
    app.require_subcommand(1);
    Args args;
    std::string out_dir, corpus, config, scripts;

    auto add_common = [&](CLI::App* sub, bool needs_corpus, bool engine_flags) {
        sub->add_option("--out", out_dir, "Run (or output) directory")->required();
        sub->add_option("--config", config, "TOML config file");
        if (needs_corpus) sub->add_option("--corpus", corpus, "Posts as JSON lines");
        if (!engine_flags) return;
        sub->add_option("--granularity", args.overrides.granularity, "year | quarter | month | fixed-span");
        sub->add_option("--lambda", args.overrides.lambda, "Temporal weight of the joint view, in [0, 1]");
        sub->add_option("--min-cluster-size", args.overrides.min_cluster_size, "Smallest candidate cluster");
        sub->add_option("--providers", args.overrides.providers, "mock | live");
        sub->add_option("--scripts", scripts, "Mock provider script (JSON)");
        sub->add_flag("--dump-clusters", args.overrides.dump_clusters, "Append candidate clusters to clusters.csv");
        sub->add_option("--sample", args.overrides.sample, "Sample this many posts before filtering");
    };

    auto* seed = app.add_subcommand("seed", "Seed a taxonomy and write it as the window-0 snapshot");
    add_common(seed, false, true);
    seed->add_flag("--force", args.force, "Overwrite a non-empty output directory");
    auto* run_cmd = app.add_subcommand("run", "Run every window of a corpus");
    add_common(run_cmd, true, true);
    run_cmd->add_flag("--force", args.force, "Overwrite a non-empty output directory");
    run_cmd->add_option("--halt-after", args.halt_after, "Stop after this window, keeping the checkpoint");
    auto* resume_cmd = app.add_subcommand("resume", "Continue a run from its checkpoint");
    add_common(resume_cmd, true, true);
    resume_cmd->add_option("--halt-after", args.halt_after, "Stop after this window, keeping the checkpoint");
    auto* eval_cmd = app.add_subcommand("evaluate", "Score the last snapshot of a run");
    add_common(eval_cmd, true, true);
    auto* report_cmd = app.add_subcommand("report", "Per-window topic trends of a run");
    add_common(report_cmd, false, false);
    auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic corpus and its truth taxonomy");
    add_common(synth_cmd, false, false);
    synth_cmd->add_flag("--force", args.force, "Overwrite a non-empty output directory");

    std::vector<std::string> rev(argv.rbegin(), argv.rend());
    if (!rev.empty()) rev.pop_back();  // program name
    try {
        app.parse(rev);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kOk;
    } catch (const CLI::ParseError& e) {
        err << e.what() << "\n";
        const auto* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
        err << sub->help();
        return kConfigError;
    }

    args.out = out_dir;
    if (!corpus.empty()) args.corpus = corpus;
    if (!config.empty()) args.config = config;
    if (!scripts.empty()) args.overrides.scripts = scripts;

    const auto* chosen = app.get_subcommands().front();
    if (chosen == seed) return cmd_seed(args, env, out, err);
    if (chosen == run_cmd) return cmd_run(args, env, out, err);
    if (chosen == resume_cmd) return cmd_resume(args, env, out, err);
    if (chosen == eval_cmd) return cmd_evaluate(args, env, out, err);
    if (chosen == report_cmd) return cmd_report(args, env, out, err);
    return cmd_synth(args, env, out, err);
}

}  // namespace evotaxo::cli
