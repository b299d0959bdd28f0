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

#include <sstream>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "evotaxo/cli.hpp"
#include "support.hpp"

namespace evotaxo {
namespace {

using json = nlohmann::json;
using testing::TempDir;
using testing::data_dir;
using testing::read_file;
using testing::write_file;

struct Outcome {
    int code;
    std::string out, err;
};

Outcome invoke(std::vector<std::string> argv, const EnvLookup& env = testing::empty_env()) {
    argv.insert(argv.begin(), "evotaxo");
    std::ostringstream out, err;
    const int code = cli::main(argv, env, out, err);
    return {code, out.str(), err.str()};
}

std::string golden(const char* name) { return (data_dir() / "golden" / name).string(); }

TEST(Cli, HelpAndUsageErrors) {
    EXPECT_EQ(invoke({"--help"}).code, cli::kOk);
    EXPECT_NE(invoke({"--help"}).out.find("run"), std::string::npos);
    EXPECT_EQ(invoke({}).code, cli::kConfigError);
    EXPECT_EQ(invoke({"dance"}).code, cli::kConfigError);
    const auto missing_out = invoke({"run", "--corpus", golden("corpus.jsonl")});
    EXPECT_EQ(missing_out.code, cli::kConfigError);
    EXPECT_NE(missing_out.err.find("--out"), std::string::npos);
    TempDir dir;
    EXPECT_EQ(invoke({"run", "--out", dir.path().string(), "--lambda", "abc"}).code, cli::kConfigError);
}

TEST(Cli, ConfigPrecedence) {
    TempDir dir;
    write_file(dir / "c.toml", "[consolidation]\nlambda = 0.2\nmin_cluster_size = 4\n[providers]\nllm_url = \"http://file\"\n");
    cli::Args args;
    args.config = dir / "c.toml";
    auto env = [](const char* name) -> std::optional<std::string> {
        if (std::string_view(name) == "EVOTAXO_LLM_URL") return "http://env";
        return std::nullopt;
    };
    auto c = cli::resolve_config(args, env);
    EXPECT_EQ(c.run.consolidation.lambda, 0.2);
    EXPECT_EQ(c.providers.llm_url, "http://env");
    args.overrides.lambda = 0.7;
    args.overrides.granularity = "quarter";
    args.halt_after = 2;
    c = cli::resolve_config(args, env);
    EXPECT_EQ(c.run.consolidation.lambda, 0.7);
    EXPECT_EQ(c.run.consolidation.min_cluster_size, 4u);
    EXPECT_EQ(c.run.granularity, Granularity::quarter);
    EXPECT_EQ(c.run.halt_after, 2);
    args.overrides.lambda = -1.0;
    EXPECT_THROW(cli::resolve_config(args, env), ConfigError);
    args.config = dir / "absent.toml";
    args.overrides.lambda.reset();
    EXPECT_THROW(cli::resolve_config(args, env), ConfigError);
}

TEST(Cli, ExitCodes) {
    TempDir dir;
    const auto out = (dir / "run").string();
    write_file(dir / "bad.jsonl", "{\"id\": \"a\", \"text\": \"x\", \"created_utc\": 1}\nnot json\n");
    auto r = invoke({"run", "--out", out, "--corpus", (dir / "bad.jsonl").string()});
    EXPECT_EQ(r.code, cli::kCorpusError);
    EXPECT_NE(r.err.find("line 2"), std::string::npos) << r.err;
    EXPECT_EQ(invoke({"run", "--out", out, "--corpus", (dir / "none.jsonl").string()}).code, cli::kCorpusError);
    EXPECT_EQ(invoke({"run", "--out", out}).code, cli::kCorpusError);

    write_file(dir / "bad.toml", "[consolidation]\nlambda = 3\n");
    EXPECT_EQ(invoke({"run", "--out", out, "--config", (dir / "bad.toml").string(), "--corpus", golden("corpus.jsonl")}).code,
              cli::kConfigError);
    EXPECT_EQ(invoke({"run", "--out", out, "--providers", "live", "--corpus", golden("corpus.jsonl")}).code,
              cli::kConfigError);
    EXPECT_EQ(invoke({"resume", "--out", (dir / "nowhere").string()}).code, cli::kCorpusError);
    EXPECT_EQ(invoke({"report", "--out", (dir / "nowhere").string()}).code, cli::kCorpusError);
    EXPECT_EQ(invoke({"synth", "--out", out}).code, cli::kConfigError);
    EXPECT_FALSE(std::filesystem::exists(out));  // nothing is created before the configuration checks out

    write_file(dir / "live.toml",
               "[providers]\nmode = \"live\"\nllm_url = \"http://127.0.0.1:1\"\nllm_model = \"m\"\n"
               "retry_attempts = 1\nretry_backoff_ms = 0\n");
    r = invoke({"seed", "--out", out, "--config", (dir / "live.toml").string()});
    EXPECT_EQ(r.code, cli::kProviderOutage) << r.err;
}

TEST(Cli, RefusesToClobberWithoutForce) {
    TempDir dir;
    write_file(dir / "keep.txt", "mine");
    const auto args = std::vector<std::string>{"synth", "--out", dir.path().string(), "--config", golden("spec.toml")};
    EXPECT_EQ(invoke(args).code, cli::kCorpusError);
    auto forced = args;
    forced.push_back("--force");
    EXPECT_EQ(invoke(forced).code, cli::kOk);
    EXPECT_EQ(read_file(dir / "keep.txt"), "mine");  // only owned files are cleared
    EXPECT_EQ(read_file(dir / "corpus.jsonl"), read_file(golden("corpus.jsonl")));
    EXPECT_TRUE(std::filesystem::exists(dir / "truth.json"));
}

TEST(Cli, SeedWritesWindowZero) {
    TempDir dir;
    const auto r = invoke({"seed", "--out", dir.path().string(), "--config", golden("config.toml")});
    ASSERT_EQ(r.code, cli::kOk) << r.err;
    EXPECT_TRUE(std::filesystem::exists(dir.path() / "snapshots" / "window_0000.json"));
    EXPECT_NE(read_file(dir / "config.toml").find("# llm_key: unset"), std::string::npos);
}

TEST(Cli, RunEvaluateReport) {
    TempDir dir;
    const auto out = (dir / "run").string();
    auto r = invoke({"run", "--out", out, "--config", golden("config.toml"), "--corpus", golden("corpus.jsonl"),
                     "--dump-clusters"});
    ASSERT_EQ(r.code, cli::kOk) << r.err;
    EXPECT_NE(r.out.find("4 windows"), std::string::npos) << r.out;
    EXPECT_TRUE(std::filesystem::exists(dir.path() / "run" / "clusters.csv"));

    r = invoke({"evaluate", "--out", out});
    ASSERT_EQ(r.code, cli::kOk) << r.err;
    const auto metrics = json::parse(read_file(dir.path() / "run" / "metrics.json"));
    EXPECT_EQ(metrics.at("posts"), 200);
    EXPECT_TRUE(metrics.at("entropy").at("mean").is_number());
    EXPECT_TRUE(metrics.at("path_granularity").is_object());

    r = invoke({"report", "--out", out});
    ASSERT_EQ(r.code, cli::kOk) << r.err;
    EXPECT_EQ(read_file(dir.path() / "run" / "trends.csv"), read_file(data_dir() / "golden" / "expected" / "trends.csv"));
    EXPECT_EQ(r.out, read_file(dir.path() / "run" / "trends.txt"));

    // A second run into the same directory needs --force.
    EXPECT_EQ(invoke({"run", "--out", out, "--config", golden("config.toml"), "--corpus", golden("corpus.jsonl")}).code,
              cli::kCorpusError);
}

TEST(Cli, FlagsReachTheRun) {
    TempDir dir;
    const auto out = (dir / "run").string();
    const auto r = invoke({"run", "--out", out, "--config", golden("config.toml"), "--corpus", golden("corpus.jsonl"),
                           "--lambda", "0", "--granularity", "quarter", "--sample", "50", "--min-cluster-size", "5"});
    ASSERT_EQ(r.code, cli::kOk) << r.err;
    const auto echoed = parse_config(read_file(dir.path() / "run" / "config.toml"));
    EXPECT_EQ(echoed.run.consolidation.lambda, 0.0);
    EXPECT_EQ(echoed.run.granularity, Granularity::quarter);
    EXPECT_EQ(echoed.run.consolidation.min_cluster_size, 5u);
    EXPECT_EQ(echoed.ingest.sample, 50u);
    std::istringstream corpus(read_file(dir.path() / "run" / "corpus.jsonl"));
    EXPECT_EQ(parse_posts(corpus).size(), 50u);
}

TEST(Cli, HaltAndResume) {
    TempDir dir;
    const auto out = (dir / "run").string();
    auto r = invoke({"run", "--out", out, "--config", golden("config.toml"), "--corpus", golden("corpus.jsonl"),
                     "--halt-after", "3"});
    ASSERT_EQ(r.code, cli::kOk) << r.err;
    EXPECT_NE(r.out.find("(halted)"), std::string::npos);
    r = invoke({"resume", "--out", out});
    ASSERT_EQ(r.code, cli::kOk) << r.err;
    EXPECT_EQ(read_file(dir.path() / "run" / "decisions.jsonl"),
              read_file(data_dir() / "golden" / "expected" / "decisions.jsonl"));
    EXPECT_EQ(invoke({"resume", "--out", out, "--lambda", "0.1"}).code, cli::kConfigError);
}

}  // namespace
}  // namespace evotaxo
