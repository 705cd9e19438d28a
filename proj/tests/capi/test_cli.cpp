// Copyright 2026 The OptExit Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <string>

#include <json.hpp>

#include "corpus.hpp"
#include "optexit/common/util.hpp"
#include "optexit/trace/trace.hpp"

namespace {

using json = nlohmann::json;
using optexit::testing::TempDir;

struct Result {
  int code = -1;
  std::string out;
  std::string err;
};

std::string quote(const std::string& s) {
  std::string q = "'";
  for (char c : s) q += c == '\'' ? std::string("'\\''") : std::string(1, c);
  return q + "'";
}

Result cli(const TempDir& dir, const std::string& args) {
  const auto out = dir / "stdout.txt";
  const auto err = dir / "stderr.txt";
  const std::string cmd = quote(OPTEXIT_CLI_PATH) + " " + args + " >" + quote(out.string()) + " 2>" + quote(err.string());
  const int status = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = optexit::read_file(out);
  r.err = optexit::read_file(err);
  return r;
}

TEST(Cli, HelpAndUsageErrors) {
  TempDir dir("cli-usage");
  EXPECT_EQ(cli(dir, "--help").code, 0);
  EXPECT_EQ(cli(dir, "").code, 1);
  EXPECT_EQ(cli(dir, "frobnicate").code, 1);
  EXPECT_EQ(cli(dir, "curate --out x.jsonl").code, 1);
  EXPECT_EQ(cli(dir, "run --prompts p --probe m --window 0").code, 1);
  EXPECT_EQ(cli(dir, "horl --traces t --strategy binary").code, 1);
  const Result r = cli(dir, "curate --in t.jsonl");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("optexit:"), std::string::npos);
}

TEST(Cli, DataAndTransportErrors) {
  TempDir dir("cli-errors");
  const auto corpus = optexit::testing::make_corpus({.n_traces = 2});
  optexit::save_traces(dir / "traces.jsonl", corpus.traces);
  optexit::write_file(dir / "script.jsonl", corpus.script().serialize());
  const std::string out = quote((dir / "l.jsonl").string());
  EXPECT_EQ(cli(dir, "curate --in " + quote((dir / "none.jsonl").string()) + " --out " + out +
                         " --pipeline-endpoint mock:" + quote((dir / "script.jsonl").string()))
                .code,
            2);
  optexit::write_file(dir / "bad.jsonl", "{\"trace_id\": 5}\n");
  EXPECT_EQ(cli(dir, "curate --in " + quote((dir / "bad.jsonl").string()) + " --out " + out +
                         " --pipeline-endpoint mock:" + quote((dir / "script.jsonl").string()))
                .code,
            2);
  EXPECT_EQ(cli(dir, "curate --in " + quote((dir / "traces.jsonl").string()) + " --out " + out +
                         " --pipeline-endpoint http://127.0.0.1:1 --request-retries 0 --timeout-ms 2000")
                .code,
            3);
}

TEST(Cli, ScriptedPipeline) {
  TempDir dir("cli-pipeline");
  const auto corpus = optexit::testing::make_corpus({.n_traces = 6});
  optexit::save_traces(dir / "traces.jsonl", corpus.traces);
  optexit::write_file(dir / "script.jsonl", corpus.script().serialize());
  const std::string mock = "mock:" + quote((dir / "script.jsonl").string());
  auto p = [&](const std::string& name) { return quote((dir / name).string()); };

  Result r = cli(dir, "curate --in " + p("traces.jsonl") + " --out " + p("labeled.jsonl") + " --report " +
                          p("curate.csv") + " --pipeline-endpoint " + mock);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(json::parse(r.out)["succeeded"], 6);
  EXPECT_TRUE(optexit::read_file(dir / "curate.csv").starts_with("trace_id,status,retries_used,token_index\n"));

  r = cli(dir, "train-probe --data " + p("labeled.jsonl") + " --features logprob --out " + p("probe.opxm"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(json::parse(r.out)["command"], "train-probe");

  r = cli(dir, "run --prompts " + p("labeled.jsonl") + " --probe " + p("probe.opxm") + " --endpoint " + mock +
                   " --pipeline-endpoint " + mock + " --dataset scripted --out " + p("run.csv"));
  ASSERT_EQ(r.code, 0) << r.err;
  const json run = json::parse(r.out);
  EXPECT_EQ(run["n"], 6);
  EXPECT_EQ(run["matched_full_run"], 6);

  r = cli(dir, "evaluate --dataset " + p("labeled.jsonl") + " --policy vanilla,optexit,deer --probe " +
                   p("probe.opxm") + " --endpoint " + mock + " --dataset-name scripted --out " + p("eval.csv"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(json::parse(r.out)["policies"].size(), 3u);

  r = cli(dir, "report --results " + p("eval.csv") + " --out " + p("table.csv") + " --svg " + p("table.svg"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(json::parse(r.out)["rows"].size(), 3u);
  r = cli(dir, "pareto --table " + p("table.csv") + " --out " + p("front.csv"));
  ASSERT_EQ(r.code, 0) << r.err;

  r = cli(dir, "horl --traces " + p("labeled.jsonl") + " --endpoint " + mock + " --out " + p("horl.csv"));
  ASSERT_EQ(r.code, 0) << r.err;
  r = cli(dir, "sweep --traces " + p("labeled.jsonl") + " --fractions 0.25,0.5,1.0 --endpoint " + mock +
                   " --labeled " + p("labeled.jsonl") + " --out " + p("sweep.csv") + " --svg " + p("sweep.svg"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(optexit::read_file(dir / "sweep.csv").starts_with("fraction,mean_accuracy,mean_cr,n\n"));

  r = cli(dir, "analyze event-lock --labeled " + p("labeled.jsonl") + " --out " + p("lock.csv"));
  ASSERT_EQ(r.code, 0) << r.err;
  r = cli(dir, "analyze token-shift --labeled " + p("labeled.jsonl") + " --token wait --out " + p("shift.csv"));
  ASSERT_EQ(r.code, 0) << r.err;
}

}  // namespace
