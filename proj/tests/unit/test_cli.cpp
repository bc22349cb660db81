#include <cstdio>
#include <cstdlib>
#include <sstream>
#include <sys/wait.h>

#include "brewrank/cli.hpp"
#include "brewrank/harness.hpp"
#include "brewrank/tokenizer.hpp"
#include "doctest.h"
#include "fixtures.hpp"

using namespace brewrank;

namespace {

struct Run {
  int code = 0;
  std::string out;
  std::string err;
};

Run cli(std::vector<std::string> args) {
  args.insert(args.begin(), "brewrank");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Run r;
  r.code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::size_t count_lines(const std::string& text) {
  std::size_t n = 0;
  for (char c : text) n += c == '\n';
  return n;
}

/// A world on disk plus a task and an experiment config that points at it.
struct Workspace {
  std::filesystem::path dir;
  Workspace(const std::string& name, const std::string& kind = "plain_eval") : dir(fixtures::scratch_dir("cli_" + name)) {
    fixtures::write_file(dir / "world.json",
                         R"({"n_members": 12, "n_items": 60, "n_interactions": 900, "label_rule": "threshold", "seed": 4})");
    fixtures::write_file(dir / "task.json", to_json(fixtures::synth_task()).dump());
    nlohmann::json exp = {{"kind", kind},
                          {"tasks", {"task.json"}},
                          {"dataset", {{"world", "world.json"}}},
                          {"budget", {{"max_context_tokens", 8192}}},
                          {"split", {{"max_examples", 60}}},
                          {"output_dir", "run"}};
    fixtures::write_file(dir / "experiment.json", exp.dump());
  }
  std::string path(const std::string& f) const { return (dir / f).string(); }
};

}  // namespace

TEST_CASE("generate writes the world and names a missing config") {
  Workspace ws("generate");
  auto r = cli({"generate", "--config", ws.path("world.json"), "--out", ws.path("w1")});
  CHECK(r.code == 0);
  for (const char* f : {"members.jsonl", "items.jsonl", "interactions.jsonl", "ground_truth.jsonl"})
    CHECK(std::filesystem::exists(ws.dir / "w1" / f));
  CHECK(r.out.find("12 members") != std::string::npos);

  r = cli({"generate", "--config", ws.path("world.json"), "--out", ws.path("w2")});
  CHECK(fixtures::read_file(ws.dir / "w1" / "interactions.jsonl") ==
        fixtures::read_file(ws.dir / "w2" / "interactions.jsonl"));

  r = cli({"generate", "--config", ws.path("world.json"), "--out", ws.path("w3"), "--seed", "5"});
  CHECK(fixtures::read_file(ws.dir / "w1" / "interactions.jsonl") !=
        fixtures::read_file(ws.dir / "w3" / "interactions.jsonl"));

  r = cli({"generate", "--config", ws.path("missing.json"), "--out", ws.path("w4")});
  CHECK(r.code != 0);
  CHECK(r.err.find("missing.json") != std::string::npos);

  r = cli({"generate", "--config", ws.path("world.json"), "--out", ws.path("w5"), "--n_members=oops"});
  CHECK(r.code != 0);
}

TEST_CASE("render prints the prompt and its token count") {
  Workspace ws("render");
  REQUIRE(cli({"generate", "--config", ws.path("world.json"), "--out", ws.path("w")}).code == 0);
  auto r = cli({"render", "--dataset", ws.path("w"), "--task", ws.path("task.json"), "--member", "m03"});
  REQUIRE(r.code == 0);
  for (const char* label : {"Instruction:", "Member Profile:", "Question:", "Answer: The member will"})
    CHECK(r.out.find(label) != std::string::npos);
  const auto text = r.out.substr(0, r.out.size() - 1);
  const auto reported = r.err.substr(r.err.find("tokens: ") + 8);
  CHECK(std::stoul(reported) == make_tokenizer("default")->count(text));

  r = cli({"render", "--dataset", ws.path("w"), "--task", ws.path("task.json"), "--member", "m03", "--budget",
           "40", "--reserved", "0"});
  CHECK(r.code == 3);
  CHECK(r.out.empty());

  r = cli({"render", "--dataset", ws.path("w"), "--task", ws.path("task.json"), "--member", "nobody"});
  CHECK(r.code != 0);
}

TEST_CASE("eval writes a report and resumes without scoring") {
  Workspace ws("eval");
  auto r = cli({"eval", "--config", ws.path("experiment.json")});
  REQUIRE(r.code == 0);
  const auto run = ws.dir / "run";
  const auto summary = nlohmann::json::parse(fixtures::read_file(run / "summary.json"));
  CHECK(summary.dump().find("\"auc\"") != std::string::npos);
  CHECK(r.out.find("auc=1") != std::string::npos);
  const auto records = fixtures::read_file(run / "records.jsonl");
  CHECK(count_lines(records) > 0);

  r = cli({"eval", "--config", ws.path("experiment.json"), "--resume"});
  REQUIRE(r.code == 0);
  CHECK(r.err.find("scoring calls: 0") != std::string::npos);
  CHECK(fixtures::read_file(run / "records.jsonl") == records);

  r = cli({"report", "--out", run.string()});
  REQUIRE(r.code == 0);
  CHECK(r.out == fixtures::read_file(run / "sweep.csv"));
}

TEST_CASE("sweeps emit one csv row per grid point") {
  Workspace ws("sweep", "context_sweep");  // coldstart below overrides the kind
  auto r = cli({"sweep-context", "--config", ws.path("experiment.json"), "--set", "grid=[1024,2048,8192]",
                "--backend", "constant"});
  REQUIRE(r.code == 0);
  const auto csv = fixtures::read_file(ws.dir / "run" / "sweep.csv");
  CHECK(count_lines(csv) == 1 + 3);
  CHECK(csv.starts_with(harness::kSweepCsvHeader));

  r = cli({"sweep-coldstart", "--config", ws.path("experiment.json"), "--out", ws.path("cold"),
           "--backend.oracle_mode=masked"});
  REQUIRE(r.code == 0);
  CHECK(count_lines(fixtures::read_file(ws.dir / "cold" / "sweep.csv")) == 1 + 5);
}

TEST_CASE("credentials never come from flags") {
  Workspace ws("secret");
  auto r = cli({"eval", "--config", ws.path("experiment.json"), "--set", "backend.api_key=abc"});
  CHECK(r.code != 0);
  r = cli({"eval", "--config", ws.path("experiment.json"), "--backend.api_key=abc"});
  CHECK(r.code != 0);
  r = cli({"eval", "--config", ws.path("experiment.json"), "--api-key", "abc"});
  CHECK(r.code != 0);
}

TEST_CASE("the installed binary reports failures through its exit status") {
  Workspace ws("binary");
  const std::string bin = BREWRANK_CLI_PATH;
  auto status = [](const std::string& cmd) {
    const int raw = std::system(cmd.c_str());
    return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  };
  CHECK(status(bin + " --help > /dev/null") == 0);
  CHECK(status(bin + " eval --config " + ws.path("experiment.json") + " > /dev/null 2>&1") == 0);
  CHECK(status(bin + " eval --config " + ws.path("nope.json") + " > /dev/null 2>&1") != 0);
  CHECK(status(bin + " > /dev/null 2>&1") != 0);
}
