#include <cmath>
#include <limits>
#include <random>
#include <set>

#include "brewrank/error.hpp"
#include "brewrank/harness.hpp"
#include "brewrank/metrics.hpp"
#include "doctest.h"
#include "fixtures.hpp"
#include "stub_server.hpp"

using namespace brewrank;
using namespace brewrank::harness;

namespace {

synthetic::WorldConfig small_world(std::uint64_t seed = 3) {
  synthetic::WorldConfig cfg;
  cfg.n_members = 20;
  cfg.n_items = 100;
  cfg.n_interactions = 2000;
  cfg.label_rule = synthetic::LabelRule::Threshold;
  cfg.seed = seed;
  return cfg;
}

ExperimentSpec base_spec(ExperimentKind kind, const std::string& out) {
  ExperimentSpec s;
  s.kind = kind;
  s.tasks = {{fixtures::synth_task(), std::nullopt}};
  s.dataset.world = small_world();
  s.budget = {8192, 16};
  s.output_dir = fixtures::scratch_dir(out);
  s.split.max_examples = 120;
  return s;
}

std::map<std::string, std::vector<const RunRecord*>> by_grid(const std::vector<RunRecord>& records) {
  std::map<std::string, std::vector<const RunRecord*>> out;
  for (const auto& r : records) out[r.grid_point].push_back(&r);
  return out;
}

}  // namespace

TEST_CASE("experiment documents") {
  const nlohmann::json doc = {{"kind", "context_sweep"},
                              {"tasks", nlohmann::json::array({to_json(fixtures::synth_task())})},
                              {"dataset", {{"world", {{"n_members", 4}}}}},
                              {"grid", {512, 1024}},
                              {"reference", 1024}};
  const auto s = experiment_from_json(doc, "/base");
  CHECK(s.kind == ExperimentKind::ContextSweep);
  CHECK(s.grid == std::vector<std::int64_t>{512, 1024});
  CHECK(s.dataset.world->n_members == 4);

  auto bad = doc;
  bad["colour"] = 1;
  CHECK_THROWS_AS(experiment_from_json(bad), Error);
  bad = doc;
  bad["reference"] = 4096;
  CHECK_THROWS_AS(experiment_from_json(bad), Error);
  bad = doc;
  bad["backend"] = {{"kind", "replay"}};
  CHECK_THROWS_AS(experiment_from_json(bad), Error);
  bad = doc;
  bad["backend"] = {{"api_key", "x"}};
  CHECK_THROWS_AS(experiment_from_json(bad), Error);

  auto doc2 = doc;
  apply_override(doc2, "backend.kind", "constant");
  apply_override(doc2, "budget.max_context_tokens", "4096");
  apply_override(doc2, "output_dir", "somewhere");
  CHECK(doc2["backend"]["kind"] == "constant");
  CHECK(doc2["budget"]["max_context_tokens"] == 4096);
  const auto s2 = experiment_from_json(doc2, "/base");
  CHECK(s2.backend.kind == "constant");
  CHECK(s2.output_dir == std::filesystem::path("/base/somewhere"));
  CHECK_THROWS_AS(apply_override(doc2, "", "1"), Error);
}

TEST_CASE("build_examples windows, orders and subsamples") {
  const auto g = synthetic::generate_world(small_world());
  const auto task = fixtures::synth_task();
  const Timestamp from = g.world->config().t_start + 100 * 86'400;
  const Timestamp to = from + 60 * 86'400;
  const auto all = build_examples(g.dataset, task, from, to, {}, 0);
  REQUIRE(all.size() > 50);
  std::size_t expected = 0;
  for (const auto& x : g.dataset.interactions()) expected += x.timestamp >= from && x.timestamp < to;
  CHECK(all.size() == expected);
  for (std::size_t k = 1; k < all.size(); ++k) CHECK(all[k - 1].cutoff <= all[k].cutoff);
  for (const auto& e : all) CHECK(e.label == (g.world->logit(e.member_id, e.item_id, e.cutoff) >= 0));

  SplitConfig sub;
  sub.max_examples = 25;
  const auto a = build_examples(g.dataset, task, from, to, sub, 9);
  const auto b = build_examples(g.dataset, task, from, to, sub, 9);
  CHECK(a.size() == 25);
  CHECK(a.size() == b.size());
  for (std::size_t k = 0; k < a.size(); ++k) CHECK(a[k].item_id == b[k].item_id);

  SplitConfig per;
  per.per_member_max = 2;
  std::map<std::string, int> counts;
  for (const auto& e : build_examples(g.dataset, task, from, to, per, 0)) ++counts[e.member_id];
  for (const auto& [m, c] : counts) CHECK(c <= 2);
}

TEST_CASE("one positive and one negative give AUC 1 under the full oracle") {
  const auto cfg = small_world();
  const auto g = synthetic::generate_world(cfg);
  const auto task = fixtures::synth_task();
  std::optional<Example> pos, neg;
  for (const auto& x : g.dataset.interactions()) {
    if (x.timestamp < cfg.t_start + 200 * 86'400) continue;
    Example e{x.member_id, x.item_id, x.action == "applied", x.timestamp};
    if (e.label && !pos) pos = e;
    if (!e.label && !neg) neg = e;
  }
  REQUIRE(pos);
  REQUIRE(neg);
  const std::vector<Example> split = {*pos, *neg};
  EvalContext ctx;
  ctx.dataset = &g.dataset;
  ctx.client = std::make_shared<synthetic::MockOracleClient>(g.world, synthetic::OracleMode::Full);
  ctx.tokenizer = make_tokenizer("default");
  ctx.embed_oracle_marker = true;
  const auto out = run_eval(ctx, task, split, {{8192, 16}, 100, "eval"});
  REQUIRE(out.metric);
  CHECK(*out.metric == 1.0);
  REQUIRE(out.records.size() == 2);
  CHECK(out.records[0].request_id == "synth_apply:eval:" + pos->member_id + "/" + pos->item_id + "@" +
                                         std::to_string(pos->cutoff));
  CHECK(out.records[0].score > 0.5);
  CHECK(out.records[1].score < 0.5);

  // Single class: metric is undefined, records still come back.
  const std::vector<Example> one = {*pos};
  const auto single = run_eval(ctx, task, one, {{8192, 16}, 100, "eval"});
  CHECK_FALSE(single.metric);
  CHECK_FALSE(single.metric_error.empty());
  CHECK(single.records.size() == 1);
}

TEST_CASE("plain eval, resume and report round trip") {
  auto spec = base_spec(ExperimentKind::PlainEval, "plain");
  spec.finalize();
  const auto first = run_experiment(spec);
  REQUIRE(first.sweep.points.size() == 1);
  REQUIRE(first.sweep.points[0].metric);
  CHECK(*first.sweep.points[0].metric == 1.0);
  CHECK(first.hard_errors.empty());
  CHECK(first.backend_calls == first.records.size());
  emit_report(first, spec.output_dir);

  spec.resume = true;
  const auto again = run_experiment(spec);
  CHECK(again.backend_calls == 0);
  CHECK(again.records == first.records);
  CHECK(again.sweep == first.sweep);

  const auto loaded = load_records(spec.output_dir / "records.jsonl");
  CHECK(loaded == first.records);
  const auto summary = nlohmann::json::parse(fixtures::read_file(spec.output_dir / "summary.json"));
  CHECK(summary.dump().find("auc") != std::string::npos);
  const auto csv = fixtures::read_file(spec.output_dir / "sweep.csv");
  CHECK(sweep_points_from_csv(csv) == first.sweep.points);
  const auto recomputed = sweep_from_records(loaded, "auc");
  REQUIRE(recomputed.points.size() == 1);
  CHECK(recomputed.points[0].metric == first.sweep.points[0].metric);

  // Without resume the store starts over and every example is rescored.
  spec.resume = false;
  CHECK(run_experiment(spec).backend_calls == first.records.size());
}

TEST_CASE("record store keeps the good prefix on resume") {
  const auto dir = fixtures::scratch_dir("store");
  RunRecord r;
  r.key = "k1";
  r.request_id = "t:eval:m/i@1";
  r.task_id = "t";
  r.logprob_positive = -std::numeric_limits<double>::infinity();
  r.logprob_negative = -0.1;
  r.score = 0.0;
  {
    RecordStore store(dir / "records.jsonl", false);
    store.append(r);
    auto r2 = r;
    r2.key = "k2";
    store.append(r2);
  }
  auto text = fixtures::read_file(dir / "records.jsonl");
  text.resize(text.size() - 10);
  fixtures::write_file(dir / "records.jsonl", text);
  RecordStore resumed(dir / "records.jsonl", true);
  CHECK(resumed.size() == 1);
  REQUIRE(resumed.find("k1"));
  CHECK(*resumed.find("k1") == r);
  CHECK(std::isinf(resumed.find("k1")->logprob_positive));
  RecordStore fresh(dir / "records.jsonl", false);
  CHECK(fresh.size() == 0);
  CHECK(fixtures::read_file(dir / "records.jsonl").empty());
}

TEST_CASE("constant backend gives a flat normalized curve") {
  auto spec = base_spec(ExperimentKind::ContextSweep, "flat");
  spec.backend.kind = "constant";
  spec.finalize();
  const auto res = run_experiment(spec);
  REQUIRE(res.sweep.points.size() == spec.grid.size());
  for (const auto& p : res.sweep.points) {
    REQUIRE(p.metric);
    CHECK(*p.metric == 0.5);
    REQUIRE(p.normalized);
    CHECK(*p.normalized == 1.0);
  }
}

TEST_CASE("context sweep grows history monotonically and accounts for overflow") {
  auto spec = base_spec(ExperimentKind::ContextSweep, "ctx");
  spec.grid = {200, 300, 500, 1000, 8192};
  spec.reference = 8192;
  spec.finalize();
  const auto res = run_experiment(spec);
  const auto groups = by_grid(res.records);
  std::map<std::string, std::map<std::string, std::size_t>> included;  // request sans grid -> grid -> count
  for (const auto& r : res.records) {
    const auto id = r.member_id + "/" + r.item_id + "@" + std::to_string(r.cutoff);
    included[id][r.grid_point] = r.included;
    CHECK(r.token_count <= std::stoul(r.grid_point) - 16);
  }
  for (const auto& [id, per] : included) {
    std::size_t prev = 0;
    for (const auto b : spec.grid) {
      auto it = per.find(std::to_string(b));
      if (it == per.end()) continue;  // overflowed at this budget
      CHECK(it->second >= prev);
      prev = it->second;
    }
  }
  std::size_t n_examples = 0;
  for (const auto& p : res.sweep.points) {
    n_examples = std::max(n_examples, p.records + p.overflow);
    CHECK(p.failed == 0);
  }
  for (const auto& p : res.sweep.points) CHECK(p.records + p.overflow == n_examples);
  CHECK(res.sweep.points.front().overflow > 0);
  CHECK(res.sweep.points.back().overflow == 0);
}

TEST_CASE("cold-start cap beyond any history equals the uncapped run") {
  auto capped = base_spec(ExperimentKind::ColdstartSweep, "cap");
  capped.grid = {1, 100000};
  capped.backend.oracle_mode = "masked";
  capped.finalize();
  const auto a = run_experiment(capped);

  auto plain = base_spec(ExperimentKind::PlainEval, "uncapped");
  plain.max_history = 1'000'000;
  plain.backend.oracle_mode = "masked";
  plain.finalize();
  const auto b = run_experiment(plain);
  REQUIRE(a.sweep.points.size() == 2);
  REQUIRE(a.sweep.points[1].metric);
  CHECK(*a.sweep.points[1].metric == *b.sweep.points[0].metric);
  CHECK(a.sweep.points[1].normalized == std::nullopt);

  const auto groups = by_grid(a.records);
  for (const auto* r : groups.at("1")) CHECK(r->included <= 1);
}

TEST_CASE("baselines by task and by grid point") {
  auto spec = base_spec(ExperimentKind::ColdstartSweep, "gap");
  spec.grid = {2, 4};
  spec.backend.oracle_mode = "masked";
  spec.baselines = {{"synth_apply", 0.5}, {"synth_apply@4", 0.25}};
  spec.finalize();
  const auto res = run_experiment(spec);
  REQUIRE(res.sweep.points.size() == 2);
  CHECK(*res.sweep.points[0].gap == doctest::Approx(metrics::relative_gap(*res.sweep.points[0].metric, 0.5)));
  CHECK(*res.sweep.points[1].gap == doctest::Approx(metrics::relative_gap(*res.sweep.points[1].metric, 0.25)));
}

TEST_CASE("temporal sweep windows and errors") {
  auto spec = base_spec(ExperimentKind::TemporalSweep, "temporal");
  spec.split.max_examples = 60;
  spec.temporal.snapshots = 4;
  spec.temporal.gap = 30 * 86'400;
  spec.finalize();
  const auto res = run_experiment(spec);
  REQUIRE(res.sweep.points.size() == 4);
  CHECK(res.hard_errors.empty());
  const auto& cfg = *spec.dataset.world;
  const Timestamp train_end = cfg.t_start + (cfg.t_end - cfg.t_start) / 2;
  for (const auto& r : res.records) {
    const auto k = std::stoll(r.grid_point);
    CHECK(r.cutoff >= train_end + k * spec.temporal.gap);
    CHECK(r.cutoff < train_end + (k + 1) * spec.temporal.gap);
  }
  CHECK(*res.sweep.points[0].normalized == 1.0);

  auto too_long = spec;
  too_long.temporal.snapshots = 50;
  CHECK_THROWS_AS(run_experiment(too_long), Error);

  auto sparse = spec;
  sparse.dataset.world->n_interactions = 5;
  sparse.temporal.window = 60;
  const auto empty = run_experiment(sparse);
  CHECK_FALSE(empty.hard_errors.empty());
  bool saw_failed = false;
  for (const auto& p : empty.sweep.points) saw_failed |= p.status.starts_with("failed");
  CHECK(saw_failed);
}

TEST_CASE("domain suite keeps classes apart") {
  ExperimentSpec spec;
  spec.kind = ExperimentKind::DomainSuite;
  spec.dataset.world = small_world();
  spec.t1_tasks = {{fixtures::synth_task("shared"), std::nullopt}};
  spec.t2_tasks = {{fixtures::synth_task("shared"), std::nullopt}};
  spec.output_dir = fixtures::scratch_dir("domain_overlap");
  spec.finalize();
  try {
    run_experiment(spec);
    FAIL("overlap accepted");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("shared") != std::string::npos);
  }

  // Identical prompts under two ids: the T2 task is served T1's cached rows.
  stub::Server server({" apply", " dismiss"}, [](std::string_view, std::string_view a) {
    return std::vector<double>(stub::tokenize(a).size(), a == " apply" ? -0.5 : -1.0);
  });
  spec.backend.kind = "http";
  spec.backend.base_url = server.url();
  spec.backend.cache_path = "cache.jsonl";
  spec.split.max_examples = 10;
  spec.t2_tasks = {{fixtures::synth_task("copy"), std::nullopt}};
  spec.output_dir = fixtures::scratch_dir("domain_leak");
  const auto leak = run_experiment(spec);
  CHECK(leak.t1_entries_touched_by_t2 > 0);
  CHECK_FALSE(leak.hard_errors.empty());
  for (const auto& p : leak.sweep.points) CHECK(p.domain.has_value());

  auto t2 = fixtures::synth_task("fresh");
  t2.note = "Something else entirely.";
  spec.t2_tasks = {{t2, std::nullopt}};
  spec.output_dir = fixtures::scratch_dir("domain_clean");
  const auto clean = run_experiment(spec);
  CHECK(clean.t1_entries_touched_by_t2 == 0);
  CHECK(clean.hard_errors.empty());
  REQUIRE(clean.sweep.points.size() == 2);
  CHECK(clean.sweep.points[0].domain == DomainClass::T1);
  CHECK(clean.sweep.points[1].domain == DomainClass::T2);
}

TEST_CASE("sweep csv round trips") {
  CHECK(sweep_points_from_csv(std::string(kSweepCsvHeader) + "\n").empty());
  CHECK_THROWS_AS(sweep_points_from_csv("task,grid\n"), Error);
  CHECK_THROWS_AS(sweep_points_from_csv(""), Error);

  std::mt19937_64 rng(6);
  const std::vector<std::string> ids = {"plain", "with,comma", "with \"quote\"", "x"};
  for (int trial = 0; trial < 200; ++trial) {
    SweepResult s;
    for (std::size_t n = rng() % 6; n > 0; --n) {
      SweepPoint p;
      p.task_id = ids[rng() % ids.size()];
      p.grid_point = std::to_string(rng() % 10000);
      if (rng() % 2) p.domain = rng() % 2 ? DomainClass::T1 : DomainClass::T2;
      std::uniform_real_distribution<double> u(-1, 2);
      if (rng() % 4) p.metric = u(rng);
      if (rng() % 2) p.normalized = u(rng) / 3.0;
      if (rng() % 2) p.gap = u(rng) * 100;
      p.records = rng() % 1000;
      p.overflow = rng() % 10;
      p.failed = rng() % 3;
      if (!p.metric) p.status = "failed: metric, undefined";
      s.points.push_back(p);
    }
    CHECK(sweep_points_from_csv(sweep_to_csv(s)) == s.points);
  }
}

TEST_CASE("compute_metric") {
  std::vector<RunRecord> rs(4);
  const double scores[] = {0.9, 0.2, 0.6, 0.4};
  const int labels[] = {1, 0, 0, 1};
  for (int i = 0; i < 4; ++i) {
    rs[i].member_id = i < 2 ? "a" : "b";
    rs[i].score = scores[i];
    rs[i].label = labels[i];
  }
  CHECK(compute_metric("auc", rs) == doctest::Approx(0.75));
  CHECK(compute_metric("recall@1", rs) == doctest::Approx(0.5));
  CHECK(compute_metric("recall@2", rs) == doctest::Approx(1.0));
  CHECK_THROWS_AS(compute_metric("ndcg", rs), Error);
}
