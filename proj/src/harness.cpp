#include "brewrank/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <thread>

#include "brewrank/error.hpp"
#include "brewrank/hash.hpp"
#include "brewrank/log.hpp"
#include "brewrank/metrics.hpp"

namespace brewrank::harness {

using nlohmann::json;

namespace {

constexpr std::pair<ExperimentKind, const char*> kKindNames[] = {
    {ExperimentKind::PlainEval, "plain_eval"},
    {ExperimentKind::ContextSweep, "context_sweep"},
    {ExperimentKind::ColdstartSweep, "coldstart_sweep"},
    {ExperimentKind::TemporalSweep, "temporal_sweep"},
    {ExperimentKind::DomainSuite, "domain_suite"},
};

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& what) {
  if (!j.is_object()) throw Error(ErrorKind::Parse, what + ": expected a JSON object");
  for (const auto& [key, _] : j.items())
    if (!allowed.contains(key)) throw Error(ErrorKind::Parse, what + ": unknown key '" + key + "'");
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

DatasetSource source_from_json(const json& j, const std::filesystem::path& base) {
  reject_unknown(j, {"dir", "world"}, "dataset");
  DatasetSource src;
  if (j.contains("dir")) src.dir = resolve(base, j.at("dir").get<std::string>());
  if (j.contains("world")) {
    const auto& w = j.at("world");
    src.world = w.is_string() ? synthetic::load_world_config(resolve(base, w.get<std::string>()))
                              : synthetic::world_config_from_json(w);
  }
  if (src.dir.has_value() == src.world.has_value())
    throw Error(ErrorKind::Parse, "dataset: give exactly one of 'dir' or 'world'");
  return src;
}

TaskEntry task_entry_from_json(const json& j, const std::filesystem::path& base) {
  TaskEntry entry;
  if (j.is_string()) {
    entry.task = load_task(resolve(base, j.get<std::string>()));
  } else if (j.is_object() && j.contains("spec")) {
    reject_unknown(j, {"spec", "dataset"}, "task entry");
    const auto& s = j.at("spec");
    entry.task = s.is_string() ? load_task(resolve(base, s.get<std::string>())) : task_from_json(s);
    if (j.contains("dataset")) entry.dataset = source_from_json(j.at("dataset"), base);
  } else {
    entry.task = task_from_json(j);
  }
  return entry;
}

std::vector<TaskEntry> task_list(const json& j, const std::filesystem::path& base) {
  std::vector<TaskEntry> out;
  for (const auto& t : j) out.push_back(task_entry_from_json(t, base));
  return out;
}

template <typename T>
T get(const json& j, const char* key, const std::string& what) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Parse, what + "." + key + ": " + e.what());
  }
}

}  // namespace

const char* to_string(ExperimentKind kind) {
  for (const auto& [k, name] : kKindNames)
    if (k == kind) return name;
  return "?";
}

ExperimentKind experiment_kind_from_string(std::string_view text) {
  for (const auto& [k, name] : kKindNames)
    if (text == name) return k;
  throw Error(ErrorKind::Parse, "unknown experiment kind '" + std::string(text) + "'");
}

ExperimentSpec experiment_from_json(const json& j, const std::filesystem::path& base) {
  reject_unknown(j,
                 {"kind", "tasks", "t1_tasks", "t2_tasks", "dataset", "backend", "tokenizer", "budget", "max_history",
                  "split", "grid", "reference", "temporal", "metric", "baselines", "output_dir", "seed",
                  "parallelism", "resume", "template", "embed_oracle_marker", "chunk_size"},
                 "experiment");
  ExperimentSpec s;
  if (j.contains("kind")) s.kind = experiment_kind_from_string(get<std::string>(j, "kind", "experiment"));
  if (j.contains("tasks")) s.tasks = task_list(j.at("tasks"), base);
  if (j.contains("t1_tasks")) s.t1_tasks = task_list(j.at("t1_tasks"), base);
  if (j.contains("t2_tasks")) s.t2_tasks = task_list(j.at("t2_tasks"), base);
  if (j.contains("dataset")) s.dataset = source_from_json(j.at("dataset"), base);
  if (j.contains("backend")) {
    const auto& b = j.at("backend");
    reject_unknown(b,
                   {"kind", "oracle_mode", "frozen_time", "base_url", "model", "cache_path", "first_token",
                    "max_attempts", "backoff_ms", "timeout_s", "top_logprobs"},
                   "backend");
    auto& c = s.backend;
    c.kind = b.value("kind", c.kind);
    c.oracle_mode = b.value("oracle_mode", c.oracle_mode);
    if (b.contains("frozen_time") && !b.at("frozen_time").is_null()) c.frozen_time = get<Timestamp>(b, "frozen_time", "backend");
    c.base_url = b.value("base_url", c.base_url);
    c.model = b.value("model", c.model);
    c.cache_path = b.value("cache_path", c.cache_path);
    c.first_token = b.value("first_token", c.first_token);
    c.max_attempts = b.value("max_attempts", c.max_attempts);
    c.backoff_ms = b.value("backoff_ms", c.backoff_ms);
    c.timeout_s = b.value("timeout_s", c.timeout_s);
    c.top_logprobs = b.value("top_logprobs", c.top_logprobs);
  }
  s.tokenizer = j.value("tokenizer", s.tokenizer);
  if (j.contains("budget")) {
    const auto& b = j.at("budget");
    reject_unknown(b, {"max_context_tokens", "reserved_completion_tokens"}, "budget");
    s.budget.max_context_tokens = b.value("max_context_tokens", s.budget.max_context_tokens);
    s.budget.reserved_completion_tokens = b.value("reserved_completion_tokens", s.budget.reserved_completion_tokens);
  }
  s.max_history = j.value("max_history", s.max_history);
  if (j.contains("split")) {
    const auto& b = j.at("split");
    reject_unknown(b, {"test_start", "test_end", "test_fraction", "max_examples", "per_member_max"}, "split");
    if (b.contains("test_start")) s.split.test_start = get<Timestamp>(b, "test_start", "split");
    if (b.contains("test_end")) s.split.test_end = get<Timestamp>(b, "test_end", "split");
    s.split.test_fraction = b.value("test_fraction", s.split.test_fraction);
    s.split.max_examples = b.value("max_examples", s.split.max_examples);
    s.split.per_member_max = b.value("per_member_max", s.split.per_member_max);
  }
  if (j.contains("grid")) s.grid = get<std::vector<std::int64_t>>(j, "grid", "experiment");
  if (j.contains("reference") && !j.at("reference").is_null()) s.reference = get<std::int64_t>(j, "reference", "experiment");
  if (j.contains("temporal")) {
    const auto& b = j.at("temporal");
    reject_unknown(b, {"train_end", "gap", "window", "snapshots", "min_gap"}, "temporal");
    if (b.contains("train_end")) s.temporal.train_end = get<Timestamp>(b, "train_end", "temporal");
    s.temporal.gap = b.value("gap", s.temporal.gap);
    if (b.contains("window")) s.temporal.window = get<Timestamp>(b, "window", "temporal");
    s.temporal.snapshots = b.value("snapshots", s.temporal.snapshots);
    s.temporal.min_gap = b.value("min_gap", s.temporal.min_gap);
  }
  s.metric = j.value("metric", s.metric);
  if (j.contains("baselines")) s.baselines = get<std::map<std::string, double>>(j, "baselines", "experiment");
  if (j.contains("output_dir")) s.output_dir = resolve(base, get<std::string>(j, "output_dir", "experiment"));
  if (j.contains("seed") && !j.at("seed").is_null()) s.seed = get<std::uint64_t>(j, "seed", "experiment");
  s.parallelism = j.value("parallelism", s.parallelism);
  s.resume = j.value("resume", s.resume);
  if (j.contains("template") && !j.at("template").is_null())
    s.template_path = resolve(base, get<std::string>(j, "template", "experiment"));
  if (j.contains("embed_oracle_marker") && !j.at("embed_oracle_marker").is_null())
    s.embed_oracle_marker = get<bool>(j, "embed_oracle_marker", "experiment");
  s.chunk_size = j.value("chunk_size", s.chunk_size);
  s.finalize();
  return s;
}

void ExperimentSpec::finalize() {
  auto fail = [](const std::string& why) { throw Error(ErrorKind::InvalidArgument, "experiment: " + why); };
  budget.check();
  if (parallelism == 0) fail("parallelism must be >= 1");
  if (chunk_size == 0) fail("chunk_size must be >= 1");
  if (max_history == 0) fail("max_history must be >= 1");
  if (kind == ExperimentKind::DomainSuite) {
    if (t1_tasks.empty() && t2_tasks.empty()) fail("domain_suite needs t1_tasks and/or t2_tasks");
  } else if (tasks.empty()) {
    fail("no tasks given");
  }
  if (kind == ExperimentKind::ContextSweep) {
    if (grid.empty()) grid = {512, 1024, 2048, 4096, 8192};
    if (!reference) reference = 8192;
    if (std::find(grid.begin(), grid.end(), *reference) == grid.end())
      fail("reference budget " + std::to_string(*reference) + " is not in the grid");
    for (auto b : grid)
      if (b <= 0 || static_cast<std::size_t>(b) <= budget.reserved_completion_tokens)
        fail("budget " + std::to_string(b) + " does not exceed reserved_completion_tokens");
  }
  if (kind == ExperimentKind::ColdstartSweep) {
    if (grid.empty()) grid = {5, 10, 25, 50, 100};
    if (!std::is_sorted(grid.begin(), grid.end())) fail("cold-start caps must be sorted ascending");
    for (auto c : grid)
      if (c <= 0) fail("cold-start caps must be positive");
  }
  if (kind == ExperimentKind::TemporalSweep) {
    if (temporal.gap <= 0) fail("temporal gap must be > 0");
    if (temporal.snapshots == 0) fail("temporal snapshots must be >= 1");
    if (temporal.min_gap < 0) fail("temporal min_gap must be >= 0");
  }
  if (!(split.test_fraction > 0 && split.test_fraction <= 1)) fail("split.test_fraction must be in (0, 1]");
  static const std::set<std::string> kinds = {"mock", "http", "replay", "constant"};
  if (!kinds.contains(backend.kind)) fail("unknown backend kind '" + backend.kind + "'");
  if (backend.kind == "replay" && backend.cache_path.empty()) fail("replay backend needs backend.cache_path");
}

void apply_override(json& doc, std::string_view dotted_key, std::string_view value) {
  if (dotted_key.empty()) throw Error(ErrorKind::InvalidArgument, "empty override key");
  json parsed = json::parse(value, nullptr, false);
  if (parsed.is_discarded()) parsed = std::string(value);
  json* node = &doc;
  std::string_view rest = dotted_key;
  while (true) {
    auto dot = rest.find('.');
    std::string key(rest.substr(0, dot));
    if (key.empty()) throw Error(ErrorKind::InvalidArgument, "bad override key '" + std::string(dotted_key) + "'");
    if (!node->is_object()) *node = json::object();
    if (dot == std::string_view::npos) {
      (*node)[key] = std::move(parsed);
      return;
    }
    node = &(*node)[key];
    rest.remove_prefix(dot + 1);
  }
}

// ---------------------------------------------------------------------------
// Examples

std::vector<Example> build_examples(const Dataset& dataset, const TaskSpec& task, Timestamp from, Timestamp to,
                                    const SplitConfig& split, std::uint64_t seed) {
  std::vector<Example> out;
  for (const auto& x : dataset.interactions()) {
    if (x.timestamp < from || x.timestamp >= to || !task.in_vocabulary(x.action)) continue;
    out.push_back({x.member_id, x.item_id, task.is_positive(x.action) ? 1 : 0, x.timestamp});
  }
  auto order = [](const Example& a, const Example& b) {
    return std::tie(a.cutoff, a.member_id, a.item_id, a.label) < std::tie(b.cutoff, b.member_id, b.item_id, b.label);
  };
  std::sort(out.begin(), out.end(), order);
  if (split.per_member_max > 0) {
    std::map<std::string, std::size_t> taken;
    std::erase_if(out, [&](const Example& e) { return ++taken[e.member_id] > split.per_member_max; });
  }
  if (split.max_examples > 0 && out.size() > split.max_examples) {
    synthetic::Rng rng(seed);
    for (std::size_t i = out.size() - 1; i > 0; --i) std::swap(out[i], out[rng.uniform_int(i + 1)]);
    out.resize(split.max_examples);
    std::sort(out.begin(), out.end(), order);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Records

json to_json(const RunRecord& r) {
  auto lp = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
  return {{"key", r.key},
          {"request_id", r.request_id},
          {"task_id", r.task_id},
          {"grid_point", r.grid_point},
          {"member_id", r.member_id},
          {"item_id", r.item_id},
          {"label", r.label},
          {"score", r.score},
          {"logprob_positive", lp(r.logprob_positive)},
          {"logprob_negative", lp(r.logprob_negative)},
          {"token_count", r.token_count},
          {"included", r.included},
          {"truncated", r.truncated},
          {"backend", r.backend},
          {"cutoff", r.cutoff}};
}

RunRecord record_from_json(const json& j) {
  auto lp = [](const json& v) { return v.is_null() ? -std::numeric_limits<double>::infinity() : v.get<double>(); };
  RunRecord r;
  r.key = j.at("key").get<std::string>();
  r.request_id = j.at("request_id").get<std::string>();
  r.task_id = j.at("task_id").get<std::string>();
  r.grid_point = j.at("grid_point").get<std::string>();
  r.member_id = j.at("member_id").get<std::string>();
  r.item_id = j.at("item_id").get<std::string>();
  r.label = j.at("label").get<int>();
  r.score = j.at("score").get<double>();
  r.logprob_positive = lp(j.at("logprob_positive"));
  r.logprob_negative = lp(j.at("logprob_negative"));
  r.token_count = j.at("token_count").get<std::size_t>();
  r.included = j.at("included").get<std::size_t>();
  r.truncated = j.at("truncated").get<std::size_t>();
  r.backend = j.at("backend").get<std::string>();
  r.cutoff = j.at("cutoff").get<Timestamp>();
  return r;
}

namespace {

// Complete, parseable lines only; stops at the first torn line.
std::vector<std::string> good_lines(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::vector<std::string> lines;
  if (!in) return lines;
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::size_t pos = 0;
  while (pos < content.size()) {
    auto nl = content.find('\n', pos);
    if (nl == std::string::npos) break;  // no terminating newline: torn
    std::string line = content.substr(pos, nl - pos);
    if (json::parse(line, nullptr, false).is_discarded()) break;
    lines.push_back(std::move(line));
    pos = nl + 1;
  }
  return lines;
}

}  // namespace

std::vector<RunRecord> load_records(const std::filesystem::path& path) {
  std::vector<RunRecord> out;
  for (const auto& line : good_lines(path)) {
    try {
      out.push_back(record_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw Error(ErrorKind::Parse, path.string() + ": bad record: " + e.what());
    }
  }
  return out;
}

RecordStore::RecordStore(const std::filesystem::path& path, bool resume) : path_(path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::vector<std::string> keep;
  if (resume) keep = good_lines(path);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  for (const auto& line : keep) {
    auto record = record_from_json(json::parse(line));
    out << line << '\n';
    by_key_.emplace(record.key, std::move(record));
  }
}

const RunRecord* RecordStore::find(const std::string& key) const {
  auto it = by_key_.find(key);
  return it == by_key_.end() ? nullptr : &it->second;
}

void RecordStore::append(const RunRecord& record) {
  if (!by_key_.emplace(record.key, record).second) return;
  if (!path_) return;
  std::ofstream out(*path_, std::ios::binary | std::ios::app);
  if (!out) throw Error(ErrorKind::Io, "cannot append to " + path_->string());
  out << to_json(record).dump() << '\n';
}

// ---------------------------------------------------------------------------
// Evaluation

double compute_metric(std::string_view metric_name, std::span<const RunRecord> records) {
  if (metric_name == "auc") {
    std::vector<double> scores;
    std::vector<int> labels;
    scores.reserve(records.size());
    labels.reserve(records.size());
    for (const auto& r : records) {
      scores.push_back(r.score);
      labels.push_back(r.label);
    }
    return metrics::auc(scores, labels);
  }
  if (metric_name.starts_with("recall@")) {
    const auto k = std::stoul(std::string(metric_name.substr(7)));
    std::map<std::string, std::vector<const RunRecord*>> by_member;
    for (const auto& r : records) by_member[r.member_id].push_back(&r);
    std::vector<std::vector<bool>> lists;
    for (auto& [_, rs] : by_member) {
      std::sort(rs.begin(), rs.end(), [](const RunRecord* a, const RunRecord* b) {
        if (a->score != b->score) return a->score > b->score;
        return std::tie(a->item_id, a->cutoff) < std::tie(b->item_id, b->cutoff);
      });
      std::vector<bool> rel;
      for (const auto* r : rs) rel.push_back(r->label == 1);
      lists.push_back(std::move(rel));
    }
    return metrics::recall_at_k(lists, k);
  }
  throw Error(ErrorKind::InvalidArgument, "unknown metric '" + std::string(metric_name) + "'");
}

namespace {

template <typename Fn>
void parallel_for(std::size_t n, std::size_t parallelism, Fn&& fn) {
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) fn(i);
  };
  const auto workers = std::min(parallelism, n);
  if (workers <= 1) {
    worker();
    return;
  }
  std::vector<std::jthread> pool;
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
}

std::vector<std::pair<std::string, double>> header_weights(const TaskSpec& task, const PromptTemplate& tmpl) {
  std::vector<std::pair<std::string, double>> out;
  for (const auto& action : task.action_vocabulary) {
    std::string header = tmpl.history_group_header;
    auto put = [&](std::string_view from, const std::string& to) {
      for (auto pos = header.find(from); pos != std::string::npos; pos = header.find(from, pos + to.size()))
        header.replace(pos, from.size(), to);
    };
    put("{action}", task.phrase_for(action));
    put("{items}", task.item_noun_plural);
    out.emplace_back(header, task.is_positive(action) ? 1.0 : -1.0);
  }
  return out;
}

}  // namespace

EvalOutcome run_eval(const EvalContext& ctx, const TaskSpec& task, std::span<const Example> split,
                     const EvalSettings& settings, std::string_view metric_name) {
  if (!ctx.dataset || !ctx.client || !ctx.tokenizer)
    throw Error(ErrorKind::InvalidArgument, "run_eval: context lacks dataset, client or tokenizer");
  const auto& dataset = *ctx.dataset;
  const std::string backend = ctx.client->name();
  EvalOutcome outcome;

  struct Slot {
    std::optional<RenderedPrompt> prompt;
    bool overflow = false;
    std::string error;
    std::string key;
    std::optional<RunRecord> reused;
  };

  for (std::size_t begin = 0; begin < split.size(); begin += ctx.chunk_size) {
    const auto chunk = split.subspan(begin, std::min(ctx.chunk_size, split.size() - begin));
    std::vector<Slot> slots(chunk.size());

    parallel_for(chunk.size(), ctx.parallelism, [&](std::size_t i) {
      const auto& ex = chunk[i];
      auto& slot = slots[i];
      try {
        const auto& profile = dataset.member(ex.member_id);
        const auto& question = dataset.item(ex.item_id);
        auto history = history_for(dataset, ex.member_id, ex.cutoff, settings.max_history);
        std::erase_if(history, [&](const Interaction& x) { return !task.in_vocabulary(x.action); });
        BuildOptions options{ctx.tmpl, {}};
        if (ctx.embed_oracle_marker) options.preamble.push_back(synthetic::oracle_marker(ex.member_id, ex.item_id, ex.cutoff));
        slot.prompt = build_prompt(task, profile, history, lookup_in(dataset), std::span(&question, 1), settings.budget,
                                   *ctx.tokenizer, options);
        json identity = {{"task", task.task_id},          {"grid", settings.grid_point},
                         {"member", ex.member_id},        {"item", ex.item_id},
                         {"cutoff", ex.cutoff},           {"label", ex.label},
                         {"prompt", sha256_hex(slot.prompt->text)},
                         {"answers", {task.answer_positive, task.answer_negative}},
                         {"backend", backend}};
        slot.key = sha256_hex(identity.dump());
        if (ctx.store)
          if (const auto* r = ctx.store->find(slot.key)) slot.reused = *r;
      } catch (const Error& e) {
        if (e.kind() == ErrorKind::IrreducibleOverflow) slot.overflow = true;
        else slot.error = e.what();
      } catch (const std::exception& e) {
        slot.error = e.what();
      }
    });

    std::vector<ScoringRequest> requests;
    std::vector<std::size_t> request_slot;
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      const auto& slot = slots[i];
      if (slot.overflow || !slot.error.empty() || slot.reused) continue;
      const auto& ex = chunk[i];
      requests.push_back({slot.prompt->text, task.answer_positive, task.answer_negative,
                          task.task_id + ":" + settings.grid_point + ":" + ex.member_id + "/" + ex.item_id + "@" +
                              std::to_string(ex.cutoff),
                          task.task_id});
      request_slot.push_back(i);
    }
    auto scored = score_batch(*ctx.client, requests, ctx.parallelism);
    std::vector<std::optional<RunRecord>> fresh(chunk.size());
    for (std::size_t r = 0; r < scored.size(); ++r) {
      const auto i = request_slot[r];
      if (!scored[r].ok()) {
        slots[i].error = scored[r].error;
        continue;
      }
      const auto& ex = chunk[i];
      const auto& prompt = *slots[i].prompt;
      RunRecord rec;
      rec.key = slots[i].key;
      rec.request_id = requests[r].request_id;
      rec.task_id = task.task_id;
      rec.grid_point = settings.grid_point;
      rec.member_id = ex.member_id;
      rec.item_id = ex.item_id;
      rec.label = ex.label;
      rec.score = scored[r].score->probability;
      rec.logprob_positive = scored[r].score->logprob_positive;
      rec.logprob_negative = scored[r].score->logprob_negative;
      rec.token_count = prompt.token_count;
      rec.included = prompt.included_interaction_keys.size();
      rec.truncated = prompt.truncated_interaction_keys.size();
      rec.backend = backend;
      rec.cutoff = ex.cutoff;
      fresh[i] = std::move(rec);
    }

    for (std::size_t i = 0; i < chunk.size(); ++i) {
      auto& slot = slots[i];
      if (slot.overflow) {
        ++outcome.overflow;
      } else if (!slot.error.empty()) {
        ++outcome.failed;
        outcome.errors.push_back(slot.error);
      } else if (slot.reused) {
        ++outcome.reused;
        outcome.records.push_back(std::move(*slot.reused));
      } else {
        if (ctx.store) ctx.store->append(*fresh[i]);
        outcome.records.push_back(std::move(*fresh[i]));
      }
    }
  }

  if (outcome.overflow > 0)
    log::warn("task " + task.task_id + " [" + settings.grid_point + "]: " + std::to_string(outcome.overflow) +
              " examples excluded for irreducible prompt overflow");
  try {
    outcome.metric = compute_metric(metric_name, outcome.records);
  } catch (const Error& e) {
    outcome.metric_error = e.what();
  }
  return outcome;
}

// ---------------------------------------------------------------------------
// Experiments

namespace {

// "task@grid" beats a plain "task" entry.
std::optional<double> baseline_for(const std::map<std::string, double>& baselines, const std::string& task,
                                   const std::string& grid_point) {
  if (auto it = baselines.find(task + "@" + grid_point); it != baselines.end()) return it->second;
  if (auto it = baselines.find(task); it != baselines.end()) return it->second;
  return std::nullopt;
}

struct LoadedData {
  Dataset dataset;
  std::shared_ptr<const synthetic::LatentWorld> world;
  Timestamp range_begin = 0;  // inclusive
  Timestamp range_end = 1;    // exclusive
};

std::shared_ptr<LoadedData> load_source(const DatasetSource& src, std::optional<std::uint64_t> seed) {
  auto data = std::make_shared<LoadedData>();
  if (src.world) {
    auto cfg = *src.world;
    if (seed) cfg.seed = *seed;
    auto generated = synthetic::generate_world(cfg);
    data->dataset = std::move(generated.dataset);
    data->world = std::move(generated.world);
    data->range_begin = cfg.t_start;
    data->range_end = cfg.t_end;
  } else if (src.dir) {
    data->dataset = load_dataset_dir(*src.dir);
    const auto& xs = data->dataset.interactions();
    if (!xs.empty()) {
      auto [lo, hi] = std::minmax_element(xs.begin(), xs.end(),
                                          [](const auto& a, const auto& b) { return a.timestamp < b.timestamp; });
      data->range_begin = lo->timestamp;
      data->range_end = hi->timestamp + 1;
    }
  } else {
    throw Error(ErrorKind::InvalidArgument, "experiment has no dataset (give dataset.dir or dataset.world)");
  }
  return data;
}

class Runner {
 public:
  explicit Runner(const ExperimentSpec& spec)
      : spec_(spec),
        tokenizer_(make_tokenizer(spec.tokenizer)),
        tmpl_(spec.template_path ? load_template(*spec.template_path) : PromptTemplate::standard()) {
    std::filesystem::create_directories(spec.output_dir);
    store_ = RecordStore(spec.output_dir / "records.jsonl", spec.resume);
    if (!spec.backend.cache_path.empty()) {
      auto path = resolve(spec.output_dir, spec.backend.cache_path);
      cache_ = std::make_shared<ResponseCache>(path);
    }
    result_.sweep.kind = to_string(spec.kind);
    result_.sweep.metric_name = spec.metric;
  }

  const LoadedData& data_for(const TaskEntry& entry) {
    const DatasetSource& src = entry.dataset ? *entry.dataset : spec_.dataset;
    const void* id = entry.dataset ? static_cast<const void*>(&*entry.dataset) : static_cast<const void*>(&spec_.dataset);
    auto it = loaded_.find(id);
    if (it == loaded_.end())
      it = loaded_.emplace(id, load_source(src, entry.dataset ? std::nullopt : spec_.seed)).first;
    return *it->second;
  }

  std::shared_ptr<ModelClient> client_for(const TaskSpec& task, const LoadedData& data,
                                          std::optional<Timestamp> frozen_default) {
    const auto& b = spec_.backend;
    if (b.kind == "constant") return std::make_shared<ConstantClient>();
    if (b.kind == "mock") {
      if (!data.world) throw Error(ErrorKind::InvalidArgument, "mock backend needs a synthetic world dataset");
      auto mode = synthetic::oracle_mode_from_string(b.oracle_mode);
      auto frozen = b.frozen_time ? b.frozen_time : frozen_default;
      if (mode == synthetic::OracleMode::Frozen && !frozen) frozen = data.range_begin;
      synthetic::MaskedParse masked{header_weights(task, tmpl_), "Question:"};
      if (const auto* q = tmpl_.find(SectionKind::Question)) masked.question_label = q->label;
      return std::make_shared<synthetic::MockOracleClient>(data.world, mode, frozen, std::move(masked));
    }
    if (b.kind == "replay") return std::make_shared<ReplayClient>(b.model, cache_, b.first_token, b.top_logprobs);
    HttpClientOptions opts;
    opts.base_url = b.base_url;
    opts.model = b.model;
    opts.max_attempts = b.max_attempts;
    opts.initial_backoff = std::chrono::milliseconds(b.backoff_ms);
    opts.timeout = std::chrono::seconds(b.timeout_s);
    opts.first_token = b.first_token;
    opts.top_logprobs = b.top_logprobs;
    opts.from_environment();
    if (!http_) http_ = std::make_shared<HttpCompletionClient>(opts, cache_);
    return http_;
  }

  EvalOutcome eval(const TaskEntry& entry, std::span<const Example> examples, const EvalSettings& settings,
                   std::optional<Timestamp> frozen_default = std::nullopt) {
    const auto& data = data_for(entry);
    auto counting = std::make_shared<CountingClient>(client_for(entry.task, data, frozen_default));
    EvalContext ctx;
    ctx.dataset = &data.dataset;
    ctx.client = counting;
    ctx.tokenizer = tokenizer_;
    ctx.tmpl = tmpl_;
    ctx.embed_oracle_marker = spec_.embed_oracle_marker.value_or(spec_.backend.kind == "mock");
    ctx.parallelism = spec_.parallelism;
    ctx.chunk_size = spec_.chunk_size;
    ctx.store = &store_;
    auto outcome = run_eval(ctx, entry.task, examples, settings, spec_.metric);
    result_.backend_calls += counting->calls();
    if (outcome.failed > 0) {
      result_.hard_errors.push_back("task " + entry.task.task_id + " [" + settings.grid_point + "]: " +
                                    std::to_string(outcome.failed) + " examples failed; first error: " +
                                    outcome.errors.front());
    }
    return outcome;
  }

  std::vector<Example> default_split(const TaskEntry& entry) {
    const auto& data = data_for(entry);
    const auto span = data.range_end - data.range_begin;
    const Timestamp from = spec_.split.test_start.value_or(
        data.range_begin + static_cast<Timestamp>(std::floor((1.0 - spec_.split.test_fraction) * static_cast<double>(span))));
    const Timestamp to = spec_.split.test_end.value_or(data.range_end);
    return build_examples(data.dataset, entry.task, from, to, spec_.split, spec_.seed.value_or(0));
  }

  SweepPoint point(const TaskEntry& entry, const std::string& grid_point, const EvalOutcome& outcome) {
    SweepPoint p;
    p.task_id = entry.task.task_id;
    p.grid_point = grid_point;
    p.metric = outcome.metric;
    p.records = outcome.records.size();
    p.overflow = outcome.overflow;
    p.failed = outcome.failed;
    if (!outcome.metric) p.status = "failed: " + outcome.metric_error;
    if (auto b = baseline_for(spec_.baselines, p.task_id, p.grid_point); b && p.metric)
      p.gap = metrics::relative_gap(*p.metric, *b);
    for (const auto& r : outcome.records) result_.records.push_back(r);
    return p;
  }

  const ExperimentSpec& spec_;
  TokenizerHandle tokenizer_;
  PromptTemplate tmpl_;
  RecordStore store_;
  std::shared_ptr<ResponseCache> cache_;
  std::shared_ptr<HttpCompletionClient> http_;
  std::map<const void*, std::shared_ptr<LoadedData>> loaded_;
  ExperimentResult result_;
};

// Fills `normalized` on one task's points, keyed by numeric grid point.
void normalize_points(std::span<SweepPoint> points, std::optional<std::int64_t> reference) {
  if (!reference || points.empty()) return;
  std::vector<metrics::CurvePoint> curve;
  bool have_reference = false;
  for (const auto& p : points) {
    if (!p.metric) continue;
    const auto key = std::stoll(p.grid_point);
    if (key == *reference) have_reference = *p.metric != 0.0;
    curve.emplace_back(key, *p.metric);
  }
  if (!have_reference) {
    log::warn("task " + points.front().task_id + ": reference point " + std::to_string(*reference) +
              " has no usable metric; curve left unnormalized");
    return;
  }
  const auto normalized = metrics::normalize_curve(curve, *reference);
  for (auto& p : points) {
    if (!p.metric) continue;
    const auto key = std::stoll(p.grid_point);
    for (const auto& [k, v] : normalized)
      if (k == key) p.normalized = v;
  }
}

void add_task_points(ExperimentResult& result, std::vector<SweepPoint> points, std::optional<std::int64_t> reference) {
  normalize_points(points, reference);
  for (auto& p : points) result.sweep.points.push_back(std::move(p));
}

}  // namespace

ExperimentResult plain_eval(const ExperimentSpec& spec) {
  Runner run(spec);
  for (const auto& entry : spec.tasks) {
    const auto examples = run.default_split(entry);
    const auto outcome = run.eval(entry, examples, {spec.budget, spec.max_history, "eval"});
    run.result_.sweep.points.push_back(run.point(entry, "eval", outcome));
  }
  return std::move(run.result_);
}

ExperimentResult context_sweep(const ExperimentSpec& spec) {
  Runner run(spec);
  for (const auto& entry : spec.tasks) {
    const auto examples = run.default_split(entry);
    std::vector<SweepPoint> points;
    for (const auto budget : spec.grid) {
      const auto grid_point = std::to_string(budget);
      EvalSettings settings{{static_cast<std::size_t>(budget), spec.budget.reserved_completion_tokens},
                            spec.max_history, grid_point};
      points.push_back(run.point(entry, grid_point, run.eval(entry, examples, settings)));
    }
    add_task_points(run.result_, std::move(points), spec.reference);
  }
  return std::move(run.result_);
}

ExperimentResult coldstart_sweep(const ExperimentSpec& spec) {
  Runner run(spec);
  for (const auto& entry : spec.tasks) {
    const auto examples = run.default_split(entry);
    std::vector<SweepPoint> points;
    for (const auto cap : spec.grid) {
      const auto grid_point = std::to_string(cap);
      EvalSettings settings{spec.budget, static_cast<std::size_t>(cap), grid_point};
      points.push_back(run.point(entry, grid_point, run.eval(entry, examples, settings)));
    }
    add_task_points(run.result_, std::move(points), spec.reference);
  }
  return std::move(run.result_);
}

ExperimentResult temporal_sweep(const ExperimentSpec& spec) {
  Runner run(spec);
  const auto& t = spec.temporal;
  for (const auto& entry : spec.tasks) {
    const auto& data = run.data_for(entry);
    const Timestamp train_end = t.train_end.value_or(data.range_begin + (data.range_end - data.range_begin) / 2);
    const Timestamp window = t.window.value_or(t.gap);
    if (window <= 0) throw Error(ErrorKind::InvalidArgument, "temporal window must be > 0");
    const Timestamp last_end =
        train_end + t.min_gap + static_cast<Timestamp>(t.snapshots - 1) * t.gap + window;
    if (last_end > data.range_end)
      throw Error(ErrorKind::InvalidArgument,
                  "task " + entry.task.task_id + ": " + std::to_string(t.snapshots) + " snapshots with gap " +
                      std::to_string(t.gap) + "s run past the end of the data (" + std::to_string(last_end) + " > " +
                      std::to_string(data.range_end) + ")");

    std::vector<SweepPoint> points;
    for (std::size_t k = 0; k < t.snapshots; ++k) {
      const Timestamp from = train_end + t.min_gap + static_cast<Timestamp>(k) * t.gap;
      const auto examples = build_examples(data.dataset, entry.task, from, from + window, spec.split,
                                           spec.seed.value_or(0) + k);
      for (const auto& ex : examples)
        if (ex.cutoff < train_end) throw std::logic_error("test example precedes the training cutoff");
      const auto grid_point = std::to_string(k);
      if (examples.empty()) {
        SweepPoint p;
        p.task_id = entry.task.task_id;
        p.grid_point = grid_point;
        p.status = "failed: empty window";
        run.result_.hard_errors.push_back("task " + entry.task.task_id + " snapshot " + grid_point +
                                          ": no test interactions in [" + std::to_string(from) + ", " +
                                          std::to_string(from + window) + ")");
        points.push_back(std::move(p));
        continue;
      }
      const auto outcome = run.eval(entry, examples, {spec.budget, spec.max_history, grid_point}, train_end);
      points.push_back(run.point(entry, grid_point, outcome));
    }
    add_task_points(run.result_, std::move(points), spec.reference.value_or(0));
  }
  return std::move(run.result_);
}

ExperimentResult domain_suite(const ExperimentSpec& spec) {
  std::set<std::string> t1_ids;
  for (const auto& e : spec.t1_tasks) t1_ids.insert(e.task.task_id);
  for (const auto& e : spec.t2_tasks)
    if (t1_ids.contains(e.task.task_id))
      throw Error(ErrorKind::InvalidArgument, "task '" + e.task.task_id + "' appears in both t1_tasks and t2_tasks");

  Runner run(spec);
  auto run_class = [&](const std::vector<TaskEntry>& entries, DomainClass domain) {
    for (const auto& entry : entries) {
      TaskEntry tagged = entry;
      tagged.task.domain_class = domain;
      const auto examples = run.default_split(entry);
      auto point = run.point(entry, "eval", run.eval(tagged, examples, {spec.budget, spec.max_history, "eval"}));
      point.domain = domain;
      run.result_.sweep.points.push_back(std::move(point));
    }
  };
  run_class(spec.t1_tasks, DomainClass::T1);
  if (run.cache_) run.cache_->clear_accesses();

  std::set<std::string> t2_ids;
  for (const auto& e : spec.t2_tasks) t2_ids.insert(e.task.task_id);
  run_class(spec.t2_tasks, DomainClass::T2);
  if (run.cache_) {
    for (const auto& a : run.cache_->accesses()) {
      if (!t2_ids.contains(a.requester) || !t1_ids.contains(a.entry_provenance)) continue;
      if (++run.result_.t1_entries_touched_by_t2 == 1)
        run.result_.hard_errors.push_back("T2 task " + a.requester + " read cache entry " + a.key +
                                          " produced by T1 task " + a.entry_provenance);
    }
  }
  return std::move(run.result_);
}

ExperimentResult run_experiment(const ExperimentSpec& spec) {
  switch (spec.kind) {
    case ExperimentKind::PlainEval: return plain_eval(spec);
    case ExperimentKind::ContextSweep: return context_sweep(spec);
    case ExperimentKind::ColdstartSweep: return coldstart_sweep(spec);
    case ExperimentKind::TemporalSweep: return temporal_sweep(spec);
    case ExperimentKind::DomainSuite: return domain_suite(spec);
  }
  throw Error(ErrorKind::InvalidArgument, "unknown experiment kind");
}

// ---------------------------------------------------------------------------
// Reporting

namespace {

std::string fmt_double(const std::optional<double>& v) {
  if (!v) return "";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", *v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::vector<std::string>> parse_csv(std::string_view text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false, any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"' && i + 1 < text.size() && text[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field += c;
      }
      continue;
    }
    any = true;
    if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
    } else if (c == '\n') {
      row.push_back(std::move(field));
      field.clear();
      rows.push_back(std::move(row));
      row.clear();
      any = false;
    } else if (c != '\r') {
      field += c;
    }
  }
  if (quoted) throw Error(ErrorKind::Parse, "sweep csv: unterminated quote");
  if (any) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

std::optional<double> opt_double(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return std::stod(s);
}

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

std::string sweep_to_csv(const SweepResult& sweep) {
  std::string out = std::string(kSweepCsvHeader) + "\n";
  for (const auto& p : sweep.points) {
    const std::string fields[] = {csv_field(p.task_id),
                                  csv_field(p.grid_point),
                                  p.domain ? to_string(*p.domain) : "",
                                  fmt_double(p.metric),
                                  fmt_double(p.normalized),
                                  fmt_double(p.gap),
                                  std::to_string(p.records),
                                  std::to_string(p.overflow),
                                  std::to_string(p.failed),
                                  csv_field(p.status)};
    for (std::size_t i = 0; i < std::size(fields); ++i) out += (i ? "," : "") + fields[i];
    out += "\n";
  }
  return out;
}

std::vector<SweepPoint> sweep_points_from_csv(std::string_view csv) {
  auto rows = parse_csv(csv);
  if (rows.empty()) throw Error(ErrorKind::Parse, "sweep csv: missing header");
  std::string header;
  for (std::size_t i = 0; i < rows[0].size(); ++i) header += (i ? "," : "") + rows[0][i];
  if (header != kSweepCsvHeader) throw Error(ErrorKind::Parse, "sweep csv: unexpected header '" + header + "'");
  std::vector<SweepPoint> points;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& f = rows[r];
    if (f.size() != 10)
      throw Error(ErrorKind::Parse, "sweep csv row " + std::to_string(r + 1) + ": expected 10 fields");
    SweepPoint p;
    try {
      p.task_id = f[0];
      p.grid_point = f[1];
      if (!f[2].empty()) p.domain = domain_class_from_string(f[2]);
      p.metric = opt_double(f[3]);
      p.normalized = opt_double(f[4]);
      p.gap = opt_double(f[5]);
      p.records = std::stoul(f[6]);
      p.overflow = std::stoul(f[7]);
      p.failed = std::stoul(f[8]);
      p.status = f[9];
    } catch (const std::logic_error& e) {
      throw Error(ErrorKind::Parse, "sweep csv row " + std::to_string(r + 1) + ": " + e.what());
    }
    points.push_back(std::move(p));
  }
  return points;
}

json summary_json(const ExperimentResult& result) {
  json points = json::array();
  for (const auto& p : result.sweep.points) {
    points.push_back({{"task_id", p.task_id},
                      {"grid_point", p.grid_point},
                      {"domain", p.domain ? json(to_string(*p.domain)) : json(nullptr)},
                      {"metric", opt_json(p.metric)},
                      {"normalized", opt_json(p.normalized)},
                      {"gap", opt_json(p.gap)},
                      {"records", p.records},
                      {"overflow", p.overflow},
                      {"failed", p.failed},
                      {"status", p.status}});
  }
  return {{"kind", result.sweep.kind},
          {"metric", result.sweep.metric_name},
          {"points", points},
          {"records", result.records.size()},
          {"backend_calls", result.backend_calls},
          {"t1_entries_touched_by_t2", result.t1_entries_touched_by_t2},
          {"hard_errors", result.hard_errors}};
}

void emit_report(const ExperimentResult& result, const std::filesystem::path& output_dir) {
  std::filesystem::create_directories(output_dir);
  auto write = [&](const char* name, const std::string& content) {
    const auto path = output_dir / name;
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
    out << content;
  };
  std::string records;
  for (const auto& r : result.records) records += to_json(r).dump() + "\n";
  write("records.jsonl", records);
  write("sweep.csv", sweep_to_csv(result.sweep));
  write("summary.json", summary_json(result).dump(2) + "\n");
}

SweepResult sweep_from_records(std::span<const RunRecord> records, std::string_view metric_name,
                               const std::map<std::string, double>& baselines,
                               std::optional<std::int64_t> reference) {
  std::vector<std::pair<std::string, std::string>> order;
  std::map<std::pair<std::string, std::string>, std::vector<RunRecord>> groups;
  for (const auto& r : records) {
    auto key = std::make_pair(r.task_id, r.grid_point);
    auto [it, inserted] = groups.try_emplace(key);
    if (inserted) order.push_back(key);
    it->second.push_back(r);
  }
  SweepResult sweep;
  sweep.kind = "report";
  sweep.metric_name = std::string(metric_name);
  std::map<std::string, std::vector<SweepPoint>> by_task;
  std::vector<std::string> task_order;
  for (const auto& key : order) {
    const auto& rs = groups[key];
    SweepPoint p;
    p.task_id = key.first;
    p.grid_point = key.second;
    p.records = rs.size();
    try {
      p.metric = compute_metric(metric_name, rs);
    } catch (const Error& e) {
      p.status = std::string("failed: ") + e.what();
    }
    if (auto b = baseline_for(baselines, p.task_id, p.grid_point); b && p.metric)
      p.gap = metrics::relative_gap(*p.metric, *b);
    if (!by_task.contains(p.task_id)) task_order.push_back(p.task_id);
    by_task[p.task_id].push_back(std::move(p));
  }
  for (const auto& task : task_order) {
    auto& points = by_task[task];
    const bool numeric = std::all_of(points.begin(), points.end(), [](const SweepPoint& p) {
      return !p.grid_point.empty() &&
             p.grid_point.find_first_not_of("-0123456789") == std::string::npos;
    });
    if (numeric) normalize_points(points, reference);
    for (auto& p : points) sweep.points.push_back(std::move(p));
  }
  return sweep;
}

}  // namespace brewrank::harness
