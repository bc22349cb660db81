#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "brewrank/entities.hpp"
#include "brewrank/scoring.hpp"
#include "brewrank/synthetic.hpp"
#include "brewrank/tokenizer.hpp"
#include "brewrank/verbalizer.hpp"
#include "json.hpp"

namespace brewrank::harness {

enum class ExperimentKind { PlainEval, ContextSweep, ColdstartSweep, TemporalSweep, DomainSuite };

const char* to_string(ExperimentKind kind);
ExperimentKind experiment_kind_from_string(std::string_view text);

/// Either a directory of JSONL files or a world config generated in memory.
struct DatasetSource {
  std::optional<std::filesystem::path> dir;
  std::optional<synthetic::WorldConfig> world;
};

struct BackendConfig {
  std::string kind = "mock";  // mock | http | replay | constant
  std::string oracle_mode = "full";
  std::optional<Timestamp> frozen_time;
  std::string base_url = "http://127.0.0.1:8000";
  std::string model = "default";
  std::string cache_path;  // relative paths resolve against the output directory
  bool first_token = false;
  int max_attempts = 5;
  int backoff_ms = 250;
  int timeout_s = 120;
  int top_logprobs = 20;
};

struct TaskEntry {
  TaskSpec task;
  std::optional<DatasetSource> dataset;  // falls back to the experiment's dataset
};

struct SplitConfig {
  std::optional<Timestamp> test_start;
  std::optional<Timestamp> test_end;
  double test_fraction = 0.2;  // trailing share of the time range, when no explicit window
  std::size_t max_examples = 0;     // 0 = all; otherwise a seeded subsample
  std::size_t per_member_max = 0;   // 0 = all; otherwise the earliest k per member
};

struct TemporalConfig {
  std::optional<Timestamp> train_end;  // default: middle of the dataset time range
  Timestamp gap = 30 * 86'400;
  std::optional<Timestamp> window;     // default: gap
  std::size_t snapshots = 6;
  Timestamp min_gap = 0;               // extra offset before the first window
};

struct ExperimentSpec {
  ExperimentKind kind = ExperimentKind::PlainEval;
  std::vector<TaskEntry> tasks;
  std::vector<TaskEntry> t1_tasks;
  std::vector<TaskEntry> t2_tasks;
  DatasetSource dataset;
  BackendConfig backend;
  std::string tokenizer = "default";
  TokenBudget budget{2048, 16};
  std::size_t max_history = 100;
  SplitConfig split;
  std::vector<std::int64_t> grid;
  std::optional<std::int64_t> reference;
  TemporalConfig temporal;
  std::string metric = "auc";
  std::map<std::string, double> baselines;  // per task, user-supplied
  std::filesystem::path output_dir = "out";
  std::optional<std::uint64_t> seed;
  std::size_t parallelism = 4;
  bool resume = false;
  std::optional<std::filesystem::path> template_path;
  std::optional<bool> embed_oracle_marker;  // default: backend.kind == "mock"
  std::size_t chunk_size = 256;

  /// Fills grid defaults per kind and checks invariants.
  void finalize();
};

/// Parses an experiment document. Relative paths are resolved against
/// `base_dir`. Unknown keys are rejected.
ExperimentSpec experiment_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});

/// Sets a dotted-path key ("backend.kind") in a JSON document. The value is
/// parsed as JSON when possible, otherwise taken as a string.
void apply_override(nlohmann::json& doc, std::string_view dotted_key, std::string_view value);

// ---------------------------------------------------------------------------

struct Example {
  std::string member_id;
  std::string item_id;
  int label = 0;
  Timestamp cutoff = 0;
};

/// Interactions in [from, to) whose action is in the task vocabulary,
/// ordered by (cutoff, member, item).
std::vector<Example> build_examples(const Dataset& dataset, const TaskSpec& task, Timestamp from, Timestamp to,
                                    const SplitConfig& split, std::uint64_t seed);

struct RunRecord {
  std::string key;
  std::string request_id;
  std::string task_id;
  std::string grid_point;
  std::string member_id;
  std::string item_id;
  int label = 0;
  double score = 0.5;
  double logprob_positive = 0;
  double logprob_negative = 0;
  std::size_t token_count = 0;
  std::size_t included = 0;
  std::size_t truncated = 0;
  std::string backend;
  Timestamp cutoff = 0;

  bool operator==(const RunRecord&) const = default;
};

nlohmann::json to_json(const RunRecord& record);
RunRecord record_from_json(const nlohmann::json& j);

/// records.jsonl writer with resume support. Existing rows are kept when
/// resuming (a torn last line is dropped); otherwise the file is truncated.
class RecordStore {
 public:
  RecordStore() = default;  // in-memory only
  RecordStore(const std::filesystem::path& path, bool resume);

  const RunRecord* find(const std::string& key) const;
  void append(const RunRecord& record);
  std::size_t size() const { return by_key_.size(); }

 private:
  std::optional<std::filesystem::path> path_;
  std::map<std::string, RunRecord> by_key_;
};

/// Counts calls and forwards to another client.
class CountingClient final : public ModelClient {
 public:
  explicit CountingClient(std::shared_ptr<ModelClient> inner) : inner_(std::move(inner)) {}
  std::string name() const override { return inner_->name(); }
  AnswerLogprobs logprobs(const ScoringRequest& request) override {
    ++calls_;
    return inner_->logprobs(request);
  }
  std::size_t calls() const { return calls_; }

 private:
  std::shared_ptr<ModelClient> inner_;
  std::atomic<std::size_t> calls_{0};
};

/// Everything one task evaluation needs.
struct EvalContext {
  const Dataset* dataset = nullptr;
  std::shared_ptr<ModelClient> client;
  TokenizerHandle tokenizer;
  PromptTemplate tmpl = PromptTemplate::standard();
  bool embed_oracle_marker = false;
  std::size_t parallelism = 1;
  std::size_t chunk_size = 256;
  RecordStore* store = nullptr;  // may be null
};

struct EvalSettings {
  TokenBudget budget;
  std::size_t max_history = 100;
  std::string grid_point = "eval";
};

struct EvalOutcome {
  std::optional<double> metric;
  std::string metric_error;  // why metric is empty
  std::vector<RunRecord> records;
  std::size_t overflow = 0;
  std::size_t failed = 0;
  std::size_t reused = 0;  // served from the record store
  std::vector<std::string> errors;
};

/// history_for -> build_prompt -> score_answers -> record, for each example.
EvalOutcome run_eval(const EvalContext& ctx, const TaskSpec& task, std::span<const Example> split,
                     const EvalSettings& settings, std::string_view metric_name = "auc");

/// Metric over records; throws when undefined (e.g. single-class AUC).
double compute_metric(std::string_view metric_name, std::span<const RunRecord> records);

// ---------------------------------------------------------------------------

struct SweepPoint {
  std::string task_id;
  std::string grid_point;
  std::optional<DomainClass> domain;
  std::optional<double> metric;
  std::optional<double> normalized;
  std::optional<double> gap;
  std::size_t records = 0;
  std::size_t overflow = 0;
  std::size_t failed = 0;
  std::string status = "ok";

  bool operator==(const SweepPoint&) const = default;
};

struct SweepResult {
  std::string kind;
  std::string metric_name = "auc";
  std::vector<SweepPoint> points;

  bool operator==(const SweepResult&) const = default;
};

struct ExperimentResult {
  SweepResult sweep;
  std::vector<RunRecord> records;
  std::vector<std::string> hard_errors;
  std::size_t backend_calls = 0;
  std::size_t t1_entries_touched_by_t2 = 0;
};

ExperimentResult run_experiment(const ExperimentSpec& spec);
ExperimentResult plain_eval(const ExperimentSpec& spec);
ExperimentResult context_sweep(const ExperimentSpec& spec);
ExperimentResult coldstart_sweep(const ExperimentSpec& spec);
ExperimentResult temporal_sweep(const ExperimentSpec& spec);
ExperimentResult domain_suite(const ExperimentSpec& spec);

/// Column order of sweep.csv.
inline constexpr const char* kSweepCsvHeader =
    "task_id,grid_point,domain,metric,normalized,gap,records,overflow,failed,status";

std::string sweep_to_csv(const SweepResult& sweep);
/// Inverse of sweep_to_csv for the points (kind and metric name are not in the CSV).
std::vector<SweepPoint> sweep_points_from_csv(std::string_view csv);

nlohmann::json summary_json(const ExperimentResult& result);

/// Writes records.jsonl, sweep.csv and summary.json into `output_dir`.
void emit_report(const ExperimentResult& result, const std::filesystem::path& output_dir);

/// Reads records.jsonl back (torn last line ignored).
std::vector<RunRecord> load_records(const std::filesystem::path& path);

/// Recomputes a sweep from records: one point per (task, grid point), in
/// first-appearance order.
SweepResult sweep_from_records(std::span<const RunRecord> records, std::string_view metric_name,
                               const std::map<std::string, double>& baselines = {},
                               std::optional<std::int64_t> reference = std::nullopt);

}  // namespace brewrank::harness
