#pragma once

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace brewrank {

/// exp(lp_pos) / (exp(lp_pos) + exp(lp_neg)), evaluated on the logprob
/// difference so large magnitudes do not overflow. Either input may be
/// -inf, not both; NaN is rejected.
double score_binary(double lp_pos, double lp_neg);

struct ScoringRequest {
  std::string prompt_text;
  std::string answer_positive;
  std::string answer_negative;
  std::string request_id;
  /// Task the request belongs to; recorded on cache entries.
  std::string provenance;

  void check() const;
};

struct AnswerLogprobs {
  double positive = 0.0;  // summed over the answer's tokens
  double negative = 0.0;
  std::string backend;
  std::vector<double> positive_tokens;  // optional per-token breakdown
  std::vector<double> negative_tokens;
};

struct Score {
  double probability = 0.5;
  double logprob_positive = 0.0;
  double logprob_negative = 0.0;
};

/// A scoring backend. Implementations must tolerate concurrent calls.
class ModelClient {
 public:
  virtual ~ModelClient() = default;
  virtual std::string name() const = 0;
  virtual AnswerLogprobs logprobs(const ScoringRequest& request) = 0;
};

Score score_answers(ModelClient& client, const ScoringRequest& request);

struct BatchEntry {
  std::optional<Score> score;
  std::string error;  // set iff !score
  bool ok() const { return score.has_value(); }
};

/// Scores every request with at most `parallelism` in flight. Results keep
/// input order; a failing request only fails its own entry.
std::vector<BatchEntry> score_batch(ModelClient& client, std::span<const ScoringRequest> requests,
                                    std::size_t parallelism);

// ---------------------------------------------------------------------------
// Response cache

/// Append-only JSONL file of {"key", "response", "provenance"} rows. Keys
/// are SHA-256 digests of request bodies. Reads are recorded so callers can
/// audit which entries a given provenance touched.
class ResponseCache {
 public:
  struct Entry {
    std::string response;
    std::string provenance;
  };
  struct Access {
    std::string key;
    std::string requester;
    std::string entry_provenance;
  };

  /// In-memory cache (nothing persisted).
  ResponseCache() = default;
  /// Loads existing rows from `path` (if any); new rows are appended there.
  explicit ResponseCache(std::filesystem::path path);

  std::optional<Entry> lookup(const std::string& key, std::string_view requester);
  void store(const std::string& key, const std::string& response, std::string_view provenance);

  std::size_t size() const;
  std::vector<Access> accesses() const;
  void clear_accesses();

 private:
  mutable std::mutex mutex_;
  std::optional<std::filesystem::path> path_;
  std::unordered_map<std::string, Entry> entries_;
  std::vector<Access> accesses_;
  bool needs_newline_ = false;
};

// ---------------------------------------------------------------------------
// Completion-endpoint protocol

struct ContinuationLogprobs {
  double total = 0.0;
  std::vector<double> tokens;
};

namespace protocol {

/// Body for echo scoring of prompt+continuation: max_tokens 0, echo true.
std::string echo_body(std::string_view model, std::string_view prompt, std::string_view continuation);

/// Body for the approximate first-token mode: one generated token with the
/// top `top_k` alternatives.
std::string first_token_body(std::string_view model, std::string_view prompt, int top_k);

/// Sum of logprobs over the tokens that cover bytes at or beyond
/// `prompt_bytes` in an echoed completion response.
ContinuationLogprobs parse_echo(std::string_view response_body, std::size_t prompt_bytes);

/// Logprob of `answer`'s leading token among the first generated token's
/// alternatives; -inf when absent.
double parse_first_token(std::string_view response_body, std::string_view answer);

}  // namespace protocol

struct HttpClientOptions {
  std::string base_url = "http://127.0.0.1:8000";
  std::string model = "default";
  std::string api_key;  // read from BREWRANK_API_KEY by from_environment()
  int max_attempts = 5;
  std::chrono::milliseconds initial_backoff{250};
  std::chrono::seconds timeout{120};
  bool first_token = false;
  int top_logprobs = 20;

  /// Fills api_key from the environment.
  HttpClientOptions& from_environment();
};

/// POSTs to <base_url>/v1/completions once per candidate answer. Responses
/// are written through to `cache` (when given) and served from it on reruns.
class HttpCompletionClient final : public ModelClient {
 public:
  explicit HttpCompletionClient(HttpClientOptions options, std::shared_ptr<ResponseCache> cache = nullptr);

  std::string name() const override { return "http:" + options_.model; }
  AnswerLogprobs logprobs(const ScoringRequest& request) override;

  /// Number of requests actually sent over the network (retries included).
  std::size_t network_calls() const;

 private:
  std::string fetch(const std::string& body, const ScoringRequest& request);

  HttpClientOptions options_;
  std::shared_ptr<ResponseCache> cache_;
  mutable std::mutex stats_mutex_;
  std::size_t network_calls_ = 0;
};

/// Serves responses recorded by HttpCompletionClient. A miss is an error.
class ReplayClient final : public ModelClient {
 public:
  ReplayClient(std::string model, std::shared_ptr<ResponseCache> cache, bool first_token = false,
               int top_logprobs = 20);

  std::string name() const override { return "http:" + model_; }
  AnswerLogprobs logprobs(const ScoringRequest& request) override;

 private:
  std::string model_;
  std::shared_ptr<ResponseCache> cache_;
  bool first_token_;
  int top_logprobs_;
};

/// Ignores the prompt; both answers get the same logprob.
class ConstantClient final : public ModelClient {
 public:
  std::string name() const override { return "constant"; }
  AnswerLogprobs logprobs(const ScoringRequest& request) override;
};

}  // namespace brewrank
