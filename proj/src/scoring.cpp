#include "brewrank/scoring.hpp"

#include <atomic>
#include <cmath>
#include <fstream>
#include <limits>
#include <thread>

#include "brewrank/error.hpp"
#include "brewrank/log.hpp"
#include "json.hpp"

namespace brewrank {

using nlohmann::json;

double score_binary(double lp_pos, double lp_neg) {
  if (std::isnan(lp_pos) || std::isnan(lp_neg))
    throw Error(ErrorKind::InvalidArgument, "score_binary: NaN logprob");
  constexpr double ninf = -std::numeric_limits<double>::infinity();
  if (lp_pos == ninf && lp_neg == ninf)
    throw Error(ErrorKind::InvalidArgument, "score_binary: both logprobs are -inf");
  if (lp_pos == std::numeric_limits<double>::infinity() || lp_neg == std::numeric_limits<double>::infinity())
    throw Error(ErrorKind::InvalidArgument, "score_binary: +inf logprob");
  if (lp_neg == ninf) return 1.0;
  if (lp_pos == ninf) return 0.0;
  // Dividing by the larger exponential keeps the exponent non-positive.
  const double d = lp_pos - lp_neg;
  if (d >= 0) return 1.0 / (1.0 + std::exp(-d));
  const double e = std::exp(d);
  return e / (1.0 + e);
}

void ScoringRequest::check() const {
  if (answer_positive.empty() || answer_negative.empty())
    throw Error(ErrorKind::InvalidArgument, "request " + request_id + ": empty candidate answer");
  if (answer_positive == answer_negative)
    throw Error(ErrorKind::InvalidArgument, "request " + request_id + ": candidate answers are identical");
}

Score score_answers(ModelClient& client, const ScoringRequest& request) {
  request.check();
  auto lp = client.logprobs(request);
  Score s;
  s.logprob_positive = lp.positive;
  s.logprob_negative = lp.negative;
  s.probability = score_binary(lp.positive, lp.negative);
  return s;
}

std::vector<BatchEntry> score_batch(ModelClient& client, std::span<const ScoringRequest> requests,
                                    std::size_t parallelism) {
  if (parallelism == 0) throw Error(ErrorKind::InvalidArgument, "parallelism must be >= 1");
  std::vector<BatchEntry> results(requests.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < requests.size(); i = next++) {
      try {
        results[i].score = score_answers(client, requests[i]);
      } catch (const std::exception& e) {
        results[i].error = e.what();
      }
    }
  };
  const std::size_t workers = std::min(parallelism, requests.size());
  if (workers <= 1) {
    worker();
    return results;
  }
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  pool.clear();  // joins
  return results;
}

AnswerLogprobs ConstantClient::logprobs(const ScoringRequest&) {
  AnswerLogprobs lp;
  lp.positive = lp.negative = std::log(0.5);
  lp.backend = name();
  return lp;
}

// ---------------------------------------------------------------------------

ResponseCache::ResponseCache(std::filesystem::path path) : path_(std::move(path)) {
  std::ifstream in(*path_, std::ios::binary);
  if (!in) return;
  in.seekg(0, std::ios::end);
  if (in.tellg() > 0) {
    in.seekg(-1, std::ios::end);
    needs_newline_ = in.get() != '\n';
  }
  in.seekg(0);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      auto j = json::parse(line);
      entries_.insert_or_assign(j.at("key").get<std::string>(),
                                Entry{j.at("response").get<std::string>(), j.value("provenance", std::string{})});
    } catch (const json::exception& e) {
      // A torn final line from an interrupted writer is skipped.
      log::warn("response cache " + path_->string() + ":" + std::to_string(line_no) + ": skipping bad row (" +
                e.what() + ")");
    }
  }
}

std::optional<ResponseCache::Entry> ResponseCache::lookup(const std::string& key, std::string_view requester) {
  std::lock_guard lock(mutex_);
  auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  accesses_.push_back({key, std::string(requester), it->second.provenance});
  return it->second;
}

void ResponseCache::store(const std::string& key, const std::string& response, std::string_view provenance) {
  std::lock_guard lock(mutex_);
  if (entries_.contains(key)) return;
  entries_.emplace(key, Entry{response, std::string(provenance)});
  if (path_) {
    if (path_->has_parent_path()) std::filesystem::create_directories(path_->parent_path());
    std::ofstream out(*path_, std::ios::app | std::ios::binary);
    if (!out) throw Error(ErrorKind::Io, "cannot append to response cache " + path_->string());
    if (needs_newline_) out << '\n';  // seal a torn row before appending
    needs_newline_ = false;
    json row = {{"key", key}, {"response", response}};
    if (!provenance.empty()) row["provenance"] = provenance;
    out << row.dump() << '\n';
  }
}

std::size_t ResponseCache::size() const {
  std::lock_guard lock(mutex_);
  return entries_.size();
}

std::vector<ResponseCache::Access> ResponseCache::accesses() const {
  std::lock_guard lock(mutex_);
  return accesses_;
}

void ResponseCache::clear_accesses() {
  std::lock_guard lock(mutex_);
  accesses_.clear();
}

}  // namespace brewrank
