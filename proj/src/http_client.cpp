#include <cmath>
#include <cstdlib>
#include <limits>
#include <thread>

#include "brewrank/error.hpp"
#include "brewrank/hash.hpp"
#include "brewrank/log.hpp"
#include "brewrank/scoring.hpp"
#include "httplib.h"
#include "json.hpp"

namespace brewrank {

using nlohmann::json;

namespace protocol {

std::string echo_body(std::string_view model, std::string_view prompt, std::string_view continuation) {
  json body = {{"model", model},
               {"prompt", std::string(prompt) + std::string(continuation)},
               {"max_tokens", 0},
               {"echo", true},
               {"logprobs", 0},
               {"temperature", 0}};
  return body.dump();
}

std::string first_token_body(std::string_view model, std::string_view prompt, int top_k) {
  json body = {{"model", model}, {"prompt", prompt}, {"max_tokens", 1},
               {"echo", false},  {"logprobs", top_k}, {"temperature", 0}};
  return body.dump();
}

namespace {

const json& logprobs_block(const json& doc) {
  if (!doc.contains("choices") || !doc["choices"].is_array() || doc["choices"].empty())
    throw Error(ErrorKind::MalformedResponse, "response has no choices");
  const auto& choice = doc["choices"][0];
  if (!choice.contains("logprobs") || !choice["logprobs"].is_object())
    throw Error(ErrorKind::MalformedResponse, "response choice has no logprobs object");
  return choice["logprobs"];
}

json parse_body(std::string_view body) {
  try {
    return json::parse(body);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::MalformedResponse, std::string("response is not JSON: ") + e.what());
  }
}

}  // namespace

ContinuationLogprobs parse_echo(std::string_view response_body, std::size_t prompt_bytes) {
  const auto doc = parse_body(response_body);
  const auto& lp = logprobs_block(doc);
  if (!lp.contains("tokens") || !lp.contains("token_logprobs") || !lp["tokens"].is_array() ||
      !lp["token_logprobs"].is_array())
    throw Error(ErrorKind::MalformedResponse, "logprobs lacks tokens/token_logprobs arrays");
  const auto& tokens = lp["tokens"];
  const auto& values = lp["token_logprobs"];
  if (tokens.size() != values.size())
    throw Error(ErrorKind::MalformedResponse, "tokens and token_logprobs differ in length");

  std::vector<std::size_t> offsets(tokens.size());
  const bool have_offsets = lp.contains("text_offset") && lp["text_offset"].is_array() &&
                            lp["text_offset"].size() == tokens.size();
  std::size_t running = 0;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (!tokens[i].is_string()) throw Error(ErrorKind::MalformedResponse, "non-string token");
    offsets[i] = have_offsets ? lp["text_offset"][i].get<std::size_t>() : running;
    running += tokens[i].get_ref<const std::string&>().size();
  }

  ContinuationLogprobs out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const auto end = offsets[i] + tokens[i].get_ref<const std::string&>().size();
    if (end <= prompt_bytes) continue;  // token lies entirely inside the prompt
    if (!values[i].is_number())
      throw Error(ErrorKind::MalformedResponse, "answer token " + std::to_string(i) + " has no logprob");
    const double v = values[i].get<double>();
    out.tokens.push_back(v);
    out.total += v;
  }
  if (out.tokens.empty())
    throw Error(ErrorKind::MalformedResponse, "response tokens do not cover the appended answer");
  return out;
}

double parse_first_token(std::string_view response_body, std::string_view answer) {
  const auto doc = parse_body(response_body);
  const auto& lp = logprobs_block(doc);
  if (!lp.contains("top_logprobs") || !lp["top_logprobs"].is_array() || lp["top_logprobs"].empty() ||
      !lp["top_logprobs"][0].is_object())
    throw Error(ErrorKind::MalformedResponse, "first-token response lacks top_logprobs");
  // Leading token of the answer: optional leading spaces then one word.
  std::size_t start = answer.find_first_not_of(' ');
  if (start == std::string_view::npos) start = answer.size();
  std::size_t stop = answer.find(' ', start);
  const auto word = answer.substr(start, stop == std::string_view::npos ? answer.size() - start : stop - start);
  for (const auto& [token, value] : lp["top_logprobs"][0].items()) {
    std::string_view t = token;
    while (!t.empty() && t.front() == ' ') t.remove_prefix(1);
    if (t == word && value.is_number()) return value.get<double>();
  }
  return -std::numeric_limits<double>::infinity();
}

}  // namespace protocol

HttpClientOptions& HttpClientOptions::from_environment() {
  if (const char* key = std::getenv("BREWRANK_API_KEY")) api_key = key;
  return *this;
}

HttpCompletionClient::HttpCompletionClient(HttpClientOptions options, std::shared_ptr<ResponseCache> cache)
    : options_(std::move(options)), cache_(std::move(cache)) {
  if (options_.max_attempts < 1) throw Error(ErrorKind::InvalidArgument, "max_attempts must be >= 1");
}

std::size_t HttpCompletionClient::network_calls() const {
  std::lock_guard lock(stats_mutex_);
  return network_calls_;
}

std::string HttpCompletionClient::fetch(const std::string& body, const ScoringRequest& request) {
  const auto key = sha256_hex(body);
  if (cache_) {
    if (auto hit = cache_->lookup(key, request.provenance)) return hit->response;
  }

  httplib::Client http(options_.base_url);
  http.set_connection_timeout(options_.timeout);
  http.set_read_timeout(options_.timeout);
  http.set_write_timeout(options_.timeout);
  httplib::Headers headers;
  if (!options_.api_key.empty()) headers.emplace("Authorization", "Bearer " + options_.api_key);

  auto delay = options_.initial_backoff;
  std::string last_error;
  for (int attempt = 1; attempt <= options_.max_attempts; ++attempt) {
    {
      std::lock_guard lock(stats_mutex_);
      ++network_calls_;
    }
    auto res = http.Post("/v1/completions", headers, body, "application/json");
    if (res && res->status >= 200 && res->status < 300) {
      if (cache_) cache_->store(key, res->body, request.provenance);
      return res->body;
    }
    if (res) {
      const auto parsed = json::parse(res->body, nullptr, false);
      if (!parsed.is_discarded() && parsed.is_object() && parsed.contains("error")) {
        throw Error(ErrorKind::BackendRefusal,
                    "backend refused request " + request.request_id + " (HTTP " + std::to_string(res->status) +
                        ", prompt " + std::to_string(request.prompt_text.size()) + " bytes): " +
                        parsed["error"].dump());
      }
      last_error = "HTTP " + std::to_string(res->status);
    } else {
      last_error = httplib::to_string(res.error());
    }
    if (attempt < options_.max_attempts) {
      log::debug("request " + request.request_id + " attempt " + std::to_string(attempt) + " failed: " + last_error);
      std::this_thread::sleep_for(delay);
      delay *= 2;
    }
  }
  throw Error(ErrorKind::Transport, "backend unreachable after " + std::to_string(options_.max_attempts) +
                                        " attempts for request " + request.request_id + ": " + last_error);
}

namespace {

void warn_on_length_mismatch(const ScoringRequest& request, std::size_t pos_tokens, std::size_t neg_tokens) {
  const auto diff = pos_tokens > neg_tokens ? pos_tokens - neg_tokens : neg_tokens - pos_tokens;
  if (diff > 2)
    log::warn("request " + request.request_id + ": answer token lengths differ by " + std::to_string(diff) +
              " (" + std::to_string(pos_tokens) + " vs " + std::to_string(neg_tokens) + ")");
}

template <typename Fetch>
AnswerLogprobs completion_logprobs(const ScoringRequest& request, std::string_view model, bool first_token,
                                   int top_k, std::string backend, Fetch&& fetch) {
  AnswerLogprobs out;
  out.backend = std::move(backend);
  if (first_token) {
    const auto body = fetch(protocol::first_token_body(model, request.prompt_text, top_k));
    out.positive = protocol::parse_first_token(body, request.answer_positive);
    out.negative = protocol::parse_first_token(body, request.answer_negative);
    return out;
  }
  const auto pos = protocol::parse_echo(fetch(protocol::echo_body(model, request.prompt_text, request.answer_positive)),
                                        request.prompt_text.size());
  const auto neg = protocol::parse_echo(fetch(protocol::echo_body(model, request.prompt_text, request.answer_negative)),
                                        request.prompt_text.size());
  warn_on_length_mismatch(request, pos.tokens.size(), neg.tokens.size());
  out.positive = pos.total;
  out.negative = neg.total;
  out.positive_tokens = pos.tokens;
  out.negative_tokens = neg.tokens;
  return out;
}

}  // namespace

AnswerLogprobs HttpCompletionClient::logprobs(const ScoringRequest& request) {
  return completion_logprobs(request, options_.model, options_.first_token, options_.top_logprobs, name(),
                             [&](const std::string& body) { return fetch(body, request); });
}

ReplayClient::ReplayClient(std::string model, std::shared_ptr<ResponseCache> cache, bool first_token,
                           int top_logprobs)
    : model_(std::move(model)), cache_(std::move(cache)), first_token_(first_token), top_logprobs_(top_logprobs) {
  if (!cache_) throw Error(ErrorKind::InvalidArgument, "replay client needs a response cache");
}

AnswerLogprobs ReplayClient::logprobs(const ScoringRequest& request) {
  return completion_logprobs(request, model_, first_token_, top_logprobs_, name(), [&](const std::string& body) {
    const auto key = sha256_hex(body);
    auto hit = cache_->lookup(key, request.provenance);
    if (!hit) throw Error(ErrorKind::CacheMiss, "replay cache miss for request hash " + key);
    return hit->response;
  });
}

}  // namespace brewrank
