#include <cmath>
#include <cstdlib>
#include <limits>
#include <random>
#include <thread>

#include "brewrank/error.hpp"
#include "brewrank/hash.hpp"
#include "brewrank/scoring.hpp"
#include "brewrank/synthetic.hpp"
#include "doctest.h"
#include "fixtures.hpp"
#include "stub_server.hpp"

using namespace brewrank;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Closed form, evaluated the naive way.
double naive_softmax(double a, double b) { return std::exp(a) / (std::exp(a) + std::exp(b)); }

ScoringRequest request(std::string prompt, std::string id = "r") {
  return {std::move(prompt), " apply", " not apply", std::move(id), "job_apply"};
}

// World whose member "m"/item "i" have <u, v> = 0, so p = sigmoid(beta).
std::shared_ptr<const synthetic::LatentWorld> orthogonal_world(double beta) {
  synthetic::WorldConfig cfg;
  cfg.alpha = 1.0;
  cfg.beta = beta;
  std::vector<double> u(8, 0.0), v(8, 0.0);
  u[0] = 1.0;
  v[1] = 1.0;
  return std::make_shared<synthetic::LatentWorld>(cfg, std::unordered_map<std::string, std::vector<double>>{{"m", u}},
                                                  std::unordered_map<std::string, std::vector<double>>{{"i", v}});
}

class ConcurrencyProbe final : public ModelClient {
 public:
  std::string name() const override { return "probe"; }
  AnswerLogprobs logprobs(const ScoringRequest& r) override {
    const int now = ++in_flight_;
    int seen = max_seen_.load();
    while (now > seen && !max_seen_.compare_exchange_weak(seen, now)) {
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(2));
    --in_flight_;
    AnswerLogprobs out;
    out.positive = -static_cast<double>(r.prompt_text.size() % 7);
    out.negative = -1.0;
    return out;
  }
  int max_seen() const { return max_seen_; }

 private:
  std::atomic<int> in_flight_{0};
  std::atomic<int> max_seen_{0};
};

}  // namespace

TEST_CASE("score_binary spot values") {
  CHECK(score_binary(-3.0, -3.0) == 0.5);
  CHECK(score_binary(-2.0, -kInf) == 1.0);
  CHECK(score_binary(-kInf, -2.0) == 0.0);
  CHECK(score_binary(0.0, -2.3) == doctest::Approx(1.0 / (1.0 + std::exp(-2.3))).epsilon(1e-15));
  CHECK(std::abs(score_binary(2.3, 0.0) - 0.908877) < 1e-6);
  CHECK_THROWS_AS(score_binary(-kInf, -kInf), Error);
  CHECK_THROWS_AS(score_binary(std::nan(""), 0.0), Error);
  CHECK_THROWS_AS(score_binary(0.0, std::nan("")), Error);
}

TEST_CASE("score_binary properties") {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> lp(-60.0, 5.0), shift(-30.0, 30.0);
  for (int i = 0; i < 20000; ++i) {
    const double a = lp(rng), b = lp(rng), c = shift(rng);
    const double p = score_binary(a, b);
    CHECK(p >= 0.0);
    CHECK(p <= 1.0);
    CHECK(std::abs(p + score_binary(b, a) - 1.0) <= std::numeric_limits<double>::epsilon());
    CHECK(std::abs(score_binary(a + c, b + c) - p) <= 1e-12);
    if (std::abs(a - b) < 30) CHECK(std::abs(p - naive_softmax(a, b)) <= 1e-12);
    const double bump = a + 0.01 + std::abs(a) * 1e-3;
    if (std::abs(a - b) < 30) CHECK(score_binary(bump, b) > p);
  }
}

TEST_CASE("mock oracle round trip through score_answers") {
  auto world = orthogonal_world(std::log(3.0));  // sigmoid(ln 3) = 0.75
  synthetic::MockOracleClient client(world, synthetic::OracleMode::Full);
  const auto req = request(synthetic::oracle_marker("m", "i", 0) + "\nInstruction: x");
  const auto s = score_answers(client, req);
  CHECK(std::abs(s.probability - 0.75) < 1e-9);
  const auto again = score_answers(client, req);
  CHECK(again.probability == s.probability);
  CHECK(again.logprob_positive == s.logprob_positive);
  CHECK(again.logprob_negative == s.logprob_negative);
  CHECK_THROWS_AS(score_answers(client, request("no marker")), Error);
}

TEST_CASE("replay miss names the request hash") {
  auto cache = std::make_shared<ResponseCache>();
  ReplayClient replay("m", cache);
  const auto req = request("prompt");
  const auto hash = sha256_hex(protocol::echo_body("m", "prompt", " apply"));
  try {
    score_answers(replay, req);
    FAIL("expected miss");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::CacheMiss);
    CHECK(std::string(e.what()).find(hash) != std::string::npos);
  }
}

TEST_CASE("request validation") {
  ScoringRequest r = request("p");
  r.answer_negative = r.answer_positive;
  CHECK_THROWS_AS(r.check(), Error);
  r = request("p");
  r.answer_positive.clear();
  CHECK_THROWS_AS(r.check(), Error);
}

TEST_CASE("score_batch keeps order and isolates failures") {
  auto world = orthogonal_world(0.2);
  synthetic::MockOracleClient mock(world, synthetic::OracleMode::Full);
  std::vector<ScoringRequest> reqs;
  for (int i = 0; i < 100; ++i)
    reqs.push_back(request(synthetic::oracle_marker("m", "i", i) + "\n" + std::string(i, 'x'), std::to_string(i)));
  reqs[3].answer_negative = reqs[3].answer_positive;

  const auto p8 = score_batch(mock, reqs, 8);
  REQUIRE(p8.size() == 100);
  int ok = 0;
  for (const auto& e : p8) ok += e.ok();
  CHECK(ok == 99);
  CHECK_FALSE(p8[3].ok());
  CHECK_FALSE(p8[3].error.empty());

  ConcurrencyProbe probe;
  const auto a = score_batch(probe, reqs, 1);
  const auto b = score_batch(probe, reqs, 16);
  for (std::size_t i = 0; i < reqs.size(); ++i) {
    REQUIRE(a[i].ok() == b[i].ok());
    if (a[i].ok()) CHECK(a[i].score->probability == b[i].score->probability);
  }
  CHECK(probe.max_seen() <= 16);
  ConcurrencyProbe probe4;
  score_batch(probe4, reqs, 4);
  CHECK(probe4.max_seen() <= 4);
  CHECK(probe4.max_seen() >= 2);
  CHECK_THROWS_AS(score_batch(probe, reqs, 0), Error);
}

TEST_CASE("constant client is prompt-blind") {
  ConstantClient c;
  CHECK(score_answers(c, request("a")).probability == 0.5);
  CHECK(score_answers(c, request("completely different")).probability == 0.5);
}

TEST_CASE("echo parsing") {
  const std::string prompt = "Answer: The member will";
  SUBCASE("offsets present") {
    const auto body = R"({"choices":[{"logprobs":{"tokens":["Answer",":"," The"," member"," will"," not"," apply"],
      "token_logprobs":[null,-1,-2,-3,-4,-0.5,-0.25],"text_offset":[0,6,7,11,18,23,27]}}]})";
    const auto c = protocol::parse_echo(body, prompt.size());
    CHECK(c.tokens.size() == 2);
    CHECK(c.total == -0.75);
  }
  SUBCASE("offsets absent falls back to token lengths") {
    const auto body = R"({"choices":[{"logprobs":{"tokens":["Answer",":"," The"," member"," will"," apply"],
      "token_logprobs":[null,-1,-2,-3,-4,-0.5]}}]})";
    CHECK(protocol::parse_echo(body, prompt.size()).total == -0.5);
  }
  SUBCASE("malformed") {
    CHECK_THROWS_AS(protocol::parse_echo("not json", 3), Error);
    CHECK_THROWS_AS(protocol::parse_echo(R"({"choices":[]})", 3), Error);
    CHECK_THROWS_AS(protocol::parse_echo(R"({"choices":[{"logprobs":{"tokens":["a"],"token_logprobs":[-1]}}]})", 5),
                    Error);
  }
}

TEST_CASE("cache file survives a torn last line") {
  auto dir = fixtures::scratch_dir("cache");
  {
    ResponseCache cache(dir / "c.jsonl");
    cache.store("k1", "r1", "t");
    cache.store("k2", "r2", "t");
  }
  auto content = fixtures::read_file(dir / "c.jsonl");
  fixtures::write_file(dir / "c.jsonl", content + R"({"key":"k3","respo)");
  ResponseCache reloaded(dir / "c.jsonl");
  CHECK(reloaded.size() == 2);
  auto hit = reloaded.lookup("k2", "someone");
  REQUIRE(hit);
  CHECK(hit->response == "r2");
  CHECK(hit->provenance == "t");
  REQUIRE(reloaded.accesses().size() == 1);
  CHECK(reloaded.accesses()[0].requester == "someone");

  reloaded.store("k4", "r4", "t");
  ResponseCache third(dir / "c.jsonl");
  CHECK(third.size() == 3);
  CHECK(third.lookup("k4", "x"));
}

// ---------------------------------------------------------------------------
// Wire protocol against the in-process stub.

namespace {

HttpClientOptions options_for(const stub::Server& s) {
  HttpClientOptions o;
  o.base_url = s.url();
  o.model = "stub";
  o.initial_backoff = std::chrono::milliseconds(1);
  o.timeout = std::chrono::seconds(5);
  return o;
}

}  // namespace

TEST_CASE("answer-span logprobs equal the injected values") {
  const std::vector<double> one = {-0.3125};
  const std::vector<double> three = {-1.5, -0.0625, -2.75};
  stub::Server server({" apply", " will not apply"}, [&](std::string_view, std::string_view answer) {
    return answer == " apply" ? one : three;
  });
  HttpCompletionClient client(options_for(server));
  ScoringRequest req{"Question: x\n\nAnswer: The member", " apply", " will not apply", "w1", "t"};
  const auto lp = client.logprobs(req);
  CHECK(lp.positive == one[0]);
  CHECK(lp.negative == three[0] + three[1] + three[2]);
  CHECK(lp.positive_tokens == one);
  CHECK(lp.negative_tokens == three);
  CHECK(server.requests == 2);

  server.omit_offsets = true;
  const auto again = client.logprobs(req);
  CHECK(again.positive == lp.positive);
  CHECK(again.negative == lp.negative);
}

TEST_CASE("bearer token comes from the environment") {
  stub::Server server({" a", " b"}, [](std::string_view, std::string_view) { return std::vector<double>{-1}; });
  ::setenv("BREWRANK_API_KEY", "sekret", 1);
  auto opts = options_for(server);
  opts.from_environment();
  HttpCompletionClient client(opts);
  client.logprobs({"p", " a", " b", "r", "t"});
  CHECK(server.last_authorization() == "Bearer sekret");
  ::unsetenv("BREWRANK_API_KEY");
}

TEST_CASE("transient failures are retried, refusals are not") {
  stub::Server server({" a", " b"}, [](std::string_view, std::string_view) { return std::vector<double>{-1}; });
  HttpCompletionClient client(options_for(server));
  ScoringRequest req{"p", " a", " b", "r", "t"};

  server.fail_first = 3;
  CHECK_NOTHROW(client.logprobs(req));
  CHECK(server.requests == 5);  // 3 failures + 2 answers

  server.requests = 0;
  server.fail_first = 10;
  try {
    client.logprobs(req);
    FAIL("expected transport error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Transport);
  }
  CHECK(server.requests == 5);
  server.fail_first = 0;

  server.requests = 0;
  server.refuse = true;
  try {
    client.logprobs(req);
    FAIL("expected refusal");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::BackendRefusal);
    CHECK(std::string(e.what()).find("prompt") != std::string::npos);
  }
  CHECK(server.requests == 1);
  server.refuse = false;

  server.garbage = true;
  try {
    client.logprobs(req);
    FAIL("expected malformed response");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::MalformedResponse);
  }
}

TEST_CASE("unreachable endpoint exhausts attempts") {
  HttpClientOptions o;
  o.base_url = "http://127.0.0.1:1";
  o.max_attempts = 3;
  o.initial_backoff = std::chrono::milliseconds(1);
  o.timeout = std::chrono::seconds(1);
  HttpCompletionClient client(o);
  try {
    client.logprobs({"p", " a", " b", "r", "t"});
    FAIL("expected transport error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Transport);
  }
  CHECK(client.network_calls() == 3);
}

TEST_CASE("write-through cache makes reruns offline") {
  auto dir = fixtures::scratch_dir("wire_cache");
  stub::Server server({" yes", " no"}, [](std::string_view prompt, std::string_view answer) {
    return std::vector<double>{answer == " yes" ? -0.1 * static_cast<double>(prompt.size() % 9) : -0.7};
  });
  std::vector<ScoringRequest> reqs;
  for (int i = 0; i < 12; ++i) reqs.push_back({"prompt " + std::to_string(i), " yes", " no", std::to_string(i), "t"});

  std::vector<double> first;
  {
    auto cache = std::make_shared<ResponseCache>(dir / "cache.jsonl");
    HttpCompletionClient client(options_for(server), cache);
    for (const auto& e : score_batch(client, reqs, 4)) first.push_back(e.score->probability);
    CHECK(client.network_calls() == 24);
  }
  auto cache = std::make_shared<ResponseCache>(dir / "cache.jsonl");
  HttpCompletionClient client(options_for(server), cache);
  ReplayClient replay("stub", cache);
  CHECK(replay.name() == client.name());
  for (std::size_t i = 0; i < reqs.size(); ++i) {
    CHECK(score_answers(client, reqs[i]).probability == first[i]);
    CHECK(score_answers(replay, reqs[i]).probability == first[i]);
  }
  CHECK(client.network_calls() == 0);

  const auto row = nlohmann::json::parse(fixtures::read_file(dir / "cache.jsonl").substr(
      0, fixtures::read_file(dir / "cache.jsonl").find('\n')));
  CHECK(row.contains("key"));
  CHECK(row.contains("response"));
}

TEST_CASE("first-token mode reads the top alternatives") {
  stub::Server server({" apply", " not apply"}, [](std::string_view, std::string_view answer) {
    return answer == " apply" ? std::vector<double>{-0.4} : std::vector<double>{-1.1, -0.2};
  });
  auto opts = options_for(server);
  opts.first_token = true;
  HttpCompletionClient client(opts);
  const auto lp = client.logprobs({"p", " apply", " not apply", "r", "t"});
  CHECK(lp.positive == -0.4);
  CHECK(lp.negative == -1.1);
  CHECK(server.requests == 1);
}
