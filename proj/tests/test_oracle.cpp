#include "specloop/oracle.hpp"

#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "specloop/oracle_http.hpp"
#include "testutil.hpp"

#include <httplib.h>
#include <thread>

using namespace specloop;

namespace {

Conversation fresh_conversation(const std::string& user = "initial prompt") {
  Conversation conv(GapKind::contract);
  conv.add_system("system prompt");
  conv.add_user(user);
  return conv;
}

StochasticOracleConfig basic_stochastic(double p, double stuck = 0.0, std::uint64_t seed = 1) {
  StochasticOracleConfig cfg;
  cfg.success_probability = p;
  cfg.correct_answer = testutil::answer_with(testutil::correct_contract_jml());
  cfg.wrong_answer_pool = {testutil::answer_with("/*@ ensures \\result == x; @*/"),
                           testutil::answer_with("/*@ ensures \\result == -x; @*/")};
  cfg.stuck_bias = stuck;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

TEST_CASE("estimated replies sum message tokens") {
  auto conv = fresh_conversation();
  auto reply = estimated_reply(conv, "four");
  CHECK(reply.prompt_tokens == conv.prompt_token_sum());
  CHECK(reply.completion_tokens == 1);
  CHECK(reply.source == OracleReply::Source::estimated);
}

TEST_CASE("record then replay returns the identical reply") {
  testutil::TempDir dir;
  auto fixture = dir / "fixture.jsonl";

  testutil::ScriptedOracle inner({testutil::answer_with("/*@ ensures true; @*/")});
  RecordingOracle recorder(inner, fixture);
  auto conv = fresh_conversation();
  auto live = recorder.complete(conv, {});

  ReplayOracle replay(fixture);
  auto replayed = replay.complete(conv, {});
  CHECK(replayed.answer == live.answer);
  CHECK(replayed.prompt_tokens == live.prompt_tokens);
  CHECK(replayed.completion_tokens == live.completion_tokens);
}

TEST_CASE("replay miss names the conversation hash") {
  testutil::TempDir dir;
  auto fixture = dir / "fixture.jsonl";
  write_file(fixture, "");
  ReplayOracle replay(fixture);
  auto conv = fresh_conversation();
  try {
    replay.complete(conv, {});
    FAIL("expected fixture miss");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::fixture_miss);
    CHECK(std::string(e.what()).find(conv.content_hash()) != std::string::npos);
  }
}

TEST_CASE("re-recording a conversation overwrites the stored answer") {
  testutil::TempDir dir;
  auto fixture = dir / "fixture.jsonl";
  auto conv = fresh_conversation();

  {
    FixtureStore store(fixture);
    store.record(conv, estimated_reply(conv, "first answer"));
    store.record(conv, estimated_reply(conv, "second answer"));
    CHECK(store.size() == 1);
  }
  FixtureStore reloaded(fixture);
  CHECK(reloaded.size() == 1);
  CHECK(reloaded.lookup(conv.content_hash())->answer == "second answer");
}

TEST_CASE("replay oracle is a pure function of conversation content") {
  testutil::TempDir dir;
  auto fixture = dir / "fixture.jsonl";
  testutil::ScriptedOracle inner(
      {testutil::answer_with("/*@ a @*/"), testutil::answer_with("/*@ b @*/")});
  RecordingOracle recorder(inner, fixture);
  auto conv_a = fresh_conversation("prompt A");
  auto conv_b = fresh_conversation("prompt B");
  recorder.complete(conv_a, {});
  recorder.complete(conv_b, {});

  ReplayOracle replay(fixture);
  for (int i = 0; i < 3; ++i) {
    CHECK(replay.complete(conv_a, {}).answer == testutil::answer_with("/*@ a @*/"));
    CHECK(replay.complete(conv_b, {}).answer == testutil::answer_with("/*@ b @*/"));
  }
}

TEST_CASE("stochastic oracle with p=1 answers correctly on the first call") {
  StochasticOracle oracle(basic_stochastic(1.0));
  auto conv = fresh_conversation();
  CHECK(oracle.complete(conv, {"t", 1, 1}).answer ==
        testutil::answer_with(testutil::correct_contract_jml()));
}

TEST_CASE("stochastic oracle is deterministic per seed and substream") {
  auto cfg = basic_stochastic(0.4, 0.3, 42);
  StochasticOracle a(cfg);
  StochasticOracle b(cfg);
  for (std::uint32_t round = 1; round <= 20; ++round) {
    auto conv = fresh_conversation();
    CallContext ctx{"task-x", 2, round};
    CHECK(a.complete(conv, ctx).answer == b.complete(conv, ctx).answer);
  }
  // different tasks draw from different substreams
  bool any_difference = false;
  for (std::uint32_t round = 1; round <= 20; ++round) {
    auto conv = fresh_conversation();
    if (a.complete(conv, {"task-x", 1, round}).answer !=
        a.complete(conv, {"task-y", 1, round}).answer)
      any_difference = true;
  }
  CHECK(any_difference);
}

TEST_CASE("stochastic first-call success frequency approaches p") {
  const double p = 0.37;
  const int trials = 4000;
  StochasticOracle oracle(basic_stochastic(p, 0.0, 2024));
  const std::string correct = testutil::answer_with(testutil::correct_contract_jml());
  int successes = 0;
  for (int t = 0; t < trials; ++t) {
    auto conv = fresh_conversation();
    if (oracle.complete(conv, {"task-" + std::to_string(t), 1, 1}).answer == correct)
      ++successes;
  }
  const double freq = static_cast<double>(successes) / trials;
  const double sigma = std::sqrt(p * (1 - p) / trials);
  CHECK(std::abs(freq - p) <= 3 * sigma);
}

TEST_CASE("stochastic feedback turns repeat a marginal edit with frequency b") {
  const double b = 0.55;
  const int trials = 3000;
  StochasticOracle oracle(basic_stochastic(0.2, b, 99));
  const std::string wrong = testutil::answer_with("/*@ ensures \\result == x; @*/");
  int stuck = 0;
  for (int t = 0; t < trials; ++t) {
    Conversation conv(GapKind::contract);
    conv.add_system("system prompt");
    conv.add_user("initial prompt");
    conv.add_assistant(wrong);
    conv.add_user("feedback: still wrong");
    auto reply = oracle.complete(conv, {"task-" + std::to_string(t), 1, 1});
    if (reply.answer == StochasticOracle::marginal_edit(wrong)) ++stuck;
  }
  const double freq = static_cast<double>(stuck) / trials;
  const double sigma = std::sqrt(b * (1 - b) / trials);
  CHECK(std::abs(freq - b) <= 3 * sigma);
}

TEST_CASE("marginal edits stay extractable and differ from the original") {
  const std::string answer = testutil::answer_with("/*@ ensures \\result == x; @*/");
  const std::string edited = StochasticOracle::marginal_edit(answer);
  CHECK(edited != answer);
  auto cand = extract_annotation(edited, GapKind::contract);
  CHECK(cand.jml_text.find("ensures \\result == x;") != std::string::npos);
}

TEST_CASE("per-task success probabilities override the default") {
  auto cfg = basic_stochastic(0.0);
  cfg.per_task_success["lucky"] = 1.0;
  StochasticOracle oracle(cfg);
  auto conv = fresh_conversation();
  CHECK(oracle.complete(conv, {"lucky", 1, 1}).answer ==
        testutil::answer_with(testutil::correct_contract_jml()));
  CHECK(oracle.complete(conv, {"unlucky", 1, 1}).answer !=
        testutil::answer_with(testutil::correct_contract_jml()));
}

TEST_CASE("conversations over the token window overflow") {
  auto cfg = basic_stochastic(1.0);
  cfg.context_window = 10;
  StochasticOracle oracle(cfg);
  auto conv = fresh_conversation(std::string(400, 'x'));
  CHECK_THROWS_MATCHES(oracle.complete(conv, {}), Error,
                       Catch::Matchers::Predicate<Error>([](const Error& e) {
                         return e.code() == ErrorCode::context_overflow;
                       }));
}

TEST_CASE("stochastic config validation rejects bad parameters") {
  auto cfg = basic_stochastic(0.5);
  cfg.success_probability = 1.5;
  CHECK_THROWS_AS(StochasticOracle(cfg), Error);
  cfg = basic_stochastic(0.5);
  cfg.wrong_answer_pool.clear();
  CHECK_THROWS_AS(StochasticOracle(cfg), Error);
}

// --- HTTP client -------------------------------------------------------------

TEST_CASE("chat request body carries model and role/content pairs") {
  HttpOracleConfig cfg;
  cfg.model = "test-model";
  auto conv = fresh_conversation();
  auto body = chat_request_body(conv, cfg);
  CHECK(body.at("model") == "test-model");
  REQUIRE(body.at("messages").size() == 2);
  CHECK(body.at("messages")[0].at("role") == "system");
  CHECK(body.at("messages")[1].at("role") == "user");
  CHECK(body.at("messages")[1].at("content") == "initial prompt");
  CHECK_FALSE(body.contains("temperature"));

  cfg.temperature = 0.7;
  CHECK(chat_request_body(conv, cfg).at("temperature") == 0.7);
}

TEST_CASE("chat responses prefer provider usage and fall back to estimates") {
  auto conv = fresh_conversation();

  nlohmann::json with_usage = {
      {"choices", {{{"message", {{"content", "the answer"}}}}}},
      {"usage", {{"prompt_tokens", 123}, {"completion_tokens", 45}}},
  };
  auto reply = parse_chat_response(with_usage, conv);
  CHECK(reply.prompt_tokens == 123);
  CHECK(reply.completion_tokens == 45);
  CHECK(reply.source == OracleReply::Source::provider_usage);

  nlohmann::json without_usage = {{"choices", {{{"message", {{"content", "the answer"}}}}}}};
  reply = parse_chat_response(without_usage, conv);
  CHECK(reply.prompt_tokens == conv.prompt_token_sum());
  CHECK(reply.completion_tokens == count_tokens("the answer"));
  CHECK(reply.source == OracleReply::Source::estimated);

  nlohmann::json malformed = {{"choices", nlohmann::json::array()}};
  CHECK_THROWS_AS(parse_chat_response(malformed, conv), Error);
}

TEST_CASE("http oracle completes against a chat endpoint and retries 5xx") {
  httplib::Server server;
  std::atomic<int> hits{0};
  server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    const int n = ++hits;
    if (n == 1) {  // transient failure first
      res.status = 500;
      res.set_content("try again", "text/plain");
      return;
    }
    auto body = nlohmann::json::parse(req.body);
    REQUIRE(body.at("model") == "test-model");
    REQUIRE(req.get_header_value("Authorization") == "Bearer sk-test");
    nlohmann::json response = {
        {"choices",
         {{{"message",
            {{"content",
              "pong: " + body.at("messages").back().at("content").get<std::string>()}}}}}},
        {"usage", {{"prompt_tokens", 11}, {"completion_tokens", 7}}},
    };
    res.set_content(response.dump(), "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread listener([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  HttpOracleConfig cfg;
  cfg.base_url = "http://127.0.0.1:" + std::to_string(port) + "/v1";
  cfg.api_key = "sk-test";
  cfg.model = "test-model";
  cfg.retry_delay_ms = 1;
  HttpOracle oracle(cfg);

  auto conv = fresh_conversation("ping");
  auto reply = oracle.complete(conv, {});
  CHECK(reply.answer == "pong: ping");
  CHECK(reply.prompt_tokens == 11);
  CHECK(reply.completion_tokens == 7);
  CHECK(reply.source == OracleReply::Source::provider_usage);
  CHECK(hits == 2);

  server.stop();
  listener.join();
}

TEST_CASE("http oracle gives up after exhausting retries") {
  HttpOracleConfig cfg;
  cfg.base_url = "http://127.0.0.1:1";  // nothing listens here
  cfg.max_retries = 1;
  cfg.retry_delay_ms = 1;
  cfg.timeout_s = 1;
  HttpOracle oracle(cfg);
  auto conv = fresh_conversation();
  CHECK_THROWS_MATCHES(oracle.complete(conv, {}), Error,
                       Catch::Matchers::Predicate<Error>(
                           [](const Error& e) { return e.code() == ErrorCode::transport; }));
}

TEST_CASE("base url parsing splits origin and path prefix") {
  auto u = detail::split_base_url("https://api.example.com/v1");
  CHECK(u.origin == "https://api.example.com");
  CHECK(u.path_prefix == "/v1");
  u = detail::split_base_url("http://localhost:8080");
  CHECK(u.origin == "http://localhost:8080");
  CHECK(u.path_prefix.empty());
  CHECK_THROWS_AS(detail::split_base_url("not-a-url"), Error);
}
