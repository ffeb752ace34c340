#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "cer/backend.hpp"
#include "test_util.hpp"

using namespace cer;
using doctest::Approx;
using nlohmann::json;

namespace {

// Minimal completion endpoint running on an ephemeral local port. Handlers
// run on server threads, so recorded state sits behind a mutex.
class stub_server {
 public:
  explicit stub_server(httplib::Server::Handler handler) {
    server_.Post(R"(/.*)", std::move(handler));
    port_ = server_.bind_to_any_port("127.0.0.1");
    REQUIRE(port_ > 0);
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  ~stub_server() {
    server_.stop();
    thread_.join();
  }

  std::string base_url() const { return "http://127.0.0.1:" + std::to_string(port_); }

 private:
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
};

// Completions-shaped body: parallel token arrays plus per-token alternative
// maps. Tokens listed here deliberately omit themselves from the map so the
// loader's merge step is exercised.
json completion_body(const std::vector<std::pair<std::string, double>>& tokens,
                     std::optional<int64_t> seed = std::nullopt) {
  json lp;
  lp["tokens"] = json::array();
  lp["token_logprobs"] = json::array();
  lp["top_logprobs"] = json::array();
  for (const auto& [text, prob] : tokens) {
    lp["tokens"].push_back(text);
    lp["token_logprobs"].push_back(std::log(prob));
    json alts;
    if (prob < 1.0) alts["~other"] = std::log(1.0 - prob);
    lp["top_logprobs"].push_back(alts);
  }
  json body;
  body["choices"] = json::array({{{"text", ""}, {"logprobs", lp}}});
  if (seed) body["seed"] = *seed;
  return body;
}

json chat_body(const std::vector<std::pair<std::string, double>>& tokens) {
  json content = json::array();
  for (const auto& [text, prob] : tokens) {
    json alts = json::array();
    alts.push_back({{"token", text}, {"logprob", std::log(prob)}});
    if (prob < 1.0) {
      alts.push_back({{"token", "~other"}, {"logprob", std::log(1.0 - prob)}});
    }
    content.push_back({{"token", text}, {"logprob", std::log(prob)},
                       {"top_logprobs", alts}});
  }
  json body;
  body["choices"] =
      json::array({{{"message", {{"role", "assistant"}, {"content", ""}}},
                    {"logprobs", {{"content", content}}}}});
  return body;
}

struct recorded_request {
  std::string path;
  std::string authorization;
  json payload;
};

BackendConfig local_config(const std::string& base_url) {
  BackendConfig cfg;
  cfg.base_url = base_url;
  cfg.model = "stub-model";
  cfg.api_key = "sk-test";
  cfg.top_logprobs = 5;
  cfg.timeout_seconds = 10;
  return cfg;
}

}  // namespace

TEST_CASE("sampling turns completion responses into generation paths") {
  std::mutex mu;
  std::vector<recorded_request> requests;
  stub_server server([&](const httplib::Request& req, httplib::Response& res) {
    {
      std::lock_guard<std::mutex> lock(mu);
      requests.push_back({req.path, req.get_header_value("Authorization"),
                          json::parse(req.body)});
    }
    res.set_content(completion_body({{"The", 0.5}, {" answer", 0.25}}).dump(),
                    "application/json");
  });

  BackendClient client(local_config(server.base_url()));
  std::size_t failures = 99;
  auto paths = client.sample_paths("What is 2 + 2?", 3, &failures);

  CHECK(failures == 0);
  REQUIRE(paths.size() == 3);
  for (int i = 0; i < 3; ++i) {
    CHECK(paths[static_cast<std::size_t>(i)].path_id == i);
  }
  const auto& p = paths[0];
  CHECK(p.text == "The answer");
  REQUIRE(p.tokens.size() == 2);
  CHECK(p.tokens[0].logprob == Approx(std::log(0.5)).epsilon(1e-12));
  CHECK(p.sampling.temperature == Approx(1.0));
  CHECK_FALSE(p.sampling.seed.has_value());
  // The sampled token was absent from the alternatives map and gets merged in.
  REQUIRE(p.tokens[0].top_alts.size() == 2);
  CHECK(p.tokens[0].top_alts[0].text == "The");
  CHECK(p.tokens[0].top_alts[1].text == "~other");

  REQUIRE(requests.size() == 3);
  for (const auto& r : requests) {
    CHECK(r.path == "/v1/completions");
    CHECK(r.authorization == "Bearer sk-test");
    CHECK(r.payload.at("prompt") == "What is 2 + 2?");
    CHECK(r.payload.at("model") == "stub-model");
    CHECK(r.payload.at("logprobs") == 5);
    CHECK(r.payload.at("temperature") == Approx(1.0));
    CHECK_FALSE(r.payload.contains("seed"));
  }
}

TEST_CASE("chat endpoint uses the message shape") {
  std::mutex mu;
  std::vector<recorded_request> requests;
  stub_server server([&](const httplib::Request& req, httplib::Response& res) {
    {
      std::lock_guard<std::mutex> lock(mu);
      requests.push_back({req.path, "", json::parse(req.body)});
    }
    res.set_content(chat_body({{"4", 0.75}, {".", 0.5}}).dump(), "application/json");
  });

  auto cfg = local_config(server.base_url());
  cfg.chat = true;
  BackendClient client(cfg);
  auto path = client.complete("sum?", 0.7, 32, 5);

  CHECK(path.path_id == 5);
  CHECK(path.text == "4.");
  CHECK(path.sampling.temperature == Approx(0.7));
  REQUIRE(path.tokens.size() == 2);
  CHECK(path.tokens[1].logprob == Approx(std::log(0.5)).epsilon(1e-12));
  CHECK(path.tokens[0].has_top_alts());

  REQUIRE(requests.size() == 1);
  const auto& r = requests[0];
  CHECK(r.path == "/v1/chat/completions");
  CHECK(r.payload.at("messages").at(0).at("role") == "user");
  CHECK(r.payload.at("messages").at(0).at("content") == "sum?");
  CHECK(r.payload.at("logprobs") == true);
  CHECK(r.payload.at("top_logprobs") == 5);
  CHECK(r.payload.at("max_tokens") == 32);
}

TEST_CASE("a base_url already ending in /v1 is not doubled") {
  std::mutex mu;
  std::vector<std::string> paths_seen;
  stub_server server([&](const httplib::Request& req, httplib::Response& res) {
    {
      std::lock_guard<std::mutex> lock(mu);
      paths_seen.push_back(req.path);
    }
    res.set_content(completion_body({{"x", 1.0}}).dump(), "application/json");
  });

  BackendClient client(local_config(server.base_url() + "/v1/"));
  client.complete("p", 0.0, 4, 0);
  REQUIRE(paths_seen.size() == 1);
  CHECK(paths_seen[0] == "/v1/completions");
}

TEST_CASE("per-request seeds offset from the configured seed") {
  std::mutex mu;
  std::vector<int64_t> seeds_seen;
  stub_server server([&](const httplib::Request& req, httplib::Response& res) {
    {
      std::lock_guard<std::mutex> lock(mu);
      seeds_seen.push_back(json::parse(req.body).at("seed").get<int64_t>());
    }
    res.set_content(completion_body({{"x", 1.0}}).dump(), "application/json");
  });

  auto cfg = local_config(server.base_url());
  cfg.seed = 100;
  BackendClient client(cfg);
  auto paths = client.sample_paths("p", 3);

  std::sort(seeds_seen.begin(), seeds_seen.end());
  CHECK(seeds_seen == std::vector<int64_t>{100, 101, 102});
  for (const auto& p : paths) {
    REQUIRE(p.sampling.seed.has_value());
    CHECK(*p.sampling.seed == 100 + p.path_id);
  }
}

TEST_CASE("a seed reported by the server wins over the request seed") {
  stub_server server([&](const httplib::Request&, httplib::Response& res) {
    res.set_content(completion_body({{"x", 1.0}}, 777).dump(), "application/json");
  });
  auto cfg = local_config(server.base_url());
  cfg.seed = 5;
  BackendClient client(cfg);
  auto path = client.complete("p", 1.0, 4, 2);
  REQUIRE(path.sampling.seed.has_value());
  CHECK(*path.sampling.seed == 777);
}

TEST_CASE("responses without logprobs explain what to request") {
  stub_server server([&](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"choices":[{"text":"4"}]})", "application/json");
  });
  BackendClient client(local_config(server.base_url()));
  auto msg = testing::message_of<BackendError>(
      [&] { client.complete("p", 0.0, 4, 0); });
  CHECK(msg.find("logprobs") != std::string::npos);

  auto cfg = local_config(server.base_url());
  cfg.chat = true;
  BackendClient chat_client(cfg);
  auto chat_msg = testing::message_of<BackendError>(
      [&] { chat_client.complete("p", 0.0, 4, 0); });
  CHECK(chat_msg.find("top_logprobs") != std::string::npos);
}

TEST_CASE("malformed token data is rejected with the token index") {
  stub_server server([&](const httplib::Request&, httplib::Response& res) {
    json body = completion_body({{"x", 0.5}});
    // Inflate the alternative mass past one.
    body["choices"][0]["logprobs"]["top_logprobs"][0]["~other"] = std::log(0.9);
    res.set_content(body.dump(), "application/json");
  });
  BackendClient client(local_config(server.base_url()));
  auto msg = testing::message_of<BackendError>(
      [&] { client.complete("p", 0.0, 4, 0); });
  CHECK(msg.find("token 0") != std::string::npos);
}

TEST_CASE("mismatched parallel arrays and null logprobs are rejected") {
  stub_server uneven([&](const httplib::Request&, httplib::Response& res) {
    json body = completion_body({{"x", 0.5}, {"y", 0.5}});
    body["choices"][0]["logprobs"]["token_logprobs"].erase(1);
    res.set_content(body.dump(), "application/json");
  });
  BackendClient client(local_config(uneven.base_url()));
  auto msg = testing::message_of<BackendError>(
      [&] { client.complete("p", 0.0, 4, 0); });
  CHECK(msg.find("disagree") != std::string::npos);

  stub_server nulled([&](const httplib::Request&, httplib::Response& res) {
    json body = completion_body({{"x", 0.5}});
    body["choices"][0]["logprobs"]["token_logprobs"][0] = nullptr;
    res.set_content(body.dump(), "application/json");
  });
  BackendClient null_client(local_config(nulled.base_url()));
  auto null_msg = testing::message_of<BackendError>(
      [&] { null_client.complete("p", 0.0, 4, 0); });
  CHECK(null_msg.find("null logprob") != std::string::npos);
}

TEST_CASE("empty completions are rejected") {
  stub_server server([&](const httplib::Request&, httplib::Response& res) {
    res.set_content(completion_body({}).dump(), "application/json");
  });
  BackendClient client(local_config(server.base_url()));
  auto msg = testing::message_of<BackendError>(
      [&] { client.complete("p", 0.0, 4, 0); });
  CHECK(msg.find("zero generated tokens") != std::string::npos);
}

TEST_CASE("positive server logprobs are clamped to zero") {
  stub_server server([&](const httplib::Request&, httplib::Response& res) {
    json body = completion_body({{"x", 1.0}});
    body["choices"][0]["logprobs"]["token_logprobs"][0] = 0.25;
    res.set_content(body.dump(), "application/json");
  });
  BackendClient client(local_config(server.base_url()));
  auto path = client.complete("p", 0.0, 4, 0);
  CHECK(path.tokens[0].logprob == 0.0);
}

TEST_CASE("retryable failures are retried until the server recovers") {
  std::atomic<int> hits{0};
  stub_server server([&](const httplib::Request&, httplib::Response& res) {
    if (hits.fetch_add(1) < 2) {
      res.status = 503;
      res.set_content("overloaded", "text/plain");
      return;
    }
    res.set_content(completion_body({{"ok", 1.0}}).dump(), "application/json");
  });
  auto cfg = local_config(server.base_url());
  cfg.max_retries = 3;
  BackendClient client(cfg);
  auto path = client.complete("p", 0.0, 4, 0);
  CHECK(path.text == "ok");
  CHECK(hits.load() == 3);
}

TEST_CASE("client errors fail immediately without retries") {
  std::atomic<int> hits{0};
  stub_server server([&](const httplib::Request&, httplib::Response& res) {
    hits.fetch_add(1);
    res.status = 404;
    res.set_content("no such model", "text/plain");
  });
  auto cfg = local_config(server.base_url());
  cfg.max_retries = 5;
  BackendClient client(cfg);
  auto msg = testing::message_of<BackendError>(
      [&] { client.complete("p", 0.0, 4, 0); });
  CHECK(msg.find("HTTP 404") != std::string::npos);
  CHECK(msg.find("no such model") != std::string::npos);
  CHECK(hits.load() == 1);
}

TEST_CASE("persistent server failures exhaust the retry budget") {
  std::atomic<int> hits{0};
  stub_server server([&](const httplib::Request&, httplib::Response& res) {
    hits.fetch_add(1);
    res.status = 500;
  });
  auto cfg = local_config(server.base_url());
  cfg.max_retries = 1;
  BackendClient client(cfg);
  auto msg = testing::message_of<BackendError>(
      [&] { client.complete("p", 0.0, 4, 0); });
  CHECK(msg.find("after 2 attempts") != std::string::npos);
  CHECK(hits.load() == 2);
}

TEST_CASE("partially failed sampling reports the failures it drops") {
  // Requests carrying seed 101 (request index 1) always fail hard.
  stub_server server([&](const httplib::Request& req, httplib::Response& res) {
    auto payload = json::parse(req.body);
    if (payload.at("seed").get<int64_t>() == 101) {
      res.status = 400;
      res.set_content("bad request", "text/plain");
      return;
    }
    res.set_content(completion_body({{"x", 1.0}}).dump(), "application/json");
  });
  auto cfg = local_config(server.base_url());
  cfg.seed = 100;
  BackendClient client(cfg);
  std::size_t failures = 0;
  auto paths = client.sample_paths("p", 3, &failures);
  CHECK(failures == 1);
  REQUIRE(paths.size() == 2);
  CHECK(paths[0].path_id == 0);
  CHECK(paths[1].path_id == 2);
}

TEST_CASE("sampling raises when every request fails") {
  stub_server server([&](const httplib::Request&, httplib::Response& res) {
    res.status = 400;
    res.set_content("nope", "text/plain");
  });
  BackendClient client(local_config(server.base_url()));
  auto msg = testing::message_of<BackendError>(
      [&] { client.sample_paths("p", 3); });
  CHECK(msg.find("all 3 sampling requests failed") != std::string::npos);
  CHECK_THROWS_AS(client.sample_paths("p", 0), BackendError);
}

TEST_CASE("greedy generation and verification force temperature zero") {
  std::mutex mu;
  std::vector<json> payloads;
  stub_server server([&](const httplib::Request& req, httplib::Response& res) {
    {
      std::lock_guard<std::mutex> lock(mu);
      payloads.push_back(json::parse(req.body));
    }
    res.set_content(completion_body({{" true", 1.0}}).dump(), "application/json");
  });
  auto cfg = local_config(server.base_url());
  cfg.max_tokens = 64;
  BackendClient client(cfg);

  client.greedy_generate("p");
  client.verify("is it true?");

  REQUIRE(payloads.size() == 2);
  CHECK(payloads[0].at("temperature") == Approx(0.0));
  CHECK(payloads[0].at("max_tokens") == 64);
  CHECK(payloads[1].at("temperature") == Approx(0.0));
  CHECK(payloads[1].at("max_tokens") == 8);
  CHECK(payloads[1].at("prompt") == "is it true?");
}

TEST_CASE("unsupported base urls are rejected up front") {
  auto https = testing::message_of<BackendError>([] {
    BackendConfig cfg;
    cfg.base_url = "https://api.example.com";
    BackendClient client(cfg);
  });
  CHECK(https.find("http") != std::string::npos);

  CHECK_THROWS_AS(
      [] {
        BackendConfig cfg;
        cfg.base_url = "ftp://example.com";
        BackendClient client(cfg);
      }(),
      BackendError);
}

TEST_CASE("api key resolution prefers the dedicated variable") {
  const char* old_cer = std::getenv("CER_API_KEY");
  const char* old_openai = std::getenv("OPENAI_API_KEY");
  std::string saved_cer = old_cer ? old_cer : "";
  std::string saved_openai = old_openai ? old_openai : "";

  setenv("CER_API_KEY", "cer-key", 1);
  setenv("OPENAI_API_KEY", "openai-key", 1);
  CHECK(resolve_api_key() == "cer-key");

  unsetenv("CER_API_KEY");
  CHECK(resolve_api_key() == "openai-key");

  unsetenv("OPENAI_API_KEY");
  CHECK(resolve_api_key().empty());

  if (!saved_cer.empty()) setenv("CER_API_KEY", saved_cer.c_str(), 1);
  if (!saved_openai.empty()) setenv("OPENAI_API_KEY", saved_openai.c_str(), 1);
}

TEST_CASE("recorded traces reload identically") {
  GenerationPath path;
  path.path_id = 3;
  path.sampling.temperature = 0.5;
  path.sampling.seed = 12;
  TokenRecord tok;
  tok.text = "hi";
  tok.logprob = std::log(0.5);
  tok.top_alts = {{"hi", std::log(0.5)}, {"yo", std::log(0.5)}};
  path.tokens.push_back(tok);
  path.text = "hi";

  std::stringstream sink;
  std::size_t written = record_traces({{"q1", path}}, sink);
  CHECK(written == 1);

  auto loaded = load_traces(sink);
  REQUIRE(loaded.size() == 1);
  CHECK(loaded[0].question_id == "q1");
  CHECK(loaded[0].path.path_id == 3);
  CHECK(loaded[0].path.text == "hi");
  REQUIRE(loaded[0].path.sampling.seed.has_value());
  CHECK(*loaded[0].path.sampling.seed == 12);
}
