#include "cer/backend.hpp"

#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>

#include <httplib.h>
#include <json.hpp>

namespace cer {
namespace {

using nlohmann::json;

bool retryable_status(int status) {
  return status == 408 || status == 429 || status >= 500;
}

std::string body_snippet(const std::string& body) {
  const std::size_t kMax = 200;
  if (body.size() <= kMax) return body;
  return body.substr(0, kMax) + "...";
}

TokenRecord build_token(std::string text, double logprob, std::vector<TokenAlt> alts,
                        std::size_t token_idx) {
  TokenRecord tok;
  tok.text = std::move(text);
  tok.logprob = logprob;
  tok.top_alts = std::move(alts);
  try {
    normalize_token(tok);
  } catch (const TraceError& e) {
    throw BackendError("response token " + std::to_string(token_idx) + ": " + e.what());
  }
  return tok;
}

// Legacy /v1/completions shape: parallel arrays under choices[0].logprobs.
std::vector<TokenRecord> parse_completion_tokens(const json& choice) {
  if (!choice.contains("logprobs") || choice.at("logprobs").is_null()) {
    throw BackendError("response has no logprobs; request them via the logprobs field");
  }
  const json& lp = choice.at("logprobs");
  if (!lp.contains("tokens") || !lp.contains("token_logprobs")) {
    throw BackendError("response logprobs lack tokens/token_logprobs arrays");
  }
  const json& tokens = lp.at("tokens");
  const json& token_logprobs = lp.at("token_logprobs");
  const json* top = lp.contains("top_logprobs") && !lp.at("top_logprobs").is_null()
                        ? &lp.at("top_logprobs")
                        : nullptr;
  if (tokens.size() != token_logprobs.size()) {
    throw BackendError("response logprobs arrays disagree in length");
  }
  std::vector<TokenRecord> out;
  out.reserve(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (token_logprobs[i].is_null()) {
      throw BackendError("response token " + std::to_string(i) + " has null logprob");
    }
    std::vector<TokenAlt> alts;
    if (top && i < top->size() && !(*top)[i].is_null()) {
      for (const auto& [text, value] : (*top)[i].items()) {
        alts.push_back({text, value.get<double>()});
      }
    }
    out.push_back(build_token(tokens[i].get<std::string>(),
                              token_logprobs[i].get<double>(), std::move(alts), i));
  }
  return out;
}

// /v1/chat/completions shape: choices[0].logprobs.content[].
std::vector<TokenRecord> parse_chat_tokens(const json& choice) {
  if (!choice.contains("logprobs") || choice.at("logprobs").is_null() ||
      !choice.at("logprobs").contains("content") ||
      choice.at("logprobs").at("content").is_null()) {
    throw BackendError(
        "response has no logprobs content; request logprobs with top_logprobs");
  }
  const json& content = choice.at("logprobs").at("content");
  std::vector<TokenRecord> out;
  out.reserve(content.size());
  for (std::size_t i = 0; i < content.size(); ++i) {
    const json& entry = content[i];
    std::vector<TokenAlt> alts;
    if (entry.contains("top_logprobs") && !entry.at("top_logprobs").is_null()) {
      for (const auto& alt : entry.at("top_logprobs")) {
        alts.push_back({alt.at("token").get<std::string>(),
                        alt.at("logprob").get<double>()});
      }
    }
    out.push_back(build_token(entry.at("token").get<std::string>(),
                              entry.at("logprob").get<double>(), std::move(alts), i));
  }
  return out;
}

}  // namespace

std::string resolve_api_key() {
  if (const char* key = std::getenv("CER_API_KEY")) return key;
  if (const char* key = std::getenv("OPENAI_API_KEY")) return key;
  return "";
}

BackendClient::BackendClient(BackendConfig cfg) : cfg_(std::move(cfg)) {
  std::string url = cfg_.base_url;
  while (!url.empty() && url.back() == '/') url.pop_back();
  if (url.rfind("https://", 0) == 0) {
    throw BackendError("https endpoints are not supported; use an http endpoint");
  }
  if (url.rfind("http://", 0) != 0) {
    throw BackendError("base_url must start with http://: " + cfg_.base_url);
  }
  std::size_t path_at = url.find('/', std::string("http://").size());
  if (path_at == std::string::npos) {
    origin_ = url;
    path_prefix_.clear();
  } else {
    origin_ = url.substr(0, path_at);
    path_prefix_ = url.substr(path_at);
  }
  if (cfg_.api_key.empty()) cfg_.api_key = resolve_api_key();
}

GenerationPath BackendClient::complete(const std::string& prompt, double temperature,
                                       int max_tokens, int path_id) {
  const std::string endpoint = cfg_.chat ? "/chat/completions" : "/completions";
  std::string path = path_prefix_;
  if (path.size() < 3 || path.compare(path.size() - 3, 3, "/v1") != 0) {
    path += "/v1";
  }
  path += endpoint;

  json payload;
  payload["model"] = cfg_.model;
  payload["max_tokens"] = max_tokens;
  payload["temperature"] = temperature;
  std::optional<int64_t> request_seed;
  if (cfg_.seed) {
    request_seed = *cfg_.seed + path_id;
    payload["seed"] = *request_seed;
  }
  if (cfg_.chat) {
    payload["messages"] = json::array({{{"role", "user"}, {"content", prompt}}});
    payload["logprobs"] = true;
    payload["top_logprobs"] = cfg_.top_logprobs;
  } else {
    payload["prompt"] = prompt;
    payload["logprobs"] = cfg_.top_logprobs;
  }
  const std::string body = payload.dump();

  httplib::Headers headers;
  if (!cfg_.api_key.empty()) {
    headers.emplace("Authorization", "Bearer " + cfg_.api_key);
  }

  std::string last_error;
  for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
    httplib::Client client(origin_);
    client.set_connection_timeout(cfg_.timeout_seconds, 0);
    client.set_read_timeout(cfg_.timeout_seconds, 0);
    client.set_write_timeout(cfg_.timeout_seconds, 0);
    auto res = client.Post(path, headers, body, "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status != 200) {
      last_error = "HTTP " + std::to_string(res->status) + ": " +
                   body_snippet(res->body);
      if (retryable_status(res->status)) continue;
      throw BackendError("request to " + origin_ + path + " failed, " + last_error);
    }
    json reply;
    try {
      reply = json::parse(res->body);
    } catch (const json::exception& e) {
      throw BackendError("response is not valid JSON: " + std::string(e.what()));
    }
    try {
      if (!reply.contains("choices") || reply.at("choices").empty()) {
        throw BackendError("response has no choices");
      }
      const json& choice = reply.at("choices").at(0);
      GenerationPath out;
      out.path_id = path_id;
      out.sampling.temperature = temperature;
      out.tokens = cfg_.chat ? parse_chat_tokens(choice)
                             : parse_completion_tokens(choice);
      if (out.tokens.empty()) {
        throw BackendError("response contains zero generated tokens");
      }
      for (const auto& tok : out.tokens) out.text += tok.text;
      if (reply.contains("seed") && reply.at("seed").is_number_integer()) {
        out.sampling.seed = reply.at("seed").get<int64_t>();
      } else if (request_seed) {
        out.sampling.seed = request_seed;
      }
      return out;
    } catch (const json::exception& e) {
      throw BackendError("malformed response: " + std::string(e.what()));
    }
  }
  throw BackendError("request to " + origin_ + path + " failed after " +
                     std::to_string(cfg_.max_retries + 1) + " attempts; last " +
                     last_error);
}

std::vector<GenerationPath> BackendClient::sample_paths(const std::string& prompt,
                                                        int k, std::size_t* failures) {
  if (k <= 0) throw BackendError("sample_paths needs k >= 1");
  std::vector<std::optional<GenerationPath>> slots(static_cast<std::size_t>(k));
  std::vector<std::string> errors(static_cast<std::size_t>(k));
  std::atomic<int> next{0};
  int workers = std::max(1, std::min(cfg_.parallelism, k));
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (int i = next.fetch_add(1); i < k; i = next.fetch_add(1)) {
        try {
          slots[static_cast<std::size_t>(i)] =
              complete(prompt, cfg_.temperature, cfg_.max_tokens, i);
        } catch (const std::exception& e) {
          errors[static_cast<std::size_t>(i)] = e.what();
        }
      }
    });
  }
  for (auto& t : pool) t.join();

  std::vector<GenerationPath> out;
  std::size_t failed = 0;
  std::string first_error;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (slots[i]) {
      out.push_back(std::move(*slots[i]));
    } else {
      ++failed;
      if (first_error.empty()) first_error = errors[i];
    }
  }
  if (failures) *failures = failed;
  if (out.empty()) {
    throw BackendError("all " + std::to_string(k) + " sampling requests failed; first: " +
                       first_error);
  }
  return out;
}

GenerationPath BackendClient::greedy_generate(const std::string& prompt) {
  return complete(prompt, 0.0, cfg_.max_tokens, 0);
}

GenerationPath BackendClient::verify(const std::string& prompt) {
  return complete(prompt, 0.0, 8, 0);
}

std::size_t record_traces(const std::vector<TracedPath>& records, std::ostream& sink) {
  return write_traces(records, sink);
}

}  // namespace cer
