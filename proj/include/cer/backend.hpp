#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "cer/trace.hpp"
#include "cer/voting.hpp"

namespace cer {

struct BackendConfig {
  std::string base_url = "http://127.0.0.1:8080";
  std::string api_key;   // empty => resolve_api_key() at request time
  std::string model;
  int k = 10;
  double temperature = 1.0;
  int top_logprobs = 20;
  int max_tokens = 1024;
  int timeout_seconds = 120;
  int max_retries = 3;   // retries after the first attempt
  int parallelism = 4;
  bool chat = false;     // /v1/chat/completions instead of /v1/completions
  std::optional<int64_t> seed;  // per-request seed = seed + path index
};

// CER_API_KEY wins, OPENAI_API_KEY is the fallback; empty when neither is set.
std::string resolve_api_key();

// Client for OpenAI-compatible completion endpoints that return logprobs.
// Each request is an independent connection, so one client may be used from
// several threads at once.
class BackendClient : public AnswerVerifier {
 public:
  explicit BackendClient(BackendConfig cfg);

  // k independent sampling requests at cfg.temperature, issued with at most
  // cfg.parallelism in flight. Requests that still fail after retries are
  // dropped and counted in *failures; path_id is the request index, so ids
  // may have gaps. All k failing raises BackendError.
  std::vector<GenerationPath> sample_paths(const std::string& prompt, int k,
                                           std::size_t* failures = nullptr);

  // Single temperature-0 completion.
  GenerationPath greedy_generate(const std::string& prompt);

  // One completion with explicit settings. Retries transport errors and
  // retryable HTTP statuses up to cfg.max_retries times; responses without
  // usable logprobs raise BackendError.
  GenerationPath complete(const std::string& prompt, double temperature,
                          int max_tokens, int path_id);

  // AnswerVerifier: short greedy completion for answer verification.
  GenerationPath verify(const std::string& prompt) override;

  const BackendConfig& config() const { return cfg_; }

 private:
  BackendConfig cfg_;
  std::string origin_;         // scheme://host[:port]
  std::string path_prefix_;    // anything after the origin, normalized
};

// Binds paths to their question and appends them to a trace sink, one JSON
// record per line. Returns the number written; failures raise TraceError
// carrying the partial count.
std::size_t record_traces(const std::vector<TracedPath>& records, std::ostream& sink);

}  // namespace cer
