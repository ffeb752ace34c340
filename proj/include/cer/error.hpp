#pragma once

#include <stdexcept>
#include <string>

namespace cer {

// Base for every error this library raises on purpose. Messages name the
// offending entity (line, path_id, token index, step index, question id) so
// callers can surface them without extra bookkeeping.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct TraceError : Error {
  using Error::Error;
};

// A reasoning path without a usable final answer. Recoverable per path: the
// harness drops the path from voting and counts it.
struct PathRejected : Error {
  using Error::Error;
};

struct ExtractionError : Error {
  using Error::Error;
};

struct ConfidenceError : Error {
  using Error::Error;
};

struct VotingError : Error {
  using Error::Error;
};

struct BackendError : Error {
  using Error::Error;
};

struct HarnessError : Error {
  using Error::Error;
};

}  // namespace cer
