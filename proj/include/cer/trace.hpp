#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cer/error.hpp"

namespace cer {

// One generated token. logprob is the natural-log probability of the sampled
// token; top_alts, when present, holds the highest-probability alternatives
// (including the sampled token itself) sorted by logprob descending.
struct TokenAlt {
  std::string text;
  double logprob = 0.0;
};

struct TokenRecord {
  std::string text;
  double logprob = 0.0;
  std::vector<TokenAlt> top_alts;  // empty == alternatives not recorded
  bool has_top_alts() const { return !top_alts.empty(); }
};

struct SamplingInfo {
  double temperature = 1.0;
  std::optional<int64_t> seed;
};

// A single reasoning path. Immutable by convention after construction; safe
// to share across threads via const references. The concatenation of
// tokens[i].text always equals text.
struct GenerationPath {
  int path_id = 0;
  std::string text;
  std::vector<TokenRecord> tokens;
  SamplingInfo sampling;
};

// A path bound to the question it answers, as stored in trace files.
struct TracedPath {
  std::string question_id;
  GenerationPath path;
};

// Half-open token window [token_start, token_end) plus the text it carries.
// raw is the concatenation of covered token texts, trimmed; canonical is the
// normalized answer string (never empty).
struct AnswerSpan {
  std::size_t token_start = 0;
  std::size_t token_end = 0;
  std::string raw;
  std::string canonical;
};

// One extracted reasoning step. step_index runs 1..n within a path, gap-free,
// with the final answer always last.
struct StepRecord {
  int step_index = 0;
  std::size_t content_begin = 0;  // char range of the step's source text
  std::size_t content_end = 0;
  AnswerSpan answer;
  bool is_final = false;
};

// Confidence scores for one path. step_confidences[j] and path_confidence
// all live in [0, 1]; final_answer is the canonical answer string.
struct PathScore {
  int path_id = 0;
  std::vector<double> step_confidences;
  double path_confidence = 0.0;
  std::string final_answer;
};

// Aggregated vote: canonical answer -> total score C(a); selected attains the
// maximum, ties broken by the lowest contributing path_id.
struct VoteTally {
  std::vector<std::pair<std::string, double>> entries;  // sorted by answer
  std::string selected;
};

struct LoadStats {
  std::size_t lines = 0;
  std::size_t paths = 0;
  std::size_t clamped_logprobs = 0;  // logprob > 0 clamped to 0
  std::size_t merged_alts = 0;       // sampled token inserted into top_alts
};

// Canonical token cleanup shared by the trace loader and the backend client:
// clamps positive logprobs to 0 (counted in stats), merges the sampled token
// into top_alts when absent, sorts alternatives by logprob descending, and
// rejects alternative sets whose probability mass exceeds 1 + 1e-6.
void normalize_token(TokenRecord& token, LoadStats* stats = nullptr);

// Reads line-delimited trace records. Malformed lines, schema violations and
// token/text mismatches raise TraceError naming the line (and path) at fault.
// Positive logprobs are clamped to 0 and counted in stats.
std::vector<TracedPath> load_traces(std::istream& in, LoadStats* stats = nullptr);

// Writes records one per line. Returns the number of lines written; an I/O
// failure raises TraceError carrying the partial count.
std::size_t write_traces(const std::vector<TracedPath>& records, std::ostream& out);

std::string trace_to_json_line(const TracedPath& record);

// Maps a character range [char_start, char_end) of path.text onto the unique
// minimal token window covering it. Requires 0 <= char_start < char_end <=
// text size; violations raise TraceError.
std::pair<std::size_t, std::size_t> align_span(const GenerationPath& path,
                                               std::size_t char_start,
                                               std::size_t char_end);

}  // namespace cer
