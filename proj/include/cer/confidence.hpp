#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "cer/trace.hpp"

namespace cer {

// How token logprobs inside an answer span become one step confidence.
enum class StepAggregator { product, mean_entropy, mean_prob };

// How step confidences c_1..c_n become one path confidence.
enum class PathAggregator {
  weighted_mean,
  harmonic,
  half_split,
  exp2,
  avg_log,
  min,
  last_only,
};

StepAggregator parse_step_aggregator(const std::string& name);
PathAggregator parse_path_aggregator(const std::string& name);
std::string to_string(StepAggregator f);
std::string to_string(PathAggregator g);

// Joint probability of the token window [token_start, token_end):
// exp(sum of logprobs), the sum floored at ln(1e-300) so the result never
// underflows to exactly zero.
double word_confidence_product(const GenerationPath& path, std::size_t token_start,
                               std::size_t token_end);

// Shannon entropy (nats) of one token's recorded alternatives, plus the
// unobserved residual mass r = max(0, 1 - sum p): H += -r ln r. Requires
// top_alts; raises ConfidenceError naming the token otherwise.
double token_entropy(const GenerationPath& path, std::size_t token_index);

// Mean per-token entropy over the window.
double word_confidence_entropy(const GenerationPath& path, std::size_t token_start,
                               std::size_t token_end);

// Maps mean entropy h >= 0 into a confidence in (0, 1].
double entropy_to_confidence(double h);

// Arithmetic mean of per-token probabilities exp(logprob) over the window.
double word_confidence_mean_prob(const GenerationPath& path, std::size_t token_start,
                                 std::size_t token_end);

// Dispatch on f; the entropy kind passes through entropy_to_confidence.
double step_confidence(const GenerationPath& path, std::size_t token_start,
                       std::size_t token_end, StepAggregator f);

// Combines step confidences (1-based positions j) into a path confidence:
//   weighted_mean: sum j*c_j / (n(n+1)/2)
//   harmonic:      n / sum 1/c_j          (zero entries error)
//   half_split:    c_1 for n=1, else c_n/2 + sum_{j<n} c_j / (2(n-1))
//   exp2:          sum 2^(j-1)*c_j / (2^n - 1)
//   avg_log:       mean ln(1+c_j), rescaled by 1/ln 2 into [0, 1]
//   min:           min c_j
//   last_only:     c_n
// Empty input raises ConfidenceError.
double aggregate_path(const std::vector<double>& confidences, PathAggregator g);

// Unrescaled avg_log value: mean of ln(1+c_j), in [0, ln 2].
double avg_log_raw(const std::vector<double>& confidences);

// Full-sequence statistics over every token of a path, for the selection
// baselines. sum_entropy is only meaningful when entropy_available.
struct SequenceStats {
  double sum_logprob = 0.0;
  std::size_t token_count = 0;
  double sum_entropy = 0.0;
  bool entropy_available = false;
};

SequenceStats compute_sequence_stats(const GenerationPath& path);

// Scores one extracted path: step_confidences via f, path_confidence via g,
// final_answer from the last step.
PathScore score_path(const GenerationPath& path, const std::vector<StepRecord>& steps,
                     StepAggregator f, PathAggregator g);

}  // namespace cer
