#include "cer/confidence.hpp"

#include <algorithm>
#include <cmath>

namespace cer {
namespace {

// exp(kLogFloor) == 1e-300: keeps products strictly positive.
const double kLogFloor = std::log(1e-300);

void check_window(const GenerationPath& path, std::size_t token_start,
                  std::size_t token_end) {
  if (token_start >= token_end || token_end > path.tokens.size()) {
    throw ConfidenceError("path " + std::to_string(path.path_id) +
                          ": empty or out-of-range token window [" +
                          std::to_string(token_start) + ", " +
                          std::to_string(token_end) + ")");
  }
}

}  // namespace

StepAggregator parse_step_aggregator(const std::string& name) {
  if (name == "product") return StepAggregator::product;
  if (name == "mean_entropy") return StepAggregator::mean_entropy;
  if (name == "mean_prob") return StepAggregator::mean_prob;
  throw ConfidenceError("unknown step aggregator: " + name);
}

PathAggregator parse_path_aggregator(const std::string& name) {
  if (name == "weighted_mean") return PathAggregator::weighted_mean;
  if (name == "harmonic") return PathAggregator::harmonic;
  if (name == "half_split") return PathAggregator::half_split;
  if (name == "exp2") return PathAggregator::exp2;
  if (name == "avg_log") return PathAggregator::avg_log;
  if (name == "min") return PathAggregator::min;
  if (name == "last_only") return PathAggregator::last_only;
  throw ConfidenceError("unknown path aggregator: " + name);
}

std::string to_string(StepAggregator f) {
  switch (f) {
    case StepAggregator::product: return "product";
    case StepAggregator::mean_entropy: return "mean_entropy";
    case StepAggregator::mean_prob: return "mean_prob";
  }
  return "?";
}

std::string to_string(PathAggregator g) {
  switch (g) {
    case PathAggregator::weighted_mean: return "weighted_mean";
    case PathAggregator::harmonic: return "harmonic";
    case PathAggregator::half_split: return "half_split";
    case PathAggregator::exp2: return "exp2";
    case PathAggregator::avg_log: return "avg_log";
    case PathAggregator::min: return "min";
    case PathAggregator::last_only: return "last_only";
  }
  return "?";
}

double word_confidence_product(const GenerationPath& path, std::size_t token_start,
                               std::size_t token_end) {
  check_window(path, token_start, token_end);
  double sum = 0.0;
  for (std::size_t i = token_start; i < token_end; ++i) {
    sum += path.tokens[i].logprob;
  }
  return std::exp(std::max(sum, kLogFloor));
}

double token_entropy(const GenerationPath& path, std::size_t token_index) {
  if (token_index >= path.tokens.size()) {
    throw ConfidenceError("path " + std::to_string(path.path_id) + ": token index " +
                          std::to_string(token_index) + " out of range");
  }
  const TokenRecord& tok = path.tokens[token_index];
  if (!tok.has_top_alts()) {
    throw ConfidenceError("path " + std::to_string(path.path_id) + ": token " +
                          std::to_string(token_index) +
                          " has no recorded alternatives; entropy needs top_alts");
  }
  double entropy = 0.0;
  double mass = 0.0;
  for (const TokenAlt& alt : tok.top_alts) {
    double p = std::exp(alt.logprob);
    mass += p;
    if (p > 0.0) entropy -= p * alt.logprob;
  }
  double residual = std::max(0.0, 1.0 - mass);
  if (residual > 0.0) entropy -= residual * std::log(residual);
  return entropy;
}

double word_confidence_entropy(const GenerationPath& path, std::size_t token_start,
                               std::size_t token_end) {
  check_window(path, token_start, token_end);
  double sum = 0.0;
  for (std::size_t i = token_start; i < token_end; ++i) {
    sum += token_entropy(path, i);
  }
  return sum / static_cast<double>(token_end - token_start);
}

double entropy_to_confidence(double h) { return std::exp(-h); }

double word_confidence_mean_prob(const GenerationPath& path, std::size_t token_start,
                                 std::size_t token_end) {
  check_window(path, token_start, token_end);
  double sum = 0.0;
  for (std::size_t i = token_start; i < token_end; ++i) {
    sum += std::exp(path.tokens[i].logprob);
  }
  return sum / static_cast<double>(token_end - token_start);
}

double step_confidence(const GenerationPath& path, std::size_t token_start,
                       std::size_t token_end, StepAggregator f) {
  switch (f) {
    case StepAggregator::product:
      return word_confidence_product(path, token_start, token_end);
    case StepAggregator::mean_entropy:
      return entropy_to_confidence(word_confidence_entropy(path, token_start, token_end));
    case StepAggregator::mean_prob:
      return word_confidence_mean_prob(path, token_start, token_end);
  }
  throw ConfidenceError("unhandled step aggregator");
}

double avg_log_raw(const std::vector<double>& confidences) {
  if (confidences.empty()) {
    throw ConfidenceError("avg_log aggregator: no step confidences");
  }
  double sum = 0.0;
  for (double c : confidences) sum += std::log1p(c);
  return sum / static_cast<double>(confidences.size());
}

double aggregate_path(const std::vector<double>& confidences, PathAggregator g) {
  if (confidences.empty()) {
    throw ConfidenceError("path aggregator " + to_string(g) + ": no step confidences");
  }
  const std::size_t n = confidences.size();
  switch (g) {
    case PathAggregator::weighted_mean: {
      double num = 0.0;
      for (std::size_t j = 1; j <= n; ++j) {
        num += static_cast<double>(j) * confidences[j - 1];
      }
      double den = static_cast<double>(n) * static_cast<double>(n + 1) / 2.0;
      return num / den;
    }
    case PathAggregator::harmonic: {
      double sum = 0.0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (confidences[j - 1] == 0.0) {
          throw ConfidenceError("harmonic aggregator: zero confidence at step " +
                                std::to_string(j));
        }
        sum += 1.0 / confidences[j - 1];
      }
      return static_cast<double>(n) / sum;
    }
    case PathAggregator::half_split: {
      if (n == 1) return confidences[0];
      double head = 0.0;
      for (std::size_t j = 0; j + 1 < n; ++j) head += confidences[j];
      return 0.5 * confidences[n - 1] +
             head / (2.0 * static_cast<double>(n - 1));
    }
    case PathAggregator::exp2: {
      // sum 2^(j-1) c_j / (2^n - 1), evaluated as scaled powers so large n
      // cannot overflow: 2^(j-1-n) / (1 - 2^-n).
      double num = 0.0;
      for (std::size_t j = 1; j <= n; ++j) {
        num += std::ldexp(confidences[j - 1], static_cast<int>(j) - 1 -
                                                  static_cast<int>(n));
      }
      double den = 1.0 - std::ldexp(1.0, -static_cast<int>(n));
      return num / den;
    }
    case PathAggregator::avg_log:
      return avg_log_raw(confidences) / std::log(2.0);
    case PathAggregator::min:
      return *std::min_element(confidences.begin(), confidences.end());
    case PathAggregator::last_only:
      return confidences.back();
  }
  throw ConfidenceError("unhandled path aggregator");
}

SequenceStats compute_sequence_stats(const GenerationPath& path) {
  SequenceStats stats;
  stats.token_count = path.tokens.size();
  stats.entropy_available = !path.tokens.empty();
  for (std::size_t i = 0; i < path.tokens.size(); ++i) {
    stats.sum_logprob += path.tokens[i].logprob;
    if (!path.tokens[i].has_top_alts()) {
      stats.entropy_available = false;
    }
  }
  if (stats.entropy_available) {
    for (std::size_t i = 0; i < path.tokens.size(); ++i) {
      stats.sum_entropy += token_entropy(path, i);
    }
  }
  return stats;
}

PathScore score_path(const GenerationPath& path, const std::vector<StepRecord>& steps,
                     StepAggregator f, PathAggregator g) {
  if (steps.empty()) {
    throw ConfidenceError("path " + std::to_string(path.path_id) +
                          ": cannot score a path with no steps");
  }
  PathScore score;
  score.path_id = path.path_id;
  score.step_confidences.reserve(steps.size());
  for (const StepRecord& step : steps) {
    score.step_confidences.push_back(
        step_confidence(path, step.answer.token_start, step.answer.token_end, f));
  }
  score.path_confidence = aggregate_path(score.step_confidences, g);
  score.final_answer = steps.back().answer.canonical;
  return score;
}

}  // namespace cer
