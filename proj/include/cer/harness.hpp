#pragma once

#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cer/confidence.hpp"
#include "cer/extraction.hpp"
#include "cer/trace.hpp"
#include "cer/voting.hpp"

namespace cer {

struct DatasetRecord {
  std::string id;
  std::string question;
  std::string gold_answer;
  ExtractionMode mode = ExtractionMode::math;
};

// JSONL with fields id, question, answer (all non-empty); every record gets
// the given extraction mode. Errors carry the line number.
std::vector<DatasetRecord> load_dataset(std::istream& in, ExtractionMode mode);

enum class DatasetFilter { none, numeric_answer, proper_noun_answer };

DatasetFilter parse_dataset_filter(const std::string& name);

// numeric_answer keeps records whose gold answer contains a numeric literal;
// proper_noun_answer keeps records whose gold answer contains a proper noun.
std::vector<DatasetRecord> filter_dataset(std::vector<DatasetRecord> records,
                                          DatasetFilter filter);

// Answer-selection method over k sampled paths per question.
enum class Method { cer, cer_last, sc, greedy, ll, nl, pe, ne, ptrue };

Method parse_method(const std::string& name);
std::string to_string(Method method);

// Recorded paths grouped by question. Sampled paths are those generated with
// temperature > 0, kept sorted by path_id; the greedy path (temperature == 0,
// lowest path_id) is kept aside for the greedy method and as the fallback
// when every sampled path is rejected.
class TraceStore {
 public:
  static TraceStore from_records(std::vector<TracedPath> records);

  const std::vector<GenerationPath>* sampled(const std::string& question_id) const;
  const GenerationPath* greedy(const std::string& question_id) const;
  std::size_t question_count() const { return sampled_.size(); }

 private:
  std::map<std::string, std::vector<GenerationPath>> sampled_;
  std::map<std::string, GenerationPath> greedy_;
};

struct ExperimentOptions {
  Method method = Method::cer;
  StepAggregator f = StepAggregator::product;
  PathAggregator g = PathAggregator::weighted_mean;
  int k = 10;
  ExtractionConfig extraction;
  int jobs = 1;
  // When set, a question with fewer than k sampled paths is an error instead
  // of proceeding with what is available (used by the k sweep).
  bool require_k = false;
};

struct QuestionResult {
  std::string id;
  std::string gold;      // canonical
  std::string selected;  // canonical, may be empty when nothing was usable
  bool correct = false;
  VoteTally tally;
  double confidence_sum = 0.0;  // sum of the path confidences that voted
  std::size_t usable_paths = 0;
  std::size_t rejected_paths = 0;
  std::string fallback;  // "", "greedy" or "none"
};

struct ExperimentReport {
  Method method = Method::cer;
  StepAggregator f = StepAggregator::product;
  PathAggregator g = PathAggregator::weighted_mean;
  int k = 10;
  ExtractionMode mode = ExtractionMode::math;
  std::vector<QuestionResult> per_question;
  double accuracy = 0.0;
  std::size_t rejected_path_count = 0;
};

// Runs one configuration over the dataset using recorded traces. Questions
// are processed with up to opts.jobs workers; results keep dataset order.
// Correctness is exact match of canonical answer strings. ptrue needs a
// verifier; passing none raises HarnessError.
ExperimentReport run_experiment(const std::vector<DatasetRecord>& dataset,
                                const TraceStore& store, const ExperimentOptions& opts,
                                AnswerVerifier* verifier = nullptr);

// One report per (method, k), each voting over the first k paths by path_id.
// Questions with fewer than max(k_values) sampled paths raise HarnessError.
std::vector<ExperimentReport> sweep_k(const std::vector<DatasetRecord>& dataset,
                                      const TraceStore& store,
                                      const ExperimentOptions& base,
                                      const std::vector<Method>& methods,
                                      const std::vector<int>& k_values,
                                      AnswerVerifier* verifier = nullptr);

// Full f x g grid with method fixed to cer.
std::vector<ExperimentReport> sweep_aggregators(
    const std::vector<DatasetRecord>& dataset, const TraceStore& store,
    const ExperimentOptions& base, const std::vector<StepAggregator>& f_set,
    const std::vector<PathAggregator>& g_set);

// One JSON record per question plus a trailing summary record. Deterministic:
// replaying the same traces with the same options is byte-identical.
std::string report_to_jsonl(const ExperimentReport& report);

// Fixed-width summary table, one row per report.
std::string report_table(const std::vector<ExperimentReport>& reports);

// f x g accuracy grid (rows f, columns g) for the aggregator sweep.
std::string aggregator_grid_table(const std::vector<ExperimentReport>& reports);

}  // namespace cer
