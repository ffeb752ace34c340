#include "cer/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <functional>
#include <istream>
#include <mutex>
#include <thread>

#include <json.hpp>

namespace cer {
namespace {

using nlohmann::json;

// Runs fn(0..count-1) on up to jobs workers, preserving slot order at the
// callers' side. The first exception wins and is rethrown after join.
void parallel_for(std::size_t count, int jobs,
                  const std::function<void(std::size_t)>& fn) {
  int workers = std::max(1, std::min<int>(jobs, static_cast<int>(count)));
  if (workers == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr first_error;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next.fetch_add(1); i < count; i = next.fetch_add(1)) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

std::string format_accuracy(double accuracy) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", accuracy);
  return buf;
}

std::string f_label(const ExperimentReport& r) {
  if (r.method == Method::cer || r.method == Method::cer_last) return to_string(r.f);
  return "-";
}

std::string g_label(const ExperimentReport& r) {
  if (r.method == Method::cer) return to_string(r.g);
  if (r.method == Method::cer_last) return to_string(PathAggregator::last_only);
  return "-";
}

}  // namespace

std::vector<DatasetRecord> load_dataset(std::istream& in, ExtractionMode mode) {
  std::vector<DatasetRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw HarnessError("dataset line " + std::to_string(line_no) + ": " + e.what());
    }
    DatasetRecord rec;
    try {
      for (const char* field : {"id", "question", "answer"}) {
        if (!j.contains(field) || !j.at(field).is_string() ||
            j.at(field).get<std::string>().empty()) {
          throw HarnessError("dataset line " + std::to_string(line_no) +
                             ": missing or empty field " + field);
        }
      }
      rec.id = j.at("id").get<std::string>();
      rec.question = j.at("question").get<std::string>();
      rec.gold_answer = j.at("answer").get<std::string>();
      rec.mode = mode;
    } catch (const json::exception& e) {
      throw HarnessError("dataset line " + std::to_string(line_no) + ": " + e.what());
    }
    records.push_back(std::move(rec));
  }
  return records;
}

DatasetFilter parse_dataset_filter(const std::string& name) {
  if (name == "none") return DatasetFilter::none;
  if (name == "numeric_answer") return DatasetFilter::numeric_answer;
  if (name == "proper_noun_answer") return DatasetFilter::proper_noun_answer;
  throw HarnessError("unknown dataset filter: " + name);
}

std::vector<DatasetRecord> filter_dataset(std::vector<DatasetRecord> records,
                                          DatasetFilter filter) {
  if (filter == DatasetFilter::none) return records;
  std::vector<DatasetRecord> kept;
  kept.reserve(records.size());
  for (auto& rec : records) {
    bool keep = false;
    if (filter == DatasetFilter::numeric_answer) {
      keep = last_numeric_literal(rec.gold_answer).has_value();
    } else {
      keep = !detect_proper_nouns(rec.gold_answer, default_stopwords()).empty();
    }
    if (keep) kept.push_back(std::move(rec));
  }
  return kept;
}

Method parse_method(const std::string& name) {
  if (name == "cer") return Method::cer;
  if (name == "cer_last") return Method::cer_last;
  if (name == "sc") return Method::sc;
  if (name == "greedy") return Method::greedy;
  if (name == "ll") return Method::ll;
  if (name == "nl") return Method::nl;
  if (name == "pe") return Method::pe;
  if (name == "ne") return Method::ne;
  if (name == "ptrue") return Method::ptrue;
  throw HarnessError("unknown method: " + name);
}

std::string to_string(Method method) {
  switch (method) {
    case Method::cer: return "cer";
    case Method::cer_last: return "cer_last";
    case Method::sc: return "sc";
    case Method::greedy: return "greedy";
    case Method::ll: return "ll";
    case Method::nl: return "nl";
    case Method::pe: return "pe";
    case Method::ne: return "ne";
    case Method::ptrue: return "ptrue";
  }
  return "?";
}

TraceStore TraceStore::from_records(std::vector<TracedPath> records) {
  TraceStore store;
  for (auto& rec : records) {
    if (rec.path.sampling.temperature > 0.0) {
      store.sampled_[rec.question_id].push_back(std::move(rec.path));
    } else {
      auto it = store.greedy_.find(rec.question_id);
      if (it == store.greedy_.end() || rec.path.path_id < it->second.path_id) {
        store.greedy_[rec.question_id] = std::move(rec.path);
      }
    }
  }
  for (auto& [question_id, paths] : store.sampled_) {
    std::sort(paths.begin(), paths.end(),
              [](const GenerationPath& a, const GenerationPath& b) {
                return a.path_id < b.path_id;
              });
    for (std::size_t i = 1; i < paths.size(); ++i) {
      if (paths[i].path_id == paths[i - 1].path_id) {
        throw TraceError("question " + question_id + ": duplicate path_id " +
                         std::to_string(paths[i].path_id));
      }
    }
  }
  return store;
}

const std::vector<GenerationPath>* TraceStore::sampled(
    const std::string& question_id) const {
  auto it = sampled_.find(question_id);
  return it == sampled_.end() ? nullptr : &it->second;
}

const GenerationPath* TraceStore::greedy(const std::string& question_id) const {
  auto it = greedy_.find(question_id);
  return it == greedy_.end() ? nullptr : &it->second;
}

namespace {

// Final canonical answer of a path, or nullopt when the path is rejected.
std::optional<std::string> safe_final_answer(const GenerationPath& path,
                                             const ExtractionConfig& cfg) {
  try {
    auto steps = segment(path, cfg);
    return steps.back().answer.canonical;
  } catch (const PathRejected&) {
    return std::nullopt;
  }
}

QuestionResult run_question(const DatasetRecord& record, const TraceStore& store,
                            const ExperimentOptions& opts, AnswerVerifier* verifier) {
  QuestionResult result;
  result.id = record.id;
  result.gold = canonicalize_answer(record.gold_answer, opts.extraction.mode);

  const GenerationPath* greedy_path = store.greedy(record.id);

  if (opts.method == Method::greedy) {
    if (greedy_path) {
      auto answer = safe_final_answer(*greedy_path, opts.extraction);
      if (answer) {
        result.selected = *answer;
        result.tally.entries.emplace_back(*answer, 1.0);
        result.tally.selected = *answer;
        result.confidence_sum = 1.0;
        result.usable_paths = 1;
      } else {
        result.rejected_paths = 1;
        result.fallback = "none";
      }
    } else {
      result.fallback = "none";
    }
    result.correct = !result.selected.empty() && result.selected == result.gold;
    return result;
  }

  const std::vector<GenerationPath>* all = store.sampled(record.id);
  std::size_t available = all ? all->size() : 0;
  if (opts.require_k && available < static_cast<std::size_t>(opts.k)) {
    throw HarnessError("question " + record.id + ": " + std::to_string(available) +
                       " sampled paths recorded, but k=" + std::to_string(opts.k));
  }
  std::size_t take = std::min<std::size_t>(available, static_cast<std::size_t>(opts.k));

  std::vector<PathSummary> summaries;
  summaries.reserve(take);
  for (std::size_t i = 0; i < take; ++i) {
    const GenerationPath& path = (*all)[i];
    std::vector<StepRecord> steps;
    try {
      steps = segment(path, opts.extraction);
    } catch (const PathRejected&) {
      result.rejected_paths++;
      continue;
    }
    PathSummary summary;
    summary.path_id = path.path_id;
    summary.final_answer = steps.back().answer.canonical;
    switch (opts.method) {
      case Method::cer:
        summary.path_confidence =
            score_path(path, steps, opts.f, opts.g).path_confidence;
        break;
      case Method::cer_last:
        summary.path_confidence =
            score_path(path, steps, opts.f, PathAggregator::last_only).path_confidence;
        break;
      case Method::ll:
      case Method::nl:
      case Method::pe:
      case Method::ne:
        summary.stats = compute_sequence_stats(path);
        break;
      default:
        break;  // sc and ptrue only need the answer
    }
    summaries.push_back(std::move(summary));
  }
  result.usable_paths = summaries.size();

  if (summaries.empty()) {
    // Every sampled path was rejected (or none were recorded): fall back to
    // the greedy path's answer when there is one.
    std::optional<std::string> answer;
    if (greedy_path) answer = safe_final_answer(*greedy_path, opts.extraction);
    if (answer) {
      result.selected = *answer;
      result.tally.entries.emplace_back(*answer, 1.0);
      result.tally.selected = *answer;
      result.confidence_sum = 1.0;
      result.fallback = "greedy";
    } else {
      result.fallback = "none";
    }
    result.correct = !result.selected.empty() && result.selected == result.gold;
    return result;
  }

  switch (opts.method) {
    case Method::cer:
    case Method::cer_last:
      result.tally = cer_vote(summaries);
      for (const auto& s : summaries) result.confidence_sum += s.path_confidence;
      break;
    case Method::sc:
      result.tally = self_consistency_vote(summaries);
      result.confidence_sum = static_cast<double>(summaries.size());
      break;
    case Method::ll:
    case Method::nl:
    case Method::pe:
    case Method::ne: {
      SelectionCriterion criterion =
          opts.method == Method::ll   ? SelectionCriterion::ll
          : opts.method == Method::nl ? SelectionCriterion::nl
          : opts.method == Method::pe ? SelectionCriterion::pe
                                      : SelectionCriterion::ne;
      result.tally = single_path_select(summaries, criterion);
      for (const auto& [answer, score] : result.tally.entries) {
        result.confidence_sum += score;
      }
      break;
    }
    case Method::ptrue:
      result.tally = p_true_select(record.question, summaries, *verifier);
      for (const auto& [answer, score] : result.tally.entries) {
        result.confidence_sum += score;
      }
      break;
    case Method::greedy:
      break;  // handled above
  }
  result.selected = result.tally.selected;
  result.correct = !result.selected.empty() && result.selected == result.gold;
  return result;
}

}  // namespace

ExperimentReport run_experiment(const std::vector<DatasetRecord>& dataset,
                                const TraceStore& store, const ExperimentOptions& opts,
                                AnswerVerifier* verifier) {
  if (dataset.empty()) throw HarnessError("empty dataset");
  if (opts.k < 1) throw HarnessError("k must be >= 1");
  if (opts.method == Method::ptrue && verifier == nullptr) {
    throw HarnessError("method ptrue needs a backend for verification queries");
  }
  for (const auto& record : dataset) {
    if (record.mode != opts.extraction.mode) {
      throw HarnessError("question " + record.id + ": dataset mode " +
                         to_string(record.mode) + " but experiment mode " +
                         to_string(opts.extraction.mode));
    }
  }
  ExperimentReport report;
  report.method = opts.method;
  report.f = opts.f;
  report.g = opts.g;
  report.k = opts.k;
  report.mode = opts.extraction.mode;
  report.per_question.resize(dataset.size());
  parallel_for(dataset.size(), opts.jobs, [&](std::size_t i) {
    report.per_question[i] = run_question(dataset[i], store, opts, verifier);
  });
  std::size_t correct = 0;
  for (const auto& q : report.per_question) {
    if (q.correct) ++correct;
    report.rejected_path_count += q.rejected_paths;
  }
  report.accuracy = static_cast<double>(correct) / static_cast<double>(dataset.size());
  return report;
}

std::vector<ExperimentReport> sweep_k(const std::vector<DatasetRecord>& dataset,
                                      const TraceStore& store,
                                      const ExperimentOptions& base,
                                      const std::vector<Method>& methods,
                                      const std::vector<int>& k_values,
                                      AnswerVerifier* verifier) {
  if (methods.empty() || k_values.empty()) {
    throw HarnessError("k sweep needs at least one method and one k value");
  }
  int max_k = *std::max_element(k_values.begin(), k_values.end());
  for (const auto& record : dataset) {
    const auto* paths = store.sampled(record.id);
    std::size_t available = paths ? paths->size() : 0;
    if (available < static_cast<std::size_t>(max_k)) {
      throw HarnessError("question " + record.id + ": " + std::to_string(available) +
                         " sampled paths recorded, but the sweep needs " +
                         std::to_string(max_k));
    }
  }
  std::vector<ExperimentReport> reports;
  for (Method method : methods) {
    for (int k : k_values) {
      ExperimentOptions opts = base;
      opts.method = method;
      opts.k = k;
      opts.require_k = true;
      reports.push_back(run_experiment(dataset, store, opts, verifier));
    }
  }
  return reports;
}

std::vector<ExperimentReport> sweep_aggregators(
    const std::vector<DatasetRecord>& dataset, const TraceStore& store,
    const ExperimentOptions& base, const std::vector<StepAggregator>& f_set,
    const std::vector<PathAggregator>& g_set) {
  if (f_set.empty() || g_set.empty()) {
    throw HarnessError("aggregator sweep needs at least one f and one g");
  }
  std::vector<ExperimentReport> reports;
  for (StepAggregator f : f_set) {
    for (PathAggregator g : g_set) {
      ExperimentOptions opts = base;
      opts.method = Method::cer;
      opts.f = f;
      opts.g = g;
      reports.push_back(run_experiment(dataset, store, opts));
    }
  }
  return reports;
}

std::string report_to_jsonl(const ExperimentReport& report) {
  std::string out;
  for (const auto& q : report.per_question) {
    json tally = json::object();
    for (const auto& [answer, score] : q.tally.entries) tally[answer] = score;
    json line = {{"id", q.id},
                 {"gold", q.gold},
                 {"selected", q.selected},
                 {"correct", q.correct},
                 {"tally", std::move(tally)},
                 {"confidence_sum", q.confidence_sum},
                 {"usable_paths", q.usable_paths},
                 {"rejected_paths", q.rejected_paths},
                 {"fallback", q.fallback}};
    out += line.dump();
    out += '\n';
  }
  json summary = {{"summary", true},
                  {"method", to_string(report.method)},
                  {"f", f_label(report)},
                  {"g", g_label(report)},
                  {"k", report.k},
                  {"mode", to_string(report.mode)},
                  {"questions", report.per_question.size()},
                  {"accuracy", report.accuracy},
                  {"rejected_path_count", report.rejected_path_count}};
  out += summary.dump();
  out += '\n';
  return out;
}

std::string report_table(const std::vector<ExperimentReport>& reports) {
  const std::vector<std::string> header = {"method", "f", "g",        "k",
                                           "mode",   "n", "accuracy", "rejected"};
  std::vector<std::vector<std::string>> rows;
  rows.push_back(header);
  for (const auto& r : reports) {
    rows.push_back({to_string(r.method), f_label(r), g_label(r), std::to_string(r.k),
                    to_string(r.mode), std::to_string(r.per_question.size()),
                    format_accuracy(r.accuracy), std::to_string(r.rejected_path_count)});
  }
  std::vector<std::size_t> widths(header.size(), 0);
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      widths[c] = std::max(widths[c], row[c].size());
    }
  }
  std::string out;
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      out += row[c];
      if (c + 1 < row.size()) {
        out.append(widths[c] - row[c].size() + 2, ' ');
      }
    }
    out += '\n';
  }
  return out;
}

std::string aggregator_grid_table(const std::vector<ExperimentReport>& reports) {
  std::vector<StepAggregator> fs;
  std::vector<PathAggregator> gs;
  for (const auto& r : reports) {
    if (std::find(fs.begin(), fs.end(), r.f) == fs.end()) fs.push_back(r.f);
    if (std::find(gs.begin(), gs.end(), r.g) == gs.end()) gs.push_back(r.g);
  }
  auto cell = [&](StepAggregator f, PathAggregator g) -> std::string {
    for (const auto& r : reports) {
      if (r.f == f && r.g == g) return format_accuracy(r.accuracy);
    }
    return "-";
  };
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> header = {"f \\ g"};
  for (auto g : gs) header.push_back(to_string(g));
  rows.push_back(header);
  for (auto f : fs) {
    std::vector<std::string> row = {to_string(f)};
    for (auto g : gs) row.push_back(cell(f, g));
    rows.push_back(row);
  }
  std::vector<std::size_t> widths(header.size(), 0);
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      widths[c] = std::max(widths[c], row[c].size());
    }
  }
  std::string out;
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      out += row[c];
      if (c + 1 < row.size()) {
        out.append(widths[c] - row[c].size() + 2, ' ');
      }
    }
    out += '\n';
  }
  return out;
}

}  // namespace cer
