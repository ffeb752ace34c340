// Command-line front end: generate (sample traces from a backend), score
// (traces -> per-path confidences), vote (scores -> answers), eval (full
// pipeline + accuracy) and sweep (k or aggregator grids).
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cer/backend.hpp"
#include "cer/harness.hpp"
#include "cer/prompts.hpp"

namespace {

using nlohmann::json;

struct ExtractionFlags {
  std::string config_path;
  std::string mode = "math";
  bool dedup_final = false;
  CLI::Option* mode_opt = nullptr;
  CLI::Option* dedup_opt = nullptr;
};

void add_extraction_flags(CLI::App* cmd, ExtractionFlags& flags) {
  cmd->add_option("--extraction-config", flags.config_path,
                  "extraction settings file (key = value lines)");
  flags.mode_opt = cmd->add_option("--mode", flags.mode, "math or open_domain")
                       ->capture_default_str();
  flags.dedup_opt = cmd->add_flag("--dedup-final", flags.dedup_final,
                                  "drop a trailing step that restates the final answer");
}

// Settings file first (when given), explicit flags override it.
cer::ExtractionConfig resolve_extraction(const ExtractionFlags& flags) {
  cer::ExtractionConfig cfg;
  if (!flags.config_path.empty()) {
    std::ifstream in(flags.config_path);
    if (!in) {
      throw cer::HarnessError("cannot open extraction config: " + flags.config_path);
    }
    cfg = cer::load_extraction_config(in);
  }
  if (flags.config_path.empty() || flags.mode_opt->count() > 0) {
    cfg.mode = cer::parse_extraction_mode(flags.mode);
  }
  if (flags.dedup_opt->count() > 0) cfg.dedup_final = flags.dedup_final;
  return cfg;
}

struct BackendFlags {
  cer::BackendConfig cfg;
  long long seed = 0;
  CLI::Option* seed_opt = nullptr;
};

void add_backend_flags(CLI::App* cmd, BackendFlags& b) {
  cmd->add_option("--base-url", b.cfg.base_url, "backend origin, http only")
      ->capture_default_str();
  cmd->add_option("--model", b.cfg.model, "model name sent with each request");
  cmd->add_flag("--chat", b.cfg.chat, "use the chat completions endpoint");
  cmd->add_option("--top-logprobs", b.cfg.top_logprobs,
                  "alternatives requested per token")
      ->capture_default_str();
  cmd->add_option("--max-tokens", b.cfg.max_tokens, "generation length cap")
      ->capture_default_str();
  cmd->add_option("--timeout", b.cfg.timeout_seconds, "per-request timeout, seconds")
      ->capture_default_str();
  cmd->add_option("--retries", b.cfg.max_retries, "retries after the first attempt")
      ->capture_default_str();
  cmd->add_option("--parallelism", b.cfg.parallelism, "max requests in flight")
      ->capture_default_str();
  b.seed_opt = cmd->add_option("--seed", b.seed, "base seed; request i uses seed + i");
}

cer::BackendConfig resolve_backend(const BackendFlags& b, int k, double temperature) {
  cer::BackendConfig cfg = b.cfg;
  cfg.k = k;
  cfg.temperature = temperature;
  if (b.seed_opt->count() > 0) cfg.seed = b.seed;
  return cfg;
}

std::vector<cer::DatasetRecord> read_dataset(const std::string& path,
                                             cer::ExtractionMode mode,
                                             const std::string& filter_name,
                                             std::size_t limit) {
  std::ifstream in(path);
  if (!in) throw cer::HarnessError("cannot open dataset: " + path);
  auto records = cer::load_dataset(in, mode);
  records = cer::filter_dataset(std::move(records),
                                cer::parse_dataset_filter(filter_name));
  if (limit > 0 && records.size() > limit) records.resize(limit);
  return records;
}

std::vector<cer::TracedPath> read_traces(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw cer::HarnessError("cannot open traces: " + path);
  cer::LoadStats stats;
  auto traces = cer::load_traces(in, &stats);
  if (stats.clamped_logprobs > 0) {
    std::cerr << "note: clamped " << stats.clamped_logprobs
              << " positive logprobs to 0 while loading " << path << "\n";
  }
  return traces;
}

void write_text(const std::string& path, const std::string& text) {
  if (path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw cer::HarnessError("cannot open for writing: " + path);
  out << text;
  if (!out) throw cer::HarnessError("write failed: " + path);
}

// Samples k paths (plus optionally one greedy path with path_id k) for every
// question and returns them bound to their question ids.
std::vector<cer::TracedPath> generate_traces(cer::BackendClient& client,
                                             const std::vector<cer::DatasetRecord>& records,
                                             cer::PromptPreset preset, int k,
                                             bool with_greedy,
                                             std::size_t* failures_out) {
  std::vector<cer::TracedPath> out;
  std::size_t failures_total = 0;
  for (const auto& rec : records) {
    std::string prompt = cer::render_prompt(preset, rec.question);
    std::size_t failures = 0;
    auto paths = client.sample_paths(prompt, k, &failures);
    failures_total += failures;
    for (auto& p : paths) out.push_back({rec.id, std::move(p)});
    if (with_greedy) {
      auto greedy = client.greedy_generate(prompt);
      greedy.path_id = k;  // after the sampled ids
      out.push_back({rec.id, std::move(greedy)});
    }
  }
  if (failures_out) *failures_out = failures_total;
  return out;
}

struct GenerateArgs {
  std::string dataset;
  std::string traces;
  std::string preset = "math_v1";
  std::string mode = "math";
  std::string filter = "none";
  int k = 10;
  double temperature = 1.0;
  bool greedy = false;
  std::size_t limit = 0;
};

void run_generate(const GenerateArgs& a, const BackendFlags& b) {
  auto records = read_dataset(a.dataset, cer::parse_extraction_mode(a.mode), a.filter,
                              a.limit);
  if (records.empty()) throw cer::HarnessError("no questions after filtering");
  cer::BackendClient client(resolve_backend(b, a.k, a.temperature));
  std::size_t failures = 0;
  auto traced = generate_traces(client, records, cer::parse_prompt_preset(a.preset),
                                a.k, a.greedy, &failures);
  std::ofstream sink(a.traces, std::ios::binary);
  if (!sink) throw cer::HarnessError("cannot open for writing: " + a.traces);
  std::size_t written = cer::record_traces(traced, sink);
  std::cerr << "recorded " << written << " paths for " << records.size()
            << " questions";
  if (failures > 0) std::cerr << " (" << failures << " requests failed)";
  std::cerr << "\n";
}

struct ScoreArgs {
  std::string traces;
  std::string f = "product";
  std::string g = "weighted_mean";
  std::string out = "-";
};

void run_score(const ScoreArgs& a, const ExtractionFlags& ex) {
  auto cfg = resolve_extraction(ex);
  auto f = cer::parse_step_aggregator(a.f);
  auto g = cer::parse_path_aggregator(a.g);
  auto traces = read_traces(a.traces);
  std::string out;
  for (const auto& rec : traces) {
    json line = {{"question_id", rec.question_id},
                 {"path_id", rec.path.path_id},
                 {"temperature", rec.path.sampling.temperature}};
    try {
      auto steps = cer::segment(rec.path, cfg);
      auto score = cer::score_path(rec.path, steps, f, g);
      auto stats = cer::compute_sequence_stats(rec.path);
      line["final_answer"] = score.final_answer;
      line["step_confidences"] = score.step_confidences;
      line["path_confidence"] = score.path_confidence;
      line["sum_logprob"] = stats.sum_logprob;
      line["token_count"] = stats.token_count;
      line["sum_entropy"] = stats.sum_entropy;
      line["entropy_available"] = stats.entropy_available;
    } catch (const cer::PathRejected& e) {
      line["rejected"] = true;
      line["reason"] = e.what();
    }
    out += line.dump();
    out += '\n';
  }
  write_text(a.out, out);
}

struct VoteArgs {
  std::string scores;
  std::string method = "cer";
  std::string out = "-";
  int k = 0;  // 0 = all available
};

void run_vote(const VoteArgs& a) {
  cer::Method method = cer::parse_method(a.method);
  switch (method) {
    case cer::Method::cer:
    case cer::Method::sc:
    case cer::Method::ll:
    case cer::Method::nl:
    case cer::Method::pe:
    case cer::Method::ne:
      break;
    case cer::Method::cer_last:
      throw cer::HarnessError(
          "vote reads precomputed confidences; run score with --g last_only and "
          "vote with --method cer instead");
    default:
      throw cer::HarnessError("method " + a.method +
                              " needs traces or a backend; use eval");
  }

  std::ifstream file;
  std::istream* in = &std::cin;
  if (a.scores != "-") {
    file.open(a.scores);
    if (!file) throw cer::HarnessError("cannot open scores: " + a.scores);
    in = &file;
  }

  struct QuestionScores {
    std::vector<cer::PathSummary> summaries;
    std::size_t rejected = 0;
    std::optional<std::string> greedy_answer;  // from temperature-0 lines
  };
  std::vector<std::pair<std::string, QuestionScores>> questions;
  std::map<std::string, std::size_t> index;  // question_id -> slot, input order kept

  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(*in, raw)) {
    ++line_no;
    if (raw.empty()) continue;
    json j;
    try {
      j = json::parse(raw);
    } catch (const json::exception& e) {
      throw cer::HarnessError("scores line " + std::to_string(line_no) + ": " +
                              e.what());
    }
    try {
      std::string question_id = j.at("question_id").get<std::string>();
      auto [it, inserted] = index.try_emplace(question_id, questions.size());
      if (inserted) questions.emplace_back(question_id, QuestionScores{});
      QuestionScores& entry = questions[it->second].second;
      double temperature = j.at("temperature").get<double>();
      bool rejected = j.value("rejected", false);
      if (temperature <= 0.0) {
        if (!rejected && !entry.greedy_answer) {
          entry.greedy_answer = j.at("final_answer").get<std::string>();
        }
        continue;
      }
      if (rejected) {
        entry.rejected++;
        continue;
      }
      cer::PathSummary summary;
      summary.path_id = j.at("path_id").get<int>();
      summary.final_answer = j.at("final_answer").get<std::string>();
      summary.path_confidence = j.at("path_confidence").get<double>();
      summary.stats.sum_logprob = j.at("sum_logprob").get<double>();
      summary.stats.token_count = j.at("token_count").get<std::size_t>();
      summary.stats.sum_entropy = j.at("sum_entropy").get<double>();
      summary.stats.entropy_available = j.at("entropy_available").get<bool>();
      entry.summaries.push_back(std::move(summary));
    } catch (const json::exception& e) {
      throw cer::HarnessError("scores line " + std::to_string(line_no) + ": " +
                              e.what());
    }
  }

  std::string out;
  for (auto& [question_id, entry] : questions) {
    std::sort(entry.summaries.begin(), entry.summaries.end(),
              [](const cer::PathSummary& x, const cer::PathSummary& y) {
                return x.path_id < y.path_id;
              });
    if (a.k > 0 && entry.summaries.size() > static_cast<std::size_t>(a.k)) {
      entry.summaries.resize(static_cast<std::size_t>(a.k));
    }
    cer::VoteTally tally;
    double confidence_sum = 0.0;
    std::string fallback;
    if (entry.summaries.empty()) {
      if (entry.greedy_answer) {
        tally.entries.emplace_back(*entry.greedy_answer, 1.0);
        tally.selected = *entry.greedy_answer;
        confidence_sum = 1.0;
        fallback = "greedy";
      } else {
        fallback = "none";
      }
    } else {
      switch (method) {
        case cer::Method::cer:
          tally = cer::cer_vote(entry.summaries);
          for (const auto& s : entry.summaries) confidence_sum += s.path_confidence;
          break;
        case cer::Method::sc:
          tally = cer::self_consistency_vote(entry.summaries);
          confidence_sum = static_cast<double>(entry.summaries.size());
          break;
        default: {
          cer::SelectionCriterion criterion =
              method == cer::Method::ll   ? cer::SelectionCriterion::ll
              : method == cer::Method::nl ? cer::SelectionCriterion::nl
              : method == cer::Method::pe ? cer::SelectionCriterion::pe
                                          : cer::SelectionCriterion::ne;
          tally = cer::single_path_select(entry.summaries, criterion);
          for (const auto& [answer, score] : tally.entries) confidence_sum += score;
          break;
        }
      }
    }
    json tally_json = json::object();
    for (const auto& [answer, score] : tally.entries) tally_json[answer] = score;
    json line = {{"question_id", question_id},
                 {"selected", tally.selected},
                 {"tally", std::move(tally_json)},
                 {"confidence_sum", confidence_sum},
                 {"usable_paths", entry.summaries.size()},
                 {"rejected_paths", entry.rejected},
                 {"fallback", fallback}};
    out += line.dump();
    out += '\n';
  }
  write_text(a.out, out);
}

struct EvalArgs {
  std::string dataset;
  std::string traces;
  std::string method = "cer";
  std::string f = "product";
  std::string g = "weighted_mean";
  std::string filter = "none";
  std::string report_out;
  std::string preset = "math_v1";
  int k = 10;
  double temperature = 1.0;
  bool greedy = false;
  bool require_k = false;
  std::size_t limit = 0;
  int jobs = 1;
};

void run_eval(const EvalArgs& a, const ExtractionFlags& ex, const BackendFlags& b) {
  auto cfg = resolve_extraction(ex);
  auto records = read_dataset(a.dataset, cfg.mode, a.filter, a.limit);
  cer::Method method = cer::parse_method(a.method);

  std::vector<cer::TracedPath> traced;
  if (std::filesystem::exists(a.traces)) {
    traced = read_traces(a.traces);
  } else {
    cer::BackendClient client(resolve_backend(b, a.k, a.temperature));
    std::size_t failures = 0;
    traced = generate_traces(client, records, cer::parse_prompt_preset(a.preset),
                             a.k, a.greedy, &failures);
    std::ofstream sink(a.traces, std::ios::binary);
    if (!sink) throw cer::HarnessError("cannot open for writing: " + a.traces);
    cer::record_traces(traced, sink);
    std::cerr << "recorded traces to " << a.traces;
    if (failures > 0) std::cerr << " (" << failures << " requests failed)";
    std::cerr << "\n";
  }

  auto store = cer::TraceStore::from_records(std::move(traced));
  cer::ExperimentOptions opts;
  opts.method = method;
  opts.f = cer::parse_step_aggregator(a.f);
  opts.g = cer::parse_path_aggregator(a.g);
  opts.k = a.k;
  opts.extraction = cfg;
  opts.jobs = a.jobs;
  opts.require_k = a.require_k;

  std::optional<cer::BackendClient> verifier;
  if (method == cer::Method::ptrue) {
    verifier.emplace(resolve_backend(b, a.k, a.temperature));
  }
  auto report =
      cer::run_experiment(records, store, opts, verifier ? &*verifier : nullptr);
  std::cout << cer::report_table({report});
  if (!a.report_out.empty()) write_text(a.report_out, cer::report_to_jsonl(report));
}

struct SweepArgs {
  std::string kind = "k";
  std::string dataset;
  std::string traces;
  std::string f = "product";
  std::string g = "weighted_mean";
  std::string filter = "none";
  std::string report_out;
  std::vector<std::string> methods = {"cer", "sc"};
  std::vector<int> k_values = {3, 5, 10};
  std::vector<std::string> f_set = {"product", "mean_entropy", "mean_prob"};
  std::vector<std::string> g_set = {"weighted_mean", "harmonic", "half_split",
                                    "exp2",          "avg_log",  "min",
                                    "last_only"};
  int k = 10;
  std::size_t limit = 0;
  int jobs = 1;
};

void run_sweep(const SweepArgs& a, const ExtractionFlags& ex, const BackendFlags& b) {
  auto cfg = resolve_extraction(ex);
  auto records = read_dataset(a.dataset, cfg.mode, a.filter, a.limit);
  auto store = cer::TraceStore::from_records(read_traces(a.traces));

  cer::ExperimentOptions base;
  base.f = cer::parse_step_aggregator(a.f);
  base.g = cer::parse_path_aggregator(a.g);
  base.extraction = cfg;
  base.jobs = a.jobs;

  std::vector<cer::ExperimentReport> reports;
  if (a.kind == "k") {
    std::vector<cer::Method> methods;
    bool needs_backend = false;
    for (const auto& name : a.methods) {
      methods.push_back(cer::parse_method(name));
      if (methods.back() == cer::Method::ptrue) needs_backend = true;
    }
    std::optional<cer::BackendClient> verifier;
    if (needs_backend) verifier.emplace(resolve_backend(b, a.k, 0.0));
    reports = cer::sweep_k(records, store, base, methods, a.k_values,
                           verifier ? &*verifier : nullptr);
    std::cout << cer::report_table(reports);
  } else if (a.kind == "aggregators") {
    base.k = a.k;
    std::vector<cer::StepAggregator> f_set;
    for (const auto& name : a.f_set) f_set.push_back(cer::parse_step_aggregator(name));
    std::vector<cer::PathAggregator> g_set;
    for (const auto& name : a.g_set) g_set.push_back(cer::parse_path_aggregator(name));
    reports = cer::sweep_aggregators(records, store, base, f_set, g_set);
    std::cout << cer::aggregator_grid_table(reports) << "\n"
              << cer::report_table(reports);
  } else {
    throw cer::HarnessError("unknown sweep kind: " + a.kind +
                            " (expected k or aggregators)");
  }
  if (!a.report_out.empty()) {
    std::string out;
    for (const auto& report : reports) out += cer::report_to_jsonl(report);
    write_text(a.report_out, out);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"confidence-weighted answer selection over sampled reasoning paths"};
  app.require_subcommand(1);

  GenerateArgs gen;
  BackendFlags gen_backend;
  auto* generate = app.add_subcommand("generate", "sample paths and record traces");
  generate->add_option("--dataset", gen.dataset, "questions, one JSON record per line")
      ->required();
  generate->add_option("--traces", gen.traces, "output trace file")->required();
  generate->add_option("--prompt-preset", gen.preset, "prompt template")
      ->capture_default_str();
  generate->add_option("--mode", gen.mode, "math or open_domain")
      ->capture_default_str();
  generate->add_option("--filter", gen.filter,
                       "none, numeric_answer or proper_noun_answer")
      ->capture_default_str();
  generate->add_option("--k", gen.k, "sampled paths per question")
      ->capture_default_str();
  generate->add_option("--temperature", gen.temperature, "sampling temperature")
      ->capture_default_str();
  generate->add_flag("--greedy", gen.greedy, "also record one temperature-0 path");
  generate->add_option("--limit", gen.limit, "use only the first N questions");
  add_backend_flags(generate, gen_backend);
  generate->callback([&] { run_generate(gen, gen_backend); });

  ScoreArgs score;
  ExtractionFlags score_ex;
  auto* score_cmd = app.add_subcommand("score", "per-path confidences from traces");
  score_cmd->add_option("--traces", score.traces, "recorded traces")->required();
  score_cmd->add_option("--f", score.f, "step aggregator")->capture_default_str();
  score_cmd->add_option("--g", score.g, "path aggregator")->capture_default_str();
  score_cmd->add_option("--out", score.out, "output file, - for stdout")
      ->capture_default_str();
  add_extraction_flags(score_cmd, score_ex);
  score_cmd->callback([&] { run_score(score, score_ex); });

  VoteArgs vote;
  auto* vote_cmd = app.add_subcommand("vote", "select answers from score records");
  vote_cmd->add_option("--scores", vote.scores, "score records, - for stdin")
      ->required();
  vote_cmd->add_option("--method", vote.method, "cer, sc, ll, nl, pe or ne")
      ->capture_default_str();
  vote_cmd->add_option("--k", vote.k, "vote over the first k paths (0 = all)")
      ->capture_default_str();
  vote_cmd->add_option("--out", vote.out, "output file, - for stdout")
      ->capture_default_str();
  vote_cmd->callback([&] { run_vote(vote); });

  EvalArgs eval;
  ExtractionFlags eval_ex;
  BackendFlags eval_backend;
  auto* eval_cmd = app.add_subcommand(
      "eval", "full pipeline: replay traces (or sample them) and grade");
  eval_cmd->add_option("--dataset", eval.dataset, "questions, one JSON record per line")
      ->required();
  eval_cmd->add_option("--traces", eval.traces,
                       "trace file; replayed when present, recorded when not")
      ->required();
  eval_cmd->add_option("--method", eval.method,
                       "cer, cer_last, sc, greedy, ll, nl, pe, ne or ptrue")
      ->capture_default_str();
  eval_cmd->add_option("--f", eval.f, "step aggregator")->capture_default_str();
  eval_cmd->add_option("--g", eval.g, "path aggregator")->capture_default_str();
  eval_cmd->add_option("--k", eval.k, "paths per question")->capture_default_str();
  eval_cmd->add_option("--filter", eval.filter,
                       "none, numeric_answer or proper_noun_answer")
      ->capture_default_str();
  eval_cmd->add_option("--temperature", eval.temperature, "sampling temperature")
      ->capture_default_str();
  eval_cmd->add_option("--prompt-preset", eval.preset, "prompt template")
      ->capture_default_str();
  eval_cmd->add_flag("--greedy", eval.greedy,
                     "also record one temperature-0 path when sampling");
  eval_cmd->add_flag("--require-k", eval.require_k,
                     "error out when a question has fewer than k paths");
  eval_cmd->add_option("--limit", eval.limit, "use only the first N questions");
  eval_cmd->add_option("--jobs", eval.jobs, "questions processed in parallel")
      ->capture_default_str();
  eval_cmd->add_option("--report-out", eval.report_out, "write the report here");
  add_extraction_flags(eval_cmd, eval_ex);
  add_backend_flags(eval_cmd, eval_backend);
  eval_cmd->callback([&] { run_eval(eval, eval_ex, eval_backend); });

  SweepArgs sweep;
  ExtractionFlags sweep_ex;
  BackendFlags sweep_backend;
  auto* sweep_cmd = app.add_subcommand("sweep", "k or aggregator grids over traces");
  sweep_cmd->add_option("--kind", sweep.kind, "k or aggregators")
      ->capture_default_str();
  sweep_cmd->add_option("--dataset", sweep.dataset,
                        "questions, one JSON record per line")
      ->required();
  sweep_cmd->add_option("--traces", sweep.traces, "recorded traces")->required();
  sweep_cmd->add_option("--methods", sweep.methods, "methods for the k sweep")
      ->delimiter(',')
      ->capture_default_str();
  sweep_cmd->add_option("--k-values", sweep.k_values, "k values for the k sweep")
      ->delimiter(',')
      ->capture_default_str();
  sweep_cmd->add_option("--f-set", sweep.f_set, "step aggregators for the grid")
      ->delimiter(',');
  sweep_cmd->add_option("--g-set", sweep.g_set, "path aggregators for the grid")
      ->delimiter(',');
  sweep_cmd->add_option("--f", sweep.f, "step aggregator for cer in the k sweep")
      ->capture_default_str();
  sweep_cmd->add_option("--g", sweep.g, "path aggregator for cer in the k sweep")
      ->capture_default_str();
  sweep_cmd->add_option("--k", sweep.k, "paths per question for the aggregator grid")
      ->capture_default_str();
  sweep_cmd->add_option("--filter", sweep.filter,
                        "none, numeric_answer or proper_noun_answer")
      ->capture_default_str();
  sweep_cmd->add_option("--limit", sweep.limit, "use only the first N questions");
  sweep_cmd->add_option("--jobs", sweep.jobs, "questions processed in parallel")
      ->capture_default_str();
  sweep_cmd->add_option("--report-out", sweep.report_out, "write all reports here");
  add_extraction_flags(sweep_cmd, sweep_ex);
  add_backend_flags(sweep_cmd, sweep_backend);
  sweep_cmd->callback([&] { run_sweep(sweep, sweep_ex, sweep_backend); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
