#pragma once

#include <string>
#include <vector>

#include "cer/confidence.hpp"
#include "cer/trace.hpp"

namespace cer {

// Everything the voters need to know about one scored path. Callers pass
// summaries ordered by path_id so floating-point accumulation is reproducible.
struct PathSummary {
  int path_id = 0;
  std::string final_answer;          // canonical, nonempty
  double path_confidence = 1.0;      // in [0, 1]
  SequenceStats stats;               // full-sequence stats for the baselines
};

// Whole-sequence selection criteria. Scores are "surprise"-like: the path
// with the MINIMUM score is selected.
//   ll: -sum logprob        nl: ll / token_count
//   pe: sum token entropy   ne: pe / token_count
enum class SelectionCriterion { ll, nl, pe, ne };

SelectionCriterion parse_selection_criterion(const std::string& name);
std::string to_string(SelectionCriterion c);

double selection_score(const PathSummary& summary, SelectionCriterion c);

// Confidence-weighted vote: C(a) = sum of path_confidence over paths whose
// final_answer == a; selected maximizes C(a), ties broken by the lowest
// contributing path_id. Empty input or empty answers raise VotingError.
VoteTally cer_vote(const std::vector<PathSummary>& summaries);

// Majority vote == cer_vote with every confidence forced to 1.
VoteTally self_consistency_vote(const std::vector<PathSummary>& summaries);

// Picks the single path minimizing the criterion (ties: lowest path_id).
// Tally entries store C(a) = -(best score among paths answering a) so the
// selected answer still attains the maximum entry.
VoteTally single_path_select(const std::vector<PathSummary>& summaries,
                             SelectionCriterion c);

// One verification completion; the first generated token must carry top_alts.
class AnswerVerifier {
 public:
  virtual ~AnswerVerifier() = default;
  virtual GenerationPath verify(const std::string& prompt) = 0;
};

struct PTrueConfig {
  std::string template_text =
      "Question: {q}\nProposed answer: {a}\n"
      "Is the proposed answer true or false? Answer true or false.\nAnswer:";
  std::string affirmative = "true";
};

// Queries the backend once per unique answer (cached) with the template and
// scores each answer by the probability mass the first generated token puts
// on the affirmative literal (case-insensitive, whitespace-trimmed) across
// its top_alts. Selected maximizes the score; ties broken by the lowest
// contributing path_id.
VoteTally p_true_select(const std::string& question,
                        const std::vector<PathSummary>& summaries,
                        AnswerVerifier& backend, const PTrueConfig& cfg = {});

}  // namespace cer
