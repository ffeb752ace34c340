#include "cer/voting.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <map>

namespace cer {
namespace {

std::string trim_lower(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  std::string out = s.substr(b, e - b);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

void check_summaries(const std::vector<PathSummary>& summaries) {
  if (summaries.empty()) {
    throw VotingError("vote over zero paths");
  }
  for (const auto& s : summaries) {
    if (s.final_answer.empty()) {
      throw VotingError("path " + std::to_string(s.path_id) + ": empty final answer");
    }
  }
}

struct Entry {
  double score = 0.0;
  int min_path_id = std::numeric_limits<int>::max();
};

// Shared argmax: highest score wins, equal scores fall back to the lowest
// contributing path_id.
VoteTally finish_tally(const std::map<std::string, Entry>& entries) {
  VoteTally tally;
  const std::string* best = nullptr;
  for (const auto& [answer, entry] : entries) {
    tally.entries.emplace_back(answer, entry.score);
    if (!best) {
      best = &answer;
      continue;
    }
    const Entry& cur = entries.at(*best);
    if (entry.score > cur.score ||
        (entry.score == cur.score && entry.min_path_id < cur.min_path_id)) {
      best = &answer;
    }
  }
  tally.selected = *best;
  return tally;
}

}  // namespace

SelectionCriterion parse_selection_criterion(const std::string& name) {
  if (name == "ll") return SelectionCriterion::ll;
  if (name == "nl") return SelectionCriterion::nl;
  if (name == "pe") return SelectionCriterion::pe;
  if (name == "ne") return SelectionCriterion::ne;
  throw VotingError("unknown selection criterion: " + name);
}

std::string to_string(SelectionCriterion c) {
  switch (c) {
    case SelectionCriterion::ll: return "ll";
    case SelectionCriterion::nl: return "nl";
    case SelectionCriterion::pe: return "pe";
    case SelectionCriterion::ne: return "ne";
  }
  return "?";
}

double selection_score(const PathSummary& summary, SelectionCriterion c) {
  if (summary.stats.token_count == 0) {
    throw VotingError("path " + std::to_string(summary.path_id) +
                      ": no tokens to score");
  }
  double n = static_cast<double>(summary.stats.token_count);
  switch (c) {
    case SelectionCriterion::ll:
      return -summary.stats.sum_logprob;
    case SelectionCriterion::nl:
      return -summary.stats.sum_logprob / n;
    case SelectionCriterion::pe:
    case SelectionCriterion::ne:
      if (!summary.stats.entropy_available) {
        throw VotingError("path " + std::to_string(summary.path_id) +
                          ": entropy criterion needs top_alts on every token");
      }
      return c == SelectionCriterion::pe ? summary.stats.sum_entropy
                                         : summary.stats.sum_entropy / n;
  }
  throw VotingError("unhandled selection criterion");
}

VoteTally cer_vote(const std::vector<PathSummary>& summaries) {
  check_summaries(summaries);
  std::map<std::string, Entry> entries;
  for (const auto& s : summaries) {
    if (s.path_confidence < 0.0) {
      throw VotingError("path " + std::to_string(s.path_id) +
                        ": negative confidence");
    }
    Entry& e = entries[s.final_answer];
    e.score += s.path_confidence;
    e.min_path_id = std::min(e.min_path_id, s.path_id);
  }
  return finish_tally(entries);
}

VoteTally self_consistency_vote(const std::vector<PathSummary>& summaries) {
  std::vector<PathSummary> uniform = summaries;
  for (auto& s : uniform) s.path_confidence = 1.0;
  return cer_vote(uniform);
}

VoteTally single_path_select(const std::vector<PathSummary>& summaries,
                             SelectionCriterion c) {
  check_summaries(summaries);
  std::map<std::string, Entry> entries;
  for (const auto& s : summaries) {
    double score = selection_score(s, c);
    auto it = entries.find(s.final_answer);
    if (it == entries.end()) {
      entries[s.final_answer] = {-score, s.path_id};
    } else if (-score > it->second.score ||
               (-score == it->second.score && s.path_id < it->second.min_path_id)) {
      it->second = {-score, s.path_id};
    }
  }
  return finish_tally(entries);
}

VoteTally p_true_select(const std::string& question,
                        const std::vector<PathSummary>& summaries,
                        AnswerVerifier& backend, const PTrueConfig& cfg) {
  check_summaries(summaries);
  std::map<std::string, Entry> entries;
  for (const auto& s : summaries) {  // unique answers + their lowest path_id
    Entry& e = entries[s.final_answer];
    e.min_path_id = std::min(e.min_path_id, s.path_id);
  }
  const std::string affirmative = trim_lower(cfg.affirmative);
  for (auto& [answer, entry] : entries) {
    std::string prompt = cfg.template_text;
    for (const auto& [key, value] :
         {std::pair<std::string, const std::string*>{"{q}", &question},
          std::pair<std::string, const std::string*>{"{a}", &answer}}) {
      for (std::size_t pos = prompt.find(key); pos != std::string::npos;
           pos = prompt.find(key, pos + value->size())) {
        prompt.replace(pos, key.size(), *value);
      }
    }
    GenerationPath reply = backend.verify(prompt);
    if (reply.tokens.empty()) {
      throw VotingError("verification reply for answer \"" + answer +
                        "\" has no tokens");
    }
    const TokenRecord& first = reply.tokens.front();
    if (!first.has_top_alts()) {
      throw VotingError("verification reply for answer \"" + answer +
                        "\" lacks top_alts on the first token");
    }
    double mass = 0.0;
    for (const TokenAlt& alt : first.top_alts) {
      if (trim_lower(alt.text) == affirmative) mass += std::exp(alt.logprob);
    }
    entry.score = mass;
  }
  return finish_tally(entries);
}

}  // namespace cer
