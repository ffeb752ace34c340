#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "cer/voting.hpp"
#include "test_util.hpp"

using namespace cer;
using doctest::Approx;

namespace {

PathSummary summary(int path_id, const std::string& answer, double confidence) {
  PathSummary s;
  s.path_id = path_id;
  s.final_answer = answer;
  s.path_confidence = confidence;
  return s;
}

PathSummary stats_summary(int path_id, const std::string& answer, double sum_logprob,
                          std::size_t tokens, double sum_entropy,
                          bool entropy_available = true) {
  PathSummary s;
  s.path_id = path_id;
  s.final_answer = answer;
  s.stats.sum_logprob = sum_logprob;
  s.stats.token_count = tokens;
  s.stats.sum_entropy = sum_entropy;
  s.stats.entropy_available = entropy_available;
  return s;
}

double tally_mass(const VoteTally& tally) {
  double total = 0.0;
  for (const auto& [answer, value] : tally.entries) total += value;
  return total;
}

// Scripted verifier: maps each proposed answer to a fixed affirmative mass and
// records every prompt it was asked.
class scripted_verifier : public AnswerVerifier {
 public:
  std::map<std::string, double> mass_for;
  std::vector<std::string> prompts;
  std::string affirmative_text = " True";
  bool drop_tokens = false;
  bool drop_alts = false;

  GenerationPath verify(const std::string& prompt) override {
    prompts.push_back(prompt);
    GenerationPath reply;
    reply.path_id = 0;
    if (drop_tokens) return reply;

    // Pull the proposed answer back out of the prompt to pick a script entry.
    double p = 0.5;
    bool found = false;
    for (const auto& [answer, mass] : mass_for) {
      if (prompt.find("Proposed answer: " + answer + "\n") != std::string::npos) {
        p = mass;
        found = true;
        break;
      }
    }
    if (!found) {
      for (const auto& [answer, mass] : mass_for) {
        if (prompt.find(answer) != std::string::npos) {
          p = mass;
          break;
        }
      }
    }
    TokenRecord token;
    token.text = affirmative_text;
    token.logprob = std::log(std::max(p, 1e-9));
    if (!drop_alts) {
      // Two affirmative casings that should be pooled plus one negative alt.
      token.top_alts.push_back({affirmative_text, std::log(std::max(p * 0.75, 1e-12))});
      token.top_alts.push_back({"true", std::log(std::max(p * 0.25, 1e-12))});
      token.top_alts.push_back({" false", std::log(std::max(1.0 - p, 1e-12))});
    }
    reply.text = token.text;
    reply.tokens.push_back(std::move(token));
    return reply;
  }
};

}  // namespace

TEST_CASE("confidence-weighted vote pools mass per answer") {
  std::vector<PathSummary> s = {summary(0, "125", 0.9), summary(1, "25", 0.8),
                                summary(2, "125", 0.85)};
  auto tally = cer_vote(s);
  CHECK(tally.selected == "125");
  REQUIRE(tally.entries.size() == 2);
  CHECK(tally.entries[0].first == "125");
  CHECK(tally.entries[0].second == Approx(1.75).epsilon(1e-12));
  CHECK(tally.entries[1].first == "25");
  CHECK(tally.entries[1].second == Approx(0.8).epsilon(1e-12));
  CHECK(tally_mass(tally) == Approx(0.9 + 0.8 + 0.85).epsilon(1e-12));
}

TEST_CASE("vote ties go to the answer backed by the lowest path_id") {
  // "b" and "a" tie on mass; path 0 voted "b", so "b" wins despite sort order.
  auto tally = cer_vote({summary(0, "b", 0.5), summary(1, "a", 0.5)});
  CHECK(tally.selected == "b");
  // Same summaries in reverse input order: path ids decide, not positions.
  auto again = cer_vote({summary(1, "a", 0.5), summary(0, "b", 0.5)});
  CHECK(again.selected == "b");
}

TEST_CASE("vote input validation") {
  CHECK_THROWS_AS(cer_vote({}), VotingError);
  auto msg = testing::message_of<VotingError>(
      [] { cer_vote({summary(3, "", 0.5)}); });
  CHECK(msg.find("3") != std::string::npos);
  CHECK(msg.find("empty") != std::string::npos);
  CHECK_THROWS_AS(cer_vote({summary(0, "a", -0.1)}), VotingError);
  CHECK_THROWS_AS(self_consistency_vote({}), VotingError);
  CHECK_THROWS_AS(single_path_select({}, SelectionCriterion::ll), VotingError);
}

TEST_CASE("self-consistency counts paths") {
  auto tally = self_consistency_vote(
      {summary(0, "x", 0.01), summary(1, "y", 0.99), summary(2, "y", 0.2)});
  CHECK(tally.selected == "y");
  REQUIRE(tally.entries.size() == 2);
  CHECK(tally.entries[0].second == 1.0);  // "x"
  CHECK(tally.entries[1].second == 2.0);  // "y"

  // Count tie: lowest path_id wins.
  auto tie = self_consistency_vote({summary(2, "y", 1.0), summary(1, "x", 1.0)});
  CHECK(tie.selected == "x");
}

TEST_CASE("scaling every confidence by a power of two never changes the winner") {
  std::mt19937 rng(21);
  std::uniform_int_distribution<int> n_paths(1, 8);
  std::uniform_int_distribution<int> which(0, 3);
  std::uniform_int_distribution<int> exponent(-3, 3);
  std::uniform_real_distribution<double> conf(0.0, 1.0);
  const char* answers[] = {"a", "b", "c", "d"};

  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<PathSummary> s;
    double total = 0.0;
    int n = n_paths(rng);
    for (int i = 0; i < n; ++i) {
      double c = conf(rng);
      total += c;
      s.push_back(summary(i, answers[which(rng)], c));
    }
    auto base = cer_vote(s);
    CHECK(tally_mass(base) == Approx(total).epsilon(1e-9));

    double lambda = std::ldexp(1.0, exponent(rng));
    std::vector<PathSummary> scaled = s;
    for (auto& p : scaled) p.path_confidence *= lambda;
    auto rescored = cer_vote(scaled);

    CHECK(rescored.selected == base.selected);
    REQUIRE(rescored.entries.size() == base.entries.size());
    for (std::size_t i = 0; i < base.entries.size(); ++i) {
      CHECK(rescored.entries[i].first == base.entries[i].first);
      // Power-of-two scaling is exact in floating point.
      CHECK(rescored.entries[i].second == lambda * base.entries[i].second);
    }
  }
}

TEST_CASE("uniform confidences reduce the weighted vote to majority vote") {
  std::mt19937 rng(22);
  std::uniform_int_distribution<int> n_paths(1, 8);
  std::uniform_int_distribution<int> which(0, 3);
  std::uniform_real_distribution<double> conf(0.05, 1.0);
  const char* answers[] = {"a", "b", "c", "d"};

  for (int trial = 0; trial < 1000; ++trial) {
    double c = conf(rng);
    std::vector<PathSummary> s;
    int n = n_paths(rng);
    for (int i = 0; i < n; ++i) {
      s.push_back(summary(i, answers[which(rng)], c));
    }
    auto weighted = cer_vote(s);
    auto majority = self_consistency_vote(s);
    CHECK(weighted.selected == majority.selected);
    REQUIRE(weighted.entries.size() == majority.entries.size());
    for (std::size_t i = 0; i < weighted.entries.size(); ++i) {
      CHECK(weighted.entries[i].second ==
            Approx(c * majority.entries[i].second).epsilon(1e-12));
    }
  }
}

TEST_CASE("selection scores match their formulas") {
  auto s = stats_summary(0, "a", -3.0, 2, 1.0);
  CHECK(selection_score(s, SelectionCriterion::ll) == Approx(3.0));
  CHECK(selection_score(s, SelectionCriterion::nl) == Approx(1.5));
  CHECK(selection_score(s, SelectionCriterion::pe) == Approx(1.0));
  CHECK(selection_score(s, SelectionCriterion::ne) == Approx(0.5));

  std::mt19937 rng(23);
  std::uniform_real_distribution<double> lp(-50.0, 0.0);
  std::uniform_real_distribution<double> ent(0.0, 30.0);
  std::uniform_int_distribution<int> count(1, 40);
  for (int trial = 0; trial < 500; ++trial) {
    auto r = stats_summary(trial, "a", lp(rng), static_cast<std::size_t>(count(rng)),
                           ent(rng));
    double n = static_cast<double>(r.stats.token_count);
    CHECK(selection_score(r, SelectionCriterion::nl) ==
          Approx(selection_score(r, SelectionCriterion::ll) / n).epsilon(1e-12));
    CHECK(selection_score(r, SelectionCriterion::ne) ==
          Approx(selection_score(r, SelectionCriterion::pe) / n).epsilon(1e-12));
  }
}

TEST_CASE("selection score validation") {
  auto no_tokens = stats_summary(5, "a", -1.0, 0, 0.0);
  auto msg = testing::message_of<VotingError>(
      [&] { selection_score(no_tokens, SelectionCriterion::ll); });
  CHECK(msg.find("5") != std::string::npos);

  auto no_entropy = stats_summary(7, "a", -1.0, 3, 0.0, false);
  CHECK(selection_score(no_entropy, SelectionCriterion::ll) == Approx(1.0));
  auto entropy_msg = testing::message_of<VotingError>(
      [&] { selection_score(no_entropy, SelectionCriterion::pe); });
  CHECK(entropy_msg.find("7") != std::string::npos);
  CHECK(entropy_msg.find("top_alts") != std::string::npos);
  CHECK_THROWS_AS(selection_score(no_entropy, SelectionCriterion::ne), VotingError);
}

TEST_CASE("single-path selection picks the minimum score") {
  // Path 0: two tokens at p=0.9 each; path 1: one token at p=0.99.
  double lp_a = 2.0 * std::log(0.9);
  double lp_b = std::log(0.99);
  std::vector<PathSummary> s = {stats_summary(0, "a", lp_a, 2, 0.0),
                                stats_summary(1, "b", lp_b, 1, 0.0)};
  auto tally = single_path_select(s, SelectionCriterion::ll);
  CHECK(tally.selected == "b");
  REQUIRE(tally.entries.size() == 2);
  // Entries hold negated scores so the winner still attains the maximum.
  CHECK(tally.entries[0].second == Approx(lp_a).epsilon(1e-12));
  CHECK(tally.entries[1].second == Approx(lp_b).epsilon(1e-12));

  // Within one answer the best (lowest) score represents the bucket.
  std::vector<PathSummary> multi = {stats_summary(0, "a", -5.0, 1, 0.0),
                                    stats_summary(1, "a", -1.0, 1, 0.0),
                                    stats_summary(2, "b", -2.0, 1, 0.0)};
  auto best = single_path_select(multi, SelectionCriterion::ll);
  CHECK(best.selected == "a");
  CHECK(best.entries[0].second == Approx(-1.0));
}

TEST_CASE("exact normalized-entropy tie falls back to the lowest path_id") {
  // 0.625 is dyadic, so both normalized entropies are bit-identical.
  std::vector<PathSummary> s = {stats_summary(0, "x", -1.0, 2, 1.25),
                                stats_summary(1, "y", -1.0, 1, 0.625)};
  CHECK(single_path_select(s, SelectionCriterion::ne).selected == "x");

  std::vector<PathSummary> flipped = {stats_summary(1, "x", -1.0, 2, 1.25),
                                      stats_summary(0, "y", -1.0, 1, 0.625)};
  CHECK(single_path_select(flipped, SelectionCriterion::ne).selected == "y");
}

TEST_CASE("criterion names round trip") {
  for (auto c : {SelectionCriterion::ll, SelectionCriterion::nl,
                 SelectionCriterion::pe, SelectionCriterion::ne}) {
    CHECK(parse_selection_criterion(to_string(c)) == c);
  }
  CHECK_THROWS_AS(parse_selection_criterion("xx"), VotingError);
}

TEST_CASE("answer verification queries once per unique answer") {
  scripted_verifier verifier;
  verifier.mass_for = {{"12", 0.8}, {"13", 0.1}};
  std::vector<PathSummary> s = {summary(0, "12", 0.5), summary(1, "13", 0.5),
                                summary(2, "12", 0.5)};
  auto tally = p_true_select("What is 7 + 5?", s, verifier);

  REQUIRE(verifier.prompts.size() == 2);  // cached per unique answer
  CHECK(verifier.prompts[0] ==
        "Question: What is 7 + 5?\nProposed answer: 12\n"
        "Is the proposed answer true or false? Answer true or false.\nAnswer:");
  CHECK(verifier.prompts[1] ==
        "Question: What is 7 + 5?\nProposed answer: 13\n"
        "Is the proposed answer true or false? Answer true or false.\nAnswer:");

  CHECK(tally.selected == "12");
  REQUIRE(tally.entries.size() == 2);
  // Both affirmative casings pool: 0.75p + 0.25p == p.
  CHECK(tally.entries[0].second == Approx(0.8).epsilon(1e-9));
  CHECK(tally.entries[1].second == Approx(0.1).epsilon(1e-9));
}

TEST_CASE("verification ties fall back to the lowest contributing path_id") {
  scripted_verifier verifier;
  verifier.mass_for = {{"a", 0.5}, {"b", 0.5}};
  auto tally = p_true_select("q", {summary(0, "b", 1.0), summary(1, "a", 1.0)},
                             verifier);
  CHECK(tally.selected == "b");
}

TEST_CASE("verification template and affirmative literal are configurable") {
  scripted_verifier verifier;
  verifier.mass_for = {{"42", 0.7}};
  verifier.affirmative_text = " Yes";
  PTrueConfig cfg;
  cfg.template_text = "{a} answers {q}; {a}?";
  cfg.affirmative = "yes";
  auto tally = p_true_select("Q", {summary(0, "42", 1.0)}, verifier, cfg);
  REQUIRE(verifier.prompts.size() == 1);
  CHECK(verifier.prompts[0] == "42 answers Q; 42?");
  // Only the " Yes" alternative matches; "true" and " false" do not.
  CHECK(tally.entries[0].second == Approx(0.7 * 0.75).epsilon(1e-9));
}

TEST_CASE("verification replies must carry usable tokens") {
  scripted_verifier verifier;
  verifier.mass_for = {{"a", 0.5}};
  verifier.drop_tokens = true;
  auto msg = testing::message_of<VotingError>([&] {
    p_true_select("q", {summary(0, "a", 1.0)}, verifier);
  });
  CHECK(msg.find("no tokens") != std::string::npos);

  scripted_verifier bare;
  bare.mass_for = {{"a", 0.5}};
  bare.drop_alts = true;
  auto alt_msg = testing::message_of<VotingError>([&] {
    p_true_select("q", {summary(0, "a", 1.0)}, bare);
  });
  CHECK(alt_msg.find("top_alts") != std::string::npos);

  CHECK_THROWS_AS(p_true_select("q", {}, verifier), VotingError);
}
