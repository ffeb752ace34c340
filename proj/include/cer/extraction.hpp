#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include "cer/trace.hpp"

namespace cer {

enum class ExtractionMode { math, open_domain };

ExtractionMode parse_extraction_mode(const std::string& name);
std::string to_string(ExtractionMode mode);

// Markers are matched as literal, case-sensitive substrings. The final marker
// may appear multiple times; the last occurrence wins. Step markers after the
// winning final marker are ignored.
struct ExtractionConfig {
  ExtractionMode mode = ExtractionMode::math;
  std::string step_marker = "Answer:";
  std::string final_marker = "The final answer is";
  std::unordered_set<std::string> stopwords;  // empty => use default_stopwords()
  // When true, a trailing step whose answer canonically equals the final
  // answer (with nothing but whitespace/terminators between the two spans)
  // collapses into the final step.
  bool dedup_final = false;
};

// Keys: mode, step_marker, final_marker, stopwords_path, dedup_final.
// Format: one `key = value` per line, '#' comments. Unknown keys error.
ExtractionConfig load_extraction_config(std::istream& in);

// Lowercased function words and common sentence starters used to reject
// ordinary sentence-initial capitalization as a proper noun.
const std::unordered_set<std::string>& default_stopwords();

struct ProperNounSpan {
  std::size_t begin = 0;  // char offsets into the sentence passed in
  std::size_t end = 0;
  std::string text;
};

// Maximal spans of consecutive capitalized words. Adjacent capitalized words
// join across whitespace, a single comma, a single '&', or quote characters.
// All-caps words of length >= 2 count as capitalized. Capitalized stopwords
// in the leading run of the sentence (skipping non-letter words) are treated
// as ordinary sentence capitalization and excluded.
std::vector<ProperNounSpan> detect_proper_nouns(
    const std::string& sentence, const std::unordered_set<std::string>& stopwords);

// Last numeric literal in raw (optional adjacent sign, digits with strict
// thousands grouping, optional decimal part), as matched. nullopt if none.
std::optional<std::string> last_numeric_literal(const std::string& raw);

// Canonical decimal string of the last numeric literal: separators removed,
// '+' dropped, trailing fractional zeros and trailing '.' stripped, "-0"
// normalized to "0". Without any literal, falls back to the whitespace-
// normalized, lowercased raw string. Idempotent.
std::string canonicalize_numeric(const std::string& raw);

// Lowercases, collapses whitespace, strips surrounding punctuation and one
// leading article (the/a/an). Idempotent.
std::string canonicalize_entity(const std::string& raw);

// End (exclusive) of an answer span starting at `from`: runs to the first
// newline or sentence terminator. Periods inside numbers and single-letter
// initials do not terminate.
std::size_t answer_span_end(const std::string& text, std::size_t from);

// Sentence ranges [begin, end) of text, end including the terminator char.
std::vector<std::pair<std::size_t, std::size_t>> split_sentences(const std::string& text);

// One StepRecord per step-marker occurrence before the final marker plus the
// final-marker step, indices 1..n gap-free, final last. Steps whose answer
// canonicalizes to an empty string are dropped. Throws PathRejected when the
// final marker is missing or its answer is empty.
std::vector<StepRecord> segment_math(const GenerationPath& path,
                                     const ExtractionConfig& cfg);

// Sentences before the final marker become steps; each step's answer is the
// last proper-noun span of its sentence; sentences without one are skipped.
// Final answer is the text after the final marker. Throws PathRejected when
// the final marker is missing or its answer is empty.
std::vector<StepRecord> segment_open_domain(const GenerationPath& path,
                                            const ExtractionConfig& cfg);

// Dispatch on cfg.mode.
std::vector<StepRecord> segment(const GenerationPath& path, const ExtractionConfig& cfg);

// Mode-appropriate canonicalization, used for both extracted and gold answers.
std::string canonicalize_answer(const std::string& raw, ExtractionMode mode);

}  // namespace cer
