#include "cer/extraction.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <istream>
#include <regex>

namespace cer {
namespace {

bool is_ws(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
bool is_digit(char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; }
bool is_alpha(char c) { return std::isalpha(static_cast<unsigned char>(c)) != 0; }
bool is_alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }
bool is_upper(char c) { return std::isupper(static_cast<unsigned char>(c)) != 0; }

std::string to_lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && is_ws(s[b])) ++b;
  while (e > b && is_ws(s[e - 1])) --e;
  return s.substr(b, e - b);
}

std::string collapse_ws(const std::string& s) {
  std::string out;
  bool in_ws = true;  // swallows leading whitespace
  for (char c : s) {
    if (is_ws(c)) {
      in_ws = true;
    } else {
      if (in_ws && !out.empty()) out += ' ';
      in_ws = false;
      out += c;
    }
  }
  return out;
}

// True when the terminator candidate at i ends a sentence: . ! ? followed by
// whitespace or end of text, with two '.' carve-outs (decimal points and
// single-letter initials like "J. Smith").
bool sentence_end_at(const std::string& text, std::size_t i) {
  char c = text[i];
  if (c != '.' && c != '!' && c != '?') return false;
  if (i + 1 < text.size() && !is_ws(text[i + 1])) return false;
  if (c == '.') {
    if (i > 0 && is_digit(text[i - 1]) && i + 1 < text.size() && is_digit(text[i + 1])) {
      return false;
    }
    if (i > 0 && is_upper(text[i - 1]) && (i == 1 || !is_alnum(text[i - 2]))) {
      std::size_t j = i + 1;
      while (j < text.size() && is_ws(text[j])) ++j;
      if (j > i + 1 && j < text.size() && is_upper(text[j])) return false;
    }
  }
  return true;
}

std::vector<std::size_t> find_all(const std::string& text, const std::string& pattern) {
  std::vector<std::size_t> out;
  if (pattern.empty()) return out;
  for (std::size_t pos = text.find(pattern); pos != std::string::npos;
       pos = text.find(pattern, pos + 1)) {
    out.push_back(pos);
  }
  return out;
}

struct CharSpan {
  std::size_t begin = 0;
  std::size_t end = 0;
};

// Trimmed answer text following a marker, up to newline/sentence end.
std::optional<CharSpan> marker_answer(const std::string& text, std::size_t marker_pos,
                                      std::size_t marker_len) {
  std::size_t b = marker_pos + marker_len;
  std::size_t e = answer_span_end(text, b);
  while (b < e && is_ws(text[b])) ++b;
  while (e > b && is_ws(text[e - 1])) --e;
  if (b >= e) return std::nullopt;
  return CharSpan{b, e};
}

AnswerSpan make_answer_span(const GenerationPath& path, CharSpan span,
                            const std::string& canonical) {
  auto [token_start, token_end] = align_span(path, span.begin, span.end);
  std::string raw;
  for (std::size_t i = token_start; i < token_end; ++i) raw += path.tokens[i].text;
  AnswerSpan out;
  out.token_start = token_start;
  out.token_end = token_end;
  out.raw = trim(raw);
  out.canonical = canonical;
  return out;
}

// Gap allowed between a duplicated trailing step answer and the final marker.
bool only_trailing_filler(const std::string& text, std::size_t begin, std::size_t end) {
  for (std::size_t i = begin; i < end; ++i) {
    char c = text[i];
    if (is_ws(c) || c == '.' || c == '!' || c == '?' || c == '*' || c == ')' ||
        c == '"' || c == '\'') {
      continue;
    }
    return false;
  }
  return true;
}

struct PendingStep {
  CharSpan content;
  CharSpan span;
  std::string canonical;
  bool is_final = false;
};

std::vector<StepRecord> finish_steps(const GenerationPath& path,
                                     std::vector<PendingStep> pending) {
  std::vector<StepRecord> steps;
  steps.reserve(pending.size());
  int index = 0;
  for (const auto& p : pending) {
    StepRecord rec;
    rec.step_index = ++index;
    rec.content_begin = p.content.begin;
    rec.content_end = p.content.end;
    rec.answer = make_answer_span(path, p.span, p.canonical);
    rec.is_final = p.is_final;
    steps.push_back(std::move(rec));
  }
  return steps;
}

std::size_t locate_final_marker(const GenerationPath& path, const ExtractionConfig& cfg) {
  auto finals = find_all(path.text, cfg.final_marker);
  if (finals.empty()) {
    throw PathRejected("path " + std::to_string(path.path_id) +
                       ": final answer marker not found");
  }
  return finals.back();
}

struct Word {
  std::size_t begin = 0;
  std::size_t end = 0;
  bool has_letter = false;
  bool capitalized = false;
};

std::vector<Word> tokenize_words(const std::string& s) {
  std::vector<Word> words;
  std::size_t i = 0;
  while (i < s.size()) {
    if (!is_alnum(s[i])) {
      ++i;
      continue;
    }
    Word w;
    w.begin = i;
    w.capitalized = is_upper(s[i]);
    while (i < s.size()) {
      if (is_alnum(s[i])) {
        w.has_letter = w.has_letter || is_alpha(s[i]);
        ++i;
        continue;
      }
      // Apostrophes and hyphens stay inside a word only when followed by
      // another word character ("let's", "Turkish-born").
      if ((s[i] == '\'' || s[i] == '-') && i + 1 < s.size() && is_alnum(s[i + 1])) {
        ++i;
        continue;
      }
      break;
    }
    w.end = i;
    words.push_back(w);
  }
  return words;
}

// Whether two capitalized words remain one proper-noun span across this gap:
// whitespace, a single comma, a single ampersand, or quote characters.
bool joinable_gap(const std::string& s, std::size_t begin, std::size_t end) {
  int separators = 0;
  bool quote = false;
  for (std::size_t i = begin; i < end; ++i) {
    char c = s[i];
    if (is_ws(c)) continue;
    if (c == ',' || c == '&') {
      ++separators;
      continue;
    }
    if (c == '\'' || c == '"' || c == '`') {
      quote = true;
      continue;
    }
    return false;
  }
  if (separators > 1) return false;
  if (separators == 1 && quote) return false;
  return true;
}

}  // namespace

ExtractionMode parse_extraction_mode(const std::string& name) {
  if (name == "math") return ExtractionMode::math;
  if (name == "open_domain") return ExtractionMode::open_domain;
  throw ExtractionError("unknown extraction mode: " + name);
}

std::string to_string(ExtractionMode mode) {
  return mode == ExtractionMode::math ? "math" : "open_domain";
}

const std::unordered_set<std::string>& default_stopwords() {
  static const std::unordered_set<std::string> kStopwords = {
      "a",         "an",        "the",       "it",       "its",       "it's",
      "this",      "that",      "these",     "those",    "there",     "here",
      "he",        "she",       "they",      "we",       "i",         "you",
      "my",        "your",      "his",       "her",      "their",     "our",
      "is",        "are",       "was",       "were",     "be",        "been",
      "being",     "am",        "do",        "does",     "did",       "done",
      "has",       "have",      "had",       "having",   "will",      "would",
      "shall",     "should",    "can",       "could",    "may",       "might",
      "must",      "to",        "of",        "in",       "on",        "at",
      "by",        "for",       "with",      "from",     "as",        "into",
      "onto",      "over",      "under",     "about",    "after",     "before",
      "during",    "since",     "until",     "while",    "when",      "where",
      "why",       "how",       "what",      "which",    "who",       "whom",
      "whose",     "and",       "or",        "nor",      "but",       "so",
      "yet",       "if",        "then",      "than",     "because",   "although",
      "though",    "unless",    "however",   "therefore", "thus",     "hence",
      "moreover",  "furthermore", "meanwhile", "not",     "no",       "yes",
      "let",       "let's",     "now",       "also",     "just",      "only",
      "even",      "still",     "already",   "first",    "firstly",   "second",
      "secondly",  "third",     "next",      "finally",  "last",      "lastly",
      "once",      "again",     "step",      "answer",   "response",  "question",
      "q",         "note",      "given",     "using",    "based",     "assume",
      "assuming",  "suppose",   "according", "overall",  "additionally",
      "importantly", "one", "two",
  };
  return kStopwords;
}

std::vector<ProperNounSpan> detect_proper_nouns(
    const std::string& sentence, const std::unordered_set<std::string>& stopwords) {
  const auto words = tokenize_words(sentence);
  std::vector<bool> included(words.size(), false);
  bool leading = true;
  for (std::size_t i = 0; i < words.size(); ++i) {
    const Word& w = words[i];
    std::string word_text = sentence.substr(w.begin, w.end - w.begin);
    if (leading) {
      if (!w.has_letter) continue;  // "[Step 1]" digits keep the leading run open
      if (w.capitalized && stopwords.count(to_lower(word_text)) > 0) continue;
      leading = false;
    }
    included[i] = w.capitalized;
  }
  std::vector<ProperNounSpan> spans;
  std::size_t i = 0;
  while (i < words.size()) {
    if (!included[i]) {
      ++i;
      continue;
    }
    std::size_t last = i;
    while (last + 1 < words.size() && included[last + 1] &&
           joinable_gap(sentence, words[last].end, words[last + 1].begin)) {
      ++last;
    }
    ProperNounSpan span;
    span.begin = words[i].begin;
    span.end = words[last].end;
    span.text = sentence.substr(span.begin, span.end - span.begin);
    spans.push_back(std::move(span));
    i = last + 1;
  }
  return spans;
}

std::optional<std::string> last_numeric_literal(const std::string& raw) {
  static const std::regex kLiteral(
      R"([+-]?(?:\d{1,3}(?:,\d{3})+|\d+)(?:\.\d+)?)");
  std::optional<std::string> found;
  for (auto it = std::sregex_iterator(raw.begin(), raw.end(), kLiteral);
       it != std::sregex_iterator(); ++it) {
    std::string lit = it->str();
    std::size_t pos = static_cast<std::size_t>(it->position());
    if ((lit[0] == '+' || lit[0] == '-') && pos > 0 &&
        (is_alnum(raw[pos - 1]) || raw[pos - 1] == ')')) {
      lit.erase(0, 1);  // binary operator, not a sign: "3-5" ends in literal 5
    }
    found = std::move(lit);
  }
  return found;
}

std::string canonicalize_numeric(const std::string& raw) {
  auto literal = last_numeric_literal(raw);
  if (!literal) return to_lower(collapse_ws(raw));
  std::string s = *literal;
  std::string sign;
  if (s[0] == '-') {
    sign = "-";
    s.erase(0, 1);
  } else if (s[0] == '+') {
    s.erase(0, 1);
  }
  s.erase(std::remove(s.begin(), s.end(), ','), s.end());
  if (s.find('.') != std::string::npos) {
    while (!s.empty() && s.back() == '0') s.pop_back();
    if (!s.empty() && s.back() == '.') s.pop_back();
  }
  bool all_zero = true;
  for (char c : s) {
    if (c != '0' && c != '.') {
      all_zero = false;
      break;
    }
  }
  if (all_zero) sign.clear();
  return sign + s;
}

std::string canonicalize_entity(const std::string& raw) {
  std::string prev = raw;
  for (;;) {
    std::size_t b = 0, e = prev.size();
    auto strippable = [](char c) {
      unsigned char u = static_cast<unsigned char>(c);
      return std::isspace(u) != 0 || std::ispunct(u) != 0;
    };
    while (b < e && strippable(prev[b])) ++b;
    while (e > b && strippable(prev[e - 1])) --e;
    std::string s = collapse_ws(to_lower(prev.substr(b, e - b)));
    for (const char* article : {"the ", "an ", "a "}) {
      std::size_t len = std::string(article).size();
      if (s.size() > len && s.compare(0, len, article) == 0) {
        s.erase(0, len);
        break;
      }
    }
    if (s == prev) return s;
    prev = std::move(s);
  }
}

std::size_t answer_span_end(const std::string& text, std::size_t from) {
  for (std::size_t i = from; i < text.size(); ++i) {
    if (text[i] == '\n') return i;
    if (sentence_end_at(text, i)) return i;
  }
  return text.size();
}

std::vector<std::pair<std::size_t, std::size_t>> split_sentences(const std::string& text) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_ws(text[i])) ++i;
    if (i >= text.size()) break;
    std::size_t begin = i;
    while (i < text.size() && !sentence_end_at(text, i)) ++i;
    std::size_t end = i < text.size() ? i + 1 : text.size();
    out.emplace_back(begin, end);
    i = end;
  }
  return out;
}

std::vector<StepRecord> segment_math(const GenerationPath& path,
                                     const ExtractionConfig& cfg) {
  const std::string& text = path.text;
  std::size_t final_pos = locate_final_marker(path, cfg);
  auto final_span = marker_answer(text, final_pos, cfg.final_marker.size());
  if (!final_span) {
    throw PathRejected("path " + std::to_string(path.path_id) + ": empty final answer");
  }
  std::string final_text = text.substr(final_span->begin,
                                       final_span->end - final_span->begin);
  std::string final_canonical = canonicalize_numeric(final_text);
  if (final_canonical.empty()) {
    throw PathRejected("path " + std::to_string(path.path_id) + ": empty final answer");
  }

  std::vector<PendingStep> pending;
  std::size_t content_begin = 0;
  for (std::size_t pos : find_all(text, cfg.step_marker)) {
    if (pos >= final_pos) break;
    auto span = marker_answer(text, pos, cfg.step_marker.size());
    if (!span) continue;
    std::string canonical =
        canonicalize_numeric(text.substr(span->begin, span->end - span->begin));
    if (canonical.empty()) continue;
    pending.push_back({{content_begin, span->end}, *span, canonical, false});
    content_begin = span->end;
  }
  if (cfg.dedup_final && !pending.empty() && pending.back().canonical == final_canonical &&
      only_trailing_filler(text, pending.back().span.end, final_pos)) {
    pending.pop_back();
    content_begin = pending.empty() ? 0 : pending.back().span.end;
  }
  pending.push_back({{content_begin, final_span->end}, *final_span, final_canonical, true});
  return finish_steps(path, std::move(pending));
}

std::vector<StepRecord> segment_open_domain(const GenerationPath& path,
                                            const ExtractionConfig& cfg) {
  const std::string& text = path.text;
  std::size_t final_pos = locate_final_marker(path, cfg);
  auto final_span = marker_answer(text, final_pos, cfg.final_marker.size());
  if (!final_span) {
    throw PathRejected("path " + std::to_string(path.path_id) + ": empty final answer");
  }
  std::string final_canonical = canonicalize_entity(
      text.substr(final_span->begin, final_span->end - final_span->begin));
  if (final_canonical.empty()) {
    throw PathRejected("path " + std::to_string(path.path_id) + ": empty final answer");
  }

  const auto& stopwords = cfg.stopwords.empty() ? default_stopwords() : cfg.stopwords;
  std::vector<PendingStep> pending;
  std::string region = text.substr(0, final_pos);
  for (const auto& [sb, se] : split_sentences(region)) {
    std::string sentence = region.substr(sb, se - sb);
    auto spans = detect_proper_nouns(sentence, stopwords);
    if (spans.empty()) continue;
    const ProperNounSpan& last = spans.back();
    std::string canonical = canonicalize_entity(last.text);
    if (canonical.empty()) continue;
    pending.push_back({{sb, se}, {sb + last.begin, sb + last.end}, canonical, false});
  }
  pending.push_back({{final_pos, final_span->end}, *final_span, final_canonical, true});
  return finish_steps(path, std::move(pending));
}

std::vector<StepRecord> segment(const GenerationPath& path, const ExtractionConfig& cfg) {
  return cfg.mode == ExtractionMode::math ? segment_math(path, cfg)
                                          : segment_open_domain(path, cfg);
}

std::string canonicalize_answer(const std::string& raw, ExtractionMode mode) {
  return mode == ExtractionMode::math ? canonicalize_numeric(raw)
                                      : canonicalize_entity(raw);
}

ExtractionConfig load_extraction_config(std::istream& in) {
  ExtractionConfig cfg;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    std::size_t eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw ExtractionError("extraction config line " + std::to_string(line_no) +
                            ": expected key = value");
    }
    std::string key = trim(stripped.substr(0, eq));
    std::string value = trim(stripped.substr(eq + 1));
    if (key == "mode") {
      cfg.mode = parse_extraction_mode(value);
    } else if (key == "step_marker") {
      cfg.step_marker = value;
    } else if (key == "final_marker") {
      cfg.final_marker = value;
    } else if (key == "dedup_final") {
      if (value == "true" || value == "1") {
        cfg.dedup_final = true;
      } else if (value == "false" || value == "0") {
        cfg.dedup_final = false;
      } else {
        throw ExtractionError("extraction config line " + std::to_string(line_no) +
                              ": dedup_final must be true or false");
      }
    } else if (key == "stopwords_path") {
      std::ifstream words(value);
      if (!words) {
        throw ExtractionError("extraction config line " + std::to_string(line_no) +
                              ": cannot open stopwords file " + value);
      }
      std::string word;
      cfg.stopwords.clear();
      while (std::getline(words, word)) {
        word = trim(word);
        if (!word.empty()) cfg.stopwords.insert(to_lower(word));
      }
    } else {
      throw ExtractionError("extraction config line " + std::to_string(line_no) +
                            ": unknown key " + key);
    }
  }
  return cfg;
}

}  // namespace cer
