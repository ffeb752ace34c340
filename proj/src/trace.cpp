#include "cer/trace.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

#include <json.hpp>

namespace cer {
namespace {

using nlohmann::json;

std::string line_tag(std::size_t line_no) {
  return "trace line " + std::to_string(line_no) + ": ";
}

TokenRecord parse_token(const json& jt, std::size_t line_no, std::size_t token_idx,
                        LoadStats* stats) {
  if (!jt.is_object() || !jt.contains("t") || !jt.contains("lp")) {
    throw TraceError(line_tag(line_no) + "token " + std::to_string(token_idx) +
                     " needs fields t and lp");
  }
  TokenRecord tok;
  tok.text = jt.at("t").get<std::string>();
  tok.logprob = jt.at("lp").get<double>();
  if (jt.contains("top")) {
    for (const auto& alt : jt.at("top")) {
      if (!alt.is_array() || alt.size() != 2) {
        throw TraceError(line_tag(line_no) + "token " + std::to_string(token_idx) +
                         " top entries must be [text, logprob] pairs");
      }
      tok.top_alts.push_back({alt.at(0).get<std::string>(), alt.at(1).get<double>()});
    }
  }
  try {
    normalize_token(tok, stats);
  } catch (const TraceError& e) {
    throw TraceError(line_tag(line_no) + "token " + std::to_string(token_idx) + ": " +
                     e.what());
  }
  return tok;
}

TracedPath parse_record(const std::string& line, std::size_t line_no, LoadStats* stats) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw TraceError(line_tag(line_no) + e.what());
  }
  for (const char* field : {"question_id", "path_id", "temperature", "text", "tokens"}) {
    if (!j.contains(field)) {
      throw TraceError(line_tag(line_no) + "missing field " + field);
    }
  }
  TracedPath rec;
  try {
    rec.question_id = j.at("question_id").get<std::string>();
    rec.path.path_id = j.at("path_id").get<int>();
    rec.path.sampling.temperature = j.at("temperature").get<double>();
    rec.path.text = j.at("text").get<std::string>();
    if (j.contains("seed")) rec.path.sampling.seed = j.at("seed").get<int64_t>();
    const auto& jtokens = j.at("tokens");
    if (!jtokens.is_array() || jtokens.empty()) {
      throw TraceError(line_tag(line_no) + "tokens must be a non-empty array");
    }
    rec.path.tokens.reserve(jtokens.size());
    for (std::size_t i = 0; i < jtokens.size(); ++i) {
      rec.path.tokens.push_back(parse_token(jtokens[i], line_no, i, stats));
    }
  } catch (const json::exception& e) {
    throw TraceError(line_tag(line_no) + e.what());
  }
  std::string concat;
  for (const auto& t : rec.path.tokens) concat += t.text;
  if (concat != rec.path.text) {
    throw TraceError(line_tag(line_no) + "path " + std::to_string(rec.path.path_id) +
                     ": token concatenation does not equal text");
  }
  return rec;
}

}  // namespace

void normalize_token(TokenRecord& token, LoadStats* stats) {
  auto clamp = [&](double lp) {
    if (lp > 0.0) {
      if (stats) stats->clamped_logprobs++;
      return 0.0;
    }
    return lp;
  };
  token.logprob = clamp(token.logprob);
  if (!token.has_top_alts()) return;
  for (TokenAlt& alt : token.top_alts) alt.logprob = clamp(alt.logprob);
  bool sampled_present =
      std::any_of(token.top_alts.begin(), token.top_alts.end(),
                  [&](const TokenAlt& a) { return a.text == token.text; });
  if (!sampled_present) {
    token.top_alts.push_back({token.text, token.logprob});
    if (stats) stats->merged_alts++;
  }
  std::sort(token.top_alts.begin(), token.top_alts.end(),
            [](const TokenAlt& a, const TokenAlt& b) {
              if (a.logprob != b.logprob) return a.logprob > b.logprob;
              return a.text < b.text;
            });
  double mass = 0.0;
  for (const auto& a : token.top_alts) mass += std::exp(a.logprob);
  if (mass > 1.0 + 1e-6) {
    throw TraceError("top_alts probability mass " + std::to_string(mass) +
                     " exceeds 1");
  }
}

std::vector<TracedPath> load_traces(std::istream& in, LoadStats* stats) {
  std::vector<TracedPath> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (stats) stats->lines++;
    if (line.empty()) continue;
    records.push_back(parse_record(line, line_no, stats));
    if (stats) stats->paths++;
  }
  return records;
}

std::string trace_to_json_line(const TracedPath& record) {
  json jtokens = json::array();
  for (const auto& tok : record.path.tokens) {
    json jt = {{"t", tok.text}, {"lp", tok.logprob}};
    if (tok.has_top_alts()) {
      json jtop = json::array();
      for (const auto& alt : tok.top_alts) {
        jtop.push_back(json::array({alt.text, alt.logprob}));
      }
      jt["top"] = std::move(jtop);
    }
    jtokens.push_back(std::move(jt));
  }
  json j = {{"question_id", record.question_id},
            {"path_id", record.path.path_id},
            {"temperature", record.path.sampling.temperature},
            {"text", record.path.text},
            {"tokens", std::move(jtokens)}};
  if (record.path.sampling.seed) j["seed"] = *record.path.sampling.seed;
  return j.dump();
}

std::size_t write_traces(const std::vector<TracedPath>& records, std::ostream& out) {
  std::size_t written = 0;
  for (const auto& rec : records) {
    out << trace_to_json_line(rec) << '\n';
    if (!out) {
      throw TraceError("trace write failed after " + std::to_string(written) +
                       " records");
    }
    ++written;
  }
  out.flush();
  if (!out) {
    throw TraceError("trace write failed after " + std::to_string(written) + " records");
  }
  return written;
}

std::pair<std::size_t, std::size_t> align_span(const GenerationPath& path,
                                               std::size_t char_start,
                                               std::size_t char_end) {
  if (char_start >= char_end || char_end > path.text.size()) {
    throw TraceError("path " + std::to_string(path.path_id) + ": span [" +
                     std::to_string(char_start) + ", " + std::to_string(char_end) +
                     ") out of range for text of size " +
                     std::to_string(path.text.size()));
  }
  // offsets[i] = first char of token i; offsets[n] = text size.
  std::vector<std::size_t> offsets(path.tokens.size() + 1, 0);
  for (std::size_t i = 0; i < path.tokens.size(); ++i) {
    offsets[i + 1] = offsets[i] + path.tokens[i].text.size();
  }
  // Last token boundary at or before char_start, first at or after char_end:
  // the unique minimal cover (any other cover starts earlier and ends later).
  auto start_it = std::upper_bound(offsets.begin(), offsets.end(), char_start);
  std::size_t token_start = static_cast<std::size_t>(start_it - offsets.begin()) - 1;
  auto end_it = std::lower_bound(offsets.begin(), offsets.end(), char_end);
  std::size_t token_end = static_cast<std::size_t>(end_it - offsets.begin());
  return {token_start, token_end};
}

}  // namespace cer
