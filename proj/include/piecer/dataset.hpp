#pragma once

#include <algorithm>
#include <istream>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "piecer/errors.hpp"
#include "piecer/metrics.hpp"
#include "piecer/text.hpp"

namespace piecer {

/// Inclusive token offsets into the passage.
struct Candidate {
  std::size_t start = 0;
  std::size_t end = 0;
  std::string text;
  bool operator==(const Candidate&) const = default;
};

struct MrcExample {
  std::string id;
  std::string passage_text;
  std::string query_text;
  std::vector<Token> passage;
  std::vector<Token> query;
  std::vector<Candidate> candidates;
  std::vector<std::string> answers;
};

struct Span {
  std::size_t start = 0;
  std::size_t end = 0;
  bool operator==(const Span&) const = default;
};

inline std::string join_tokens(const std::vector<Token>& tokens, std::size_t start, std::size_t end) {
  std::string out;
  for (std::size_t i = start; i <= end && i < tokens.size(); ++i) {
    if (!out.empty()) out.push_back(' ');
    out += tokens[i].surface;
  }
  return out;
}

/// Throws ContractError naming the first violated invariant.
inline void validate_example(const MrcExample& ex) {
  auto fail = [&](const std::string& what) { throw ContractError("example '" + ex.id + "': " + what); };
  if (ex.id.empty()) throw ContractError("example with empty id");
  const auto placeholders = std::count_if(ex.query.begin(), ex.query.end(),
                                          [](const Token& t) { return t.surface == kPlaceholder; });
  if (placeholders != 1) {
    fail("query must contain exactly one " + std::string(kPlaceholder) + ", found " + std::to_string(placeholders));
  }
  if (ex.passage.empty()) fail("empty passage");
  if (ex.answers.empty()) fail("no gold answers");
  const std::size_t n = ex.passage.size();
  for (const Candidate& c : ex.candidates) {
    if (c.start > c.end || c.end >= n) {
      fail("candidate [" + std::to_string(c.start) + ", " + std::to_string(c.end) + "] outside passage of " +
           std::to_string(n) + " tokens");
    }
    if (normalize_answer(c.text) != normalize_answer(join_tokens(ex.passage, c.start, c.end))) {
      fail("candidate text '" + c.text + "' does not match tokens '" + join_tokens(ex.passage, c.start, c.end) + "'");
    }
  }
}

inline MrcExample make_example(std::string id, std::string passage, std::string query,
                               std::vector<Candidate> candidates, std::vector<std::string> answers,
                               const Stopwords& stopwords = Stopwords::english()) {
  MrcExample ex;
  ex.id = std::move(id);
  ex.passage_text = std::move(passage);
  ex.query_text = std::move(query);
  ex.passage = analyze(ex.passage_text, Segment::kPassage, stopwords);
  ex.query = analyze(ex.query_text, Segment::kQuery, stopwords);
  ex.candidates = std::move(candidates);
  ex.answers = std::move(answers);
  validate_example(ex);
  return ex;
}

/// Training targets: candidate spans whose text matches a gold answer, or,
/// without a match among candidates, any passage span of up to 30 tokens
/// that does.
inline std::vector<Span> gold_spans(const MrcExample& ex) {
  std::vector<std::string> golds;
  for (const auto& a : ex.answers) golds.push_back(normalize_answer(a));
  auto is_gold = [&](const std::string& text) {
    return std::find(golds.begin(), golds.end(), normalize_answer(text)) != golds.end();
  };
  std::vector<Span> out;
  for (const Candidate& c : ex.candidates)
    if (is_gold(c.text)) out.push_back({c.start, c.end});
  if (!out.empty()) return out;
  for (std::size_t s = 0; s < ex.passage.size(); ++s)
    for (std::size_t t = s; t < ex.passage.size() && t < s + 30; ++t)
      if (is_gold(join_tokens(ex.passage, s, t))) out.push_back({s, t});
  return out;
}

struct Dataset {
  nlohmann::json header;  // null when the file has no header line
  std::vector<MrcExample> examples;
};

inline nlohmann::json example_to_json(const MrcExample& ex) {
  nlohmann::json cands = nlohmann::json::array();
  for (const Candidate& c : ex.candidates) cands.push_back({{"start", c.start}, {"end", c.end}, {"text", c.text}});
  return {{"id", ex.id},
          {"passage", ex.passage_text},
          {"query", ex.query_text},
          {"candidates", std::move(cands)},
          {"answers", ex.answers}};
}

/// JSON Lines; an optional first line {"format": "piecer-mrc", ...} carries
/// the generating config.
inline void write_dataset(std::ostream& out, const Dataset& data) {
  if (!data.header.is_null()) out << data.header.dump() << '\n';
  for (const auto& ex : data.examples) out << example_to_json(ex).dump() << '\n';
}

inline Dataset load_dataset(std::istream& in, const Stopwords& stopwords = Stopwords::english()) {
  Dataset data;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || std::all_of(line.begin(), line.end(), [](char c) { return std::isspace(static_cast<unsigned char>(c)); })) {
      continue;
    }
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(lineno, std::string("invalid JSON: ") + e.what());
    }
    if (j.is_object() && j.contains("format")) {
      if (!data.examples.empty() || !data.header.is_null()) throw ParseError(lineno, "header must be the first record");
      if (j["format"] != "piecer-mrc" || j.value("version", 0) != 1) {
        throw ParseError(lineno, "unsupported dataset format " + j["format"].dump());
      }
      data.header = std::move(j);
      continue;
    }
    const std::string id = j.is_object() && j.contains("id") && j["id"].is_string() ? j["id"].get<std::string>() : "?";
    try {
      std::vector<Candidate> cands;
      for (const auto& c : j.at("candidates")) {
        cands.push_back({c.at("start").get<std::size_t>(), c.at("end").get<std::size_t>(), c.at("text").get<std::string>()});
      }
      auto ex = make_example(j.at("id").get<std::string>(), j.at("passage").get<std::string>(),
                             j.at("query").get<std::string>(), std::move(cands),
                             j.at("answers").get<std::vector<std::string>>(), stopwords);
      data.examples.push_back(std::move(ex));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(lineno, "example '" + id + "': " + e.what());
    } catch (const ContractError& e) {
      throw ParseError(lineno, e.what());
    }
  }
  return data;
}

}  // namespace piecer
