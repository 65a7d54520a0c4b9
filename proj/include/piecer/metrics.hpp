#pragma once

#include <algorithm>
#include <cctype>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "piecer/errors.hpp"

namespace piecer {

/// Lowercase, drop ASCII punctuation, drop the articles a/an/the, collapse
/// whitespace.
inline std::string normalize_answer(std::string_view text) {
  std::string s;
  s.reserve(text.size());
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (c < 128 && std::ispunct(c)) continue;
    s.push_back(c < 128 ? static_cast<char>(std::tolower(c)) : ch);
  }
  std::istringstream in(s);
  std::string word, out;
  while (in >> word) {
    if (word == "a" || word == "an" || word == "the") continue;
    if (!out.empty()) out.push_back(' ');
    out += word;
  }
  return out;
}

inline std::vector<std::string> answer_tokens(std::string_view text) {
  std::istringstream in(normalize_answer(text));
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

struct EmF1 {
  double em = 0.0;
  double f1 = 0.0;
};

/// Bag-of-tokens F1 for one gold. Two empty token lists count as a full
/// match, so em == 1 always implies f1 == 1.
inline double token_f1(const std::vector<std::string>& pred, const std::vector<std::string>& gold) {
  if (pred.empty() || gold.empty()) return pred == gold ? 1.0 : 0.0;
  std::map<std::string, int> counts;
  for (const auto& g : gold) ++counts[g];
  int same = 0;
  for (const auto& p : pred) {
    auto it = counts.find(p);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++same;
    }
  }
  if (same == 0) return 0.0;
  const double precision = static_cast<double>(same) / static_cast<double>(pred.size());
  const double recall = static_cast<double>(same) / static_cast<double>(gold.size());
  return 2.0 * precision * recall / (precision + recall);
}

/// Max over golds of exact match and token F1 on normalized text.
inline EmF1 em_f1(std::string_view prediction, const std::vector<std::string>& golds) {
  if (golds.empty()) throw ContractError("em_f1: at least one gold answer is required");
  const auto pred = answer_tokens(prediction);
  EmF1 best;
  for (const auto& g : golds) {
    const auto gold = answer_tokens(g);
    best.em = std::max(best.em, pred == gold ? 1.0 : 0.0);
    best.f1 = std::max(best.f1, token_f1(pred, gold));
  }
  return best;
}

}  // namespace piecer
