#pragma once

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "piecer/dataset.hpp"
#include "piecer/errors.hpp"
#include "piecer/kg.hpp"
#include "piecer/rng.hpp"
#include "piecer/text.hpp"

namespace piecer {

enum class SyntheticMode { kPattern, kKnowledgeHop };

inline const char* mode_name(SyntheticMode m) { return m == SyntheticMode::kPattern ? "pattern" : "knowledge-hop"; }

inline SyntheticMode parse_mode(const std::string& s) {
  if (s == "pattern") return SyntheticMode::kPattern;
  if (s == "knowledge-hop") return SyntheticMode::kKnowledgeHop;
  throw ContractError("unknown synthetic mode '" + s + "' (expected pattern or knowledge-hop)");
}

/// Passages are short clauses "the cue Name verb ." plus filler sentences.
/// The query "the X @placeholder verb ." names the answer clause through X:
/// in pattern mode X is the answer clause's cue itself; in knowledge-hop mode
/// X is a fresh word tied to that cue only by a KG triple.
struct SyntheticSpec {
  SyntheticMode mode = SyntheticMode::kKnowledgeHop;
  std::size_t vocab_size = 4000;  // pseudo-words available to the generator
  std::size_t passage_length = 24;
  std::size_t train_examples = 200;
  std::size_t dev_examples = 50;
  std::size_t candidates = 3;
  std::size_t names = 30;
  std::size_t surnames = 10;
  std::size_t verbs = 8;
  std::size_t fillers = 40;
  std::size_t cues = 30;  // pattern mode cue pool
  std::size_t distractor_triples = 60;
  std::uint64_t seed = 13;

  void validate() const {
    if (candidates < 2) throw ContractError("synthetic: candidates must be >= 2");
    if (names < candidates) throw ContractError("synthetic: need at least as many names as candidates");
    if (verbs < 1 || fillers < 2) throw ContractError("synthetic: need >= 1 verb and >= 2 fillers");
    if (mode == SyntheticMode::kPattern && cues < candidates) {
      throw ContractError("synthetic: pattern mode needs at least as many cues as candidates");
    }
  }

  /// Distinct pseudo-words the spec consumes.
  std::size_t words_needed() const {
    const std::size_t shared = names + surnames + verbs + fillers;
    if (mode == SyntheticMode::kPattern) return shared + cues;
    return shared + 2 * candidates * (train_examples + dev_examples);
  }
};

inline nlohmann::json to_json(const SyntheticSpec& s) {
  return {{"mode", mode_name(s.mode)},
          {"vocab_size", s.vocab_size},
          {"passage_length", s.passage_length},
          {"train_examples", s.train_examples},
          {"dev_examples", s.dev_examples},
          {"candidates", s.candidates},
          {"names", s.names},
          {"surnames", s.surnames},
          {"verbs", s.verbs},
          {"fillers", s.fillers},
          {"cues", s.cues},
          {"distractor_triples", s.distractor_triples},
          {"seed", s.seed}};
}

struct SyntheticData {
  Dataset train;
  Dataset dev;
  KnowledgeGraph kg;
};

namespace detail {

/// Consonant-vowel words that the lemmatizer leaves alone and that are not
/// stopwords, in a fixed order: all two-syllable words, then three.
inline std::vector<std::string> pseudo_words(std::size_t at_least) {
  static const std::string consonants = "bdfgklmnprtvz";
  static const std::string vowels = "aeiou";
  std::vector<std::string> syllables;
  for (char c : consonants)
    for (char v : vowels) syllables.push_back(std::string{c, v});
  const auto& stop = Stopwords::english();
  std::vector<std::string> out;
  auto keep = [&](const std::string& w) {
    if (lemmatize(w) == w && !stop.contains(w)) out.push_back(w);
  };
  for (const auto& a : syllables)
    for (const auto& b : syllables) keep(a + b);
  if (out.size() >= at_least) return out;
  for (const auto& a : syllables)
    for (const auto& b : syllables)
      for (const auto& c : syllables) keep(a + b + c);
  return out;
}

inline std::string capitalize(std::string w) {
  w[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(w[0])));
  return w;
}

}  // namespace detail

inline SyntheticData gen_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const std::size_t needed = spec.words_needed();
  if (needed > spec.vocab_size) {
    throw GenerationError("synthetic: spec needs " + std::to_string(needed) +
                          " distinct words but vocab_size is " + std::to_string(spec.vocab_size));
  }
  auto words = detail::pseudo_words(spec.vocab_size);
  if (words.size() < spec.vocab_size) {
    throw GenerationError("synthetic: only " + std::to_string(words.size()) + " pseudo-words exist, vocab_size " +
                          std::to_string(spec.vocab_size) + " requested");
  }
  Rng rng(spec.seed);
  rng.shuffle(words);
  words.resize(spec.vocab_size);

  std::size_t next = 0;
  auto take = [&](std::size_t n) {
    std::vector<std::string> out(words.begin() + static_cast<std::ptrdiff_t>(next),
                                 words.begin() + static_cast<std::ptrdiff_t>(next + n));
    next += n;
    return out;
  };
  auto names = take(spec.names);
  for (auto& n : names) n = detail::capitalize(n);
  auto surnames = take(spec.surnames);
  for (auto& n : surnames) n = detail::capitalize(n);
  const auto verbs = take(spec.verbs);
  const auto fillers = take(spec.fillers);
  const auto cues = spec.mode == SyntheticMode::kPattern ? take(spec.cues) : std::vector<std::string>{};

  SyntheticData data;
  const std::vector<std::string> bridge_relations = {"Synonym", "SimilarTo"};
  const std::vector<std::string> distractor_relations = {"RelatedTo", "AtLocation", "HasA"};

  // Distractors link fillers, verbs and (pattern mode) cues among themselves.
  std::vector<std::string> distractor_pool = fillers;
  distractor_pool.insert(distractor_pool.end(), verbs.begin(), verbs.end());
  distractor_pool.insert(distractor_pool.end(), cues.begin(), cues.end());
  for (std::size_t k = 0; k < spec.distractor_triples; ++k) {
    const auto& h = distractor_pool[rng.below(distractor_pool.size())];
    std::string t = h;
    while (t == h) t = distractor_pool[rng.below(distractor_pool.size())];
    data.kg.add_triple(h, distractor_relations[rng.below(distractor_relations.size())], t);
  }

  auto make_split = [&](const std::string& split, std::size_t count) {
    Dataset out;
    // Answer slots are balanced across the split so position carries no signal.
    std::vector<std::size_t> slots(count);
    for (std::size_t e = 0; e < count; ++e) slots[e] = e % spec.candidates;
    rng.shuffle(slots);
    for (std::size_t e = 0; e < count; ++e) {
      const std::string& verb = verbs[rng.below(verbs.size())];
      const std::size_t answer = slots[e];
      auto order = rng.permutation(names.size());
      std::vector<std::string> who(spec.candidates), clue(spec.candidates);
      std::string query_word;
      for (std::size_t c = 0; c < spec.candidates; ++c) {
        who[c] = names[order[c]];
        if (spec.surnames > 0 && rng.uniform() < 0.3) who[c] += " " + surnames[rng.below(surnames.size())];
      }
      if (spec.mode == SyntheticMode::kPattern) {
        auto pick = rng.permutation(cues.size());
        for (std::size_t c = 0; c < spec.candidates; ++c) clue[c] = cues[pick[c]];
        query_word = clue[answer];
      } else {
        for (std::size_t c = 0; c < spec.candidates; ++c) {
          const auto pair = take(2);
          clue[c] = pair[0];
          const auto& rel = bridge_relations[rng.below(bridge_relations.size())];
          if (rng.coin()) {
            data.kg.add_triple(pair[1], rel, pair[0]);
          } else {
            data.kg.add_triple(pair[0], rel, pair[1]);
          }
          if (c == answer) query_word = pair[1];
        }
      }
      // Sentences: one clause per candidate, fillers interleaved until the
      // passage reaches the target length.
      std::vector<std::vector<std::string>> sentences;
      std::vector<int> owner;  // candidate index per sentence, -1 for filler
      for (std::size_t c = 0; c < spec.candidates; ++c) {
        std::vector<std::string> s{"the", clue[c]};
        const std::string& name_text = who[c];
        for (std::size_t p = 0, q; p < name_text.size(); p = q + 1) {
          q = name_text.find(' ', p);
          if (q == std::string::npos) q = name_text.size();
          s.push_back(name_text.substr(p, q - p));
        }
        s.insert(s.end(), {verb, "."});
        sentences.push_back(std::move(s));
        owner.push_back(static_cast<int>(c));
      }
      std::size_t length = 0;
      for (const auto& s : sentences) length += s.size();
      while (length < spec.passage_length) {
        const std::size_t a = rng.below(fillers.size());
        std::size_t b = rng.below(fillers.size() - 1);
        if (b >= a) ++b;
        const std::size_t at = rng.below(sentences.size() + 1);
        sentences.insert(sentences.begin() + static_cast<std::ptrdiff_t>(at), {fillers[a], fillers[b], "."});
        owner.insert(owner.begin() + static_cast<std::ptrdiff_t>(at), -1);
        length += 3;
      }
      std::string passage;
      std::vector<Candidate> candidates(spec.candidates);
      std::size_t pos = 0;
      for (std::size_t si = 0; si < sentences.size(); ++si) {
        if (owner[si] >= 0) {
          const auto c = static_cast<std::size_t>(owner[si]);
          const std::size_t span = who[c].find(' ') == std::string::npos ? 1 : 2;
          candidates[c] = {pos + 2, pos + span + 1, who[c]};
        }
        for (const auto& w : sentences[si]) {
          if (!passage.empty()) passage.push_back(' ');
          passage += w;
          ++pos;
        }
      }
      std::sort(candidates.begin(), candidates.end(),
                [](const Candidate& x, const Candidate& y) { return x.start < y.start; });
      const std::string id = split + "-" + std::to_string(e);
      out.examples.push_back(make_example(id, passage, "the " + query_word + " @placeholder " + verb + " .",
                                          std::move(candidates), {who[answer]}));
    }
    return out;
  };
  data.train = make_split("train", spec.train_examples);
  data.dev = make_split("dev", spec.dev_examples);
  const nlohmann::json header = {{"format", "piecer-mrc"}, {"version", 1}, {"config", to_json(spec)}};
  data.train.header = header;
  data.train.header["split"] = "train";
  data.dev.header = header;
  data.dev.header["split"] = "dev";
  return data;
}

/// Brute-force audit of a generated set, using only the examples and the KG.
/// A candidate's clause is the sentence (between "." tokens) that holds it.
struct SyntheticAudit {
  std::size_t examples = 0;
  std::size_t violations = 0;
  std::string first_violation;
  double lexical_em = 0.0;  // EM of a matcher that picks the clause sharing most query lemmas
};

/// [lo, hi) of the sentence around token `at`.
inline std::pair<std::size_t, std::size_t> sentence_of(const std::vector<Token>& tokens, std::size_t at) {
  std::size_t lo = at, hi = at;
  while (lo > 0 && tokens[lo - 1].surface != ".") --lo;
  while (hi < tokens.size() && tokens[hi].surface != ".") ++hi;
  return {lo, hi};
}

inline SyntheticAudit audit_synthetic(const std::vector<MrcExample>& examples, const KnowledgeGraph& kg,
                                      SyntheticMode mode) {
  std::set<std::pair<std::string, std::string>> linked;
  for (const Triple& t : kg.triples()) {
    const auto& h = kg.entities()[t.head];
    const auto& tl = kg.entities()[t.tail];
    linked.insert({h, tl});
    linked.insert({tl, h});
  }
  std::set<std::string> passage_lemmas;
  for (const auto& ex : examples)
    for (const auto& t : ex.passage) passage_lemmas.insert(t.lemma);

  SyntheticAudit audit;
  std::size_t lexical_hits = 0;
  auto violate = [&](const MrcExample& ex, const std::string& what) {
    if (audit.violations++ == 0) audit.first_violation = ex.id + ": " + what;
  };
  for (const auto& ex : examples) {
    ++audit.examples;
    std::vector<std::string> query;
    for (const auto& t : ex.query)
      if (t.eligible() && t.surface != kPlaceholder) query.push_back(t.lemma);
    std::vector<std::size_t> overlap, links;
    std::size_t gold = ex.candidates.size();
    for (std::size_t c = 0; c < ex.candidates.size(); ++c) {
      const auto& cand = ex.candidates[c];
      if (normalize_answer(cand.text) == normalize_answer(ex.answers[0])) gold = c;
      std::set<std::string> clause;
      const auto [lo, hi] = sentence_of(ex.passage, cand.start);
      for (std::size_t i = lo; i < hi; ++i)
        if (ex.passage[i].eligible()) clause.insert(ex.passage[i].lemma);
      std::size_t o = 0, l = 0;
      for (const auto& q : query) {
        o += clause.count(q);
        for (const auto& w : clause) l += w != q && linked.count({q, w});
      }
      overlap.push_back(o);
      links.push_back(l);
    }
    if (gold == ex.candidates.size()) {
      violate(ex, "no candidate matches the answer");
      continue;
    }
    const auto best = static_cast<std::size_t>(std::max_element(overlap.begin(), overlap.end()) - overlap.begin());
    lexical_hits += best == gold;
    for (std::size_t c = 0; c < ex.candidates.size(); ++c) {
      if (mode == SyntheticMode::kKnowledgeHop) {
        if (overlap[c] != overlap[gold]) violate(ex, "lexical overlap differs between candidates");
        if (c == gold && links[c] == 0) violate(ex, "answer clause has no KG link to the query");
        if (c != gold && links[c] != 0) violate(ex, "distractor clause is KG-linked to the query");
      } else if (c != gold && overlap[c] >= overlap[gold]) {
        violate(ex, "answer clause does not have the largest lexical overlap");
      }
    }
    if (mode == SyntheticMode::kKnowledgeHop) {
      // Bridge words (query words linked into the answer clause) must never
      // appear in any passage.
      const auto [lo, hi] = sentence_of(ex.passage, ex.candidates[gold].start);
      for (const auto& q : query) {
        bool bridge = false;
        for (std::size_t i = lo; i < hi; ++i)
          bridge = bridge || (ex.passage[i].lemma != q && linked.count({q, ex.passage[i].lemma}));
        if (bridge && passage_lemmas.count(q)) violate(ex, "bridge word '" + q + "' occurs in a passage");
      }
    }
  }
  audit.lexical_em = audit.examples ? static_cast<double>(lexical_hits) / static_cast<double>(audit.examples) : 0.0;
  return audit;
}

}  // namespace piecer
