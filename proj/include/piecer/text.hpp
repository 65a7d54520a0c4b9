#pragma once

#include <algorithm>
#include <cctype>
#include <istream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

namespace piecer {

enum class Segment { kQuery, kPassage };

inline const char* segment_name(Segment s) { return s == Segment::kQuery ? "query" : "passage"; }

struct Token {
  std::string surface;
  std::string lemma;
  bool is_stop = false;
  bool is_punct = false;
  Segment segment = Segment::kPassage;
  std::size_t position = 0;

  /// Participates in the joint graph.
  bool eligible() const { return !is_stop && !is_punct; }
};

inline constexpr std::string_view kPlaceholder = "@placeholder";

inline bool is_punct_char(unsigned char c) { return c < 128 && std::ispunct(c); }

inline bool is_punct_token(std::string_view s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return is_punct_char(static_cast<unsigned char>(c)); });
}

inline std::string to_lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) {
    if (static_cast<unsigned char>(c) < 128) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  return out;
}

/// Whitespace split, then leading/trailing punctuation characters become
/// one token each. The query placeholder is kept whole.
inline std::vector<Token> tokenize(std::string_view text, Segment segment = Segment::kPassage) {
  std::vector<std::string> pieces;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) {
      std::string_view w = text.substr(i, j - i);
      if (w == kPlaceholder) {
        pieces.emplace_back(w);
      } else {
        std::size_t b = 0, e = w.size();
        while (b < e && is_punct_char(static_cast<unsigned char>(w[b]))) ++b;
        while (e > b && is_punct_char(static_cast<unsigned char>(w[e - 1]))) --e;
        for (std::size_t k = 0; k < b; ++k) pieces.emplace_back(1, w[k]);
        if (e > b) pieces.emplace_back(w.substr(b, e - b));
        for (std::size_t k = e; k < w.size(); ++k) pieces.emplace_back(1, w[k]);
      }
    }
    i = j;
  }
  std::vector<Token> out;
  out.reserve(pieces.size());
  for (auto& p : pieces) {
    Token t;
    t.surface = std::move(p);
    t.segment = segment;
    t.position = out.size();
    out.push_back(std::move(t));
  }
  return out;
}

namespace detail {

inline const std::unordered_map<std::string, std::string>& lemma_exceptions() {
  static const std::unordered_map<std::string, std::string> table = {
      {"am", "be"}, {"is", "be"}, {"are", "be"}, {"was", "be"}, {"were", "be"}, {"been", "be"},
      {"being", "be"}, {"has", "have"}, {"had", "have"}, {"having", "have"}, {"does", "do"},
      {"did", "do"}, {"done", "do"}, {"went", "go"}, {"gone", "go"}, {"goes", "go"},
      {"men", "man"}, {"women", "woman"}, {"children", "child"}, {"mice", "mouse"}, {"feet", "foot"},
      {"teeth", "tooth"}, {"geese", "goose"}, {"people", "person"}, {"took", "take"}, {"taken", "take"},
      {"ran", "run"}, {"ate", "eat"}, {"eaten", "eat"}, {"saw", "see"}, {"seen", "see"},
      {"came", "come"}, {"made", "make"}, {"said", "say"}, {"got", "get"}, {"gave", "give"},
      {"given", "give"}, {"found", "find"}, {"thought", "think"}, {"told", "tell"}, {"became", "become"},
      {"left", "leave"}, {"felt", "feel"}, {"brought", "bring"}, {"kept", "keep"}, {"held", "hold"},
      {"stood", "stand"}, {"heard", "hear"}, {"met", "meet"}, {"caught", "catch"}, {"bought", "buy"},
      {"sought", "seek"}, {"taught", "teach"}, {"wrote", "write"}, {"written", "write"}, {"spoke", "speak"},
      {"spoken", "speak"}, {"knew", "know"}, {"known", "know"}, {"began", "begin"}, {"begun", "begin"},
      {"fell", "fall"}, {"fallen", "fall"}, {"flew", "fly"}, {"flown", "fly"}, {"drove", "drive"},
      {"driven", "drive"}, {"rode", "ride"}, {"ridden", "ride"}, {"chose", "choose"}, {"chosen", "choose"},
      {"broke", "break"}, {"broken", "break"}, {"died", "die"}, {"dying", "die"}, {"lying", "lie"},
      {"tying", "tie"}, {"news", "news"}, {"series", "series"}, {"species", "species"},
      {"during", "during"}, {"nothing", "nothing"}, {"something", "something"}, {"anything", "anything"},
      {"everything", "everything"}, {"morning", "morning"}, {"evening", "evening"}, {"ceiling", "ceiling"},
      {"wedding", "wedding"}, {"building", "building"}, {"hundred", "hundred"}, {"kindred", "kindred"},
  };
  return table;
}

inline bool ends_with(std::string_view w, std::string_view suffix) {
  return w.size() >= suffix.size() && w.substr(w.size() - suffix.size()) == suffix;
}

inline bool has_vowel(std::string_view w) {
  return w.find_first_of("aeiouy") != std::string_view::npos;
}

inline bool is_consonant(char c) {
  return std::isalpha(static_cast<unsigned char>(c)) && std::string_view("aeiou").find(c) == std::string_view::npos;
}

// stopp -> stop, runn -> run; keeps -ll, -ss, -zz.
inline std::string undouble(std::string stem) {
  const std::size_t n = stem.size();
  if (n >= 2 && stem[n - 1] == stem[n - 2] && is_consonant(stem[n - 1]) &&
      std::string_view("lsz").find(stem[n - 1]) == std::string_view::npos) {
    stem.pop_back();
  }
  return stem;
}

// One application of the exception table or the first matching suffix rule.
inline std::string lemma_step(const std::string& w) {
  const auto& exc = lemma_exceptions();
  if (auto it = exc.find(w); it != exc.end()) return it->second;
  const std::size_t n = w.size();
  if (n <= 3) return w;
  if (ends_with(w, "ies") && n >= 5) return w.substr(0, n - 3) + "y";
  if (ends_with(w, "sses")) return w.substr(0, n - 2);
  if (ends_with(w, "xes") || ends_with(w, "ches") || ends_with(w, "shes") || ends_with(w, "zzes")) {
    return w.substr(0, n - 2);
  }
  if (ends_with(w, "ss") || ends_with(w, "us") || ends_with(w, "is")) return w;
  if (ends_with(w, "s")) return w.substr(0, n - 1);
  if (ends_with(w, "ing")) {
    const std::string stem = w.substr(0, n - 3);
    if (stem.size() >= 3 && has_vowel(stem)) return undouble(stem);
    return w;
  }
  if (ends_with(w, "ied") && n >= 5) return w.substr(0, n - 3) + "y";
  if (ends_with(w, "ed")) {
    const std::string stem = w.substr(0, n - 2);
    if (stem.size() >= 3 && has_vowel(stem)) return undouble(stem);
    return w;
  }
  return w;
}

}  // namespace detail

/// Rule-based lemmatizer: lowercase, then apply the exception table and
/// ordered suffix rules until a fixed point is reached, so the result is
/// always its own lemma.
inline std::string lemmatize(std::string_view surface) {
  std::string w = to_lower(surface);
  for (std::size_t guard = 0; guard < 32; ++guard) {
    std::string next = detail::lemma_step(w);
    if (next == w) break;
    w = std::move(next);
  }
  return w;
}

class Stopwords {
 public:
  Stopwords() = default;
  explicit Stopwords(std::unordered_set<std::string> words) : words_(std::move(words)) {}

  /// One word per line; blank lines and `#` comments ignored.
  static Stopwords load(std::istream& in) {
    std::unordered_set<std::string> words;
    std::string line;
    while (std::getline(in, line)) {
      while (!line.empty() && std::isspace(static_cast<unsigned char>(line.back()))) line.pop_back();
      std::size_t b = 0;
      while (b < line.size() && std::isspace(static_cast<unsigned char>(line[b]))) ++b;
      if (b == line.size() || line[b] == '#') continue;
      words.insert(to_lower(line.substr(b)));
    }
    return Stopwords(std::move(words));
  }

  static const Stopwords& english() {
    static const Stopwords list(std::unordered_set<std::string>{
        "a", "about", "above", "after", "again", "against", "all", "am", "an", "and", "any", "are", "as", "at",
        "be", "because", "been", "before", "being", "below", "between", "both", "but", "by", "can", "could",
        "did", "do", "does", "doing", "down", "during", "each", "few", "for", "from", "further", "had", "has",
        "have", "having", "he", "her", "here", "hers", "herself", "him", "himself", "his", "how", "i", "if",
        "in", "into", "is", "it", "its", "itself", "just", "me", "more", "most", "my", "myself", "no", "nor",
        "not", "now", "of", "off", "on", "once", "only", "or", "other", "our", "ours", "ourselves", "out",
        "over", "own", "same", "she", "should", "so", "some", "such", "than", "that", "the", "their",
        "theirs", "them", "themselves", "then", "there", "these", "they", "this", "those", "through", "to",
        "too", "under", "until", "up", "very", "was", "we", "were", "what", "when", "where", "which",
        "while", "who", "whom", "why", "will", "with", "would", "you", "your", "yours", "yourself",
        "yourselves"});
    return list;
  }

  bool contains(std::string_view word) const { return words_.count(to_lower(word)) > 0; }
  std::size_t size() const { return words_.size(); }
  const std::unordered_set<std::string>& words() const { return words_; }

 private:
  std::unordered_set<std::string> words_;
};

/// Fills lemma and stop/punct flags in place.
inline void annotate(std::vector<Token>& tokens, const Stopwords& stopwords = Stopwords::english()) {
  for (Token& t : tokens) {
    t.is_punct = is_punct_token(t.surface);
    t.is_stop = !t.is_punct && stopwords.contains(t.surface);
    t.lemma = t.is_punct ? t.surface : lemmatize(t.surface);
  }
}

inline std::vector<Token> analyze(std::string_view text, Segment segment,
                                  const Stopwords& stopwords = Stopwords::english()) {
  auto tokens = tokenize(text, segment);
  annotate(tokens, stopwords);
  return tokens;
}

}  // namespace piecer
