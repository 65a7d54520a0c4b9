#include <gtest/gtest.h>

#include <fstream>

#include "piecer/rng.hpp"
#include "piecer/text.hpp"

using namespace piecer;

namespace {

std::vector<std::string> surfaces(const std::vector<Token>& tokens) {
  std::vector<std::string> out;
  for (const auto& t : tokens) out.push_back(t.surface);
  return out;
}

}  // namespace

TEST(Tokenize, DetachesTrailingPunctuation) {
  EXPECT_EQ(surfaces(tokenize("Tad Cummins,")), (std::vector<std::string>{"Tad", "Cummins", ","}));
}

TEST(Tokenize, EmptyAndSingle) {
  EXPECT_TRUE(tokenize("").empty());
  EXPECT_TRUE(tokenize("   \t\n").empty());
  EXPECT_EQ(surfaces(tokenize("X")), (std::vector<std::string>{"X"}));
}

TEST(Tokenize, LeadingAndInnerPunctuation) {
  // Inner characters stay attached; each edge character is its own token.
  EXPECT_EQ(surfaces(tokenize("(don't!) ok")),
            (std::vector<std::string>{"(", "don't", "!", ")", "ok"}));
  EXPECT_EQ(surfaces(tokenize("...")), (std::vector<std::string>{".", ".", "."}));
}

TEST(Tokenize, PlaceholderKeptWhole) {
  auto toks = tokenize("where @placeholder went.", Segment::kQuery);
  EXPECT_EQ(surfaces(toks), (std::vector<std::string>{"where", "@placeholder", "went", "."}));
  for (std::size_t i = 0; i < toks.size(); ++i) {
    EXPECT_EQ(toks[i].position, i);
    EXPECT_EQ(toks[i].segment, Segment::kQuery);
  }
}

TEST(Tokenize, PreservesCharacterOrder) {
  Rng rng(5);
  const std::string alphabet = "ab,.! ";
  for (int trial = 0; trial < 200; ++trial) {
    std::string s;
    for (int k = 0; k < 20; ++k) s += alphabet[rng.below(alphabet.size())];
    std::string joined, stripped;
    for (const auto& t : tokenize(s)) joined += t.surface;
    for (char c : s)
      if (c != ' ') stripped += c;
    EXPECT_EQ(joined, stripped) << s;
  }
}

TEST(Lemmatize, Examples) {
  EXPECT_EQ(lemmatize("arrested"), "arrest");
  EXPECT_EQ(lemmatize("dog"), "dog");
  EXPECT_EQ(lemmatize("Dogs"), "dog");
}

TEST(Lemmatize, SuffixRules) {
  EXPECT_EQ(lemmatize("cities"), "city");
  EXPECT_EQ(lemmatize("classes"), "class");
  EXPECT_EQ(lemmatize("boxes"), "box");
  EXPECT_EQ(lemmatize("churches"), "church");
  EXPECT_EQ(lemmatize("glass"), "glass");
  EXPECT_EQ(lemmatize("running"), "run");
  EXPECT_EQ(lemmatize("stopped"), "stop");
  EXPECT_EQ(lemmatize("carried"), "carry");
  EXPECT_EQ(lemmatize("walking"), "walk");
  EXPECT_EQ(lemmatize("taken"), "take");
  EXPECT_EQ(lemmatize("children"), "child");
  EXPECT_EQ(lemmatize("red"), "red");
  EXPECT_EQ(lemmatize("sing"), "sing");
}

TEST(Lemmatize, IdempotentOnRandomWords) {
  Rng rng(17);
  const std::string letters = "abcdeginorsyz";
  for (int trial = 0; trial < 20000; ++trial) {
    std::string w;
    const std::size_t n = 1 + rng.below(10);
    for (std::size_t k = 0; k < n; ++k) w += letters[rng.below(letters.size())];
    if (rng.coin()) w += std::vector<std::string>{"s", "es", "ies", "ing", "ed", "ings", "ied"}[rng.below(7)];
    const std::string once = lemmatize(w);
    EXPECT_EQ(lemmatize(once), once) << w;
  }
}

TEST(Lemmatize, ExceptionTargetsAreFixedPoints) {
  for (const auto& [from, to] : detail::lemma_exceptions()) EXPECT_EQ(lemmatize(to), to) << from;
}

TEST(Lemmatize, LowercaseNonEmpty) {
  EXPECT_EQ(lemmatize("ARRESTED"), "arrest");
  EXPECT_FALSE(lemmatize("Is").empty());
}

TEST(Stopwords, BundledFileMatchesBuiltIn) {
  std::ifstream in(std::string(PIECER_SOURCE_DIR) + "/data/stopwords.txt");
  ASSERT_TRUE(in);
  const auto loaded = Stopwords::load(in);
  EXPECT_EQ(loaded.words(), Stopwords::english().words());
}

TEST(Annotate, Flags) {
  auto toks = analyze("The dogs barked .", Segment::kPassage);
  ASSERT_EQ(toks.size(), 4u);
  EXPECT_TRUE(toks[0].is_stop);
  EXPECT_FALSE(toks[0].eligible());
  EXPECT_EQ(toks[1].lemma, "dog");
  EXPECT_EQ(toks[2].lemma, "bark");
  EXPECT_TRUE(toks[3].is_punct);
  EXPECT_FALSE(toks[3].is_stop);
}
