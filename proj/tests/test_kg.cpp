#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "piecer/kg.hpp"
#include "piecer/rng.hpp"

using namespace piecer;

namespace {

KnowledgeGraph from_text(const std::string& s) {
  std::istringstream in(s);
  return KnowledgeGraph::load_triples(in);
}

}  // namespace

TEST(LoadTriples, CountsDistinct) {
  auto g = from_text("a\tr\tb\nb\tr\tc\na\ts\tc\n");
  EXPECT_EQ(g.triples().size(), 3u);
  EXPECT_EQ(g.entities(), (std::vector<std::string>{"a", "b", "c"}));
  EXPECT_EQ(g.relations(), (std::vector<std::string>{"r", "s"}));
}

TEST(LoadTriples, Deduplicates) {
  auto g = from_text("a\tr\tb\na\tr\tb\n");
  EXPECT_EQ(g.triples().size(), 1u);
}

TEST(LoadTriples, SymmetricPair) {
  auto g = from_text("dog\tRelatedTo\tcanine\n");
  const auto dog = *g.entity_id("dog"), canine = *g.entity_id("canine");
  EXPECT_TRUE(g.connected(dog, canine));
  EXPECT_TRUE(g.connected(canine, dog));
}

TEST(LoadTriples, CommentsAndBlankLines) {
  auto g = from_text("# header\n\na\tr\tb\r\n");
  EXPECT_EQ(g.triples().size(), 1u);
  EXPECT_EQ(g.entities()[1], "b");
}

TEST(LoadTriples, MalformedLineReportsNumber) {
  try {
    from_text("a\tr\tb\n# fine\na r b\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
  }
  EXPECT_THROW(from_text("a\t\tb\n"), ParseError);
}

TEST(LoadTriples, EmptyIsValidWithWarning) {
  auto g = from_text("");
  EXPECT_TRUE(g.empty());
  ASSERT_EQ(g.warnings().size(), 1u);
}

TEST(EntitiesByLemma, UnigramOnly) {
  KnowledgeGraph g;
  g.add_triple("dog", "r", "dogs");
  g.add_triple("dog_house", "r", "dog");
  auto ids = g.entities_by_lemma("dog");
  std::set<std::string> names;
  for (auto id : ids) names.insert(g.entities()[id]);
  EXPECT_EQ(names, (std::set<std::string>{"dog", "dogs"}));
  EXPECT_TRUE(g.entities_by_lemma("cat").empty());
  EXPECT_EQ(g.entities_by_lemma("dog_house").size(), 0u);
}

TEST(EntitiesByLemma, Singleton) {
  auto g = from_text("arrest\tSynonym\tcustody\n");
  EXPECT_EQ(g.entities_by_lemma("custody"), (std::vector<EntityId>{1}));
}

TEST(Connected, SelfWithoutSelfTriple) {
  auto g = from_text("a\tr\tb\n");
  EXPECT_FALSE(g.connected(0, 0));
  auto h = from_text("a\tr\ta\n");
  EXPECT_TRUE(h.connected(0, 0));
}

TEST(Connected, InvalidIdIsContractError) {
  auto g = from_text("a\tr\tb\n");
  EXPECT_THROW(g.connected(0, 7), ContractError);
  EXPECT_THROW(g.neighbors(2), ContractError);
}

TEST(Neighbors, StarAndIsolated) {
  KnowledgeGraph g;
  for (const char* leaf : {"l1", "l2", "l3"}) g.add_triple("center", "r", leaf);
  g.intern_entity("alone");
  const auto& nb = g.neighbors(*g.entity_id("center"));
  EXPECT_EQ(nb.size(), 3u);
  EXPECT_TRUE(g.neighbors(*g.entity_id("alone")).empty());
}

TEST(Neighbors, MatchesBruteForceOnRandomGraph) {
  Rng rng(20);
  KnowledgeGraph g;
  for (int i = 0; i < 20; ++i) g.intern_entity("e" + std::to_string(i));
  for (int k = 0; k < 60; ++k) {
    g.add_triple("e" + std::to_string(rng.below(20)), "r" + std::to_string(rng.below(3)),
                 "e" + std::to_string(rng.below(20)));
  }
  for (EntityId a = 0; a < 20; ++a) {
    std::set<EntityId> oracle;
    for (const Triple& t : g.triples()) {
      if (t.head == a) oracle.insert(t.tail);
      if (t.tail == a) oracle.insert(t.head);
    }
    const auto& nb = g.neighbors(a);
    EXPECT_EQ(std::set<EntityId>(nb.begin(), nb.end()), oracle);
    for (EntityId b = 0; b < 20; ++b) {
      EXPECT_EQ(g.connected(a, b), oracle.count(b) > 0);
      EXPECT_EQ(g.connected(a, b), g.connected(b, a));
    }
  }
}

TEST(Manifest, RoundTripKeepsIdsAndIndexes) {
  std::ifstream in(std::string(PIECER_SOURCE_DIR) + "/data/kg_toy.tsv");
  ASSERT_TRUE(in);
  auto g = KnowledgeGraph::load_triples(in);
  EXPECT_EQ(g.entity_count(), 20u);
  EXPECT_EQ(g.triples().size(), 50u);
  auto back = KnowledgeGraph::from_manifest(nlohmann::json::parse(g.to_manifest().dump()));
  EXPECT_EQ(back.entities(), g.entities());
  EXPECT_EQ(back.relations(), g.relations());
  EXPECT_EQ(back.triples(), g.triples());
  for (EntityId e = 0; e < g.entity_count(); ++e) {
    EXPECT_EQ(back.neighbors(e), g.neighbors(e));
    EXPECT_EQ(back.entities_by_lemma(g.entities()[e]), g.entities_by_lemma(g.entities()[e]));
  }
  std::ostringstream a, b;
  g.write_triples(a);
  back.write_triples(b);
  EXPECT_EQ(a.str(), b.str());
}

TEST(Manifest, RejectsBadVersion) {
  auto j = from_text("a\tr\tb\n").to_manifest();
  j["version"] = 99;
  EXPECT_THROW(KnowledgeGraph::from_manifest(j), FormatError);
  j["version"] = 1;
  j["triples"] = nlohmann::json::array({nlohmann::json::array({0, 0, 5})});
  EXPECT_THROW(KnowledgeGraph::from_manifest(j), FormatError);
}
