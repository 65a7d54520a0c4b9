#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "piecer/kg.hpp"
#include "piecer/text.hpp"

namespace piecer {

enum class EdgeCategory : std::uint8_t { kKnowledge = 0, kCoreference = 1, kSelfLoop = 2 };

inline const char* category_name(EdgeCategory c) {
  switch (c) {
    case EdgeCategory::kKnowledge: return "knowledge";
    case EdgeCategory::kCoreference: return "coreference";
    case EdgeCategory::kSelfLoop: return "self-loop";
  }
  return "unknown";
}

struct Edge {
  std::size_t from;
  std::size_t to;
  EdgeCategory category;
  auto operator<=>(const Edge&) const = default;
};

/// Which edge categories message passing may use.
struct EdgeMask {
  bool knowledge = true;
  bool coreference = true;
  bool self_loop = true;

  bool allows(EdgeCategory c) const {
    switch (c) {
      case EdgeCategory::kKnowledge: return knowledge;
      case EdgeCategory::kCoreference: return coreference;
      case EdgeCategory::kSelfLoop: return self_loop;
    }
    return false;
  }
};

/// Nodes are the query tokens followed by the passage tokens. Knowledge and
/// coreference edges appear in both directions; self-loops once.
class JointGraph {
 public:
  JointGraph() = default;
  JointGraph(std::vector<Token> nodes, std::size_t query_count, std::vector<Edge> edges)
      : nodes_(std::move(nodes)), query_count_(query_count), edges_(std::move(edges)) {
    std::sort(edges_.begin(), edges_.end());
    edges_.erase(std::unique(edges_.begin(), edges_.end()), edges_.end());
  }

  std::size_t node_count() const { return nodes_.size(); }
  std::size_t query_count() const { return query_count_; }
  std::size_t passage_count() const { return nodes_.size() - query_count_; }
  const std::vector<Token>& nodes() const { return nodes_; }
  const std::vector<Edge>& edges() const { return edges_; }

  /// Sorted, de-duplicated neighbor ids of node i under the mask.
  std::vector<std::size_t> neighbors(std::size_t i, const EdgeMask& mask = {}) const {
    std::vector<std::size_t> out;
    for (const Edge& e : edges_)
      if (e.from == i && mask.allows(e.category)) out.push_back(e.to);
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
  }

  /// Row-major n x n adjacency (1 where j is in N(i)).
  std::vector<std::uint8_t> adjacency(const EdgeMask& mask = {}) const {
    const std::size_t n = nodes_.size();
    std::vector<std::uint8_t> adj(n * n, 0);
    for (const Edge& e : edges_)
      if (mask.allows(e.category)) adj[e.from * n + e.to] = 1;
    return adj;
  }

  JointGraph filtered(const EdgeMask& mask) const {
    std::vector<Edge> kept;
    for (const Edge& e : edges_)
      if (mask.allows(e.category)) kept.push_back(e);
    return JointGraph(nodes_, query_count_, std::move(kept));
  }

  nlohmann::json to_json() const {
    nlohmann::json nodes = nlohmann::json::array();
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      const Token& t = nodes_[i];
      nodes.push_back({{"index", i},
                       {"segment", segment_name(t.segment)},
                       {"position", t.position},
                       {"surface", t.surface},
                       {"lemma", t.lemma},
                       {"stop", t.is_stop},
                       {"punct", t.is_punct}});
    }
    nlohmann::json edges = nlohmann::json::array();
    for (const Edge& e : edges_) edges.push_back({e.from, e.to, category_name(e.category)});
    return {{"query_count", query_count_}, {"nodes", std::move(nodes)}, {"edges", std::move(edges)}};
  }

 private:
  std::vector<Token> nodes_;
  std::size_t query_count_ = 0;
  std::vector<Edge> edges_;
};

/// Builds the joint query-passage graph:
///  - knowledge edge between two eligible tokens when their lemma-linked
///    entity sets contain two distinct entities connected in the KG;
///  - coreference edge between two eligible tokens with equal lemma
///    (within and across segments);
///  - a self-loop on every eligible token.
/// Stopwords and punctuation get no edges at all.
inline JointGraph build_joint_graph(const std::vector<Token>& query, const std::vector<Token>& passage,
                                    const KnowledgeGraph& g) {
  std::vector<Token> nodes;
  nodes.reserve(query.size() + passage.size());
  for (Token t : query) {
    t.segment = Segment::kQuery;
    nodes.push_back(std::move(t));
  }
  for (Token t : passage) {
    t.segment = Segment::kPassage;
    nodes.push_back(std::move(t));
  }
  const std::size_t n = nodes.size();
  std::vector<std::vector<EntityId>> linked(n);
  for (std::size_t i = 0; i < n; ++i)
    if (nodes[i].eligible()) linked[i] = g.entities_by_lemma(nodes[i].lemma);

  std::vector<Edge> edges;
  for (std::size_t i = 0; i < n; ++i) {
    if (!nodes[i].eligible()) continue;
    edges.push_back({i, i, EdgeCategory::kSelfLoop});
    for (std::size_t j = i + 1; j < n; ++j) {
      if (!nodes[j].eligible()) continue;
      if (nodes[i].lemma == nodes[j].lemma) {
        edges.push_back({i, j, EdgeCategory::kCoreference});
        edges.push_back({j, i, EdgeCategory::kCoreference});
      }
      bool knowledge = false;
      for (EntityId a : linked[i]) {
        for (EntityId b : linked[j]) {
          if (a != b && g.connected(a, b)) {
            knowledge = true;
            break;
          }
        }
        if (knowledge) break;
      }
      if (knowledge) {
        edges.push_back({i, j, EdgeCategory::kKnowledge});
        edges.push_back({j, i, EdgeCategory::kKnowledge});
      }
    }
  }
  return JointGraph(std::move(nodes), query.size(), std::move(edges));
}

}  // namespace piecer
