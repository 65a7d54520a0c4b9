#pragma once

#include <algorithm>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "piecer/errors.hpp"
#include "piecer/text.hpp"

namespace piecer {

using EntityId = std::uint32_t;
using RelationId = std::uint32_t;

struct Triple {
  EntityId head;
  RelationId relation;
  EntityId tail;
  bool operator==(const Triple&) const = default;
};

/// Entity names with an underscore or space are multi-word.
inline bool is_unigram_name(std::string_view name) {
  return !name.empty() && name.find_first_of("_ ") == std::string_view::npos;
}

/// Triple store with lemma and connectivity indexes. Ids are dense and
/// assigned in first-appearance order. Connectivity ignores direction and
/// relation type.
class KnowledgeGraph {
 public:
  static constexpr int kFormatVersion = 1;

  EntityId intern_entity(const std::string& name) {
    auto [it, inserted] = entity_ids_.try_emplace(name, static_cast<EntityId>(entities_.size()));
    if (inserted) {
      entities_.push_back(name);
      adjacency_.emplace_back();
      if (is_unigram_name(name)) lemma_index_[lemmatize(name)].push_back(it->second);
    }
    return it->second;
  }

  RelationId intern_relation(const std::string& name) {
    auto [it, inserted] = relation_ids_.try_emplace(name, static_cast<RelationId>(relations_.size()));
    if (inserted) relations_.push_back(name);
    return it->second;
  }

  /// Returns false when the triple was already present.
  bool add_triple(const std::string& head, const std::string& relation, const std::string& tail) {
    const EntityId h = intern_entity(head);
    const RelationId r = intern_relation(relation);
    const EntityId t = intern_entity(tail);
    return add_triple(Triple{h, r, t});
  }

  bool add_triple(Triple tr) {
    check_entity(tr.head, "add_triple");
    check_entity(tr.tail, "add_triple");
    if (tr.relation >= relations_.size()) throw ContractError("add_triple: unknown relation id");
    if (!triple_keys_.insert(tr).second) return false;
    triples_.push_back(tr);
    link(tr.head, tr.tail);
    link(tr.tail, tr.head);
    return true;
  }

  /// Tab-separated head, relation, tail per line. Blank lines and lines
  /// starting with '#' are skipped.
  static KnowledgeGraph load_triples(std::istream& in) {
    KnowledgeGraph g;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty() || line[0] == '#') continue;
      if (std::all_of(line.begin(), line.end(), [](char c) { return c == ' ' || c == '\t'; })) continue;
      std::vector<std::string> fields;
      std::size_t start = 0;
      for (;;) {
        const std::size_t tab = line.find('\t', start);
        fields.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
        if (tab == std::string::npos) break;
        start = tab + 1;
      }
      if (fields.size() != 3) {
        throw ParseError(lineno, "expected 3 tab-separated fields, got " + std::to_string(fields.size()));
      }
      for (const auto& f : fields) {
        if (f.empty()) throw ParseError(lineno, "empty field");
      }
      g.add_triple(fields[0], fields[1], fields[2]);
    }
    if (g.triples_.empty()) g.warnings_.push_back("knowledge graph is empty");
    return g;
  }

  void write_triples(std::ostream& out) const {
    for (const Triple& t : triples_) {
      out << entities_[t.head] << '\t' << relations_[t.relation] << '\t' << entities_[t.tail] << '\n';
    }
  }

  nlohmann::json to_manifest() const {
    nlohmann::json triples = nlohmann::json::array();
    for (const Triple& t : triples_) triples.push_back({t.head, t.relation, t.tail});
    return {{"format", "piecer-kg"},
            {"version", kFormatVersion},
            {"entities", entities_},
            {"relations", relations_},
            {"triples", std::move(triples)}};
  }

  static KnowledgeGraph from_manifest(const nlohmann::json& j) {
    try {
      if (j.at("format") != "piecer-kg") throw FormatError("kg manifest: unexpected format tag");
      if (j.at("version").get<int>() != kFormatVersion) {
        throw FormatError("kg manifest: unsupported version " + j.at("version").dump());
      }
      KnowledgeGraph g;
      for (const auto& e : j.at("entities")) g.intern_entity(e.get<std::string>());
      for (const auto& r : j.at("relations")) g.intern_relation(r.get<std::string>());
      if (g.entities_.size() != j.at("entities").size() || g.relations_.size() != j.at("relations").size()) {
        throw FormatError("kg manifest: duplicate vocabulary entry");
      }
      for (const auto& t : j.at("triples")) {
        const Triple tr{t.at(0).get<EntityId>(), t.at(1).get<RelationId>(), t.at(2).get<EntityId>()};
        if (tr.head >= g.entities_.size() || tr.tail >= g.entities_.size() || tr.relation >= g.relations_.size()) {
          throw FormatError("kg manifest: triple references unknown id");
        }
        g.add_triple(tr);
      }
      return g;
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("kg manifest: ") + e.what());
    }
  }

  /// Unigram entities whose lemmatized name equals `lemma`, ascending ids.
  std::vector<EntityId> entities_by_lemma(std::string_view lemma) const {
    auto it = lemma_index_.find(std::string(lemma));
    if (it == lemma_index_.end()) return {};
    return it->second;
  }

  bool connected(EntityId a, EntityId b) const {
    check_entity(a, "connected");
    check_entity(b, "connected");
    const auto& adj = adjacency_[a];
    return std::binary_search(adj.begin(), adj.end(), b);
  }

  const std::vector<EntityId>& neighbors(EntityId a) const {
    check_entity(a, "neighbors");
    return adjacency_[a];
  }

  bool has_triple(const Triple& t) const { return triple_keys_.count(t) > 0; }

  std::optional<EntityId> entity_id(std::string_view name) const {
    auto it = entity_ids_.find(std::string(name));
    if (it == entity_ids_.end()) return std::nullopt;
    return it->second;
  }

  std::optional<RelationId> relation_id(std::string_view name) const {
    auto it = relation_ids_.find(std::string(name));
    if (it == relation_ids_.end()) return std::nullopt;
    return it->second;
  }

  const std::vector<std::string>& entities() const { return entities_; }
  const std::vector<std::string>& relations() const { return relations_; }
  const std::vector<Triple>& triples() const { return triples_; }
  const std::vector<std::string>& warnings() const { return warnings_; }
  std::size_t entity_count() const { return entities_.size(); }
  std::size_t relation_count() const { return relations_.size(); }
  bool empty() const { return triples_.empty(); }

 private:
  struct TripleHash {
    std::size_t operator()(const Triple& t) const noexcept {
      std::uint64_t h = t.head;
      h = h * 0x9E3779B97F4A7C15ULL + t.relation;
      h = h * 0x9E3779B97F4A7C15ULL + t.tail;
      return static_cast<std::size_t>(h ^ (h >> 29));
    }
  };

  void check_entity(EntityId id, const char* op) const {
    if (id >= entities_.size()) {
      throw ContractError(std::string(op) + ": entity id " + std::to_string(id) + " out of range");
    }
  }

  void link(EntityId a, EntityId b) {
    auto& adj = adjacency_[a];
    auto pos = std::lower_bound(adj.begin(), adj.end(), b);
    if (pos == adj.end() || *pos != b) adj.insert(pos, b);
  }

  std::vector<std::string> entities_;
  std::vector<std::string> relations_;
  std::unordered_map<std::string, EntityId> entity_ids_;
  std::unordered_map<std::string, RelationId> relation_ids_;
  std::vector<Triple> triples_;
  std::unordered_set<Triple, TripleHash> triple_keys_;
  std::unordered_map<std::string, std::vector<EntityId>> lemma_index_;
  std::vector<std::vector<EntityId>> adjacency_;
  std::vector<std::string> warnings_;
};

}  // namespace piecer
