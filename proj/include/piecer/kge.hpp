#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "piecer/autograd.hpp"
#include "piecer/binary_io.hpp"
#include "piecer/errors.hpp"
#include "piecer/kg.hpp"
#include "piecer/optim.hpp"
#include "piecer/rng.hpp"

namespace piecer {

enum class KgeMethod : std::uint8_t { kTransE = 0, kDistMult = 1 };

inline const char* method_name(KgeMethod m) { return m == KgeMethod::kTransE ? "transe" : "distmult"; }

inline KgeMethod parse_method(const std::string& s) {
  if (s == "transe") return KgeMethod::kTransE;
  if (s == "distmult") return KgeMethod::kDistMult;
  throw ContractError("unknown KGE method '" + s + "' (expected transe or distmult)");
}

struct KgeConfig {
  KgeMethod method = KgeMethod::kTransE;
  std::size_t dim = 100;
  std::size_t epochs = 10000;
  double learning_rate = 1e-5;
  double margin = 1.0;
  std::size_t negatives = 1;
  std::size_t batch_size = 0;  // 0: whole graph per step
  std::size_t negative_refresh = 1;  // epochs between redraws of the negative pool
  std::uint64_t seed = 0;

  void validate() const {
    if (dim < 1) throw ContractError("kge: dim must be >= 1");
    if (epochs < 1) throw ContractError("kge: epochs must be >= 1");
    if (!(margin > 0.0)) throw ContractError("kge: margin must be > 0");
    if (negatives < 1) throw ContractError("kge: negatives must be >= 1");
    if (negative_refresh < 1) throw ContractError("kge: negative_refresh must be >= 1");
    if (!(learning_rate >= 0.0)) throw ContractError("kge: learning rate must be >= 0");
  }
};

struct EntityEmbeddingTable {
  static constexpr std::uint32_t kFormatVersion = 1;

  KgeMethod method = KgeMethod::kTransE;
  std::size_t dim = 0;
  std::size_t epochs = 0;
  std::vector<std::string> entities;
  std::vector<std::string> relations;
  std::vector<double> entity_vectors;    // entities.size() x dim
  std::vector<double> relation_vectors;  // relations.size() x dim
  std::string config;                    // effective run config echoed into the file header

  std::span<const double> entity(std::size_t i) const { return {entity_vectors.data() + i * dim, dim}; }
  std::span<double> entity(std::size_t i) { return {entity_vectors.data() + i * dim, dim}; }
  std::span<const double> relation(std::size_t i) const { return {relation_vectors.data() + i * dim, dim}; }

  bool operator==(const EntityEmbeddingTable&) const = default;
};

inline void check_dims(std::span<const double> h, std::span<const double> r, std::span<const double> t,
                       const char* op) {
  if (h.size() != r.size() || r.size() != t.size()) {
    throw ContractError(std::string(op) + ": dimension mismatch (" + std::to_string(h.size()) + ", " +
                        std::to_string(r.size()) + ", " + std::to_string(t.size()) + ")");
  }
}

/// ||h + r - t||_2; lower is better.
inline double score_transe(std::span<const double> h, std::span<const double> r, std::span<const double> t) {
  check_dims(h, r, t, "score_transe");
  double s = 0.0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    const double d = h[i] + r[i] - t[i];
    s += d * d;
  }
  return std::sqrt(s);
}

/// sum_i h_i r_i t_i; higher is better.
inline double score_distmult(std::span<const double> h, std::span<const double> r, std::span<const double> t) {
  check_dims(h, r, t, "score_distmult");
  double s = 0.0;
  // h*t first: swapping h and t then gives a bitwise identical score.
  for (std::size_t i = 0; i < h.size(); ++i) s += r[i] * (h[i] * t[i]);
  return s;
}

inline double transe_margin_loss(double d_pos, double d_neg, double margin) {
  return std::max(0.0, margin + d_pos - d_neg);
}

struct Corruption {
  Triple triple;
  bool head_replaced;
};

/// One fair coin picks the side (head or tail); that side is resampled with
/// a uniform entity until the corruption is not a true triple. After 100
/// misses the other side gets 100 attempts before giving up.
inline Corruption negative_sample(const Triple& triple, const KnowledgeGraph& g, Rng& rng) {
  if (!g.has_triple(triple)) throw ContractError("negative_sample: triple not in graph");
  const std::uint64_t n = g.entity_count();
  const bool first = rng.coin();
  for (bool head : {first, !first}) {
    for (int attempt = 0; attempt < 100; ++attempt) {
      Corruption c{triple, head};
      const auto e = static_cast<EntityId>(rng.below(n));
      if (head) {
        c.triple.head = e;
      } else {
        c.triple.tail = e;
      }
      if (!g.has_triple(c.triple)) return c;
    }
  }
  throw SamplingExhaustedError("negative_sample: no corruption outside the graph after 100 attempts per side");
}

namespace detail {

inline void normalize_rows(std::vector<double>& v, std::size_t dim) {
  for (std::size_t i = 0; i + dim <= v.size(); i += dim) {
    double n = 0.0;
    for (std::size_t k = 0; k < dim; ++k) n += v[i + k] * v[i + k];
    n = std::sqrt(n);
    if (n > 0.0)
      for (std::size_t k = 0; k < dim; ++k) v[i + k] /= n;
  }
}

}  // namespace detail

/// Seeded starting point of train_kge: uniform(-6/sqrt(d), 6/sqrt(d)),
/// with TransE entity and relation vectors normalized to unit length.
inline EntityEmbeddingTable init_table(const KnowledgeGraph& g, const KgeConfig& cfg) {
  cfg.validate();
  EntityEmbeddingTable table;
  table.method = cfg.method;
  table.dim = cfg.dim;
  table.entities = g.entities();
  table.relations = g.relations();
  Rng rng(cfg.seed);
  const double bound = 6.0 / std::sqrt(static_cast<double>(cfg.dim));
  table.entity_vectors.resize(g.entity_count() * cfg.dim);
  table.relation_vectors.resize(g.relation_count() * cfg.dim);
  for (double& x : table.entity_vectors) x = rng.uniform(-bound, bound);
  for (double& x : table.relation_vectors) x = rng.uniform(-bound, bound);
  if (cfg.method == KgeMethod::kTransE) {
    detail::normalize_rows(table.entity_vectors, cfg.dim);
    detail::normalize_rows(table.relation_vectors, cfg.dim);
  }
  return table;
}

/// TransE: margin ranking loss max(0, margin + d_pos - d_neg), entity
/// vectors renormalized to unit length after every epoch.
/// DistMult: logistic loss softplus(-s_pos) + softplus(s_neg).
/// Optimizer is Adam (AdamW with zero weight decay). Negatives come from a
/// pool of `negatives` corruptions per triple, redrawn every
/// `negative_refresh` epochs.
inline EntityEmbeddingTable train_kge(const KnowledgeGraph& g, const KgeConfig& cfg,
                                      std::vector<double>* epoch_losses = nullptr) {
  if (g.empty()) throw ContractError("train_kge: knowledge graph has no triples");
  EntityEmbeddingTable table = init_table(g, cfg);
  const std::size_t d = cfg.dim;
  Parameter ent("entities", Tensor({g.entity_count(), d}, table.entity_vectors));
  Parameter rel("relations", Tensor({g.relation_count(), d}, table.relation_vectors));
  AdamW opt({&ent, &rel}, AdamWConfig{0.9, 0.999, 1e-8, 0.0});
  // Sampling stream is decoupled from the initialization stream.
  Rng rng(cfg.seed ^ 0x5DEECE66DULL);

  const auto& triples = g.triples();
  const std::size_t batch = cfg.batch_size == 0 ? triples.size() : cfg.batch_size;
  std::vector<double> diff(d);

  std::vector<Triple> pool(triples.size() * cfg.negatives);
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    if ((epoch - 1) % cfg.negative_refresh == 0) {
      for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = negative_sample(triples[i / cfg.negatives], g, rng).triple;
    }
    std::vector<std::size_t> order = rng.permutation(triples.size());
    double epoch_loss = 0.0;
    std::size_t terms = 0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t stop = std::min(order.size(), start + batch);
      ent.zero_grad();
      rel.zero_grad();
      const double scale = 1.0 / static_cast<double>((stop - start) * cfg.negatives);
      for (std::size_t b = start; b < stop; ++b) {
        const Triple& pos = triples[order[b]];
        for (std::size_t k = 0; k < cfg.negatives; ++k) {
          const Triple& neg = pool[order[b] * cfg.negatives + k];
          auto row = [&](Tensor& t, std::size_t i) { return std::span<double>(&t(i, 0), d); };
          if (cfg.method == KgeMethod::kTransE) {
            const double dp = score_transe(row(ent.value, pos.head), row(rel.value, pos.relation), row(ent.value, pos.tail));
            const double dn = score_transe(row(ent.value, neg.head), row(rel.value, neg.relation), row(ent.value, neg.tail));
            const double loss = transe_margin_loss(dp, dn, cfg.margin);
            epoch_loss += loss;
            if (loss > 0.0) {
              // d||x||/dx = x / ||x||; +1 for the positive distance, -1 for the negative.
              for (auto [tr, sign, dist] : {std::tuple{pos, 1.0, dp}, std::tuple{neg, -1.0, dn}}) {
                if (dist == 0.0) continue;
                for (std::size_t i = 0; i < d; ++i) {
                  diff[i] = ent.value(tr.head, i) + rel.value(tr.relation, i) - ent.value(tr.tail, i);
                }
                for (std::size_t i = 0; i < d; ++i) {
                  const double gi = scale * sign * diff[i] / dist;
                  ent.grad(tr.head, i) += gi;
                  rel.grad(tr.relation, i) += gi;
                  ent.grad(tr.tail, i) -= gi;
                }
              }
            }
          } else {
            for (auto [tr, label] : {std::tuple{pos, 1.0}, std::tuple{neg, -1.0}}) {
              const double s = score_distmult(row(ent.value, tr.head), row(rel.value, tr.relation), row(ent.value, tr.tail));
              const double m = -label * s;
              epoch_loss += m > 0 ? m + std::log1p(std::exp(-m)) : std::log1p(std::exp(m));
              // d softplus(-label*s)/ds = -label * sigmoid(-label*s)
              const double ds = scale * -label * detail::stable_sigmoid(m);
              for (std::size_t i = 0; i < d; ++i) {
                const double h = ent.value(tr.head, i), r = rel.value(tr.relation, i), t = ent.value(tr.tail, i);
                ent.grad(tr.head, i) += ds * r * t;
                rel.grad(tr.relation, i) += ds * h * t;
                ent.grad(tr.tail, i) += ds * h * r;
              }
            }
          }
          ++terms;
        }
      }
      opt.step(cfg.learning_rate);
    }
    if (cfg.method == KgeMethod::kTransE) detail::normalize_rows(ent.value.data(), d);
    const double mean = epoch_loss / static_cast<double>(terms);
    if (!std::isfinite(mean) || !ent.value.all_finite() || !rel.value.all_finite()) {
      throw TrainingError("train_kge: non-finite loss or parameters at epoch " + std::to_string(epoch));
    }
    if (epoch_losses) epoch_losses->push_back(mean);
  }
  table.entity_vectors = ent.value.data();
  table.relation_vectors = rel.value.data();
  table.epochs = cfg.epochs;
  return table;
}

struct LinkPredictionReport {
  double mean_rank = 0.0;
  double hits_at_1 = 0.0;
  double hits_at_3 = 0.0;
  std::size_t queries = 0;
};

/// Filtered tail prediction: the true tail is ranked among all entities,
/// skipping other tails that also form true triples with (head, relation).
/// Rank = 1 + number of unfiltered entities scoring strictly better.
inline LinkPredictionReport eval_link_prediction(const EntityEmbeddingTable& table, const KnowledgeGraph& g) {
  if (table.entities != g.entities() || table.relations != g.relations()) {
    throw ContractError("eval_link_prediction: embedding table does not cover the graph vocabulary");
  }
  LinkPredictionReport rep;
  const bool lower_better = table.method == KgeMethod::kTransE;
  auto score = [&](EntityId h, RelationId r, EntityId t) {
    return lower_better ? score_transe(table.entity(h), table.relation(r), table.entity(t))
                        : score_distmult(table.entity(h), table.relation(r), table.entity(t));
  };
  double rank_sum = 0.0;
  std::size_t h1 = 0, h3 = 0;
  for (const Triple& tr : g.triples()) {
    const double truth = score(tr.head, tr.relation, tr.tail);
    std::size_t rank = 1;
    for (EntityId e = 0; e < g.entity_count(); ++e) {
      if (e == tr.tail || g.has_triple(Triple{tr.head, tr.relation, e})) continue;
      const double s = score(tr.head, tr.relation, e);
      if (lower_better ? s < truth : s > truth) ++rank;
    }
    rank_sum += static_cast<double>(rank);
    h1 += rank <= 1;
    h3 += rank <= 3;
  }
  rep.queries = g.triples().size();
  if (rep.queries > 0) {
    const double n = static_cast<double>(rep.queries);
    rep.mean_rank = rank_sum / n;
    rep.hits_at_1 = static_cast<double>(h1) / n;
    rep.hits_at_3 = static_cast<double>(h3) / n;
  }
  return rep;
}

/// Binary layout (little-endian), documented in docs/formats.md:
///   "PKGE" | u32 version | u8 method | 3 x u8 zero | u32 dim | u32 n_entities
///   | u32 n_relations | u32 epochs | string config
///   | n_entities x string | n_relations x string
///   | n_entities*dim f64 | n_relations*dim f64
/// where string = u32 byte length + UTF-8 bytes.
inline void save_table(const EntityEmbeddingTable& t, std::ostream& out) {
  using namespace binary;
  out.write("PKGE", 4);
  write_le<std::uint32_t>(out, EntityEmbeddingTable::kFormatVersion);
  write_le<std::uint8_t>(out, static_cast<std::uint8_t>(t.method));
  for (int i = 0; i < 3; ++i) write_le<std::uint8_t>(out, 0);
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.dim));
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.entities.size()));
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.relations.size()));
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.epochs));
  write_string(out, t.config);
  for (const auto& e : t.entities) write_string(out, e);
  for (const auto& r : t.relations) write_string(out, r);
  for (double x : t.entity_vectors) write_le<double>(out, x);
  for (double x : t.relation_vectors) write_le<double>(out, x);
}

inline EntityEmbeddingTable load_table(std::istream& in) {
  using namespace binary;
  expect_magic(in, "PKGE", "embedding file");
  const auto version = read_le<std::uint32_t>(in, "version");
  if (version != EntityEmbeddingTable::kFormatVersion) {
    throw FormatError("embedding file: unsupported version " + std::to_string(version));
  }
  EntityEmbeddingTable t;
  const auto method = read_le<std::uint8_t>(in, "method");
  if (method > 1) throw FormatError("embedding file: unknown method tag " + std::to_string(method));
  t.method = static_cast<KgeMethod>(method);
  for (int i = 0; i < 3; ++i) read_le<std::uint8_t>(in, "reserved");
  t.dim = read_le<std::uint32_t>(in, "dim");
  const auto ne = read_le<std::uint32_t>(in, "entity count");
  const auto nr = read_le<std::uint32_t>(in, "relation count");
  t.epochs = read_le<std::uint32_t>(in, "epochs");
  if (t.dim == 0) throw FormatError("embedding file: zero dimension");
  t.config = read_string(in, "config");
  t.entities.reserve(ne);
  for (std::uint32_t i = 0; i < ne; ++i) t.entities.push_back(read_string(in, "entity name"));
  for (std::uint32_t i = 0; i < nr; ++i) t.relations.push_back(read_string(in, "relation name"));
  t.entity_vectors.resize(static_cast<std::size_t>(ne) * t.dim);
  t.relation_vectors.resize(static_cast<std::size_t>(nr) * t.dim);
  for (double& x : t.entity_vectors) x = read_le<double>(in, "entity vectors");
  for (double& x : t.relation_vectors) x = read_le<double>(in, "relation vectors");
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("embedding file: trailing bytes");
  return t;
}

inline void save_table(const EntityEmbeddingTable& t, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path + " for writing");
  save_table(t, out);
  if (!out) throw FormatError("write failed for " + path);
}

inline EntityEmbeddingTable load_table(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  return load_table(in);
}

}  // namespace piecer
