#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "piecer/autograd.hpp"
#include "piecer/joint_graph.hpp"
#include "piecer/kg.hpp"
#include "piecer/kge.hpp"
#include "piecer/rng.hpp"

namespace piecer {

enum class Combiner { kHighway, kResidual, kNone };

inline const char* combiner_name(Combiner c) {
  switch (c) {
    case Combiner::kHighway: return "highway";
    case Combiner::kResidual: return "residual";
    case Combiner::kNone: return "none";
  }
  return "unknown";
}

inline Combiner parse_combiner(const std::string& s) {
  if (s == "highway") return Combiner::kHighway;
  if (s == "residual") return Combiner::kResidual;
  if (s == "none") return Combiner::kNone;
  throw ContractError("unknown combiner '" + s + "' (expected highway, residual or none)");
}

struct PiecerConfig {
  std::size_t layers = 3;
  std::size_t heads = 4;
  std::size_t hidden = 64;
  std::size_t knowledge_dim = 100;
  std::size_t ffn_dim = 128;
  double dropout = 0.1;
  double leaky_slope = 0.2;
  Combiner combiner = Combiner::kHighway;
  bool use_injection = true;
  bool use_reasoning = true;
  bool use_self_matching = true;
  bool vector_gate = false;  // injection gate per hidden unit instead of per token
  double highway_bias_init = 0.0;
  EdgeMask edges;

  void validate() const {
    if (layers < 1) throw ContractError("piecer: layers must be >= 1");
    if (heads < 1) throw ContractError("piecer: heads must be >= 1");
    if (hidden < 1 || knowledge_dim < 1 || ffn_dim < 1) throw ContractError("piecer: dimensions must be >= 1");
    if (use_self_matching && hidden % heads != 0) {
      throw ContractError("piecer: hidden size " + std::to_string(hidden) + " not divisible by " +
                          std::to_string(heads) + " heads");
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ContractError("piecer: dropout must lie in [0, 1)");
  }

  bool any_enabled() const { return use_injection || use_reasoning || use_self_matching; }
};

inline nlohmann::json to_json(const PiecerConfig& c) {
  return {{"layers", c.layers},
          {"heads", c.heads},
          {"hidden", c.hidden},
          {"knowledge_dim", c.knowledge_dim},
          {"ffn_dim", c.ffn_dim},
          {"dropout", c.dropout},
          {"leaky_slope", c.leaky_slope},
          {"combiner", combiner_name(c.combiner)},
          {"use_injection", c.use_injection},
          {"use_reasoning", c.use_reasoning},
          {"use_self_matching", c.use_self_matching},
          {"vector_gate", c.vector_gate},
          {"highway_bias_init", c.highway_bias_init},
          {"edges",
           {{"knowledge", c.edges.knowledge}, {"coreference", c.edges.coreference}, {"self_loop", c.edges.self_loop}}}};
}

/// Dropout switch and seed stream for one forward pass.
class ForwardContext {
 public:
  ForwardContext() = default;
  ForwardContext(bool train, std::uint64_t seed) : train_(train), state_(seed) {}

  bool train() const { return train_; }

  // splitmix64
  std::uint64_t next_seed() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  Var dropout(const Var& x, double rate) { return piecer::dropout(x, rate, train_ ? next_seed() : 0, train_); }

 private:
  bool train_ = false;
  std::uint64_t state_ = 0;
};

/// Optional record of intermediate values for invariant checks.
struct PiecerTrace {
  std::vector<double> gates;
  struct Attention {
    Tensor weights;
    std::vector<std::uint8_t> mask;
  };
  std::vector<Attention> attention;
  struct Highway {
    Tensor previous, candidate, output;
  };
  std::vector<Highway> highway;
};

/// Mean KG embedding per token (rows of zeros where nothing matched).
struct KnowledgeRows {
  Tensor mean;
  std::vector<std::size_t> matched;
};

/// Maps KG entity ids to embedding rows; the table must cover the graph vocabulary.
class KnowledgeSource {
 public:
  KnowledgeSource(const KnowledgeGraph& kg, const EntityEmbeddingTable& table) : kg_(&kg), table_(&table) {
    std::unordered_map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < table.entities.size(); ++i) index.emplace(table.entities[i], i);
    rows_.resize(kg.entity_count());
    for (std::size_t e = 0; e < kg.entity_count(); ++e) {
      auto it = index.find(kg.entities()[e]);
      if (it == index.end()) {
        throw ContractError("knowledge source: entity '" + kg.entities()[e] + "' missing from embedding table");
      }
      rows_[e] = it->second;
    }
  }

  const KnowledgeGraph& graph() const { return *kg_; }
  const EntityEmbeddingTable& table() const { return *table_; }
  std::size_t dim() const { return table_->dim; }

  KnowledgeRows rows_for(const std::vector<Token>& tokens) const {
    KnowledgeRows out{Tensor::matrix(tokens.empty() ? 1 : tokens.size(), dim()), {}};
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      if (tokens[i].is_punct) continue;
      const auto ids = kg_->entities_by_lemma(tokens[i].lemma);
      if (ids.empty()) continue;
      for (EntityId e : ids) {
        auto v = table_->entity(rows_[e]);
        for (std::size_t k = 0; k < dim(); ++k) out.mean(i, k) += v[k];
      }
      for (std::size_t k = 0; k < dim(); ++k) out.mean(i, k) /= static_cast<double>(ids.size());
      out.matched.push_back(i);
    }
    return out;
  }

 private:
  const KnowledgeGraph* kg_;
  const EntityEmbeddingTable* table_;
  std::vector<std::size_t> rows_;
};

struct GatHead {
  Parameter weight;      // hidden x hidden
  Parameter attn_src;    // hidden x 1, scores the receiving node i
  Parameter attn_dst;    // hidden x 1, scores the neighbor j
};

struct GatLayerParams {
  std::vector<GatHead> heads;
  Parameter highway_weight;  // hidden x hidden
  Parameter highway_bias;    // 1 x hidden
};

struct SelfMatchingParams {
  Parameter query, key, value, output;  // hidden x hidden, no bias
  Parameter fc1_weight, fc1_bias;       // hidden x ffn, 1 x ffn
  Parameter fc2_weight, fc2_bias;       // ffn x hidden, 1 x hidden
};

namespace detail {

inline Tensor xavier(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t = Tensor::matrix(fan_in, fan_out);
  for (double& x : t.values()) x = rng.uniform(-bound, bound);
  return t;
}

}  // namespace detail

/// Trainable state of one PIECER instance. Parameters for disabled
/// submodules still exist so checkpoints keep a fixed layout.
class PiecerModel {
 public:
  PiecerModel(PiecerConfig cfg, std::uint64_t seed, std::string prefix = "piecer")
      : cfg_(std::move(cfg)), prefix_(std::move(prefix)) {
    cfg_.validate();
    Rng rng(seed);
    const std::size_t h = cfg_.hidden;
    const std::size_t gate_out = cfg_.vector_gate ? h : 1;
    inj_proj_ = Parameter(name("injection.projection"), detail::xavier(cfg_.knowledge_dim, h, rng));
    inj_gate_w_ = Parameter(name("injection.gate_weight"), detail::xavier(2 * h, gate_out, rng));
    inj_gate_b_ = Parameter(name("injection.gate_bias"), Tensor::matrix(1, gate_out));
    layers_.resize(cfg_.layers);
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
      auto& layer = layers_[l];
      const std::string lp = "gat." + std::to_string(l) + ".";
      layer.heads.resize(cfg_.heads);
      for (std::size_t k = 0; k < cfg_.heads; ++k) {
        const std::string hp = lp + "head." + std::to_string(k) + ".";
        layer.heads[k].weight = Parameter(name(hp + "weight"), detail::xavier(h, h, rng));
        layer.heads[k].attn_src = Parameter(name(hp + "attn_src"), detail::xavier(h, 1, rng));
        layer.heads[k].attn_dst = Parameter(name(hp + "attn_dst"), detail::xavier(h, 1, rng));
      }
      layer.highway_weight = Parameter(name(lp + "highway_weight"), detail::xavier(h, h, rng));
      layer.highway_bias = Parameter(name(lp + "highway_bias"), Tensor::matrix(1, h, cfg_.highway_bias_init));
    }
    sm_.query = Parameter(name("self_matching.query"), detail::xavier(h, h, rng));
    sm_.key = Parameter(name("self_matching.key"), detail::xavier(h, h, rng));
    sm_.value = Parameter(name("self_matching.value"), detail::xavier(h, h, rng));
    sm_.output = Parameter(name("self_matching.output"), detail::xavier(h, h, rng));
    sm_.fc1_weight = Parameter(name("self_matching.fc1_weight"), detail::xavier(h, cfg_.ffn_dim, rng));
    sm_.fc1_bias = Parameter(name("self_matching.fc1_bias"), Tensor::matrix(1, cfg_.ffn_dim));
    sm_.fc2_weight = Parameter(name("self_matching.fc2_weight"), detail::xavier(cfg_.ffn_dim, h, rng));
    sm_.fc2_bias = Parameter(name("self_matching.fc2_bias"), Tensor::matrix(1, h));
  }

  PiecerModel(const PiecerModel&) = delete;
  PiecerModel& operator=(const PiecerModel&) = delete;
  PiecerModel(PiecerModel&&) = default;
  PiecerModel& operator=(PiecerModel&&) = default;

  const PiecerConfig& config() const { return cfg_; }
  PiecerConfig& mutable_config() { return cfg_; }
  const std::string& prefix() const { return prefix_; }

  Parameter& injection_projection() { return inj_proj_; }
  Parameter& injection_gate_weight() { return inj_gate_w_; }
  Parameter& injection_gate_bias() { return inj_gate_b_; }
  std::vector<GatLayerParams>& layers() { return layers_; }
  SelfMatchingParams& self_matching_params() { return sm_; }

  /// Every parameter, in a fixed order.
  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out{&inj_proj_, &inj_gate_w_, &inj_gate_b_};
    for (auto& layer : layers_) {
      for (auto& head : layer.heads) {
        out.push_back(&head.weight);
        out.push_back(&head.attn_src);
        out.push_back(&head.attn_dst);
      }
      out.push_back(&layer.highway_weight);
      out.push_back(&layer.highway_bias);
    }
    for (Parameter* p : {&sm_.query, &sm_.key, &sm_.value, &sm_.output, &sm_.fc1_weight, &sm_.fc1_bias,
                         &sm_.fc2_weight, &sm_.fc2_bias}) {
      out.push_back(p);
    }
    return out;
  }

  /// Parameters that receive gradients under the current toggles.
  std::vector<Parameter*> active_parameters() {
    std::vector<Parameter*> out;
    if (!cfg_.any_enabled()) return out;
    if (cfg_.use_injection) out.insert(out.end(), {&inj_proj_, &inj_gate_w_, &inj_gate_b_});
    if (cfg_.use_reasoning) {
      for (auto& layer : layers_) {
        for (auto& head : layer.heads) out.insert(out.end(), {&head.weight, &head.attn_src, &head.attn_dst});
        if (cfg_.combiner == Combiner::kHighway) out.insert(out.end(), {&layer.highway_weight, &layer.highway_bias});
      }
    }
    if (cfg_.use_self_matching) {
      out.insert(out.end(), {&sm_.query, &sm_.key, &sm_.value, &sm_.output, &sm_.fc1_weight, &sm_.fc1_bias,
                             &sm_.fc2_weight, &sm_.fc2_bias});
    }
    return out;
  }

 private:
  std::string name(const std::string& s) const { return prefix_ + "." + s; }

  PiecerConfig cfg_;
  std::string prefix_;
  Parameter inj_proj_, inj_gate_w_, inj_gate_b_;
  std::vector<GatLayerParams> layers_;
  SelfMatchingParams sm_;
};

/// Gated fusion of word representations with projected mean KG embeddings:
///   gate = sigmoid(W_g [w; e] + b_g),  w' = w * gate + e * (1 - gate).
/// Rows without a matched entity are passed through untouched.
inline Var inject_knowledge(const Var& words, const KnowledgeRows& knowledge, PiecerModel& model,
                            PiecerTrace* trace = nullptr) {
  Tape& tape = words.tape();
  const auto& cfg = model.config();
  if (words.cols() != cfg.hidden) {
    throw ContractError("inject_knowledge: word width " + std::to_string(words.cols()) + " != hidden " +
                        std::to_string(cfg.hidden));
  }
  if (knowledge.mean.cols() != cfg.knowledge_dim) {
    throw ContractError("inject_knowledge: knowledge dimension " + std::to_string(knowledge.mean.cols()) +
                        " != configured " + std::to_string(cfg.knowledge_dim));
  }
  if (knowledge.matched.empty()) return words;
  Tensor mean = Tensor::matrix(knowledge.matched.size(), cfg.knowledge_dim);
  for (std::size_t r = 0; r < knowledge.matched.size(); ++r)
    for (std::size_t k = 0; k < cfg.knowledge_dim; ++k) mean(r, k) = knowledge.mean(knowledge.matched[r], k);
  const Var w = gather_rows(words, knowledge.matched);
  const Var e = matmul(tape.constant(std::move(mean)), tape.param(model.injection_projection()));
  const Var gate = sigmoid(add(matmul(concat_cols(w, e), tape.param(model.injection_gate_weight())),
                               tape.param(model.injection_gate_bias())));
  if (trace) trace->gates.insert(trace->gates.end(), gate.value().values().begin(), gate.value().values().end());
  const Var fused = add(hadamard(w, gate), hadamard(e, scalar_mix(gate, -1.0, 1.0)));
  return assign_rows(words, knowledge.matched, fused);
}

inline Var inject_knowledge(const Var& words, const std::vector<Token>& tokens, const KnowledgeSource& source,
                            PiecerModel& model, PiecerTrace* trace = nullptr) {
  if (tokens.size() != words.rows()) {
    throw ContractError("inject_knowledge: " + std::to_string(tokens.size()) + " tokens for " +
                        std::to_string(words.rows()) + " rows");
  }
  return inject_knowledge(words, source.rows_for(tokens), model, trace);
}

/// Candidate update averaged over K heads:
///   h'_i = 1/K sum_k sum_{j in N(i)} alpha_kij W_k h_j,
///   alpha_ki. = softmax_j LeakyReLU(a_k^T [W_k h_i; W_k h_j]).
/// `adjacency` is row-major n x n; rows without neighbors give zero.
inline Var gat_layer(const Var& h, const std::vector<std::uint8_t>& adjacency, GatLayerParams& layer,
                     const PiecerConfig& cfg, ForwardContext& ctx, PiecerTrace* trace = nullptr) {
  Tape& tape = h.tape();
  const std::size_t n = h.rows();
  if (adjacency.size() != n * n) {
    throw DimensionError("gat_layer: adjacency for " + std::to_string(adjacency.size()) + " entries, " +
                         std::to_string(n) + " nodes");
  }
  std::vector<Var> heads;
  heads.reserve(layer.heads.size());
  for (auto& head : layer.heads) {
    const Var z = matmul(h, tape.param(head.weight));
    const Var src = matmul(z, tape.param(head.attn_src));
    const Var dst = matmul(z, tape.param(head.attn_dst));
    const Var logits = leaky_relu(add(src, transpose(dst)), cfg.leaky_slope);
    Var alpha = softmax_masked(logits, adjacency, EmptyRow::kZero);
    if (trace) trace->attention.push_back({alpha.value(), adjacency});
    alpha = ctx.dropout(alpha, cfg.dropout);
    heads.push_back(matmul(alpha, z));
  }
  Var total = heads[0];
  for (std::size_t k = 1; k < heads.size(); ++k) total = add(total, heads[k]);
  return scalar_mix(total, 1.0 / static_cast<double>(heads.size()), 0.0);
}

/// highway: g = sigmoid(W_h h + b_h), out = g (.) h + (1 - g) (.) candidate
/// residual: out = h + candidate;  none: out = candidate.
inline Var highway_combine(const Var& previous, const Var& candidate, GatLayerParams& layer, Combiner mode,
                           PiecerTrace* trace = nullptr) {
  if (previous.shape() != candidate.shape()) {
    throw ContractError("highway_combine: shape " + shape_str(previous.shape()) + " vs " +
                        shape_str(candidate.shape()));
  }
  Tape& tape = previous.tape();
  Var out;
  switch (mode) {
    case Combiner::kHighway: {
      const Var gate =
          sigmoid(add(matmul(previous, tape.param(layer.highway_weight)), tape.param(layer.highway_bias)));
      out = add(hadamard(gate, previous), hadamard(scalar_mix(gate, -1.0, 1.0), candidate));
      break;
    }
    case Combiner::kResidual:
      out = add(previous, candidate);
      break;
    case Combiner::kNone:
      out = candidate;
      break;
  }
  if (trace) trace->highway.push_back({previous.value(), candidate.value(), out.value()});
  return out;
}

/// L rounds of gat_layer + highway_combine over the masked graph.
inline Var highway_gat_forward(const Var& h0, const JointGraph& graph, PiecerModel& model, ForwardContext& ctx,
                               PiecerTrace* trace = nullptr) {
  const auto& cfg = model.config();
  if (h0.rows() != graph.node_count()) {
    throw ContractError("highway_gat_forward: " + std::to_string(h0.rows()) + " rows for " +
                        std::to_string(graph.node_count()) + " graph nodes");
  }
  const auto adjacency = graph.adjacency(cfg.edges);
  Var h = h0;
  for (auto& layer : model.layers()) {
    const Var candidate = gat_layer(h, adjacency, layer, cfg, ctx, trace);
    h = highway_combine(h, candidate, layer, cfg.combiner, trace);
  }
  return h;
}

/// Transformer block: o' = SelfAttention(h) + h;  o = FC2(ReLU(FC1(o'))) + o'.
inline Var self_matching(const Var& h, PiecerModel& model, ForwardContext& ctx) {
  Tape& tape = h.tape();
  const auto& cfg = model.config();
  auto& p = model.self_matching_params();
  const std::size_t heads = cfg.heads;
  const std::size_t dh = cfg.hidden / heads;
  const Var q = matmul(h, tape.param(p.query));
  const Var k = matmul(h, tape.param(p.key));
  const Var v = matmul(h, tape.param(p.value));
  std::vector<Var> outs;
  outs.reserve(heads);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  for (std::size_t i = 0; i < heads; ++i) {
    const Var qi = slice_cols(q, i * dh, (i + 1) * dh);
    const Var ki = slice_cols(k, i * dh, (i + 1) * dh);
    const Var vi = slice_cols(v, i * dh, (i + 1) * dh);
    Var a = softmax_rows(scalar_mix(matmul(qi, transpose(ki)), scale, 0.0));
    a = ctx.dropout(a, cfg.dropout);
    outs.push_back(matmul(a, vi));
  }
  const Var attended = matmul(heads == 1 ? outs[0] : concat_cols(outs), tape.param(p.output));
  const Var o1 = add(attended, h);
  const Var ff = add(matmul(relu(add(matmul(o1, tape.param(p.fc1_weight)), tape.param(p.fc1_bias))),
                            tape.param(p.fc2_weight)),
                     tape.param(p.fc2_bias));
  return add(ff, o1);
}

/// Injection -> Highway GAT -> self-matching on passage rows, each skipped
/// when disabled. `reps` has one row per graph node (query rows first).
inline Var piecer_forward(const Var& reps, const JointGraph& graph, const KnowledgeRows& knowledge,
                          PiecerModel& model, ForwardContext& ctx, PiecerTrace* trace = nullptr) {
  const auto& cfg = model.config();
  if (reps.rows() != graph.node_count()) {
    throw ContractError("piecer_forward: " + std::to_string(reps.rows()) + " rows for " +
                        std::to_string(graph.node_count()) + " graph nodes");
  }
  Var h = reps;
  if (cfg.use_injection) h = ctx.dropout(inject_knowledge(h, knowledge, model, trace), cfg.dropout);
  if (cfg.use_reasoning) h = ctx.dropout(highway_gat_forward(h, graph, model, ctx, trace), cfg.dropout);
  if (cfg.use_self_matching && graph.passage_count() > 0) {
    std::vector<std::size_t> rows(graph.passage_count());
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = graph.query_count() + i;
    const Var passage = gather_rows(h, rows);
    h = assign_rows(h, rows, ctx.dropout(self_matching(passage, model, ctx), cfg.dropout));
  }
  return h;
}

inline Var piecer_forward(const Var& reps, const JointGraph& graph, const KnowledgeSource& source,
                          PiecerModel& model, ForwardContext& ctx, PiecerTrace* trace = nullptr) {
  return piecer_forward(reps, graph, source.rows_for(graph.nodes()), model, ctx, trace);
}

}  // namespace piecer
