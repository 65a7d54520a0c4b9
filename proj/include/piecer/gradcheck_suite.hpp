#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "piecer/gradcheck.hpp"
#include "piecer/piecer.hpp"

namespace piecer {

struct GradCheckSettings {
  double h = 1e-5;
  double tolerance = 1e-5;
  std::size_t samples = 32;  // probed coordinates per parameter
  std::size_t fixtures = 3;
};

struct SubmoduleCheck {
  std::string submodule;
  double max_rel_error = 0.0;
  std::string worst_parameter;
  std::size_t coordinates = 0;
};

namespace detail {

// 6 nodes (2 query, 4 passage), hidden 4, 2 heads, knowledge dim 3. Some
// nodes are isolated so the empty-row path of the attention is exercised.
struct GradFixture {
  PiecerModel model;
  JointGraph graph;
  Parameter input;
  KnowledgeRows knowledge;
  Tensor weights;  // loss = sum(out (.) weights)
  Tensor mix;      // hidden x hidden, derives a highway candidate from the input
};

inline GradFixture make_grad_fixture(std::uint64_t seed) {
  Rng rng(seed);
  PiecerConfig cfg;
  cfg.hidden = 4;
  cfg.heads = 2;
  cfg.layers = 3;
  cfg.knowledge_dim = 3;
  cfg.ffn_dim = 5;
  cfg.dropout = 0.0;
  PiecerModel model(cfg, rng.next(), "piecer");
  for (Parameter* p : model.parameters())
    for (double& x : p->value.values()) x = rng.uniform(-1.0, 1.0);

  constexpr std::size_t n = 6, q = 2;
  std::vector<Token> nodes(n);
  for (std::size_t i = 0; i < n; ++i) {
    nodes[i].surface = nodes[i].lemma = "w" + std::to_string(i);
    nodes[i].segment = i < q ? Segment::kQuery : Segment::kPassage;
    nodes[i].position = i < q ? i : i - q;
  }
  std::vector<Edge> edges;
  for (std::size_t i = 0; i < n; ++i) {
    if (rng.uniform() < 0.15) continue;
    edges.push_back({i, i, EdgeCategory::kSelfLoop});
    for (std::size_t j = i + 1; j < n; ++j) {
      if (rng.uniform() < 0.4) {
        const auto c = rng.coin() ? EdgeCategory::kKnowledge : EdgeCategory::kCoreference;
        edges.push_back({i, j, c});
        edges.push_back({j, i, c});
      }
    }
  }
  auto random = [&](std::size_t r, std::size_t c) {
    Tensor t = Tensor::matrix(r, c);
    for (double& x : t.values()) x = rng.uniform(-2.0, 2.0);
    return t;
  };
  Parameter input("input", random(n, cfg.hidden));
  KnowledgeRows knowledge{random(n, cfg.knowledge_dim), {0, 3, 4}};
  Tensor weights = random(n, cfg.hidden);
  Tensor mix = random(cfg.hidden, cfg.hidden);
  return {std::move(model), JointGraph(std::move(nodes), q, std::move(edges)), std::move(input),
          std::move(knowledge), std::move(weights), std::move(mix)};
}

}  // namespace detail

inline const std::vector<std::string>& gradcheck_submodules() {
  static const std::vector<std::string> names{"injection", "gat_layer", "highway_combine", "highway_gat",
                                              "self_matching"};
  return names;
}

/// Finite-difference check of each PIECER submodule on `settings.fixtures`
/// random fixtures; the input representations are checked alongside the
/// weights. One row per submodule holding the worst error over fixtures.
inline std::vector<SubmoduleCheck> run_gradcheck_suite(const GradCheckSettings& settings, std::uint64_t seed) {
  std::vector<SubmoduleCheck> rows;
  for (const auto& name : gradcheck_submodules()) rows.push_back({name, 0.0, "", 0});
  Rng seeds(seed);
  for (std::size_t f = 0; f < settings.fixtures; ++f) {
    auto fx = detail::make_grad_fixture(seeds.next());
    auto& m = fx.model;
    auto& layer0 = m.layers()[0];
    const auto adjacency = fx.graph.adjacency(m.config().edges);
    auto loss_of = [&](std::function<Var(Tape&, Var)> body) {
      return [&fx, body](Tape& t) { return sum(hadamard(body(t, t.param(fx.input)), t.constant(fx.weights))); };
    };
    auto check = [&](std::size_t row, std::function<Var(Tape&, Var)> body, std::vector<Parameter*> params) {
      params.push_back(&fx.input);
      const auto rep = grad_check(loss_of(std::move(body)), params, settings.h, seeds.next(),
                                  settings.samples);
      auto& r = rows[row];
      r.coordinates += rep.coordinates_checked;
      if (rep.max_rel_error >= r.max_rel_error || r.worst_parameter.empty()) {
        r.max_rel_error = rep.max_rel_error;
        r.worst_parameter = rep.worst_parameter;
      }
    };
    check(0, [&](Tape&, Var x) { return inject_knowledge(x, fx.knowledge, m); },
          {&m.injection_projection(), &m.injection_gate_weight(), &m.injection_gate_bias()});
    std::vector<Parameter*> heads0;
    for (auto& head : layer0.heads) heads0.insert(heads0.end(), {&head.weight, &head.attn_src, &head.attn_dst});
    check(1,
          [&](Tape&, Var x) {
            ForwardContext ctx;
            return gat_layer(x, adjacency, layer0, m.config(), ctx);
          },
          heads0);
    // The candidate is a second input; a fixed transform of x keeps both operands live.
    check(2,
          [&](Tape& t, Var x) {
            const Var candidate = matmul(x, t.constant(fx.mix));
            return highway_combine(x, candidate, layer0, Combiner::kHighway);
          },
          {&layer0.highway_weight, &layer0.highway_bias});
    std::vector<Parameter*> all_gat;
    for (auto& layer : m.layers()) {
      for (auto& head : layer.heads) all_gat.insert(all_gat.end(), {&head.weight, &head.attn_src, &head.attn_dst});
      all_gat.insert(all_gat.end(), {&layer.highway_weight, &layer.highway_bias});
    }
    check(3,
          [&](Tape&, Var x) {
            ForwardContext ctx;
            return highway_gat_forward(x, fx.graph, m, ctx);
          },
          all_gat);
    auto& sm = m.self_matching_params();
    check(4,
          [&](Tape&, Var x) {
            ForwardContext ctx;
            return self_matching(x, m, ctx);
          },
          {&sm.query, &sm.key, &sm.value, &sm.output, &sm.fc1_weight, &sm.fc1_bias, &sm.fc2_weight, &sm.fc2_bias});
  }
  return rows;
}

}  // namespace piecer
