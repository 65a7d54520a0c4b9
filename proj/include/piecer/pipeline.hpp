#pragma once

#include <functional>
#include <memory>

#include "piecer/config.hpp"
#include "piecer/kge.hpp"
#include "piecer/mrc.hpp"
#include "piecer/synthetic.hpp"

namespace piecer {

/// KG-side inputs of an MRC run. Empty when no plug is configured. Heap
/// storage keeps the source's pointers valid when the bundle moves.
struct KnowledgeBundle {
  std::unique_ptr<KnowledgeGraph> graph;
  std::unique_ptr<EntityEmbeddingTable> table;
  std::unique_ptr<KnowledgeSource> source;

  std::size_t dim() const { return table ? table->dim : 1; }
  const KnowledgeSource* get() const { return source.get(); }
};

inline KnowledgeBundle make_knowledge(KnowledgeGraph graph, EntityEmbeddingTable table) {
  KnowledgeBundle b;
  b.graph = std::make_unique<KnowledgeGraph>(std::move(graph));
  b.table = std::make_unique<EntityEmbeddingTable>(std::move(table));
  b.source = std::make_unique<KnowledgeSource>(*b.graph, *b.table);
  return b;
}

struct ExperimentResult {
  SyntheticAudit audit;
  TrainResult train;
  EvalReport dev;
  EvalReport train_eval;
};

/// Generate -> pretrain KGE -> train -> evaluate, all from one config. The
/// model holds the best-epoch weights afterwards.
inline ExperimentResult run_synthetic_experiment(const RunConfig& cfg,
                                                 const std::function<void(const EpochMetrics&)>& on_epoch = {}) {
  auto data = gen_synthetic(cfg.data);
  ExperimentResult out;
  out.audit = audit_synthetic(data.train.examples, data.kg, cfg.data.mode);
  KnowledgeBundle knowledge;
  if (!cfg.model.plugs.empty()) {
    auto table = train_kge(data.kg, cfg.kge);
    knowledge = make_knowledge(data.kg, std::move(table));
  }
  MrcModel model(cfg.model, Vocab::build(data.train.examples, cfg.model.min_count), knowledge.dim(), cfg.seed);
  const auto train = prepare(data.train.examples, model.vocab(), knowledge.get());
  const auto dev = prepare(data.dev.examples, model.vocab(), knowledge.get());
  out.train = train_mrc(model, train, dev, cfg.train, cfg.seed, on_epoch);
  out.dev = evaluate(model, dev);
  out.train_eval = evaluate(model, train);
  return out;
}

}  // namespace piecer
