// piecer: command-line entry points. Exit codes: 0 ok, 1 usage or config
// error, 2 runtime error, 3 gradcheck failure. Diagnostics go to stderr only.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "piecer/checkpoint.hpp"
#include "piecer/config.hpp"
#include "piecer/dataset.hpp"
#include "piecer/gradcheck_suite.hpp"
#include "piecer/joint_graph.hpp"
#include "piecer/kg.hpp"
#include "piecer/kge.hpp"
#include "piecer/mrc.hpp"
#include "piecer/pipeline.hpp"
#include "piecer/synthetic.hpp"

namespace fs = std::filesystem;
using namespace piecer;

namespace {

enum Exit { kOk = 0, kUsage = 1, kRuntime = 2, kCheckFailed = 3 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CommonFlags {
  std::string config;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;

  RunConfig load() const { return load_run_config(config, overrides, seed); }
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("-c,--config", f.config, "JSON run config (preset files live in configs/)");
  cmd->add_option("--set", f.overrides, "override one field, e.g. --set train.epochs=5 (repeatable)");
  cmd->add_option("--seed", f.seed, "seed for every stochastic step (overrides the config)");
}

/// Writes to `path`, or stdout for "-" / empty.
template <typename Fn>
void emit(const std::string& path, Fn&& write) {
  if (path.empty() || path == "-") {
    write(std::cout);
    std::cout.flush();
    return;
  }
  std::ofstream out(path);
  if (!out) throw FormatError("cannot open " + path + " for writing");
  write(out);
  if (!out) throw FormatError("write failed for " + path);
}

std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path);
  return in;
}

KnowledgeGraph read_kg(const std::string& path) {
  auto in = open_input(path);
  auto g = KnowledgeGraph::load_triples(in);
  for (const auto& w : g.warnings()) std::cerr << "warning: " << path << ": " << w << '\n';
  return g;
}

Dataset read_data(const std::string& path) {
  auto in = open_input(path);
  try {
    return load_dataset(in);
  } catch (const ParseError& e) {
    throw ParseError(e.line(), path + ": " + e.what());
  }
}

KnowledgeBundle read_knowledge(const std::string& kg, const std::string& embeddings) {
  if (kg.empty() != embeddings.empty()) throw UsageError("--kg and --embeddings must be given together");
  if (kg.empty()) return {};
  return make_knowledge(read_kg(kg), load_table(embeddings));
}

std::string fmt(double x) {
  std::ostringstream s;
  s << std::scientific << std::setprecision(3) << x;
  return s.str();
}

// --- commands -------------------------------------------------------------

int cmd_pretrain_kge(const RunConfig& cfg, const std::string& kg_path, const std::string& out_path,
                     const std::string& report_path) {
  const auto g = read_kg(kg_path);
  const auto cj = to_json(cfg);
  auto untrained = init_table(g, cfg.kge);
  std::vector<double> losses;
  auto table = train_kge(g, cfg.kge, &losses);
  table.config = cj.dump();
  save_table(table, out_path);
  auto report_of = [](const LinkPredictionReport& r) {
    return nlohmann::json{{"mean_rank", r.mean_rank}, {"hits_at_1", r.hits_at_1}, {"hits_at_3", r.hits_at_3},
                          {"queries", r.queries}};
  };
  const nlohmann::json report = {{"config", cj},
                                 {"entities", g.entity_count()},
                                 {"relations", g.relation_count()},
                                 {"triples", g.triples().size()},
                                 {"final_loss", losses.back()},
                                 {"trained", report_of(eval_link_prediction(table, g))},
                                 {"untrained", report_of(eval_link_prediction(untrained, g))}};
  emit(report_path, [&](std::ostream& o) { o << report.dump(2) << '\n'; });
  return kOk;
}

int cmd_build_graph(const RunConfig& cfg, const std::string& kg_path, const std::string& passage,
                    const std::string& query, const std::string& out_path) {
  KnowledgeGraph g;
  if (!kg_path.empty()) g = read_kg(kg_path);
  const auto q = analyze(query, Segment::kQuery);
  const auto p = analyze(passage, Segment::kPassage);
  const auto graph = build_joint_graph(q, p, g).filtered(cfg.model.piecer.edges);
  const nlohmann::json doc = {
      {"config", to_json(cfg)}, {"query", query}, {"passage", passage}, {"graph", graph.to_json()}};
  emit(out_path, [&](std::ostream& o) { o << doc.dump(2) << '\n'; });
  return kOk;
}

int cmd_gen_data(const RunConfig& cfg, const std::string& out_dir) {
  const auto data = gen_synthetic(cfg.data);
  const auto audit = audit_synthetic(data.train.examples, data.kg, cfg.data.mode);
  const auto dev_audit = audit_synthetic(data.dev.examples, data.kg, cfg.data.mode);
  fs::create_directories(out_dir);
  const auto cj = to_json(cfg);
  for (const auto* split : {&data.train, &data.dev}) {
    Dataset d = *split;
    d.header["config"] = cj;
    emit((fs::path(out_dir) / (d.header["split"].get<std::string>() + ".jsonl")).string(),
         [&](std::ostream& o) { write_dataset(o, d); });
  }
  emit((fs::path(out_dir) / "kg.tsv").string(), [&](std::ostream& o) {
    o << "# config " << cj.dump() << '\n';
    data.kg.write_triples(o);
  });
  auto audit_json = [](const SyntheticAudit& a) {
    return nlohmann::json{{"examples", a.examples},
                          {"violations", a.violations},
                          {"first_violation", a.first_violation},
                          {"lexical_em", a.lexical_em}};
  };
  const nlohmann::json report = {{"config", cj}, {"train", audit_json(audit)}, {"dev", audit_json(dev_audit)}};
  emit((fs::path(out_dir) / "audit.json").string(), [&](std::ostream& o) { o << report.dump(2) << '\n'; });
  if (audit.violations + dev_audit.violations > 0) {
    std::cerr << "error: generated data failed its audit: "
              << (audit.violations ? audit.first_violation : dev_audit.first_violation) << '\n';
    return kCheckFailed;
  }
  return kOk;
}

int cmd_train(const RunConfig& cfg, const std::string& train_path, const std::string& dev_path,
              const std::string& kg_path, const std::string& emb_path, const std::string& out_path,
              const std::string& log_path) {
  const auto train_data = read_data(train_path);
  Dataset dev_data;
  if (!dev_path.empty()) dev_data = read_data(dev_path);
  auto knowledge = read_knowledge(kg_path, emb_path);
  if (!cfg.model.plugs.empty() && !knowledge.get()) {
    std::cerr << "warning: PIECER is plugged in without --kg/--embeddings; injection and knowledge edges are inert\n";
  }
  MrcModel model(cfg.model, Vocab::build(train_data.examples, cfg.model.min_count), knowledge.dim(), cfg.seed);
  const auto train = prepare(train_data.examples, model.vocab(), knowledge.get());
  const auto dev = prepare(dev_data.examples, model.vocab(), knowledge.get());
  const auto cj = to_json(cfg);
  TrainResult result;
  emit(log_path, [&](std::ostream& log) {
    log << nlohmann::json{{"config", cj}, {"train_examples", train.size()}, {"dev_examples", dev.size()}}.dump()
        << '\n';
    result = train_mrc(model, train, dev, cfg.train, cfg.seed, [&](const EpochMetrics& m) {
      log << to_json(m).dump() << '\n';
      log.flush();
    });
  });
  const auto file = make_checkpoint(model, cfg, knowledge.dim(), {{"best_epoch", result.best_epoch}});
  save_checkpoint(file, out_path);
  return kOk;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_path, const std::string& kg_path,
             const std::string& emb_path, const std::string& out_path, bool with_predictions) {
  const auto loaded = restore_model(load_checkpoint(ckpt_path));
  const auto data = read_data(data_path);
  auto knowledge = read_knowledge(kg_path, emb_path);
  if (knowledge.dim() != loaded.knowledge_dim) {
    throw UsageError("embedding width " + std::to_string(knowledge.dim()) + " does not match the checkpoint's " +
                     std::to_string(loaded.knowledge_dim) + " (pass the --kg/--embeddings used for training)");
  }
  const auto prepared = prepare(data.examples, loaded.model->vocab(), knowledge.get());
  const auto rep = evaluate(*loaded.model, prepared);
  nlohmann::json doc = {{"config", to_json(loaded.config)},
                        {"checkpoint_meta", loaded.header.value("meta", nlohmann::json::object())},
                        {"examples", prepared.size()},
                        {"em", rep.em},
                        {"f1", rep.f1}};
  if (with_predictions) {
    nlohmann::json preds = nlohmann::json::array();
    for (const auto& p : rep.predictions) {
      preds.push_back({{"id", p.id}, {"text", p.span.text}, {"start", p.span.start}, {"end", p.span.end},
                       {"em", p.metrics.em}, {"f1", p.metrics.f1}});
    }
    doc["predictions"] = std::move(preds);
  }
  emit(out_path, [&](std::ostream& o) { o << doc.dump(2) << '\n'; });
  return kOk;
}

int cmd_gradcheck(const RunConfig& cfg, const std::string& out_path) {
  const auto rows = run_gradcheck_suite(cfg.gradcheck, cfg.seed);
  bool ok = true;
  emit(out_path, [&](std::ostream& o) {
    o << "# config " << to_json(cfg).dump() << '\n';
    o << "submodule\tmax_rel_error\tcoordinates\tworst_parameter\tstatus\n";
    for (const auto& r : rows) {
      const bool pass = r.max_rel_error < cfg.gradcheck.tolerance;
      ok = ok && pass;
      o << r.submodule << '\t' << fmt(r.max_rel_error) << '\t' << r.coordinates << '\t' << r.worst_parameter << '\t'
        << (pass ? "ok" : "FAIL") << '\n';
    }
  });
  if (!ok) {
    std::cerr << "error: gradient check above tolerance " << cfg.gradcheck.tolerance << '\n';
    return kCheckFailed;
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PIECER: knowledge-graph reasoning plug-in for extractive reading comprehension"};
  app.require_subcommand(1);

  CommonFlags kge_f, graph_f, gen_f, train_f, gc_f;
  std::string kg, out, report, passage, query, train_path, dev_path, emb, log, ckpt, data;
  bool predictions = false;

  auto* kge = app.add_subcommand("pretrain-kge", "train entity embeddings on a triple file");
  add_common(kge, kge_f);
  kge->add_option("--kg", kg, "tab-separated triples")->required();
  kge->add_option("-o,--out", out, "embedding file to write")->required();
  kge->add_option("--report", report, "link-prediction report (default stdout)");

  auto* graph = app.add_subcommand("build-graph", "dump the joint query-passage graph");
  add_common(graph, graph_f);
  graph->add_option("--kg", kg, "tab-separated triples (optional)");
  graph->add_option("--passage", passage, "passage text")->required();
  graph->add_option("--query", query, "query text with one @placeholder")->required();
  graph->add_option("-o,--out", out, "graph dump (default stdout)");

  auto* gen = app.add_subcommand("gen-data", "write a synthetic dataset with its KG");
  add_common(gen, gen_f);
  gen->add_option("-o,--out-dir", out, "directory for train.jsonl, dev.jsonl, kg.tsv, audit.json")->required();

  auto* train = app.add_subcommand("train", "train the MRC model and write a checkpoint");
  add_common(train, train_f);
  train->add_option("--train", train_path, "training set (JSON lines)")->required();
  train->add_option("--dev", dev_path, "dev set (JSON lines)");
  train->add_option("--kg", kg, "triples for knowledge edges and injection");
  train->add_option("--embeddings", emb, "embedding file from pretrain-kge");
  train->add_option("-o,--out", out, "checkpoint to write")->required();
  train->add_option("--log", log, "per-epoch metric log (default stdout)");

  auto* ev = app.add_subcommand("eval", "EM/F1 of a checkpoint on a dataset");
  ev->add_option("--checkpoint", ckpt, "checkpoint from train")->required();
  ev->add_option("--data", data, "dataset to score (JSON lines)")->required();
  ev->add_option("--kg", kg, "same triples the model was trained with");
  ev->add_option("--embeddings", emb, "same embedding file the model was trained with");
  ev->add_option("-o,--out", out, "report (default stdout)");
  ev->add_flag("--predictions", predictions, "include per-example predictions");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every PIECER submodule");
  add_common(gc, gc_f);
  gc->add_option("-o,--out", out, "table (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e, std::cerr, std::cerr);
    std::cerr << '\n' << app.help();
    return kUsage;
  }

  try {
    if (*kge) return cmd_pretrain_kge(kge_f.load(), kg, out, report);
    if (*graph) return cmd_build_graph(graph_f.load(), kg, passage, query, out);
    if (*gen) return cmd_gen_data(gen_f.load(), out);
    if (*train) return cmd_train(train_f.load(), train_path, dev_path, kg, emb, out, log);
    if (*ev) return cmd_eval(ckpt, data, kg, emb, out, predictions);
    if (*gc) return cmd_gradcheck(gc_f.load(), out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  }
  return kUsage;
}
