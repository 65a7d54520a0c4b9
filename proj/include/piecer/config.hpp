#pragma once

#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include <nlohmann/json.hpp>

#include "piecer/errors.hpp"
#include "piecer/gradcheck_suite.hpp"
#include "piecer/kge.hpp"
#include "piecer/mrc.hpp"
#include "piecer/synthetic.hpp"

namespace piecer {

/// Everything a CLI command reads besides its input files. One seed drives
/// KGE initialization, data generation, model initialization and training.
struct RunConfig {
  static constexpr int kSchemaVersion = 1;

  std::string name = "default";
  std::uint64_t seed = 0;
  KgeConfig kge;
  SyntheticSpec data;
  MrcConfig model;  // model.piecer holds the "piecer" section
  TrainConfig train;
  GradCheckSettings gradcheck;

  RunConfig() { model.plugs = {PlugPosition::kAfterEmbedding, PlugPosition::kBeforePrediction}; }

  /// Seeds pushed into the module configs.
  void propagate_seed() {
    kge.seed = seed;
    data.seed = seed;
  }
};

inline nlohmann::json to_json(const GradCheckSettings& g) {
  return {{"h", g.h}, {"tolerance", g.tolerance}, {"samples", g.samples}, {"fixtures", g.fixtures}};
}

/// The effective config in the same schema the reader accepts.
inline nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json data = to_json(c.data);
  data.erase("seed");
  nlohmann::json model = to_json(c.model);
  nlohmann::json piecer = model["piecer"];
  model.erase("piecer");
  piecer.erase("hidden");
  piecer.erase("knowledge_dim");
  return {{"version", RunConfig::kSchemaVersion},
          {"name", c.name},
          {"seed", c.seed},
          {"kge",
           {{"method", method_name(c.kge.method)},
            {"dim", c.kge.dim},
            {"epochs", c.kge.epochs},
            {"learning_rate", c.kge.learning_rate},
            {"margin", c.kge.margin},
            {"negatives", c.kge.negatives},
            {"batch_size", c.kge.batch_size},
            {"negative_refresh", c.kge.negative_refresh}}},
          {"data", std::move(data)},
          {"model", std::move(model)},
          {"piecer", std::move(piecer)},
          {"train", to_json(c.train)},
          {"gradcheck", to_json(c.gradcheck)}};
}

namespace detail {

/// Strict reader over one JSON object: typed reads, and finish() rejects
/// keys nobody asked for.
class ConfigSection {
 public:
  ConfigSection(nlohmann::json j, std::string path) : j_(std::move(j)), path_(std::move(path)) {
    if (j_.is_null()) j_ = nlohmann::json::object();
    if (!j_.is_object()) throw ConfigError(path_, "expected an object, got " + std::string(j_.type_name()));
  }

  std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  template <typename T>
  void read(const std::string& key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    const auto& v = *it;
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(at(key), "expected true or false, got " + v.dump());
      out = v.get<bool>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0)) {
        throw ConfigError(at(key), "expected a non-negative integer, got " + v.dump());
      }
      out = v.get<T>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(at(key), "expected a number, got " + v.dump());
      out = v.get<T>();
    } else {
      if (!v.is_string()) throw ConfigError(at(key), "expected a string, got " + v.dump());
      out = v.get<std::string>();
    }
  }

  template <typename T, typename Parse>
  void read_enum(const std::string& key, T& out, Parse parse) {
    std::string s;
    if (!j_.contains(key)) {
      seen_.insert(key);
      return;
    }
    read(key, s);
    try {
      out = parse(s);
    } catch (const ContractError& e) {
      throw ConfigError(at(key), e.what());
    }
  }

  ConfigSection child(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return ConfigSection(it == j_.end() ? nlohmann::json() : *it, at(key));
  }

  const nlohmann::json* raw(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError(at(it.key()), "unknown key");
  }

 private:
  nlohmann::json j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename Fn>
void validated(const std::string& section, Fn&& fn) {
  try {
    fn();
  } catch (const ContractError& e) {
    // Module messages carry their own "module: " prefix; the section path replaces it.
    std::string what = e.what();
    const auto colon = what.find(": ");
    if (colon != std::string::npos && what.find(' ') > colon) what = what.substr(colon + 2);
    throw ConfigError(section, what);
  }
}

}  // namespace detail

/// Missing keys keep their defaults; unknown keys and type mismatches
/// throw ConfigError naming the field path.
inline RunConfig parse_run_config(const nlohmann::json& j) {
  RunConfig c;
  detail::ConfigSection root(j, "");
  int version = RunConfig::kSchemaVersion;
  root.read("version", version);
  if (version != RunConfig::kSchemaVersion) {
    throw ConfigError("version", "unsupported schema version " + std::to_string(version));
  }
  root.read("name", c.name);
  root.read("seed", c.seed);

  auto kge = root.child("kge");
  kge.read_enum("method", c.kge.method, parse_method);
  kge.read("dim", c.kge.dim);
  kge.read("epochs", c.kge.epochs);
  kge.read("learning_rate", c.kge.learning_rate);
  kge.read("margin", c.kge.margin);
  kge.read("negatives", c.kge.negatives);
  kge.read("batch_size", c.kge.batch_size);
  kge.read("negative_refresh", c.kge.negative_refresh);
  kge.finish();

  auto data = root.child("data");
  data.read_enum("mode", c.data.mode, parse_mode);
  using Field = std::pair<const char*, std::size_t*>;
  for (auto [key, field] : {Field{"vocab_size", &c.data.vocab_size}, Field{"passage_length", &c.data.passage_length},
                            Field{"train_examples", &c.data.train_examples},
                            Field{"dev_examples", &c.data.dev_examples}, Field{"candidates", &c.data.candidates},
                            Field{"names", &c.data.names}, Field{"surnames", &c.data.surnames},
                            Field{"verbs", &c.data.verbs}, Field{"fillers", &c.data.fillers},
                            Field{"cues", &c.data.cues}, Field{"distractor_triples", &c.data.distractor_triples}}) {
    data.read(key, *field);
  }
  data.finish();

  auto model = root.child("model");
  model.read("hidden", c.model.hidden);
  model.read("heads", c.model.heads);
  model.read("layers", c.model.layers);
  model.read("ffn_dim", c.model.ffn_dim);
  model.read("conv_width", c.model.conv_width);
  model.read("dropout", c.model.dropout);
  model.read("min_count", c.model.min_count);
  model.read("max_span", c.model.max_span);
  model.read("candidate_decoding", c.model.candidate_decoding);
  if (const auto* plugs = model.raw("plugs")) {
    if (!plugs->is_array()) throw ConfigError("model.plugs", "expected a list of plug positions");
    c.model.plugs.clear();
    for (std::size_t i = 0; i < plugs->size(); ++i) {
      const auto& p = (*plugs)[i];
      const std::string path = "model.plugs[" + std::to_string(i) + "]";
      if (!p.is_string()) throw ConfigError(path, "expected a string, got " + p.dump());
      try {
        c.model.plugs.push_back(parse_plug(p.get<std::string>()));
      } catch (const ContractError& e) {
        throw ConfigError(path, e.what());
      }
    }
  }
  model.finish();

  auto& pc = c.model.piecer;
  auto piecer = root.child("piecer");
  piecer.read("layers", pc.layers);
  piecer.read("heads", pc.heads);
  piecer.read("ffn_dim", pc.ffn_dim);
  piecer.read("dropout", pc.dropout);
  piecer.read("leaky_slope", pc.leaky_slope);
  piecer.read_enum("combiner", pc.combiner, parse_combiner);
  piecer.read("use_injection", pc.use_injection);
  piecer.read("use_reasoning", pc.use_reasoning);
  piecer.read("use_self_matching", pc.use_self_matching);
  piecer.read("vector_gate", pc.vector_gate);
  piecer.read("highway_bias_init", pc.highway_bias_init);
  auto edges = piecer.child("edges");
  edges.read("knowledge", pc.edges.knowledge);
  edges.read("coreference", pc.edges.coreference);
  edges.read("self_loop", pc.edges.self_loop);
  edges.finish();
  piecer.finish();

  auto train = root.child("train");
  train.read("epochs", c.train.epochs);
  train.read("batch_size", c.train.batch_size);
  train.read("learning_rate", c.train.learning_rate);
  train.read("ema_decay", c.train.ema_decay);
  train.read("beta1", c.train.adamw.beta1);
  train.read("beta2", c.train.adamw.beta2);
  train.read("eps", c.train.adamw.eps);
  train.read("weight_decay", c.train.adamw.weight_decay);
  train.read("eval_train", c.train.eval_train);
  train.read("stop_at_train_em", c.train.stop_at_train_em);
  train.finish();

  auto gc = root.child("gradcheck");
  gc.read("h", c.gradcheck.h);
  gc.read("tolerance", c.gradcheck.tolerance);
  gc.read("samples", c.gradcheck.samples);
  gc.read("fixtures", c.gradcheck.fixtures);
  gc.finish();
  root.finish();

  c.propagate_seed();
  // The plug width follows the encoder; knowledge_dim follows the embedding table at run time.
  pc.hidden = c.model.hidden;
  pc.knowledge_dim = c.kge.dim;
  detail::validated("kge", [&] { c.kge.validate(); });
  detail::validated("data", [&] { c.data.validate(); });
  detail::validated("model", [&] { c.model.validate(); });
  detail::validated("piecer", [&] { pc.validate(); });
  detail::validated("train", [&] { c.train.validate(); });
  if (!(c.gradcheck.h > 0.0)) throw ConfigError("gradcheck.h", "must be > 0");
  if (!(c.gradcheck.tolerance > 0.0)) throw ConfigError("gradcheck.tolerance", "must be > 0");
  if (c.gradcheck.samples == 0 || c.gradcheck.fixtures == 0) {
    throw ConfigError("gradcheck", "samples and fixtures must be >= 1");
  }
  return c;
}

/// `assignment` is "a.b.c=value"; the value is read as JSON when it parses
/// and as a bare string otherwise (so mode=pattern works unquoted).
inline void apply_override(nlohmann::json& root, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("", "override '" + assignment + "' is not of the form key.path=value");
  }
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  nlohmann::json* node = &root;
  std::size_t start = 0;
  for (;;) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw ConfigError(path, "empty path component");
    if (node->is_null()) *node = nlohmann::json::object();
    if (!node->is_object()) throw ConfigError(path.substr(0, start ? start - 1 : 0), "not a section");
    if (dot == std::string::npos) {
      (*node)[key] = std::move(value);
      return;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

inline nlohmann::json read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", "cannot open config file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return nlohmann::json::parse(buf.str());
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("", path + ": invalid JSON: " + e.what());
  }
}

/// File (optional) < --set overrides < --seed.
inline RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides,
                                 std::optional<std::uint64_t> seed = std::nullopt) {
  nlohmann::json j = path.empty() ? nlohmann::json::object() : read_config_file(path);
  for (const auto& o : overrides) apply_override(j, o);
  if (seed) j["seed"] = *seed;
  return parse_run_config(j);
}

}  // namespace piecer
