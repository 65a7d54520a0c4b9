#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "piecer/autograd.hpp"
#include "piecer/dataset.hpp"
#include "piecer/errors.hpp"
#include "piecer/joint_graph.hpp"
#include "piecer/kg.hpp"
#include "piecer/kge.hpp"
#include "piecer/metrics.hpp"
#include "piecer/optim.hpp"
#include "piecer/piecer.hpp"
#include "piecer/rng.hpp"

namespace piecer {

inline constexpr std::string_view kUnk = "<unk>";
inline constexpr std::string_view kSep = "<sep>";

/// Lowercased surface forms; id 0 is <unk>, id 1 is <sep>, the rest sorted.
class Vocab {
 public:
  Vocab() : words_{std::string(kUnk), std::string(kSep)} { reindex(); }
  explicit Vocab(std::vector<std::string> words) : words_(std::move(words)) {
    if (words_.size() < 2 || words_[0] != kUnk || words_[1] != kSep) {
      throw FormatError("vocab: must start with <unk> and <sep>");
    }
    reindex();
  }

  static Vocab build(const std::vector<MrcExample>& examples, std::size_t min_count = 1) {
    std::map<std::string, std::size_t> counts;
    for (const auto& ex : examples) {
      for (const auto& t : ex.query) ++counts[to_lower(t.surface)];
      for (const auto& t : ex.passage) ++counts[to_lower(t.surface)];
    }
    std::vector<std::string> words{std::string(kUnk), std::string(kSep)};
    for (const auto& [w, c] : counts)
      if (c >= min_count && w != kUnk && w != kSep) words.push_back(w);
    return Vocab(std::move(words));
  }

  std::size_t id(std::string_view surface) const {
    auto it = index_.find(to_lower(surface));
    return it == index_.end() ? 0 : it->second;
  }
  std::size_t size() const { return words_.size(); }
  const std::vector<std::string>& words() const { return words_; }

 private:
  void reindex() {
    index_.clear();
    for (std::size_t i = 0; i < words_.size(); ++i) {
      if (!index_.emplace(words_[i], i).second) throw FormatError("vocab: duplicate word '" + words_[i] + "'");
    }
  }

  std::vector<std::string> words_;
  std::unordered_map<std::string, std::size_t> index_;
};

enum class PlugPosition { kAfterEmbedding, kBeforePrediction };

inline const char* plug_name(PlugPosition p) {
  return p == PlugPosition::kAfterEmbedding ? "after-embedding" : "before-prediction";
}

inline PlugPosition parse_plug(const std::string& s) {
  if (s == "after-embedding") return PlugPosition::kAfterEmbedding;
  if (s == "before-prediction") return PlugPosition::kBeforePrediction;
  throw ContractError("unknown plug position '" + s + "' (expected after-embedding or before-prediction)");
}

struct MrcConfig {
  std::size_t hidden = 64;
  std::size_t heads = 4;
  std::size_t layers = 2;
  std::size_t ffn_dim = 128;
  std::size_t conv_width = 3;  // odd; 0 drops the convolution sublayer
  double dropout = 0.1;
  std::size_t min_count = 1;
  std::size_t max_span = 30;
  bool candidate_decoding = true;
  std::vector<PlugPosition> plugs;
  PiecerConfig piecer;  // shared by both plug positions; hidden follows the encoder

  void validate() const {
    if (hidden == 0 || heads == 0 || hidden % heads != 0) {
      throw ContractError("model: hidden " + std::to_string(hidden) + " must be a positive multiple of heads " +
                          std::to_string(heads));
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ContractError("model: dropout must lie in [0, 1)");
    if (conv_width % 2 == 0 && conv_width != 0) throw ContractError("model: conv_width must be odd or 0");
    for (std::size_t i = 0; i < plugs.size(); ++i)
      for (std::size_t j = i + 1; j < plugs.size(); ++j)
        if (plugs[i] == plugs[j]) throw ContractError(std::string("model: plug position repeated: ") + plug_name(plugs[i]));
  }

  bool has_plug(PlugPosition p) const { return std::find(plugs.begin(), plugs.end(), p) != plugs.end(); }
};

inline nlohmann::json to_json(const MrcConfig& c) {
  nlohmann::json plugs = nlohmann::json::array();
  for (auto p : c.plugs) plugs.push_back(plug_name(p));
  return {{"hidden", c.hidden},       {"heads", c.heads},         {"layers", c.layers},
          {"ffn_dim", c.ffn_dim},     {"conv_width", c.conv_width}, {"dropout", c.dropout},     {"min_count", c.min_count},
          {"max_span", c.max_span},   {"candidate_decoding", c.candidate_decoding},
          {"plugs", std::move(plugs)}, {"piecer", to_json(c.piecer)}};
}

/// An example with everything the forward pass needs precomputed.
struct PreparedExample {
  const MrcExample* example = nullptr;
  std::vector<std::size_t> ids;       // query, <sep>, passage
  std::vector<std::size_t> segments;  // 0 query, 1 separator, 2 passage
  JointGraph graph;
  KnowledgeRows knowledge;
  std::vector<std::size_t> gold_starts, gold_ends;
};

/// `source` may be null when no KG is in play; the joint graph then has no
/// knowledge edges and injection has nothing to fuse.
inline std::vector<PreparedExample> prepare(const std::vector<MrcExample>& examples, const Vocab& vocab,
                                            const KnowledgeSource* source) {
  static const KnowledgeGraph empty;
  const KnowledgeGraph& kg = source ? source->graph() : empty;
  std::vector<PreparedExample> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) {
    PreparedExample p;
    p.example = &ex;
    for (const auto& t : ex.query) {
      p.ids.push_back(vocab.id(t.surface));
      p.segments.push_back(0);
    }
    p.ids.push_back(1);
    p.segments.push_back(1);
    for (const auto& t : ex.passage) {
      p.ids.push_back(vocab.id(t.surface));
      p.segments.push_back(2);
    }
    p.graph = build_joint_graph(ex.query, ex.passage, kg);
    if (source) {
      p.knowledge = source->rows_for(p.graph.nodes());
    } else {
      p.knowledge.mean = Tensor::matrix(std::max<std::size_t>(1, p.graph.node_count()), 1);
    }
    for (const Span& s : gold_spans(ex)) {
      p.gold_starts.push_back(s.start);
      p.gold_ends.push_back(s.end);
    }
    for (auto* v : {&p.gold_starts, &p.gold_ends}) {
      std::sort(v->begin(), v->end());
      v->erase(std::unique(v->begin(), v->end()), v->end());
    }
    out.push_back(std::move(p));
  }
  return out;
}

namespace detail {

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a * 0x9E3779B97F4A7C15ULL + b + 0x632BE59BD9B4E019ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline Tensor uniform_tensor(std::size_t r, std::size_t c, double bound, Rng& rng) {
  Tensor t = Tensor::matrix(r, c);
  for (double& x : t.values()) x = rng.uniform(-bound, bound);
  return t;
}

inline Tensor sinusoid(std::size_t n, std::size_t d) {
  Tensor t = Tensor::matrix(n, d);
  for (std::size_t p = 0; p < n; ++p) {
    for (std::size_t i = 0; i < d; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(d));
      t(p, i) = i % 2 == 0 ? std::sin(static_cast<double>(p) * freq) : std::cos(static_cast<double>(p) * freq);
    }
  }
  return t;
}

}  // namespace detail

struct EncoderLayerParams {
  std::vector<Parameter> conv;  // one hidden x hidden tap per offset
  Parameter conv_bias, ln0_gain, ln0_bias;
  Parameter query, key, value, output;
  Parameter ln1_gain, ln1_bias;
  Parameter fc1_weight, fc1_bias, fc2_weight, fc2_bias;
  Parameter ln2_gain, ln2_bias;
};

struct SpanScores {
  Var start;  // 1 x passage length
  Var end;
};

/// Embedding + post-LN encoder (convolution, self-attention and feed-forward
/// sublayers per block) + linear start/end scorers,
/// with PIECER optionally plugged after the embedding and/or before the
/// span head. Each plug position owns an independent PiecerModel.
class MrcModel {
 public:
  MrcModel(MrcConfig cfg, Vocab vocab, std::size_t knowledge_dim, std::uint64_t seed)
      : cfg_(std::move(cfg)), vocab_(std::move(vocab)) {
    cfg_.validate();
    cfg_.piecer.hidden = cfg_.hidden;
    cfg_.piecer.knowledge_dim = knowledge_dim;
    const std::size_t h = cfg_.hidden;
    Rng rng(seed);
    tok_ = Parameter("mrc.token_embedding", detail::uniform_tensor(vocab_.size(), h, 0.5, rng));
    seg_ = Parameter("mrc.segment_embedding", detail::uniform_tensor(3, h, 0.5, rng));
    emb_ln_gain_ = Parameter("mrc.embedding_ln.gain", Tensor::matrix(1, h, 1.0));
    emb_ln_bias_ = Parameter("mrc.embedding_ln.bias", Tensor::matrix(1, h));
    layers_.resize(cfg_.layers);
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
      auto& L = layers_[l];
      const std::string p = "mrc.encoder." + std::to_string(l) + ".";
      for (std::size_t k = 0; k < cfg_.conv_width; ++k) {
        L.conv.emplace_back(p + "conv." + std::to_string(k), detail::xavier(h, h, rng));
      }
      L.conv_bias = Parameter(p + "conv_bias", Tensor::matrix(1, h));
      L.ln0_gain = Parameter(p + "ln0.gain", Tensor::matrix(1, h, 1.0));
      L.ln0_bias = Parameter(p + "ln0.bias", Tensor::matrix(1, h));
      L.query = Parameter(p + "query", detail::xavier(h, h, rng));
      L.key = Parameter(p + "key", detail::xavier(h, h, rng));
      L.value = Parameter(p + "value", detail::xavier(h, h, rng));
      L.output = Parameter(p + "output", detail::xavier(h, h, rng));
      L.ln1_gain = Parameter(p + "ln1.gain", Tensor::matrix(1, h, 1.0));
      L.ln1_bias = Parameter(p + "ln1.bias", Tensor::matrix(1, h));
      L.fc1_weight = Parameter(p + "fc1_weight", detail::xavier(h, cfg_.ffn_dim, rng));
      L.fc1_bias = Parameter(p + "fc1_bias", Tensor::matrix(1, cfg_.ffn_dim));
      L.fc2_weight = Parameter(p + "fc2_weight", detail::xavier(cfg_.ffn_dim, h, rng));
      L.fc2_bias = Parameter(p + "fc2_bias", Tensor::matrix(1, h));
      L.ln2_gain = Parameter(p + "ln2.gain", Tensor::matrix(1, h, 1.0));
      L.ln2_bias = Parameter(p + "ln2.bias", Tensor::matrix(1, h));
    }
    w_start_ = Parameter("mrc.span.start", detail::xavier(h, 1, rng));
    w_end_ = Parameter("mrc.span.end", detail::xavier(h, 1, rng));
    // Plug parameters come from their own seed streams, so adding a plug
    // leaves the base initialization untouched.
    if (cfg_.has_plug(PlugPosition::kAfterEmbedding)) {
      plug_emb_ = std::make_unique<PiecerModel>(cfg_.piecer, detail::mix_seed(seed, 1), "piecer.after_embedding");
    }
    if (cfg_.has_plug(PlugPosition::kBeforePrediction)) {
      plug_pred_ = std::make_unique<PiecerModel>(cfg_.piecer, detail::mix_seed(seed, 2), "piecer.before_prediction");
    }
  }

  MrcModel(const MrcModel&) = delete;
  MrcModel& operator=(const MrcModel&) = delete;

  const MrcConfig& config() const { return cfg_; }
  const Vocab& vocab() const { return vocab_; }
  PiecerModel* plug(PlugPosition p) {
    return p == PlugPosition::kAfterEmbedding ? plug_emb_.get() : plug_pred_.get();
  }

  /// Every parameter in checkpoint order.
  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out = base_parameters();
    for (auto* m : {plug_emb_.get(), plug_pred_.get()}) {
      if (!m) continue;
      auto ps = m->parameters();
      out.insert(out.end(), ps.begin(), ps.end());
    }
    return out;
  }

  /// Parameters touched by the forward pass under the current toggles.
  std::vector<Parameter*> trainable_parameters() {
    std::vector<Parameter*> out = base_parameters();
    for (auto* m : {plug_emb_.get(), plug_pred_.get()}) {
      if (!m) continue;
      auto ps = m->active_parameters();
      out.insert(out.end(), ps.begin(), ps.end());
    }
    return out;
  }

  SpanScores forward(Tape& tape, const PreparedExample& ex, ForwardContext& ctx, PiecerTrace* trace = nullptr) {
    const std::size_t n = ex.ids.size();
    const std::size_t nq = ex.example->query.size();
    if (positions_.rows() < n || positions_.cols() != cfg_.hidden) positions_ = detail::sinusoid(std::max<std::size_t>(n, 64), cfg_.hidden);
    Tensor pos = Tensor::matrix(n, cfg_.hidden);
    std::copy_n(positions_.values().begin(), n * cfg_.hidden, pos.values().begin());

    Var x = add(gather_rows(tape.param(tok_), ex.ids), gather_rows(tape.param(seg_), ex.segments));
    x = add(x, tape.constant(std::move(pos)));
    x = layer_norm(x, tape.param(emb_ln_gain_), tape.param(emb_ln_bias_));
    x = ctx.dropout(x, cfg_.dropout);
    if (plug_emb_) x = apply_plug(x, ex, nq, *plug_emb_, ctx, trace);
    for (auto& L : layers_) x = encoder_layer(tape, x, L, ctx);
    if (plug_pred_) x = apply_plug(x, ex, nq, *plug_pred_, ctx, trace);

    std::vector<std::size_t> rows(n - nq - 1);
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = nq + 1 + i;
    const Var passage = gather_rows(x, rows);
    return {transpose(matmul(passage, tape.param(w_start_))), transpose(matmul(passage, tape.param(w_end_)))};
  }

 private:
  std::vector<Parameter*> base_parameters() {
    std::vector<Parameter*> out{&tok_, &seg_, &emb_ln_gain_, &emb_ln_bias_};
    for (auto& L : layers_) {
      if (!L.conv.empty()) {
        for (auto& c : L.conv) out.push_back(&c);
        out.insert(out.end(), {&L.conv_bias, &L.ln0_gain, &L.ln0_bias});
      }
      for (Parameter* p : {&L.query, &L.key, &L.value, &L.output, &L.ln1_gain, &L.ln1_bias, &L.fc1_weight,
                           &L.fc1_bias, &L.fc2_weight, &L.fc2_bias, &L.ln2_gain, &L.ln2_bias}) {
        out.push_back(p);
      }
    }
    out.push_back(&w_start_);
    out.push_back(&w_end_);
    return out;
  }

  // PIECER sees query and passage rows only; the separator row is skipped.
  Var apply_plug(const Var& x, const PreparedExample& ex, std::size_t nq, PiecerModel& plug, ForwardContext& ctx,
                 PiecerTrace* trace) {
    if (!plug.config().any_enabled()) return x;
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < x.rows(); ++i)
      if (i != nq) rows.push_back(i);
    const Var sub = gather_rows(x, rows);
    return assign_rows(x, rows, piecer_forward(sub, ex.graph, ex.knowledge, plug, ctx, trace));
  }

  // Zero-padded 1-D convolution along the sequence:
  //   out_i = relu(b + sum_k x_{i+k-w/2} C_k).
  Var convolve(Tape& tape, const Var& x, EncoderLayerParams& L) {
    const std::size_t n = x.rows();
    const std::size_t half = L.conv.size() / 2;
    Var acc;
    for (std::size_t k = 0; k < L.conv.size(); ++k) {
      Var tap = matmul(x, tape.param(L.conv[k]));
      if (k != half) {
        Tensor shift = Tensor::matrix(n, n);
        for (std::size_t i = 0; i < n; ++i) {
          const std::ptrdiff_t j = static_cast<std::ptrdiff_t>(i + k) - static_cast<std::ptrdiff_t>(half);
          if (j >= 0 && j < static_cast<std::ptrdiff_t>(n)) shift(i, static_cast<std::size_t>(j)) = 1.0;
        }
        tap = matmul(tape.constant(std::move(shift)), tap);
      }
      acc = k == 0 ? tap : add(acc, tap);
    }
    return relu(add(acc, tape.param(L.conv_bias)));
  }

  Var encoder_layer(Tape& tape, Var x, EncoderLayerParams& L, ForwardContext& ctx) {
    const std::size_t dh = cfg_.hidden / cfg_.heads;
    if (!L.conv.empty()) {
      x = layer_norm(add(x, ctx.dropout(convolve(tape, x, L), cfg_.dropout)), tape.param(L.ln0_gain),
                     tape.param(L.ln0_bias));
    }
    const Var q = matmul(x, tape.param(L.query));
    const Var k = matmul(x, tape.param(L.key));
    const Var v = matmul(x, tape.param(L.value));
    std::vector<Var> heads;
    for (std::size_t i = 0; i < cfg_.heads; ++i) {
      const Var qi = slice_cols(q, i * dh, (i + 1) * dh);
      const Var ki = slice_cols(k, i * dh, (i + 1) * dh);
      const Var vi = slice_cols(v, i * dh, (i + 1) * dh);
      const Var att = softmax_rows(scalar_mix(matmul(qi, transpose(ki)), 1.0 / std::sqrt(static_cast<double>(dh)), 0.0));
      heads.push_back(matmul(ctx.dropout(att, cfg_.dropout), vi));
    }
    const Var attended = matmul(concat_cols(heads), tape.param(L.output));
    Var y = layer_norm(add(x, ctx.dropout(attended, cfg_.dropout)), tape.param(L.ln1_gain), tape.param(L.ln1_bias));
    const Var hidden = relu(add(matmul(y, tape.param(L.fc1_weight)), tape.param(L.fc1_bias)));
    const Var ff = add(matmul(ctx.dropout(hidden, cfg_.dropout), tape.param(L.fc2_weight)), tape.param(L.fc2_bias));
    return layer_norm(add(y, ctx.dropout(ff, cfg_.dropout)), tape.param(L.ln2_gain), tape.param(L.ln2_bias));
  }

  MrcConfig cfg_;
  Vocab vocab_;
  Parameter tok_, seg_, emb_ln_gain_, emb_ln_bias_;
  std::vector<EncoderLayerParams> layers_;
  Parameter w_start_, w_end_;
  std::unique_ptr<PiecerModel> plug_emb_, plug_pred_;
  Tensor positions_;
};

/// Marginal span cross-entropy: -log sum_{gold} p_start - log sum_{gold} p_end.
inline Var span_loss(const SpanScores& scores, const std::vector<std::size_t>& gold_starts,
                     const std::vector<std::size_t>& gold_ends) {
  const std::size_t n = scores.start.cols();
  for (std::size_t g : gold_starts)
    if (g >= n) throw ContractError("span loss: gold start " + std::to_string(g) + " outside " + std::to_string(n));
  for (std::size_t g : gold_ends)
    if (g >= n) throw ContractError("span loss: gold end " + std::to_string(g) + " outside " + std::to_string(n));
  return add(neg_log_marginal(scores.start, gold_starts), neg_log_marginal(scores.end, gold_ends));
}

struct SpanPrediction {
  std::size_t start = 0;
  std::size_t end = 0;
  double score = 0.0;
  std::string text;
};

/// Candidate mode (non-null `candidates`): best start[s] + end[t] over the
/// list. Free mode: best over s <= t with t - s <= max_span. Ties go to the
/// smaller s, then the smaller t.
inline SpanPrediction decode_span(std::span<const double> start, std::span<const double> end,
                                  const std::vector<Candidate>* candidates, std::size_t max_span = 30) {
  if (start.size() != end.size()) throw DimensionError("decode_span: start and end lengths differ");
  SpanPrediction best;
  bool found = false;
  auto consider = [&](std::size_t s, std::size_t t) {
    const double sc = start[s] + end[t];
    if (!found || sc > best.score || (sc == best.score && (s < best.start || (s == best.start && t < best.end)))) {
      best.start = s;
      best.end = t;
      best.score = sc;
      found = true;
    }
  };
  if (candidates) {
    if (candidates->empty()) throw ContractError("decode_span: empty candidate list");
    for (const Candidate& c : *candidates) {
      if (c.start > c.end || c.end >= start.size()) throw ContractError("decode_span: candidate outside passage");
      consider(c.start, c.end);
    }
  } else {
    if (start.empty()) throw ContractError("decode_span: empty passage");
    for (std::size_t s = 0; s < start.size(); ++s)
      for (std::size_t t = s; t < start.size() && t - s <= max_span; ++t) consider(s, t);
  }
  return best;
}

struct ExamplePrediction {
  std::string id;
  SpanPrediction span;
  EmF1 metrics;
};

struct EvalReport {
  double em = 0.0;
  double f1 = 0.0;
  std::vector<ExamplePrediction> predictions;
};

inline SpanPrediction predict(MrcModel& model, const PreparedExample& ex) {
  Tape tape;
  ForwardContext ctx(false, 0);
  const auto scores = model.forward(tape, ex, ctx);
  const auto& cands = ex.example->candidates;
  const bool use_candidates = model.config().candidate_decoding && !cands.empty();
  auto span = decode_span(scores.start.value().values(), scores.end.value().values(), use_candidates ? &cands : nullptr,
                          model.config().max_span);
  span.text = join_tokens(ex.example->passage, span.start, span.end);
  return span;
}

/// Mean EM/F1 with candidate-restricted decoding (when the config asks for it).
inline EvalReport evaluate(MrcModel& model, const std::vector<PreparedExample>& data) {
  EvalReport rep;
  for (const auto& ex : data) {
    ExamplePrediction p{ex.example->id, predict(model, ex), {}};
    p.metrics = em_f1(p.span.text, ex.example->answers);
    rep.em += p.metrics.em;
    rep.f1 += p.metrics.f1;
    rep.predictions.push_back(std::move(p));
  }
  if (!data.empty()) {
    rep.em /= static_cast<double>(data.size());
    rep.f1 /= static_cast<double>(data.size());
  }
  return rep;
}

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  double ema_decay = 0.9999;
  AdamWConfig adamw;
  bool eval_train = false;
  double stop_at_train_em = 0.0;  // > 0: stop once train EM reaches this value

  void validate() const {
    if (epochs == 0) throw ContractError("train: epochs must be >= 1");
    if (batch_size == 0) throw ContractError("train: batch_size must be >= 1");
    if (!(learning_rate >= 0.0)) throw ContractError("train: learning_rate must be >= 0");
    if (!(ema_decay >= 0.0 && ema_decay < 1.0)) throw ContractError("train: ema_decay must lie in [0, 1)");
  }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"ema_decay", c.ema_decay},
          {"beta1", c.adamw.beta1},
          {"beta2", c.adamw.beta2},
          {"eps", c.adamw.eps},
          {"weight_decay", c.adamw.weight_decay},
          {"eval_train", c.eval_train},
          {"stop_at_train_em", c.stop_at_train_em}};
}

struct EpochMetrics {
  std::size_t epoch = 0;
  double loss = 0.0;  // mean training loss
  double lr = 0.0;    // rate of the epoch's last step
  std::optional<double> dev_em, dev_f1, train_em, train_f1;
};

inline nlohmann::json to_json(const EpochMetrics& m) {
  nlohmann::json j = {{"epoch", m.epoch}, {"loss", m.loss}, {"lr", m.lr}};
  if (m.dev_em) j["dev_em"] = *m.dev_em;
  if (m.dev_f1) j["dev_f1"] = *m.dev_f1;
  if (m.train_em) j["train_em"] = *m.train_em;
  if (m.train_f1) j["train_f1"] = *m.train_f1;
  return j;
}

struct TrainResult {
  std::vector<EpochMetrics> epochs;
  std::size_t best_epoch = 0;
};

/// AdamW over mini-batches under the slanted triangular schedule, EMA shadow
/// after every step, evaluation with the shadow weights after every epoch.
/// On return the model holds the shadow weights of the best epoch (highest
/// dev F1, earliest on ties; the last epoch without a dev set).
inline TrainResult train_mrc(MrcModel& model, const std::vector<PreparedExample>& train,
                             const std::vector<PreparedExample>& dev, const TrainConfig& cfg, std::uint64_t seed,
                             const std::function<void(const EpochMetrics&)>& on_epoch = {}) {
  cfg.validate();
  if (train.empty()) throw ContractError("train: empty training set");
  auto params = model.trainable_parameters();
  AdamW opt(params, cfg.adamw);
  Ema ema(params, cfg.ema_decay);
  const std::size_t batches = (train.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total = batches * cfg.epochs;
  Rng rng(seed);
  TrainResult result;
  std::vector<Tensor> best;
  double best_f1 = -1.0;
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto order = rng.permutation(train.size());
    EpochMetrics m;
    m.epoch = epoch;
    for (std::size_t b = 0; b < batches; ++b) {
      opt.zero_grad();
      const std::size_t lo = b * cfg.batch_size;
      const std::size_t hi = std::min(train.size(), lo + cfg.batch_size);
      const double scale = 1.0 / static_cast<double>(hi - lo);
      for (std::size_t i = lo; i < hi; ++i) {
        const auto& ex = train[order[i]];
        Tape tape;
        ForwardContext ctx(true, detail::mix_seed(seed, step * train.size() + order[i]));
        double value = 0.0;
        try {
          const auto scores = model.forward(tape, ex, ctx);
          const Var loss = span_loss(scores, ex.gold_starts, ex.gold_ends);
          value = loss.value()[0];
          tape.backward(scalar_mix(loss, scale, 0.0));
        } catch (const NonFiniteError& e) {
          throw TrainingError("train: diverged in epoch " + std::to_string(epoch) + ": " + e.what());
        }
        if (!std::isfinite(value)) throw TrainingError("train: non-finite loss in epoch " + std::to_string(epoch));
        m.loss += value;
      }
      ++step;
      m.lr = lr_at(step, total, cfg.learning_rate);
      opt.step(m.lr);
      for (const Parameter* p : params) {
        if (!p->value.all_finite()) {
          throw TrainingError("train: parameter " + p->name + " diverged in epoch " + std::to_string(epoch));
        }
      }
      ema.update(params);
    }
    m.loss /= static_cast<double>(train.size());
    ema.swap(params);
    if (!dev.empty()) {
      const auto r = evaluate(model, dev);
      m.dev_em = r.em;
      m.dev_f1 = r.f1;
    }
    if (cfg.eval_train) {
      const auto r = evaluate(model, train);
      m.train_em = r.em;
      m.train_f1 = r.f1;
    }
    const double score = m.dev_f1.value_or(0.0);
    if (dev.empty() || score > best_f1) {
      best_f1 = score;
      result.best_epoch = epoch;
      best.clear();
      for (const Parameter* p : params) best.push_back(p->value);
    }
    ema.swap(params);
    result.epochs.push_back(m);
    if (on_epoch) on_epoch(m);
    if (cfg.stop_at_train_em > 0.0 && m.train_em && *m.train_em >= cfg.stop_at_train_em) break;
  }
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = best[i];
  return result;
}

}  // namespace piecer
