#include <gtest/gtest.h>

#include <cmath>

#include "piecer/gradcheck.hpp"
#include "piecer/mrc.hpp"

using namespace piecer;

namespace {

MrcConfig tiny_config() {
  MrcConfig c;
  c.hidden = 8;
  c.heads = 2;
  c.layers = 1;
  c.ffn_dim = 8;
  c.dropout = 0.0;
  c.piecer.layers = 1;
  c.piecer.heads = 2;
  c.piecer.ffn_dim = 8;
  c.piecer.dropout = 0.0;
  return c;
}

std::vector<MrcExample> toy_examples() {
  return {make_example("a", "the dog Rex barks . the cat Tom sleeps .", "the canine @placeholder barks .",
                       {{2, 2, "Rex"}, {7, 7, "Tom"}}, {"Rex"}),
          make_example("b", "Ann met the wolf . Bob saw a bird .", "@placeholder met the animal .",
                       {{0, 0, "Ann"}, {5, 5, "Bob"}}, {"Ann"})};
}

KnowledgeGraph toy_kg() {
  KnowledgeGraph g;
  g.add_triple("dog", "IsA", "canine");
  g.add_triple("wolf", "IsA", "animal");
  g.add_triple("cat", "IsA", "animal");
  return g;
}

EntityEmbeddingTable toy_table(const KnowledgeGraph& g) {
  KgeConfig k;
  k.dim = 4;
  k.seed = 3;
  return init_table(g, k);
}

std::vector<double> scores_of(MrcModel& m, const PreparedExample& ex, bool train = false, std::uint64_t seed = 0) {
  Tape tape;
  ForwardContext ctx(train, seed);
  auto s = m.forward(tape, ex, ctx);
  const auto st = s.start.value().values();
  const auto e = s.end.value().values();
  std::vector<double> out(st.begin(), st.end());
  out.insert(out.end(), e.begin(), e.end());
  return out;
}

}  // namespace

TEST(Vocab, BuildAndUnknown) {
  const auto ex = toy_examples();
  const auto v = Vocab::build(ex);
  EXPECT_EQ(v.words()[0], "<unk>");
  EXPECT_EQ(v.words()[1], "<sep>");
  EXPECT_TRUE(std::is_sorted(v.words().begin() + 2, v.words().end()));
  EXPECT_EQ(v.id("REX"), v.id("rex"));
  EXPECT_EQ(v.id("zebra"), 0u);
  const auto v2 = Vocab::build(ex, 2);
  EXPECT_NE(v2.id("the"), 0u);
  EXPECT_EQ(v2.id("rex"), 0u);
  EXPECT_THROW(Vocab({"a", "b"}), FormatError);
}

TEST(DecodeSpan, CandidateExample) {
  const std::vector<double> start{5, 0, 0, 1, 0}, end{5, 0, 0, 0, 1};
  const std::vector<Candidate> cands{{0, 0, "x"}, {3, 4, "y"}};
  const auto p = decode_span(start, end, &cands);
  EXPECT_EQ(p.start, 0u);
  EXPECT_EQ(p.end, 0u);
  EXPECT_EQ(p.score, 10.0);
}

TEST(DecodeSpan, SingleCandidateWinsRegardless) {
  const std::vector<double> start{9, -3, 0}, end{9, -5, 0};
  const std::vector<Candidate> cands{{1, 1, "x"}};
  const auto p = decode_span(start, end, &cands);
  EXPECT_EQ(p.start, 1u);
  EXPECT_EQ(p.end, 1u);
}

TEST(DecodeSpan, UniformFreeModeTieBreak) {
  const std::vector<double> z(6, 0.25);
  const auto p = decode_span(z, z, nullptr);
  EXPECT_EQ(p.start, 0u);
  EXPECT_EQ(p.end, 0u);
}

TEST(DecodeSpan, FreeModeRespectsMaxSpan) {
  const std::vector<double> start{3, 0, 0, 0}, end{0, 0, 0, 3};
  EXPECT_EQ(decode_span(start, end, nullptr, 3).end, 3u);
  const auto p = decode_span(start, end, nullptr, 2);
  EXPECT_LE(p.end - p.start, 2u);
  EXPECT_EQ(p.score, 3.0);
}

TEST(DecodeSpan, Errors) {
  const std::vector<double> s{1, 2};
  const std::vector<Candidate> none;
  EXPECT_THROW(decode_span(s, s, &none), ContractError);
  const std::vector<Candidate> bad{{1, 2, "x"}};
  EXPECT_THROW(decode_span(s, s, &bad), ContractError);
  EXPECT_THROW(decode_span(s, std::vector<double>{1}, nullptr), DimensionError);
}

TEST(DecodeSpan, CandidateModeReturnsMember) {
  Rng rng(4);
  for (int k = 0; k < 500; ++k) {
    const std::size_t n = 1 + rng.below(12);
    std::vector<double> s(n), e(n);
    for (std::size_t i = 0; i < n; ++i) s[i] = std::round(rng.uniform(-2, 2)), e[i] = std::round(rng.uniform(-2, 2));
    std::vector<Candidate> c(1 + rng.below(4));
    for (auto& x : c) {
      x.start = rng.below(n);
      x.end = x.start + rng.below(n - x.start);
    }
    const auto p = decode_span(s, e, &c);
    bool member = false;
    double best = -1e300;
    for (const auto& x : c) {
      member = member || (x.start == p.start && x.end == p.end);
      best = std::max(best, s[x.start] + e[x.end]);
    }
    EXPECT_TRUE(member);
    EXPECT_EQ(p.score, best);
  }
}

TEST(SpanLoss, UniformScoresGiveTwoLogN) {
  Tape tape;
  const std::size_t n = 7;
  SpanScores s{tape.constant(Tensor::matrix(1, n, 0.3)), tape.constant(Tensor::matrix(1, n, -1.0))};
  EXPECT_NEAR(span_loss(s, {2}, {4}).value()[0], 2.0 * std::log(7.0), 1e-12);
}

TEST(SpanLoss, ConfidentCorrectGoesToZero) {
  double prev = 1e9;
  for (double mag : {1.0, 5.0, 20.0, 40.0}) {
    Tape tape;
    Tensor st = Tensor::matrix(1, 4), en = Tensor::matrix(1, 4);
    st(0, 1) = mag;
    en(0, 2) = mag;
    const double loss = span_loss({tape.constant(st), tape.constant(en)}, {1}, {2}).value()[0];
    EXPECT_LT(loss, prev);
    prev = loss;
  }
  EXPECT_LT(prev, 1e-15);
}

TEST(SpanLoss, TwoGoldsCoveringAllMass) {
  Tape tape;
  Tensor st = Tensor::matrix(1, 3, -50.0), en = Tensor::matrix(1, 3, -50.0);
  st(0, 0) = st(0, 2) = 10;
  en(0, 0) = en(0, 2) = 10;
  EXPECT_LT(span_loss({tape.constant(st), tape.constant(en)}, {0, 2}, {0, 2}).value()[0], 1e-20);
  EXPECT_THROW(span_loss({tape.constant(st), tape.constant(en)}, {3}, {0}), ContractError);
}

TEST(MrcModel, DisabledPlugsAreIdentity) {
  const auto ex = toy_examples();
  const auto kg = toy_kg();
  const auto table = toy_table(kg);
  KnowledgeSource src(kg, table);
  const auto vocab = Vocab::build(ex);
  auto cfg = tiny_config();
  MrcModel bare(cfg, vocab, table.dim, 5);
  cfg.plugs = {PlugPosition::kAfterEmbedding, PlugPosition::kBeforePrediction};
  cfg.piecer.use_injection = cfg.piecer.use_reasoning = cfg.piecer.use_self_matching = false;
  MrcModel plugged(cfg, vocab, table.dim, 5);
  const auto prepared = prepare(ex, vocab, &src);
  for (const auto& p : prepared) EXPECT_EQ(scores_of(bare, p), scores_of(plugged, p));
  // Plugs draw from their own seed streams: base parameters are unchanged.
  const auto a = bare.parameters();
  const auto b = plugged.parameters();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i]->value, b[i]->value) << a[i]->name;
}

TEST(MrcModel, DeterministicScores) {
  const auto ex = toy_examples();
  const auto vocab = Vocab::build(ex);
  auto cfg = tiny_config();
  cfg.dropout = 0.3;
  cfg.plugs = {PlugPosition::kAfterEmbedding};
  MrcModel a(cfg, vocab, 1, 9), b(cfg, vocab, 1, 9);
  const auto prepared = prepare(ex, vocab, nullptr);
  EXPECT_EQ(scores_of(a, prepared[0]), scores_of(b, prepared[0]));
  EXPECT_EQ(scores_of(a, prepared[0], true, 4), scores_of(b, prepared[0], true, 4));
  EXPECT_NE(scores_of(a, prepared[0], true, 4), scores_of(a, prepared[0], false));
}

TEST(MrcModel, GradientsMatchFiniteDifferences) {
  const auto ex = toy_examples();
  const auto kg = toy_kg();
  const auto table = toy_table(kg);
  KnowledgeSource src(kg, table);
  const auto vocab = Vocab::build(ex);
  auto cfg = tiny_config();
  cfg.plugs = {PlugPosition::kAfterEmbedding, PlugPosition::kBeforePrediction};
  MrcModel m(cfg, vocab, table.dim, 2);
  const auto prepared = prepare(ex, vocab, &src);
  const auto params = m.trainable_parameters();
  const auto report = grad_check(
      [&](Tape& tape) {
        ForwardContext ctx(false, 0);
        const auto s = m.forward(tape, prepared[0], ctx);
        return span_loss(s, prepared[0].gold_starts, prepared[0].gold_ends);
      },
      params, 1e-5, 1);
  EXPECT_LT(report.max_rel_error, 1e-5) << report.worst_parameter;
}

TEST(Train, ZeroLearningRateLeavesParameters) {
  const auto ex = toy_examples();
  const auto vocab = Vocab::build(ex);
  auto cfg = tiny_config();
  MrcModel m(cfg, vocab, 1, 3);
  std::vector<Tensor> before;
  for (auto* p : m.parameters()) before.push_back(p->value);
  const auto prepared = prepare(ex, vocab, nullptr);
  TrainConfig tc;
  tc.epochs = 3;
  tc.batch_size = 1;
  tc.learning_rate = 0.0;
  train_mrc(m, prepared, prepared, tc, 1);
  const auto after = m.parameters();
  for (std::size_t i = 0; i < after.size(); ++i) EXPECT_EQ(after[i]->value, before[i]) << after[i]->name;
}

TEST(Train, MemorizesOneExample) {
  const auto ex = toy_examples();
  const std::vector<MrcExample> one{ex[0]};
  const auto vocab = Vocab::build(one);
  MrcModel m(tiny_config(), vocab, 1, 3);
  const auto prepared = prepare(one, vocab, nullptr);
  TrainConfig tc;
  tc.epochs = 40;
  tc.batch_size = 1;
  tc.learning_rate = 1e-2;
  tc.ema_decay = 0.5;
  tc.eval_train = true;
  const auto r = train_mrc(m, prepared, {}, tc, 1);
  EXPECT_EQ(*r.epochs.back().train_em, 1.0);
  EXPECT_EQ(evaluate(m, prepared).em, 1.0);
}

TEST(Train, SameSeedSameTrajectory) {
  const auto ex = toy_examples();
  const auto vocab = Vocab::build(ex);
  auto run = [&] {
    auto cfg = tiny_config();
    cfg.dropout = 0.2;
    MrcModel m(cfg, vocab, 1, 8);
    const auto prepared = prepare(ex, vocab, nullptr);
    TrainConfig tc;
    tc.epochs = 5;
    tc.batch_size = 2;
    tc.ema_decay = 0.9;
    std::vector<double> trace;
    const auto r = train_mrc(m, prepared, prepared, tc, 6);
    for (const auto& e : r.epochs) trace.insert(trace.end(), {e.loss, e.lr, *e.dev_em, *e.dev_f1});
    for (auto* p : m.parameters()) trace.insert(trace.end(), p->value.values().begin(), p->value.values().end());
    return trace;
  };
  EXPECT_EQ(run(), run());
}

TEST(Train, Divergence) {
  const auto ex = toy_examples();
  const auto vocab = Vocab::build(ex);
  MrcModel m(tiny_config(), vocab, 1, 3);
  const auto prepared = prepare(ex, vocab, nullptr);
  TrainConfig tc;
  tc.epochs = 50;
  tc.batch_size = 1;
  tc.learning_rate = 1e300;
  tc.adamw.weight_decay = 0.0;
  EXPECT_THROW(train_mrc(m, prepared, {}, tc, 1), TrainingError);
  EXPECT_THROW(train_mrc(m, {}, {}, TrainConfig{}, 1), ContractError);
}

TEST(Evaluate, AggregatesArePerExampleMeans) {
  const auto ex = toy_examples();
  const auto vocab = Vocab::build(ex);
  MrcModel m(tiny_config(), vocab, 1, 12);
  const auto prepared = prepare(ex, vocab, nullptr);
  const auto rep = evaluate(m, prepared);
  double em = 0, f1 = 0;
  for (std::size_t i = 0; i < prepared.size(); ++i) {
    const auto r = em_f1(rep.predictions[i].span.text, ex[i].answers);
    em += r.em;
    f1 += r.f1;
  }
  EXPECT_EQ(rep.em, em / 2);
  EXPECT_EQ(rep.f1, f1 / 2);
}

TEST(Evaluate, PartialOverlapSingleExample) {
  const std::vector<MrcExample> ex{make_example("k", "the kidnapper Tad Cummins fled .", "@placeholder fled .",
                                                {{1, 3, "kidnapper Tad Cummins"}}, {"Tad Cummins"})};
  const auto vocab = Vocab::build(ex);
  MrcModel m(tiny_config(), vocab, 1, 1);
  const auto rep = evaluate(m, prepare(ex, vocab, nullptr));
  EXPECT_EQ(rep.em, 0.0);
  EXPECT_EQ(rep.f1, 0.8);
}
