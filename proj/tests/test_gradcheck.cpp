#include <gtest/gtest.h>

#include "piecer/gradcheck.hpp"
#include "piecer/piecer.hpp"
#include "test_util.hpp"

using namespace piecer;

TEST(GradCheck, ExactQuadratic) {
  Parameter x("x", Tensor::scalar(3.0));
  Parameter* ps[] = {&x};
  auto rep = grad_check([&](Tape& t) { Var v = t.param(x); return hadamard(v, v); }, ps, 1e-5, 1);
  EXPECT_LT(rep.max_rel_error, 1e-8);
  EXPECT_EQ(rep.coordinates_checked, 1u);
}

TEST(GradCheck, DetectsWrongGradient) {
  // sum(x) with a deliberately mis-scaled constant path is fine; a wrong
  // analytic gradient is simulated by perturbing outside the tape.
  Parameter x("x", Tensor::row({1.0, 2.0}));
  Parameter* ps[] = {&x};
  int calls = 0;
  auto rep = grad_check(
      [&](Tape& t) {
        ++calls;
        Var v = t.param(x);
        // Loss the tape sees as sum(v), but the value shifts with call count.
        return add(sum(v), t.constant(Tensor::scalar(calls == 1 ? 0.0 : x.value[0] * x.value[0])));
      },
      ps, 1e-5, 3);
  EXPECT_GT(rep.max_rel_error, 0.5);
  EXPECT_EQ(rep.worst_parameter, "x");
}

TEST(GradCheck, SamplesAtMostRequestedCoordinates) {
  Parameter w("w", Tensor::matrix(10, 10, 0.1));
  Parameter* ps[] = {&w};
  auto rep = grad_check([&](Tape& t) { return sum(sigmoid(t.param(w))); }, ps, 1e-5, 4);
  EXPECT_EQ(rep.coordinates_checked, 32u);
}

TEST(GradCheck, NonFiniteNamesParameter) {
  Parameter x("offender", Tensor::scalar(0.0));
  Parameter* ps[] = {&x};
  auto loss = [&](Tape& t) {
    Var v = t.param(x);
    if (x.value.item() != 0.0) return t.constant(Tensor::scalar(std::nan("")));
    return sum(v);
  };
  try {
    grad_check(loss, ps, 1e-5, 1);
    FAIL();
  } catch (const NonFiniteError& e) {
    EXPECT_NE(std::string(e.what()).find("offender"), std::string::npos);
  }
}

TEST(GradCheck, RejectsNonPositiveStep) {
  Parameter x("x", Tensor::scalar(1.0));
  Parameter* ps[] = {&x};
  EXPECT_THROW(grad_check([&](Tape& t) { return sum(t.param(x)); }, ps, 0.0, 1), ContractError);
}

TEST(GradCheck, SigmoidGateFusionOnRandomEightDimInputs) {
  Rng rng(21);
  PiecerConfig cfg;
  cfg.hidden = 8;
  cfg.knowledge_dim = 8;
  cfg.dropout = 0;
  PiecerModel model(cfg, 3);
  Tensor words = piecer::testing::random_tensor({4, 8}, rng);
  KnowledgeRows know{piecer::testing::random_tensor({4, 8}, rng), {0, 2, 3}};
  Tensor weights = piecer::testing::random_tensor({4, 8}, rng);
  std::vector<Parameter*> ps = {&model.injection_projection(), &model.injection_gate_weight(),
                                &model.injection_gate_bias()};
  auto rep = grad_check(
      [&](Tape& t) {
        return sum(hadamard(inject_knowledge(t.constant(words), know, model), t.constant(weights)));
      },
      ps, 1e-5, 8);
  EXPECT_LT(rep.max_rel_error, 1e-5);
}
