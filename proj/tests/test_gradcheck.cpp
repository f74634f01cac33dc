#include "doctest.h"
#include "pbsdet/gradcheck.hpp"
#include "pbsdet/loss.hpp"
#include "pbsdet/rng.hpp"

using namespace pbsdet;

TEST_CASE("gradient suite passes at the acceptance tolerance") {
  const auto results = run_gradient_suite(/*trials=*/25);
  CHECK(results.size() == 10);
  for (const auto& r : results) {
    INFO(r.name, " max_rel_err=", r.max_rel_err);
    CHECK(r.pass);
    CHECK(r.max_rel_err <= 1e-6);
  }
}

TEST_CASE("mutation: a sign error in the sigmoid derivative is caught") {
  Rng rng(55);
  std::vector<double> logits(6), targets(6);
  for (int i = 0; i < 6; ++i) {
    logits[i] = rng.normal() * 2;
    targets[i] = rng.next_unit();
  }
  const LossGrad good = precise_sigmoid_loss(logits, targets);

  // sabotaged gradient: sigma'(x) with the wrong sign
  std::vector<double> bad(good.grad.size());
  for (size_t i = 0; i < bad.size(); ++i) bad[i] = -good.grad[i];

  auto value = [&](const std::vector<double>& x) {
    return precise_sigmoid_loss(x, targets).loss;
  };
  CHECK(fd_max_rel_error(value, logits, good.grad) <= 1e-6);
  CHECK(fd_max_rel_error(value, logits, bad) > 1e-3);
}

TEST_CASE("mutation: a missing lambda factor in the combined loss is caught") {
  // analytic gradient computed as if lambda were 1 must fail against the
  // lambda-weighted value function
  Rng rng(57);
  std::vector<double> logits(4), targets(4);
  for (int i = 0; i < 4; ++i) {
    logits[i] = rng.normal();
    targets[i] = rng.next_unit();
  }
  LossConfig lc;  // lambda 300
  auto weighted = [&](const std::vector<double>& x) {
    return total_loss(precise_sigmoid_loss(x, targets).loss, 0.0, lc);
  };
  const LossGrad unweighted = precise_sigmoid_loss(logits, targets);
  CHECK(fd_max_rel_error(weighted, logits, unweighted.grad) > 1e-3);

  std::vector<double> scaled(unweighted.grad.size());
  for (size_t i = 0; i < scaled.size(); ++i) scaled[i] = 300.0 * unweighted.grad[i];
  CHECK(fd_max_rel_error(weighted, logits, scaled) <= 1e-6);
}
