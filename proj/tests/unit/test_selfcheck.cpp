#include "testing.hpp"

#include "fdcnet/checks.hpp"

using namespace fdcnet::checks;

namespace {

void expect_pass(const CheckResult& r) {
  INFO(r.name << ": " << r.detail);
  CHECK(r.passed);
}

}  // namespace

TEST_SUITE("selfcheck") {
  TEST_CASE("loss oracles") { expect_pass(check_loss_oracles(1)); }
  TEST_CASE("gradients") { expect_pass(check_gradients(1)); }
  TEST_CASE("no drift") { expect_pass(check_no_drift(1)); }
  TEST_CASE("expansion") { expect_pass(check_expansion(1)); }
  TEST_CASE("herding") { expect_pass(check_herding(1)); }
  TEST_CASE("metrics") { expect_pass(check_metric_oracles(1)); }
  TEST_CASE("invariants") { expect_pass(check_invariants(1)); }
}
