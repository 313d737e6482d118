#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace fdcnet::checks {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

/// Every loss against a naive loop reimplementation on random tiny instances (float64).
CheckResult check_loss_oracles(uint64_t seed, int instances = 100);
/// Autograd against central finite differences for each loss (float64).
CheckResult check_gradients(uint64_t seed);
/// Exact copy of the previous network: distillation losses vanish, compensation trains to zero, fusion is a no-op.
CheckResult check_no_drift(uint64_t seed);
/// Old-class channels are bit-identical across head expansion.
CheckResult check_expansion(uint64_t seed, int batches = 20);
/// Herding against a brute-force greedy oracle, prefix property and first pick.
CheckResult check_herding(uint64_t seed, int sets = 50);
/// IoU, largest-component boxes and aggregation against brute-force oracles.
CheckResult check_metric_oracles(uint64_t seed);
/// Task counts of the two published class splits.
CheckResult check_schedule_constants();
/// Cosine scale invariance, loss bounds and shift invariance, fusion pass-through.
CheckResult check_invariants(uint64_t seed);

/// All of the above; prints one PASS/FAIL line per suite when out is given.
std::vector<CheckResult> run_selfcheck(uint64_t seed, std::ostream* out);

}  // namespace fdcnet::checks
