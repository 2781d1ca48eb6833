#pragma once

#include <string>
#include <vector>

#include "moevit/model.hpp"

namespace moevit {

struct CheckFailure {
  std::string suite;
  std::string detail;  // first counterexample: seed, config, deviation
};

struct CheckSummary {
  size_t cases_run = 0;
  std::vector<CheckFailure> failures;

  bool ok() const { return failures.empty(); }
  void merge(const CheckSummary& other) {
    cases_run += other.cases_run;
    failures.insert(failures.end(), other.failures.begin(),
                    other.failures.end());
  }
};

/// Finite-difference check (central differences, step h) of every tensor
/// op against its backward rule, at seeded random points.
CheckSummary check_op_gradients(uint64_t seed, double h = 1e-6,
                                double tol = 1e-6);

/// Per-parameter-group relative error between analytic and central
/// finite-difference gradients of the full training loss on the given
/// spec. Error metric per group: ||g_an - g_fd||_inf normalized by the
/// larger of the two gradient norms.
std::vector<std::pair<std::string, double>> model_fd_group_errors(
    const AttentionSpec& spec, uint64_t seed, size_t batch = 2,
    double h = 1e-5);

/// Full-model gradient check on the tiny configuration for the given
/// top-k values and both aggregation modes.
CheckSummary check_model_gradients(uint64_t seed,
                                   const std::vector<size_t>& topks,
                                   double tol = 1e-4);

/// Batched routing + cross-attention vs the per-token reference path,
/// over `cases` seeded random configurations (N <= 8, C <= 6,
/// k in 1..C, heads in {1,2,4}, both aggregation modes, with and
/// without channel subsets).
CheckSummary check_oracle_equivalence(uint64_t seed, size_t cases,
                                      double tol = 1e-12);

/// Router invariants over seeded random configurations: exact top-k
/// support, sum of loads == k * tokens, agreement with a full-sort
/// selection oracle, permutation equivariance, renormalized rows
/// summing to one, CV^2 scale invariance.
CheckSummary check_router_properties(uint64_t seed, size_t cases);

/// Attention rows are stochastic: every softmax row in a real
/// cross-attention score matrix sums to 1 within 1e-12.
CheckSummary check_attention_stochastic(uint64_t seed, size_t cases);

/// Multiply-accumulate instrumentation vs the analytic cost model:
/// exact equality under uniform routing (k = C and forced-uniform
/// k = 1), and the per-channel count identity under random routing.
CheckSummary check_mac_instrumentation(uint64_t seed);

/// Run every suite; `cases` scales the randomized ones.
CheckSummary run_all_checks(uint64_t seed, size_t cases);

}  // namespace moevit
