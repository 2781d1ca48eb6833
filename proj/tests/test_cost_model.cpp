#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "moevit/checks.hpp"
#include "moevit/cost_model.hpp"

using namespace moevit;

TEST_CASE("published attention-GFLOPs values reproduce within tolerance") {
  auto points = verify_paper_points();
  CHECK(points.size() == 15);
  for (const auto& p : points) {
    INFO(p.label, " expected ", p.expected_gflops, " got ", p.actual_gflops);
    CHECK(p.pass());
  }
}

TEST_CASE("closed forms at the table geometries") {
  CHECK(moe_cost(196, 8, 384, 2).gflops() == doctest::Approx(2.81).epsilon(0.01));
  CHECK(moe_cost(196, 8, 384, 1).gflops() == doctest::Approx(2.33).epsilon(0.01));
  CHECK(moe_cost(16, 18, 384, 1).gflops() == doctest::Approx(0.35).epsilon(0.02));
  CHECK(dense_cost(196, 8, 384).gflops() == doctest::Approx(5.65).epsilon(0.01));
  CHECK(dense_cost(16, 18, 384).gflops() == doctest::Approx(0.47).epsilon(0.02));
  CHECK(vanilla_cost(196, 384).gflops() == doctest::Approx(0.29).epsilon(0.02));
  CHECK(vanilla_cost(16, 384).gflops() == doctest::Approx(0.02).epsilon(0.10));
}

TEST_CASE("unit geometries and degenerate cases") {
  // N=1: vanilla total = 4D + 8D^2 exactly
  const size_t d = 384;
  CHECK(vanilla_cost(1, d).total_flops() ==
        doctest::Approx(4.0 * d + 8.0 * d * d).epsilon(1e-12));
  // C=1 dense equals vanilla
  CHECK(dense_cost(77, 1, 64).total_flops() ==
        doctest::Approx(vanilla_cost(77, 64).total_flops()).epsilon(1e-12));
  // smallest possible moe block: 4+8 = 12 FLOPs
  CHECK(moe_cost(1, 1, 1, 1).total_flops() == doctest::Approx(12.0).epsilon(1e-12));
  CHECK_THROWS_AS(moe_cost(4, 3, 8, 0), config_error);
  CHECK_THROWS_AS(moe_cost(4, 3, 8, 4), config_error);
}

TEST_CASE("report terms sum to the total and are non-negative") {
  for (size_t k = 1; k <= 8; ++k) {
    CostReport r = moe_cost(196, 8, 384, k);
    CHECK(r.attention_score_flops >= 0);
    CHECK(r.attention_value_flops >= 0);
    CHECK(r.q_proj_flops >= 0);
    CHECK(r.kv_proj_flops >= 0);
    CHECK(r.o_proj_flops >= 0);
    CHECK(r.total_flops() ==
          doctest::Approx(r.attention_score_flops + r.attention_value_flops +
                          r.q_proj_flops + r.kv_proj_flops + r.o_proj_flops)
              .epsilon(1e-12));
  }
}

TEST_CASE("ratio law: attention terms scale as k/C exactly") {
  for (size_t c : {3, 8, 18}) {
    const double dense_attn = dense_cost(31, c, 96).attention_flops();
    for (size_t k = 1; k <= c; ++k) {
      const double moe_attn = moe_cost(31, c, 96, k).attention_flops();
      CHECK(moe_attn * (double)c == doctest::Approx(dense_attn * (double)k).epsilon(1e-12));
    }
    // k = C recovers the dense attention terms exactly
    CHECK(moe_cost(31, c, 96, c).attention_flops() ==
          doctest::Approx(dense_attn).epsilon(1e-12));
  }
}

TEST_CASE("activated parameters: expert delta closed form and monotonicity") {
  const size_t d = 384, layers = 12, n = 196, c = 8, patch_dim = 256;
  const size_t classes = 161;
  // k=C vs k=1 difference == (C-1)*2*D^2*L
  const uint64_t p1 = activated_params(n, c, d, 6, layers, patch_dim, 1, classes);
  const uint64_t pc = activated_params(n, c, d, 6, layers, patch_dim, c, classes);
  CHECK(pc - p1 == (uint64_t)(c - 1) * 2 * d * d * layers);

  // table delta: 25.18M - 21.62M = 3.56M, model gives 2*384^2*12 within 1%
  const uint64_t p2 = activated_params(n, c, d, 6, layers, patch_dim, 2, classes);
  const double delta = (double)(p2 - p1);
  CHECK(std::abs(delta - 3.56e6) <= 0.01 * 3.56e6);

  uint64_t prev = 0;
  for (size_t k = 1; k <= c; ++k) {
    const uint64_t p = activated_params(n, c, d, 6, layers, patch_dim, k, classes);
    CHECK(p >= prev);
    prev = p;
  }
}

TEST_CASE("sweep regenerates the patch-size/top-k ablation") {
  auto rows = sweep("jumpcp", 224, 224, 8, 384, {8}, {1, 2, 3, 4});
  const double expected[] = {15.02, 22.61, 30.19, 37.77};
  size_t hit = 0;
  for (const auto& r : rows) {
    if (r.model != "moe") continue;
    CHECK(r.n == 784);
    CHECK(std::abs(r.attn_gflops - expected[r.k - 1]) <=
          0.015 * expected[r.k - 1]);
    ++hit;
  }
  CHECK(hit == 4);
  // dense baseline at small patches exceeds 65 GFLOPs
  for (const auto& r : rows)
    if (r.model == "dense") CHECK(r.attn_gflops > 65.0);

  auto so2 = sweep("so2sat", 32, 32, 18, 384, {16}, {2});
  bool found = false;
  for (const auto& r : so2)
    if (r.model == "moe") {
      CHECK(std::abs(r.attn_gflops - 0.085) <= 0.02 * 0.085);
      found = true;
    }
  CHECK(found);
  CHECK_THROWS_AS(sweep("jumpcp", 224, 224, 8, 384, {15}, {1}), config_error);
}

TEST_CASE("CSV header and shape are fixed") {
  auto rows = sweep("so2sat", 32, 32, 18, 384, {8}, {1});
  const std::string csv = sweep_csv(rows);
  CHECK(csv.rfind("model,dataset,N,C,D,P,k,attn_gflops,act_params\n", 0) == 0);
  size_t lines = 0;
  for (char ch : csv)
    if (ch == '\n') ++lines;
  CHECK(lines == rows.size() + 1);
}

TEST_CASE("instrumented MAC counts equal the analytic model") {
  CheckSummary s = check_mac_instrumentation(31);
  for (const auto& f : s.failures) MESSAGE(f.suite, ": ", f.detail);
  CHECK(s.ok());
  CHECK(s.cases_run == 6);
}
