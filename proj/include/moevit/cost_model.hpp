#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "moevit/tensor.hpp"

namespace moevit {

/// FLOPs breakdown for one attention block (MAC = 2 FLOPs, CLS token
/// excluded, single block — the convention under which the published
/// attention-cost tables reproduce).
struct CostReport {
  double attention_score_flops = 0;
  double attention_value_flops = 0;
  double q_proj_flops = 0;
  double kv_proj_flops = 0;
  double o_proj_flops = 0;
  uint64_t activated_params = 0;

  double total_flops() const {
    return attention_score_flops + attention_value_flops + q_proj_flops +
           kv_proj_flops + o_proj_flops;
  }
  double attention_flops() const {
    return attention_score_flops + attention_value_flops;
  }
  double gflops() const { return total_flops() * 1e-9; }
};

/// Sparse channel-MoE attention: scores and values cost a k/C fraction
/// of the dense channel-wise case; Q and O are applied once per token;
/// K and V are computed for all C channels.
CostReport moe_cost(size_t n, size_t c, size_t d, size_t k);

/// Dense channel-wise attention over all N*C tokens.
CostReport dense_cost(size_t n, size_t c, size_t d);

/// Standard single-sequence attention over N tokens.
CostReport vanilla_cost(size_t n, size_t d);

/// Parameters touched in one forward pass of the full encoder:
/// embeddings + per-layer shared attention/router/MLP/norms + k expert
/// pairs per layer + classification head.
uint64_t activated_params(size_t n, size_t c, size_t d, size_t heads,
                          size_t layers, size_t patch_dim, size_t k,
                          size_t num_classes);

struct SweepRow {
  std::string model;    // "vanilla" | "dense" | "moe"
  std::string dataset;  // "jumpcp" | "so2sat" | "custom"
  size_t n, c, d, p, k;
  double attn_gflops;
  uint64_t act_params;
};

/// One row per (model, patch, k) point; geometry per the named dataset
/// (jumpcp: 224x224 C=8, so2sat: 32x32 C=18, ViT-S width 384).
std::vector<SweepRow> sweep(const std::string& dataset, size_t height,
                            size_t width, size_t channels, size_t d,
                            const std::vector<size_t>& patches,
                            const std::vector<size_t>& topks);

std::string sweep_csv(const std::vector<SweepRow>& rows);
std::string sweep_table(const std::vector<SweepRow>& rows);

/// One published attention-GFLOPs value and its tolerance. A negative
/// rel_tol marks a lower bound (actual must exceed expected).
struct PaperPoint {
  std::string label;
  double expected_gflops;
  double rel_tol;
  double actual_gflops;
  bool pass() const {
    if (rel_tol < 0) return actual_gflops > expected_gflops;
    return std::abs(actual_gflops - expected_gflops) <=
           rel_tol * expected_gflops;
  }
};

/// The eleven published attention-GFLOPs values plus the >65G dense
/// bound, evaluated against this model.
std::vector<PaperPoint> verify_paper_points();

}  // namespace moevit
