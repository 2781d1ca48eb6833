#pragma once

#include <vector>

#include "moevit/random.hpp"
#include "moevit/tensor.hpp"
#include "moevit/tokenizer.hpp"

namespace moevit {

struct RouterParams {
  Tensor weight;  // [D x C]
  Tensor bias;    // [1 x C]

  static RouterParams init(size_t dim, size_t channels, Prng& rng);
  std::vector<std::pair<std::string, Tensor>> named(const std::string& prefix) const;
};

/// Per-token gating outcome. `gates` keeps the surviving softmax values
/// (zeros off-support, not renormalized unless requested); expert sets
/// and the per-channel provenance lists are consistent with its support.
struct RoutingTable {
  size_t k = 0;
  Tensor gates_pre_topk;                       // [T x C], softmax rows
  Tensor gates;                                // [T x C], post Top-K
  std::vector<std::vector<int>> expert_sets;   // per token, ascending channels
  std::vector<std::vector<size_t>> channel_tokens;  // rows of S_k, per channel
  std::vector<size_t> counts;                  // N_k

  size_t tokens() const { return expert_sets.size(); }
  /// Row of S_c holding token t; the inverse of channel_tokens.
  size_t source_row(size_t channel, size_t token) const;
};

/// Deterministic Top-K: k largest values, equal values resolved toward
/// the lower channel index. Returns ascending indices.
std::vector<int> tie_break(const std::vector<double>& values, size_t k);

/// Eq-style gating: softmax of the affine gate, Top-K sparsified with
/// surviving values preserved. `active_channels`, when not all channels,
/// masks inactive experts out of the softmax (renormalized over the
/// active set) and k is clamped to the active count.
RoutingTable route(const TokenGrid& tokens, const RouterParams& params, size_t k,
                   bool renormalize = false);

/// CV^2 importance + load balancing loss over pre-Top-K gates. Only the
/// importance term is differentiable; load is the hard Top-K count.
/// `active_channels`, when given, restricts both CV^2 terms to those
/// columns (the HCS case, where inactive experts are forced to zero).
Tensor balance_loss(const Tensor& gates_pre_topk,
                    const std::vector<size_t>& load, double w_importance,
                    double w_load,
                    const std::vector<int>* active_channels = nullptr);

/// CV^2 of a nonnegative vector: variance / mean^2 (population variance).
double cv_squared(const std::vector<double>& values);

}  // namespace moevit
