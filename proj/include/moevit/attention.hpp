#pragma once

#include <vector>

#include "moevit/random.hpp"
#include "moevit/router.hpp"
#include "moevit/tensor.hpp"
#include "moevit/tokenizer.hpp"

namespace moevit {

enum class AggMode { kGateWeighted, kUniform };

/// Multi-head channel MoE projections: shared query and output, one
/// key/value expert pair per channel.
struct AttentionParams {
  Tensor w_q;               // [D x D]
  std::vector<Tensor> w_k;  // C experts, [D x D] each
  std::vector<Tensor> w_v;
  Tensor w_o;               // [D x D]
  size_t heads = 1;

  static AttentionParams init(size_t dim, size_t channels, size_t heads,
                              Prng& rng);
  std::vector<std::pair<std::string, Tensor>> named(const std::string& prefix) const;
};

/// Shared-projection multi-head attention parameters for the dense
/// baselines.
struct DenseAttentionParams {
  Tensor w_q, w_k, w_v, w_o;  // [D x D]
  size_t heads = 1;

  static DenseAttentionParams init(size_t dim, size_t heads, Prng& rng);
};

/// Per-channel gather of the routing outcome. sources[c] is S_c (rows
/// are tokens routed to channel c, in token order), targets[c] is T_c
/// (the tokens of channel c). provenance[c] holds the flat token id of
/// each S_c row, so scatter-back is exact.
struct ChannelBatches {
  Tensor all_tokens;                           // [(N*C) x D]
  std::vector<Tensor> sources;                 // undefined when N_c == 0
  std::vector<Tensor> targets;                 // undefined for inactive channels
  std::vector<std::vector<size_t>> provenance;
};

ChannelBatches build_batches(const TokenGrid& tokens, const RoutingTable& routing);

/// Cross-attention per channel: shared W_Q over the sources (projected
/// once per token, then gathered), channel expert W_K/W_V over the
/// targets, head-split scaled dot-product. Returns one O_c per channel;
/// entries for empty channels are undefined tensors.
std::vector<Tensor> cross_attend(const ChannelBatches& batches,
                                 const AttentionParams& params);

/// Scatter-back of expert outputs per token, gate-weighted (surviving
/// softmax values, unnormalized) or uniform 1/k, followed by W_O.
Tensor aggregate(const std::vector<Tensor>& outputs, const ChannelBatches& batches,
                 const RoutingTable& routing, AggMode mode,
                 const AttentionParams& params);

/// Full block: build_batches -> cross_attend -> aggregate, with the CLS
/// row (when present) treated as a source routed to every active channel
/// at uniform 1/C weight and excluded from every target matrix.
struct MoeAttentionOutput {
  Tensor tokens;  // [(N*C) x D]
  Tensor cls;     // [1 x D], defined iff the grid carries a CLS row
};
MoeAttentionOutput channel_moe_forward(const TokenGrid& tokens,
                                       const RoutingTable& routing,
                                       const AttentionParams& params,
                                       AggMode mode);

/// Per-token reference path: explicit loops, no gather/scatter, no
/// shared projections. Mathematically identical to the batched path.
Tensor naive_oracle(const TokenGrid& tokens, const RoutingTable& routing,
                    const AttentionParams& params, AggMode mode);

/// Standard multi-head self-attention with shared projections; used both
/// for the channel-wise dense baseline (input: all N*C tokens) and the
/// vanilla baseline (input: N tokens from concatenated-channel patches).
Tensor dense_attention(const Tensor& x, const DenseAttentionParams& params);

}  // namespace moevit
