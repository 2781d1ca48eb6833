#include "moevit/attention.hpp"

#include <cmath>

namespace moevit {

namespace {

// Head-split scaled dot-product attention over already-projected rows.
Tensor mha(const Tensor& q, const Tensor& k, const Tensor& v, size_t heads) {
  const size_t d = q.cols();
  if (d % heads != 0)
    throw config_error("attention width " + std::to_string(d) +
                       " not divisible by " + std::to_string(heads) + " heads");
  const size_t dh = d / heads;
  const double inv_scale = 1.0 / std::sqrt((double)dh);
  std::vector<Tensor> outs;
  outs.reserve(heads);
  for (size_t h = 0; h < heads; ++h) {
    Tensor qh = slice_cols(q, h * dh, dh);
    Tensor kh = slice_cols(k, h * dh, dh);
    Tensor vh = slice_cols(v, h * dh, dh);
    Tensor a = softmax_rows(scale(matmul(qh, transpose(kh)), inv_scale));
    outs.push_back(matmul(a, vh));
  }
  return heads == 1 ? outs[0] : concat_cols(outs);
}

}  // namespace

AttentionParams AttentionParams::init(size_t dim, size_t channels, size_t heads,
                                      Prng& rng) {
  AttentionParams p;
  const double s = 1.0 / std::sqrt((double)dim);
  p.w_q = Tensor::from({dim, dim}, rng.normal_vec(dim * dim, s), true);
  p.w_o = Tensor::from({dim, dim}, rng.normal_vec(dim * dim, s), true);
  for (size_t c = 0; c < channels; ++c) {
    p.w_k.push_back(Tensor::from({dim, dim}, rng.normal_vec(dim * dim, s), true));
    p.w_v.push_back(Tensor::from({dim, dim}, rng.normal_vec(dim * dim, s), true));
  }
  p.heads = heads;
  return p;
}

std::vector<std::pair<std::string, Tensor>> AttentionParams::named(
    const std::string& prefix) const {
  std::vector<std::pair<std::string, Tensor>> out{{prefix + "w_q", w_q},
                                                  {prefix + "w_o", w_o}};
  for (size_t c = 0; c < w_k.size(); ++c) {
    out.emplace_back(prefix + "w_k." + std::to_string(c), w_k[c]);
    out.emplace_back(prefix + "w_v." + std::to_string(c), w_v[c]);
  }
  return out;
}

DenseAttentionParams DenseAttentionParams::init(size_t dim, size_t heads,
                                                Prng& rng) {
  DenseAttentionParams p;
  const double s = 1.0 / std::sqrt((double)dim);
  p.w_q = Tensor::from({dim, dim}, rng.normal_vec(dim * dim, s), true);
  p.w_k = Tensor::from({dim, dim}, rng.normal_vec(dim * dim, s), true);
  p.w_v = Tensor::from({dim, dim}, rng.normal_vec(dim * dim, s), true);
  p.w_o = Tensor::from({dim, dim}, rng.normal_vec(dim * dim, s), true);
  p.heads = heads;
  return p;
}

ChannelBatches build_batches(const TokenGrid& tokens, const RoutingTable& routing) {
  const size_t t_count = tokens.tokens.rows();
  if (routing.tokens() != t_count)
    throw contract_error("routing covers " + std::to_string(routing.tokens()) +
                         " tokens but the grid has " + std::to_string(t_count));
  const size_t c_total = routing.channel_tokens.size();
  ChannelBatches b;
  b.all_tokens = tokens.tokens;
  b.sources.resize(c_total);
  b.targets.resize(c_total);
  b.provenance.resize(c_total);
  const size_t nc = tokens.channels();
  for (size_t j = 0; j < nc; ++j) {
    const size_t c = (size_t)tokens.active_channels[j];
    std::vector<size_t> rows(tokens.n_patches);
    for (size_t i = 0; i < tokens.n_patches; ++i) rows[i] = i * nc + j;
    b.targets[c] = index_select(tokens.tokens, rows);
  }
  for (size_t c = 0; c < c_total; ++c) {
    b.provenance[c] = routing.channel_tokens[c];
    if (!b.provenance[c].empty()) {
      if (!b.targets[c].defined())
        throw contract_error("tokens routed to channel " + std::to_string(c) +
                             " but that channel has no targets");
      b.sources[c] = index_select(tokens.tokens, b.provenance[c]);
    }
  }
  return b;
}

std::vector<Tensor> cross_attend(const ChannelBatches& batches,
                                 const AttentionParams& params) {
  const size_t c_total = params.w_k.size();
  if (batches.provenance.size() != c_total)
    throw contract_error("batch channel count " +
                         std::to_string(batches.provenance.size()) +
                         " != expert count " + std::to_string(c_total));
  // Shared query projection, applied once per token and gathered per
  // channel; matches the cost model's once-per-token Q term.
  Tensor q_all = matmul(batches.all_tokens, params.w_q);
  std::vector<Tensor> outputs(c_total);
  for (size_t c = 0; c < c_total; ++c) {
    if (!batches.targets[c].defined()) continue;
    Tensor k = matmul(batches.targets[c], params.w_k[c]);
    Tensor v = matmul(batches.targets[c], params.w_v[c]);
    if (batches.provenance[c].empty()) continue;
    Tensor q = index_select(q_all, batches.provenance[c]);
    outputs[c] = mha(q, k, v, params.heads);
  }
  return outputs;
}

Tensor aggregate(const std::vector<Tensor>& outputs, const ChannelBatches& batches,
                 const RoutingTable& routing, AggMode mode,
                 const AttentionParams& params) {
  const size_t t_count = batches.all_tokens.rows();
  const size_t d = batches.all_tokens.cols();
  for (const auto& s : routing.expert_sets)
    if (s.empty()) throw contract_error("token with empty expert set");
  Tensor out = Tensor::zeros({t_count, d});
  for (size_t c = 0; c < outputs.size(); ++c) {
    if (!outputs[c].defined()) continue;
    const auto& rows = batches.provenance[c];
    Tensor w;
    if (mode == AggMode::kGateWeighted) {
      w = gather_scalar(routing.gates, rows, std::vector<size_t>(rows.size(), c));
    } else {
      w = Tensor::full({rows.size(), 1}, 1.0 / (double)routing.k);
    }
    out = index_add(out, rows, scale_rows(outputs[c], w));
  }
  return matmul(out, params.w_o);
}

MoeAttentionOutput channel_moe_forward(const TokenGrid& tokens,
                                       const RoutingTable& routing,
                                       const AttentionParams& params,
                                       AggMode mode) {
  ChannelBatches batches = build_batches(tokens, routing);
  std::vector<Tensor> outputs = cross_attend(batches, params);
  MoeAttentionOutput out;
  out.tokens = aggregate(outputs, batches, routing, mode, params);
  if (tokens.cls.defined()) {
    Tensor q_cls = matmul(tokens.cls, params.w_q);
    Tensor acc;
    size_t visited = 0;
    for (size_t c = 0; c < params.w_k.size(); ++c) {
      if (!batches.targets[c].defined()) continue;
      Tensor k = matmul(batches.targets[c], params.w_k[c]);
      Tensor v = matmul(batches.targets[c], params.w_v[c]);
      Tensor o = mha(q_cls, k, v, params.heads);
      acc = acc.defined() ? add(acc, o) : o;
      ++visited;
    }
    if (visited == 0) throw contract_error("CLS has no channel to attend to");
    out.cls = matmul(scale(acc, 1.0 / (double)visited), params.w_o);
  }
  return out;
}

Tensor naive_oracle(const TokenGrid& grid, const RoutingTable& routing,
                    const AttentionParams& params, AggMode mode) {
  const size_t nc = grid.channels();
  const size_t n = grid.n_patches;
  const size_t t_count = n * nc;
  const size_t d = grid.dim;
  const size_t heads = params.heads;
  const size_t dh = d / heads;
  const double inv_scale = 1.0 / std::sqrt((double)dh);
  const auto& h = grid.tokens.data();
  const auto& wq = params.w_q.data();
  const auto& wo = params.w_o.data();

  // Original channel id -> column j in the grid.
  std::vector<int> col_of(params.w_k.size(), -1);
  for (size_t j = 0; j < nc; ++j) col_of[(size_t)grid.active_channels[j]] = (int)j;

  std::vector<double> out(t_count * d, 0.0);
  std::vector<double> q(d), krow(d), vrow(d), scores(n), hhat(d), mixed(d);
  for (size_t t = 0; t < t_count; ++t) {
    // q = h_t W^Q
    for (size_t b = 0; b < d; ++b) {
      double acc = 0.0;
      for (size_t a = 0; a < d; ++a) acc += h[t * d + a] * wq[a * d + b];
      q[b] = acc;
    }
    std::fill(hhat.begin(), hhat.end(), 0.0);
    for (int c : routing.expert_sets[t]) {
      const double w = mode == AggMode::kGateWeighted
                           ? routing.gates.at(t, (size_t)c)
                           : 1.0 / (double)routing.k;
      const size_t j = (size_t)col_of[(size_t)c];
      const auto& wk = params.w_k[(size_t)c].data();
      const auto& wv = params.w_v[(size_t)c].data();
      for (size_t hd = 0; hd < heads; ++hd) {
        const size_t off = hd * dh;
        // scores over the N targets of channel c
        double mx = -1e300;
        for (size_t i = 0; i < n; ++i) {
          const size_t tgt = i * nc + j;
          double s = 0.0;
          for (size_t b = off; b < off + dh; ++b) {
            double kv = 0.0;
            for (size_t a = 0; a < d; ++a) kv += h[tgt * d + a] * wk[a * d + b];
            s += q[b] * kv;
          }
          scores[i] = s * inv_scale;
          mx = std::max(mx, scores[i]);
        }
        double denom = 0.0;
        for (size_t i = 0; i < n; ++i) {
          scores[i] = std::exp(scores[i] - mx);
          denom += scores[i];
        }
        for (size_t b = off; b < off + dh; ++b) mixed[b] = 0.0;
        for (size_t i = 0; i < n; ++i) {
          const size_t tgt = i * nc + j;
          const double a_i = scores[i] / denom;
          for (size_t b = off; b < off + dh; ++b) {
            double vv = 0.0;
            for (size_t a = 0; a < d; ++a) vv += h[tgt * d + a] * wv[a * d + b];
            mixed[b] += a_i * vv;
          }
        }
      }
      for (size_t b = 0; b < d; ++b) hhat[b] += w * mixed[b];
    }
    // output projection
    for (size_t b = 0; b < d; ++b) {
      double acc = 0.0;
      for (size_t a = 0; a < d; ++a) acc += hhat[a] * wo[a * d + b];
      out[t * d + b] = acc;
    }
  }
  return Tensor::from({t_count, d}, std::move(out));
}

Tensor dense_attention(const Tensor& x, const DenseAttentionParams& params) {
  Tensor q = matmul(x, params.w_q);
  Tensor k = matmul(x, params.w_k);
  Tensor v = matmul(x, params.w_v);
  return matmul(mha(q, k, v, params.heads), params.w_o);
}

}  // namespace moevit
