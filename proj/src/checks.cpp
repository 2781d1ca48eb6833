#include "moevit/checks.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>

#include "moevit/attention.hpp"
#include "moevit/cost_model.hpp"
#include "moevit/router.hpp"

namespace moevit {

namespace {

std::string fmt(double v) {
  std::ostringstream out;
  out.precision(6);
  out << v;
  return out.str();
}

TokenGrid random_grid(Prng& rng, size_t n, const std::vector<int>& active,
                      size_t d) {
  TokenGrid g;
  g.n_patches = n;
  g.dim = d;
  g.active_channels = active;
  g.tokens = Tensor::from({n * active.size(), d},
                          rng.normal_vec(n * active.size() * d));
  return g;
}

std::vector<int> ascending(size_t c) {
  std::vector<int> out(c);
  for (size_t i = 0; i < c; ++i) out[i] = (int)i;
  return out;
}

// --- finite-difference harness -------------------------------------------

/// Checks d(scalar f)/d(inputs) against central differences. Returns the
/// worst normalized deviation over all input elements.
double fd_max_err(const std::function<Tensor()>& loss_fn,
                  std::vector<Tensor> inputs, double h) {
  Tensor loss = loss_fn();
  for (auto& t : inputs) t.zero_grad();
  loss.backward();
  std::vector<std::vector<double>> analytic;
  for (auto& t : inputs) analytic.push_back(t.grad());

  double worst = 0.0;
  for (size_t p = 0; p < inputs.size(); ++p) {
    auto& data = inputs[p].mutable_data();
    double g_scale = 0.0;
    for (double g : analytic[p]) g_scale = std::max(g_scale, std::abs(g));
    for (size_t i = 0; i < data.size(); ++i) {
      const double keep = data[i];
      data[i] = keep + h;
      const double up = loss_fn().value();
      data[i] = keep - h;
      const double down = loss_fn().value();
      data[i] = keep;
      const double fd = (up - down) / (2.0 * h);
      const double denom = std::max({g_scale, std::abs(fd), 1e-8});
      worst = std::max(worst, std::abs(fd - analytic[p][i]) / denom);
    }
  }
  return worst;
}

Tensor weighted_sum(const Tensor& y, const Tensor& w) {
  return sum(mul(y, w));
}

}  // namespace

CheckSummary check_op_gradients(uint64_t seed, double h, double tol) {
  CheckSummary s;
  Prng rng = Prng(seed).split(0x01);
  auto fail = [&s](const std::string& op, double err) {
    s.failures.push_back({"op_gradients", op + ": max deviation " + fmt(err)});
  };
  auto run = [&](const std::string& name, const std::function<Tensor()>& fn,
                 std::vector<Tensor> inputs) {
    ++s.cases_run;
    const double err = fd_max_err(fn, std::move(inputs), h);
    if (!(err < tol)) fail(name, err);
  };
  auto randn = [&rng](size_t r, size_t c) {
    return Tensor::from({r, c}, rng.normal_vec(r * c), true);
  };

  Tensor a = randn(3, 4), b = randn(4, 5), c34 = randn(3, 4);
  Tensor w35 = Tensor::from({3, 5}, rng.normal_vec(15));
  Tensor w34 = Tensor::from({3, 4}, rng.normal_vec(12));
  Tensor w43 = Tensor::from({4, 3}, rng.normal_vec(12));
  Tensor w31 = Tensor::from({3, 1}, rng.normal_vec(3));
  Tensor w14 = Tensor::from({1, 4}, rng.normal_vec(4));
  Tensor w32 = Tensor::from({3, 2}, rng.normal_vec(6));
  Tensor w38 = Tensor::from({3, 8}, rng.normal_vec(24));
  Tensor w64 = Tensor::from({6, 4}, rng.normal_vec(24));
  Tensor row = randn(1, 4);

  run("matmul", [&] { return weighted_sum(matmul(a, b), w35); }, {a, b});
  run("transpose", [&] { return weighted_sum(transpose(a), w43); }, {a});
  run("add", [&] { return weighted_sum(add(a, c34), w34); }, {a, c34});
  run("add_broadcast", [&] { return weighted_sum(add(a, row), w34); }, {a, row});
  run("sub", [&] { return weighted_sum(sub(a, c34), w34); }, {a, c34});
  run("mul", [&] { return weighted_sum(mul(a, c34), w34); }, {a, c34});
  run("scale", [&] { return weighted_sum(scale(a, 1.7), w34); }, {a});
  run("add_const", [&] { return weighted_sum(add_const(a, 0.3), w34); }, {a});
  run("gelu", [&] { return weighted_sum(gelu(a), w34); }, {a});
  run("mean", [&] { return mean(a); }, {a});
  run("sum", [&] { return sum(a); }, {a});
  run("row_sum", [&] { return weighted_sum(row_sum(a), w31); }, {a});
  run("col_sum", [&] { return weighted_sum(col_sum(a), w14); }, {a});
  run("softmax_rows", [&] { return weighted_sum(softmax_rows(a), w34); }, {a});
  run("layer_norm", [&] { return weighted_sum(layer_norm(a), w34); }, {a});

  // div and relu at points bounded away from their singularities
  std::vector<double> pos = rng.normal_vec(12);
  for (auto& v : pos) v = 1.0 + std::abs(v);
  Tensor denom = Tensor::from({3, 4}, pos, true);
  run("div", [&] { return weighted_sum(div(a, denom), w34); }, {a, denom});
  std::vector<double> off = rng.normal_vec(12);
  for (auto& v : off) v += (v >= 0 ? 0.3 : -0.3);
  Tensor shifted = Tensor::from({3, 4}, off, true);
  run("relu", [&] { return weighted_sum(relu(shifted), w34); }, {shifted});

  Tensor s31 = Tensor::from({3, 1}, rng.normal_vec(3), true);
  run("scale_rows", [&] { return weighted_sum(scale_rows(a, s31), w34); }, {a, s31});
  std::vector<size_t> idx{2, 0, 2};
  run("index_select", [&] { return weighted_sum(index_select(a, idx), w34); }, {a});
  Tensor src = randn(3, 4);
  run("index_add", [&] { return weighted_sum(index_add(a, idx, src), w34); }, {a, src});
  run("gather_scalar", [&] {
        return weighted_sum(gather_scalar(a, {0, 1, 2}, {3, 1, 0}), w31);
      }, {a});
  run("slice_cols", [&] { return weighted_sum(slice_cols(a, 1, 2), w32); }, {a});
  run("concat_cols", [&] { return weighted_sum(concat_cols({a, c34}), w38); }, {a, c34});
  run("concat_rows", [&] { return weighted_sum(concat_rows({a, c34}), w64); }, {a, c34});
  std::vector<size_t> labels{1, 3, 0};
  run("cross_entropy", [&] { return cross_entropy(a, labels); }, {a});
  return s;
}

std::vector<std::pair<std::string, double>> model_fd_group_errors(
    const AttentionSpec& spec, uint64_t seed, size_t batch, double h) {
  Prng rng = Prng(seed).split(0x02);
  Prng init_rng = rng.split(1);
  ModelParams params = ModelParams::init(spec, init_rng);

  std::vector<MultiChannelImage> imgs;
  std::vector<size_t> labels;
  for (size_t b = 0; b < batch; ++b) {
    MultiChannelImage img{spec.height, spec.width, spec.channels,
                          rng.normal_vec(spec.channels * spec.height *
                                         spec.width)};
    imgs.push_back(std::move(img));
    labels.push_back(rng.uniform_int(spec.num_classes));
  }
  auto loss_fn = [&]() {
    ForwardResult r = forward(spec, params, imgs, {});
    return add(cross_entropy(r.logits, labels), r.balance);
  };

  auto named = params.named();
  Tensor loss = loss_fn();
  for (auto& [name, t] : named) t.zero_grad();
  loss.backward();
  std::vector<std::vector<double>> analytic;
  for (auto& [name, t] : named) analytic.push_back(t.grad());

  std::vector<std::pair<std::string, double>> errors;
  for (size_t p = 0; p < named.size(); ++p) {
    auto& data = named[p].second.mutable_data();
    double max_dev = 0.0, g_scale = 0.0;
    for (double g : analytic[p]) g_scale = std::max(g_scale, std::abs(g));
    for (size_t i = 0; i < data.size(); ++i) {
      const double keep = data[i];
      data[i] = keep + h;
      const double up = loss_fn().value();
      data[i] = keep - h;
      const double down = loss_fn().value();
      data[i] = keep;
      const double fd = (up - down) / (2.0 * h);
      g_scale = std::max(g_scale, std::abs(fd));
      max_dev = std::max(max_dev, std::abs(fd - analytic[p][i]));
    }
    errors.emplace_back(named[p].first, max_dev / std::max(g_scale, 1e-8));
  }
  return errors;
}

CheckSummary check_model_gradients(uint64_t seed,
                                   const std::vector<size_t>& topks,
                                   double tol) {
  CheckSummary s;
  AttentionSpec tiny;
  tiny.height = tiny.width = 8;
  tiny.patch = 4;
  tiny.channels = 3;
  tiny.dim = 8;
  tiny.heads = 2;
  tiny.layers = 1;
  for (AggMode mode : {AggMode::kGateWeighted, AggMode::kUniform}) {
    for (size_t k : topks) {
      AttentionSpec spec = tiny;
      spec.topk = k;
      spec.aggregation = mode;
      ++s.cases_run;
      for (auto& [group, err] : model_fd_group_errors(spec, seed)) {
        if (!(err < tol)) {
          s.failures.push_back(
              {"model_gradients",
               "seed=" + std::to_string(seed) + " k=" + std::to_string(k) +
                   " mode=" + (mode == AggMode::kGateWeighted ? "gate" : "uniform") +
                   " group=" + group + " rel_err=" + fmt(err)});
        }
      }
    }
  }
  return s;
}

CheckSummary check_oracle_equivalence(uint64_t seed, size_t cases, double tol) {
  CheckSummary s;
  Prng rng = Prng(seed).split(0x03);
  for (size_t i = 0; i < cases; ++i) {
    const size_t heads = std::vector<size_t>{1, 2, 4}[rng.uniform_int(3)];
    const size_t d = heads * (1 + rng.uniform_int(4));
    const size_t c_total = 1 + rng.uniform_int(6);
    const size_t n = 1 + rng.uniform_int(8);
    const size_t k = 1 + rng.uniform_int(c_total);
    std::vector<int> active = ascending(c_total);
    if (c_total > 1 && rng.uniform_int(2) == 0) {
      // exercise the channel-subset path
      const size_t keep = 1 + rng.uniform_int(c_total);
      Prng sub = rng.split(i);
      std::vector<int> pool = active;
      for (size_t j = 0; j < keep; ++j)
        std::swap(pool[j], pool[j + sub.uniform_int(pool.size() - j)]);
      pool.resize(keep);
      std::sort(pool.begin(), pool.end());
      active = pool;
    }
    Prng local = rng.split(1000 + i);
    TokenGrid grid = random_grid(local, n, active, d);
    RouterParams router = RouterParams::init(d, c_total, local);
    AttentionParams attn = AttentionParams::init(d, c_total, heads, local);
    RoutingTable routing = route(grid, router, k);
    const AggMode mode =
        rng.uniform_int(2) ? AggMode::kUniform : AggMode::kGateWeighted;
    ++s.cases_run;
    Tensor batched = channel_moe_forward(grid, routing, attn, mode).tokens;
    Tensor reference = naive_oracle(grid, routing, attn, mode);
    double dev = 0.0;
    for (size_t j = 0; j < batched.size(); ++j)
      dev = std::max(dev, std::abs(batched.data()[j] - reference.data()[j]));
    if (!(dev < tol)) {
      s.failures.push_back(
          {"oracle_equivalence",
           "seed=" + std::to_string(seed) + " case=" + std::to_string(i) +
               " N=" + std::to_string(n) + " C=" + std::to_string(c_total) +
               " |active|=" + std::to_string(active.size()) +
               " k=" + std::to_string(k) + " heads=" + std::to_string(heads) +
               " mode=" + (mode == AggMode::kGateWeighted ? "gate" : "uniform") +
               " max_dev=" + fmt(dev)});
      return s;  // first counterexample is enough
    }
  }
  return s;
}

CheckSummary check_router_properties(uint64_t seed, size_t cases) {
  CheckSummary s;
  Prng rng = Prng(seed).split(0x04);
  auto fail = [&s](const std::string& what) {
    s.failures.push_back({"router_properties", what});
  };
  for (size_t i = 0; i < cases; ++i) {
    Prng local = rng.split(i);
    const size_t c_total = 1 + local.uniform_int(6);
    const size_t n = 1 + local.uniform_int(6);
    const size_t d = 4 + local.uniform_int(5);
    const size_t k = 1 + local.uniform_int(c_total);
    std::vector<int> active = ascending(c_total);
    TokenGrid grid = random_grid(local, n, active, d);
    RouterParams router = RouterParams::init(d, c_total, local);
    RoutingTable routing = route(grid, router, k);
    ++s.cases_run;
    const std::string tag = " (seed=" + std::to_string(seed) +
                            " case=" + std::to_string(i) +
                            " N=" + std::to_string(n) +
                            " C=" + std::to_string(c_total) +
                            " k=" + std::to_string(k) + ")";

    const size_t t_count = routing.tokens();
    size_t load_total = 0;
    for (size_t c = 0; c < c_total; ++c) load_total += routing.counts[c];
    if (load_total != k * t_count) {
      fail("sum of loads " + std::to_string(load_total) + " != k*T = " +
           std::to_string(k * t_count) + tag);
      return s;
    }
    for (size_t t = 0; t < t_count; ++t) {
      // exact top-k support, checked against a full sort
      std::vector<size_t> order(c_total);
      for (size_t c = 0; c < c_total; ++c) order[c] = c;
      std::stable_sort(order.begin(), order.end(), [&](size_t x, size_t y) {
        return routing.gates_pre_topk.at(t, x) > routing.gates_pre_topk.at(t, y);
      });
      std::vector<int> expect(order.begin(), order.begin() + k);
      std::sort(expect.begin(), expect.end());
      if (expect != routing.expert_sets[t]) {
        fail("expert set disagrees with full-sort selection at token " +
             std::to_string(t) + tag);
        return s;
      }
      size_t nonzeros = 0;
      for (size_t c = 0; c < c_total; ++c) {
        const double g = routing.gates.at(t, c);
        const bool selected = std::binary_search(
            routing.expert_sets[t].begin(), routing.expert_sets[t].end(), (int)c);
        if (g != 0.0) ++nonzeros;
        if (selected && g != routing.gates_pre_topk.at(t, c)) {
          fail("surviving gate value altered at token " + std::to_string(t) + tag);
          return s;
        }
        if (!selected && g != 0.0) {
          fail("nonzero gate off the top-k support at token " +
               std::to_string(t) + tag);
          return s;
        }
      }
      if (nonzeros != k) {
        fail("row " + std::to_string(t) + " has " + std::to_string(nonzeros) +
             " nonzeros, expected k=" + std::to_string(k) + tag);
        return s;
      }
    }

    // renormalized rows sum to one
    RoutingTable renorm = route(grid, router, k, /*renormalize=*/true);
    for (size_t t = 0; t < t_count; ++t) {
      double row_total = 0.0;
      for (size_t c = 0; c < c_total; ++c) row_total += renorm.gates.at(t, c);
      if (std::abs(row_total - 1.0) > 1e-12) {
        fail("renormalized row sums to " + fmt(row_total) + tag);
        return s;
      }
    }

    // permutation equivariance: relabel channels by a cyclic shift
    if (c_total > 1) {
      std::vector<size_t> perm(c_total);
      for (size_t c = 0; c < c_total; ++c) perm[c] = (c + 1) % c_total;
      TokenGrid grid2;
      grid2.n_patches = n;
      grid2.dim = d;
      grid2.active_channels = active;
      std::vector<double> buf(t_count * d);
      for (size_t p = 0; p < n; ++p)
        for (size_t j = 0; j < c_total; ++j) {
          const size_t src = grid.flat_id(p, j);
          const size_t dst = p * c_total + perm[j];
          for (size_t x = 0; x < d; ++x)
            buf[dst * d + x] = grid.tokens.data()[src * d + x];
        }
      grid2.tokens = Tensor::from({t_count, d}, std::move(buf));
      RouterParams router2;
      std::vector<double> w2(d * c_total), b2(c_total);
      for (size_t r = 0; r < d; ++r)
        for (size_t c = 0; c < c_total; ++c)
          w2[r * c_total + perm[c]] = router.weight.data()[r * c_total + c];
      for (size_t c = 0; c < c_total; ++c)
        b2[perm[c]] = router.bias.data()[c];
      router2.weight = Tensor::from({d, c_total}, std::move(w2));
      router2.bias = Tensor::from({1, c_total}, std::move(b2));
      RoutingTable routing2 = route(grid2, router2, k);
      for (size_t p = 0; p < n; ++p)
        for (size_t j = 0; j < c_total; ++j)
          for (size_t c = 0; c < c_total; ++c) {
            const double g1 = routing.gates.at(grid.flat_id(p, j), c);
            const double g2 = routing2.gates.at(p * c_total + perm[j], perm[c]);
            if (std::abs(g1 - g2) > 1e-12) {
              fail("gates not equivariant under channel relabeling" + tag);
              return s;
            }
          }
    }

    // CV^2 is scale free
    std::vector<double> v(c_total);
    for (auto& x : v) x = local.uniform() + 0.1;
    if (std::abs(cv_squared(v) -
                 cv_squared([&] {
                   auto w = v;
                   for (auto& x : w) x *= 37.5;
                   return w;
                 }())) > 1e-12) {
      fail("cv_squared not scale invariant" + tag);
      return s;
    }
  }
  return s;
}

CheckSummary check_attention_stochastic(uint64_t seed, size_t cases) {
  CheckSummary s;
  Prng rng = Prng(seed).split(0x05);
  for (size_t i = 0; i < cases; ++i) {
    Prng local = rng.split(i);
    const size_t m = 1 + local.uniform_int(8);
    const size_t n = 1 + local.uniform_int(8);
    const size_t dh = 1 + local.uniform_int(8);
    Tensor q = Tensor::from({m, dh}, local.normal_vec(m * dh, 3.0));
    Tensor kt = Tensor::from({dh, n}, local.normal_vec(dh * n, 3.0));
    Tensor att = softmax_rows(scale(matmul(q, kt), 1.0 / std::sqrt((double)dh)));
    ++s.cases_run;
    for (size_t r = 0; r < m; ++r) {
      double total = 0.0;
      for (size_t c = 0; c < n; ++c) total += att.at(r, c);
      if (std::abs(total - 1.0) > 1e-12) {
        s.failures.push_back(
            {"attention_stochastic",
             "seed=" + std::to_string(seed) + " case=" + std::to_string(i) +
                 " row=" + std::to_string(r) + " sum=" + fmt(total)});
        return s;
      }
    }
  }
  return s;
}

namespace {

/// Hand-built routing table sending flat token t to channel (t % C)
/// with unit gate: every channel receives exactly T/C tokens.
RoutingTable forced_uniform_routing(const TokenGrid& grid) {
  const size_t c_total = grid.channels();
  const size_t t_count = grid.n_patches * c_total;
  RoutingTable r;
  r.k = 1;
  std::vector<double> gates(t_count * c_total, 0.0);
  r.expert_sets.resize(t_count);
  r.channel_tokens.resize(c_total);
  r.counts.assign(c_total, 0);
  for (size_t t = 0; t < t_count; ++t) {
    const size_t c = t % c_total;
    gates[t * c_total + c] = 1.0;
    r.expert_sets[t] = {(int)c};
    r.channel_tokens[c].push_back(t);
    ++r.counts[c];
  }
  r.gates = Tensor::from({t_count, c_total}, gates);
  r.gates_pre_topk = Tensor::from({t_count, c_total}, gates);
  return r;
}

uint64_t measure_attention_flops(const TokenGrid& grid,
                                 const RoutingTable& routing,
                                 const AttentionParams& attn) {
  macs::reset();
  channel_moe_forward(grid, routing, attn, AggMode::kGateWeighted);
  return 2 * macs::count();
}

}  // namespace

CheckSummary check_mac_instrumentation(uint64_t seed) {
  CheckSummary s;
  Prng rng = Prng(seed).split(0x06);
  const size_t n = 4, c = 4, d = 8, heads = 2;
  std::vector<int> active = ascending(c);
  TokenGrid grid = random_grid(rng, n, active, d);
  RouterParams router = RouterParams::init(d, c, rng);
  AttentionParams attn = AttentionParams::init(d, c, heads, rng);
  auto fail = [&s](const std::string& what) {
    s.failures.push_back({"mac_instrumentation", what});
  };

  // k = C: every channel processes every token, no routing variance.
  {
    ++s.cases_run;
    RoutingTable routing = route(grid, router, c);
    const uint64_t measured = measure_attention_flops(grid, routing, attn);
    const double expected = moe_cost(n, c, d, c).total_flops();
    if ((double)measured != expected)
      fail("k=C: measured " + std::to_string(measured) + " FLOPs, analytic " +
           fmt(expected));
  }
  // forced-uniform k = 1
  {
    ++s.cases_run;
    RoutingTable routing = forced_uniform_routing(grid);
    const uint64_t measured = measure_attention_flops(grid, routing, attn);
    const double expected = moe_cost(n, c, d, 1).total_flops();
    if ((double)measured != expected)
      fail("uniform k=1: measured " + std::to_string(measured) +
           " FLOPs, analytic " + fmt(expected));
  }
  // arbitrary routing: attention term equals 4*D*sum_k N_k*M_k exactly
  for (size_t k = 1; k <= c; ++k) {
    ++s.cases_run;
    RoutingTable routing = route(grid, router, k);
    const uint64_t measured = measure_attention_flops(grid, routing, attn);
    uint64_t nm = 0;
    for (size_t ch = 0; ch < c; ++ch) nm += routing.counts[ch] * n;
    const uint64_t projections = 8 * n * c * d * d;  // Q + K + V + O
    const uint64_t expected = projections + 4 * d * nm;
    if (measured != expected)
      fail("k=" + std::to_string(k) + ": measured " + std::to_string(measured) +
           " FLOPs, per-channel identity gives " + std::to_string(expected));
  }
  return s;
}

CheckSummary run_all_checks(uint64_t seed, size_t cases) {
  CheckSummary s;
  if (cases == 0) return s;
  s.merge(check_op_gradients(seed));
  s.merge(check_model_gradients(seed, {1, 2, 3}));
  s.merge(check_oracle_equivalence(seed, cases));
  s.merge(check_router_properties(seed, std::max<size_t>(1, cases / 2)));
  s.merge(check_attention_stochastic(seed, std::max<size_t>(1, cases / 2)));
  s.merge(check_mac_instrumentation(seed));
  return s;
}

}  // namespace moevit
