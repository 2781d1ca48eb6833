#include "moevit/router.hpp"

#include <algorithm>
#include <cmath>

namespace moevit {

RouterParams RouterParams::init(size_t dim, size_t channels, Prng& rng) {
  RouterParams r;
  const double s = 1.0 / std::sqrt((double)dim);
  r.weight = Tensor::from({dim, channels}, rng.normal_vec(dim * channels, s), true);
  r.bias = Tensor::zeros({1, channels}, true);
  return r;
}

std::vector<std::pair<std::string, Tensor>> RouterParams::named(
    const std::string& prefix) const {
  return {{prefix + "weight", weight}, {prefix + "bias", bias}};
}

size_t RoutingTable::source_row(size_t channel, size_t token) const {
  const auto& rows = channel_tokens[channel];
  const auto it = std::lower_bound(rows.begin(), rows.end(), token);
  if (it == rows.end() || *it != token)
    throw contract_error("token " + std::to_string(token) +
                         " was not routed to channel " + std::to_string(channel));
  return (size_t)(it - rows.begin());
}

std::vector<int> tie_break(const std::vector<double>& values, size_t k) {
  if (k > values.size())
    throw config_error("tie_break: k=" + std::to_string(k) + " exceeds C=" +
                       std::to_string(values.size()));
  std::vector<int> order(values.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = (int)i;
  std::stable_sort(order.begin(), order.end(), [&values](int a, int b) {
    return values[(size_t)a] > values[(size_t)b];
  });
  order.resize(k);
  std::sort(order.begin(), order.end());
  return order;
}

RoutingTable route(const TokenGrid& tokens, const RouterParams& params, size_t k,
                   bool renormalize) {
  const size_t c_total = params.weight.cols();
  const size_t n_active = tokens.channels();
  if (k < 1 || k > c_total)
    throw config_error("route: k=" + std::to_string(k) +
                       " out of range [1, " + std::to_string(c_total) + "]");
  const size_t k_eff = std::min(k, n_active);

  Tensor logits = add(matmul(tokens.tokens, params.weight), params.bias);
  if (n_active < c_total) {
    // Mask experts of inactive channels out of the softmax.
    std::vector<double> mask(c_total, -1e30);
    for (int c : tokens.active_channels) mask[(size_t)c] = 0.0;
    logits = add(logits, Tensor::from({1, c_total}, std::move(mask)));
  }
  Tensor pre = softmax_rows(logits);

  const size_t t_count = pre.rows();
  RoutingTable table;
  table.k = k_eff;
  table.gates_pre_topk = pre;
  table.expert_sets.resize(t_count);
  table.channel_tokens.resize(c_total);
  table.counts.assign(c_total, 0);

  std::vector<double> mask(t_count * c_total, 0.0);
  std::vector<double> row(c_total);
  for (size_t t = 0; t < t_count; ++t) {
    for (size_t c = 0; c < c_total; ++c) row[c] = pre.at(t, c);
    table.expert_sets[t] = tie_break(row, k_eff);
    for (int c : table.expert_sets[t]) {
      mask[t * c_total + (size_t)c] = 1.0;
      table.channel_tokens[(size_t)c].push_back(t);
      ++table.counts[(size_t)c];
    }
  }
  Tensor gates = mul(pre, Tensor::from({t_count, c_total}, std::move(mask)));
  if (renormalize) {
    Tensor rs = row_sum(gates);
    gates = scale_rows(gates, div(Tensor::full({t_count, 1}, 1.0), rs));
  }
  table.gates = gates;
  return table;
}

double cv_squared(const std::vector<double>& values) {
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= (double)values.size();
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  var /= (double)values.size();
  return var / (mean * mean);
}

Tensor balance_loss(const Tensor& gates_pre_topk, const std::vector<size_t>& load,
                    double w_importance, double w_load,
                    const std::vector<int>* active_channels) {
  const size_t c = gates_pre_topk.cols();
  if (load.size() != c)
    throw dim_error("balance_loss: load vector length " +
                    std::to_string(load.size()) + " != C=" + std::to_string(c));
  Tensor importance = transpose(col_sum(gates_pre_topk));  // [C x 1]
  std::vector<double> load_d;
  if (active_channels && active_channels->size() < c) {
    std::vector<size_t> rows, cols(active_channels->size(), 0);
    for (int a : *active_channels) {
      rows.push_back((size_t)a);
      load_d.push_back((double)load[(size_t)a]);
    }
    importance = gather_scalar(importance, rows, cols);
  } else {
    load_d.assign(load.begin(), load.end());
  }
  Tensor m2 = mean(mul(importance, importance));
  Tensor mn = mean(importance);
  Tensor cv2_imp = add_const(div(m2, mul(mn, mn)), -1.0);
  return add_const(scale(cv2_imp, w_importance), w_load * cv_squared(load_d));
}

}  // namespace moevit
