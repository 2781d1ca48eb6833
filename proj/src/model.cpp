#include "moevit/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

#include "moevit/io.hpp"

namespace moevit {

void AttentionSpec::validate() const {
  if (patch == 0 || height % patch != 0 || width % patch != 0)
    throw config_error("patch " + std::to_string(patch) +
                       " does not divide image " + std::to_string(height) +
                       "x" + std::to_string(width));
  if (channels < 1) throw config_error("channels must be >= 1");
  if (heads == 0 || dim % heads != 0)
    throw config_error("heads " + std::to_string(heads) +
                       " must divide dim " + std::to_string(dim));
  if (topk < 1 || topk > channels)
    throw config_error("topk " + std::to_string(topk) +
                       " out of range [1, " + std::to_string(channels) + "]");
  if (num_classes < 1) throw config_error("num_classes must be >= 1");
}

ModelParams ModelParams::init(const AttentionSpec& spec, Prng& rng) {
  spec.validate();
  ModelParams p;
  p.embedding = EmbeddingParams::init(spec.patch, spec.n_patches(),
                                      spec.channels, spec.dim, rng);
  const size_t d = spec.dim;
  const double s = 1.0 / std::sqrt((double)d);
  const double s4 = 1.0 / std::sqrt((double)(4 * d));
  for (size_t l = 0; l < spec.layers; ++l) {
    BlockParams b;
    b.router = RouterParams::init(d, spec.channels, rng);
    b.attn = AttentionParams::init(d, spec.channels, spec.heads, rng);
    b.norm1_gain = Tensor::full({1, d}, 1.0, true);
    b.norm1_bias = Tensor::zeros({1, d}, true);
    b.norm2_gain = Tensor::full({1, d}, 1.0, true);
    b.norm2_bias = Tensor::zeros({1, d}, true);
    b.mlp_w1 = Tensor::from({d, 4 * d}, rng.normal_vec(d * 4 * d, s), true);
    b.mlp_b1 = Tensor::zeros({1, 4 * d}, true);
    b.mlp_w2 = Tensor::from({4 * d, d}, rng.normal_vec(4 * d * d, s4), true);
    b.mlp_b2 = Tensor::zeros({1, d}, true);
    p.blocks.push_back(std::move(b));
  }
  p.final_norm_gain = Tensor::full({1, d}, 1.0, true);
  p.final_norm_bias = Tensor::zeros({1, d}, true);
  p.head_w = Tensor::from({d, spec.num_classes},
                          rng.normal_vec(d * spec.num_classes, s), true);
  p.head_b = Tensor::zeros({1, spec.num_classes}, true);
  return p;
}

std::vector<std::pair<std::string, Tensor>> ModelParams::named() const {
  auto out = embedding.named("embedding.");
  for (size_t l = 0; l < blocks.size(); ++l) {
    const std::string pre = "block" + std::to_string(l) + ".";
    const auto& b = blocks[l];
    for (auto& e : b.router.named(pre + "router.")) out.push_back(e);
    for (auto& e : b.attn.named(pre + "attn.")) out.push_back(e);
    out.emplace_back(pre + "norm1_gain", b.norm1_gain);
    out.emplace_back(pre + "norm1_bias", b.norm1_bias);
    out.emplace_back(pre + "norm2_gain", b.norm2_gain);
    out.emplace_back(pre + "norm2_bias", b.norm2_bias);
    out.emplace_back(pre + "mlp_w1", b.mlp_w1);
    out.emplace_back(pre + "mlp_b1", b.mlp_b1);
    out.emplace_back(pre + "mlp_w2", b.mlp_w2);
    out.emplace_back(pre + "mlp_b2", b.mlp_b2);
  }
  out.emplace_back("final_norm_gain", final_norm_gain);
  out.emplace_back("final_norm_bias", final_norm_bias);
  out.emplace_back("head_w", head_w);
  out.emplace_back("head_b", head_b);
  return out;
}

std::vector<Tensor> ModelParams::all() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named()) out.push_back(t);
  return out;
}

ModelParams ModelParams::from_named(
    const AttentionSpec& spec,
    const std::vector<std::pair<std::string, Tensor>>& tensors) {
  std::map<std::string, Tensor> by_name(tensors.begin(), tensors.end());
  Prng dummy(0);
  ModelParams p = ModelParams::init(spec, dummy);
  auto slots = p.named();
  for (auto& [name, slot] : slots) {
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw contract_error("checkpoint missing parameter " + name);
    if (it->second.shape() != slot.shape())
      throw contract_error("checkpoint shape mismatch for " + name);
    slot.mutable_data() = it->second.data();
  }
  return p;
}

namespace {

Tensor affine_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  return add(mul(layer_norm(x), gain), bias);
}

std::vector<int> all_channels(size_t c) {
  std::vector<int> out(c);
  for (size_t i = 0; i < c; ++i) out[i] = (int)i;
  return out;
}

}  // namespace

ForwardResult forward(const AttentionSpec& spec, const ModelParams& params,
                      const std::vector<MultiChannelImage>& batch,
                      const std::vector<int>& active_channels,
                      double w_importance, double w_load) {
  spec.validate();
  const std::vector<int>& active =
      active_channels.empty() ? all_channels(spec.channels) : active_channels;
  const size_t n = spec.n_patches();
  const size_t t_count = n * active.size();

  ForwardResult result;
  std::vector<Tensor> logit_rows;
  std::vector<Tensor> balance_terms;
  std::vector<size_t> token_rows(t_count);
  for (size_t i = 0; i < t_count; ++i) token_rows[i] = i;

  for (const auto& img : batch) {
    if (img.height != spec.height || img.width != spec.width ||
        img.channels != spec.channels)
      throw config_error("image " + std::to_string(img.channels) + "x" +
                         std::to_string(img.height) + "x" +
                         std::to_string(img.width) + " does not match spec");
    Tensor patches = patchify_subset(img, spec.patch, active);
    TokenGrid grid = embed(patches, params.embedding, active, n, true);
    Tensor x = concat_rows({grid.tokens, grid.cls});
    std::vector<RoutingTable> layer_routing;
    for (const auto& blk : params.blocks) {
      Tensor y = affine_norm(x, blk.norm1_gain, blk.norm1_bias);
      TokenGrid normed;
      normed.n_patches = n;
      normed.dim = spec.dim;
      normed.active_channels = active;
      normed.tokens = index_select(y, token_rows);
      normed.cls = index_select(y, {t_count});
      RoutingTable routing = route(normed, blk.router, spec.topk);
      MoeAttentionOutput attn =
          channel_moe_forward(normed, routing, blk.attn, spec.aggregation);
      x = add(x, concat_rows({attn.tokens, attn.cls}));
      Tensor z = affine_norm(x, blk.norm2_gain, blk.norm2_bias);
      Tensor mlp = add(
          matmul(gelu(add(matmul(z, blk.mlp_w1), blk.mlp_b1)), blk.mlp_w2),
          blk.mlp_b2);
      x = add(x, mlp);
      balance_terms.push_back(balance_loss(routing.gates_pre_topk,
                                           routing.counts, w_importance,
                                           w_load, &active));
      layer_routing.push_back(std::move(routing));
    }
    Tensor encoded =
        affine_norm(x, params.final_norm_gain, params.final_norm_bias);
    Tensor cls_repr = index_select(encoded, {t_count});
    logit_rows.push_back(add(matmul(cls_repr, params.head_w), params.head_b));
    result.routing.push_back(std::move(layer_routing));
  }
  result.logits = concat_rows(logit_rows);
  if (balance_terms.empty()) {
    result.balance = Tensor::scalar(0.0);
  } else {
    Tensor acc = balance_terms[0];
    for (size_t i = 1; i < balance_terms.size(); ++i)
      acc = add(acc, balance_terms[i]);
    result.balance = scale(acc, 1.0 / (double)balance_terms.size());
  }
  return result;
}

// ---------------------------------------------------------------------------
// Synthetic task
// ---------------------------------------------------------------------------

namespace {

// Distinct low-frequency pattern per class.
double class_pattern(size_t cls, double amplitude, size_t x, size_t y,
                     size_t w, size_t h) {
  static const int freqs[][2] = {{0, 1}, {1, 0}, {1, 1}, {2, 0}, {0, 2},
                                 {2, 1}, {1, 2}, {2, 2}, {3, 0}, {0, 3}};
  const size_t nf = sizeof(freqs) / sizeof(freqs[0]);
  const int fx = freqs[cls % nf][0], fy = freqs[cls % nf][1];
  const double tau = 2.0 * std::numbers::pi;
  return amplitude * std::cos(tau * fx * ((double)x + 0.5) / (double)w) *
         std::cos(tau * fy * ((double)y + 0.5) / (double)h);
}

}  // namespace

std::vector<LabeledImage> gen_synthetic(const SyntheticTask& task, size_t count,
                                        uint64_t split_seed) {
  if (task.num_classes < 1) throw config_error("task needs >= 1 class");
  for (int c : task.signal_channels)
    if (c < 0 || (size_t)c >= task.channels)
      throw config_error("signal channel " + std::to_string(c) +
                         " out of range");
  Prng rng = Prng(task.seed).split(split_seed);
  std::vector<bool> is_signal(task.channels, false);
  for (int c : task.signal_channels) is_signal[(size_t)c] = true;
  std::vector<LabeledImage> out;
  out.reserve(count);
  for (size_t i = 0; i < count; ++i) {
    const size_t label = i % task.num_classes;
    MultiChannelImage img{task.height, task.width, task.channels,
                          std::vector<double>(task.channels * task.height *
                                              task.width)};
    for (size_t c = 0; c < task.channels; ++c)
      for (size_t y = 0; y < task.height; ++y)
        for (size_t x = 0; x < task.width; ++x) {
          double v = rng.normal() * task.noise_sigma;
          if (is_signal[c])
            v += class_pattern(label, task.amplitude, x, y, task.width,
                               task.height);
          img.at(c, y, x) = v;
        }
    out.push_back({std::move(img), label});
  }
  return out;
}

double probe_accuracy(const SyntheticTask& task,
                      const std::vector<LabeledImage>& data) {
  if (data.empty()) throw contract_error("probe_accuracy: empty dataset");
  const size_t hw = task.height * task.width;
  const size_t dim = task.signal_channels.size() * hw;
  auto features = [&](const MultiChannelImage& img) {
    std::vector<double> f;
    f.reserve(dim);
    for (int c : task.signal_channels) {
      const double* base = img.pixels.data() + (size_t)c * hw;
      f.insert(f.end(), base, base + hw);
    }
    return f;
  };
  std::vector<std::vector<double>> centroids(task.num_classes,
                                             std::vector<double>(dim, 0.0));
  std::vector<size_t> counts(task.num_classes, 0);
  for (const auto& s : data) {
    auto f = features(s.image);
    for (size_t i = 0; i < dim; ++i) centroids[s.label][i] += f[i];
    ++counts[s.label];
  }
  for (size_t c = 0; c < task.num_classes; ++c)
    if (counts[c])
      for (auto& v : centroids[c]) v /= (double)counts[c];
  size_t correct = 0;
  for (const auto& s : data) {
    auto f = features(s.image);
    size_t best = 0;
    double best_d = 1e300;
    for (size_t c = 0; c < task.num_classes; ++c) {
      double d2 = 0.0;
      for (size_t i = 0; i < dim; ++i) {
        const double diff = f[i] - centroids[c][i];
        d2 += diff * diff;
      }
      if (d2 < best_d) {
        best_d = d2;
        best = c;
      }
    }
    if (best == s.label) ++correct;
  }
  return (double)correct / (double)data.size();
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

void AdamW::attach(const std::vector<Tensor>& params) {
  m.clear();
  v.clear();
  for (const auto& p : params) {
    m.emplace_back(p.size(), 0.0);
    v.emplace_back(p.size(), 0.0);
  }
  if (decay.size() != params.size()) decay.assign(params.size(), 1);
}

bool decays(const std::string& name) {
  // decay only the dense weight matrices; biases, norms, embeddings
  // and the router gate stay undecayed (decaying the router pulls the
  // gate distribution back toward uniform every step)
  for (const char* skip : {"bias", "_b", "norm", "router", "pos_table",
                           "chan_table", "cls_seed"})
    if (name.find(skip) != std::string::npos) return false;
  return true;
}

void AdamW::step(std::vector<Tensor>& params, double lr) {
  ++t;
  const double bc1 = 1.0 - std::pow(beta1, (double)t);
  const double bc2 = 1.0 - std::pow(beta2, (double)t);
  for (size_t i = 0; i < params.size(); ++i) {
    auto& data = params[i].mutable_data();
    const auto& grad = params[i].grad();
    for (size_t j = 0; j < data.size(); ++j) {
      m[i][j] = beta1 * m[i][j] + (1.0 - beta1) * grad[j];
      v[i][j] = beta2 * v[i][j] + (1.0 - beta2) * grad[j] * grad[j];
      const double mhat = m[i][j] / bc1;
      const double vhat = v[i][j] / bc2;
      const double wd = decay[i] ? weight_decay : 0.0;
      data[j] -= lr * (mhat / (std::sqrt(vhat) + eps) + wd * data[j]);
    }
  }
}

TrainState make_train_state(const AttentionSpec& spec, const TrainOptions& opt) {
  spec.validate();
  TrainState state;
  state.spec = spec;
  state.seed = opt.seed;
  Prng init_rng = Prng(opt.seed).split(0xA0);
  state.params = ModelParams::init(spec, init_rng);
  state.opt.weight_decay = opt.weight_decay;
  auto named = state.params.named();
  state.opt.decay.clear();
  for (auto& [name, t] : named) state.opt.decay.push_back(decays(name) ? 1 : 0);
  state.opt.attach(state.params.all());
  return state;
}

double evaluate(const AttentionSpec& spec, const ModelParams& params,
                const std::vector<LabeledImage>& data) {
  if (data.empty()) throw contract_error("evaluate: empty dataset");
  size_t correct = 0;
  const size_t chunk = 16;
  for (size_t start = 0; start < data.size(); start += chunk) {
    const size_t end = std::min(start + chunk, data.size());
    std::vector<MultiChannelImage> imgs;
    for (size_t i = start; i < end; ++i) imgs.push_back(data[i].image);
    ForwardResult r = forward(spec, params, imgs, {});
    for (size_t i = start; i < end; ++i) {
      const size_t row = i - start;
      size_t best = 0;
      for (size_t c = 1; c < spec.num_classes; ++c)
        if (r.logits.at(row, c) > r.logits.at(row, best)) best = c;
      if (best == data[i].label) ++correct;
    }
  }
  return (double)correct / (double)data.size();
}

namespace {

// Fixed probe batch for the recorded loss columns: with lr = 0 the
// metrics stay flat even though the sampled training batches vary.
struct ProbeMetrics {
  double loss, ce, balance, acc;
};

ProbeMetrics probe_metrics(const AttentionSpec& spec, const ModelParams& params,
                           const std::vector<LabeledImage>& train_set,
                           const TrainOptions& opt) {
  const size_t n = std::min(opt.batch_size, train_set.size());
  std::vector<MultiChannelImage> imgs;
  std::vector<size_t> labels;
  for (size_t i = 0; i < n; ++i) {
    imgs.push_back(train_set[i].image);
    labels.push_back(train_set[i].label);
  }
  ForwardResult r = forward(spec, params, imgs, {}, opt.w_importance, opt.w_load);
  const double ce = cross_entropy(r.logits, labels).value();
  const double bal = opt.balance ? r.balance.value() : 0.0;
  size_t correct = 0;
  for (size_t i = 0; i < n; ++i) {
    size_t best = 0;
    for (size_t c = 1; c < spec.num_classes; ++c)
      if (r.logits.at(i, c) > r.logits.at(i, best)) best = c;
    if (best == labels[i]) ++correct;
  }
  return {ce + bal, ce, bal, (double)correct / (double)n};
}

}  // namespace

void train_steps(TrainState& state, const std::vector<LabeledImage>& train_set,
                 const std::vector<LabeledImage>& eval_set,
                 const TrainOptions& opt, size_t until) {
  const AttentionSpec& spec = state.spec;
  if (train_set.empty()) throw contract_error("train: empty training set");
  Prng rng(Prng(state.seed).split(0xB0).seed(), state.batch_counter);
  std::vector<Tensor> params = state.params.all();

  while (state.step < until) {
    state.opt.weight_decay = opt.weight_decay;
    const size_t step = state.step;
    const double lr =
        opt.lr * 0.5 *
        (1.0 + std::cos(std::numbers::pi * (double)step / (double)opt.steps));
    std::vector<MultiChannelImage> imgs;
    std::vector<size_t> labels;
    for (size_t b = 0; b < opt.batch_size; ++b) {
      const size_t idx = (size_t)rng.uniform_int(train_set.size());
      imgs.push_back(train_set[idx].image);
      labels.push_back(train_set[idx].label);
    }
    std::vector<int> active;
    if (spec.hcs) active = hcs_sample(spec.channels, rng);

    ForwardResult r =
        forward(spec, state.params, imgs, active, opt.w_importance, opt.w_load);
    Tensor ce = cross_entropy(r.logits, labels);
    Tensor loss = opt.balance ? add(ce, r.balance) : ce;
    if (!std::isfinite(loss.value()))
      throw train_error("loss diverged (NaN/Inf) at step " +
                        std::to_string(step));
    for (auto& p : params) p.zero_grad();
    loss.backward();
    state.opt.step(params, lr);
    state.batch_counter = rng.counter();
    ++state.step;

    const bool record = (opt.eval_interval > 0 &&
                         state.step % opt.eval_interval == 0) ||
                        state.step == until;
    if (record) {
      ProbeMetrics pm = probe_metrics(spec, state.params, train_set, opt);
      const double eval_acc =
          eval_set.empty() ? 0.0 : evaluate(spec, state.params, eval_set);
      state.history.push_back(
          {state.step, pm.loss, pm.ce, pm.balance, pm.acc, eval_acc});
      if (opt.stop_at_eval_acc >= 0.0 && eval_acc >= opt.stop_at_eval_acc)
        return;
    }
  }
}

TrainState train(const AttentionSpec& spec, const SyntheticTask& task,
                 const TrainOptions& opt) {
  if (task.channels != spec.channels || task.num_classes != spec.num_classes ||
      task.height != spec.height || task.width != spec.width)
    throw config_error("task geometry does not match spec");
  auto train_set = gen_synthetic(task, opt.train_size, 0);
  auto eval_set = gen_synthetic(task, opt.eval_size, 1);
  TrainState state = make_train_state(spec, opt);
  train_steps(state, train_set, eval_set, opt, opt.steps);
  return state;
}

double mean_router_mass(const AttentionSpec& spec, const ModelParams& params,
                        const std::vector<MultiChannelImage>& images,
                        const std::vector<int>& channels_of_interest) {
  double mass = 0.0;
  size_t rows = 0;
  for (const auto& img : images) {
    ForwardResult r = forward(spec, params, {img}, {});
    for (const auto& routing : r.routing[0]) {
      const Tensor& pre = routing.gates_pre_topk;
      for (size_t t = 0; t < pre.rows(); ++t) {
        for (int c : channels_of_interest) mass += pre.at(t, (size_t)c);
        ++rows;
      }
    }
  }
  if (rows == 0) throw contract_error("mean_router_mass: no routed tokens");
  return mass / (double)rows;
}

RouteStats route_stats(const AttentionSpec& spec, const ModelParams& params,
                       const std::vector<MultiChannelImage>& images) {
  RouteStats stats;
  stats.importance.assign(spec.layers, std::vector<double>(spec.channels, 0.0));
  stats.load.assign(spec.layers, std::vector<size_t>(spec.channels, 0));
  for (const auto& img : images) {
    ForwardResult r = forward(spec, params, {img}, {});
    for (size_t l = 0; l < spec.layers; ++l) {
      const auto& routing = r.routing[0][l];
      const Tensor& pre = routing.gates_pre_topk;
      for (size_t t = 0; t < pre.rows(); ++t)
        for (size_t c = 0; c < spec.channels; ++c)
          stats.importance[l][c] += pre.at(t, c);
      for (size_t c = 0; c < spec.channels; ++c)
        stats.load[l][c] += routing.counts[c];
    }
  }
  return stats;
}

// ---------------------------------------------------------------------------
// Checkpointing
// ---------------------------------------------------------------------------

void save_checkpoint(const std::string& dir, const TrainState& state) {
  auto tensors = state.params.named();
  auto params = state.params.named();
  for (size_t i = 0; i < params.size(); ++i) {
    tensors.emplace_back("opt.m." + params[i].first,
                         Tensor::from(params[i].second.shape(), state.opt.m[i]));
    tensors.emplace_back("opt.v." + params[i].first,
                         Tensor::from(params[i].second.shape(), state.opt.v[i]));
  }
  write_manifest(dir, tensors);
  std::ofstream f(dir + "/state.txt");
  if (!f) throw contract_error("cannot open for write: " + dir + "/state.txt");
  f << "step " << state.step << "\n";
  f << "adam_t " << state.opt.t << "\n";
  f << "seed " << state.seed << "\n";
  f << "batch_counter " << state.batch_counter << "\n";
}

TrainState load_checkpoint(const std::string& dir, const AttentionSpec& spec) {
  auto tensors = read_manifest(dir, true);
  std::vector<std::pair<std::string, Tensor>> param_tensors;
  std::map<std::string, Tensor> moments;
  for (auto& [name, t] : tensors) {
    if (name.rfind("opt.", 0) == 0)
      moments.emplace(name, t);
    else
      param_tensors.emplace_back(name, t);
  }
  TrainState state;
  state.spec = spec;
  state.params = ModelParams::from_named(spec, param_tensors);
  auto named = state.params.named();
  state.opt.decay.clear();
  for (auto& [name, t] : named) state.opt.decay.push_back(decays(name) ? 1 : 0);
  state.opt.attach(state.params.all());
  for (size_t i = 0; i < named.size(); ++i) {
    auto mi = moments.find("opt.m." + named[i].first);
    auto vi = moments.find("opt.v." + named[i].first);
    if (mi == moments.end() || vi == moments.end())
      throw contract_error("checkpoint missing optimizer state for " +
                           named[i].first);
    state.opt.m[i] = mi->second.data();
    state.opt.v[i] = vi->second.data();
  }
  std::ifstream f(dir + "/state.txt");
  if (!f) throw contract_error("cannot open for read: " + dir + "/state.txt");
  std::string key;
  uint64_t value;
  while (f >> key >> value) {
    if (key == "step") state.step = value;
    if (key == "adam_t") state.opt.t = value;
    if (key == "seed") state.seed = value;
    if (key == "batch_counter") state.batch_counter = value;
  }
  return state;
}

}  // namespace moevit
