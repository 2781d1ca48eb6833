#pragma once

#include <optional>
#include <string>
#include <vector>

#include "moevit/attention.hpp"
#include "moevit/random.hpp"
#include "moevit/router.hpp"
#include "moevit/tensor.hpp"
#include "moevit/tokenizer.hpp"

namespace moevit {

/// All architectural scalars of the encoder.
struct AttentionSpec {
  size_t height = 32;
  size_t width = 32;
  size_t patch = 8;
  size_t channels = 8;
  size_t dim = 64;
  size_t heads = 4;
  size_t layers = 2;
  size_t topk = 2;
  size_t num_classes = 4;
  AggMode aggregation = AggMode::kGateWeighted;
  bool hcs = false;

  size_t n_patches() const { return (height / patch) * (width / patch); }
  void validate() const;
};

/// One pre-norm encoder block: Channel-MoE attention + MLP (ratio 4),
/// each behind a layer norm with learned affine.
struct BlockParams {
  RouterParams router;
  AttentionParams attn;
  Tensor norm1_gain, norm1_bias, norm2_gain, norm2_bias;
  Tensor mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

struct ModelParams {
  EmbeddingParams embedding;
  std::vector<BlockParams> blocks;
  Tensor final_norm_gain, final_norm_bias;
  Tensor head_w, head_b;

  static ModelParams init(const AttentionSpec& spec, Prng& rng);
  std::vector<std::pair<std::string, Tensor>> named() const;
  std::vector<Tensor> all() const;
  static ModelParams from_named(
      const AttentionSpec& spec,
      const std::vector<std::pair<std::string, Tensor>>& tensors);
};

struct ForwardResult {
  Tensor logits;   // [B x num_classes]
  Tensor balance;  // scalar, averaged over images and layers
  std::vector<std::vector<RoutingTable>> routing;  // [image][layer]
};

ForwardResult forward(const AttentionSpec& spec, const ModelParams& params,
                      const std::vector<MultiChannelImage>& batch,
                      const std::vector<int>& active_channels,
                      double w_importance = 0.01, double w_load = 0.01);

// ---------------------------------------------------------------------------
// Synthetic task
// ---------------------------------------------------------------------------

/// Channel-dependent classification task: every class writes its own
/// spatial pattern into the signal channels; all channels carry noise.
struct SyntheticTask {
  uint64_t seed = 7;
  size_t height = 32;
  size_t width = 32;
  size_t channels = 8;
  size_t num_classes = 4;
  std::vector<int> signal_channels = {1, 2};
  // tuned so the task stays hard enough that the cross-entropy gradient
  // (and with it the routing pressure) survives past early training
  double amplitude = 0.45;
  double noise_sigma = 1.0;
};

struct LabeledImage {
  MultiChannelImage image;
  size_t label;
};

/// Labels are balanced within +-1 (round robin). Deterministic in
/// (task.seed, split_seed).
std::vector<LabeledImage> gen_synthetic(const SyntheticTask& task, size_t count,
                                        uint64_t split_seed);

/// Nearest-centroid sanity oracle on the ground-truth signature
/// channels; returns classification accuracy on the given samples.
double probe_accuracy(const SyntheticTask& task,
                      const std::vector<LabeledImage>& data);

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainOptions {
  size_t steps = 600;
  double lr = 2e-3;
  uint64_t seed = 42;
  size_t batch_size = 8;
  double weight_decay = 0.05;
  double w_importance = 0.01;
  double w_load = 0.01;
  bool balance = true;
  size_t eval_interval = 50;
  size_t train_size = 512;
  size_t eval_size = 256;
  double stop_at_eval_acc = -1.0;  // negative: never stop early
};

struct TrainMetrics {
  size_t step;
  double loss, ce_loss, balance_loss, train_acc, eval_acc;
};

/// Adam with decoupled weight decay and cosine learning-rate decay.
struct AdamW {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  double weight_decay = 0.05;
  size_t t = 0;
  std::vector<std::vector<double>> m, v;
  /// Per-parameter decay mask (1 = apply weight decay); defaults to all 1.
  std::vector<uint8_t> decay;

  void attach(const std::vector<Tensor>& params);
  void step(std::vector<Tensor>& params, double lr);
};

/// Decay policy for named model parameters: dense weight matrices decay,
/// biases, norms, embeddings and the router gate do not.
bool decays(const std::string& name);

struct TrainState {
  AttentionSpec spec;
  ModelParams params;
  AdamW opt;
  uint64_t seed = 0;
  uint64_t batch_counter = 0;  // resume point for the batch/HCS stream
  size_t step = 0;
  std::vector<TrainMetrics> history;
};

TrainState make_train_state(const AttentionSpec& spec, const TrainOptions& opt);

/// Runs steps [state.step, until); throws train_error on NaN loss.
void train_steps(TrainState& state, const std::vector<LabeledImage>& train_set,
                 const std::vector<LabeledImage>& eval_set,
                 const TrainOptions& opt, size_t until);

/// End-to-end: generate data, train, return final state.
TrainState train(const AttentionSpec& spec, const SyntheticTask& task,
                 const TrainOptions& opt);

/// Top-1 accuracy; logit ties resolve toward the lower class index.
double evaluate(const AttentionSpec& spec, const ModelParams& params,
                const std::vector<LabeledImage>& data);

/// Mean pre-Top-K gate mass on the given channels, over all tokens,
/// layers, and images.
double mean_router_mass(const AttentionSpec& spec, const ModelParams& params,
                        const std::vector<MultiChannelImage>& images,
                        const std::vector<int>& channels_of_interest);

/// Per-layer, per-channel routing statistics over a batch.
struct RouteStats {
  // [layer][channel]
  std::vector<std::vector<double>> importance;
  std::vector<std::vector<size_t>> load;
};
RouteStats route_stats(const AttentionSpec& spec, const ModelParams& params,
                       const std::vector<MultiChannelImage>& images);

// ---------------------------------------------------------------------------
// Checkpointing
// ---------------------------------------------------------------------------

void save_checkpoint(const std::string& dir, const TrainState& state);
TrainState load_checkpoint(const std::string& dir, const AttentionSpec& spec);

}  // namespace moevit
