#include "moevit/cost_model.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

namespace moevit {

namespace {

// ViT-S geometry used whenever a sweep needs parameter counts.
constexpr size_t kVitSLayers = 12;
constexpr size_t kVitSHeads = 6;

uint64_t mlp_and_norm_params(size_t d) {
  // MLP at expansion 4 plus the two pre-norm affine pairs.
  return (uint64_t)d * 4 * d + 4 * d + (uint64_t)4 * d * d + d + 4 * d;
}

uint64_t head_params(size_t d, size_t num_classes) {
  return num_classes == 0 ? 0 : (uint64_t)d * num_classes + num_classes + 2 * d;
}

uint64_t embed_params(size_t n, size_t c, size_t d, size_t patch_dim) {
  // shared patch projection, pos/chan tables, token FFN, CLS seed
  return (uint64_t)patch_dim * d + (uint64_t)n * d + (uint64_t)c * d +
         2 * ((uint64_t)d * d + d) + d;
}

uint64_t act_params_dense(size_t n, size_t c, size_t d, size_t patch_dim,
                          size_t layers, size_t num_classes) {
  const uint64_t per_layer = (uint64_t)4 * d * d + mlp_and_norm_params(d);
  return embed_params(n, c, d, patch_dim) + layers * per_layer +
         head_params(d, num_classes);
}

uint64_t act_params_vanilla(size_t n, size_t c, size_t d, size_t patch_dim,
                            size_t layers, size_t num_classes) {
  // concatenated-channel patch projection; no channel table
  const uint64_t embed = (uint64_t)(patch_dim * c) * d + (uint64_t)n * d +
                         2 * ((uint64_t)d * d + d) + d;
  const uint64_t per_layer = (uint64_t)4 * d * d + mlp_and_norm_params(d);
  return embed + layers * per_layer + head_params(d, num_classes);
}

}  // namespace

CostReport moe_cost(size_t n, size_t c, size_t d, size_t k) {
  if (k < 1 || k > c)
    throw config_error("moe_cost: k=" + std::to_string(k) +
                       " out of range [1, " + std::to_string(c) + "]");
  CostReport r;
  r.attention_score_flops = 2.0 * n * n * c * k * d;
  r.attention_value_flops = 2.0 * n * n * c * k * d;
  r.q_proj_flops = 2.0 * n * c * d * d;
  r.kv_proj_flops = 4.0 * n * c * d * d;
  r.o_proj_flops = 2.0 * n * c * d * d;
  return r;
}

CostReport dense_cost(size_t n, size_t c, size_t d) {
  const double t = (double)n * c;
  CostReport r;
  r.attention_score_flops = 2.0 * t * t * d;
  r.attention_value_flops = 2.0 * t * t * d;
  r.q_proj_flops = 2.0 * t * d * d;
  r.kv_proj_flops = 4.0 * t * d * d;
  r.o_proj_flops = 2.0 * t * d * d;
  return r;
}

CostReport vanilla_cost(size_t n, size_t d) { return dense_cost(n, 1, d); }

uint64_t activated_params(size_t n, size_t c, size_t d, size_t /*heads*/,
                          size_t layers, size_t patch_dim, size_t k,
                          size_t num_classes) {
  const uint64_t per_layer = (uint64_t)2 * d * d          // W_Q, W_O
                             + (uint64_t)d * c + c        // router
                             + (uint64_t)k * 2 * d * d    // selected experts
                             + mlp_and_norm_params(d);
  return embed_params(n, c, d, patch_dim) + layers * per_layer +
         head_params(d, num_classes);
}

std::vector<SweepRow> sweep(const std::string& dataset, size_t height,
                            size_t width, size_t channels, size_t d,
                            const std::vector<size_t>& patches,
                            const std::vector<size_t>& topks) {
  size_t num_classes = 0;
  if (dataset == "jumpcp") num_classes = 161;
  if (dataset == "so2sat") num_classes = 17;
  std::vector<SweepRow> rows;
  for (size_t p : patches) {
    if (p == 0 || height % p != 0 || width % p != 0)
      throw config_error("patch size " + std::to_string(p) +
                         " does not divide " + std::to_string(height) + "x" +
                         std::to_string(width));
    const size_t n = (height / p) * (width / p);
    rows.push_back({"vanilla", dataset, n, channels, d, p, 0,
                    vanilla_cost(n, d).gflops(),
                    act_params_vanilla(n, channels, d, p * p, kVitSLayers,
                                       num_classes)});
    rows.push_back({"dense", dataset, n, channels, d, p, 0,
                    dense_cost(n, channels, d).gflops(),
                    act_params_dense(n, channels, d, p * p, kVitSLayers,
                                     num_classes)});
    for (size_t k : topks) {
      rows.push_back({"moe", dataset, n, channels, d, p, k,
                      moe_cost(n, channels, d, k).gflops(),
                      activated_params(n, channels, d, kVitSHeads, kVitSLayers,
                                       p * p, k, num_classes)});
    }
  }
  return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream out;
  out << "model,dataset,N,C,D,P,k,attn_gflops,act_params\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%.6f", r.attn_gflops);
    out << r.model << "," << r.dataset << "," << r.n << "," << r.c << ","
        << r.d << "," << r.p << "," << r.k << "," << buf << ","
        << r.act_params << "\n";
  }
  return out.str();
}

std::string sweep_table(const std::vector<SweepRow>& rows) {
  std::ostringstream out;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%-8s %-8s %6s %4s %5s %4s %4s %12s %12s\n",
                "model", "dataset", "N", "C", "D", "P", "k", "attn_gflops",
                "act_params");
  out << buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf),
                  "%-8s %-8s %6zu %4zu %5zu %4zu %4zu %12.4f %12llu\n",
                  r.model.c_str(), r.dataset.c_str(), r.n, r.c, r.d, r.p, r.k,
                  r.attn_gflops, (unsigned long long)r.act_params);
    out << buf;
  }
  return out.str();
}

std::vector<PaperPoint> verify_paper_points() {
  std::vector<PaperPoint> pts;
  auto push = [&pts](const std::string& label, double expected, double tol,
                     double actual) {
    pts.push_back({label, expected, tol, actual});
  };
  // Published attention-GFLOPs table, 224x224 C=8 P=16 D=384 geometry.
  push("jumpcp/16 vanilla         0.29G", 0.29, 0.02, vanilla_cost(196, 384).gflops());
  push("jumpcp/16 dense           5.65G", 5.65, 0.02, dense_cost(196, 8, 384).gflops());
  push("jumpcp/16 moe k=1         2.33G", 2.33, 0.02, moe_cost(196, 8, 384, 1).gflops());
  push("jumpcp/16 moe k=2         2.81G", 2.81, 0.02, moe_cost(196, 8, 384, 2).gflops());
  push("jumpcp/16 moe k=C         5.65G", 5.65, 0.02, moe_cost(196, 8, 384, 8).gflops());
  // 32x32 C=18 P=8 geometry.
  push("so2sat/8  vanilla         0.02G", 0.02, 0.10, vanilla_cost(16, 384).gflops());
  push("so2sat/8  dense           0.47G", 0.47, 0.02, dense_cost(16, 18, 384).gflops());
  push("so2sat/8  moe k=1         0.35G", 0.35, 0.02, moe_cost(16, 18, 384, 1).gflops());
  push("so2sat/8  moe k=2         0.36G", 0.36, 0.02, moe_cost(16, 18, 384, 2).gflops());
  // Patch-size/top-k ablation, 224x224 C=8 P=8.
  push("jumpcp/8  moe k=1        15.02G", 15.02, 0.015, moe_cost(784, 8, 384, 1).gflops());
  push("jumpcp/8  moe k=2        22.61G", 22.61, 0.015, moe_cost(784, 8, 384, 2).gflops());
  push("jumpcp/8  moe k=3        30.19G", 30.19, 0.015, moe_cost(784, 8, 384, 3).gflops());
  push("jumpcp/8  moe k=4        37.77G", 37.77, 0.015, moe_cost(784, 8, 384, 4).gflops());
  // 32x32 C=18 P=16 ablation point.
  push("so2sat/16 moe k=2        0.085G", 0.085, 0.02, moe_cost(4, 18, 384, 2).gflops());
  // Dense baseline bound at small patches: must exceed 65G.
  const double dense_small = dense_cost(784, 8, 384).gflops();
  pts.push_back({"jumpcp/8  dense          >65G ", 65.0,
                 /*rel_tol=*/-1.0, dense_small});
  return pts;
}

}  // namespace moevit
