#include "moevit/tokenizer.hpp"

#include <algorithm>
#include <cmath>

namespace moevit {

EmbeddingParams EmbeddingParams::init(size_t patch, size_t n_patches,
                                      size_t c_max, size_t dim, Prng& rng) {
  const size_t p2 = patch * patch;
  EmbeddingParams e;
  const double s_in = 1.0 / std::sqrt((double)p2);
  const double s_d = 1.0 / std::sqrt((double)dim);
  e.patch_proj = Tensor::from({p2, dim}, rng.normal_vec(p2 * dim, s_in), true);
  e.pos_table = Tensor::from({n_patches, dim}, rng.normal_vec(n_patches * dim, 0.02), true);
  e.chan_table = Tensor::from({c_max, dim}, rng.normal_vec(c_max * dim, 0.02), true);
  e.ffn_w1 = Tensor::from({dim, dim}, rng.normal_vec(dim * dim, s_d), true);
  e.ffn_b1 = Tensor::zeros({1, dim}, true);
  e.ffn_w2 = Tensor::from({dim, dim}, rng.normal_vec(dim * dim, s_d), true);
  e.ffn_b2 = Tensor::zeros({1, dim}, true);
  e.cls_seed = Tensor::from({1, dim}, rng.normal_vec(dim, 0.02), true);
  return e;
}

std::vector<std::pair<std::string, Tensor>> EmbeddingParams::named(
    const std::string& prefix) const {
  return {{prefix + "patch_proj", patch_proj}, {prefix + "pos_table", pos_table},
          {prefix + "chan_table", chan_table}, {prefix + "ffn_w1", ffn_w1},
          {prefix + "ffn_b1", ffn_b1},         {prefix + "ffn_w2", ffn_w2},
          {prefix + "ffn_b2", ffn_b2},         {prefix + "cls_seed", cls_seed}};
}

Tensor patchify(const MultiChannelImage& img, size_t patch) {
  std::vector<int> all(img.channels);
  for (size_t c = 0; c < img.channels; ++c) all[c] = (int)c;
  return patchify_subset(img, patch, all);
}

Tensor patchify_subset(const MultiChannelImage& img, size_t patch,
                       const std::vector<int>& active_channels) {
  if (patch == 0 || img.height % patch != 0 || img.width % patch != 0)
    throw config_error("patch size " + std::to_string(patch) +
                       " does not divide image " + std::to_string(img.height) +
                       "x" + std::to_string(img.width));
  const size_t gy = img.height / patch, gx = img.width / patch;
  const size_t n = gy * gx, nc = active_channels.size(), p2 = patch * patch;
  std::vector<double> out(n * nc * p2);
  for (size_t i = 0; i < n; ++i) {
    const size_t py = (i / gx) * patch, px = (i % gx) * patch;
    for (size_t j = 0; j < nc; ++j) {
      const size_t c = (size_t)active_channels[j];
      if (c >= img.channels)
        throw config_error("channel id " + std::to_string(c) +
                           " out of range for C=" + std::to_string(img.channels));
      double* row = out.data() + (i * nc + j) * p2;
      for (size_t dy = 0; dy < patch; ++dy)
        for (size_t dx = 0; dx < patch; ++dx)
          row[dy * patch + dx] = img.at(c, py + dy, px + dx);
    }
  }
  return Tensor::from({n * nc, p2}, std::move(out));
}

MultiChannelImage unpatchify(const Tensor& patches, size_t height, size_t width,
                             size_t channels, size_t patch) {
  const size_t gy = height / patch, gx = width / patch, n = gy * gx;
  MultiChannelImage img{height, width, channels,
                        std::vector<double>(channels * height * width)};
  for (size_t i = 0; i < n; ++i) {
    const size_t py = (i / gx) * patch, px = (i % gx) * patch;
    for (size_t c = 0; c < channels; ++c) {
      const double* row = patches.data().data() + (i * channels + c) * patch * patch;
      for (size_t dy = 0; dy < patch; ++dy)
        for (size_t dx = 0; dx < patch; ++dx)
          img.at(c, py + dy, px + dx) = row[dy * patch + dx];
    }
  }
  return img;
}

Tensor embed_pre_ffn(const Tensor& patches, const EmbeddingParams& params,
                     const std::vector<int>& active_channels, size_t n_patches) {
  const size_t nc = active_channels.size();
  if (patches.rows() != n_patches * nc)
    throw contract_error("embed: patch rows " + std::to_string(patches.rows()) +
                         " != N * |active| = " +
                         std::to_string(n_patches * nc));
  const size_t c_max = params.chan_table.rows();
  std::vector<size_t> pos_idx(n_patches * nc), chan_idx(n_patches * nc);
  for (size_t i = 0; i < n_patches; ++i)
    for (size_t j = 0; j < nc; ++j) {
      if ((size_t)active_channels[j] >= c_max)
        throw config_error("channel id " + std::to_string(active_channels[j]) +
                           " exceeds channel table size " + std::to_string(c_max));
      pos_idx[i * nc + j] = i;
      chan_idx[i * nc + j] = (size_t)active_channels[j];
    }
  Tensor proj = matmul(patches, params.patch_proj);
  proj = add(proj, index_select(params.pos_table, pos_idx));
  return add(proj, index_select(params.chan_table, chan_idx));
}

TokenGrid embed(const Tensor& patches, const EmbeddingParams& params,
                const std::vector<int>& active_channels, size_t n_patches,
                bool with_cls) {
  Tensor pre = embed_pre_ffn(patches, params, active_channels, n_patches);
  Tensor h = add(matmul(pre, params.ffn_w1), params.ffn_b1);
  h = gelu(h);
  h = add(matmul(h, params.ffn_w2), params.ffn_b2);
  TokenGrid grid;
  grid.n_patches = n_patches;
  grid.dim = params.patch_proj.cols();
  grid.active_channels = active_channels;
  grid.tokens = h;
  if (with_cls) grid.cls = params.cls_seed;
  return grid;
}

std::vector<int> hcs_sample(size_t channels, Prng& rng) {
  if (channels == 0) throw config_error("hcs_sample: C must be >= 1");
  const size_t m = 1 + (size_t)rng.uniform_int(channels);
  // Partial Fisher-Yates over channel ids, then sort for stable order.
  std::vector<int> ids(channels);
  for (size_t c = 0; c < channels; ++c) ids[c] = (int)c;
  for (size_t t = 0; t < m; ++t) {
    const size_t r = t + (size_t)rng.uniform_int(channels - t);
    std::swap(ids[t], ids[r]);
  }
  ids.resize(m);
  std::sort(ids.begin(), ids.end());
  return ids;
}

}  // namespace moevit
