#pragma once

#include <vector>

#include "moevit/random.hpp"
#include "moevit/tensor.hpp"

namespace moevit {

/// Channel-major (C x H x W) pixel buffer.
struct MultiChannelImage {
  size_t height = 0;
  size_t width = 0;
  size_t channels = 0;
  std::vector<double> pixels;

  double at(size_t c, size_t y, size_t x) const {
    return pixels[(c * height + y) * width + x];
  }
  double& at(size_t c, size_t y, size_t x) {
    return pixels[(c * height + y) * width + x];
  }
};

/// N x C grid of D-wide patch embeddings. Row layout of `tokens` is
/// flat id = i * C + j where i is the spatial patch and j indexes
/// active_channels; active_channels[j] is the original channel id.
struct TokenGrid {
  size_t n_patches = 0;           // N = HW / P^2
  size_t dim = 0;                 // D
  std::vector<int> active_channels;
  Tensor tokens;                  // [(N * |active|) x D]
  Tensor cls;                     // optional [1 x D]

  size_t channels() const { return active_channels.size(); }
  size_t flat_id(size_t i, size_t j) const { return i * channels() + j; }
};

struct EmbeddingParams {
  Tensor patch_proj;   // [P^2 x D], shared across channels
  Tensor pos_table;    // [N x D]
  Tensor chan_table;   // [C_max x D], indexed by original channel id
  Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;  // D -> D -> D
  Tensor cls_seed;     // [1 x D]

  static EmbeddingParams init(size_t patch, size_t n_patches, size_t c_max,
                              size_t dim, Prng& rng);
  std::vector<std::pair<std::string, Tensor>> named(const std::string& prefix) const;
};

/// Cuts the image into non-overlapping P x P blocks per channel and
/// flattens each in raster order. Row (i, j) of the result is spatial
/// patch i of channel j (flat id layout of TokenGrid).
Tensor patchify(const MultiChannelImage& img, size_t patch);

/// Lossless inverse of patchify, for the round-trip property.
MultiChannelImage unpatchify(const Tensor& patches, size_t height, size_t width,
                             size_t channels, size_t patch);

/// Patchify restricted to a channel subset (HCS); rows follow the
/// subset order, flat id = i * |subset| + j.
Tensor patchify_subset(const MultiChannelImage& img, size_t patch,
                       const std::vector<int>& active_channels);

/// h_{i,j} = FFN(patch * W_e + pos_i + chan_j); the pre-FFN sum is also
/// exposed for the linearity tests.
TokenGrid embed(const Tensor& patches, const EmbeddingParams& params,
                const std::vector<int>& active_channels, size_t n_patches,
                bool with_cls = true);

Tensor embed_pre_ffn(const Tensor& patches, const EmbeddingParams& params,
                     const std::vector<int>& active_channels, size_t n_patches);

/// Two-stage uniform channel subset: draw m ~ U{1..C}, then a uniform
/// m-subset without replacement. Returns ascending original channel ids.
std::vector<int> hcs_sample(size_t channels, Prng& rng);

}  // namespace moevit
