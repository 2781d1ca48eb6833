#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "moevit/tokenizer.hpp"

using namespace moevit;

namespace {

MultiChannelImage random_image(Prng& rng, size_t c, size_t h, size_t w) {
  return MultiChannelImage{h, w, c, rng.normal_vec(c * h * w)};
}

}  // namespace

TEST_CASE("patchify single 4x4 patch is raster order") {
  MultiChannelImage img{4, 4, 1, {}};
  img.pixels.resize(16);
  for (size_t i = 0; i < 16; ++i) img.pixels[i] = (double)i;
  Tensor p = patchify(img, 4);
  CHECK(p.rows() == 1);
  CHECK(p.cols() == 16);
  for (size_t i = 0; i < 16; ++i) CHECK(p.at(0, i) == (double)i);
}

TEST_CASE("patchify row counts at the published geometries") {
  Prng rng(1);
  MultiChannelImage jump = random_image(rng, 8, 224, 224);
  Tensor p1 = patchify(jump, 16);
  CHECK(p1.rows() == 1568);  // N=196, C=8
  CHECK(p1.cols() == 256);

  MultiChannelImage so2 = random_image(rng, 18, 32, 32);
  Tensor p2 = patchify(so2, 8);
  CHECK(p2.rows() == 288);  // N=16, C=18
  CHECK(p2.cols() == 64);
}

TEST_CASE("patchify rejects indivisible dimensions") {
  Prng rng(2);
  MultiChannelImage img = random_image(rng, 2, 6, 6);
  CHECK_THROWS_AS(patchify(img, 4), config_error);
}

TEST_CASE("patchify then unpatchify is the identity") {
  Prng rng(3);
  MultiChannelImage img = random_image(rng, 3, 8, 12);
  Tensor p = patchify(img, 4);
  MultiChannelImage back = unpatchify(p, 8, 12, 3, 4);
  CHECK(back.pixels == img.pixels);
}

TEST_CASE("flat id layout: row (i,j) is patch i of channel j") {
  // channel-constant image makes rows identifiable
  MultiChannelImage img{4, 4, 3, std::vector<double>(48)};
  for (size_t c = 0; c < 3; ++c)
    for (size_t i = 0; i < 16; ++i) img.pixels[c * 16 + i] = (double)c;
  Tensor p = patchify(img, 2);  // N=4
  for (size_t i = 0; i < 4; ++i)
    for (size_t j = 0; j < 3; ++j)
      CHECK(p.at(i * 3 + j, 0) == (double)j);
}

TEST_CASE("token count follows the channel subset") {
  Prng rng(4);
  MultiChannelImage img = random_image(rng, 5, 8, 8);
  for (const std::vector<int>& sub :
       {std::vector<int>{0}, std::vector<int>{1, 3}, std::vector<int>{0, 2, 4}}) {
    Tensor p = patchify_subset(img, 4, sub);
    CHECK(p.rows() == 4 * sub.size());
    EmbeddingParams emb = EmbeddingParams::init(4, 4, 5, 8, rng);
    TokenGrid grid = embed(p, emb, sub, 4);
    CHECK(grid.tokens.rows() == 4 * sub.size());
    CHECK(grid.cls.defined());
  }
}

TEST_CASE("pre-FFN embedding is linear in pos and chan tables") {
  Prng rng(5);
  const size_t c = 3, hw = 8, patch = 4, n = 4, d = 8;
  // identical pixels at every spatial position of one channel
  MultiChannelImage img{hw, hw, c, std::vector<double>(c * hw * hw)};
  Prng pix(6);
  std::vector<double> block(patch * patch);
  for (auto& v : block) v = pix.normal();
  for (size_t ch = 0; ch < c; ++ch)
    for (size_t y = 0; y < hw; ++y)
      for (size_t x = 0; x < hw; ++x)
        img.at(ch, y, x) = block[(y % patch) * patch + (x % patch)];

  EmbeddingParams emb = EmbeddingParams::init(patch, n, c, d, rng);
  std::vector<int> active{0, 1, 2};
  Tensor pre = embed_pre_ffn(patchify(img, patch), emb, active, n);
  // same pixels, different i: rows differ exactly by pos_i1 - pos_i2
  for (size_t j = 0; j < c; ++j)
    for (size_t x = 0; x < d; ++x) {
      const double lhs = pre.at(0 * c + j, x) - pre.at(3 * c + j, x);
      const double rhs = emb.pos_table.at(0, x) - emb.pos_table.at(3, x);
      CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
    }
  // same pixels, different j: rows differ exactly by chan_j1 - chan_j2
  for (size_t i = 0; i < n; ++i)
    for (size_t x = 0; x < d; ++x) {
      const double lhs = pre.at(i * c + 0, x) - pre.at(i * c + 2, x);
      const double rhs = emb.chan_table.at(0, x) - emb.chan_table.at(2, x);
      CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
    }
}

TEST_CASE("channel embedding keyed by original id survives subsetting") {
  Prng rng(7);
  const size_t c = 6, hw = 8, patch = 4, n = 4, d = 8;
  MultiChannelImage img = random_image(rng, c, hw, hw);
  EmbeddingParams emb = EmbeddingParams::init(patch, n, c, d, rng);

  std::vector<int> full{0, 1, 2, 3, 4, 5};
  std::vector<int> sub{2, 5};
  Tensor pre_full = embed_pre_ffn(patchify(img, patch), emb, full, n);
  Tensor pre_sub = embed_pre_ffn(patchify_subset(img, patch, sub), emb, sub, n);
  for (size_t i = 0; i < n; ++i)
    for (size_t x = 0; x < d; ++x) {
      CHECK(pre_sub.at(i * 2 + 0, x) ==
            doctest::Approx(pre_full.at(i * 6 + 2, x)).epsilon(1e-12));
      CHECK(pre_sub.at(i * 2 + 1, x) ==
            doctest::Approx(pre_full.at(i * 6 + 5, x)).epsilon(1e-12));
    }
}

TEST_CASE("embed rejects channel ids beyond the table") {
  Prng rng(8);
  MultiChannelImage img = random_image(rng, 2, 8, 8);
  EmbeddingParams emb = EmbeddingParams::init(4, 4, 2, 8, rng);
  Tensor p = patchify(img, 4);
  CHECK_THROWS_AS(embed(p, emb, {0, 2}, 4), config_error);
}

TEST_CASE("hcs_sample: C=1 always yields {0}, fixed seed reproduces") {
  for (uint64_t s = 0; s < 20; ++s) {
    Prng rng(s);
    CHECK(hcs_sample(1, rng) == std::vector<int>{0});
  }
  Prng a(31), b(31);
  for (int i = 0; i < 50; ++i) CHECK(hcs_sample(8, a) == hcs_sample(8, b));
}

TEST_CASE("hcs_sample subsets are sorted, unique, in range") {
  Prng rng(12);
  for (int i = 0; i < 500; ++i) {
    auto sub = hcs_sample(8, rng);
    CHECK(sub.size() >= 1);
    CHECK(sub.size() <= 8);
    for (size_t j = 0; j < sub.size(); ++j) {
      CHECK(sub[j] >= 0);
      CHECK(sub[j] < 8);
      if (j) CHECK(sub[j] > sub[j - 1]);
    }
  }
}

TEST_CASE("hcs_sample inclusion probability is (C+1)/(2C)") {
  const size_t c = 8, draws = 10000;
  Prng rng(13);
  std::vector<size_t> hits(c, 0);
  for (size_t i = 0; i < draws; ++i)
    for (int ch : hcs_sample(c, rng)) ++hits[(size_t)ch];
  const double expected = (double)(c + 1) / (2.0 * c);  // E[m]/C
  for (size_t ch = 0; ch < c; ++ch) {
    const double freq = (double)hits[ch] / (double)draws;
    CHECK(std::abs(freq - expected) < 0.02 * expected + 0.01);
  }
}
