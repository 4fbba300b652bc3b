#include <gtest/gtest.h>

#include <map>
#include <numeric>

#include "support.hpp"

using namespace egmae;
using namespace egmae::testing;

namespace {

Image random_image(std::size_t h, std::size_t w, std::size_t c, std::mt19937_64& rng) {
  Image img(h, w, c);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (auto& v : img.pixels) v = u(rng);
  return img;
}

double counting_oracle(const std::vector<float>& vals, std::size_t bins) {
  std::map<std::size_t, double> counts;
  for (float v : vals) counts[std::min<std::size_t>(static_cast<std::size_t>(static_cast<double>(v) * bins), bins - 1)] += 1;
  double h = 0;
  for (auto& [_, c] : counts) h -= c / vals.size() * std::log(c / vals.size());
  return h;
}

}  // namespace

TEST(Patchify, GridArithmetic) {
  Image img(32, 32, 1);
  const auto g = patchify(img, {8, 8});
  EXPECT_EQ(g.count(), 16u);
  EXPECT_EQ(g.rows, 4u);
  EXPECT_EQ(g.cols, 4u);
}

TEST(Patchify, WholeImagePatchIsIdentity) {
  std::mt19937_64 rng(1);
  const Image img = random_image(8, 8, 3, rng);
  const auto g = patchify(img, {8, 8});
  ASSERT_EQ(g.count(), 1u);
  auto p = g.patch_at(0);
  EXPECT_TRUE(std::equal(p.begin(), p.end(), img.pixels.begin()));
}

TEST(Patchify, RoundTripIsBitExact) {
  std::mt19937_64 rng(2);
  const Image img = random_image(24, 24, 3, rng);
  EXPECT_EQ(unpatchify(patchify(img, {8, 8})), img);
}

TEST(Patchify, NonDivisibleIsTilingError) {
  Image img(30, 32, 1);
  try {
    patchify(img, {8, 8});
    FAIL();
  } catch (const TilingError& e) {
    EXPECT_NE(std::string(e.what()).find("must divide"), std::string::npos) << e.what();
  }
}

TEST(PatchEntropy, ConstantIsZero) {
  std::vector<float> p(64, 0.3f);
  EXPECT_EQ(patch_entropy(p, 256), 0.0);
}

TEST(PatchEntropy, TwoLevelIsLn2) {
  std::vector<float> p(64, 0.0f);
  std::fill(p.begin(), p.begin() + 32, 1.0f);
  EXPECT_NEAR(patch_entropy(p, 256), std::log(2.0), 1e-9);
}

TEST(PatchEntropy, Uniform256IsLn256) {
  std::vector<float> p(256);
  for (std::size_t i = 0; i < 256; ++i) p[i] = static_cast<float>(i) / 255.0f;
  EXPECT_NEAR(patch_entropy(p, 256), std::log(256.0), 1e-9);
}

TEST(PatchEntropy, OutOfRangeIsRangeError) {
  std::vector<float> p{0.5f, 1.5f};
  EXPECT_THROW(patch_entropy(p, 256), RangeError);
  std::vector<float> q{-0.01f};
  EXPECT_THROW(patch_entropy(q, 256), RangeError);
}

TEST(PatchEntropy, MatchesCountingOracleAndBounds) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 500; ++t) {
    const std::size_t bins = 1 + rng() % 300;
    std::vector<float> p(1 + rng() % 200);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    const std::size_t levels = 1 + rng() % 20;
    for (auto& v : p) v = (rng() % 2) ? u(rng) : static_cast<float>(rng() % levels) / levels;
    const double h = patch_entropy(p, bins);
    EXPECT_NEAR(h, counting_oracle(p, bins), 1e-9);
    EXPECT_GE(h, 0.0);
    EXPECT_LE(h, std::log(static_cast<double>(bins)) + 1e-12);
  }
}

TEST(PatchEntropy, PermutationInvariant) {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 1000; ++t) {
    std::vector<float> p(64);
    for (auto& v : p) v = static_cast<float>(rng() % 12) / 11.0f;
    const double h = patch_entropy(p, 256);
    std::shuffle(p.begin(), p.end(), rng);
    EXPECT_DOUBLE_EQ(patch_entropy(p, 256), h);
  }
}

TEST(EntropyMap, TwoRegionImage) {
  Image img(16, 16, 1, 0.5f);
  for (std::size_t y = 8; y < 16; ++y)
    for (std::size_t x = 0; x < 16; ++x) img.at(y, x, 0) = ((x + y) % 2) ? 1.0f : 0.0f;
  const auto m = entropy_map(img, {8, 8}, 256);
  ASSERT_EQ(m.values.size(), 4u);
  EXPECT_EQ(m.values[0], 0.0);
  EXPECT_EQ(m.values[1], 0.0);
  EXPECT_NEAR(m.values[2], std::log(2.0), 1e-12);
  EXPECT_NEAR(m.values[3], std::log(2.0), 1e-12);
  EXPECT_EQ(entropy_levels(m), (std::vector<int>{0, 0, 32, 32}));
}

TEST(EntropyMap, MatchesPerPatchOracle) {
  std::mt19937_64 rng(5);
  const Image img = random_image(16, 24, 3, rng);
  const auto m = entropy_map(img, {8, 8}, 64);
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t c = 0; c < 3; ++c) {
      std::vector<float> vals;
      for (std::size_t y = 0; y < 8; ++y)
        for (std::size_t x = 0; x < 8; ++x)
          for (std::size_t ch = 0; ch < 3; ++ch) vals.push_back(img.at(r * 8 + y, c * 8 + x, ch));
      EXPECT_NEAR(m.values[r * 3 + c], counting_oracle(vals, 64), 1e-9);
    }
}

TEST(EntropyMap, ConstantImageHeatmapIsBlack) {
  Image img(16, 16, 1, 0.7f);
  const auto pgm = entropy_heatmap_pgm(entropy_map(img, {8, 8}, 256));
  EXPECT_EQ(pgm.substr(0, 2), "P2");
  for (int v : entropy_levels(entropy_map(img, {8, 8}, 256))) EXPECT_EQ(v, 0);
}

TEST(Corrupt, ZeroEntropyPatchesUnchangedBitExactly) {
  std::mt19937_64 rng(6);
  Image img = random_image(16, 16, 1, rng);
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = 0; x < 8; ++x) img.at(y, x, 0) = 0.25f;
  const auto g = patchify(img, {8, 8});
  const auto m = entropy_map(g, 256);
  const auto out = corrupt(g, m, NoiseConfig{1.0, false, 256, 9, {8, 8}}, 3);
  auto a = g.patch_at(0), b = out.patch_at(0);
  EXPECT_TRUE(std::equal(a.begin(), a.end(), b.begin()));
  auto c = g.patch_at(1), d = out.patch_at(1);
  EXPECT_FALSE(std::equal(c.begin(), c.end(), d.begin()));
}

TEST(Corrupt, DeterministicAndInputUntouched) {
  std::mt19937_64 rng(7);
  const Image img = random_image(16, 16, 3, rng);
  const auto g = patchify(img, {8, 8});
  const auto copy = g;
  const auto m = entropy_map(g, 256);
  NoiseConfig cfg{0.5, true, 256, 42, {8, 8}};
  EXPECT_EQ(corrupt(g, m, cfg, 11), corrupt(g, m, cfg, 11));
  EXPECT_EQ(g, copy);
  EXPECT_FALSE(corrupt(g, m, cfg, 11) == corrupt(g, m, cfg, 12));
}

TEST(Corrupt, SigmaScaleZeroIsIdentity) {
  std::mt19937_64 rng(8);
  const auto g = patchify(random_image(16, 16, 1, rng), {8, 8});
  EXPECT_EQ(corrupt(g, entropy_map(g, 256), NoiseConfig{0.0, false, 256, 1, {8, 8}}), g);
}

TEST(Corrupt, EqualsPerPatchSubstreams) {
  std::mt19937_64 rng(9);
  const auto g = patchify(random_image(24, 16, 1, rng), {8, 8});
  const auto m = entropy_map(g, 256);
  const NoiseConfig cfg{1.0, true, 256, 77, {8, 8}};
  const auto whole = corrupt(g, m, cfg, 5);
  // process patches in reverse order independently
  for (std::size_t k = g.count(); k-- > 0;) {
    std::vector<float> p(g.patch_at(k).begin(), g.patch_at(k).end());
    corrupt_patch(p, cfg.variance(m.values[k], 256), 77, 5, k);
    auto w = whole.patch_at(k);
    EXPECT_TRUE(std::equal(p.begin(), p.end(), w.begin())) << "patch " << k;
  }
}

TEST(Corrupt, GridMismatchAndNegativeScale) {
  const auto g = patchify(Image(16, 16, 1), {8, 8});
  EntropyMap bad{{0.0}, 256, 1, 1};
  EXPECT_THROW(corrupt(g, bad, NoiseConfig{}), GridError);
  EXPECT_THROW(corrupt(g, entropy_map(g, 256), NoiseConfig{-1.0, false, 256, 0, {8, 8}}), ParameterError);
}

TEST(Corrupt, NoiseIsNotClamped) {
  Image img(8, 8, 1, 0.0f);
  img.at(0, 0, 0) = 1.0f;
  const auto g = patchify(img, {8, 8});
  const auto out = corrupt(g, entropy_map(g, 256), NoiseConfig{50.0, false, 256, 3, {8, 8}});
  auto p = out.patch_at(0);
  EXPECT_TRUE(std::any_of(p.begin(), p.end(), [](float v) { return v < 0.0f || v > 1.0f; }));
}

TEST(NoiseConfig, VarianceFormula) {
  NoiseConfig raw{2.0, false, 256, 0, {8, 8}};
  EXPECT_DOUBLE_EQ(raw.variance(1.5, 256), 3.0);
  NoiseConfig norm{1.0, true, 256, 0, {8, 8}};
  EXPECT_DOUBLE_EQ(norm.variance(std::log(256.0), 256), 1.0);
}
