#include <gtest/gtest.h>

#include <cmath>
#include <cstring>

#include "vfn/features.hpp"
#include "vfn/ranker.hpp"

using namespace vfn;

namespace {

FeatureMap<double> random_map(int c, int h, int w, Rng& rng) {
  FeatureMap<double> m(c, h, w);
  for (double& v : m.data) v = rng.normal();
  return m;
}

// Number of k-wide windows with stride k-1 that fit in `side`, by placing
// them one after another.
int count_windows(int side, int k) {
  const int stride = std::max(1, k - 1);
  int n = 0;
  for (int start = 0; start + k <= side; start += stride) ++n;
  return n;
}

}  // namespace

TEST(Spp, BinCountsMatchEnumeration) {
  const SppConfig cfg;
  EXPECT_EQ(count_windows(13, 3) * count_windows(13, 3), 36);
  EXPECT_EQ(count_windows(13, 5) * count_windows(13, 5), 9);
  EXPECT_EQ(count_windows(13, 7) * count_windows(13, 7), 4);
  EXPECT_EQ(cfg.bins_per_channel(13, 13), 49u);
  for (int side = 7; side <= 40; ++side)
    for (int k = 1; k <= 7; ++k) EXPECT_EQ(SppConfig::bins_per_axis(side, k), count_windows(side, k));
}

TEST(Spp, DefaultFeatureLength) {
  FeatureMap<float> map(256, 13, 13, 0.5f);
  EXPECT_EQ(spp_pool(map, SppConfig{}).size(), 12544u);
  NetworkSpec spec;
  spec.backbone = BackboneSpec::toy(16, 32, 256);
  EXPECT_EQ(spec.feature_dim(), 12544u);
  spec.pooling = Pooling::Flatten;
  EXPECT_EQ(spec.feature_dim(), 169u * 256u);
}

TEST(Spp, ConstantMapGivesConstantBins) {
  FeatureMap<double> map(4, 13, 13, 2.5);
  for (PoolMode mode : {PoolMode::Max, PoolMode::Avg})
    for (double v : spp_pool(map, SppConfig{{3, 5, 7}, mode})) EXPECT_DOUBLE_EQ(v, 2.5);
}

TEST(Spp, BinLayoutAndValues) {
  FeatureMap<double> map(2, 13, 13);
  for (int c = 0; c < 2; ++c)
    for (int y = 0; y < 13; ++y)
      for (int x = 0; x < 13; ++x) map.at(c, y, x) = 1000.0 * c + 13 * y + x;
  const auto v = spp_pool(map, SppConfig{{3, 5, 7}, PoolMode::Max});
  // Size 3, channel 0, first bin: max at (2,2).
  EXPECT_EQ(v[0], 13 * 2 + 2);
  // Size 3, channel 0, bin (row 0, col 1) covers x in [2,4].
  EXPECT_EQ(v[1], 13 * 2 + 4);
  // Size 3, channel 1 starts after 36 bins.
  EXPECT_EQ(v[36], 1000 + 13 * 2 + 2);
  // Size 7, channel 1, last bin covers [6,12]^2.
  EXPECT_EQ(v.back(), 1000 + 13 * 12 + 12);
  const auto a = spp_pool(map, SppConfig{{13}, PoolMode::Avg});
  EXPECT_DOUBLE_EQ(a[0], 84.0);
}

TEST(Spp, AvgBackwardOfWholeMapWindowIsUniform) {
  FeatureMap<double> map(1, 13, 13, 0.0);
  const std::vector<double> up{1.0};
  const auto g = spp_backward<double>(map, SppConfig{{13}, PoolMode::Avg}, up);
  for (double v : g.data) EXPECT_DOUBLE_EQ(v, 1.0 / 169.0);
}

TEST(Spp, MaxBackwardTouchesOnlyMaxima) {
  Rng rng(1);
  const auto map = random_map(3, 13, 13, rng);
  const SppConfig cfg{{3, 5, 7}, PoolMode::Max};
  const std::vector<double> up(cfg.bins_per_channel(13, 13) * 3, 1.0);
  const auto g = spp_backward<double>(map, cfg, up);
  const auto pooled = spp_pool(map, cfg);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 13; ++y)
      for (int x = 0; x < 13; ++x) {
        if (g.at(c, y, x) != 0.0) {
          EXPECT_NE(std::find(pooled.begin(), pooled.end(), map.at(c, y, x)), pooled.end());
        }
      }
  double total = 0.0;
  for (double v : g.data) total += v;
  EXPECT_DOUBLE_EQ(total, static_cast<double>(up.size()));
}

TEST(Spp, BackwardMatchesFiniteDifferences) {
  for (PoolMode mode : {PoolMode::Max, PoolMode::Avg}) {
    Rng rng(mode == PoolMode::Max ? 2 : 3);
    const SppConfig cfg{{3, 5, 7}, mode};
    auto map = random_map(4, 13, 13, rng);
    std::vector<double> w(cfg.bins_per_channel(13, 13) * 4);
    for (double& x : w) x = rng.normal();
    auto objective = [&](const FeatureMap<double>& m) {
      const auto v = spp_pool(m, cfg);
      double s = 0.0;
      for (std::size_t i = 0; i < v.size(); ++i) s += w[i] * v[i];
      return s;
    };
    const auto g = spp_backward<double>(map, cfg, w);
    const double h = 1e-3;
    for (std::size_t i = 0; i < map.data.size(); ++i) {
      const double saved = map.data[i];
      map.data[i] = saved + h;
      const double up = objective(map);
      map.data[i] = saved - h;
      const double down = objective(map);
      map.data[i] = saved;
      const double fd = (up - down) / (2 * h);
      ASSERT_LE(std::abs(fd - g.data[i]), 1e-4 * std::max({1.0, std::abs(fd), std::abs(g.data[i])})) << i;
    }
  }
}

TEST(Spp, MaxIsMonotoneAndAvgIsLinear) {
  Rng rng(4);
  const SppConfig max_cfg{{3, 5, 7}, PoolMode::Max}, avg_cfg{{3, 5, 7}, PoolMode::Avg};
  for (int trial = 0; trial < 50; ++trial) {
    auto map = random_map(2, 13, 13, rng);
    const auto before = spp_pool(map, max_cfg);
    map.data[rng.below(map.data.size())] += rng.uniform(0.0, 3.0);
    const auto after = spp_pool(map, max_cfg);
    for (std::size_t i = 0; i < before.size(); ++i) ASSERT_GE(after[i], before[i]);
  }
  const auto a = random_map(2, 13, 13, rng), b = random_map(2, 13, 13, rng);
  FeatureMap<double> sum(2, 13, 13);
  for (std::size_t i = 0; i < sum.data.size(); ++i) sum.data[i] = a.data[i] + 2.0 * b.data[i];
  const auto pa = spp_pool(a, avg_cfg), pb = spp_pool(b, avg_cfg), ps = spp_pool(sum, avg_cfg);
  for (std::size_t i = 0; i < ps.size(); ++i) EXPECT_NEAR(ps[i], pa[i] + 2.0 * pb[i], 1e-12);
}

TEST(Spp, RejectsOversizedWindow) {
  FeatureMap<double> map(1, 5, 5);
  EXPECT_THROW(spp_pool(map, SppConfig{{7}, PoolMode::Max}), ConfigError);
  EXPECT_THROW(spp_backward<double>(map, SppConfig{{3}, PoolMode::Max}, std::vector<double>(3)), ContractError);
}

TEST(Backbone, ToyGeometryEndsAt13) {
  const auto shapes = BackboneSpec::toy(8, 12, 20).shapes();
  const std::vector<int> sides{227, 55, 55, 27, 27, 27, 13, 13, 13};
  ASSERT_EQ(shapes.size(), sides.size());
  for (std::size_t i = 0; i < sides.size(); ++i) EXPECT_EQ(shapes[i].height, sides[i]) << i;
  EXPECT_EQ(shapes.back().channels, 20);
  BackboneSpec bad = BackboneSpec::toy();
  bad.layers[0].stride = 3;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Backbone, ZeroParamsGiveZeroMap) {
  NetworkSpec spec;
  spec.backbone = BackboneSpec::toy(4, 4, 4);
  const auto p = shaped_params<float>(spec);
  const ImageBuffer img(227, 227, 0.5f);
  const auto map = backbone_forward<float>(img, spec.backbone, std::span<const Tensor<float>>(p.backbone));
  EXPECT_EQ(map.channels, 4);
  EXPECT_EQ(map.height, 13);
  EXPECT_EQ(map.width, 13);
  for (float v : map.data) EXPECT_EQ(v, 0.0f);
}

TEST(Backbone, RejectsWrongInputSize) {
  NetworkSpec spec;
  const auto p = init_params<float>(spec, 1);
  EXPECT_THROW(backbone_forward<float>(ImageBuffer(100, 100), spec.backbone,
                                       std::span<const Tensor<float>>(p.weights.backbone)),
               ContractError);
}

TEST(Backbone, ConvolutionMatchesDirectSum) {
  // One conv layer checked against a naive triple loop.
  BackboneSpec spec;
  spec.layers = {{LayerType::Conv, 3, 11, 4, 0}};
  Rng rng(5);
  ImageBuffer img(227, 227);
  for (float& v : img.data()) v = static_cast<float>(rng.uniform());
  Tensor<double> w("conv0.weight", {3, 3 * 121}), b("conv0.bias", {3});
  for (double& v : w.values) v = rng.normal();
  for (double& v : b.values) v = rng.normal();
  const std::vector<Tensor<double>> params{w, b};
  const auto out = backbone_forward<double>(img, spec, std::span<const Tensor<double>>(params));
  ASSERT_EQ(out.height, 55);
  for (int trial = 0; trial < 30; ++trial) {
    const int o = static_cast<int>(rng.below(3)), oy = static_cast<int>(rng.below(55)),
              ox = static_cast<int>(rng.below(55));
    double acc = b.values[o];
    for (int c = 0; c < 3; ++c)
      for (int ky = 0; ky < 11; ++ky)
        for (int kx = 0; kx < 11; ++kx)
          acc += w.values[o * 363 + c * 121 + ky * 11 + kx] * (img.at(ox * 4 + kx, oy * 4 + ky, c) - 0.5);
    EXPECT_NEAR(out.at(o, oy, ox), acc, 1e-9);
  }
}

TEST(Backbone, GoldenFeatureIsStable) {
  NetworkSpec spec;
  spec.backbone = BackboneSpec::toy(4, 6, 4);
  const auto rp = init_params<float>(spec, 2024);
  ImageBuffer img(227, 227);
  for (int y = 0; y < 227; ++y)
    for (int x = 0; x < 227; ++x)
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = static_cast<float>(((x * 7 + y * 13 + c * 29) % 256) / 255.0);
  const auto f = extract_features<float>(img, spec, rp.weights);
  ASSERT_EQ(f.size(), 196u);
  double sum = 0.0, sq = 0.0;
  for (float v : f) {
    sum += v;
    sq += static_cast<double>(v) * v;
  }
  EXPECT_NEAR(sum, 64.172092217952013, 1e-4 * 64.17);
  EXPECT_NEAR(sq, 78.110371072124479, 1e-4 * 78.11);
}
