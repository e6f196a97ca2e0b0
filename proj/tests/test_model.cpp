#include "dim3d/model.hpp"

#include <cmath>
#include <set>

#include <gtest/gtest.h>

#include "test_util.hpp"

namespace dim3d {
namespace {

using testing::uniform_tensor;

DiMConfig tiny_config() {
  DiMConfig cfg;
  cfg.size_tag = "custom";
  cfg.layers = 2;
  cfg.hidden = 32;
  cfg.patch = 4;
  cfg.voxel = 8;
  cfg.num_classes = 3;
  return cfg;
}

TEST(Config, PresetTableEnforced) {
  EXPECT_EQ(DiMConfig::preset("S", 4, 32, 1).hidden, 384);
  EXPECT_EQ(DiMConfig::preset("B", 4, 32, 1).hidden, 768);
  EXPECT_EQ(DiMConfig::preset("L", 4, 32, 1).layers, 32);
  EXPECT_EQ(DiMConfig::preset("XL", 2, 32, 1).layers, 36);
  EXPECT_THROW(DiMConfig::preset("M", 4, 32, 1), std::invalid_argument);

  DiMConfig bad = DiMConfig::preset("S", 4, 32, 1);
  bad.hidden = 100;
  EXPECT_THROW(bad.validate(), std::invalid_argument);

  DiMConfig badpatch = tiny_config();
  badpatch.patch = 3;
  EXPECT_THROW(badpatch.validate(), std::invalid_argument);
}

TEST(TimeEmbed, SinusoidalFeaturesAtZero) {
  const auto feat = time_features(0);
  ASSERT_EQ(feat.size(), static_cast<size_t>(kTimeFeatureDim));
  for (int i = 0; i < kTimeFeatureDim / 2; ++i) {
    EXPECT_DOUBLE_EQ(feat[2 * i], 0.0);      // sin 0
    EXPECT_DOUBLE_EQ(feat[2 * i + 1], 1.0);  // cos 0
  }
}

TEST(TimeEmbed, DistinctForAllStepsUpTo1000) {
  // Pairwise distinctness of the raw features over the full range.
  const int T = 1000;
  std::vector<std::vector<double>> feats(T);
  for (int t = 0; t < T; ++t) feats[t] = time_features(t);
  double min_gap = 1e300;
  for (int a = 0; a < T; ++a)
    for (int b = a + 1; b < T; ++b) {
      double gap = 0.0;
      for (int i = 0; i < kTimeFeatureDim; ++i)
        gap = std::max(gap, std::abs(feats[a][i] - feats[b][i]));
      min_gap = std::min(min_gap, gap);
    }
  EXPECT_GT(min_gap, 1e-6);
}

TEST(TimeEmbed, OutputShapeAndRangeChecks) {
  for (const char* tag : {"S", "B", "L", "XL"}) {
    DiMConfig cfg = DiMConfig::preset(tag, 4, 8, 1);
    cfg.layers = 1;
    cfg.size_tag = "custom";  // keep table hidden sizes, single layer
    ModelParams p = ModelParams::init(cfg, 1);
    Tensor e = time_embed(p, 0, 1000);
    EXPECT_EQ(e.shape(), (Shape{1, cfg.hidden}));
  }
  ModelParams p = ModelParams::init(tiny_config(), 1);
  EXPECT_THROW(time_embed(p, -1, 1000), std::out_of_range);
  EXPECT_THROW(time_embed(p, 1000, 1000), std::out_of_range);
}

TEST(DimBlock, FreshInitIsIdentity) {
  ModelParams p = ModelParams::init(tiny_config(), 7);
  Rng rng(3);
  Tensor tokens = uniform_tensor({10, 32}, rng);
  Tensor out = dim_block(tokens, p.blocks[0]);
  ASSERT_EQ(out.shape(), tokens.shape());
  for (int64_t i = 0; i < out.numel(); ++i)
    EXPECT_EQ(out.data()[i], tokens.data()[i]);  // bit-exact
}

TEST(DimBlock, ShapePreservedForTableConfigs) {
  for (const char* tag : {"S", "B", "L", "XL"}) {
    DiMConfig cfg = DiMConfig::preset(tag, 2, 4, 1);
    cfg.size_tag = "custom";
    cfg.layers = 1;  // a single block suffices for the shape check
    ModelParams p = ModelParams::init(cfg, 11);
    Rng rng(13);
    Tensor tokens = uniform_tensor({6, cfg.hidden}, rng);
    Tensor out = dim_block(tokens, p.blocks[0]);
    EXPECT_EQ(out.shape(), tokens.shape());
  }
}

TEST(DimBlock, GradientsMatchFiniteDifferences) {
  DiMConfig cfg = tiny_config();
  cfg.hidden = 8;
  cfg.state_size = 4;
  ModelParams p = ModelParams::init(cfg, 17);
  BlockParams& bp = p.blocks[0];
  // Zero-init W_out kills in-block gradients; randomize for the check.
  Rng wrng(19);
  bp.W_out = uniform_tensor({cfg.expanded(), cfg.hidden}, wrng, -0.1, 0.1);
  p.set_requires_grad(true);

  Rng rng(23);
  Tensor tokens = uniform_tensor({2, 8}, rng);
  std::vector<Tensor> inputs = {tokens,
                                bp.norm_gain,
                                bp.norm_bias,
                                bp.W_z,
                                bp.W_v,
                                bp.W_out,
                                bp.dir[0].conv_w,
                                bp.dir[0].W_delta,
                                bp.dir[0].b_delta,
                                bp.dir[0].W_B,
                                bp.dir[0].W_C,
                                bp.dir[0].A_log,
                                bp.dir[0].D_skip,
                                bp.dir[1].conv_w,
                                bp.dir[1].W_B};
  testing::check_gradients([&]() { return dim_block(tokens, bp); }, inputs,
                           29, 1e-5, 1e-4, 1e-8);
}

TEST(ModelForward, FreshInitPredictsExactZero) {
  ModelParams p = ModelParams::init(tiny_config(), 31);
  Rng rng(37);
  Tensor x = uniform_tensor({16, 3}, rng, -1.5, 1.5);  // noisy, beyond [-1,1]
  Tensor eps = model_forward(p, x, 5, 1, 1000);
  ASSERT_EQ(eps.shape(), (Shape{16, 3}));
  for (double v : eps.data()) EXPECT_EQ(v, 0.0);  // bit-exact zero
}

TEST(ModelForward, OutputShapeMatchesInput) {
  for (int patch : {2, 4, 8}) {
    DiMConfig cfg = tiny_config();
    cfg.patch = patch;
    cfg.voxel = 8;
    ModelParams p = ModelParams::init(cfg, 41);
    Rng rng(43);
    for (int64_t n : {1, 5, 33}) {
      Tensor x = uniform_tensor({n, 3}, rng);
      Tensor eps = model_forward(p, x, 0, std::nullopt, 10);
      EXPECT_EQ(eps.shape(), (Shape{n, 3}));
    }
  }
}

TEST(ModelForward, PermutingPointsPermutesOutput) {
  DiMConfig cfg = tiny_config();
  ModelParams p = ModelParams::init(cfg, 47);
  // Make the network nonzero so the check is meaningful.
  Rng wrng(53);
  for (auto& b : p.blocks)
    b.W_out = uniform_tensor({cfg.expanded(), cfg.hidden}, wrng, -0.1, 0.1);
  p.W_head = uniform_tensor({cfg.hidden, cfg.patch_len()}, wrng, -0.1, 0.1);

  Rng rng(59);
  const int64_t n = 24;
  Tensor x = uniform_tensor({n, 3}, rng);
  Tensor xp = Tensor::zeros({n, 3});
  std::vector<int64_t> perm(n);
  for (int64_t i = 0; i < n; ++i) perm[i] = (i * 7 + 3) % n;  // a permutation
  for (int64_t i = 0; i < n; ++i)
    for (int a = 0; a < 3; ++a)
      xp.raw()[i * 3 + a] = x.data()[perm[i] * 3 + a];

  Tensor y = model_forward(p, x, 3, 0, 100);
  Tensor yp = model_forward(p, xp, 3, 0, 100);
  for (int64_t i = 0; i < n; ++i)
    for (int a = 0; a < 3; ++a)
      EXPECT_EQ(yp.at({i, a}), y.at({perm[i], a}));  // bit-exact
}

TEST(ModelForward, UnknownClassThrows) {
  ModelParams p = ModelParams::init(tiny_config(), 61);
  Rng rng(67);
  Tensor x = uniform_tensor({4, 3}, rng);
  EXPECT_THROW(model_forward(p, x, 0, 99, 10), std::out_of_range);
  EXPECT_THROW(model_forward(p, x, 0, -1, 10), std::out_of_range);
}

TEST(ModelForward, DeterministicAcrossRuns) {
  DiMConfig cfg = tiny_config();
  ModelParams p1 = ModelParams::init(cfg, 71);
  ModelParams p2 = ModelParams::init(cfg, 71);
  bool all_equal = true;
  p1.for_each_param([&](const std::string& name, Tensor& t) {
    ModelParams& other = p2;
    other.for_each_param([&](const std::string& name2, Tensor& t2) {
      if (name == name2)
        for (int64_t i = 0; i < t.numel(); ++i)
          all_equal = all_equal && t.data()[i] == t2.data()[i];
    });
  });
  EXPECT_TRUE(all_equal);

  Rng rng(73);
  Tensor x = uniform_tensor({8, 3}, rng);
  Tensor y1 = model_forward(p1, x, 2, std::nullopt, 10);
  Tensor y2 = model_forward(p2, x, 2, std::nullopt, 10);
  for (int64_t i = 0; i < y1.numel(); ++i)
    EXPECT_EQ(y1.data()[i], y2.data()[i]);
}

TEST(ParamCount, OrderingAcrossTableSizes) {
  const int64_t s = param_count(DiMConfig::preset("S", 4, 32, 1));
  const int64_t b = param_count(DiMConfig::preset("B", 4, 32, 1));
  const int64_t l = param_count(DiMConfig::preset("L", 4, 32, 1));
  const int64_t xl = param_count(DiMConfig::preset("XL", 4, 32, 1));
  EXPECT_LT(s, b);
  EXPECT_LT(b, l);
  EXPECT_LT(l, xl);
}

TEST(ParamCount, DoublingHiddenQuadruplesBlocks) {
  DiMConfig cfg = tiny_config();
  cfg.hidden = 384;
  DiMConfig big = cfg;
  big.hidden = 768;
  const double ratio = static_cast<double>(block_param_count(big)) /
                       static_cast<double>(block_param_count(cfg));
  EXPECT_GE(ratio, 3.5);
  EXPECT_LE(ratio, 4.5);
}

TEST(ParamCount, MatchesAllocationWalk) {
  for (int seed = 0; seed < 2; ++seed) {
    DiMConfig cfg = seed == 0 ? tiny_config() : DiMConfig::preset("S", 8, 16, 5);
    ModelParams p = ModelParams::init(cfg, seed);
    EXPECT_EQ(param_count(cfg), p.allocated_params());
  }
}

}  // namespace
}  // namespace dim3d
