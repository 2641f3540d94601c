#include "support.hpp"

#include <gtest/gtest.h>

using namespace mmtal;
using mmtal::testing::CellSegment;

namespace {

FramePredictions single_level(const std::vector<double>& act, const Matrix& offsets, int stride) {
  FramePredictions fp;
  LevelPrediction lp;
  Matrix a(static_cast<Eigen::Index>(act.size()), 1);
  for (std::size_t i = 0; i < act.size(); ++i) a(static_cast<Eigen::Index>(i), 0) = act[i];
  lp.actionness = ad::constant(a);
  lp.offsets = ad::constant(offsets);
  lp.stride = stride;
  fp.levels.push_back(lp);
  fp.num_snippets = static_cast<Eigen::Index>(act.size()) * stride;
  return fp;
}

Proposal prop(double s, double e, double score) {
  Proposal p;
  p.start = s;
  p.end = e;
  p.score = score;
  return p;
}

}  // namespace

TEST(Heads, OutputRanges) {
  Rng rng(1);
  const PyramidParams params(rng, 3, 8);
  const LocalizerHeads heads(rng, 8, 16);
  const auto pyr = build_pyramid(rng.normal_matrix(32, 8, 3.0), params);
  const auto fp = predict_heads(pyr, heads);
  ASSERT_EQ(fp.levels.size(), 3u);
  for (const auto& lp : fp.levels) {
    EXPECT_GT(lp.actionness.value().minCoeff(), 0.0);
    EXPECT_LT(lp.actionness.value().maxCoeff(), 1.0);
    EXPECT_GE(lp.offsets.value().minCoeff(), 0.0);
    EXPECT_EQ(lp.offsets.cols(), 2);
  }
}

TEST(Heads, ZeroWeightsGiveHalfAndLn2) {
  Rng rng(2);
  const PyramidParams params(rng, 2, 4);
  LocalizerHeads heads(rng, 4, 8);
  nn::ParamList ps;
  heads.collect(ps, "h");
  for (auto& p : ps) {
    ad::Var v = p.var;
    v.mutable_value().setZero();
  }
  const auto fp = predict_heads(build_pyramid(rng.normal_matrix(16, 4, 1.0), params), heads);
  for (const auto& lp : fp.levels) {
    EXPECT_LT((lp.actionness.value().array() - 0.5).abs().maxCoeff(), 1e-12);
    EXPECT_LT((lp.offsets.value().array() - std::log(2.0)).abs().maxCoeff(), 1e-12);
  }
}

TEST(Heads, FusionAverages) {
  const auto a = single_level({0.2, 0.4}, Matrix::Constant(2, 2, 1.0), 2);
  const auto b = single_level({0.6, 0.8}, Matrix::Constant(2, 2, 3.0), 2);
  const auto f = fuse_predictions(a, b);
  EXPECT_NEAR(f.levels[0].actionness.value()(0, 0), 0.4, 1e-12);
  EXPECT_NEAR(f.levels[0].actionness.value()(1, 0), 0.6, 1e-12);
  EXPECT_NEAR(f.levels[0].offsets.value()(1, 1), 2.0, 1e-12);
}

TEST(Targets, LevelRangeTable) {
  EXPECT_EQ(level_for_length(6, 6), 1);
  EXPECT_EQ(level_for_length(8, 6), 1);
  EXPECT_EQ(level_for_length(9, 6), 2);
  EXPECT_EQ(level_for_length(100, 6), 5);
  EXPECT_EQ(level_for_length(128, 6), 5);
  EXPECT_EQ(level_for_length(129, 6), 6);
  EXPECT_EQ(level_for_length(1000, 3), 3);
}

TEST(Targets, CenterOffsetsHandTrace) {
  const auto ta = assign_targets({{10, 14, "a"}}, {32, 16});
  const auto& l1 = ta.levels[0];
  ASSERT_EQ(l1.num_positive(), 2u);
  EXPECT_EQ(l1.positives[0], 5);
  EXPECT_EQ(l1.positives[1], 6);
  EXPECT_DOUBLE_EQ(l1.offsets(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(l1.offsets(0, 1), 1.5);
  EXPECT_DOUBLE_EQ(l1.offsets(1, 0), 1.5);
  EXPECT_DOUBLE_EQ(l1.offsets(1, 1), 0.5);
  EXPECT_EQ(ta.levels[1].num_positive(), 0u);
  EXPECT_EQ(l1.num_negative(), 30u);
}

TEST(Targets, UncoveredInstanceFallsBackToNearestFrame) {
  const auto ta = assign_targets({{4, 5, "a"}}, {8, 4});
  ASSERT_EQ(ta.levels[0].num_positive(), 1u);
  EXPECT_EQ(ta.levels[0].positives[0], 2);
}

TEST(Targets, ShortestInstanceWinsSharedFrame) {
  const auto ta = assign_targets({{0, 8, "long"}, {2, 6, "short"}}, {16});
  const auto& l = ta.levels[0];
  for (std::size_t k = 0; k < l.num_positive(); ++k) {
    if (l.positives[k] == 1 || l.positives[k] == 2) {
      EXPECT_DOUBLE_EQ(l.segments(static_cast<Eigen::Index>(k), 0), 2.0);
    }
  }
}

TEST(Decode, HandTrace) {
  Matrix off = Matrix::Zero(4, 2);
  off(2, 0) = 1.5;
  off(2, 1) = 0.5;
  const auto props = decode_proposals(single_level({0.1, 0.9, 0.95, 0.2}, off, 2), 0.5);
  ASSERT_EQ(props.size(), 1u);
  EXPECT_DOUBLE_EQ(props[0].start, 2.0);
  EXPECT_DOUBLE_EQ(props[0].end, 6.0);
  EXPECT_DOUBLE_EQ(props[0].score, 0.95);
}

TEST(Decode, BelowThresholdIsEmpty) {
  EXPECT_TRUE(decode_proposals(single_level({0.1, 0.2, 0.3}, Matrix::Ones(3, 2), 2), 0.5).empty());
}

TEST(Decode, TwoDisjointRuns) {
  const auto props = decode_proposals(single_level({0.9, 0.8, 0.1, 0.7, 0.9, 0.2}, Matrix::Ones(6, 2), 2), 0.5);
  EXPECT_EQ(props.size(), 2u);
}

TEST(Decode, MaskedFramesAreSkipped) {
  auto fp = single_level({0.9, 0.9}, Matrix::Ones(2, 2), 2);
  fp.levels[0].mask = Eigen::VectorXd::Zero(2);
  EXPECT_TRUE(decode_proposals(fp, 0.5).empty());
}

TEST(SoftNms, IdenticalSegmentDecaysAway) {
  const auto out = soft_nms({prop(0, 10, 0.9), prop(0, 10, 0.8)});
  ASSERT_EQ(out.size(), 1u);
  EXPECT_DOUBLE_EQ(out[0].score, 0.9);
}

TEST(SoftNms, LowOverlapUnchanged) {
  const auto out = soft_nms({prop(0, 10, 0.9), prop(5, 15, 0.8)});
  ASSERT_EQ(out.size(), 2u);
  EXPECT_DOUBLE_EQ(out[1].score, 0.8);
}

TEST(SoftNms, LinearDecayAboveThreshold) {
  const auto out = soft_nms({prop(0, 10, 0.9), prop(1, 10, 0.8)});
  ASSERT_EQ(out.size(), 2u);
  EXPECT_NEAR(out[1].score, 0.8 * 0.1, 1e-12);
}

TEST(SoftNms, NeverIncreasesScoresAndSorted) {
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Proposal> ps;
    const int n = static_cast<int>(rng.uniform_int(1, 12));
    for (int i = 0; i < n; ++i) {
      const double s = rng.uniform(0, 50);
      ps.push_back(prop(s, s + rng.uniform(1, 20), rng.uniform(0.01, 1)));
    }
    const auto out = soft_nms(ps);
    for (std::size_t i = 1; i < out.size(); ++i) EXPECT_GE(out[i - 1].score, out[i].score);
    double max_in = 0;
    for (const auto& p : ps) max_in = std::max(max_in, p.score);
    ASSERT_FALSE(out.empty());
    EXPECT_DOUBLE_EQ(out[0].score, max_in);
  }
}

TEST(SoftNms, TinySigmaGaussianMatchesHardNms) {
  Rng rng(8);
  SoftNmsOptions opts;
  opts.mode = NmsMode::gaussian;
  opts.sigma = 1e-6;
  opts.iou_threshold = 0.4;
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Proposal> ps;
    const int n = static_cast<int>(rng.uniform_int(1, 15));
    for (int i = 0; i < n; ++i) {
      const double s = std::floor(rng.uniform(0, 40));
      ps.push_back(prop(s, s + std::floor(rng.uniform(1, 15)), rng.uniform(0.05, 1)));
    }
    const auto out = soft_nms(ps, opts);
    const auto kept = mmtal::testing::greedy_hard_nms(ps, opts.iou_threshold);
    ASSERT_EQ(out.size(), kept.size());
    for (std::size_t i = 0; i < kept.size(); ++i) {
      EXPECT_EQ(out[i].start, ps[kept[i]].start);
      EXPECT_EQ(out[i].end, ps[kept[i]].end);
      EXPECT_EQ(out[i].score, ps[kept[i]].score);
    }
  }
}

TEST(Geometry, IouAndDiouMatchCellCounting) {
  Rng rng(9);
  for (int trial = 0; trial < 500; ++trial) {
    const int a0 = static_cast<int>(rng.uniform_int(0, 30)), b0 = static_cast<int>(rng.uniform_int(0, 30));
    const CellSegment a{a0, a0 + static_cast<int>(rng.uniform_int(1, 20))};
    const CellSegment b{b0, b0 + static_cast<int>(rng.uniform_int(1, 20))};
    EXPECT_NEAR(segment_iou(a.start, a.end, b.start, b.end), mmtal::testing::brute_iou(a, b), 1e-12);
    EXPECT_NEAR(ad::diou_loss(a.start, a.end, b.start, b.end), mmtal::testing::brute_diou(a, b), 1e-12);
  }
}
