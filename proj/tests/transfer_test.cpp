#include <gtest/gtest.h>

#include <random>

#include "test_util.hpp"

namespace mgresnet {
namespace {

constexpr ParamShape kCoarse{2, 3, 2, 2};

ParamVector layered(const ParamShape& shape, const std::vector<double>& fill) {
    ParamVector p(shape);
    for (int k = 0; k < shape.layer_count; ++k)
        p.layer(k).setConstant(fill[std::size_t(k)]);
    p.input_map().setConstant(7.0);
    p.classifier_weight().setConstant(-3.0);
    p.classifier_bias().setConstant(0.5);
    return p;
}

TEST(Prolong, CopiesEachCoarseLayerTwice) {
    const ParamVector fine = prolong(layered(kCoarse, {1.0, 2.0}));
    ASSERT_EQ(fine.layer_count(), 4);
    EXPECT_EQ(fine, layered(fine_shape(kCoarse), {1.0, 1.0, 2.0, 2.0}));
}

TEST(Prolong, ZeroMapsToZero) {
    EXPECT_EQ(prolong(ParamVector(kCoarse)).inf_norm(), 0.0);
}

TEST(RestrictGradient, SumsPairs) {
    const ParamVector coarse = restrict_gradient(layered(fine_shape(kCoarse), {1.0, 2.0, 3.0, 5.0}));
    EXPECT_EQ(coarse, layered(kCoarse, {3.0, 8.0}));
}

TEST(RestrictParams, AveragingInvertsProlong) {
    std::mt19937_64 rng(1);
    const ParamVector c = testing::random_params(kCoarse, rng);
    EXPECT_EQ(restrict_params(prolong(c)), c);
}

TEST(RestrictParams, OppositePairCancels) {
    const ParamShape fine{2, 3, 2, 2};
    ParamVector p(fine);
    p.layer(0).setConstant(4.0);
    p.layer(1).setConstant(-4.0);
    EXPECT_EQ(restrict_params(p).layer(0).lpNorm<Eigen::Infinity>(), 0.0);
}

TEST(RestrictParams, TransposeModeSums) {
    const ParamVector fine = layered(fine_shape(kCoarse), {1.0, 2.0, 3.0, 5.0});
    EXPECT_EQ(restrict_params(fine, ParamRestriction::transpose), restrict_gradient(fine));
}

TEST(Transfer, RestrictGradientIsAdjointOfProlongOnLayers) {
    std::mt19937_64 rng(2);
    for (int levels : {2, 4, 8}) {
        const Hierarchy h = build_hierarchy(1 << levels, levels, 3, 2, 2, 0.0);
        for (int l = 2; l <= levels; ++l) {
            for (int trial = 0; trial < 20; ++trial) {
                const ParamVector e = testing::random_params(h.level(l - 1).shape(), rng);
                const ParamVector g = testing::random_params(h.level(l).shape(), rng);
                const double lhs = prolong(e).dot(g);
                const double rhs = e.dot(restrict_gradient(g));
                EXPECT_NEAR(lhs, rhs, 1e-12 * std::max(1.0, std::abs(lhs)));
            }
        }
    }
}

TEST(Transfer, OperatorsAreLinear) {
    std::mt19937_64 rng(3);
    const ParamVector a = testing::random_params(kCoarse, rng), b = testing::random_params(kCoarse, rng);
    EXPECT_LT((prolong(2.0 * a + b) - (2.0 * prolong(a) + prolong(b))).inf_norm(), 1e-14);
    const ParamVector f = prolong(a), g = prolong(b);
    EXPECT_LT((restrict_gradient(f - 3.0 * g) - (restrict_gradient(f) - 3.0 * restrict_gradient(g))).inf_norm(),
              1e-14);
}

TEST(Transfer, RejectsOddLayerCount) {
    EXPECT_THROW(restrict_gradient(ParamVector(ParamShape{2, 3, 2, 3})), InvalidArgument);
    EXPECT_THROW(restrict_params(ParamVector(ParamShape{2, 3, 2, 1})), InvalidArgument);
}

TEST(TransferPair, ChecksShapes) {
    const LevelSpec fine = make_level_spec(4, 2, 3, 2);
    const LevelSpec coarse = make_level_spec(2, 2, 3, 2);
    EXPECT_NO_THROW(TransferPair(fine, coarse));
    EXPECT_THROW(TransferPair(fine, make_level_spec(3, 2, 3, 2)), InvalidArgument);
    EXPECT_THROW(TransferPair(fine, make_level_spec(2, 3, 3, 2)), InvalidArgument);
    const TransferPair pair(fine, coarse);
    EXPECT_THROW(prolong(pair, ParamVector(fine.shape())), InvalidArgument);
    EXPECT_NO_THROW(restrict_gradient(pair, ParamVector(fine.shape())));
}

} // namespace
} // namespace mgresnet
