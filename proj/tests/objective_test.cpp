#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "test_util.hpp"

namespace mgresnet {
namespace {

TEST(Loss, ZeroParametersGiveLogOfClassCount) {
    std::mt19937_64 rng(1);
    for (int m : {2, 3, 10}) {
        const LevelSpec s = make_level_spec(4, 3, 2, m);
        const Dataset d = testing::random_dataset(17, 2, m, rng);
        EXPECT_NEAR(loss(ParamVector(s.shape()), s, d.view()), std::log(double(m)), 1e-12);
    }
}

TEST(Loss, RegularizerOfUnitWeights) {
    // One layer with W = I (2x2): beta * |W|^2 = 2 beta on top of ln 2.
    const double beta = 0.25;
    const LevelSpec s = make_level_spec(1, 2, 2, 2, beta);
    ParamVector p(s.shape());
    p.weight(0).setIdentity();
    Matrix x = Matrix::Zero(1, 2);
    Matrix c(1, 2);
    c << 1, 0;
    EXPECT_NEAR(loss(p, s, BatchRef(x, c)), std::log(2.0) + 2 * beta, 1e-15);
}

TEST(Loss, CoarseLevelScalesOnlyLayerBlocks) {
    const Hierarchy h = build_hierarchy(4, 2, 2, 2, 2, 1e-2);
    const LevelSpec& coarse = h.level(1);
    EXPECT_DOUBLE_EQ(coarse.reg_weight, 2e-2);
    EXPECT_DOUBLE_EQ(coarse.finest_reg_weight, 1e-2);
    ParamVector p(coarse.shape());
    p.input_map().setConstant(1.0); // 4 entries
    p.weight(1)(0, 0) = 1.0;
    Matrix x = Matrix::Zero(1, 2);
    Matrix c(1, 2);
    c << 0, 1;
    EXPECT_NEAR(loss(p, coarse, BatchRef(x, c)) - std::log(2.0), 4 * 1e-2 + 2e-2, 1e-15);
}

TEST(Loss, MatchesScalarOracle) {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 30; ++trial) {
        const int v = 1 + trial % 4, K = 1 + trial % 7, m = 2 + trial % 3;
        const LevelSpec s = make_level_spec(K, v, 3, m, 0.01 * (trial % 3), 1.0 + 0.5 * (trial % 2));
        const ParamVector p = testing::random_params(s.shape(), rng);
        const Dataset d = testing::random_dataset(1 + trial, 3, m, rng);
        const double expect = testing::oracle_loss(p, s, d);
        EXPECT_NEAR(loss(p, s, d.view()), expect, 1e-12 * std::max(1.0, std::abs(expect)));
    }
}

TEST(Loss, LargeBatchMatchesOracleAcrossChunks) {
    std::mt19937_64 rng(4);
    const LevelSpec s = make_level_spec(3, 3, 2, 2, 1e-3);
    const ParamVector p = testing::random_params(s.shape(), rng);
    const Dataset d = testing::random_dataset(700, 2, 2, rng);
    EXPECT_NEAR(loss(p, s, d.view()), testing::oracle_loss(p, s, d), 1e-12);
}

TEST(Gradient, MatchesCentralDifferences) {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        const int v = 1 + trial % 4, K = 1 + trial % 8, m = 2 + trial % 2;
        const LevelSpec s = make_level_spec(K, v, 2, m, 1e-3 * (trial % 2));
        const ParamVector p = testing::random_params(s.shape(), rng);
        const Dataset d = testing::random_dataset(1 + trial % 20, 2, m, rng);
        const LossGradient g = gradient(p, s, d.view());
        EXPECT_DOUBLE_EQ(g.loss, loss(p, s, d.view()));
        for (Eigen::Index i = 0; i < p.size(); ++i) {
            const double fd = testing::central_difference(p, s, d.view(), i);
            const double err = std::abs(g.grad.flat()[i] - fd) / std::max(1.0, std::abs(fd));
            EXPECT_LT(err, 1e-5) << "trial " << trial << " component " << i;
        }
    }
}

TEST(Gradient, ClassifierBiasAtZeroParameters) {
    std::mt19937_64 rng(6);
    const LevelSpec s = make_level_spec(2, 2, 3, 4);
    const Dataset d = testing::random_dataset(9, 3, 4, rng);
    const LossGradient g = gradient(ParamVector(s.shape()), s, d.view());
    const Vector expect = (Matrix::Constant(9, 4, 0.25) - d.labels).colwise().sum().transpose() / 9.0;
    EXPECT_LT((g.grad.classifier_bias() - expect).lpNorm<Eigen::Infinity>(), 1e-15);
    // All other components vanish: zero states, zero classifier weight.
    ParamVector rest = g.grad;
    rest.classifier_bias().setZero();
    EXPECT_EQ(rest.inf_norm(), 0.0);
}

TEST(Gradient, LinearInRegularizationWeight) {
    std::mt19937_64 rng(8);
    const LevelSpec s0 = make_level_spec(3, 2, 2, 2, 0.0);
    const LevelSpec s1 = make_level_spec(3, 2, 2, 2, 0.5);
    const ParamVector p = testing::random_params(s0.shape(), rng);
    const Dataset d = testing::random_dataset(5, 2, 2, rng);
    const ParamVector diff = gradient(p, s1, d.view()).grad - gradient(p, s0, d.view()).grad;
    EXPECT_LT((diff - 1.0 * p).inf_norm(), 1e-14);
}

TEST(Gradient, DoublingBetaDoublesRegularizerPart) {
    std::mt19937_64 rng(12);
    auto grad_at = [&](double beta, const ParamVector& p, const Dataset& d) {
        return gradient(p, make_level_spec(4, 3, 2, 2, beta), d.view()).grad;
    };
    const ParamVector p = testing::random_params(ParamShape{3, 2, 2, 4}, rng);
    const Dataset d = testing::random_dataset(8, 2, 2, rng);
    const ParamVector g0 = grad_at(0.0, p, d);
    const ParamVector twice = grad_at(0.2, p, d) - g0;
    const ParamVector once = grad_at(0.1, p, d) - g0;
    EXPECT_LT((twice - 2.0 * once).inf_norm(), 1e-14);
}

TEST(Loss, NonnegativeOnRandomInstances) {
    std::mt19937_64 rng(13);
    for (int trial = 0; trial < 50; ++trial) {
        const LevelSpec s = make_level_spec(1 + trial % 6, 2, 2, 3, 1e-3);
        const ParamVector p = testing::random_params(s.shape(), rng, 3.0);
        const Dataset d = testing::random_dataset(5, 2, 3, rng);
        EXPECT_GE(loss(p, s, d.view()), 0.0);
    }
}

TEST(Gradient, ThreadCountDoesNotChangeBits) {
    std::mt19937_64 rng(9);
    const LevelSpec s = make_level_spec(8, 3, 2, 2, 1e-4);
    const ParamVector p = testing::random_params(s.shape(), rng);
    const Dataset d = testing::random_dataset(1000, 2, 2, rng);
    const LossGradient one = gradient(p, s, d.view(), {1});
    for (int t : {2, 3, 8}) {
        const LossGradient many = gradient(p, s, d.view(), {t});
        EXPECT_EQ(one.loss, many.loss);
        EXPECT_EQ(one.grad, many.grad);
    }
    EXPECT_EQ(gradient(p, s, d.view()).grad, one.grad);
}

TEST(Gradient, RejectsBadBatches) {
    const LevelSpec s = make_level_spec(2, 2, 2, 2);
    const ParamVector p(s.shape());
    Matrix x = Matrix::Zero(2, 2);
    Matrix c(2, 2);
    c << 1, 0, 0.5, 0.5;
    EXPECT_THROW(gradient(p, s, BatchRef(x, c)), InvalidArgument);
    EXPECT_THROW(gradient(p, s, BatchRef(Matrix::Zero(0, 2), Matrix::Zero(0, 2))), InvalidArgument);
    EXPECT_THROW(gradient(p, s, BatchRef(Matrix::Zero(2, 3), c)), InvalidArgument);
}

TEST(CoupledObjective, AddsLinearTerm) {
    std::mt19937_64 rng(10);
    const LevelSpec s = make_level_spec(2, 2, 2, 2, 1e-3);
    const ParamVector p = testing::random_params(s.shape(), rng);
    const ParamVector dg = testing::random_params(s.shape(), rng);
    const Dataset d = testing::random_dataset(6, 2, 2, rng);
    const auto h = make_coupled_objective(s, d.view(), dg);
    EXPECT_NEAR(coupled_eval(h, p), loss(p, s, d.view()) + dg.dot(p), 1e-14);
    const LossGradient gh = coupled_gradient(h, p);
    EXPECT_EQ(gh.grad, gradient(p, s, d.view()).grad + dg);
}

TEST(CoupledObjective, UnitEntryAddsScale) {
    std::mt19937_64 rng(14);
    const LevelSpec s = make_level_spec(2, 2, 2, 2, 1e-3);
    const Dataset d = testing::random_dataset(4, 2, 2, rng);
    const ParamVector base = testing::random_params(s.shape(), rng);
    ParamVector e(s.shape());
    e.flat()[5] = 1.0;
    const auto h = make_coupled_objective(s, d.view(), e);
    for (double scale : {-2.0, 0.5, 3.0}) {
        const ParamVector p = scale * base;
        EXPECT_NEAR(coupled_eval(h, p) - loss(p, s, d.view()), p.flat()[5], 1e-14);
    }
}

TEST(CoupledObjective, GradientMatchesCentralDifferences) {
    std::mt19937_64 rng(15);
    const LevelSpec s = make_level_spec(4, 3, 2, 2, 1e-3);
    const ParamVector p = testing::random_params(s.shape(), rng);
    const Dataset d = testing::random_dataset(10, 2, 2, rng);
    const auto h = make_coupled_objective(s, d.view(), testing::random_params(s.shape(), rng));
    const ParamVector g = coupled_gradient(h, p).grad;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
        ParamVector a = p, b = p;
        a.flat()[i] += 1e-6;
        b.flat()[i] -= 1e-6;
        const double fd = (coupled_eval(h, a) - coupled_eval(h, b)) / 2e-6;
        EXPECT_LT(std::abs(g.flat()[i] - fd) / std::max(1.0, std::abs(fd)), 1e-5) << "component " << i;
    }
}

TEST(CoupledObjective, FinestLevelEqualsLoss) {
    std::mt19937_64 rng(11);
    const LevelSpec s = make_level_spec(2, 2, 2, 2, 1e-3);
    const ParamVector p = testing::random_params(s.shape(), rng);
    const Dataset d = testing::random_dataset(6, 2, 2, rng);
    const auto h = make_finest_objective(s, d.view());
    EXPECT_EQ(coupled_eval(h, p), loss(p, s, d.view()));
    EXPECT_EQ(coupled_gradient(h, p).grad, gradient(p, s, d.view()).grad);
}

TEST(CoupledObjective, RejectsForeignShape) {
    const LevelSpec s = make_level_spec(2, 2, 2, 2);
    const Dataset d{Matrix::Zero(1, 2), Matrix::Identity(1, 2), Split::train};
    EXPECT_THROW(make_coupled_objective(s, d.view(), ParamVector(ParamShape{2, 2, 2, 4})), InvalidArgument);
}

} // namespace
} // namespace mgresnet
