#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "mgresnet/net.hpp"
#include "mgresnet/transfer.hpp"

namespace mgresnet {

/// Standard deviation of the Gaussian used for weights and Q.
inline constexpr double kInitStddev = 0.1;

/// Levels 1 (coarsest) .. L (finest), each halving the layer count of the
/// next finer one.
class Hierarchy {
public:
    Hierarchy() = default;
    explicit Hierarchy(std::vector<LevelSpec> levels) : levels_(std::move(levels)) {
        if (levels_.empty())
            throw InvalidArgument("hierarchy needs at least one level");
        for (std::size_t i = 1; i < levels_.size(); ++i)
            TransferPair(levels_[i], levels_[i - 1]);
    }

    int size() const { return int(levels_.size()); }
    int finest_level() const { return size(); }

    /// 1-based level access.
    const LevelSpec& level(int l) const {
        if (l < 1 || l > size())
            throw InvalidArgument("level " + std::to_string(l) + " outside 1.." + std::to_string(size()));
        return levels_[std::size_t(l - 1)];
    }
    const LevelSpec& finest() const { return levels_.back(); }
    const LevelSpec& coarsest() const { return levels_.front(); }

    TransferPair transfer(int fine_level) const { return TransferPair(level(fine_level), level(fine_level - 1)); }

    /// Cost of one gradient evaluation on level l in finest-level units, 2^(l-L).
    double cost_factor(int l) const { return std::ldexp(1.0, l - size()); }

    const std::vector<LevelSpec>& levels() const { return levels_; }

private:
    std::vector<LevelSpec> levels_;
};

/// Builds L levels from the finest configuration: K^l = K^L 2^(l-L),
/// dt^l = T / K^l and beta^l = beta^L 2^(L-l) on the residual layers.
inline Hierarchy build_hierarchy(int finest_layers, int levels, int width, int input_dim, int class_count,
                                 double finest_reg, double final_time = 1.0) {
    if (levels < 1)
        throw InvalidArgument("number of levels must be at least 1, got L=" + std::to_string(levels));
    if (levels > 30 || finest_layers < 1 || finest_layers % (1 << (levels - 1)) != 0)
        throw InvalidArgument("finest layer count " + std::to_string(finest_layers) +
                              " is not divisible by 2^(L-1) for L=" + std::to_string(levels));
    std::vector<LevelSpec> specs;
    specs.reserve(std::size_t(levels));
    for (int l = 1; l <= levels; ++l) {
        const int k = finest_layers >> (levels - l);
        const double beta = std::ldexp(finest_reg, levels - l);
        specs.push_back(make_level_spec(k, width, input_dim, class_count, beta, final_time, l, finest_reg));
    }
    return Hierarchy(std::move(specs));
}

/// Gaussian weights (mean 0, std kInitStddev) for Q, W_k and W_K; zero biases.
inline ParamVector init_params(const LevelSpec& spec, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, kInitStddev);
    auto fill = [&](auto&& block) {
        for (Eigen::Index i = 0; i < block.rows(); ++i)
            for (Eigen::Index j = 0; j < block.cols(); ++j)
                block(i, j) = normal(rng);
    };
    ParamVector p(spec.shape());
    fill(p.input_map());
    for (int k = 0; k < spec.layer_count; ++k)
        fill(p.weight(k));
    fill(p.classifier_weight());
    return p;
}

} // namespace mgresnet
