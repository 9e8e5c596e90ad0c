#pragma once

// Transfer of parameters between adjacent levels of the time grid. The fine
// level has twice as many residual layers; Q and the classifier are not
// time-discretized and transfer by identity.
//
//   prolong            coarse layer k -> fine layers 2k, 2k+1 (copy)
//   restrict_gradient  fine 2k + fine 2k+1 -> coarse k (transpose of prolong)
//   restrict_params    (fine 2k + fine 2k+1) / 2 -> coarse k

#include <string>

#include "mgresnet/net.hpp"

namespace mgresnet {

/// How parameters (not gradients) are moved to the coarse level.
enum class ParamRestriction {
    average,   // normalized transpose; restrict_params(prolong(x)) == x
    transpose, // literal transpose of the piecewise-constant prolongation
};

inline ParamShape coarse_shape(const ParamShape& fine) {
    if (fine.layer_count < 2 || fine.layer_count % 2 != 0)
        throw InvalidArgument("cannot coarsen " + std::to_string(fine.layer_count) + " layers by a factor of two");
    ParamShape c = fine;
    c.layer_count /= 2;
    return c;
}

inline ParamShape fine_shape(const ParamShape& coarse) {
    ParamShape f = coarse;
    f.layer_count *= 2;
    return f;
}

/// Adjacent pair of levels. Checks that the shapes can be transferred.
struct TransferPair {
    LevelSpec fine_spec;
    LevelSpec coarse_spec;

    TransferPair(const LevelSpec& fine, const LevelSpec& coarse) : fine_spec(fine), coarse_spec(coarse) {
        if (fine.layer_count != 2 * coarse.layer_count)
            throw InvalidArgument("fine level must have exactly twice the coarse layer count");
        if (fine.width != coarse.width || fine.input_dim != coarse.input_dim || fine.class_count != coarse.class_count)
            throw InvalidArgument("levels differ in width, input or class dimension");
    }
};

namespace detail {

inline void copy_fixed_blocks(const ParamVector& from, ParamVector& to) {
    to.input_map() = from.input_map();
    to.classifier_weight() = from.classifier_weight();
    to.classifier_bias() = from.classifier_bias();
}

} // namespace detail

inline ParamVector prolong(const ParamVector& coarse) {
    ParamVector fine(fine_shape(coarse.shape()));
    for (int k = 0; k < coarse.layer_count(); ++k) {
        fine.layer(2 * k) = coarse.layer(k);
        fine.layer(2 * k + 1) = coarse.layer(k);
    }
    detail::copy_fixed_blocks(coarse, fine);
    return fine;
}

inline ParamVector restrict_gradient(const ParamVector& fine) {
    ParamVector coarse(coarse_shape(fine.shape()));
    for (int k = 0; k < coarse.layer_count(); ++k)
        coarse.layer(k) = fine.layer(2 * k) + fine.layer(2 * k + 1);
    detail::copy_fixed_blocks(fine, coarse);
    return coarse;
}

inline ParamVector restrict_params(const ParamVector& fine, ParamRestriction mode = ParamRestriction::average) {
    if (mode == ParamRestriction::transpose)
        return restrict_gradient(fine);
    ParamVector coarse(coarse_shape(fine.shape()));
    for (int k = 0; k < coarse.layer_count(); ++k)
        coarse.layer(k) = 0.5 * (fine.layer(2 * k) + fine.layer(2 * k + 1));
    detail::copy_fixed_blocks(fine, coarse);
    return coarse;
}

// Shape-checked variants bound to a level pair.

inline ParamVector prolong(const TransferPair& pair, const ParamVector& coarse) {
    check_conforms(coarse, pair.coarse_spec);
    return prolong(coarse);
}

inline ParamVector restrict_gradient(const TransferPair& pair, const ParamVector& fine) {
    check_conforms(fine, pair.fine_spec);
    return restrict_gradient(fine);
}

inline ParamVector restrict_params(const TransferPair& pair, const ParamVector& fine,
                                   ParamRestriction mode = ParamRestriction::average) {
    check_conforms(fine, pair.fine_spec);
    return restrict_params(fine, mode);
}

} // namespace mgresnet
