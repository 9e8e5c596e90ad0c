#pragma once

// ResNet viewed as a forward-Euler discretization of a control ODE:
//
//   y_0     = Q x
//   y_{k+1} = y_k + dt * relu(W_k y_k + b_k),   k = 0 .. K-1
//   p       = softmax(W_K y_K + b_K)
//
// Batches are stored one sample per row, so the code computes Y W^T.

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mgresnet/errors.hpp"

namespace mgresnet {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using MatrixMap = Eigen::Map<Matrix>;
using ConstMatrixMap = Eigen::Map<const Matrix>;
using VectorMap = Eigen::Map<Vector>;
using ConstVectorMap = Eigen::Map<const Vector>;

/// Dimensions that fix the layout of a ParamVector.
struct ParamShape {
    int width = 0;        // v
    int input_dim = 0;    // q
    int class_count = 0;  // m
    int layer_count = 0;  // K

    std::size_t input_size() const { return std::size_t(width) * input_dim; }
    std::size_t layer_size() const { return std::size_t(width) * width + width; }
    std::size_t classifier_size() const { return std::size_t(class_count) * width + class_count; }
    std::size_t layers_offset() const { return input_size(); }
    std::size_t classifier_offset() const { return input_size() + layer_size() * layer_count; }
    std::size_t size() const { return classifier_offset() + classifier_size(); }

    friend bool operator==(const ParamShape&, const ParamShape&) = default;
};

/// One level of the time-grid hierarchy. Level 1 is the coarsest.
struct LevelSpec {
    int level = 1;
    int layer_count = 1;            // K^l
    double time_step = 1.0;         // dt^l = T / K^l
    double reg_weight = 0.0;        // beta^l, applied to the residual layers
    double finest_reg_weight = 0.0; // beta^L, applied once to Q and the classifier
    int width = 1;
    int input_dim = 1;
    int class_count = 2;
    double final_time = 1.0;

    ParamShape shape() const { return {width, input_dim, class_count, layer_count}; }
};

/// Builds a single-level spec with dt = T / K.
inline LevelSpec make_level_spec(int layer_count, int width, int input_dim, int class_count,
                                 double reg_weight = 0.0, double final_time = 1.0, int level = 1,
                                 double finest_reg_weight = -1.0) {
    if (layer_count < 1 || width < 1 || input_dim < 1 || class_count < 1)
        throw InvalidArgument("level spec dimensions must be positive");
    if (!(final_time > 0.0) || !std::isfinite(final_time))
        throw InvalidArgument("final time must be positive and finite");
    if (!(reg_weight >= 0.0))
        throw InvalidArgument("regularization weight must be nonnegative");
    LevelSpec s;
    s.level = level;
    s.layer_count = layer_count;
    s.time_step = final_time / layer_count;
    s.reg_weight = reg_weight;
    s.finest_reg_weight = finest_reg_weight < 0.0 ? reg_weight : finest_reg_weight;
    s.width = width;
    s.input_dim = input_dim;
    s.class_count = class_count;
    s.final_time = final_time;
    return s;
}

/// Flattened trainable parameters of one level.
///
/// Layout: Q (v x q), then K blocks of [W_k (v x v), b_k (v)], then the
/// classifier [W_K (m x v), b_K (m)]. All matrices row-major.
class ParamVector {
public:
    ParamVector() = default;
    explicit ParamVector(const ParamShape& shape) : shape_(shape), data_(Vector::Zero(Eigen::Index(shape.size()))) {}
    ParamVector(const ParamShape& shape, Vector data) : shape_(shape), data_(std::move(data)) {
        if (std::size_t(data_.size()) != shape_.size())
            throw InvalidArgument("flat parameter size does not match shape");
    }

    static ParamVector zeros(const ParamShape& shape) { return ParamVector(shape); }

    const ParamShape& shape() const { return shape_; }
    int layer_count() const { return shape_.layer_count; }
    Eigen::Index size() const { return data_.size(); }

    Vector& flat() { return data_; }
    const Vector& flat() const { return data_; }

    MatrixMap input_map() { return {data_.data(), shape_.width, shape_.input_dim}; }
    ConstMatrixMap input_map() const { return {data_.data(), shape_.width, shape_.input_dim}; }

    MatrixMap weight(int k) { return {layer_ptr(k), shape_.width, shape_.width}; }
    ConstMatrixMap weight(int k) const { return {layer_ptr(k), shape_.width, shape_.width}; }
    VectorMap bias(int k) { return {layer_ptr(k) + shape_.width * shape_.width, shape_.width}; }
    ConstVectorMap bias(int k) const { return {layer_ptr(k) + shape_.width * shape_.width, shape_.width}; }

    /// The contiguous [W_k, b_k] block of layer k.
    auto layer(int k) { return data_.segment(Eigen::Index(shape_.layers_offset() + shape_.layer_size() * k), Eigen::Index(shape_.layer_size())); }
    auto layer(int k) const { return data_.segment(Eigen::Index(shape_.layers_offset() + shape_.layer_size() * k), Eigen::Index(shape_.layer_size())); }

    MatrixMap classifier_weight() { return {data_.data() + shape_.classifier_offset(), shape_.class_count, shape_.width}; }
    ConstMatrixMap classifier_weight() const { return {data_.data() + shape_.classifier_offset(), shape_.class_count, shape_.width}; }
    VectorMap classifier_bias() { return {data_.data() + shape_.classifier_offset() + shape_.class_count * shape_.width, shape_.class_count}; }
    ConstVectorMap classifier_bias() const { return {data_.data() + shape_.classifier_offset() + shape_.class_count * shape_.width, shape_.class_count}; }

    ParamVector& operator+=(const ParamVector& o) { check_same(o); data_ += o.data_; return *this; }
    ParamVector& operator-=(const ParamVector& o) { check_same(o); data_ -= o.data_; return *this; }
    ParamVector& operator*=(double s) { data_ *= s; return *this; }

    friend ParamVector operator+(ParamVector a, const ParamVector& b) { return a += b; }
    friend ParamVector operator-(ParamVector a, const ParamVector& b) { return a -= b; }
    friend ParamVector operator*(double s, ParamVector a) { return a *= s; }
    friend ParamVector operator*(ParamVector a, double s) { return a *= s; }

    /// a += s * x
    ParamVector& axpy(double s, const ParamVector& x) { check_same(x); data_.noalias() += s * x.data_; return *this; }

    double dot(const ParamVector& o) const { check_same(o); return data_.dot(o.data_); }
    double squared_norm() const { return data_.squaredNorm(); }
    double inf_norm() const { return data_.size() == 0 ? 0.0 : data_.lpNorm<Eigen::Infinity>(); }
    bool all_finite() const { return data_.allFinite(); }

    friend bool operator==(const ParamVector& a, const ParamVector& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    double* layer_ptr(int k) { return data_.data() + shape_.layers_offset() + shape_.layer_size() * std::size_t(k); }
    const double* layer_ptr(int k) const { return data_.data() + shape_.layers_offset() + shape_.layer_size() * std::size_t(k); }

    void check_same(const ParamVector& o) const {
        if (!(shape_ == o.shape_))
            throw InvalidArgument("parameter vectors have different shapes");
    }

    ParamShape shape_;
    Vector data_;
};

inline void check_conforms(const ParamVector& params, const LevelSpec& spec) {
    if (!(params.shape() == spec.shape()))
        throw InvalidArgument("parameters do not conform to level " + std::to_string(spec.level) +
                              " (expected " + std::to_string(spec.layer_count) + " layers, got " +
                              std::to_string(params.layer_count()) + ")");
}

/// States y_0 .. y_K, one batch matrix each.
struct StateTrajectory {
    std::vector<Matrix> states;

    const Matrix& initial() const { return states.front(); }
    const Matrix& terminal() const { return states.back(); }
    std::size_t size() const { return states.size(); }
};

namespace detail {

/// z = W y + b for one sample. Shared by the forward and adjoint passes so
/// both see bitwise-identical pre-activations.
inline void preactivation(const double* weight, const double* bias, const double* y, double* z, int width) {
    for (int i = 0; i < width; ++i) {
        double acc = bias[i];
        const double* w = weight + std::size_t(i) * width;
        for (int l = 0; l < width; ++l)
            acc += w[l] * y[l];
        z[i] = acc;
    }
}

/// out = y + dt relu(W y + b) for every row of a row-major batch.
inline void euler_step(const double* weight, const double* bias, double dt, const double* y, double* out,
                       Eigen::Index rows, int width) {
    std::vector<double> z(std::size_t(width), 0.0);
    for (Eigen::Index j = 0; j < rows; ++j) {
        const double* yj = y + j * width;
        double* oj = out + j * width;
        preactivation(weight, bias, yj, z.data(), width);
        for (int i = 0; i < width; ++i)
            oj[i] = yj[i] + dt * (z[i] > 0.0 ? z[i] : 0.0);
    }
}

} // namespace detail

/// relu(y W^T + 1 b^T): the one-layer-perceptron residual function, row-wise.
inline Matrix residual_module(const Eigen::Ref<const Matrix>& y, const Eigen::Ref<const Matrix>& weight,
                              const Eigen::Ref<const Vector>& bias) {
    if (weight.rows() != weight.cols() || y.cols() != weight.cols() || bias.size() != weight.rows())
        throw InvalidArgument("residual module shape mismatch");
    Matrix z = y.lazyProduct(weight.transpose());
    z.rowwise() += bias.transpose();
    return z.cwiseMax(0.0);
}

/// Forward propagation, storing every state for the adjoint pass.
inline StateTrajectory forward(const ParamVector& params, const LevelSpec& spec, const Eigen::Ref<const Matrix>& x) {
    check_conforms(params, spec);
    if (x.cols() != spec.input_dim)
        throw InvalidArgument("input has " + std::to_string(x.cols()) + " features, expected " +
                              std::to_string(spec.input_dim));
    StateTrajectory traj;
    traj.states.reserve(std::size_t(spec.layer_count) + 1);
    traj.states.emplace_back(x * params.input_map().transpose());
    if (!traj.states.back().allFinite())
        throw NumericError("non-finite value in input map", 0);
    for (int k = 0; k < spec.layer_count; ++k) {
        const Matrix& y = traj.states.back();
        Matrix next(y.rows(), y.cols());
        detail::euler_step(params.weight(k).data(), params.bias(k).data(), spec.time_step, y.data(), next.data(),
                           y.rows(), spec.width);
        if (!next.allFinite())
            throw NumericError("non-finite state after residual layer " + std::to_string(k), k);
        traj.states.push_back(std::move(next));
    }
    return traj;
}

/// Classifier logits W_K y + b_K for every row of `y_final`.
inline Matrix logits(const ParamVector& params, const Eigen::Ref<const Matrix>& y_final) {
    Matrix s = y_final * params.classifier_weight().transpose();
    s.rowwise() += params.classifier_bias().transpose();
    return s;
}

/// Row-wise softmax in the shifted form exp(z - max z) / sum exp(z - max z).
inline Matrix softmax_rows(const Eigen::Ref<const Matrix>& z) {
    Matrix p(z.rows(), z.cols());
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
        const double shift = z.row(i).maxCoeff();
        p.row(i) = (z.row(i).array() - shift).exp().matrix();
        p.row(i) /= p.row(i).sum();
    }
    return p;
}

/// Class probabilities, one row per sample.
inline Matrix predict(const ParamVector& params, const LevelSpec& spec, const Eigen::Ref<const Matrix>& x) {
    const auto traj = forward(params, spec, x);
    return softmax_rows(logits(params, traj.terminal()));
}

} // namespace mgresnet
