#pragma once

// Discrete training objective of one level:
//
//   L(theta) = (1/p) sum_j CE(softmax(W_K y_{j,K} + b_K), c_j)
//            + beta^l sum_k (|W_k|^2 + |b_k|^2)
//            + beta^L (|W_K|^2 + |b_K|^2 + |Q|^2)
//
// and the coupled objective H(theta) = L(theta) + <dg, theta>. Gradients are
// the exact gradients of the discrete objective (discretize, then optimize).

#include <algorithm>
#include <concepts>
#include <exception>
#include <cmath>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "mgresnet/net.hpp"

namespace mgresnet {

/// Non-owning view of a batch: inputs (p x q) and one-hot labels (p x m).
struct BatchRef {
    Eigen::Ref<const Matrix> inputs;
    Eigen::Ref<const Matrix> labels;

    BatchRef(const Eigen::Ref<const Matrix>& x, const Eigen::Ref<const Matrix>& c) : inputs(x), labels(c) {}

    Eigen::Index size() const { return inputs.rows(); }
};

struct EvalOptions {
    /// Worker threads for the per-chunk forward/adjoint passes. The chunking
    /// and reduction order do not depend on this, so results are bitwise
    /// identical for every thread count.
    int threads = 1;
};

struct LossGradient {
    double loss = 0.0;
    ParamVector grad;
};

namespace detail {

/// Samples per reduction chunk. Fixed so the summation order never depends
/// on the thread count.
inline constexpr Eigen::Index kReductionChunk = 256;

inline void check_batch(const LevelSpec& spec, const BatchRef& batch) {
    if (batch.inputs.rows() != batch.labels.rows())
        throw InvalidArgument("inputs and labels have different row counts");
    if (batch.inputs.rows() == 0)
        throw InvalidArgument("empty batch");
    if (batch.inputs.cols() != spec.input_dim)
        throw InvalidArgument("input has " + std::to_string(batch.inputs.cols()) + " features, expected " +
                              std::to_string(spec.input_dim));
    if (batch.labels.cols() != spec.class_count)
        throw InvalidArgument("labels have " + std::to_string(batch.labels.cols()) + " classes, expected " +
                              std::to_string(spec.class_count));
    for (Eigen::Index j = 0; j < batch.labels.rows(); ++j) {
        int ones = 0;
        for (Eigen::Index i = 0; i < batch.labels.cols(); ++i) {
            const double c = batch.labels(j, i);
            if (c == 1.0)
                ++ones;
            else if (c != 0.0)
                throw InvalidArgument("label row " + std::to_string(j) + " is not one-hot");
        }
        if (ones != 1)
            throw InvalidArgument("label row " + std::to_string(j) + " is not one-hot");
    }
}

inline double regularizer(const ParamVector& params, const LevelSpec& spec) {
    double layers = 0.0;
    for (int k = 0; k < spec.layer_count; ++k)
        layers += params.layer(k).squaredNorm();
    const double fixed = params.classifier_weight().squaredNorm() + params.classifier_bias().squaredNorm() +
                         params.input_map().squaredNorm();
    return spec.reg_weight * layers + spec.finest_reg_weight * fixed;
}

inline void add_regularizer_gradient(const ParamVector& params, const LevelSpec& spec, ParamVector& grad) {
    for (int k = 0; k < spec.layer_count; ++k)
        grad.layer(k) += (2.0 * spec.reg_weight) * params.layer(k);
    grad.classifier_weight() += (2.0 * spec.finest_reg_weight) * params.classifier_weight();
    grad.classifier_bias() += (2.0 * spec.finest_reg_weight) * params.classifier_bias();
    grad.input_map() += (2.0 * spec.finest_reg_weight) * params.input_map();
}

/// Cross-entropy of each row of `scores` against one-hot `labels`, summed.
inline double cross_entropy_sum(const Eigen::Ref<const Matrix>& scores, const Eigen::Ref<const Matrix>& labels) {
    double total = 0.0;
    for (Eigen::Index j = 0; j < scores.rows(); ++j) {
        const double shift = scores.row(j).maxCoeff();
        const double lse = shift + std::log((scores.row(j).array() - shift).exp().sum());
        total += -(labels.row(j).array() * (scores.row(j).array() - lse)).sum();
    }
    return total;
}

/// Data-fit term of one chunk, scaled by `inv_p`; accumulates its gradient
/// into `grad` when non-null.
inline double chunk_data_term(const ParamVector& params, const LevelSpec& spec, const Eigen::Ref<const Matrix>& x,
                              const Eigen::Ref<const Matrix>& labels, double inv_p, ParamVector* grad) {
    check_conforms(params, spec);
    const Eigen::Index rows = x.rows();
    const int v = spec.width;
    const std::size_t block = std::size_t(rows) * std::size_t(v);

    // y_0 .. y_K stored back to back; reused across calls on this thread.
    thread_local std::vector<double> states;
    states.resize(block * std::size_t(spec.layer_count + 1));
    auto state = [&](int k) { return MatrixMap(states.data() + block * std::size_t(k), rows, v); };
    auto const_state = [&](int k) { return ConstMatrixMap(states.data() + block * std::size_t(k), rows, v); };

    state(0).noalias() = x * params.input_map().transpose();
    if (!state(0).allFinite())
        throw NumericError("non-finite value in input map", 0);
    for (int k = 0; k < spec.layer_count; ++k) {
        euler_step(params.weight(k).data(), params.bias(k).data(), spec.time_step, states.data() + block * std::size_t(k),
                   states.data() + block * std::size_t(k + 1), rows, v);
        if (!state(k + 1).allFinite())
            throw NumericError("non-finite state after residual layer " + std::to_string(k), k);
    }
    const auto terminal = const_state(spec.layer_count);
    const Matrix scores = logits(params, terminal);
    const double value = inv_p * cross_entropy_sum(scores, labels);
    if (grad == nullptr)
        return value;

    const Matrix d_scores = inv_p * (softmax_rows(scores) - labels);
    grad->classifier_weight().noalias() += d_scores.transpose() * terminal;
    grad->classifier_bias() += d_scores.colwise().sum().transpose();

    Matrix adjoint = d_scores * params.classifier_weight();
    const double dt = spec.time_step;
    const std::size_t sv = std::size_t(v);
    std::vector<double> z(sv), masked(sv), dw(sv * sv), db(sv);
    for (int k = spec.layer_count - 1; k >= 0; --k) {
        const double* w = params.weight(k).data();
        const double* b = params.bias(k).data();
        const double* y = states.data() + block * std::size_t(k);
        std::fill(dw.begin(), dw.end(), 0.0);
        std::fill(db.begin(), db.end(), 0.0);
        for (Eigen::Index j = 0; j < x.rows(); ++j) {
            const double* yj = y + j * v;
            double* lam = adjoint.data() + j * v;
            preactivation(w, b, yj, z.data(), v);
            for (int i = 0; i < v; ++i)
                masked[i] = z[i] > 0.0 ? lam[i] : 0.0; // relu'(0) = 0
            for (int i = 0; i < v; ++i) {
                const double m = masked[i];
                if (m == 0.0)
                    continue;
                db[i] += m;
                double* dwi = dw.data() + i * v;
                const double* wi = w + std::size_t(i) * v;
                for (int l = 0; l < v; ++l) {
                    dwi[l] += m * yj[l];
                    lam[l] += dt * m * wi[l];
                }
            }
        }
        grad->weight(k) += dt * ConstMatrixMap(dw.data(), v, v);
        grad->bias(k) += dt * ConstVectorMap(db.data(), v);
    }
    grad->input_map().noalias() += adjoint.transpose() * x;
    return value;
}

/// Evaluates the data term over fixed-size chunks, possibly on several
/// threads, and reduces the chunk results in chunk order.
inline double data_term(const ParamVector& params, const LevelSpec& spec, const BatchRef& batch,
                        const EvalOptions& opts, ParamVector* grad) {
    const Eigen::Index p = batch.size();
    const double inv_p = 1.0 / double(p);
    const Eigen::Index chunks = (p + kReductionChunk - 1) / kReductionChunk;

    auto run_chunk = [&](Eigen::Index c, ParamVector* g) {
        const Eigen::Index begin = c * kReductionChunk;
        const Eigen::Index rows = std::min(kReductionChunk, p - begin);
        return chunk_data_term(params, spec, batch.inputs.middleRows(begin, rows),
                               batch.labels.middleRows(begin, rows), inv_p, g);
    };

    if (chunks == 1)
        return run_chunk(0, grad);

    std::vector<double> values(std::size_t(chunks), 0.0);
    std::vector<ParamVector> grads;
    if (grad != nullptr)
        grads.assign(std::size_t(chunks), ParamVector::zeros(params.shape()));

    const int workers = std::max(1, std::min<int>(opts.threads, int(chunks)));
    auto work = [&](int w) {
        for (Eigen::Index c = w; c < chunks; c += workers)
            values[std::size_t(c)] = run_chunk(c, grad ? &grads[std::size_t(c)] : nullptr);
    };
    if (workers == 1) {
        work(0);
    } else {
        std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
        std::vector<std::thread> pool;
        pool.reserve(std::size_t(workers));
        for (int w = 0; w < workers; ++w)
            pool.emplace_back([&, w] {
                try {
                    work(w);
                } catch (...) {
                    errors[std::size_t(w)] = std::current_exception();
                }
            });
        for (auto& t : pool)
            t.join();
        for (auto& e : errors)
            if (e)
                std::rethrow_exception(e);
    }

    double total = 0.0;
    for (Eigen::Index c = 0; c < chunks; ++c) {
        total += values[std::size_t(c)];
        if (grad != nullptr)
            *grad += grads[std::size_t(c)];
    }
    return total;
}

} // namespace detail

/// Mean cross-entropy plus Tikhonov terms.
inline double loss(const ParamVector& params, const LevelSpec& spec, const BatchRef& batch,
                   const EvalOptions& opts = {}) {
    check_conforms(params, spec);
    detail::check_batch(spec, batch);
    return detail::data_term(params, spec, batch, opts, nullptr) + detail::regularizer(params, spec);
}

/// Loss and its exact gradient via the adjoint recursion
///   lambda_k = lambda_{k+1} + dt (dF/dy_k)^T lambda_{k+1}.
inline LossGradient gradient(const ParamVector& params, const LevelSpec& spec, const BatchRef& batch,
                             const EvalOptions& opts = {}) {
    check_conforms(params, spec);
    detail::check_batch(spec, batch);
    LossGradient out{0.0, ParamVector::zeros(params.shape())};
    out.loss = detail::data_term(params, spec, batch, opts, &out.grad) + detail::regularizer(params, spec);
    detail::add_regularizer_gradient(params, spec, out.grad);
    return out;
}

/// The ResNet loss of one level bound to a batch.
struct ResNetLoss {
    LevelSpec spec;
    BatchRef batch;
    EvalOptions opts{};

    double value(const ParamVector& params) const { return loss(params, spec, batch, opts); }
    LossGradient value_and_gradient(const ParamVector& params) const { return gradient(params, spec, batch, opts); }
};

/// A loss with value and gradient; the level objectives of the V-cycle are
/// built from these.
template <class T>
concept LevelLoss = requires(const T& f, const ParamVector& theta) {
    { f.value(theta) } -> std::convertible_to<double>;
    { f.value_and_gradient(theta) } -> std::same_as<LossGradient>;
};

/// H(theta) = L(theta) + <delta_g, theta>. On the finest level delta_g is zero
/// and H coincides with L.
template <LevelLoss Loss>
class CoupledObjective {
public:
    /// Finest-level objective (delta_g = 0).
    explicit CoupledObjective(Loss loss, ParamShape shape)
        : loss_(std::move(loss)), delta_g_(ParamVector::zeros(shape)), finest_(true) {}

    CoupledObjective(Loss loss, ParamVector delta_g)
        : loss_(std::move(loss)), delta_g_(std::move(delta_g)), finest_(false) {}

    const Loss& base() const { return loss_; }
    const ParamVector& delta_g() const { return delta_g_; }
    bool finest() const { return finest_; }

    double value(const ParamVector& params) const {
        const double l = loss_.value(params);
        return finest_ ? l : l + delta_g_.dot(params);
    }

    LossGradient value_and_gradient(const ParamVector& params) const {
        LossGradient out = loss_.value_and_gradient(params);
        if (!finest_) {
            out.loss += delta_g_.dot(params);
            out.grad += delta_g_;
        }
        return out;
    }

private:
    Loss loss_;
    ParamVector delta_g_;
    bool finest_;
};

inline CoupledObjective<ResNetLoss> make_finest_objective(const LevelSpec& spec, const BatchRef& batch,
                                                          const EvalOptions& opts = {}) {
    return CoupledObjective<ResNetLoss>(ResNetLoss{spec, batch, opts}, spec.shape());
}

inline CoupledObjective<ResNetLoss> make_coupled_objective(const LevelSpec& spec, const BatchRef& batch,
                                                           ParamVector delta_g, const EvalOptions& opts = {}) {
    if (!(delta_g.shape() == spec.shape()))
        throw InvalidArgument("delta_g does not conform to level " + std::to_string(spec.level));
    return CoupledObjective<ResNetLoss>(ResNetLoss{spec, batch, opts}, std::move(delta_g));
}

template <LevelLoss Loss>
double coupled_eval(const CoupledObjective<Loss>& obj, const ParamVector& params) {
    return obj.value(params);
}

template <LevelLoss Loss>
LossGradient coupled_gradient(const CoupledObjective<Loss>& obj, const ParamVector& params) {
    return obj.value_and_gradient(params);
}

} // namespace mgresnet
