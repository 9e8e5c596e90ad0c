#pragma once

// MG/OPT V-cycles with gradient descent as the level optimizer, the
// multilevel mini-batch epoch driver, and work-unit bookkeeping.

#include <cctype>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mgresnet/data.hpp"
#include "mgresnet/hierarchy.hpp"
#include "mgresnet/objective.hpp"
#include "mgresnet/transfer.hpp"

namespace mgresnet {

// ---------------------------------------------------------------------------
// Schedule

/// Smoothing counts per level. The list notation is ordered finest to
/// coarsest: `n` means pre = post = n, `(n)` means pre = n and no post
/// smoothing, `{n}` is the step count on the coarsest level.
class VCycleSchedule {
public:
    struct Steps {
        int pre = 0;
        int post = 0;
    };

    VCycleSchedule() = default;

    /// `finest_to_coarse` lists levels L..2; `coarsest` is mu^1.
    VCycleSchedule(std::vector<Steps> finest_to_coarse, int coarsest) {
        if (coarsest < 1)
            throw InvalidArgument("coarsest-level step count must be at least 1");
        steps_.push_back({coarsest, 0});
        for (auto it = finest_to_coarse.rbegin(); it != finest_to_coarse.rend(); ++it) {
            if (it->pre < 0 || it->post < 0)
                throw InvalidArgument("smoothing counts must be nonnegative");
            steps_.push_back(*it);
        }
    }

    int levels() const { return int(steps_.size()); }
    int pre(int l) const { return at(l).pre; }
    int post(int l) const { return at(l).post; }
    int coarsest_steps() const { return steps_.front().pre; }

    std::string to_string() const {
        std::string s = "[";
        for (int l = levels(); l >= 2; --l) {
            const Steps& st = at(l);
            if (st.post == 0)
                s += "(" + std::to_string(st.pre) + ")";
            else if (st.pre == st.post)
                s += std::to_string(st.pre);
            else
                throw InvalidArgument("level " + std::to_string(l) + " has pre != post with post > 0; not expressible in list notation");
            s += ",";
        }
        return s + "{" + std::to_string(coarsest_steps()) + "}]";
    }

private:
    const Steps& at(int l) const {
        if (l < 1 || l > levels())
            throw InvalidArgument("schedule has no level " + std::to_string(l));
        return steps_[std::size_t(l - 1)];
    }

    std::vector<Steps> steps_; // index l-1
};

inline VCycleSchedule parse_schedule(const std::string& text) {
    std::size_t pos = 0;
    auto skip_ws = [&] {
        while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos])))
            ++pos;
    };
    auto expect = [&](char c) {
        skip_ws();
        if (pos >= text.size() || text[pos] != c)
            throw ParseError(std::string("expected '") + c + "'", pos);
        ++pos;
    };
    auto number = [&] {
        skip_ws();
        const std::size_t start = pos;
        long value = 0;
        while (pos < text.size() && std::isdigit(static_cast<unsigned char>(text[pos]))) {
            value = value * 10 + (text[pos] - '0');
            if (value > 1'000'000)
                throw ParseError("step count too large", start);
            ++pos;
        }
        if (pos == start)
            throw ParseError("expected a step count", pos);
        return int(value);
    };

    std::vector<VCycleSchedule::Steps> levels;
    std::optional<int> coarsest;
    expect('[');
    while (true) {
        skip_ws();
        if (pos >= text.size())
            throw ParseError("unterminated list", pos);
        const std::size_t entry_pos = pos;
        if (coarsest)
            throw ParseError("coarsest-level entry {n} must be last", entry_pos);
        if (text[pos] == '(') {
            ++pos;
            const int n = number();
            expect(')');
            levels.push_back({n, 0});
        } else if (text[pos] == '{') {
            ++pos;
            const int n = number();
            expect('}');
            if (n < 1)
                throw ParseError("coarsest-level step count must be at least 1", entry_pos);
            coarsest = n;
        } else {
            const int n = number();
            levels.push_back({n, n});
        }
        skip_ws();
        if (pos < text.size() && text[pos] == ',') {
            ++pos;
            continue;
        }
        if (pos < text.size() && text[pos] == ']') {
            ++pos;
            break;
        }
        throw ParseError("expected ',' or ']'", pos);
    }
    skip_ws();
    if (pos != text.size())
        throw ParseError("trailing characters", pos);
    if (!coarsest)
        throw ParseError("missing coarsest-level entry {n}", text.size());
    return VCycleSchedule(std::move(levels), *coarsest);
}

/// One step on the finer half of the levels, two on the coarser half, no
/// post-smoothing on the finest level and two coarsest steps:
/// L=4 gives [(1),1,2,{2}]. L=1 gives [{1}].
inline VCycleSchedule default_schedule(int levels) {
    if (levels < 1)
        throw InvalidArgument("number of levels must be at least 1");
    if (levels == 1)
        return VCycleSchedule({}, 1);
    std::vector<VCycleSchedule::Steps> steps;
    for (int l = levels; l >= 2; --l) {
        const int n = l > levels / 2 ? 1 : 2;
        steps.push_back({n, l == levels ? 0 : n});
    }
    return VCycleSchedule(std::move(steps), 2);
}

/// Cost of one V-cycle in finest-level gradient evaluations:
///   2^(1-L) mu^1 + sum_{l=2..L} (mu1^l + mu2^l + 1) 2^(l-L).
/// The +1 is the fine gradient needed for the coupling term.
inline double vcycle_cost(const VCycleSchedule& schedule, int levels) {
    if (schedule.levels() != levels)
        throw InvalidArgument("schedule has " + std::to_string(schedule.levels()) + " levels, expected " +
                              std::to_string(levels));
    double u = std::ldexp(double(schedule.coarsest_steps()), 1 - levels);
    for (int l = 2; l <= levels; ++l)
        u += std::ldexp(double(schedule.pre(l) + schedule.post(l) + 1), l - levels);
    return u;
}

inline double vcycle_cost(const VCycleSchedule& schedule) { return vcycle_cost(schedule, schedule.levels()); }

// ---------------------------------------------------------------------------
// Configuration and bookkeeping

enum class Accounting {
    /// The coarse gradient evaluated for the coupling term is reused as the
    /// first gradient on that level, so measured cost equals vcycle_cost().
    paper,
    /// Every gradient the level optimizers ask for is evaluated afresh.
    /// Iterates are identical; each level transition costs one extra
    /// coarse gradient.
    measured,
};

struct OptimizerConfig {
    double learning_rate = 0.1;
    /// Optional per-level rates, index l-1. Empty means learning_rate
    /// everywhere. A zero entry freezes that level.
    std::vector<double> level_rates;
    ParamRestriction param_restriction = ParamRestriction::average;
    Accounting accounting = Accounting::paper;

    double rate(int level) const {
        if (level_rates.empty()) {
            if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
                throw InvalidArgument("learning rate must be finite and positive");
            return learning_rate;
        }
        if (level < 1 || std::size_t(level) > level_rates.size())
            throw InvalidArgument("no learning rate for level " + std::to_string(level));
        const double a = level_rates[std::size_t(level - 1)];
        if (!(a >= 0.0) || !std::isfinite(a))
            throw InvalidArgument("level learning rate must be finite and nonnegative");
        return a;
    }
};

/// Running work-unit total. A gradient evaluation on level l adds 2^(l-L).
class WorkLedger {
public:
    explicit WorkLedger(int levels = 1) : levels_(levels), evaluations_(std::size_t(levels), 0) {}

    void charge(int level) {
        const double u = std::ldexp(1.0, level - levels_);
        total_ += u;
        cycle_ += u;
        ++evaluations_.at(std::size_t(level - 1));
    }

    void begin_cycle() { cycle_ = 0.0; }

    int levels() const { return levels_; }
    double total() const { return total_; }
    double cycle() const { return cycle_; }
    long evaluations(int level) const { return evaluations_.at(std::size_t(level - 1)); }

private:
    int levels_;
    double total_ = 0.0;
    double cycle_ = 0.0;
    std::vector<long> evaluations_;
};

// ---------------------------------------------------------------------------
// Level optimizer

namespace detail {

template <LevelLoss Objective>
LossGradient checked_gradient(const Objective& obj, const ParamVector& theta, int level, int iteration) {
    try {
        LossGradient g = obj.value_and_gradient(theta);
        if (!g.grad.all_finite() || !std::isfinite(g.loss))
            throw NumericError("non-finite gradient on level " + std::to_string(level) + " at iteration " +
                                   std::to_string(iteration),
                               -1, level, iteration);
        return g;
    } catch (const NumericError& e) {
        if (e.level() >= 0)
            throw;
        throw NumericError(std::string(e.what()) + " (level " + std::to_string(level) + ", iteration " +
                               std::to_string(iteration) + ")",
                           e.layer(), level, iteration);
    }
}

} // namespace detail

/// `max_it` gradient-descent steps theta <- theta - alpha grad H(theta).
/// `first_gradient`, when given, must be grad H(theta0); it replaces the
/// first evaluation.
template <LevelLoss Objective>
ParamVector level_optimizer(const Objective& obj, ParamVector theta, int max_it, const OptimizerConfig& cfg,
                            int level = 1, WorkLedger* ledger = nullptr, const ParamVector* first_gradient = nullptr) {
    if (max_it < 0)
        throw InvalidArgument("max_it must be nonnegative");
    const double alpha = cfg.rate(level);
    for (int i = 1; i <= max_it; ++i) {
        if (i == 1 && first_gradient != nullptr) {
            theta.axpy(-alpha, *first_gradient);
            continue;
        }
        const LossGradient g = detail::checked_gradient(obj, theta, level, i);
        if (ledger)
            ledger->charge(level);
        theta.axpy(-alpha, g.grad);
    }
    return theta;
}

// ---------------------------------------------------------------------------
// Coupling term

struct CouplingTerm {
    ParamVector delta_g;
    /// grad H^l at the coarse initial point, i.e. grad L^l + delta_g.
    ParamVector coarse_gradient;
    ParamVector restricted_fine_gradient;
    /// |coarse_gradient - restricted_fine_gradient|_inf
    double coherence_defect = 0.0;
};

/// delta_g = R grad H^{l+1}(fine) - grad L^l(coarse_init), given the fine
/// gradient. Charges the coarse evaluation.
template <LevelLoss CoarseLoss>
CouplingTerm make_delta_g(const ParamVector& fine_gradient, const CoarseLoss& coarse_loss,
                          const ParamVector& coarse_init, int coarse_level, WorkLedger* ledger = nullptr) {
    CouplingTerm out;
    out.restricted_fine_gradient = restrict_gradient(fine_gradient);
    ParamVector coarse_loss_gradient = detail::checked_gradient(coarse_loss, coarse_init, coarse_level, 0).grad;
    if (ledger)
        ledger->charge(coarse_level);
    out.delta_g = out.restricted_fine_gradient - coarse_loss_gradient;
    // Same expression CoupledObjective uses, so reusing it is bitwise exact.
    out.coarse_gradient = std::move(coarse_loss_gradient);
    out.coarse_gradient += out.delta_g;
    out.coherence_defect = (out.coarse_gradient - out.restricted_fine_gradient).inf_norm();
    return out;
}

/// Variant that evaluates grad H^{l+1} at `fine_params` first.
template <LevelLoss FineObjective, LevelLoss CoarseLoss>
CouplingTerm make_delta_g(const FineObjective& fine_obj, const ParamVector& fine_params, const CoarseLoss& coarse_loss,
                          const ParamVector& coarse_init, int fine_level, WorkLedger* ledger = nullptr) {
    const ParamVector g = detail::checked_gradient(fine_obj, fine_params, fine_level, 0).grad;
    if (ledger)
        ledger->charge(fine_level);
    return make_delta_g(g, coarse_loss, coarse_init, fine_level - 1, ledger);
}

// ---------------------------------------------------------------------------
// V-cycle

/// A family of level losses L^1 .. L^L on nested time grids.
template <class M>
concept MultilevelModel = requires(const M& m, int l) {
    { m.levels() } -> std::convertible_to<int>;
    { m.level_loss(l) } -> LevelLoss;
};

/// The ResNet hierarchy bound to one batch; every level sees the same data.
struct ResNetModel {
    const Hierarchy* hierarchy;
    BatchRef batch;
    EvalOptions opts{};

    int levels() const { return hierarchy->size(); }
    ResNetLoss level_loss(int l) const { return ResNetLoss{hierarchy->level(l), batch, opts}; }
};

/// Diagnostics collected while cycling.
struct VCycleTrace {
    double max_coherence_defect = 0.0;
    long transitions = 0;
    /// Called after the coarse solve with grad H^l at theta^{l,mu1} and the
    /// prolongated correction e^l.
    std::function<void(int level, const ParamVector& fine_gradient, const ParamVector& correction)> on_correction;
    /// Called once delta_g for level-1 exists, before any coarse step.
    std::function<void(int coarse_level, const ParamVector& coarse_init, const CouplingTerm& coupling)> on_coupling;
};

namespace detail {

template <MultilevelModel Model, LevelLoss Objective>
ParamVector vcycle_step(const Model& model, const Objective& obj, int level, ParamVector theta,
                        const VCycleSchedule& schedule, const OptimizerConfig& cfg, WorkLedger& ledger,
                        VCycleTrace* trace, const ParamVector* initial_gradient);

} // namespace detail

/// One V-cycle started on `level`. `delta_g` is null on the finest level.
/// `initial_gradient`, if given, is grad H^level(theta) and saves one
/// evaluation.
template <MultilevelModel Model>
ParamVector vcycle(const Model& model, int level, ParamVector theta, const ParamVector* delta_g,
                   const VCycleSchedule& schedule, const OptimizerConfig& cfg, WorkLedger& ledger,
                   VCycleTrace* trace = nullptr, const ParamVector* initial_gradient = nullptr) {
    if (level < 1 || level > model.levels())
        throw InvalidArgument("V-cycle level " + std::to_string(level) + " out of range");
    if (schedule.levels() != model.levels())
        throw InvalidArgument("schedule has " + std::to_string(schedule.levels()) + " levels, hierarchy has " +
                              std::to_string(model.levels()));
    using Loss = decltype(model.level_loss(level));
    if (delta_g == nullptr) {
        const CoupledObjective<Loss> obj(model.level_loss(level), theta.shape());
        return detail::vcycle_step(model, obj, level, std::move(theta), schedule, cfg, ledger, trace, initial_gradient);
    }
    const CoupledObjective<Loss> obj(model.level_loss(level), *delta_g);
    return detail::vcycle_step(model, obj, level, std::move(theta), schedule, cfg, ledger, trace, initial_gradient);
}

namespace detail {

template <MultilevelModel Model, LevelLoss Objective>
ParamVector vcycle_step(const Model& model, const Objective& obj, int level, ParamVector theta,
                        const VCycleSchedule& schedule, const OptimizerConfig& cfg, WorkLedger& ledger,
                        VCycleTrace* trace, const ParamVector* initial_gradient) {
    if (level == 1)
        return level_optimizer(obj, std::move(theta), schedule.coarsest_steps(), cfg, 1, &ledger, initial_gradient);

    // 1. Downward phase
    const int pre = schedule.pre(level);
    theta = level_optimizer(obj, std::move(theta), pre, cfg, level, &ledger, initial_gradient);

    ParamVector fine_gradient;
    if (pre == 0 && initial_gradient != nullptr) {
        fine_gradient = *initial_gradient;
    } else {
        fine_gradient = checked_gradient(obj, theta, level, pre).grad;
        ledger.charge(level);
    }

    const ParamVector coarse_init = restrict_params(theta, cfg.param_restriction);
    CouplingTerm coupling = make_delta_g(fine_gradient, model.level_loss(level - 1), coarse_init, level - 1, &ledger);
    if (trace) {
        trace->max_coherence_defect = std::max(trace->max_coherence_defect, coupling.coherence_defect);
        ++trace->transitions;
        if (trace->on_coupling)
            trace->on_coupling(level - 1, coarse_init, coupling);
    }

    // 2. Recursion, or the coarsest-level solve when level == 2
    const ParamVector* reuse = cfg.accounting == Accounting::paper ? &coupling.coarse_gradient : nullptr;
    const ParamVector coarse_out =
        vcycle(model, level - 1, coarse_init, &coupling.delta_g, schedule, cfg, ledger, trace, reuse);

    // 3. Upward phase
    const ParamVector correction = prolong(coarse_out - coarse_init);
    if (trace && trace->on_correction)
        trace->on_correction(level, fine_gradient, correction);
    theta += correction;
    return level_optimizer(obj, std::move(theta), schedule.post(level), cfg, level, &ledger);
}

} // namespace detail

/// A full V-cycle from the finest level (delta_g^L = 0).
template <MultilevelModel Model>
ParamVector mg_opt(const Model& model, ParamVector theta, const VCycleSchedule& schedule, const OptimizerConfig& cfg,
                   WorkLedger& ledger, VCycleTrace* trace = nullptr) {
    ledger.begin_cycle();
    return vcycle(model, model.levels(), std::move(theta), nullptr, schedule, cfg, ledger, trace);
}

// ---------------------------------------------------------------------------
// Multilevel SGD

struct EpochOptions {
    Eigen::Index batch_size = 1000;
    std::uint64_t seed = 0;
    std::uint64_t epoch = 0;
    EvalOptions eval{};
};

/// One epoch of multilevel mini-batch gradient descent: a full V-cycle per
/// mini-batch, each starting from the previous result. `after_batch` sees
/// the batch index and the parameters after its V-cycle; returning false
/// ends the epoch early.
inline ParamVector ml_sgd_epoch(ParamVector theta, const Hierarchy& hierarchy, const VCycleSchedule& schedule,
                                const OptimizerConfig& cfg, const Dataset& train, const EpochOptions& opts,
                                WorkLedger& ledger, VCycleTrace* trace = nullptr,
                                const std::function<bool(std::size_t, const ParamVector&)>& after_batch = {}) {
    const auto parts = batches(train, opts.batch_size, opts.seed, opts.epoch);
    for (std::size_t b = 0; b < parts->size(); ++b) {
        const ResNetModel model{&hierarchy, (*parts)[b], opts.eval};
        theta = mg_opt(model, std::move(theta), schedule, cfg, ledger, trace);
        if (after_batch && !after_batch(b, theta))
            break;
    }
    return theta;
}

} // namespace mgresnet
