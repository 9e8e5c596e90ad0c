#pragma once

// Experiment driver: builds the hierarchy, trains with multilevel gradient
// descent (full batch) or multilevel SGD, and records metrics per V-cycle.

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "mgresnet/data.hpp"
#include "mgresnet/hierarchy.hpp"
#include "mgresnet/mgopt.hpp"

namespace mgresnet {

enum class DatasetKind { circles, mnist };

struct ExperimentConfig {
    DatasetKind dataset = DatasetKind::circles;
    int levels = 1;
    int blocks = 2048; // K on the finest level
    int width = 3;
    double learning_rate = 0.1;
    double beta = 1e-4; // finest-level Tikhonov weight
    std::string schedule; // empty: default_schedule(levels)
    Eigen::Index batch_size = 0; // 0: full batch
    std::uint64_t seed = 1;
    long max_vcycles = 2000;
    double target_accuracy = 1.0;
    double final_time = 1.0;
    int threads = 1;
    Accounting accounting = Accounting::paper;
    ParamRestriction param_restriction = ParamRestriction::average;
    bool record_wall_time = true;

    // circles
    std::size_t circles_train = 2000;
    std::size_t circles_test = 1000;

    // mnist
    MnistPaths mnist;
    Eigen::Index train_subset = 0; // 0: all training samples

    std::filesystem::path output;

    static ExperimentConfig circles_defaults() { return {}; }

    static ExperimentConfig mnist_defaults() {
        ExperimentConfig c;
        c.dataset = DatasetKind::mnist;
        c.width = 10;
        c.beta = 1e-5;
        c.learning_rate = 0.01;
        c.batch_size = 1000;
        c.target_accuracy = 0.93;
        return c;
    }

    VCycleSchedule resolved_schedule() const {
        return schedule.empty() ? default_schedule(levels) : parse_schedule(schedule);
    }

    /// Throws InvalidArgument on inconsistent settings.
    void validate() const {
        if (levels < 1)
            throw InvalidArgument("levels must be at least 1");
        if (blocks < 1 || levels > 30 || blocks % (1 << (levels - 1)) != 0)
            throw InvalidArgument("blocks=" + std::to_string(blocks) + " is not divisible by 2^(L-1) for L=" +
                                  std::to_string(levels));
        if (width < 1)
            throw InvalidArgument("width must be positive");
        if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
            throw InvalidArgument("learning rate must be positive");
        if (!(beta >= 0.0))
            throw InvalidArgument("beta must be nonnegative");
        if (!(target_accuracy > 0.0 && target_accuracy <= 1.0))
            throw InvalidArgument("target accuracy must lie in (0,1]");
        if (batch_size < 0)
            throw InvalidArgument("batch size must be nonnegative");
        if (max_vcycles < 0)
            throw InvalidArgument("max_vcycles must be nonnegative");
        if (threads < 1)
            throw InvalidArgument("threads must be at least 1");
        const VCycleSchedule s = resolved_schedule();
        if (s.levels() != levels)
            throw InvalidArgument("schedule " + s.to_string() + " has " + std::to_string(s.levels()) +
                                  " levels but levels=" + std::to_string(levels));
    }
};

struct TrainingRecord {
    long vcycle = 0;
    double train_loss = 0.0;
    double validation_accuracy = 0.0;
    double work_units = 0.0;
    double wall_time_s = 0.0;
};

struct RunResult {
    ParamVector params;
    std::vector<TrainingRecord> records;
    bool reached_target = false;
    double cycle_cost = 0.0; // U_c of the schedule
};

/// Fraction of rows whose most probable class equals the labelled class.
/// Ties go to the lowest class index.
inline double accuracy(const ParamVector& params, const LevelSpec& spec, const Dataset& data) {
    if (data.size() == 0)
        return 0.0;
    const Matrix prob = predict(params, spec, data.inputs);
    Eigen::Index hits = 0;
    for (Eigen::Index j = 0; j < prob.rows(); ++j) {
        Eigen::Index best = 0;
        for (Eigen::Index i = 1; i < prob.cols(); ++i)
            if (prob(j, i) > prob(j, best))
                best = i;
        if (best == data.label_of(j))
            ++hits;
    }
    return double(hits) / double(data.size());
}

inline constexpr const char* kCsvHeader = "v_cycle,train_loss,validation_accuracy,work_units,wall_time_s";

inline std::string to_csv_row(const TrainingRecord& r) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%ld,%.17g,%.17g,%.17g,%.6f", r.vcycle, r.train_loss, r.validation_accuracy,
                  r.work_units, r.wall_time_s);
    return buf;
}

inline void write_csv(std::ostream& out, const std::vector<TrainingRecord>& records) {
    out << kCsvHeader << '\n';
    for (const auto& r : records)
        out << to_csv_row(r) << '\n';
}

/// Loads or generates the train/test pair named by the config.
inline std::pair<Dataset, Dataset> load_datasets(const ExperimentConfig& cfg) {
    if (cfg.dataset == DatasetKind::circles)
        return gen_circles(cfg.circles_train, cfg.circles_test, cfg.seed);
    for (const auto* p : {&cfg.mnist.train_images, &cfg.mnist.train_labels, &cfg.mnist.test_images,
                          &cfg.mnist.test_labels})
        if (p->empty() || !std::filesystem::exists(*p))
            throw InvalidArgument("MNIST file missing: '" + p->string() + "'");
    return load_mnist_splits(cfg.mnist, cfg.train_subset);
}

/// Trains until the validation accuracy reaches the target or max_vcycles
/// V-cycles have run. One record is emitted before training and one after
/// every V-cycle; `sink` sees each record as soon as it exists.
///
/// Full-batch runs check the target after every V-cycle, mini-batch runs
/// after the last V-cycle of each epoch. Loss and accuracy evaluations are
/// not charged to the work ledger.
inline RunResult run(const ExperimentConfig& cfg, const Dataset& train, const Dataset& test,
                     const std::function<void(const TrainingRecord&)>& sink = {}) {
    cfg.validate();
    const VCycleSchedule schedule = cfg.resolved_schedule();
    const Hierarchy hierarchy = build_hierarchy(cfg.blocks, cfg.levels, cfg.width, train.input_dim(),
                                                train.class_count(), cfg.beta, cfg.final_time);
    const LevelSpec& finest = hierarchy.finest();
    if (test.input_dim() != train.input_dim() || test.class_count() != train.class_count())
        throw InvalidArgument("train and test sets differ in shape");

    OptimizerConfig opt;
    opt.learning_rate = cfg.learning_rate;
    opt.param_restriction = cfg.param_restriction;
    opt.accounting = cfg.accounting;
    const EvalOptions eval{cfg.threads};

    RunResult result;
    result.cycle_cost = vcycle_cost(schedule, cfg.levels);
    result.params = init_params(finest, cfg.seed);
    WorkLedger ledger(cfg.levels);
    const auto start = std::chrono::steady_clock::now();

    auto record = [&](long cycle, const ParamVector& theta) {
        TrainingRecord r;
        r.vcycle = cycle;
        r.train_loss = loss(theta, finest, train.view(), eval);
        r.validation_accuracy = accuracy(theta, finest, test);
        r.work_units = ledger.total();
        if (cfg.record_wall_time)
            r.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        result.records.push_back(r);
        if (sink)
            sink(r);
        return r;
    };

    record(0, result.params);
    if (cfg.max_vcycles == 0)
        return result;

    long cycle = 0;
    if (cfg.batch_size == 0 || cfg.batch_size >= train.size()) {
        const ResNetModel model{&hierarchy, train.view(), eval};
        while (cycle < cfg.max_vcycles) {
            result.params = mg_opt(model, std::move(result.params), schedule, opt, ledger);
            const TrainingRecord r = record(++cycle, result.params);
            if (r.validation_accuracy >= cfg.target_accuracy) {
                result.reached_target = true;
                break;
            }
        }
        return result;
    }

    for (std::uint64_t epoch = 0; cycle < cfg.max_vcycles; ++epoch) {
        EpochOptions eo;
        eo.batch_size = cfg.batch_size;
        eo.seed = cfg.seed;
        eo.epoch = epoch;
        eo.eval = eval;
        double last_accuracy = 0.0;
        result.params = ml_sgd_epoch(std::move(result.params), hierarchy, schedule, opt, train, eo, ledger, nullptr,
                                     [&](std::size_t, const ParamVector& theta) {
                                         last_accuracy = record(++cycle, theta).validation_accuracy;
                                         return cycle < cfg.max_vcycles;
                                     });
        if (last_accuracy >= cfg.target_accuracy) {
            result.reached_target = true;
            break;
        }
    }
    return result;
}

inline RunResult run(const ExperimentConfig& cfg, const std::function<void(const TrainingRecord&)>& sink = {}) {
    cfg.validate();
    const auto [train, test] = load_datasets(cfg);
    return run(cfg, train, test, sink);
}

} // namespace mgresnet
