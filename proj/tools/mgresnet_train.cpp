// Command-line driver for multilevel ResNet training experiments.
//
//   mgresnet_train --dataset circles --levels 4 --blocks 256 --out run.csv
//   mgresnet_train --config run.cfg --seed 3
//
// A config file holds the same keys as the long flags, one key=value per
// line; flags given on the command line win.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "mgresnet/mgresnet.hpp"

namespace {

using namespace mgresnet;

template <class T>
void override_with(const std::optional<T>& flag, T& target) {
    if (flag)
        target = *flag;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Train a deep ResNet with multilevel (MG/OPT) gradient descent"};
    app.set_config("--config", "", "Flat key=value configuration file");

    std::string dataset = "circles";
    std::optional<int> levels, blocks, width, threads;
    std::optional<double> lr, beta, target, final_time;
    std::optional<long> batch_size, max_vcycles, train_subset, n_train, n_test;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> schedule;
    std::string accounting = "paper", restriction = "average";
    std::string out_path;
    MnistPaths mnist;
    bool no_wall_time = false;

    app.add_option("--dataset", dataset, "circles or mnist")->check(CLI::IsMember({"circles", "mnist"}));
    app.add_option("--levels", levels, "Number of levels L");
    app.add_option("--blocks", blocks, "Residual blocks on the finest level");
    app.add_option("--width", width, "Network width");
    app.add_option("--schedule", schedule, "Smoothing schedule, e.g. [(1),1,2,{2}]");
    app.add_option("--lr", lr, "Learning rate");
    app.add_option("--beta", beta, "Finest-level Tikhonov weight");
    app.add_option("--batch-size", batch_size, "Mini-batch size, 0 for full batch");
    app.add_option("--seed", seed, "Random seed for data, initialization and shuffling");
    app.add_option("--max-vcycles", max_vcycles, "Upper bound on V-cycles");
    app.add_option("--target-acc", target, "Stop once validation accuracy reaches this value");
    app.add_option("--final-time", final_time, "Final time T of the control problem");
    app.add_option("--mnist-train-images", mnist.train_images, "IDX training images");
    app.add_option("--mnist-train-labels", mnist.train_labels, "IDX training labels");
    app.add_option("--mnist-test-images", mnist.test_images, "IDX test images");
    app.add_option("--mnist-test-labels", mnist.test_labels, "IDX test labels");
    app.add_option("--train-subset", train_subset, "Keep only the first N MNIST training samples");
    app.add_option("--n-train", n_train, "Circles training samples");
    app.add_option("--n-test", n_test, "Circles test samples");
    app.add_option("--out", out_path, "CSV output path (stdout if empty)");
    app.add_option("--threads", threads, "Threads for gradient evaluation (results do not depend on it)");
    app.add_option("--accounting", accounting, "Work-unit accounting")->check(CLI::IsMember({"paper", "measured"}));
    app.add_option("--param-restriction", restriction, "Parameter restriction")
        ->check(CLI::IsMember({"average", "transpose"}));
    app.add_flag("--no-wall-time", no_wall_time, "Write 0 for wall time so reruns produce identical CSV");

    CLI11_PARSE(app, argc, argv);

    ExperimentConfig cfg =
        dataset == "mnist" ? ExperimentConfig::mnist_defaults() : ExperimentConfig::circles_defaults();
    override_with(levels, cfg.levels);
    override_with(blocks, cfg.blocks);
    override_with(width, cfg.width);
    override_with(threads, cfg.threads);
    override_with(lr, cfg.learning_rate);
    override_with(beta, cfg.beta);
    override_with(target, cfg.target_accuracy);
    override_with(final_time, cfg.final_time);
    override_with(seed, cfg.seed);
    override_with(schedule, cfg.schedule);
    if (batch_size)
        cfg.batch_size = *batch_size;
    if (max_vcycles)
        cfg.max_vcycles = *max_vcycles;
    if (train_subset)
        cfg.train_subset = *train_subset;
    if (n_train)
        cfg.circles_train = std::size_t(*n_train);
    if (n_test)
        cfg.circles_test = std::size_t(*n_test);
    cfg.mnist = mnist;
    cfg.accounting = accounting == "measured" ? Accounting::measured : Accounting::paper;
    cfg.param_restriction = restriction == "transpose" ? ParamRestriction::transpose : ParamRestriction::average;
    cfg.record_wall_time = !no_wall_time;
    cfg.output = out_path;

    std::pair<Dataset, Dataset> data;
    try {
        cfg.validate();
        data = load_datasets(cfg);
    } catch (const Error& e) {
        std::cerr << "configuration error: " << e.what() << '\n';
        return 2;
    }

    std::ofstream file;
    if (!out_path.empty()) {
        file.open(out_path);
        if (!file) {
            std::cerr << "cannot open " << out_path << " for writing\n";
            return 2;
        }
    }
    std::ostream& out = out_path.empty() ? std::cout : file;
    out << kCsvHeader << '\n';

    try {
        const RunResult result = run(cfg, data.first, data.second, [&](const TrainingRecord& r) {
            out << to_csv_row(r) << '\n';
            out.flush();
        });
        const TrainingRecord& last = result.records.back();
        std::cerr << "schedule " << cfg.resolved_schedule().to_string() << ", U_c = " << result.cycle_cost << '\n'
                  << (result.reached_target ? "reached" : "did not reach") << " target " << cfg.target_accuracy
                  << " after " << last.vcycle << " V-cycles, " << last.work_units << " work units, accuracy "
                  << last.validation_accuracy << '\n';
        return 0;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << '\n';
        return 3;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
