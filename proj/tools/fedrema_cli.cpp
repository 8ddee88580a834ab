// Command-line front end: run, partition-report, compare.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "fedrema/harness.hpp"

namespace {

using namespace fedrema;

harness::ExperimentConfig load_or_default(const std::string& path) {
    return path.empty() ? harness::default_config() : harness::load_config(path);
}

void print_round(const server::RoundReport& r) {
    std::printf("round %4zu  mean_acc %.4f", r.round, r.mean_accuracy);
    if (r.delta_s_bar) std::printf("  delta_s_bar %.4f", *r.delta_s_bar);
    std::printf("  ccp %d  %.0f ms\n", r.ccp_active ? 1 : 0, r.wall_ms);
    std::fflush(stdout);
}

int cmd_run(const std::string& config_path, const harness::Overrides& overrides, bool quiet) {
    auto config = harness::apply_overrides(load_or_default(config_path), overrides);
    harness::RunOptions opts;
    if (!quiet) opts.on_round = print_round;
    const auto result = harness::run_experiment(config, opts);
    const auto& s = result.summary;
    std::printf("strategy %s  rounds %zu  best %.4f  final5 %.4f  ccp_rounds %zu  total %.1f s\n",
                std::string(server::to_string(config.strategy.kind)).c_str(), s.rounds, s.best_mean_accuracy,
                s.final_mean_accuracy, s.ccp_rounds, s.total_ms / 1000.0);
    std::printf("metrics written to %s\n", config.output_dir.c_str());
    return 0;
}

int cmd_partition_report(const std::string& config_path) {
    const auto config = load_or_default(config_path);
    const auto spec = harness::partition_spec(config);
    const auto labels = spec.resolved_dominant_labels();
    const auto clients = harness::build_clients(config);
    std::printf("clients %zu  classes %zu  samples/client %zu (train %zu, test %zu)  s %.3g\n", spec.num_clients,
                spec.num_classes, spec.samples_per_client, spec.train_size(), spec.test_size(), spec.iid_fraction);
    for (std::size_t k = 0; k < clients.size(); ++k) {
        const auto& c = clients[k];
        std::ostringstream dom;
        for (std::size_t j = 0; j < labels[c.group].size(); ++j) dom << (j ? "," : "") << labels[c.group][j];
        std::vector<std::size_t> test_hist(spec.num_classes, 0);
        for (int y : c.test.labels) ++test_hist[static_cast<std::size_t>(y)];
        std::printf("client %2zu  group %zu  dominant {%s}\n  train", k, c.group, dom.str().c_str());
        for (auto n : c.class_histogram) std::printf(" %4zu", n);
        std::printf("\n  test ");
        for (auto n : test_hist) std::printf(" %4zu", n);
        std::printf("\n");
    }
    return 0;
}

int cmd_compare(const std::vector<std::string>& paths, const harness::Overrides& overrides) {
    std::vector<harness::ExperimentConfig> configs;
    for (const auto& p : paths) configs.push_back(harness::load_config(p));
    // Every strategy sees the same partition: one seed for all runs.
    const std::uint64_t seed = overrides.seed.value_or(configs.front().seed);
    const std::string base_out = overrides.output_dir.value_or(configs.front().output_dir);

    std::printf("%-28s %-8s %8s %8s %5s %9s\n", "config", "strategy", "best", "final5", "ccp", "time_s");
    for (std::size_t i = 0; i < configs.size(); ++i) {
        harness::Overrides o = overrides;
        o.seed = seed;
        o.output_dir = (std::filesystem::path(base_out) / std::filesystem::path(paths[i]).stem()).string();
        const auto config = harness::apply_overrides(configs[i], o);
        const auto result = harness::run_experiment(config);
        const auto& s = result.summary;
        std::printf("%-28s %-8s %8.4f %8.4f %5zu %9.1f\n", std::filesystem::path(paths[i]).filename().c_str(),
                    std::string(server::to_string(config.strategy.kind)).c_str(), s.best_mean_accuracy,
                    s.final_mean_accuracy, s.ccp_rounds, s.total_ms / 1000.0);
        std::fflush(stdout);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Federated learning simulator with relevant-peer classifier matching"};
    app.require_subcommand(1);

    std::string config_path;
    std::uint64_t seed = 0;
    std::string strategy;
    std::size_t rounds = 0;
    std::size_t threads = 0;
    std::string out_dir;
    bool quiet = false;

    auto* run = app.add_subcommand("run", "run one experiment");
    run->add_option("--config", config_path, "config file (defaults apply when omitted)")->check(CLI::ExistingFile);
    auto* seed_opt = run->add_option("--seed", seed, "master seed");
    auto* strategy_opt = run->add_option("--strategy", strategy, "local | fedavg | fedper | fedrema");
    auto* rounds_opt = run->add_option("--rounds", rounds, "communication rounds");
    auto* out_opt = run->add_option("--out", out_dir, "output directory");
    auto* threads_opt = run->add_option("--threads", threads, "client training threads");
    run->add_flag("--quiet", quiet, "no per-round output");

    std::string report_config;
    auto* report = app.add_subcommand("partition-report", "print per-client class histograms");
    report->add_option("--config", report_config, "config file")->check(CLI::ExistingFile);

    std::vector<std::string> compare_paths;
    std::uint64_t compare_seed = 0;
    std::string compare_out;
    std::size_t compare_rounds = 0;
    auto* compare = app.add_subcommand("compare", "run several configs on one partition seed and tabulate");
    compare->add_option("--configs", compare_paths, "comma-separated config files")
        ->required()
        ->delimiter(',')
        ->check(CLI::ExistingFile);
    auto* compare_seed_opt = compare->add_option("--seed", compare_seed, "shared seed (default: first config's)");
    auto* compare_out_opt = compare->add_option("--out", compare_out, "base output directory");
    auto* compare_rounds_opt = compare->add_option("--rounds", compare_rounds, "communication rounds");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run) {
            harness::Overrides o;
            if (*seed_opt) o.seed = seed;
            if (*strategy_opt) o.strategy = strategy;
            if (*rounds_opt) o.rounds = rounds;
            if (*out_opt) o.output_dir = out_dir;
            if (*threads_opt) o.threads = threads;
            return cmd_run(config_path, o, quiet);
        }
        if (*report) return cmd_partition_report(report_config);
        if (*compare) {
            harness::Overrides o;
            if (*compare_seed_opt) o.seed = compare_seed;
            if (*compare_out_opt) o.output_dir = compare_out;
            if (*compare_rounds_opt) o.rounds = compare_rounds;
            return cmd_compare(compare_paths, o);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
