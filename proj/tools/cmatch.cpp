// Experiment runner for Centroids Matching and the baselines.
//
//   cmatch run --config exp.json --strategy naive --seeds 0,1,2 --out results/naive
//   cmatch sweep --config exp.json --axis lambda --values 0.01,0.1,1,10,100
//   cmatch export-embeddings --config exp.json --seed 0 --out embeddings.csv

#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "cmatch/harness.hpp"

namespace {

struct CommonOptions {
    std::string config;
    std::string strategy;
    std::string mode;
    std::string merging;
    double lambda = 0.0;
    std::size_t support_size = 0;
    std::size_t memory = 0;
    std::vector<std::uint64_t> seeds;
    std::string out;
};

void add_common(CLI::App* app, CommonOptions& o) {
    app->add_option("--config", o.config, "JSON experiment config (defaults apply when omitted)");
    app->add_option("--strategy", o.strategy, "cm | naive | cumulative | er");
    app->add_option("--mode", o.mode, "til | cil");
    app->add_option("--lambda", o.lambda, "Regularization weight");
    app->add_option("--support-size", o.support_size, "Support samples per task");
    app->add_option("--memory", o.memory, "Replay memory capacity (samples)");
    app->add_option("--merging", o.merging, "scale_translate | linear | offset | none");
    app->add_option("--seeds", o.seeds, "Comma-separated seeds")->delimiter(',');
}

cmatch::ExperimentConfig resolve(CLI::App* app, const CommonOptions& o) {
    cmatch::ExperimentConfig config = o.config.empty() ? cmatch::ExperimentConfig{} : cmatch::load_config(o.config);
    cmatch::ConfigOverrides ov;
    if (app->count("--strategy")) ov.strategy = o.strategy;
    if (app->count("--mode")) ov.mode = o.mode;
    if (app->count("--merging")) ov.merging = o.merging;
    if (app->count("--lambda")) ov.lambda = o.lambda;
    if (app->count("--support-size")) ov.support_size = o.support_size;
    if (app->count("--memory")) ov.memory = o.memory;
    if (app->count("--seeds")) ov.seeds = o.seeds;
    if (!o.out.empty()) ov.output = o.out;
    cmatch::apply_overrides(config, ov);
    return config;
}

void report(const cmatch::ExperimentResult& result, const std::string& label) {
    for (const auto& s : result.seeds) {
        if (s.ok) {
            std::cout << label << "seed " << s.seed << ": accuracy " << s.accuracy << ", bwt " << s.bwt
                      << (s.bwt_defined ? "" : " (undefined)") << '\n';
        } else {
            std::cerr << label << "seed " << s.seed << " aborted: " << s.error << '\n';
        }
    }
    const auto acc = result.accuracy();
    const auto b = result.bwt();
    std::cout << label << "accuracy " << acc.mean << " +- " << acc.stddev << ", bwt " << b.mean << " +- " << b.stddev
              << " over " << acc.count << " seed(s)\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Centroids Matching continual-learning experiments"};
    app.require_subcommand(1);

    CommonOptions run_opts;
    auto* run = app.add_subcommand("run", "Train and evaluate one configuration over its seeds");
    add_common(run, run_opts);
    run->add_option("--out", run_opts.out, "Output directory");

    CommonOptions sweep_opts;
    std::string axis;
    std::vector<std::string> values;
    auto* sweep = app.add_subcommand("sweep", "Repeat an experiment over values of one setting");
    add_common(sweep, sweep_opts);
    sweep->add_option("--out", sweep_opts.out, "Output directory");
    sweep->add_option("--axis", axis, "lambda | support_size | memory_capacity | merging_variant")->required();
    sweep->add_option("--values", values, "Comma-separated values")->delimiter(',')->required();

    CommonOptions export_opts;
    std::uint64_t export_seed = 0;
    std::string export_path = "embeddings.csv";
    auto* exp = app.add_subcommand("export-embeddings", "Train one seed and write a 2-D PCA view of its embeddings");
    add_common(exp, export_opts);
    exp->add_option("--seed", export_seed, "Seed to train");
    exp->add_option("--out", export_path, "Output CSV file");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run) {
            const auto config = resolve(run, run_opts);
            const auto result = cmatch::run_experiment(config);
            cmatch::write_results(result);
            report(result, "");
            return result.all_ok() ? 0 : 1;
        }
        if (*sweep) {
            const auto config = resolve(sweep, sweep_opts);
            const auto rows = cmatch::run_sweep(config, cmatch::parse_sweep_axis(axis), values);
            cmatch::write_sweep(rows, cmatch::parse_sweep_axis(axis), config.output);
            bool ok = true;
            for (const auto& row : rows) {
                report(row.result, axis + "=" + row.value + " ");
                ok = ok && row.result.all_ok();
            }
            return ok ? 0 : 1;
        }
        if (*exp) {
            auto config = resolve(exp, export_opts);
            std::unique_ptr<cmatch::Strategy> strategy;
            const auto r = cmatch::run_seed(config, export_seed, &strategy);
            if (!r.ok) {
                std::cerr << "seed " << export_seed << " aborted: " << r.error << '\n';
                return 1;
            }
            const auto scenario = cmatch::make_scenario(config, export_seed);
            const auto points = cmatch::embedding_points(*strategy, scenario);
            std::ofstream out(export_path);
            if (!out) throw std::runtime_error("cannot write " + export_path);
            cmatch::write_embeddings(out, points);
            std::cout << "wrote " << points.size() << " points to " << export_path << '\n';
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
