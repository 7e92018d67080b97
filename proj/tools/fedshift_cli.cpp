#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "fedshift/experiment.hpp"

namespace {

struct CommonOpts {
    std::string config_path;
    std::string out_dir = "out";
    std::int64_t seed_override = -1;
    int threads = 1;
};

void add_common(CLI::App* cmd, CommonOpts& opts, bool needs_config) {
    auto* c = cmd->add_option("--config", opts.config_path, "experiment config (JSON)");
    if (needs_config) c->required();
    cmd->add_option("--out", opts.out_dir, "output directory");
    cmd->add_option("--seed", opts.seed_override, "override the config seed list");
    cmd->add_option("--threads", opts.threads, "worker threads");
}

fedshift::ExperimentConfig load(const CommonOpts& opts) {
    fedshift::ExperimentConfig cfg = fedshift::load_config(opts.config_path);
    if (opts.seed_override >= 0)
        cfg.seeds = {static_cast<std::uint64_t>(opts.seed_override)};
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"federated training under distribution shift"};
    app.require_subcommand(1);

    CommonOpts train_opts, fit_opts, cons_opts, eigen_opts;
    auto* train = app.add_subcommand("train", "run federated training per seed");
    add_common(train, train_opts, true);
    auto* fit = app.add_subcommand("ratio-fit", "fit density-ratio models and sweep bin sizes");
    add_common(fit, fit_opts, true);
    auto* cons = app.add_subcommand("consistency", "excess-risk sweep over training-set sizes");
    add_common(cons, cons_opts, true);
    auto* eigen = app.add_subcommand("eigen-report", "train/test eigenvalue-ratio table");
    add_common(eigen, eigen_opts, true);

    std::string rv_out = "out";
    long rv_instances = 10000;
    std::uint64_t rv_seed = 1;
    auto* verify = app.add_subcommand("ridge-verify", "exact ridge theory checks");
    verify->add_option("--instances", rv_instances, "sampled instances per sweep");
    verify->add_option("--seed", rv_seed, "sweep seed");
    verify->add_option("--out", rv_out, "output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        if (train->parsed())
            return fedshift::cmd_train(load(train_opts), train_opts.out_dir, train_opts.threads);
        if (fit->parsed())
            return fedshift::cmd_ratio_fit(load(fit_opts), fit_opts.out_dir, fit_opts.threads);
        if (cons->parsed())
            return fedshift::cmd_consistency(load(cons_opts), cons_opts.out_dir,
                                             cons_opts.threads);
        if (eigen->parsed())
            return fedshift::cmd_eigen_report(load(eigen_opts), eigen_opts.out_dir);
        if (verify->parsed()) return fedshift::cmd_ridge_verify(rv_instances, rv_seed, rv_out);
    } catch (const fedshift::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 2;
}
