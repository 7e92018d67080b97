#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "fedshift/config.hpp"
#include "fedshift/csv.hpp"
#include "fedshift/fed_core.hpp"
#include "fedshift/ridge.hpp"

namespace fedshift {

namespace stats {

inline double mean(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

inline double sample_std(const std::vector<double>& v) {
    const double m = mean(v);
    double s = 0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

inline double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace stats

// --- serialization ---

inline json predictor_to_json(const Predictor& p) {
    json j;
    j["kind"] = to_string(p.spec().kind);
    j["input_dim"] = p.spec().input_dim;
    j["output_dim"] = p.spec().output_dim;
    if (p.spec().kind == PredictorKind::Mlp) j["hidden"] = p.spec().hidden;
    j["bias"] = p.spec().bias;
    j["params"] = p.params();
    return j;
}

inline json ratio_model_to_json(const RatioModel& m, BregmanVariant variant,
                                const SupremumEstimate& sup) {
    json j;
    j["kind"] = to_string(m.kind());
    j["variant"] = to_string(variant);
    j["input_dim"] = m.input_dim();
    if (m.kind() == RatioModelKind::MlpSoftplus) j["hidden"] = m.hidden_width();
    if (m.kind() == RatioModelKind::ClassTable) j["centroids"] = m.centroids();
    j["params"] = m.params();
    j["r_max"] = m.r_max();
    j["r_tilde"] = sup.r_tilde;
    j["C"] = sup.C;
    return j;
}

inline RatioModel ratio_model_from_json(const json& j) {
    const std::string kind = j.at("kind").get<std::string>();
    const double r_max = j.at("r_max").get<double>();
    RatioModel m = [&]() {
        if (kind == "class-table")
            return RatioModel::class_table(
                j.at("centroids").get<std::vector<std::vector<double>>>(), r_max);
        if (kind == "linear-softplus")
            return RatioModel::linear_softplus(j.at("input_dim").get<int>(), r_max, 0);
        if (kind == "mlp-softplus")
            return RatioModel::mlp_softplus(j.at("input_dim").get<int>(),
                                            j.at("hidden").get<int>(), r_max, 0);
        throw std::invalid_argument("unknown ratio model kind: " + kind);
    }();
    m.params() = j.at("params").get<std::vector<double>>();
    return m;
}

// --- round log CSV ---

inline void write_round_log_csv(std::ostream& out, const std::vector<RoundLogEntry>& log,
                                TrainMode mode, int num_clients) {
    std::vector<std::string> header = {"round", "mode", "avg_loss", "avg_acc"};
    for (int k = 0; k < num_clients; ++k) header.push_back("acc_client_" + std::to_string(k));
    CsvWriter csv(out, header);
    for (const auto& e : log) {
        std::vector<std::string> cells = {std::to_string(e.round), to_string(mode),
                                          CsvWriter::num(e.avg_loss)};
        if (e.evaluated) {
            cells.push_back(CsvWriter::num(e.avg_accuracy));
            for (double a : e.client_accuracy) cells.push_back(CsvWriter::num(a));
        } else {
            cells.push_back("");
            for (int k = 0; k < num_clients; ++k) cells.push_back("");
        }
        csv.row(cells);
    }
}

// --- train command ---

struct SeedRunResult {
    std::uint64_t seed = 0;
    TrainResult result;
};

inline ShiftScenario scenario_for_seed(const ExperimentConfig& cfg, std::uint64_t seed) {
    ShiftScenario sc = cfg.scenario;
    if (!cfg.scenario_seed_fixed) sc.seed = derive_seed(seed, "scenario");
    return sc;
}

inline json build_summary(const ExperimentConfig& cfg, const std::vector<SeedRunResult>& runs) {
    const int K = cfg.scenario.num_clients();
    json summary;
    summary["name"] = cfg.name;
    summary["mode"] = to_string(cfg.mode);
    summary["num_clients"] = K;
    summary["seeds"] = cfg.seeds;

    json per_seed = json::array();
    std::vector<double> avg_acc, worst_acc, best_acc;
    std::vector<std::vector<double>> client_acc(static_cast<std::size_t>(K));
    for (const auto& run : runs) {
        json row;
        row["seed"] = run.seed;
        row["final_loss"] = run.result.log.empty() ? 0.0 : run.result.log.back().avg_loss;
        row["average_accuracy"] = run.result.final_avg_accuracy;
        row["client_accuracy"] = run.result.final_client_accuracy;
        per_seed.push_back(row);
        avg_acc.push_back(run.result.final_avg_accuracy);
        const auto& ca = run.result.final_client_accuracy;
        if (!ca.empty()) {
            worst_acc.push_back(*std::min_element(ca.begin(), ca.end()));
            best_acc.push_back(*std::max_element(ca.begin(), ca.end()));
            for (int k = 0; k < K; ++k)
                client_acc[static_cast<std::size_t>(k)].push_back(
                    ca[static_cast<std::size_t>(k)]);
        }
    }
    summary["per_seed"] = per_seed;

    const bool with_std = runs.size() >= 2;
    auto agg = [&](const std::vector<double>& v) {
        json a;
        a["mean"] = v.empty() ? 0.0 : stats::mean(v);
        if (with_std && !v.empty()) a["std"] = stats::sample_std(v);
        return a;
    };
    summary["average_accuracy"] = agg(avg_acc);
    summary["worst_client_accuracy"] = agg(worst_acc);
    summary["best_client_accuracy"] = agg(best_acc);
    json per_client = json::array();
    for (int k = 0; k < K; ++k) per_client.push_back(agg(client_acc[static_cast<std::size_t>(k)]));
    summary["client_accuracy"] = per_client;
    return summary;
}

inline int cmd_train(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                     int threads, std::ostream& msg = std::cout) {
    std::filesystem::create_directories(out_dir);
    std::vector<SeedRunResult> runs(cfg.seeds.size());
    // replicates are independent; parallelism across them cannot change results
    parallel_for(cfg.seeds.size(), threads, [&](std::size_t i) {
        const std::uint64_t seed = cfg.seeds[i];
        runs[i].seed = seed;
        runs[i].result = run_training(scenario_for_seed(cfg, seed), cfg.mode, cfg.predictor,
                                      cfg.hyper, cfg.ratio, cfg.focus, seed, 1);
    });
    for (const auto& run : runs) {
        const auto seed_dir = out_dir / ("seed_" + std::to_string(run.seed));
        std::filesystem::create_directories(seed_dir);
        std::ofstream rounds(seed_dir / "rounds.csv");
        write_round_log_csv(rounds, run.result.log, cfg.mode, cfg.scenario.num_clients());
        std::ofstream pred(seed_dir / "predictor.json");
        pred << predictor_to_json(run.result.model).dump(2) << '\n';
    }
    const json summary = build_summary(cfg, runs);
    std::ofstream out(out_dir / "summary.json");
    out << summary.dump(2) << '\n';
    msg << "wrote " << (out_dir / "summary.json").string() << " (mode " << to_string(cfg.mode)
        << ", avg accuracy " << summary["average_accuracy"]["mean"].dump() << ")\n";
    return 0;
}

// --- ratio-fit command ---

inline int cmd_ratio_fit(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                         int threads, std::ostream& msg = std::cout) {
    if (cfg.ratio.source != RatioSource::HdrmHistogram &&
        cfg.ratio.source != RatioSource::HdrmKmeans)
        throw ConfigError("ratio-fit requires an hdrm-* ratio source (nothing to fit for " +
                          std::string(cfg.ratio.source == RatioSource::Oracle ? "oracle"
                                                                              : "constant") +
                          ")");
    std::filesystem::create_directories(out_dir);
    std::vector<int> sweep = cfg.sweep_bins;
    if (sweep.empty()) sweep = {10, 20, 40, 50, 100};

    for (std::uint64_t seed : cfg.seeds) {
        const auto seed_dir = out_dir / ("seed_" + std::to_string(seed));
        std::filesystem::create_directories(seed_dir);
        const ShiftScenario sc = scenario_for_seed(cfg, seed);
        auto data = make_target_shift_scenario(sc);
        const int K = sc.num_clients();
        const bool local = cfg.mode == TrainMode::FITW;  // fit against own pool only
        std::vector<std::vector<double>> shared_pool;
        if (!local) shared_pool = broadcast_shuffled_pool(data, derive_seed(seed, "pool"));

        std::ofstream sweep_out(seed_dir / "supremum_sweep.csv");
        CsvWriter sweep_csv(sweep_out, {"client", "M", "r_tilde"});
        std::ofstream risk_out(seed_dir / "bd_risk.csv");
        CsvWriter risk_csv(risk_out, {"client", "variant", "heldout_bd_risk"});

        struct FitOut {
            SupremumEstimate sup;
            RatioModel model{};
            double heldout = 0;
            std::vector<std::vector<double>> sweep_rows;
        };
        std::vector<FitOut> fits(static_cast<std::size_t>(K));
        parallel_for(static_cast<std::size_t>(K), threads, [&](std::size_t k) {
            const auto& pool = local ? data[k].test_pool : shared_pool;
            const int pool_clients = local ? 1 : K;
            auto feats = detail::train_features(data[k]);
            const std::uint64_t cseed = derive_seed(seed, "ratio_client", k);

            // every fifth sample is held out for the risk report
            std::vector<std::vector<double>> fit_tr, hold_tr, fit_te, hold_te;
            for (std::size_t i = 0; i < feats.size(); ++i)
                (i % 5 == 0 ? hold_tr : fit_tr).push_back(feats[i]);
            for (std::size_t i = 0; i < pool.size(); ++i)
                (i % 5 == 0 ? hold_te : fit_te).push_back(pool[i]);

            for (int m : sweep) {
                SupremumEstimate e =
                    cfg.ratio.source == RatioSource::HdrmHistogram
                        ? estimate_supremum_histogram(fit_tr, fit_te, pool_clients, m,
                                                      cfg.ratio.gamma)
                        : estimate_supremum_kmeans(fit_tr, fit_te, pool_clients, m,
                                                   cfg.ratio.kmeans_iters,
                                                   derive_seed(cseed, "sweep", static_cast<std::uint64_t>(m)),
                                                   cfg.ratio.gamma);
                fits[k].sweep_rows.push_back(
                    {static_cast<double>(m), e.r_tilde});
            }
            fits[k].sup = cfg.ratio.source == RatioSource::HdrmHistogram
                              ? estimate_supremum_histogram(fit_tr, fit_te, pool_clients,
                                                            cfg.ratio.bins, cfg.ratio.gamma)
                              : estimate_supremum_kmeans(fit_tr, fit_te, pool_clients,
                                                         cfg.ratio.bins, cfg.ratio.kmeans_iters,
                                                         cseed, cfg.ratio.gamma);
            RatioModelSpec spec = cfg.ratio.model;
            if (spec.kind == RatioModelKind::ClassTable && spec.centroids.empty())
                for (int c = 0; c < sc.num_classes; ++c)
                    spec.centroids.push_back(sc.mean_of_class(c));
            fits[k].model = train_ratio_model(cfg.ratio.variant, spec, fit_tr, fit_te,
                                              pool_clients, fits[k].sup, cfg.ratio.hyper, cseed);
            fits[k].heldout = empirical_bd_risk(cfg.ratio.variant, fits[k].model,
                                                fits[k].sup.C, pool_clients, hold_tr, hold_te);
        });

        for (int k = 0; k < K; ++k) {
            const auto& fit = fits[static_cast<std::size_t>(k)];
            for (const auto& row : fit.sweep_rows)
                sweep_csv.row({std::to_string(k), CsvWriter::num(static_cast<long>(row[0])),
                               CsvWriter::num(row[1])});
            risk_csv.row({std::to_string(k), to_string(cfg.ratio.variant),
                          CsvWriter::num(fit.heldout)});
            std::ofstream mout(seed_dir / ("client_" + std::to_string(k) + ".model.json"));
            mout << ratio_model_to_json(fit.model, cfg.ratio.variant, fit.sup).dump(2) << '\n';
        }
        msg << "seed " << seed << ": fitted " << K << " ratio models, sweep sizes "
            << sweep.size() << "\n";
    }
    return 0;
}

// --- ridge-verify command ---

struct RidgeVerifyReport {
    long instances = 0;
    long theorem2_violations = 0;
    long prop5_violations = 0;
    std::vector<double> mc_z_scores;
    long mc_within_3 = 0;

    bool ok() const {
        return theorem2_violations == 0 && prop5_violations == 0 &&
               mc_within_3 * 20 >= static_cast<long>(mc_z_scores.size()) * 19;
    }
};

inline RidgeVerifyReport run_ridge_verify(long num_instances, std::uint64_t seed,
                                          long mc_instances = 20, long mc_trials = 10000) {
    if (num_instances < 1) throw std::invalid_argument("ridge verify: num_instances >= 1");
    RidgeVerifyReport rep;
    rep.instances = num_instances;
    const double rel_tol = 1e-10;

    auto rng = make_stream(seed, "ridge_verify");
    for (long i = 0; i < num_instances; ++i) {
        OneHotComparison inst = sample_theorem2_instance(rng);
        auto [r_hat, r_erm] = onehot_risks(inst);
        if (r_hat > r_erm + rel_tol * std::max(1.0, std::abs(r_erm))) rep.theorem2_violations++;
    }
    for (long i = 0; i < num_instances; ++i) {
        OneHotComparison inst = sample_prop5_instance(rng);
        auto [r_hat, r_erm] = onehot_risks(inst);
        if (r_erm > r_hat + rel_tol * std::max(1.0, std::abs(r_hat))) rep.prop5_violations++;
    }
    for (long i = 0; i < mc_instances; ++i) {
        RidgeInstance inst = sample_dense_instance(rng);
        auto [b, v] = bias_variance_fixed(inst);
        MonteCarloRisk mc =
            excess_risk_mc(inst, mc_trials, derive_seed(seed, "mc", static_cast<std::uint64_t>(i)));
        const double z = (mc.mean - (b + v)) / std::max(mc.std_error, 1e-300);
        rep.mc_z_scores.push_back(z);
        if (std::abs(z) <= 3.0) rep.mc_within_3++;
    }
    return rep;
}

inline int cmd_ridge_verify(long num_instances, std::uint64_t seed,
                            const std::filesystem::path& out_dir, std::ostream& msg = std::cout) {
    RidgeVerifyReport rep = run_ridge_verify(num_instances, seed);
    msg << "dominance-condition sweep:      " << rep.instances << " instances, "
        << rep.theorem2_violations << " violations\n";
    msg << "counterexample-condition sweep: " << rep.instances << " instances, "
        << rep.prop5_violations << " violations\n";
    msg << "decomposition identity:         " << rep.mc_within_3 << "/" << rep.mc_z_scores.size()
        << " z-scores within +-3\n";
    msg << "z-scores:";
    for (double z : rep.mc_z_scores) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), " %.3f", z);
        msg << buf;
    }
    msg << "\n";
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        std::ofstream out(out_dir / "ridge_verify.csv");
        CsvWriter csv(out, {"check", "instances", "violations"});
        csv.row({"dominance_condition", CsvWriter::num(rep.instances),
                 CsvWriter::num(rep.theorem2_violations)});
        csv.row({"counterexample_condition", CsvWriter::num(rep.instances),
                 CsvWriter::num(rep.prop5_violations)});
        std::ofstream zf(out_dir / "ridge_mc_z.csv");
        CsvWriter zcsv(zf, {"instance", "z"});
        for (std::size_t i = 0; i < rep.mc_z_scores.size(); ++i)
            zcsv.row({CsvWriter::num(static_cast<long>(i)), CsvWriter::num(rep.mc_z_scores[i])});
    }
    msg << (rep.ok() ? "all checks passed\n" : "CHECK FAILURE\n");
    return rep.ok() ? 0 : 1;
}

// --- consistency command ---

// Same sweep as consistency_sweep but with weights produced by a fitted
// ratio model (k-means supremum + class-table model) instead of the oracle.
inline std::vector<ConsistencyPoint> consistency_sweep_trained(const ConsistencyFamily& fam,
                                                               TrainMode mode,
                                                               const std::vector<long>& n_grid,
                                                               const RatioConfig& ratio_cfg,
                                                               std::uint64_t seed) {
    if (mode != TrainMode::FTW && mode != TrainMode::FITW)
        throw std::invalid_argument("trained consistency sweep supports ftw and fitw");
    const int C = static_cast<int>(fam.class_means.size());
    const int K = static_cast<int>(fam.train_props.size());
    detail::Quadratic pop = detail::population_risk(fam);
    auto [best_a, best_b] = pop.minimizer();
    const double floor_risk = pop.value(best_a, best_b);

    std::vector<ConsistencyPoint> out;
    for (long n : n_grid) {
        ShiftScenario sc;
        sc.num_classes = C;
        sc.feature_dim = 1;
        sc.base = BaseGenerator::GaussianClusters;
        sc.cluster_sigma = fam.sigma;
        for (double m : fam.class_means) sc.class_means.push_back({m});
        sc.class_targets = fam.class_targets;
        for (int k = 0; k < K; ++k) {
            sc.train_counts.push_back(
                detail::apportion(fam.train_props[static_cast<std::size_t>(k)], n));
            sc.test_counts.push_back(
                detail::apportion(fam.test_props[static_cast<std::size_t>(k)], fam.pool_size));
        }
        sc.seed = derive_seed(seed, "consistency", static_cast<std::uint64_t>(n));
        auto data = make_target_shift_scenario(sc);

        std::vector<ClientState> clients(data.size());
        for (std::size_t k = 0; k < data.size(); ++k) {
            clients[k].id = static_cast<int>(k);
            clients[k].data = &data[k];
        }
        std::vector<std::vector<double>> pool;
        if (mode == TrainMode::FTW)
            pool = broadcast_shuffled_pool(data, derive_seed(sc.seed, "pool"));
        assign_ratios(clients, mode, sc, ratio_cfg, pool, FocusSpec{}, sc.seed, 1);

        detail::Quadratic emp;
        for (const auto& client : clients) {
            const double inv_nk = 1.0 / static_cast<double>(client.data->train.size());
            for (std::size_t i = 0; i < client.data->train.size(); ++i) {
                const auto& s = client.data->train[i];
                emp.add(client.weights[i] * inv_nk, s.x[0], s.x[0] * s.x[0], s.target);
            }
        }
        auto [a_hat, b_hat] = emp.minimizer();
        out.push_back({n, pop.value(a_hat, b_hat) - floor_risk});
    }
    return out;
}

inline int cmd_consistency(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                           int threads, std::ostream& msg = std::cout) {
    if (!cfg.has_consistency)
        throw ConfigError("consistency command needs a 'consistency' config section");
    std::filesystem::create_directories(out_dir);

    const bool trained = cfg.ratio.source == RatioSource::HdrmHistogram ||
                         cfg.ratio.source == RatioSource::HdrmKmeans;
    std::vector<TrainMode> modes = {cfg.mode};
    if (cfg.mode != TrainMode::FedAvg) modes.push_back(TrainMode::FedAvg);  // baseline column

    std::ofstream out(out_dir / "consistency.csv");
    CsvWriter csv(out, {"mode", "source", "n", "excess_risk_median", "excess_risk_std"});
    json trend;
    for (TrainMode mode : modes) {
        const bool use_trained = trained && mode != TrainMode::FedAvg;
        const std::string source = use_trained ? "trained" : "oracle";
        std::vector<std::vector<double>> per_n(cfg.n_grid.size());
        std::vector<std::vector<ConsistencyPoint>> sweeps(cfg.seeds.size());
        parallel_for(cfg.seeds.size(), threads, [&](std::size_t si) {
            sweeps[si] = use_trained
                             ? consistency_sweep_trained(cfg.consistency, mode, cfg.n_grid,
                                                         cfg.ratio, cfg.seeds[si])
                             : consistency_sweep(cfg.consistency, mode, cfg.n_grid,
                                                 cfg.seeds[si]);
        });
        for (const auto& sweep : sweeps)
            for (std::size_t ni = 0; ni < sweep.size(); ++ni)
                per_n[ni].push_back(sweep[ni].excess_risk);
        bool decreasing = true;
        double prev = 0;
        for (std::size_t ni = 0; ni < cfg.n_grid.size(); ++ni) {
            const double med = stats::median(per_n[ni]);
            std::string std_cell =
                per_n[ni].size() >= 2 ? CsvWriter::num(stats::sample_std(per_n[ni])) : "";
            csv.row({to_string(mode), source, CsvWriter::num(cfg.n_grid[ni]),
                     CsvWriter::num(med), std_cell});
            if (ni > 0 && med >= prev) decreasing = false;
            prev = med;
        }
        trend[to_string(mode)] = {{"source", source}, {"strictly_decreasing_median", decreasing}};
        msg << to_string(mode) << " (" << source << "): median excess risk "
            << (decreasing ? "strictly decreasing" : "not strictly decreasing") << " over grid\n";
    }
    std::ofstream tj(out_dir / "consistency_trend.json");
    tj << trend.dump(2) << '\n';
    return 0;
}

// --- eigen-report command ---

inline int cmd_eigen_report(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                            std::ostream& msg = std::cout) {
    std::filesystem::create_directories(out_dir);
    const ShiftScenario sc = scenario_for_seed(cfg, cfg.seeds.front());
    auto data = make_target_shift_scenario(sc);
    std::ofstream out(out_dir / "eigen_report.csv");
    CsvWriter csv(out, {"client", "index", "sqrt_ratio", "bound", "near_zero"});
    for (const auto& split : data) {
        std::vector<std::vector<double>> train = detail::train_features(split);
        std::vector<std::vector<double>> test;
        for (const auto& s : split.test_eval) test.push_back(s.x);
        auto rows = eigen_ratio_report(train, test, cfg.eigen_lambda_reg);
        for (const auto& r : rows)
            csv.row({std::to_string(split.client_id), CsvWriter::num(r.index),
                     CsvWriter::num(r.sqrt_ratio), CsvWriter::num(r.bound),
                     r.near_zero ? "1" : "0"});
    }
    msg << "wrote " << (out_dir / "eigen_report.csv").string() << "\n";
    return 0;
}

}  // namespace fedshift
