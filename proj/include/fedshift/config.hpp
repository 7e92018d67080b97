#pragma once

#include <fstream>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedshift/fed_core.hpp"

namespace fedshift {

using json = nlohmann::ordered_json;

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {

// Typed field access that records consumed keys; finish() rejects leftovers
// so typos fail fast with their path.
class StrictObject {
  public:
    StrictObject(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
    }

    bool has(const std::string& key) const { return j_.contains(key); }

    const json& raw(const std::string& key) {
        seen_.insert(key);
        auto it = j_.find(key);
        if (it == j_.end()) throw ConfigError(path_ + "." + key + ": missing required field");
        return *it;
    }

    template <typename T>
    T require(const std::string& key) {
        return convert<T>(raw(key), path_ + "." + key);
    }

    template <typename T>
    T get_or(const std::string& key, T fallback) {
        seen_.insert(key);
        auto it = j_.find(key);
        if (it == j_.end()) return fallback;
        return convert<T>(*it, path_ + "." + key);
    }

    StrictObject child(const std::string& key) {
        return StrictObject(raw(key), path_ + "." + key);
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!seen_.count(it.key()))
                throw ConfigError(path_ + "." + it.key() + ": unknown field");
    }

  private:
    template <typename T>
    static T convert(const json& v, const std::string& path) {
        try {
            return v.get<T>();
        } catch (const json::exception&) {
            throw ConfigError(path + ": wrong type");
        }
    }

    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

template <typename T>
T parse_enum(const std::string& value, const std::string& path,
             const std::vector<std::pair<std::string, T>>& table) {
    for (const auto& [name, v] : table)
        if (name == value) return v;
    std::string allowed;
    for (const auto& [name, v] : table) allowed += (allowed.empty() ? "" : ", ") + name;
    throw ConfigError(path + ": '" + value + "' is not one of {" + allowed + "}");
}

}  // namespace detail

struct ExperimentConfig {
    std::string name = "experiment";
    ShiftScenario scenario;
    bool scenario_seed_fixed = false;  // when false, data is regenerated per run seed
    TrainMode mode = TrainMode::FedAvg;
    FocusSpec focus;
    RatioConfig ratio;
    std::vector<int> sweep_bins;  // ratio-fit sweep sizes
    PredictorSpec predictor;
    FedHyper hyper;
    std::vector<std::uint64_t> seeds;

    bool has_consistency = false;
    ConsistencyFamily consistency;
    std::vector<long> n_grid;

    double eigen_lambda_reg = 1.0;
};

inline ExperimentConfig parse_config(const json& root) {
    detail::StrictObject top(root, "config");
    ExperimentConfig cfg;
    cfg.name = top.get_or<std::string>("name", "experiment");

    cfg.mode = detail::parse_enum<TrainMode>(
        top.get_or<std::string>("mode", "fedavg"), "config.mode",
        {{"ftw", TrainMode::FTW},
         {"fitw", TrainMode::FITW},
         {"fedavg", TrainMode::FedAvg},
         {"focused", TrainMode::Focused}});

    if (top.has("focus")) {
        auto f = top.child("focus");
        cfg.focus.target_client = f.require<int>("client");
        cfg.focus.lambda = f.get_or<std::vector<double>>("lambda", {});
        f.finish();
    }

    if (top.has("scenario")) {
        auto s = top.child("scenario");
        cfg.scenario.base = detail::parse_enum<BaseGenerator>(
            s.get_or<std::string>("type", "gaussian_clusters"), "config.scenario.type",
            {{"one_hot", BaseGenerator::OneHot},
             {"gaussian_clusters", BaseGenerator::GaussianClusters}});
        cfg.scenario.num_classes = s.require<int>("num_classes");
        cfg.scenario.feature_dim = s.require<int>("feature_dim");
        cfg.scenario.cluster_sep = s.get_or<double>("cluster_sep", 1.0);
        cfg.scenario.cluster_sigma = s.get_or<double>("cluster_sigma", 1.0);
        cfg.scenario.class_means =
            s.get_or<std::vector<std::vector<double>>>("class_means", {});
        cfg.scenario.class_targets = s.get_or<std::vector<double>>("class_targets", {});
        cfg.scenario.train_counts = s.require<std::vector<std::vector<long>>>("train_counts");
        cfg.scenario.test_counts = s.require<std::vector<std::vector<long>>>("test_counts");
        cfg.scenario.max_pool_per_class = s.get_or<long>("max_pool_per_class", 0);
        if (s.has("seed")) {
            cfg.scenario.seed = s.require<std::uint64_t>("seed");
            cfg.scenario_seed_fixed = true;
        }
        s.finish();
        try {
            cfg.scenario.validate();
        } catch (const std::exception& e) {
            throw ConfigError(std::string("config.scenario: ") + e.what());
        }
    }

    if (top.has("ratio")) {
        auto r = top.child("ratio");
        cfg.ratio.source = detail::parse_enum<RatioSource>(
            r.get_or<std::string>("source", "oracle"), "config.ratio.source",
            {{"oracle", RatioSource::Oracle},
             {"hdrm-histogram", RatioSource::HdrmHistogram},
             {"hdrm-kmeans", RatioSource::HdrmKmeans},
             {"constant", RatioSource::Constant}});
        cfg.ratio.variant = detail::parse_enum<BregmanVariant>(
            r.get_or<std::string>("variant", "lsif"), "config.ratio.variant",
            {{"lsif", BregmanVariant::LSIF},
             {"ukl", BregmanVariant::UKL},
             {"lr", BregmanVariant::LR},
             {"pu", BregmanVariant::PU}});
        cfg.ratio.model.kind = detail::parse_enum<RatioModelKind>(
            r.get_or<std::string>("model", "linear-softplus"), "config.ratio.model",
            {{"class-table", RatioModelKind::ClassTable},
             {"linear-softplus", RatioModelKind::LinearSoftplus},
             {"mlp-softplus", RatioModelKind::MlpSoftplus}});
        cfg.ratio.model.hidden = r.get_or<int>("hidden", 16);
        cfg.ratio.bins = r.get_or<int>("bins", 40);
        cfg.ratio.kmeans_iters = r.get_or<int>("kmeans_iters", 25);
        cfg.ratio.gamma = r.get_or<double>("gamma", 1.0);
        cfg.ratio.constant_value = r.get_or<double>("constant_value", 1.0);
        cfg.ratio.hyper.lr = r.get_or<double>("lr", 1e-3);
        cfg.ratio.hyper.batch_train = r.get_or<int>("batch_train", 64);
        cfg.ratio.hyper.batch_test = r.get_or<int>("batch_test", 64);
        cfg.ratio.hyper.max_epochs = r.get_or<int>("epochs", 200);
        cfg.ratio.hyper.reg = r.get_or<double>("reg", 1e-4);
        cfg.sweep_bins = r.get_or<std::vector<int>>("sweep_bins", {});
        r.finish();
    }

    if (top.has("predictor")) {
        auto p = top.child("predictor");
        cfg.predictor.kind = detail::parse_enum<PredictorKind>(
            p.get_or<std::string>("kind", "logistic"), "config.predictor.kind",
            {{"linear", PredictorKind::Linear},
             {"logistic", PredictorKind::Logistic},
             {"mlp", PredictorKind::Mlp}});
        cfg.predictor.hidden = p.get_or<int>("hidden", 32);
        cfg.predictor.bias = p.get_or<bool>("bias", true);
        cfg.predictor.output_dim = p.get_or<int>("output_dim", 0);
        p.finish();
    }

    if (top.has("train")) {
        auto t = top.child("train");
        cfg.hyper.rounds = t.get_or<int>("rounds", 500);
        cfg.hyper.batch_size = t.get_or<int>("batch_size", 64);
        cfg.hyper.lr = t.get_or<double>("lr", 0.05);
        cfg.hyper.schedule = detail::parse_enum<LrSchedule>(
            t.get_or<std::string>("schedule", "constant"), "config.train.schedule",
            {{"constant", LrSchedule::Constant}, {"inv_sqrt", LrSchedule::InvSqrt}});
        cfg.hyper.participation = t.get_or<double>("participation", 1.0);
        cfg.hyper.aggregation = detail::parse_enum<Aggregation>(
            t.get_or<std::string>("aggregation", "sum"), "config.train.aggregation",
            {{"sum", Aggregation::Sum}, {"weighted_mean", Aggregation::WeightedMean}});
        cfg.hyper.server_opt = detail::parse_enum<ServerOpt>(
            t.get_or<std::string>("server_opt", "sgd"), "config.train.server_opt",
            {{"sgd", ServerOpt::Sgd}, {"adam", ServerOpt::Adam}});
        cfg.hyper.eval_every = t.get_or<int>("eval_every", 100);
        cfg.hyper.loss = detail::parse_enum<LossKind>(
            t.get_or<std::string>("loss", "cross_entropy"), "config.train.loss",
            {{"cross_entropy", LossKind::CrossEntropy}, {"squared", LossKind::Squared}});
        t.finish();
    }

    cfg.seeds = top.get_or<std::vector<std::uint64_t>>("seeds", {1});
    if (cfg.seeds.empty()) throw ConfigError("config.seeds: need at least one seed");

    if (top.has("consistency")) {
        auto c = top.child("consistency");
        cfg.has_consistency = true;
        cfg.consistency.class_means = c.require<std::vector<double>>("class_means");
        cfg.consistency.sigma = c.get_or<double>("sigma", 0.2);
        cfg.consistency.class_targets = c.require<std::vector<double>>("class_targets");
        cfg.consistency.train_props = c.require<std::vector<std::vector<double>>>("train_props");
        cfg.consistency.test_props = c.require<std::vector<std::vector<double>>>("test_props");
        cfg.consistency.pool_size = c.get_or<long>("pool_size", 500);
        cfg.n_grid = c.require<std::vector<long>>("n_grid");
        c.finish();
    }

    if (top.has("eigen_report")) {
        auto e = top.child("eigen_report");
        cfg.eigen_lambda_reg = e.get_or<double>("lambda_reg", 1.0);
        e.finish();
    }

    top.finish();

    // derive defaults that depend on the scenario
    cfg.predictor.input_dim = cfg.scenario.feature_dim;
    if (cfg.predictor.output_dim == 0) {
        cfg.predictor.output_dim =
            cfg.hyper.loss == LossKind::Squared ? 1 : cfg.scenario.num_classes;
    }
    return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config parse error in " + path + ": " + e.what());
    }
    return parse_config(j);
}

}  // namespace fedshift
