#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fedshift/dataset.hpp"
#include "fedshift/nnbd.hpp"
#include "fedshift/predictors.hpp"
#include "fedshift/ratio_model.hpp"
#include "fedshift/rng.hpp"
#include "fedshift/supremum.hpp"
#include "fedshift/threading.hpp"

namespace fedshift {

enum class TrainMode { FTW, FITW, FedAvg, Focused };
enum class RatioSource { Oracle, HdrmHistogram, HdrmKmeans, Constant };
enum class Aggregation { Sum, WeightedMean };
enum class ServerOpt { Sgd, Adam };
enum class LrSchedule { Constant, InvSqrt };

inline std::string to_string(TrainMode m) {
    switch (m) {
        case TrainMode::FTW: return "ftw";
        case TrainMode::FITW: return "fitw";
        case TrainMode::FedAvg: return "fedavg";
        case TrainMode::Focused: return "focused";
    }
    return "?";
}

// Records which client's data every ratio source touched. In FITW mode each
// reader may only ever see its own rows; tests assert cross flows are zero.
struct AccessLog {
    std::vector<std::pair<int, int>> flows;  // (reader, owner); owner -1 = anonymized pool
    void record(int reader, int owner) { flows.emplace_back(reader, owner); }
    std::size_t cross_count() const {
        std::size_t n = 0;
        for (const auto& [reader, owner] : flows)
            if (owner >= 0 && reader != owner) ++n;
        return n;
    }
};

struct ClientState {
    int id = 0;
    const DatasetSplit* data = nullptr;
    std::vector<double> weights;  // one per train example
    std::optional<SupremumEstimate> supremum;
    std::optional<RatioModel> ratio_model;
};

struct ServerState {
    Predictor model;
    int round = 0;
    double base_lr = 0.05;
    LrSchedule schedule = LrSchedule::Constant;
    double participation = 1.0;
    ServerOpt opt = ServerOpt::Sgd;
    std::vector<double> adam_m, adam_v;

    double step_size() const {
        return schedule == LrSchedule::InvSqrt
                   ? base_lr / std::sqrt(static_cast<double>(round + 1))
                   : base_lr;
    }
};

struct RoundLogEntry {
    int round = 0;
    std::vector<int> participants;
    std::vector<double> grad_norms;  // parallel to participants
    double avg_loss = 0;
    bool evaluated = false;
    double avg_accuracy = 0;
    std::vector<double> client_accuracy;
};

struct FocusSpec {
    int target_client = 0;
    std::vector<double> lambda;  // per-client focus weights; empty = indicator of target
};

struct RatioConfig {
    RatioSource source = RatioSource::Oracle;
    BregmanVariant variant = BregmanVariant::LSIF;
    RatioModelSpec model;
    RatioTrainHyper hyper;
    int bins = 40;  // histogram bins or k-means clusters
    int kmeans_iters = 25;
    double gamma = 1.0;          // C = gamma / r_tilde
    double constant_value = 1.0; // Constant source
};

struct FedHyper {
    int rounds = 500;
    int batch_size = 64;  // 0 = full client batch
    double lr = 0.05;
    LrSchedule schedule = LrSchedule::Constant;
    double participation = 1.0;
    Aggregation aggregation = Aggregation::Sum;
    ServerOpt server_opt = ServerOpt::Sgd;
    int eval_every = 100;  // 0 = final round only
    LossKind loss = LossKind::CrossEntropy;
};

// Uniformly shuffled multiset union of all clients' unlabeled pool
// contributions; no client attribution survives in the output.
inline std::vector<std::vector<double>> broadcast_shuffled_pool(
    const std::vector<DatasetSplit>& splits, std::uint64_t seed) {
    if (splits.empty()) throw std::invalid_argument("broadcast: no clients");
    const std::size_t per_client = splits.front().test_pool.size();
    std::vector<std::vector<double>> pool;
    for (const auto& s : splits) {
        if (s.test_pool.size() != per_client)
            throw std::runtime_error("protocol error: unequal test pool contributions");
        pool.insert(pool.end(), s.test_pool.begin(), s.test_pool.end());
    }
    if (pool.empty()) throw std::runtime_error("protocol error: empty test pools");
    auto rng = make_stream(seed, "pool_shuffle");
    deterministic_shuffle(pool, rng);
    return pool;
}

namespace detail {

inline std::vector<std::vector<double>> train_features(const DatasetSplit& split) {
    std::vector<std::vector<double>> out;
    out.reserve(split.train.size());
    for (const auto& s : split.train) out.push_back(s.x);
    return out;
}

inline void fit_hdrm_ratios(ClientState& client, const ShiftScenario& scenario,
                            const RatioConfig& cfg, const std::vector<std::vector<double>>& pool,
                            int K, std::uint64_t seed) {
    auto feats = train_features(*client.data);
    const std::uint64_t client_seed =
        derive_seed(seed, "ratio_client", static_cast<std::uint64_t>(client.id));
    SupremumEstimate est;
    if (cfg.source == RatioSource::HdrmHistogram) {
        est = estimate_supremum_histogram(feats, pool, K, cfg.bins, cfg.gamma);
    } else {
        est = estimate_supremum_kmeans(feats, pool, K, cfg.bins, cfg.kmeans_iters, client_seed,
                                       cfg.gamma);
    }
    RatioModelSpec spec = cfg.model;
    if (spec.kind == RatioModelKind::ClassTable && spec.centroids.empty()) {
        for (int c = 0; c < scenario.num_classes; ++c) spec.centroids.push_back(scenario.mean_of_class(c));
    }
    RatioModel model =
        train_ratio_model(cfg.variant, spec, feats, pool, K, est, cfg.hyper, client_seed);
    const double clip = 2.0 * est.r_tilde;
    client.weights.resize(client.data->train.size());
    for (std::size_t i = 0; i < client.weights.size(); ++i)
        client.weights[i] = std::clamp(model.evaluate(client.data->train[i].x), 0.0, clip);
    client.supremum = std::move(est);
    client.ratio_model = std::move(model);
}

}  // namespace detail

// Caches per-example weights on every client according to the mode and ratio
// source. FITW paths receive only client-local inputs.
inline void assign_ratios(std::vector<ClientState>& clients, TrainMode mode,
                          const ShiftScenario& scenario, const RatioConfig& cfg,
                          const std::vector<std::vector<double>>& shuffled_pool,
                          const FocusSpec& focus, std::uint64_t seed, int threads,
                          AccessLog* access = nullptr) {
    const int K = static_cast<int>(clients.size());
    if (mode == TrainMode::FedAvg) {
        for (auto& c : clients) c.weights.assign(c.data->train.size(), 1.0);
        return;
    }
    if (cfg.source == RatioSource::Constant) {
        for (auto& c : clients) c.weights.assign(c.data->train.size(), cfg.constant_value);
        return;
    }
    if (cfg.source == RatioSource::Oracle) {
        for (auto& client : clients) {
            const int k = client.id;
            client.weights.resize(client.data->train.size());
            if (mode == TrainMode::FTW) {
                if (access)
                    for (int l = 0; l < K; ++l) access->record(k, l);
                for (std::size_t i = 0; i < client.weights.size(); ++i)
                    client.weights[i] =
                        exact_combined_ratio(k, scenario, client.data->train[i].label);
            } else if (mode == TrainMode::FITW) {
                if (access) access->record(k, k);
                const auto q_tr = scenario.train_proportions(k);
                const auto q_te = scenario.test_proportions(k);
                for (std::size_t i = 0; i < client.weights.size(); ++i)
                    client.weights[i] =
                        exact_ratio_target_shift(q_tr, q_te, client.data->train[i].label);
            } else {  // Focused
                if (focus.target_client < 0 || focus.target_client >= K)
                    throw std::invalid_argument("focused mode: target client out of range");
                double lam = focus.lambda.empty()
                                 ? (k == focus.target_client ? 1.0 : 0.0)
                                 : focus.lambda.at(static_cast<std::size_t>(k));
                if (lam < 0) throw std::invalid_argument("focused mode: lambda must be >= 0");
                if (access) {
                    access->record(k, k);
                    access->record(k, focus.target_client);
                }
                const auto q_tr = scenario.train_proportions(k);
                const auto q_te = scenario.test_proportions(focus.target_client);
                for (std::size_t i = 0; i < client.weights.size(); ++i)
                    client.weights[i] =
                        lam == 0 ? 0.0
                                 : lam * exact_ratio_target_shift(q_tr, q_te,
                                                                  client.data->train[i].label);
            }
        }
        return;
    }

    // trained ratios
    if (mode == TrainMode::Focused)
        throw std::invalid_argument("focused mode supports only the oracle ratio source");
    if (mode == TrainMode::FTW) {
        if (shuffled_pool.empty())
            throw std::invalid_argument("ftw with trained ratios requires the broadcast pool");
        parallel_for(clients.size(), threads, [&](std::size_t i) {
            detail::fit_hdrm_ratios(clients[i], scenario, cfg, shuffled_pool, K, seed);
        });
        if (access)
            for (auto& c : clients) {
                access->record(c.id, c.id);
                access->record(c.id, -1);  // anonymized pool
            }
        return;
    }
    // FITW: every client fits against its own pool contribution only.
    parallel_for(clients.size(), threads, [&](std::size_t i) {
        detail::fit_hdrm_ratios(clients[i], scenario, cfg, clients[i].data->test_pool, 1, seed);
    });
    if (access)
        for (auto& c : clients) access->record(c.id, c.id);
}

// One synchronized round: participants compute weighted mini-batch gradients
// in parallel, the server applies the aggregate in ascending client order.
inline RoundLogEntry run_round(ServerState& server, std::vector<ClientState>& clients,
                               const FedHyper& hyper, std::uint64_t seed, int threads) {
    const int K = static_cast<int>(clients.size());
    const int t = server.round;
    RoundLogEntry entry;
    entry.round = t;

    int count = static_cast<int>(std::lround(server.participation * K));
    count = std::max(1, std::min(count, K));
    if (count == K) {
        for (int k = 0; k < K; ++k) entry.participants.push_back(k);
    } else {
        auto rng = make_stream(seed, "participation", static_cast<std::uint64_t>(t));
        for (std::size_t idx :
             sample_without_replacement(static_cast<std::size_t>(K),
                                        static_cast<std::size_t>(count), rng))
            entry.participants.push_back(static_cast<int>(idx));
    }

    const std::size_t P = entry.participants.size();
    std::vector<std::vector<double>> grads(P);
    std::vector<double> losses(P);
    parallel_for(P, threads, [&](std::size_t pi) {
        const ClientState& client = clients[static_cast<std::size_t>(entry.participants[pi])];
        const std::size_t n = client.data->train.size();
        WeightedBatch batch;
        if (hyper.batch_size <= 0 || static_cast<std::size_t>(hyper.batch_size) >= n) {
            batch.samples.reserve(n);
            batch.weights.reserve(n);
            for (std::size_t i = 0; i < n; ++i) {
                batch.samples.push_back(&client.data->train[i]);
                batch.weights.push_back(client.weights[i]);
            }
        } else {
            auto rng = make_stream(seed, "round_batch", static_cast<std::uint64_t>(client.id),
                                   static_cast<std::uint64_t>(t));
            std::uniform_int_distribution<std::size_t> pick(0, n - 1);
            for (int b = 0; b < hyper.batch_size; ++b) {
                const std::size_t i = pick(rng);
                batch.samples.push_back(&client.data->train[i]);
                batch.weights.push_back(client.weights[i]);
            }
        }
        losses[pi] = weighted_loss(server.model, batch, hyper.loss);
        grads[pi] = weighted_grad(server.model, batch, hyper.loss);
    });

    const std::size_t d = server.model.params().size();
    std::vector<double> total(d, 0.0);
    double norm_weight = 0;
    double loss_sum = 0;
    entry.grad_norms.resize(P);
    for (std::size_t pi = 0; pi < P; ++pi) {
        const int cid = entry.participants[pi];
        double sq = 0;
        for (double g : grads[pi]) sq += g * g;
        entry.grad_norms[pi] = std::sqrt(sq);
        for (double g : grads[pi])
            if (!std::isfinite(g))
                throw std::runtime_error("non-finite gradient from client " + std::to_string(cid));
        const double scale =
            hyper.aggregation == Aggregation::Sum
                ? 1.0
                : static_cast<double>(clients[static_cast<std::size_t>(cid)].data->train.size());
        norm_weight += scale;
        for (std::size_t j = 0; j < d; ++j) total[j] += scale * grads[pi][j];
        loss_sum += losses[pi];
    }
    if (hyper.aggregation == Aggregation::WeightedMean && norm_weight > 0)
        for (double& g : total) g /= norm_weight;
    entry.avg_loss = loss_sum / static_cast<double>(P);

    const double eta = server.step_size();
    auto& w = server.model.params();
    if (server.opt == ServerOpt::Sgd) {
        for (std::size_t j = 0; j < d; ++j) w[j] -= eta * total[j];
    } else {
        if (server.adam_m.size() != d) {
            server.adam_m.assign(d, 0.0);
            server.adam_v.assign(d, 0.0);
        }
        const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
        const double tt = static_cast<double>(t + 1);
        for (std::size_t j = 0; j < d; ++j) {
            server.adam_m[j] = b1 * server.adam_m[j] + (1 - b1) * total[j];
            server.adam_v[j] = b2 * server.adam_v[j] + (1 - b2) * total[j] * total[j];
            const double mh = server.adam_m[j] / (1 - std::pow(b1, tt));
            const double vh = server.adam_v[j] / (1 - std::pow(b2, tt));
            w[j] -= eta * mh / (std::sqrt(vh) + eps);
        }
    }
    server.round++;
    return entry;
}

struct TrainResult {
    Predictor model;
    std::vector<RoundLogEntry> log;
    std::vector<DatasetSplit> data;
    std::vector<double> final_client_accuracy;
    double final_avg_accuracy = 0;
};

// Full pipeline: generate data, broadcast the pool (FTW), estimate suprema and
// fit ratios (trained sources), cache weights, then run T synchronized rounds.
inline TrainResult run_training(const ShiftScenario& scenario, TrainMode mode,
                                const PredictorSpec& pspec, const FedHyper& hyper,
                                const RatioConfig& ratio_cfg, const FocusSpec& focus,
                                std::uint64_t seed, int threads, AccessLog* access = nullptr) {
    std::vector<DatasetSplit> data = make_target_shift_scenario(scenario);
    std::vector<ClientState> clients(data.size());
    for (std::size_t k = 0; k < data.size(); ++k) {
        clients[k].id = static_cast<int>(k);
        clients[k].data = &data[k];
    }

    std::vector<std::vector<double>> pool;
    if (mode == TrainMode::FTW) pool = broadcast_shuffled_pool(data, derive_seed(seed, "pool"));
    assign_ratios(clients, mode, scenario, ratio_cfg, pool, focus, seed, threads, access);

    ServerState server;
    server.model = Predictor(pspec, derive_seed(seed, "init"));
    server.base_lr = hyper.lr;
    server.schedule = hyper.schedule;
    server.participation = hyper.participation;
    server.opt = hyper.server_opt;
    const bool classify = pspec.output_dim >= 2;

    TrainResult result;
    result.log.reserve(static_cast<std::size_t>(hyper.rounds));
    for (int t = 0; t < hyper.rounds; ++t) {
        RoundLogEntry entry = run_round(server, clients, hyper, seed, threads);
        const bool last = t == hyper.rounds - 1;
        if (classify && (last || (hyper.eval_every > 0 && (t + 1) % hyper.eval_every == 0))) {
            entry.evaluated = true;
            double sum = 0;
            for (const auto& c : clients) {
                const double a = accuracy(server.model, c.data->test_eval);
                entry.client_accuracy.push_back(a);
                sum += a;
            }
            entry.avg_accuracy = sum / static_cast<double>(clients.size());
            if (last) {
                result.final_client_accuracy = entry.client_accuracy;
                result.final_avg_accuracy = entry.avg_accuracy;
            }
        }
        result.log.push_back(std::move(entry));
    }
    result.model = server.model;
    result.data = std::move(data);
    return result;
}

// --- excess-risk consistency sweep (1-D class-conditional Gaussian clusters,
// --- linear predictor with bias, squared loss) ---

struct ConsistencyFamily {
    std::vector<double> class_means;    // 1-D cluster centers
    double sigma = 0.2;
    std::vector<double> class_targets;  // regression target per class
    std::vector<std::vector<double>> train_props;  // [K][C]
    std::vector<std::vector<double>> test_props;   // [K][C]
    long pool_size = 500;
};

struct ConsistencyPoint {
    long n = 0;
    double excess_risk = 0;
};

namespace detail {

struct Quadratic {  // risk(theta) = theta' A theta - 2 b' theta + c, theta = (slope, intercept)
    double a11 = 0, a12 = 0, a22 = 0, b1 = 0, b2 = 0, c = 0;

    void add(double prob, double m1, double m2, double y) {
        a11 += prob * m2;
        a12 += prob * m1;
        a22 += prob;
        b1 += prob * y * m1;
        b2 += prob * y;
        c += prob * y * y;
    }
    std::pair<double, double> minimizer() const {
        const double det = a11 * a22 - a12 * a12;
        if (std::abs(det) < 1e-14) throw std::runtime_error("degenerate risk quadratic");
        return {(a22 * b1 - a12 * b2) / det, (a11 * b2 - a12 * b1) / det};
    }
    double value(double slope, double intercept) const {
        return a11 * slope * slope + 2 * a12 * slope * intercept + a22 * intercept * intercept -
               2 * (b1 * slope + b2 * intercept) + c;
    }
};

// Sum over clients of the population test risk for the family.
inline Quadratic population_risk(const ConsistencyFamily& fam) {
    Quadratic q;
    const double s2 = fam.sigma * fam.sigma;
    for (const auto& props : fam.test_props) {
        ClassProportions p(props);
        for (std::size_t c = 0; c < p.num_classes(); ++c) {
            const double m = fam.class_means[c];
            q.add(p.prob(static_cast<int>(c)), m, m * m + s2, fam.class_targets[c]);
        }
    }
    return q;
}

inline std::vector<long> apportion(const std::vector<double>& props, long n) {
    double total = 0;
    for (double p : props) total += p;
    std::vector<long> counts(props.size(), 0);
    std::vector<std::pair<double, std::size_t>> rem;
    long assigned = 0;
    for (std::size_t i = 0; i < props.size(); ++i) {
        const double exact = static_cast<double>(n) * props[i] / total;
        counts[i] = static_cast<long>(exact);
        assigned += counts[i];
        rem.push_back({exact - static_cast<double>(counts[i]), i});
    }
    std::stable_sort(rem.begin(), rem.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (long i = 0; i < n - assigned; ++i) counts[rem[static_cast<std::size_t>(i)].second]++;
    return counts;
}

}  // namespace detail

// Excess average test risk of the exact weighted empirical minimizer versus
// the population minimizer, per training-set size. Oracle label ratios only.
inline std::vector<ConsistencyPoint> consistency_sweep(const ConsistencyFamily& fam,
                                                       TrainMode mode,
                                                       const std::vector<long>& n_grid,
                                                       std::uint64_t seed) {
    if (fam.class_means.size() != fam.class_targets.size() || fam.class_means.empty())
        throw std::invalid_argument("consistency family: means/targets mismatch");
    const int C = static_cast<int>(fam.class_means.size());
    const int K = static_cast<int>(fam.train_props.size());
    if (mode != TrainMode::FTW && mode != TrainMode::FITW && mode != TrainMode::FedAvg)
        throw std::invalid_argument("consistency sweep supports ftw, fitw, and fedavg");

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
            sc.train_counts.push_back(detail::apportion(fam.train_props[static_cast<std::size_t>(k)], n));
            sc.test_counts.push_back(
                detail::apportion(fam.test_props[static_cast<std::size_t>(k)], fam.pool_size));
        }
        sc.seed = derive_seed(seed, "consistency", static_cast<std::uint64_t>(n));
        auto data = make_target_shift_scenario(sc);

        // weighted normal equations over all clients, each normalized by n_k
        detail::Quadratic emp;
        for (int k = 0; k < K; ++k) {
            const auto& split = data[static_cast<std::size_t>(k)];
            const auto q_tr = sc.train_proportions(k);
            const auto q_te = sc.test_proportions(k);
            const double inv_nk = 1.0 / static_cast<double>(split.train.size());
            for (const auto& s : split.train) {
                double w = 1.0;
                if (mode == TrainMode::FTW)
                    w = exact_combined_ratio(k, sc, s.label);
                else if (mode == TrainMode::FITW)
                    w = exact_ratio_target_shift(q_tr, q_te, s.label);
                const double x = s.x[0];
                emp.add(w * inv_nk, x, x * x, s.target);
            }
        }
        auto [a_hat, b_hat] = emp.minimizer();
        out.push_back({n, pop.value(a_hat, b_hat) - floor_risk});
    }
    return out;
}

}  // namespace fedshift
