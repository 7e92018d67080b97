#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedshift/csv.hpp"
#include "fedshift/rng.hpp"

namespace fedshift {

struct LabeledSample {
    std::vector<double> x;
    int label = 0;       // class index
    double target = 0;   // regression target; equals label unless the scenario maps classes to values
};

// Nonnegative weights over classes; queried through the normalized view.
class ClassProportions {
  public:
    explicit ClassProportions(std::vector<double> weights) : weights_(std::move(weights)) {
        double total = 0;
        for (double w : weights_) {
            if (!(w >= 0)) throw std::invalid_argument("class proportions must be nonnegative");
            total += w;
        }
        if (!(total > 0)) throw std::invalid_argument("class proportions must not all be zero");
        norm_.resize(weights_.size());
        for (std::size_t i = 0; i < weights_.size(); ++i) norm_[i] = weights_[i] / total;
    }

    std::size_t num_classes() const { return weights_.size(); }
    double prob(int c) const { return norm_.at(static_cast<std::size_t>(c)); }
    const std::vector<double>& normalized() const { return norm_; }

  private:
    std::vector<double> weights_;
    std::vector<double> norm_;
};

// Labeled train set, unlabeled test-pool contribution, and held-out labeled
// evaluation set for one client. Pool sizes must agree across clients.
struct DatasetSplit {
    int client_id = 0;
    std::vector<LabeledSample> train;
    std::vector<std::vector<double>> test_pool;
    std::vector<LabeledSample> test_eval;
};

enum class BaseGenerator { OneHot, GaussianClusters };

inline std::string to_string(BaseGenerator g) {
    return g == BaseGenerator::OneHot ? "one_hot" : "gaussian_clusters";
}

// Multi-client target-shift scenario: per-client per-class sample counts over
// a shared class-conditional base generator. The generator keeps p(x|y)
// identical across train and test so the label-based ratio oracles are exact.
struct ShiftScenario {
    int num_classes = 0;
    int feature_dim = 0;
    BaseGenerator base = BaseGenerator::GaussianClusters;
    double cluster_sep = 1.0;    // implicit means are cluster_sep * e_c
    double cluster_sigma = 1.0;
    std::vector<std::vector<double>> class_means;  // optional explicit means [num_classes][feature_dim]
    std::vector<double> class_targets;             // optional per-class regression targets
    std::vector<std::vector<long>> train_counts;   // [K][num_classes]
    std::vector<std::vector<long>> test_counts;    // [K][num_classes], pool counts; eval uses the same
    long max_pool_per_class = 0;                   // 0 = sized to demand
    std::uint64_t seed = 0;

    int num_clients() const { return static_cast<int>(train_counts.size()); }

    ClassProportions train_proportions(int k) const {
        return ClassProportions(to_weights(train_counts.at(static_cast<std::size_t>(k))));
    }
    ClassProportions test_proportions(int k) const {
        return ClassProportions(to_weights(test_counts.at(static_cast<std::size_t>(k))));
    }

    std::vector<double> mean_of_class(int c) const {
        if (!class_means.empty()) return class_means.at(static_cast<std::size_t>(c));
        std::vector<double> m(static_cast<std::size_t>(feature_dim), 0.0);
        m.at(static_cast<std::size_t>(c)) = cluster_sep;
        return m;
    }

    double target_of_class(int c) const {
        return class_targets.empty() ? static_cast<double>(c)
                                     : class_targets.at(static_cast<std::size_t>(c));
    }

    void validate() const {
        if (num_classes < 1) throw std::invalid_argument("scenario: num_classes must be >= 1");
        if (feature_dim < 1) throw std::invalid_argument("scenario: feature_dim must be >= 1");
        if (train_counts.empty()) throw std::invalid_argument("scenario: need at least one client");
        if (test_counts.size() != train_counts.size())
            throw std::invalid_argument("scenario: train/test client count mismatch");
        if (base == BaseGenerator::OneHot && feature_dim != num_classes)
            throw std::invalid_argument("scenario: one-hot base requires feature_dim == num_classes");
        if (base == BaseGenerator::GaussianClusters && class_means.empty() &&
            num_classes > feature_dim)
            throw std::invalid_argument(
                "scenario: implicit basis means need feature_dim >= num_classes");
        if (!class_means.empty()) {
            if (static_cast<int>(class_means.size()) != num_classes)
                throw std::invalid_argument("scenario: class_means size mismatch");
            for (const auto& m : class_means)
                if (static_cast<int>(m.size()) != feature_dim)
                    throw std::invalid_argument("scenario: class mean dimension mismatch");
        }
        if (!class_targets.empty() && static_cast<int>(class_targets.size()) != num_classes)
            throw std::invalid_argument("scenario: class_targets size mismatch");

        long pool_total = -1;
        for (std::size_t k = 0; k < train_counts.size(); ++k) {
            check_counts(train_counts[k], "train");
            check_counts(test_counts[k], "test");
            long tr = std::accumulate(train_counts[k].begin(), train_counts[k].end(), 0L);
            if (tr == 0) throw std::invalid_argument("scenario: empty train split for a client");
            long te = std::accumulate(test_counts[k].begin(), test_counts[k].end(), 0L);
            if (pool_total < 0) pool_total = te;
            if (te != pool_total)
                throw std::invalid_argument(
                    "scenario: test pool contributions must be equal across clients");
        }
        if (pool_total <= 0)
            throw std::invalid_argument("scenario: test pool contributions must be nonempty");
    }

  private:
    void check_counts(const std::vector<long>& c, const char* which) const {
        if (static_cast<int>(c.size()) != num_classes)
            throw std::invalid_argument(std::string("scenario: ") + which + " counts width mismatch");
        for (long v : c)
            if (v < 0) throw std::invalid_argument("scenario: counts must be nonnegative");
    }
    static std::vector<double> to_weights(const std::vector<long>& counts) {
        std::vector<double> w(counts.size());
        for (std::size_t i = 0; i < counts.size(); ++i) w[i] = static_cast<double>(counts[i]);
        return w;
    }
};

namespace detail {

inline int draw_class(const ClassProportions& p, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    double u = unif(rng);
    double cum = 0;
    int last_positive = -1;
    for (std::size_t c = 0; c < p.num_classes(); ++c) {
        double pc = p.prob(static_cast<int>(c));
        if (pc > 0) last_positive = static_cast<int>(c);
        cum += pc;
        if (u < cum && pc > 0) return static_cast<int>(c);
    }
    return last_positive;  // guards the u ~ 1 edge
}

inline std::vector<double> draw_feature(const ShiftScenario& sc, int label, std::mt19937_64& rng) {
    if (sc.base == BaseGenerator::OneHot) {
        std::vector<double> x(static_cast<std::size_t>(sc.feature_dim), 0.0);
        x[static_cast<std::size_t>(label)] = 1.0;
        return x;
    }
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<double> x = sc.mean_of_class(label);
    for (double& v : x) v += sc.cluster_sigma * gauss(rng);
    return x;
}

}  // namespace detail

// n one-hot vectors e_c drawn with the given class probabilities.
inline std::vector<std::vector<double>> sample_one_hot(const ClassProportions& props, std::size_t n,
                                                       std::uint64_t seed) {
    if (n < 1) throw std::invalid_argument("sample_one_hot: n must be >= 1");
    auto rng = make_stream(seed, "one_hot");
    std::vector<std::vector<double>> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        int c = detail::draw_class(props, rng);
        std::vector<double> x(props.num_classes(), 0.0);
        x[static_cast<std::size_t>(c)] = 1.0;
        out.push_back(std::move(x));
    }
    return out;
}

// Builds all client splits. Per-class pools are generated once and dealt out
// without replacement, so requested counts are met exactly and train, pool,
// and eval samples are disjoint.
inline std::vector<DatasetSplit> make_target_shift_scenario(const ShiftScenario& sc) {
    sc.validate();
    const int K = sc.num_clients();
    std::vector<DatasetSplit> splits(static_cast<std::size_t>(K));
    for (int k = 0; k < K; ++k) splits[static_cast<std::size_t>(k)].client_id = k;

    for (int c = 0; c < sc.num_classes; ++c) {
        long demand = 0;
        for (int k = 0; k < K; ++k) {
            demand += sc.train_counts[static_cast<std::size_t>(k)][static_cast<std::size_t>(c)];
            demand += 2 * sc.test_counts[static_cast<std::size_t>(k)][static_cast<std::size_t>(c)];
        }
        if (sc.max_pool_per_class > 0 && demand > sc.max_pool_per_class)
            throw std::runtime_error("insufficient data: class " + std::to_string(c) +
                                     " demand " + std::to_string(demand) + " exceeds pool size " +
                                     std::to_string(sc.max_pool_per_class));
        auto rng = make_stream(sc.seed, "class_pool", static_cast<std::uint64_t>(c));
        std::vector<std::vector<double>> pool;
        pool.reserve(static_cast<std::size_t>(demand));
        for (long i = 0; i < demand; ++i) pool.push_back(detail::draw_feature(sc, c, rng));

        std::size_t next = 0;
        auto take = [&]() { return pool[next++]; };
        const double target = sc.target_of_class(c);
        for (int k = 0; k < K; ++k) {
            long n = sc.train_counts[static_cast<std::size_t>(k)][static_cast<std::size_t>(c)];
            for (long i = 0; i < n; ++i)
                splits[static_cast<std::size_t>(k)].train.push_back({take(), c, target});
        }
        for (int k = 0; k < K; ++k) {
            long n = sc.test_counts[static_cast<std::size_t>(k)][static_cast<std::size_t>(c)];
            for (long i = 0; i < n; ++i)
                splits[static_cast<std::size_t>(k)].test_pool.push_back(take());
        }
        for (int k = 0; k < K; ++k) {
            long n = sc.test_counts[static_cast<std::size_t>(k)][static_cast<std::size_t>(c)];
            for (long i = 0; i < n; ++i)
                splits[static_cast<std::size_t>(k)].test_eval.push_back({take(), c, target});
        }
    }
    return splits;
}

// True ratio p_te(x)/p_tr(x) for separable target shift, evaluated through the
// label: q_te(y)/q_tr(y).
inline double exact_ratio_target_shift(const ClassProportions& q_tr, const ClassProportions& q_te,
                                       int label) {
    double tr = q_tr.prob(label);
    if (!(tr > 0))
        throw std::domain_error("exact ratio undefined: train probability of label " +
                                std::to_string(label) + " is zero");
    return q_te.prob(label) / tr;
}

// Ground-truth combined ratio (sum of all clients' test densities over client
// k's train density) for separable scenarios.
inline double exact_combined_ratio(int k, const ShiftScenario& sc, int label) {
    double tr = sc.train_proportions(k).prob(label);
    if (!(tr > 0))
        throw std::domain_error("exact combined ratio undefined: train probability of label " +
                                std::to_string(label) + " is zero for client " + std::to_string(k));
    double te_sum = 0;
    for (int l = 0; l < sc.num_clients(); ++l) te_sum += sc.test_proportions(l).prob(label);
    return te_sum / tr;
}

// 1-D Gaussian covariate-shift fixture with its exact density ratio.
struct GaussianShiftPair {
    std::vector<double> train;
    std::vector<double> test;
    double mean_tr = 0, mean_te = 0, variance = 1;

    double ratio(double x) const {
        return std::exp((mean_te - mean_tr) * x / variance +
                        (mean_tr * mean_tr - mean_te * mean_te) / (2.0 * variance));
    }
};

inline GaussianShiftPair gaussian_shift_pair(double mean_tr, double mean_te, double variance,
                                             std::size_t n_tr, std::size_t n_te,
                                             std::uint64_t seed) {
    if (!(variance > 0)) throw std::invalid_argument("gaussian_shift_pair: variance must be > 0");
    GaussianShiftPair out;
    out.mean_tr = mean_tr;
    out.mean_te = mean_te;
    out.variance = variance;
    const double sd = std::sqrt(variance);
    std::normal_distribution<double> gauss(0.0, 1.0);
    auto rng_tr = make_stream(seed, "gauss_tr");
    out.train.reserve(n_tr);
    for (std::size_t i = 0; i < n_tr; ++i) out.train.push_back(mean_tr + sd * gauss(rng_tr));
    auto rng_te = make_stream(seed, "gauss_te");
    std::normal_distribution<double> gauss2(0.0, 1.0);
    out.test.reserve(n_te);
    for (std::size_t i = 0; i < n_te; ++i) out.test.push_back(mean_te + sd * gauss2(rng_te));
    return out;
}

// One row per sample: client_id, split, label (empty for pool rows), features.
inline void export_scenario_csv(std::ostream& out, const std::vector<DatasetSplit>& splits) {
    int d = 0;
    for (const auto& s : splits) {
        if (!s.train.empty()) d = static_cast<int>(s.train.front().x.size());
    }
    std::vector<std::string> header = {"client_id", "split", "label"};
    for (int j = 0; j < d; ++j) header.push_back("f" + std::to_string(j));
    CsvWriter csv(out, header);
    auto feature_cells = [&](const std::vector<double>& x, std::vector<std::string>& cells) {
        for (double v : x) cells.push_back(CsvWriter::num(v));
    };
    for (const auto& s : splits) {
        for (const auto& smp : s.train) {
            std::vector<std::string> cells = {std::to_string(s.client_id), "train",
                                              std::to_string(smp.label)};
            feature_cells(smp.x, cells);
            csv.row(cells);
        }
        for (const auto& x : s.test_pool) {
            std::vector<std::string> cells = {std::to_string(s.client_id), "test_pool", ""};
            feature_cells(x, cells);
            csv.row(cells);
        }
        for (const auto& smp : s.test_eval) {
            std::vector<std::string> cells = {std::to_string(s.client_id), "test_eval",
                                              std::to_string(smp.label)};
            feature_cells(smp.x, cells);
            csv.row(cells);
        }
    }
}

}  // namespace fedshift
