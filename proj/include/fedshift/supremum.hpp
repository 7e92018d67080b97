#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "fedshift/rng.hpp"

namespace fedshift {

// Per-client estimate of the ratio supremum over a partition of feature
// space. C is the constant used by the non-negative correction; gamma < 1
// backs C off the 1/r_tilde boundary.
struct SupremumEstimate {
    double r_tilde = 0;
    double C = 0;
    int bins = 0;
    std::vector<double> bin_ratios;
    std::vector<long> train_counts;
    std::vector<long> test_counts;
};

namespace detail {

// Bin ratio: (test fraction per client test pool) / (train fraction); bins
// without train points are assigned 0. The test count is normalized by the
// per-client pool size so the K pooled contributions sum rather than average.
inline SupremumEstimate finish_estimate(std::vector<long> tr_counts, std::vector<long> te_counts,
                                        std::size_t n_train, std::size_t n_test_per_client,
                                        double gamma) {
    SupremumEstimate est;
    est.bins = static_cast<int>(tr_counts.size());
    est.bin_ratios.resize(tr_counts.size(), 0.0);
    bool any_train = false;
    for (std::size_t m = 0; m < tr_counts.size(); ++m) {
        if (tr_counts[m] > 0) {
            any_train = true;
            const double te_frac = static_cast<double>(te_counts[m]) /
                                   static_cast<double>(n_test_per_client);
            const double tr_frac = static_cast<double>(tr_counts[m]) /
                                   static_cast<double>(n_train);
            est.bin_ratios[m] = te_frac / tr_frac;
        }
        est.r_tilde = std::max(est.r_tilde, est.bin_ratios[m]);
    }
    if (!any_train) throw std::runtime_error("degenerate binning: no bin contains a train point");
    if (!(est.r_tilde > 0))
        throw std::runtime_error("degenerate binning: train and test samples never share a bin");
    est.C = gamma / est.r_tilde;
    est.train_counts = std::move(tr_counts);
    est.test_counts = std::move(te_counts);
    return est;
}

inline std::size_t pool_per_client(std::size_t pooled, int num_clients) {
    if (num_clients < 1) throw std::invalid_argument("need at least one client");
    if (pooled == 0 || pooled % static_cast<std::size_t>(num_clients) != 0)
        throw std::invalid_argument("pooled test size must be a positive multiple of K");
    return pooled / static_cast<std::size_t>(num_clients);
}

}  // namespace detail

// Axis-aligned equal-width grid. Only offered up to 3 dimensions; the
// k-means path handles anything higher.
inline SupremumEstimate estimate_supremum_histogram(
    const std::vector<std::vector<double>>& train,
    const std::vector<std::vector<double>>& pooled_test, int num_clients, int bins,
    double gamma = 1.0) {
    if (train.empty()) throw std::invalid_argument("histogram: train set is empty");
    if (bins < 1) throw std::invalid_argument("histogram: need at least one bin");
    if (!(gamma > 0 && gamma <= 1)) throw std::invalid_argument("histogram: gamma in (0,1]");
    const std::size_t n_te = detail::pool_per_client(pooled_test.size(), num_clients);
    const int d = static_cast<int>(train.front().size());
    if (d > 3)
        throw std::invalid_argument("histogram binning limited to 3 dimensions; use k-means");

    const int per_axis = d == 1 ? bins
                                : std::max(1, static_cast<int>(std::lround(
                                                  std::pow(static_cast<double>(bins), 1.0 / d))));
    std::vector<double> lo(static_cast<std::size_t>(d), 0.0), hi(static_cast<std::size_t>(d), 0.0);
    bool first = true;
    auto expand = [&](const std::vector<double>& x) {
        for (int j = 0; j < d; ++j) {
            const double v = x[static_cast<std::size_t>(j)];
            if (first) {
                lo[static_cast<std::size_t>(j)] = hi[static_cast<std::size_t>(j)] = v;
            } else {
                lo[static_cast<std::size_t>(j)] = std::min(lo[static_cast<std::size_t>(j)], v);
                hi[static_cast<std::size_t>(j)] = std::max(hi[static_cast<std::size_t>(j)], v);
            }
        }
        first = false;
    };
    for (const auto& x : train) expand(x);
    for (const auto& x : pooled_test) expand(x);

    auto bin_of = [&](const std::vector<double>& x) {
        std::size_t idx = 0;
        for (int j = 0; j < d; ++j) {
            const double width = hi[static_cast<std::size_t>(j)] - lo[static_cast<std::size_t>(j)];
            int b = 0;
            if (width > 0) {
                b = static_cast<int>((x[static_cast<std::size_t>(j)] -
                                      lo[static_cast<std::size_t>(j)]) /
                                     width * per_axis);
                b = std::clamp(b, 0, per_axis - 1);
            }
            idx = idx * static_cast<std::size_t>(per_axis) + static_cast<std::size_t>(b);
        }
        return idx;
    };

    std::size_t total_bins = 1;
    for (int j = 0; j < d; ++j) total_bins *= static_cast<std::size_t>(per_axis);
    std::vector<long> tr_counts(total_bins, 0), te_counts(total_bins, 0);
    for (const auto& x : train) tr_counts[bin_of(x)]++;
    for (const auto& x : pooled_test) te_counts[bin_of(x)]++;
    return detail::finish_estimate(std::move(tr_counts), std::move(te_counts), train.size(), n_te,
                                   gamma);
}

// Lloyd's iterations over the union of train and pooled test samples;
// per-cluster counts then play the role of bin counts. Empty clusters are
// reseeded to a uniformly random data point, deterministically under seed.
inline SupremumEstimate estimate_supremum_kmeans(const std::vector<std::vector<double>>& train,
                                                 const std::vector<std::vector<double>>& pooled_test,
                                                 int num_clients, int clusters, int iters,
                                                 std::uint64_t seed, double gamma = 1.0) {
    if (train.empty()) throw std::invalid_argument("kmeans: train set is empty");
    if (iters < 1) throw std::invalid_argument("kmeans: need at least one iteration");
    if (!(gamma > 0 && gamma <= 1)) throw std::invalid_argument("kmeans: gamma in (0,1]");
    const std::size_t n_te = detail::pool_per_client(pooled_test.size(), num_clients);
    const std::size_t n_tr = train.size();
    const std::size_t n = n_tr + pooled_test.size();
    if (clusters < 1 || static_cast<std::size_t>(clusters) > n)
        throw std::invalid_argument("kmeans: cluster count must be in [1, total samples]");
    const std::size_t d = train.front().size();
    const std::size_t M = static_cast<std::size_t>(clusters);

    auto point = [&](std::size_t i) -> const std::vector<double>& {
        return i < n_tr ? train[i] : pooled_test[i - n_tr];
    };

    auto rng = make_stream(seed, "kmeans");
    std::vector<std::size_t> init = sample_without_replacement(n, M, rng);
    std::vector<std::vector<double>> centers(M);
    for (std::size_t m = 0; m < M; ++m) centers[m] = point(init[m]);

    std::vector<int> assign(n, -1);
    std::vector<double> sums(M * d);
    std::vector<long> sizes(M);
    for (int it = 0; it < iters; ++it) {
        bool changed = false;
        for (std::size_t i = 0; i < n; ++i) {
            const auto& x = point(i);
            int best = 0;
            double best_d = -1;
            for (std::size_t m = 0; m < M; ++m) {
                double dist = 0;
                const auto& c = centers[m];
                for (std::size_t j = 0; j < d; ++j) {
                    const double t = x[j] - c[j];
                    dist += t * t;
                }
                if (best_d < 0 || dist < best_d) {
                    best_d = dist;
                    best = static_cast<int>(m);
                }
            }
            if (assign[i] != best) {
                assign[i] = best;
                changed = true;
            }
        }
        if (!changed) break;
        std::fill(sums.begin(), sums.end(), 0.0);
        std::fill(sizes.begin(), sizes.end(), 0L);
        for (std::size_t i = 0; i < n; ++i) {
            const auto& x = point(i);
            const std::size_t m = static_cast<std::size_t>(assign[i]);
            sizes[m]++;
            for (std::size_t j = 0; j < d; ++j) sums[m * d + j] += x[j];
        }
        for (std::size_t m = 0; m < M; ++m) {
            if (sizes[m] == 0) {
                std::uniform_int_distribution<std::size_t> pick(0, n - 1);
                centers[m] = point(pick(rng));
                continue;
            }
            for (std::size_t j = 0; j < d; ++j)
                centers[m][j] = sums[m * d + j] / static_cast<double>(sizes[m]);
        }
    }

    std::vector<long> tr_counts(M, 0), te_counts(M, 0);
    for (std::size_t i = 0; i < n; ++i) {
        if (i < n_tr)
            tr_counts[static_cast<std::size_t>(assign[i])]++;
        else
            te_counts[static_cast<std::size_t>(assign[i])]++;
    }
    return detail::finish_estimate(std::move(tr_counts), std::move(te_counts), n_tr, n_te, gamma);
}

}  // namespace fedshift
