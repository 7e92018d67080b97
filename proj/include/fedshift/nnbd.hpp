#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedshift/bregman.hpp"
#include "fedshift/ratio_model.hpp"
#include "fedshift/rng.hpp"
#include "fedshift/supremum.hpp"

namespace fedshift {

namespace detail {

// Compensated accumulator; keeps sums reproducible to ~1e-12 under sample
// reordering at the evaluation sizes used here.
class KahanSum {
  public:
    void add(double v) {
        double y = v - c_;
        double t = s_ + y;
        c_ = (t - s_) - y;
        s_ = t;
    }
    double value() const { return s_; }

  private:
    double s_ = 0, c_ = 0;
};

struct NnbdTerms {
    double bracket = 0;    // mean train ell1 - K*C * mean test ell1
    double ell2_term = 0;  // K * mean test ell2
    std::vector<double> grad_bracket;
    std::vector<double> grad_ell2;
};

inline NnbdTerms nnbd_terms(BregmanVariant v, const RatioModel& model, double C, int K,
                            const std::vector<std::vector<double>>& train_batch,
                            const std::vector<std::vector<double>>& test_batch, bool want_grad) {
    if (train_batch.empty() || test_batch.empty())
        throw std::invalid_argument("nnbd objective needs nonempty train and test batches");
    NnbdTerms t;
    const std::size_t np = model.params().size();
    if (want_grad) {
        t.grad_bracket.assign(np, 0.0);
        t.grad_ell2.assign(np, 0.0);
    }
    std::vector<double> dr;
    KahanSum tr1, te1, te2;
    std::vector<KahanSum> g_tr1, g_te1, g_te2;
    if (want_grad) {
        g_tr1.resize(np);
        g_te1.resize(np);
        g_te2.resize(np);
    }
    for (const auto& x : train_batch) {
        const double r = want_grad ? model.evaluate_with_grad(x, dr) : model.evaluate(x);
        tr1.add(ell1(v, r, C));
        if (want_grad) {
            const double d1 = ell1_deriv(v, r, C);
            for (std::size_t i = 0; i < np; ++i) g_tr1[i].add(d1 * dr[i]);
        }
    }
    for (const auto& x : test_batch) {
        const double r = want_grad ? model.evaluate_with_grad(x, dr) : model.evaluate(x);
        te1.add(ell1(v, r, C));
        te2.add(ell2(v, r, C));
        if (want_grad) {
            const double d1 = ell1_deriv(v, r, C);
            const double d2 = ell2_deriv(v, r, C);
            for (std::size_t i = 0; i < np; ++i) {
                g_te1[i].add(d1 * dr[i]);
                g_te2[i].add(d2 * dr[i]);
            }
        }
    }
    const double btr = static_cast<double>(train_batch.size());
    const double bte = static_cast<double>(test_batch.size());
    const double k = static_cast<double>(K);
    t.bracket = tr1.value() / btr - k * C * te1.value() / bte;
    t.ell2_term = k * te2.value() / bte;
    if (want_grad) {
        for (std::size_t i = 0; i < np; ++i) {
            t.grad_bracket[i] = g_tr1[i].value() / btr - k * C * g_te1[i].value() / bte;
            t.grad_ell2[i] = k * g_te2[i].value() / bte;
        }
    }
    return t;
}

}  // namespace detail

// Batched non-negative matching objective. The test batch stands in for the
// pooled per-client sums, hence the K multiplier on its averages.
inline double nnbd_objective(BregmanVariant v, const RatioModel& model, double C, int K,
                             const std::vector<std::vector<double>>& train_batch,
                             const std::vector<std::vector<double>>& test_batch) {
    auto t = detail::nnbd_terms(v, model, C, K, train_batch, test_batch, false);
    return std::max(0.0, t.bracket) + t.ell2_term;
}

// Same value; fills grad with the derivative w.r.t. the model parameters
// (bracket contributions drop out on the flat side of the hinge).
inline double nnbd_objective_with_grad(BregmanVariant v, const RatioModel& model, double C, int K,
                                       const std::vector<std::vector<double>>& train_batch,
                                       const std::vector<std::vector<double>>& test_batch,
                                       std::vector<double>& grad) {
    auto t = detail::nnbd_terms(v, model, C, K, train_batch, test_batch, true);
    grad.assign(model.params().size(), 0.0);
    for (std::size_t i = 0; i < grad.size(); ++i) {
        grad[i] = t.grad_ell2[i];
        if (t.bracket >= 0) grad[i] += t.grad_bracket[i];
    }
    return std::max(0.0, t.bracket) + t.ell2_term;
}

// Plug-in estimate of the population matching risk (no hinge): the signed
// train/test difference of the first loss plus the pooled second-loss term.
// Works for any ratio evaluator so reference ratios can be scored too.
template <typename RatioFn>
double empirical_bd_risk_fn(BregmanVariant v, RatioFn&& ratio, double C, int K,
                            const std::vector<std::vector<double>>& train_samples,
                            const std::vector<std::vector<double>>& pooled_test_samples) {
    if (train_samples.empty() || pooled_test_samples.empty())
        throw std::invalid_argument("empirical risk needs nonempty sample sets");
    detail::KahanSum tr1, te1, te2;
    for (const auto& x : train_samples) tr1.add(ell1(v, ratio(x), C));
    for (const auto& x : pooled_test_samples) {
        const double r = ratio(x);
        te1.add(ell1(v, r, C));
        te2.add(ell2(v, r, C));
    }
    const double k = static_cast<double>(K);
    return tr1.value() / static_cast<double>(train_samples.size()) -
           k * C * te1.value() / static_cast<double>(pooled_test_samples.size()) +
           k * te2.value() / static_cast<double>(pooled_test_samples.size());
}

inline double empirical_bd_risk(BregmanVariant v, const RatioModel& model, double C, int K,
                                const std::vector<std::vector<double>>& train_samples,
                                const std::vector<std::vector<double>>& pooled_test_samples) {
    return empirical_bd_risk_fn(
        v, [&](const std::vector<double>& x) { return model.evaluate(x); }, C, K, train_samples,
        pooled_test_samples);
}

struct RatioModelSpec {
    RatioModelKind kind = RatioModelKind::LinearSoftplus;
    int hidden = 16;                                // mlp only
    std::vector<std::vector<double>> centroids;     // class-table only
};

struct RatioTrainHyper {
    double lr = 1e-3;
    int batch_train = 64;
    int batch_test = 64;
    int max_epochs = 200;
    double reg = 1e-4;          // coefficient of (reg/2) * ||theta||^2
    int plateau_patience = 5;   // epochs without held-out improvement
    double holdout_frac = 0.2;
};

inline RatioModel make_ratio_model(const RatioModelSpec& spec, int dim, double r_max,
                                   std::uint64_t seed) {
    switch (spec.kind) {
        case RatioModelKind::ClassTable: {
            if (spec.centroids.empty())
                throw std::invalid_argument("class-table ratio model needs centroids");
            return RatioModel::class_table(spec.centroids, r_max);
        }
        case RatioModelKind::LinearSoftplus: return RatioModel::linear_softplus(dim, r_max, seed);
        case RatioModelKind::MlpSoftplus:
            return RatioModel::mlp_softplus(dim, spec.hidden, r_max, seed);
    }
    throw std::invalid_argument("unknown ratio model kind");
}

// Mini-batch fit of one client's ratio model. Descends the full hinge
// objective while the batch bracket is nonnegative, otherwise ascends the
// bracket to restore it; the norm regularizer is always descended. Stops
// when the held-out risk stops improving and returns the best parameters.
inline RatioModel train_ratio_model(BregmanVariant variant, const RatioModelSpec& spec,
                                    const std::vector<std::vector<double>>& train_features,
                                    const std::vector<std::vector<double>>& pooled_test, int K,
                                    const SupremumEstimate& sup, const RatioTrainHyper& hyper,
                                    std::uint64_t seed) {
    if (train_features.empty() || pooled_test.empty())
        throw std::invalid_argument("ratio training needs nonempty sample sets");
    const int dim = static_cast<int>(train_features.front().size());
    double r_max = 2.0 * sup.r_tilde;
    if (variant == BregmanVariant::PU) r_max = std::min(r_max, 1.0 - 1e-6);
    RatioModel model = make_ratio_model(spec, dim, r_max, derive_seed(seed, "ratio_model"));
    const double C = sup.C;

    // deterministic holdout split
    auto split = [&](const std::vector<std::vector<double>>& all, std::uint64_t tag) {
        std::vector<std::size_t> idx(all.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        auto rng = make_stream(seed, "ratio_holdout", tag);
        deterministic_shuffle(idx, rng);
        const std::size_t n_hold =
            std::min(all.size() - 1,
                     static_cast<std::size_t>(hyper.holdout_frac * static_cast<double>(all.size())));
        std::pair<std::vector<std::vector<double>>, std::vector<std::vector<double>>> out;
        for (std::size_t i = 0; i < idx.size(); ++i) {
            if (i < n_hold)
                out.second.push_back(all[idx[i]]);
            else
                out.first.push_back(all[idx[i]]);
        }
        if (out.second.empty()) out.second.push_back(out.first.back());
        return out;
    };
    auto [fit_train, hold_train] = split(train_features, 0);
    auto [fit_test, hold_test] = split(pooled_test, 1);

    const std::size_t btr = std::min<std::size_t>(static_cast<std::size_t>(hyper.batch_train),
                                                  fit_train.size());
    const std::size_t bte = std::min<std::size_t>(static_cast<std::size_t>(hyper.batch_test),
                                                  fit_test.size());
    const std::size_t batches =
        std::max<std::size_t>(1, std::min(fit_train.size() / std::max<std::size_t>(btr, 1),
                                          fit_test.size() / std::max<std::size_t>(bte, 1)));

    std::vector<double> best_params = model.params();
    double best_risk = empirical_bd_risk(variant, model, C, K, hold_train, hold_test);
    int stale = 0;
    std::vector<double> grad;
    std::vector<std::vector<double>> tb(btr), eb(bte);

    for (int epoch = 0; epoch < hyper.max_epochs; ++epoch) {
        auto rng = make_stream(seed, "ratio_epoch", static_cast<std::uint64_t>(epoch));
        std::uniform_int_distribution<std::size_t> pick_tr(0, fit_train.size() - 1);
        std::uniform_int_distribution<std::size_t> pick_te(0, fit_test.size() - 1);
        for (std::size_t step = 0; step < batches; ++step) {
            for (auto& x : tb) x = fit_train[pick_tr(rng)];
            for (auto& x : eb) x = fit_test[pick_te(rng)];
            auto terms = detail::nnbd_terms(variant, model, C, K, tb, eb, true);
            if (!std::isfinite(terms.bracket) || !std::isfinite(terms.ell2_term))
                throw std::runtime_error(
                    "ratio training diverged (non-finite loss); lower the learning rate");
            auto& theta = model.params();
            if (terms.bracket >= 0) {
                for (std::size_t i = 0; i < theta.size(); ++i)
                    theta[i] -= hyper.lr * (terms.grad_bracket[i] + terms.grad_ell2[i] +
                                            hyper.reg * theta[i]);
            } else {
                for (std::size_t i = 0; i < theta.size(); ++i)
                    theta[i] += hyper.lr * (terms.grad_bracket[i] - hyper.reg * theta[i]);
            }
            for (double p : theta)
                if (!std::isfinite(p))
                    throw std::runtime_error(
                        "ratio training diverged (non-finite parameters); lower the learning "
                        "rate");
        }
        const double risk = empirical_bd_risk(variant, model, C, K, hold_train, hold_test);
        if (!std::isfinite(risk))
            throw std::runtime_error(
                "ratio training diverged (non-finite held-out risk); lower the learning rate");
        if (risk < best_risk - 1e-12) {
            best_risk = risk;
            best_params = model.params();
            stale = 0;
        } else if (++stale >= hyper.plateau_patience) {
            break;
        }
    }
    model.params() = best_params;
    return model;
}

}  // namespace fedshift
