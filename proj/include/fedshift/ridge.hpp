#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

#include "fedshift/rng.hpp"

namespace fedshift {

// Fixed-design weighted ridge problem with diagonal train/test second-moment
// spectra. The test spectrum defines the risk metric.
struct RidgeInstance {
    Eigen::MatrixXd X;
    Eigen::VectorXd weights;        // diagonal of W, >= 0
    Eigen::VectorXd y;
    double noise_var = 1.0;         // sigma_eps^2
    double lambda_reg = 1.0;
    Eigen::VectorXd theta_star;
    Eigen::VectorXd test_spectrum;  // diag(Sigma_te)
    Eigen::VectorXd train_spectrum; // diag(Sigma_tr), used by the conditions

    void validate() const {
        const auto n = X.rows();
        const auto d = X.cols();
        if (weights.size() != n || theta_star.size() != d || test_spectrum.size() != d)
            throw std::invalid_argument("ridge instance: dimension mismatch");
        if (!(lambda_reg >= 0)) throw std::invalid_argument("ridge instance: lambda_reg < 0");
        for (Eigen::Index i = 0; i < n; ++i)
            if (!(weights[i] >= 0)) throw std::invalid_argument("ridge instance: negative weight");
    }
};

// Per-coordinate training counts and importance weights of a one-hot design;
// lambda_reg fixes the shrinkage factors xi_i = lambda/(lambda + mu_i).
struct OneHotSpectrum {
    std::vector<long> mu;
    std::vector<double> w;
    double lambda_reg = 1.0;

    std::size_t dim() const { return mu.size(); }
    double xi(std::size_t i) const {
        return lambda_reg / (lambda_reg + static_cast<double>(mu[i]));
    }
    void validate() const {
        if (mu.size() != w.size() || mu.empty())
            throw std::invalid_argument("one-hot spectrum: size mismatch");
        if (!(lambda_reg > 0)) throw std::invalid_argument("one-hot spectrum: lambda_reg <= 0");
        long total = 0;
        for (std::size_t i = 0; i < mu.size(); ++i) {
            if (mu[i] < 0) throw std::invalid_argument("one-hot spectrum: negative count");
            if (!(w[i] >= 0)) throw std::invalid_argument("one-hot spectrum: negative weight");
            total += mu[i];
        }
        if (total == 0) throw std::invalid_argument("one-hot spectrum: no observations");
    }
};

namespace detail {

// Cholesky with an explicit near-singularity check; LLT alone accepts exact
// zero pivots.
inline Eigen::LLT<Eigen::MatrixXd> checked_llt(Eigen::MatrixXd A, const char* what) {
    Eigen::LLT<Eigen::MatrixXd> llt(std::move(A));
    bool bad = llt.info() != Eigen::Success;
    if (!bad) {
        const auto diag = llt.matrixLLT().diagonal();
        const double top = diag.maxCoeff();
        bad = !(diag.minCoeff() > 1e-12 * std::max(top, 1e-300));
    }
    if (bad)
        throw std::runtime_error(std::string(what) +
                                 ": singular regularized moment matrix (lambda too small)");
    return llt;
}

}  // namespace detail

// argmin_theta sum_i w_i (theta'x_i - y_i)^2 + lambda ||theta||^2
inline Eigen::VectorXd weighted_ridge_solve(const Eigen::MatrixXd& X, const Eigen::VectorXd& w,
                                            const Eigen::VectorXd& y, double lambda_reg) {
    if (X.rows() != w.size() || X.rows() != y.size())
        throw std::invalid_argument("weighted ridge: dimension mismatch");
    const Eigen::MatrixXd Xw = w.asDiagonal() * X;
    Eigen::MatrixXd A = X.transpose() * Xw;
    A.diagonal().array() += lambda_reg;
    auto llt = detail::checked_llt(std::move(A), "weighted ridge");
    return llt.solve(Xw.transpose() * y);
}

// Exact fixed-design bias and variance of the weighted ridge estimator by
// dense linear algebra.
inline std::pair<double, double> bias_variance_fixed(const RidgeInstance& inst) {
    inst.validate();
    const Eigen::MatrixXd Xw = inst.weights.asDiagonal() * inst.X;
    Eigen::MatrixXd A = inst.X.transpose() * Xw;
    A.diagonal().array() += inst.lambda_reg;
    const auto dims = A.rows();
    auto llt = detail::checked_llt(std::move(A), "bias/variance");
    const Eigen::MatrixXd Ainv = llt.solve(Eigen::MatrixXd::Identity(dims, dims));
    const Eigen::MatrixXd Ste = inst.test_spectrum.asDiagonal();
    const Eigen::VectorXd u = Ainv * inst.theta_star;
    const double bias = inst.lambda_reg * inst.lambda_reg * (u.transpose() * Ste * u).value();
    const Eigen::MatrixXd XtW2X =
        inst.X.transpose() * inst.weights.cwiseProduct(inst.weights).asDiagonal() * inst.X;
    const double variance = inst.noise_var * (Ainv * XtW2X * Ainv * Ste).trace();
    return {bias, variance};
}

// Closed-form one-hot bias and variance. Must agree with the matrix path on
// the induced design.
inline std::pair<double, double> bias_variance_onehot(const OneHotSpectrum& spec,
                                                      const std::vector<double>& theta_star,
                                                      double noise_var,
                                                      const std::vector<double>& test_spectrum) {
    spec.validate();
    if (theta_star.size() != spec.dim() || test_spectrum.size() != spec.dim())
        throw std::invalid_argument("one-hot bias/variance: dimension mismatch");
    double bias = 0, variance = 0;
    const double lam = spec.lambda_reg;
    for (std::size_t i = 0; i < spec.dim(); ++i) {
        const double mu = static_cast<double>(spec.mu[i]);
        const double denom = mu * spec.w[i] + lam;
        bias += lam * lam * theta_star[i] * theta_star[i] * test_spectrum[i] / (denom * denom);
        variance += noise_var * test_spectrum[i] * mu * spec.w[i] * spec.w[i] / (denom * denom);
    }
    return {bias, variance};
}

// The matrix instance induced by a one-hot spectrum: mu_i rows equal to e_i,
// all carrying the coordinate's weight.
inline RidgeInstance onehot_instance(const OneHotSpectrum& spec,
                                     const std::vector<double>& theta_star, double noise_var,
                                     const std::vector<double>& test_spectrum,
                                     const std::vector<double>& train_spectrum = {}) {
    spec.validate();
    long n = 0;
    for (long m : spec.mu) n += m;
    const auto d = static_cast<Eigen::Index>(spec.dim());
    RidgeInstance inst;
    inst.X = Eigen::MatrixXd::Zero(n, d);
    inst.weights = Eigen::VectorXd::Zero(n);
    Eigen::Index row = 0;
    for (Eigen::Index i = 0; i < d; ++i) {
        for (long r = 0; r < spec.mu[static_cast<std::size_t>(i)]; ++r, ++row) {
            inst.X(row, i) = 1.0;
            inst.weights(row) = spec.w[static_cast<std::size_t>(i)];
        }
    }
    inst.noise_var = noise_var;
    inst.lambda_reg = spec.lambda_reg;
    inst.theta_star = Eigen::Map<const Eigen::VectorXd>(theta_star.data(), d);
    inst.test_spectrum = Eigen::Map<const Eigen::VectorXd>(test_spectrum.data(), d);
    if (!train_spectrum.empty())
        inst.train_spectrum = Eigen::Map<const Eigen::VectorXd>(train_spectrum.data(), d);
    inst.y = inst.X * inst.theta_star;  // noiseless labels; MC adds noise per trial
    return inst;
}

struct MonteCarloRisk {
    double mean = 0;
    double std_error = 0;
    long trials = 0;
};

// Fixed-design Monte Carlo excess risk: only the label noise is resampled.
inline MonteCarloRisk excess_risk_mc(const RidgeInstance& inst, long num_trials,
                                     std::uint64_t seed) {
    inst.validate();
    if (num_trials < 2) throw std::invalid_argument("excess_risk_mc: need at least 2 trials");
    const Eigen::MatrixXd Xw = inst.weights.asDiagonal() * inst.X;
    Eigen::MatrixXd A = inst.X.transpose() * Xw;
    A.diagonal().array() += inst.lambda_reg;
    auto llt = detail::checked_llt(std::move(A), "excess_risk_mc");
    // theta_hat - theta_star = bias_vec + M eps
    const Eigen::MatrixXd M = llt.solve(Xw.transpose());
    const Eigen::VectorXd bias_vec =
        llt.solve(inst.X.transpose() * (Xw * inst.theta_star)) - inst.theta_star;

    auto rng = make_stream(seed, "ridge_mc");
    std::normal_distribution<double> gauss(0.0, 1.0);
    const double sd = std::sqrt(inst.noise_var);
    Eigen::VectorXd eps(inst.X.rows());
    // Welford keeps the spread exact when every trial lands on the same value
    double mean = 0, m2 = 0;
    for (long t = 0; t < num_trials; ++t) {
        for (Eigen::Index i = 0; i < eps.size(); ++i) eps[i] = sd * gauss(rng);
        const Eigen::VectorXd delta = bias_vec + M * eps;
        const double ex = delta.cwiseProduct(inst.test_spectrum).dot(delta);
        const double d1 = ex - mean;
        mean += d1 / static_cast<double>(t + 1);
        m2 += d1 * (ex - mean);
    }
    MonteCarloRisk out;
    out.trials = num_trials;
    out.mean = mean;
    out.std_error =
        std::sqrt(std::max(0.0, m2) / static_cast<double>(num_trials)) /
        std::sqrt(static_cast<double>(num_trials));
    return out;
}

// -- per-coordinate condition checks --

struct CoordinateVerdict {
    bool feasible = false;  // nonempty admissible weight interval
    bool holds = false;     // the coordinate's weight lies inside it
    double lower = 0, upper = 0;
};

struct Theorem2Report {
    std::vector<CoordinateVerdict> coords;
    bool holds = false;
    bool remark_interval_holds = false;  // equivalent eigenvalue-ratio form
    bool forms_agree = false;            // feasibility <=> interval membership per coordinate
};

// Sufficient condition for the weighted estimator to dominate unweighted
// ridge: sqrt(l'/l) - 1 <= w <= xi * sqrt(l/l') per coordinate. Also
// evaluates the equivalent interval form sqrt(l'/l) < (1+sqrt(1+4 xi))/2
// and reports whether the two agree on feasibility.
inline Theorem2Report theorem2_condition(const OneHotSpectrum& spec,
                                         const std::vector<double>& train_spectrum,
                                         const std::vector<double>& test_spectrum) {
    spec.validate();
    if (train_spectrum.size() != spec.dim() || test_spectrum.size() != spec.dim())
        throw std::invalid_argument("theorem2_condition: dimension mismatch");
    Theorem2Report rep;
    rep.holds = true;
    rep.remark_interval_holds = true;
    rep.forms_agree = true;
    for (std::size_t i = 0; i < spec.dim(); ++i) {
        if (!(train_spectrum[i] > 0 && test_spectrum[i] > 0))
            throw std::invalid_argument("theorem2_condition: spectra must be positive");
        const double s = std::sqrt(test_spectrum[i] / train_spectrum[i]);
        CoordinateVerdict v;
        v.lower = std::max(0.0, s - 1.0);
        v.upper = spec.xi(i) / s;
        v.feasible = v.lower <= v.upper;
        v.holds = s - 1.0 <= spec.w[i] && spec.w[i] <= v.upper;
        const double interval_hi = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * spec.xi(i)));
        const bool remark = s <= interval_hi;
        if (!remark) rep.remark_interval_holds = false;
        if (v.feasible != remark && std::abs(s - interval_hi) > 1e-12) rep.forms_agree = false;
        if (!v.holds) rep.holds = false;
        rep.coords.push_back(v);
    }
    return rep;
}

// Counterexample regime: when sqrt(l'/l) >= max(xi, 1-xi) and the weights sit
// below both stated caps, unweighted ridge dominates.
inline bool prop5_condition(const OneHotSpectrum& spec, const std::vector<double>& train_spectrum,
                            const std::vector<double>& test_spectrum) {
    spec.validate();
    if (train_spectrum.size() != spec.dim() || test_spectrum.size() != spec.dim())
        throw std::invalid_argument("prop5_condition: dimension mismatch");
    for (std::size_t i = 0; i < spec.dim(); ++i) {
        if (spec.mu[i] <= 0) throw std::invalid_argument("prop5_condition: needs mu_i > 0");
        if (!(train_spectrum[i] > 0 && test_spectrum[i] > 0))
            throw std::invalid_argument("prop5_condition: spectra must be positive");
        const double s = std::sqrt(test_spectrum[i] / train_spectrum[i]);
        const double xi = spec.xi(i);
        if (s < std::max(xi, 1.0 - xi)) return false;
        const double denom = (s - 1.0) / xi + 1.0;
        const double cap_var =
            denom > 0 ? 1.0 / denom : std::numeric_limits<double>::infinity();
        const double lam_over_mu = spec.lambda_reg / static_cast<double>(spec.mu[i]);
        const double cap_bias = s + lam_over_mu * s - lam_over_mu;
        if (!(spec.w[i] <= std::min(cap_var, cap_bias))) return false;
    }
    return true;
}

// -- eigenvalue-ratio report (empirical second moments) --

struct EigenRatioRow {
    int index = 0;
    double sqrt_ratio = 0;  // sqrt(test eigenvalue / train eigenvalue), both sorted descending
    double bound = 0;       // (1 + sqrt(1 + 4 xi)) / 2 with xi from n_train * train eigenvalue
    bool near_zero = false;
};

inline std::vector<EigenRatioRow> eigen_ratio_report(
    const std::vector<std::vector<double>>& train, const std::vector<std::vector<double>>& test,
    double lambda_reg = 1.0) {
    if (train.empty() || test.empty())
        throw std::invalid_argument("eigen report: empty sample sets");
    const auto d = static_cast<Eigen::Index>(train.front().size());
    auto second_moment = [d](const std::vector<std::vector<double>>& samples) {
        Eigen::MatrixXd M = Eigen::MatrixXd::Zero(d, d);
        for (const auto& row : samples) {
            Eigen::Map<const Eigen::VectorXd> x(row.data(), d);
            M.noalias() += x * x.transpose();
        }
        return Eigen::MatrixXd(M / static_cast<double>(samples.size()));
    };
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> tr(second_moment(train));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> te(second_moment(test));
    if (tr.info() != Eigen::Success || te.info() != Eigen::Success)
        throw std::runtime_error("eigen report: eigendecomposition failed");
    Eigen::VectorXd ltr = tr.eigenvalues().reverse();  // descending
    Eigen::VectorXd lte = te.eigenvalues().reverse();

    const double tol = 1e-12 * std::max(1.0, ltr.maxCoeff());
    Eigen::Index rank = 0;
    for (Eigen::Index i = 0; i < d; ++i)
        if (ltr[i] > tol) ++rank;

    std::vector<EigenRatioRow> rows;
    for (Eigen::Index i = 0; i < rank; ++i) {
        EigenRatioRow row;
        row.index = static_cast<int>(i);
        const double l = ltr[i];
        const double lp = std::max(0.0, lte[i]);
        row.sqrt_ratio = std::sqrt(lp / l);
        const double mu = static_cast<double>(train.size()) * l;
        const double xi = lambda_reg / (lambda_reg + mu);
        row.bound = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * xi));
        row.near_zero = l <= tol * 10 || lp <= tol * 10;
        rows.push_back(row);
    }
    return rows;
}

// -- random instances for the soundness sweeps --

struct OneHotComparison {
    OneHotSpectrum spectrum;
    std::vector<double> train_spectrum;
    std::vector<double> test_spectrum;
    std::vector<double> theta_star;
    double noise_var = 0.25;
};

namespace detail {

inline double log_uniform(std::mt19937_64& rng, double lo, double hi) {
    std::uniform_real_distribution<double> u(std::log(lo), std::log(hi));
    return std::exp(u(rng));
}

inline OneHotComparison sample_base(std::mt19937_64& rng, int dim) {
    OneHotComparison inst;
    std::uniform_int_distribution<int> d_pick(1, dim);
    const int d = d_pick(rng);
    inst.spectrum.lambda_reg = log_uniform(rng, 1e-2, 10.0);
    std::uniform_int_distribution<long> mu_pick(1, 50);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> nv(0.01, 1.0);
    for (int i = 0; i < d; ++i) {
        inst.spectrum.mu.push_back(mu_pick(rng));
        inst.spectrum.w.push_back(0.0);
        inst.train_spectrum.push_back(log_uniform(rng, 1e-2, 10.0));
        inst.test_spectrum.push_back(0.0);
        inst.theta_star.push_back(gauss(rng));
    }
    inst.noise_var = nv(rng);
    return inst;
}

}  // namespace detail

// Instance guaranteed to satisfy the dominance condition: per coordinate the
// test eigenvalue is redrawn until the weight interval is nonempty, then the
// weight is placed uniformly inside it.
inline OneHotComparison sample_theorem2_instance(std::mt19937_64& rng, int max_dim = 8) {
    OneHotComparison inst = detail::sample_base(rng, max_dim);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (std::size_t i = 0; i < inst.spectrum.dim(); ++i) {
        const double xi = inst.spectrum.xi(i);
        for (;;) {
            const double lp = detail::log_uniform(rng, 1e-2, 10.0);
            const double s = std::sqrt(lp / inst.train_spectrum[i]);
            const double lower = std::max(0.0, s - 1.0);
            const double upper = xi / s;
            if (lower <= upper) {
                inst.test_spectrum[i] = lp;
                inst.spectrum.w[i] = lower + unit(rng) * (upper - lower);
                break;
            }
        }
    }
    return inst;
}

// Instance guaranteed to satisfy the counterexample condition.
inline OneHotComparison sample_prop5_instance(std::mt19937_64& rng, int max_dim = 8) {
    OneHotComparison inst = detail::sample_base(rng, max_dim);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (std::size_t i = 0; i < inst.spectrum.dim(); ++i) {
        const double xi = inst.spectrum.xi(i);
        const double lam_over_mu =
            inst.spectrum.lambda_reg / static_cast<double>(inst.spectrum.mu[i]);
        for (;;) {
            const double lp = detail::log_uniform(rng, 1e-2, 10.0);
            const double s = std::sqrt(lp / inst.train_spectrum[i]);
            if (s < std::max(xi, 1.0 - xi)) continue;
            const double denom = (s - 1.0) / xi + 1.0;
            const double cap_var =
                denom > 0 ? 1.0 / denom : std::numeric_limits<double>::infinity();
            const double cap_bias = s + lam_over_mu * s - lam_over_mu;
            const double cap = std::min(cap_var, cap_bias);
            if (!(cap > 0)) continue;
            inst.test_spectrum[i] = lp;
            inst.spectrum.w[i] = unit(rng) * cap;
            if (inst.spectrum.w[i] > 0) break;
        }
    }
    return inst;
}

// Closed-form excess risk R = B + V of the instance's weighting and of the
// unweighted (w = 1) baseline.
inline std::pair<double, double> onehot_risks(const OneHotComparison& inst) {
    auto [b_hat, v_hat] = bias_variance_onehot(inst.spectrum, inst.theta_star, inst.noise_var,
                                               inst.test_spectrum);
    OneHotSpectrum erm = inst.spectrum;
    for (double& w : erm.w) w = 1.0;
    auto [b_erm, v_erm] =
        bias_variance_onehot(erm, inst.theta_star, inst.noise_var, inst.test_spectrum);
    return {b_hat + v_hat, b_erm + v_erm};
}

// Dense random instance for the decomposition identity check (not one-hot).
inline RidgeInstance sample_dense_instance(std::mt19937_64& rng, int max_dim = 8,
                                           int max_rows = 60) {
    std::uniform_int_distribution<int> d_pick(2, max_dim);
    const int d = d_pick(rng);
    std::uniform_int_distribution<int> n_pick(d + 2, max_rows);
    const int n = n_pick(rng);
    std::normal_distribution<double> gauss(0.0, 1.0);
    RidgeInstance inst;
    inst.X = Eigen::MatrixXd::NullaryExpr(n, d, [&]() { return gauss(rng); });
    inst.weights = Eigen::VectorXd::NullaryExpr(n, [&]() { return detail::log_uniform(rng, 0.1, 10.0); });
    inst.theta_star = Eigen::VectorXd::NullaryExpr(d, [&]() { return gauss(rng); });
    inst.test_spectrum =
        Eigen::VectorXd::NullaryExpr(d, [&]() { return detail::log_uniform(rng, 1e-2, 10.0); });
    inst.lambda_reg = detail::log_uniform(rng, 1e-2, 10.0);
    std::uniform_real_distribution<double> nv(0.01, 1.0);
    inst.noise_var = nv(rng);
    inst.y = inst.X * inst.theta_star;
    return inst;
}

}  // namespace fedshift
