#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedshift/rng.hpp"

namespace fedshift {

enum class RatioModelKind { ClassTable, LinearSoftplus, MlpSoftplus };

inline std::string to_string(RatioModelKind k) {
    switch (k) {
        case RatioModelKind::ClassTable: return "class-table";
        case RatioModelKind::LinearSoftplus: return "linear-softplus";
        case RatioModelKind::MlpSoftplus: return "mlp-softplus";
    }
    return "?";
}

namespace detail {

inline double softplus(double s) {
    if (s > 30) return s;
    if (s < -30) return std::exp(s);
    return std::log1p(std::exp(s));
}
inline double sigmoid(double s) {
    if (s >= 0) return 1.0 / (1.0 + std::exp(-s));
    double e = std::exp(s);
    return e / (1.0 + e);
}

}  // namespace detail

// Nonnegative function r: X -> (floor, r_max]. A raw score is mapped through
// softplus and clamped, keeping outputs strictly positive and bounded as the
// divergence losses require. Gradients are zero where the clamp is active.
class RatioModel {
  public:
    static constexpr double kFloor = 1e-6;

    static RatioModel class_table(std::vector<std::vector<double>> centroids, double r_max) {
        if (centroids.empty()) throw std::invalid_argument("class table needs centroids");
        RatioModel m;
        m.kind_ = RatioModelKind::ClassTable;
        m.dim_ = static_cast<int>(centroids.front().size());
        m.centroids_ = std::move(centroids);
        // softplus(theta) == 1 at init
        m.params_.assign(m.centroids_.size(), std::log(std::expm1(1.0)));
        m.r_max_ = r_max;
        return m;
    }

    static RatioModel linear_softplus(int dim, double r_max, std::uint64_t seed) {
        RatioModel m;
        m.kind_ = RatioModelKind::LinearSoftplus;
        m.dim_ = dim;
        m.params_ = init_uniform(static_cast<std::size_t>(dim) + 1, dim, seed);
        m.r_max_ = r_max;
        return m;
    }

    static RatioModel mlp_softplus(int dim, int hidden, double r_max, std::uint64_t seed) {
        if (hidden < 1) throw std::invalid_argument("mlp needs hidden width >= 1");
        RatioModel m;
        m.kind_ = RatioModelKind::MlpSoftplus;
        m.dim_ = dim;
        m.hidden_ = hidden;
        const std::size_t n = static_cast<std::size_t>(hidden) * (static_cast<std::size_t>(dim) + 2) + 1;
        m.params_ = init_uniform(n, dim, seed);
        m.r_max_ = r_max;
        return m;
    }

    RatioModelKind kind() const { return kind_; }
    int input_dim() const { return dim_; }
    int hidden_width() const { return hidden_; }
    double r_max() const { return r_max_; }
    void set_r_max(double v) { r_max_ = v; }
    const std::vector<std::vector<double>>& centroids() const { return centroids_; }

    std::vector<double>& params() { return params_; }
    const std::vector<double>& params() const { return params_; }

    double evaluate(const std::vector<double>& x) const {
        double r = 0, s = 0;
        score(x, s);
        clampv(s, r);
        return r;
    }

    // Returns r(x) and fills grad with dr/dparams (same length as params()).
    double evaluate_with_grad(const std::vector<double>& x, std::vector<double>& grad) const {
        grad.assign(params_.size(), 0.0);
        double s = 0;
        std::vector<double> ds = score_with_grad(x, s);
        double r;
        const bool clamped = clampv(s, r);
        if (!clamped) {
            const double dr_ds = detail::sigmoid(s);
            for (std::size_t i = 0; i < grad.size(); ++i) grad[i] = dr_ds * ds[i];
        }
        return r;
    }

  private:
    RatioModelKind kind_ = RatioModelKind::LinearSoftplus;
    int dim_ = 0;
    int hidden_ = 0;
    double r_max_ = 0;
    std::vector<double> params_;
    std::vector<std::vector<double>> centroids_;

    static std::vector<double> init_uniform(std::size_t n, int fan_in, std::uint64_t seed) {
        auto rng = make_stream(seed, "ratio_init");
        const double b = 1.0 / std::sqrt(static_cast<double>(fan_in > 0 ? fan_in : 1));
        std::uniform_real_distribution<double> unif(-b, b);
        std::vector<double> p(n);
        for (double& v : p) v = unif(rng);
        return p;
    }

    // true if the clamp bound the output (gradient is zero there)
    bool clampv(double s, double& r) const {
        r = detail::softplus(s);
        if (r < kFloor) {
            r = kFloor;
            return true;
        }
        if (r > r_max_) {
            r = r_max_;
            return true;
        }
        return false;
    }

    int nearest_centroid(const std::vector<double>& x) const {
        int best = 0;
        double best_d = -1;
        for (std::size_t c = 0; c < centroids_.size(); ++c) {
            double d = 0;
            for (std::size_t j = 0; j < x.size(); ++j) {
                double t = x[j] - centroids_[c][j];
                d += t * t;
            }
            if (best_d < 0 || d < best_d) {
                best_d = d;
                best = static_cast<int>(c);
            }
        }
        return best;
    }

    void score(const std::vector<double>& x, double& s) const {
        check_dim(x);
        switch (kind_) {
            case RatioModelKind::ClassTable:
                s = params_[static_cast<std::size_t>(nearest_centroid(x))];
                return;
            case RatioModelKind::LinearSoftplus: {
                s = params_[static_cast<std::size_t>(dim_)];
                for (int j = 0; j < dim_; ++j)
                    s += params_[static_cast<std::size_t>(j)] * x[static_cast<std::size_t>(j)];
                return;
            }
            case RatioModelKind::MlpSoftplus: {
                s = mlp_forward(x, nullptr);
                return;
            }
        }
    }

    std::vector<double> score_with_grad(const std::vector<double>& x, double& s) const {
        check_dim(x);
        std::vector<double> g(params_.size(), 0.0);
        switch (kind_) {
            case RatioModelKind::ClassTable: {
                int c = nearest_centroid(x);
                s = params_[static_cast<std::size_t>(c)];
                g[static_cast<std::size_t>(c)] = 1.0;
                return g;
            }
            case RatioModelKind::LinearSoftplus: {
                s = params_[static_cast<std::size_t>(dim_)];
                for (int j = 0; j < dim_; ++j) {
                    s += params_[static_cast<std::size_t>(j)] * x[static_cast<std::size_t>(j)];
                    g[static_cast<std::size_t>(j)] = x[static_cast<std::size_t>(j)];
                }
                g[static_cast<std::size_t>(dim_)] = 1.0;
                return g;
            }
            case RatioModelKind::MlpSoftplus: {
                s = mlp_forward(x, &g);
                return g;
            }
        }
        return g;
    }

    // Layout: W1 (hidden x dim), b1 (hidden), W2 (hidden), b2 (1).
    double mlp_forward(const std::vector<double>& x, std::vector<double>* grad) const {
        const std::size_t h = static_cast<std::size_t>(hidden_);
        const std::size_t d = static_cast<std::size_t>(dim_);
        const std::size_t off_b1 = h * d;
        const std::size_t off_w2 = off_b1 + h;
        const std::size_t off_b2 = off_w2 + h;
        std::vector<double> hid(h);
        for (std::size_t i = 0; i < h; ++i) {
            double a = params_[off_b1 + i];
            for (std::size_t j = 0; j < d; ++j) a += params_[i * d + j] * x[j];
            hid[i] = std::tanh(a);
        }
        double s = params_[off_b2];
        for (std::size_t i = 0; i < h; ++i) s += params_[off_w2 + i] * hid[i];
        if (grad) {
            (*grad)[off_b2] = 1.0;
            for (std::size_t i = 0; i < h; ++i) {
                (*grad)[off_w2 + i] = hid[i];
                const double back = params_[off_w2 + i] * (1.0 - hid[i] * hid[i]);
                (*grad)[off_b1 + i] = back;
                for (std::size_t j = 0; j < d; ++j) (*grad)[i * d + j] = back * x[j];
            }
        }
        return s;
    }

    void check_dim(const std::vector<double>& x) const {
        if (static_cast<int>(x.size()) != dim_)
            throw std::invalid_argument("ratio model input dimension mismatch");
    }
};

}  // namespace fedshift
