#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedshift/dataset.hpp"
#include "fedshift/rng.hpp"

namespace fedshift {

enum class PredictorKind { Linear, Logistic, Mlp };
enum class LossKind { Squared, CrossEntropy };

inline std::string to_string(PredictorKind k) {
    switch (k) {
        case PredictorKind::Linear: return "linear";
        case PredictorKind::Logistic: return "logistic";
        case PredictorKind::Mlp: return "mlp";
    }
    return "?";
}

struct PredictorSpec {
    PredictorKind kind = PredictorKind::Logistic;
    int input_dim = 0;
    int output_dim = 1;
    int hidden = 32;   // mlp only
    bool bias = true;
};

// Parametric hypothesis with a flat parameter vector. Evaluation is const;
// gradient passes allocate their own scratch, so one predictor can be read
// from many threads.
class Predictor {
  public:
    Predictor() = default;  // empty placeholder; real instances come from the seeded ctor

    Predictor(const PredictorSpec& spec, std::uint64_t seed) : spec_(spec) {
        if (spec.input_dim < 1 || spec.output_dim < 1)
            throw std::invalid_argument("predictor dimensions must be positive");
        auto rng = make_stream(seed, "predictor_init");
        if (spec.kind == PredictorKind::Mlp) {
            if (spec.hidden < 1) throw std::invalid_argument("mlp hidden width must be positive");
            append_layer(rng, spec.hidden, spec.input_dim);
            append_layer(rng, spec.output_dim, spec.hidden);
        } else {
            append_layer(rng, spec.output_dim, spec.input_dim);
        }
    }

    const PredictorSpec& spec() const { return spec_; }
    std::vector<double>& params() { return params_; }
    const std::vector<double>& params() const { return params_; }

    // Raw outputs (logits for classification heads).
    std::vector<double> forward(const std::vector<double>& x) const {
        check_input(x);
        if (spec_.kind != PredictorKind::Mlp) return affine(x, 0, spec_.output_dim, spec_.input_dim);
        std::vector<double> h = affine(x, 0, spec_.hidden, spec_.input_dim);
        for (double& v : h) v = std::tanh(v);
        return affine(h, layer_size(spec_.hidden, spec_.input_dim), spec_.output_dim, spec_.hidden);
    }

    // dL/dout for one sample -> accumulates weight * dL/dparams into grad.
    void backprop(const std::vector<double>& x, const std::vector<double>& dout, double weight,
                  std::vector<double>& grad) const {
        if (spec_.kind != PredictorKind::Mlp) {
            accumulate_affine(grad, 0, x, dout, weight, spec_.input_dim);
            return;
        }
        const std::size_t off2 = layer_size(spec_.hidden, spec_.input_dim);
        std::vector<double> pre = affine(x, 0, spec_.hidden, spec_.input_dim);
        std::vector<double> h(pre.size());
        for (std::size_t i = 0; i < pre.size(); ++i) h[i] = std::tanh(pre[i]);
        accumulate_affine(grad, off2, h, dout, weight, spec_.hidden);
        // back through the head into the hidden activations
        const std::size_t stride2 =
            static_cast<std::size_t>(spec_.hidden) + (spec_.bias ? 1u : 0u);
        std::vector<double> dh(h.size(), 0.0);
        for (int o = 0; o < spec_.output_dim; ++o)
            for (int i = 0; i < spec_.hidden; ++i)
                dh[static_cast<std::size_t>(i)] +=
                    dout[static_cast<std::size_t>(o)] *
                    params_[off2 + static_cast<std::size_t>(o) * stride2 +
                            static_cast<std::size_t>(i)];
        for (std::size_t i = 0; i < dh.size(); ++i) dh[i] *= 1.0 - h[i] * h[i];
        accumulate_affine(grad, 0, x, dh, weight, spec_.input_dim);
    }

  private:
    PredictorSpec spec_;
    std::vector<double> params_;

    std::size_t layer_size(int out, int in) const {
        return static_cast<std::size_t>(out) *
                   (static_cast<std::size_t>(in) + (spec_.bias ? 1u : 0u));
    }

    void append_layer(std::mt19937_64& rng, int out, int in) {
        const double b = 1.0 / std::sqrt(static_cast<double>(in));
        std::uniform_real_distribution<double> unif(-b, b);
        const std::size_t n = layer_size(out, in);
        for (std::size_t i = 0; i < n; ++i) params_.push_back(unif(rng));
    }

    std::vector<double> affine(const std::vector<double>& in, std::size_t off, int n_out,
                               int n_in) const {
        const std::size_t stride = static_cast<std::size_t>(n_in) + (spec_.bias ? 1u : 0u);
        std::vector<double> out(static_cast<std::size_t>(n_out));
        for (int o = 0; o < n_out; ++o) {
            const std::size_t row = off + static_cast<std::size_t>(o) * stride;
            double v = spec_.bias ? params_[row + static_cast<std::size_t>(n_in)] : 0.0;
            for (int i = 0; i < n_in; ++i)
                v += params_[row + static_cast<std::size_t>(i)] * in[static_cast<std::size_t>(i)];
            out[static_cast<std::size_t>(o)] = v;
        }
        return out;
    }

    void accumulate_affine(std::vector<double>& grad, std::size_t off,
                           const std::vector<double>& in, const std::vector<double>& dout,
                           double weight, int n_in) const {
        const std::size_t stride = static_cast<std::size_t>(n_in) + (spec_.bias ? 1u : 0u);
        for (std::size_t o = 0; o < dout.size(); ++o) {
            const std::size_t row = off + o * stride;
            const double d = weight * dout[o];
            for (int i = 0; i < n_in; ++i)
                grad[row + static_cast<std::size_t>(i)] += d * in[static_cast<std::size_t>(i)];
            if (spec_.bias) grad[row + static_cast<std::size_t>(n_in)] += d;
        }
    }

    void check_input(const std::vector<double>& x) const {
        if (static_cast<int>(x.size()) != spec_.input_dim)
            throw std::invalid_argument("predictor input dimension mismatch");
    }
};

// Samples paired with per-example importance weights.
struct WeightedBatch {
    std::vector<const LabeledSample*> samples;
    std::vector<double> weights;

    void validate() const {
        if (samples.size() != weights.size())
            throw std::invalid_argument("weighted batch: sample/weight length mismatch");
        if (samples.empty()) throw std::invalid_argument("weighted batch: empty");
        for (double w : weights)
            if (!std::isfinite(w) || w < 0)
                throw std::invalid_argument("weighted batch: weights must be finite and >= 0");
    }
};

namespace detail {

inline double log_sum_exp(const std::vector<double>& v) {
    double m = v.front();
    for (double x : v) m = std::max(m, x);
    double s = 0;
    for (double x : v) s += std::exp(x - m);
    return m + std::log(s);
}

// loss value; fills dout when non-null
inline double sample_loss(const Predictor& p, const LabeledSample& s, LossKind kind,
                          std::vector<double>* dout) {
    std::vector<double> out = p.forward(s.x);
    for (double v : out)
        if (!std::isfinite(v)) throw std::runtime_error("predictor produced non-finite output");
    if (kind == LossKind::Squared) {
        if (out.size() != 1)
            throw std::invalid_argument("squared loss requires a scalar-output predictor");
        const double e = out[0] - s.target;
        if (dout) *dout = {2.0 * e};
        return e * e;
    }
    if (s.label < 0 || s.label >= static_cast<int>(out.size()))
        throw std::invalid_argument("label out of range for predictor head");
    const double lse = log_sum_exp(out);
    if (dout) {
        dout->resize(out.size());
        for (std::size_t c = 0; c < out.size(); ++c)
            (*dout)[c] = std::exp(out[c] - lse) - (static_cast<int>(c) == s.label ? 1.0 : 0.0);
    }
    return lse - out[static_cast<std::size_t>(s.label)];
}

}  // namespace detail

// (1/|batch|) * sum_i w_i * loss_i
inline double weighted_loss(const Predictor& p, const WeightedBatch& batch, LossKind kind) {
    batch.validate();
    double total = 0;
    for (std::size_t i = 0; i < batch.samples.size(); ++i)
        total += batch.weights[i] * detail::sample_loss(p, *batch.samples[i], kind, nullptr);
    return total / static_cast<double>(batch.samples.size());
}

inline std::vector<double> weighted_grad(const Predictor& p, const WeightedBatch& batch,
                                         LossKind kind) {
    batch.validate();
    std::vector<double> grad(p.params().size(), 0.0);
    std::vector<double> dout;
    const double inv_n = 1.0 / static_cast<double>(batch.samples.size());
    for (std::size_t i = 0; i < batch.samples.size(); ++i) {
        detail::sample_loss(p, *batch.samples[i], kind, &dout);
        p.backprop(batch.samples[i]->x, dout, batch.weights[i] * inv_n, grad);
    }
    return grad;
}

// Fraction of argmax-correct predictions; ties break toward the lowest class.
inline double accuracy(const Predictor& p, const std::vector<LabeledSample>& eval_set) {
    if (eval_set.empty()) throw std::invalid_argument("accuracy undefined on an empty eval set");
    if (p.spec().output_dim < 2)
        throw std::invalid_argument("accuracy requires a classification predictor");
    std::size_t correct = 0;
    for (const auto& s : eval_set) {
        std::vector<double> out = p.forward(s.x);
        int arg = 0;
        for (std::size_t c = 1; c < out.size(); ++c)
            if (out[c] > out[static_cast<std::size_t>(arg)]) arg = static_cast<int>(c);
        if (arg == s.label) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(eval_set.size());
}

}  // namespace fedshift
