#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "caviar/errors.hpp"
#include "caviar/model.hpp"
#include "caviar/panel.hpp"

namespace caviar {

// ---------------------------------------------------------------------------
// Loss configuration
// ---------------------------------------------------------------------------

/// h = 0 selects the exact (non-smooth) regression-quantile kernel.
/// level defaults to NaN = "inherit from the parameter set".
struct LossConfig {
    double level = std::numeric_limits<double>::quiet_NaN();
    double h = 0.0;
    std::vector<double> weights;  // per-market; empty = all ones

    double resolve_level(const CaviarParams& params) const {
        if (std::isnan(level)) return params.level;
        if (level != params.level)
            throw ValidationError("loss config level differs from parameter level");
        return level;
    }

    std::vector<double> resolve_weights(std::size_t n) const {
        if (weights.empty()) return std::vector<double>(n, 1.0);
        if (weights.size() != n) throw ShapeError("loss weights length mismatch");
        double total = 0.0;
        for (double w : weights) {
            if (w < 0.0) throw ValidationError("loss weights must be nonnegative");
            total += w;
        }
        if (total <= 0.0) throw ValidationError("loss weights must not all be zero");
        return weights;
    }
};

struct GradResult {
    double loss = 0.0;
    std::vector<double> gradient;  // n + 2n^2, flat order
};

// ---------------------------------------------------------------------------
// Pinball kernels
// ---------------------------------------------------------------------------

/// Exact kernel [k - I(u < 0)] * u, nonnegative for u = y - f.
inline double pinball_kernel(double k, double u) { return (k - (u < 0.0 ? 1.0 : 0.0)) * u; }

/// Mean regression-quantile loss (1/T) sum_t [k - I(y_t < f_t)](y_t - f_t).
inline double pinball_loss(double k, std::span<const double> y, std::span<const double> f) {
    if (y.size() != f.size()) throw ShapeError("pinball_loss: length mismatch");
    if (y.empty()) throw ValidationError("pinball_loss: empty input");
    double total = 0.0;
    for (std::size_t t = 0; t < y.size(); ++t) total += pinball_kernel(k, y[t] - f[t]);
    return total / static_cast<double>(y.size());
}

namespace detail {

// Overflow-safe softplus: ln(1 + e^x) = max(x,0) + log1p(e^{-|x|}).
inline double softplus(double x) {
    return std::fmax(x, 0.0) + std::log1p(std::exp(-std::fabs(x)));
}

// Logistic sigmoid 1 / (1 + e^{-x}), overflow-safe.
inline double sigmoid(double x) {
    if (x >= 0.0) {
        const double e = std::exp(-x);
        return 1.0 / (1.0 + e);
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace detail

/// Differentiable surrogate rho(u) = k*u + h*softplus(-u/h); converges to the
/// exact kernel as h -> 0 and stays within h*ln2 of it everywhere.
inline double smoothed_pinball(double k, double u, double h) {
    if (!(h > 0.0)) throw DomainError("smoothed_pinball: h must be positive");
    return k * u + h * detail::softplus(-u / h);
}

/// d rho / du = k - 1/(1 + e^{u/h}).
inline double smoothed_pinball_derivative(double k, double u, double h) {
    if (!(h > 0.0)) throw DomainError("smoothed_pinball: h must be positive");
    return k - detail::sigmoid(-u / h);
}

/// Default smoothing bandwidth: 1% of the pooled return standard deviation.
inline double default_bandwidth(const ReturnPanel& panel) {
    return 0.01 * moments(std::span<const double>(panel.returns)).std_dev;
}

// ---------------------------------------------------------------------------
// Model loss
// ---------------------------------------------------------------------------

/// Weighted sum over markets of the per-market quantile loss along the
/// recursion path. Explosive paths return +inf rather than throwing, so
/// optimizers can rank such candidates last.
inline double model_loss(const CaviarParams& params, const ReturnPanel& panel,
                         const LossConfig& cfg = {},
                         const std::optional<std::vector<double>>& q0 = std::nullopt) {
    params.validate();
    if (panel.market_count() != params.dim()) throw ShapeError("model_loss: market count mismatch");
    if (panel.size() == 0) throw ShapeError("model_loss: empty panel");
    const double k = cfg.resolve_level(params);
    const std::size_t n = params.dim(), T = panel.size();
    const std::vector<double> w = cfg.resolve_weights(n);

    std::vector<double> q_prev = initial_quantiles(params, panel, q0);
    std::vector<double> q_next(n);
    std::vector<double> acc(n, 0.0);

    const double* q = q_prev.data();
    for (std::size_t t = 0;; ++t) {
        for (std::size_t i = 0; i < n; ++i) {
            const double u = panel.at(t, i) - q[i];
            acc[i] += (cfg.h > 0.0) ? smoothed_pinball(k, u, cfg.h) : pinball_kernel(k, u);
        }
        if (t + 1 >= T) break;
        detail::caviar_step_into(params, panel.row(t), q, q_next.data());
        if (!detail::row_within_guard(q_next.data(), n))
            return std::numeric_limits<double>::infinity();
        q_prev.swap(q_next);
        q = q_prev.data();
    }

    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) loss += w[i] * (acc[i] / static_cast<double>(T));
    return loss;
}

/// Exact gradient of the smoothed objective by forward accumulation through
/// the recursion: S_t = D_t + B S_{t-1} with S_1 = 0, where D_t holds the
/// direct partials of c + A|Y_{t-1}| + B q_{t-1} with q_{t-1} fixed. On an
/// explosive path the loss is +inf and the gradient entries are NaN.
inline GradResult model_loss_grad(const CaviarParams& params, const ReturnPanel& panel,
                                  const LossConfig& cfg,
                                  const std::optional<std::vector<double>>& q0 = std::nullopt) {
    if (!(cfg.h > 0.0))
        throw DomainError("model_loss_grad: exact loss is non-differentiable, need h > 0");
    params.validate();
    if (panel.market_count() != params.dim())
        throw ShapeError("model_loss_grad: market count mismatch");
    if (panel.size() == 0) throw ShapeError("model_loss_grad: empty panel");
    const double k = cfg.resolve_level(params);
    const std::size_t n = params.dim(), T = panel.size(), p = params.flat_size();
    const std::vector<double> w = cfg.resolve_weights(n);

    GradResult out;
    out.gradient.assign(p, 0.0);

    std::vector<double> q_prev = initial_quantiles(params, panel, q0);
    std::vector<double> q_next(n);
    std::vector<double> S(n * p, 0.0), S_next(n * p);
    std::vector<double> acc(n, 0.0);

    for (std::size_t t = 0;; ++t) {
        for (std::size_t i = 0; i < n; ++i) {
            const double u = panel.at(t, i) - q_prev[i];
            acc[i] += smoothed_pinball(k, u, cfg.h);
            const double coeff = -w[i] * smoothed_pinball_derivative(k, u, cfg.h);
            if (t > 0) {
                const double* srow = &S[i * p];
                for (std::size_t m = 0; m < p; ++m) out.gradient[m] += coeff * srow[m];
            }
        }
        if (t + 1 >= T) break;

        // S_{t+1} = B * S_t + D_{t+1}
        for (std::size_t i = 0; i < n; ++i) {
            double* dst = &S_next[i * p];
            std::fill(dst, dst + p, 0.0);
            const double* brow = params.B.data() + i * n;
            for (std::size_t j = 0; j < n; ++j) {
                const double bij = brow[j];
                if (bij == 0.0) continue;
                const double* src = &S[j * p];
                for (std::size_t m = 0; m < p; ++m) dst[m] += bij * src[m];
            }
            dst[i] += 1.0;  // d/dc_i
            const double* y = panel.row(t);
            for (std::size_t j = 0; j < n; ++j) {
                dst[n + i * n + j] += std::fabs(y[j]);          // d/dA_ij
                dst[n + n * n + i * n + j] += q_prev[j];        // d/dB_ij
            }
        }
        detail::caviar_step_into(params, panel.row(t), q_prev.data(), q_next.data());
        if (!detail::row_within_guard(q_next.data(), n)) {
            out.loss = std::numeric_limits<double>::infinity();
            out.gradient.assign(p, std::numeric_limits<double>::quiet_NaN());
            return out;
        }
        q_prev.swap(q_next);
        S.swap(S_next);
    }

    out.loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) out.loss += w[i] * (acc[i] / static_cast<double>(T));
    const double inv_T = 1.0 / static_cast<double>(T);
    for (auto& g : out.gradient) g *= inv_T;
    return out;
}

}  // namespace caviar
