#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

#include "caviar/dates.hpp"
#include "caviar/errors.hpp"
#include "caviar/panel.hpp"

namespace caviar {

/// Divergence guard for the quantile recursion.
inline constexpr double kMaxAbsQuantile = 1e6;

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

/// Per-quantile-level parameter set of the n-market CAViaR recursion
///   q_t = c + A |y_{t-1}| + B q_{t-1}.
/// A captures lagged-shock effects, B own/cross quantile persistence.
/// Flat order: c_1..c_n, A row-major, B row-major (length n + 2n^2).
struct CaviarParams {
    double level = 0.05;
    std::vector<double> c;  // n
    std::vector<double> A;  // n*n, row-major
    std::vector<double> B;  // n*n, row-major

    CaviarParams() = default;
    CaviarParams(double k, std::size_t n)
        : level(k), c(n, 0.0), A(n * n, 0.0), B(n * n, 0.0) {}

    std::size_t dim() const { return c.size(); }
    std::size_t flat_size() const { return c.size() + 2 * c.size() * c.size(); }

    double a(std::size_t i, std::size_t j) const { return A[i * dim() + j]; }
    double& a(std::size_t i, std::size_t j) { return A[i * dim() + j]; }
    double b(std::size_t i, std::size_t j) const { return B[i * dim() + j]; }
    double& b(std::size_t i, std::size_t j) { return B[i * dim() + j]; }

    void validate() const {
        if (!(level > 0.0 && level < 1.0)) throw ValidationError("params: level must be in (0,1)");
        const std::size_t n = dim();
        if (A.size() != n * n || B.size() != n * n)
            throw ShapeError("params: A/B size must be n^2");
        auto finite = [](const std::vector<double>& v) {
            return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
        };
        if (!finite(c) || !finite(A) || !finite(B))
            throw ValidationError("params: non-finite entry");
    }

    std::vector<double> flatten() const {
        std::vector<double> out;
        out.reserve(flat_size());
        out.insert(out.end(), c.begin(), c.end());
        out.insert(out.end(), A.begin(), A.end());
        out.insert(out.end(), B.begin(), B.end());
        return out;
    }

    static CaviarParams from_flat(double k, std::size_t n, std::span<const double> flat) {
        if (flat.size() != n + 2 * n * n)
            throw ShapeError("from_flat: expected n + 2n^2 = " + std::to_string(n + 2 * n * n) +
                             " values, got " + std::to_string(flat.size()));
        CaviarParams p(k, n);
        std::copy(flat.begin(), flat.begin() + static_cast<std::ptrdiff_t>(n), p.c.begin());
        std::copy(flat.begin() + static_cast<std::ptrdiff_t>(n),
                  flat.begin() + static_cast<std::ptrdiff_t>(n + n * n), p.A.begin());
        std::copy(flat.begin() + static_cast<std::ptrdiff_t>(n + n * n), flat.end(), p.B.begin());
        return p;
    }
};

/// Names of the flat parameter vector entries, 1-indexed: c1.., a11, a12, ..
inline std::vector<std::string> param_names(std::size_t n) {
    std::vector<std::string> names;
    names.reserve(n + 2 * n * n);
    for (std::size_t i = 0; i < n; ++i) names.push_back("c" + std::to_string(i + 1));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            names.push_back("a" + std::to_string(i + 1) + std::to_string(j + 1));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            names.push_back("b" + std::to_string(i + 1) + std::to_string(j + 1));
    return names;
}

/// Largest eigenvalue modulus of the n x n row-major matrix.
inline double spectral_radius(std::span<const double> m, std::size_t n) {
    Eigen::MatrixXd M(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            M(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = m[i * n + j];
    return M.eigenvalues().cwiseAbs().maxCoeff();
}

// ---------------------------------------------------------------------------
// Quantile paths
// ---------------------------------------------------------------------------

/// Conditional quantile path, same shape as the driving panel.
struct VarPath {
    std::vector<double> q;  // T*n, row-major
    double level = 0.05;
    std::vector<double> q0;
    std::size_t n = 0;

    std::size_t size() const { return n == 0 ? 0 : q.size() / n; }
    double at(std::size_t t, std::size_t i) const { return q[t * n + i]; }
    const double* row(std::size_t t) const { return q.data() + t * n; }

    std::vector<double> column(std::size_t i) const {
        std::vector<double> col(size());
        for (std::size_t t = 0; t < size(); ++t) col[t] = at(t, i);
        return col;
    }
};

namespace detail {

/// q_out = c + A|y_prev| + B q_prev, no checks. q_out must not alias inputs.
inline void caviar_step_into(const CaviarParams& p, const double* y_prev, const double* q_prev,
                             double* q_out) {
    const std::size_t n = p.dim();
    for (std::size_t i = 0; i < n; ++i) {
        double acc = p.c[i];
        const double* arow = p.A.data() + i * n;
        const double* brow = p.B.data() + i * n;
        for (std::size_t j = 0; j < n; ++j)
            acc += arow[j] * std::fabs(y_prev[j]) + brow[j] * q_prev[j];
        q_out[i] = acc;
    }
}

inline bool row_within_guard(const double* q, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i)
        if (!(std::fabs(q[i]) <= kMaxAbsQuantile)) return false;
    return true;
}

}  // namespace detail

/// One recursion step q_t = c + A|y_{t-1}| + B q_{t-1}.
inline std::vector<double> caviar_step(const CaviarParams& params, std::span<const double> y_prev,
                                       std::span<const double> q_prev) {
    params.validate();
    const std::size_t n = params.dim();
    if (y_prev.size() != n || q_prev.size() != n)
        throw ShapeError("caviar_step: input length must equal market count");
    for (std::size_t i = 0; i < n; ++i)
        if (!std::isfinite(y_prev[i]) || !std::isfinite(q_prev[i]))
            throw DomainError("caviar_step: non-finite input");
    std::vector<double> q(n);
    detail::caviar_step_into(params, y_prev.data(), q_prev.data(), q.data());
    return q;
}

/// Order-statistic quantile with linear interpolation (R type-7).
inline double empirical_quantile(std::vector<double> v, double k) {
    if (v.empty()) throw ValidationError("empirical_quantile: empty data");
    if (!(k > 0.0 && k < 1.0)) throw DomainError("empirical_quantile: k must be in (0,1)");
    std::sort(v.begin(), v.end());
    const double h = k * static_cast<double>(v.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(h);
    if (lo + 1 >= v.size()) return v.back();
    const double frac = h - static_cast<double>(lo);
    return v[lo] + frac * (v[lo + 1] - v[lo]);
}

/// Initial condition: explicit vector, or per-market empirical k-quantile
/// of the full panel when absent.
inline std::vector<double> initial_quantiles(const CaviarParams& params, const ReturnPanel& panel,
                                             const std::optional<std::vector<double>>& q0) {
    if (q0) {
        if (q0->size() != params.dim()) throw ShapeError("var_path: q0 length mismatch");
        return *q0;
    }
    std::vector<double> q(params.dim());
    for (std::size_t i = 0; i < params.dim(); ++i)
        q[i] = empirical_quantile(panel.column(i), params.level);
    return q;
}

/// Iterate the recursion over the panel: q_1 = q0, q_t = step(Y_{t-1}, q_{t-1}).
/// Throws ExplosivePathError when any |q_{t,i}| exceeds the guard.
inline VarPath var_path(const CaviarParams& params, const ReturnPanel& panel,
                        const std::optional<std::vector<double>>& q0 = std::nullopt) {
    params.validate();
    if (panel.size() == 0) throw ValidationError("var_path: empty panel");
    if (panel.market_count() != params.dim())
        throw ShapeError("var_path: market count mismatch");

    const std::size_t T = panel.size(), n = params.dim();
    VarPath path;
    path.level = params.level;
    path.n = n;
    path.q0 = initial_quantiles(params, panel, q0);
    path.q.resize(T * n);
    std::copy(path.q0.begin(), path.q0.end(), path.q.begin());
    for (std::size_t t = 1; t < T; ++t) {
        detail::caviar_step_into(params, panel.row(t - 1), &path.q[(t - 1) * n], &path.q[t * n]);
        if (!detail::row_within_guard(&path.q[t * n], n))
            throw ExplosivePathError(
                "var_path: |q| exceeded " + std::to_string(kMaxAbsQuantile) + " at t=" +
                    std::to_string(t + 1),
                t + 1);
    }
    return path;
}

// ---------------------------------------------------------------------------
// Simulation (location-scale DGP whose true conditional k-quantile is q_t)
// ---------------------------------------------------------------------------

enum class Innovation { standard_normal };

struct SimConfig {
    CaviarParams params;
    std::size_t T = 1000;
    std::uint64_t seed = 0;
    Innovation innovation = Innovation::standard_normal;
    Date start_date{2000, 1, 3};
    std::vector<std::string> market_names;  // defaults to M1..Mn
};

/// Draw Y_t = (q_t / z_k) eps_t with eps ~ N(0,1), updating the recursion
/// with realized |Y_t|; the true conditional k-quantile of Y_t is q_t.
/// The path starts at q_1 = c.
inline std::pair<ReturnPanel, VarPath> simulate(const SimConfig& config) {
    config.params.validate();
    if (config.T < 2) throw ValidationError("simulate: T must be >= 2");
    const std::size_t n = config.params.dim(), T = config.T;
    if (!config.market_names.empty() && config.market_names.size() != n)
        throw ShapeError("simulate: market_names length mismatch");
    if (spectral_radius(config.params.B, n) >= 1.0)
        std::cerr << "warning: spectral radius of B >= 1, simulated path may diverge\n";

    const double z_k = normal_quantile(config.params.level);
    if (z_k == 0.0) throw DomainError("simulate: k = 0.5 has no location-scale representation");

    ReturnPanel panel;
    panel.markets = config.market_names;
    if (panel.markets.empty())
        for (std::size_t i = 0; i < n; ++i) panel.markets.push_back("M" + std::to_string(i + 1));
    panel.dates.resize(T);
    for (std::size_t t = 0; t < T; ++t)
        panel.dates[t] = add_days(config.start_date, static_cast<std::int64_t>(t));
    panel.returns.resize(T * n);

    VarPath path;
    path.level = config.params.level;
    path.n = n;
    path.q0 = config.params.c;
    path.q.resize(T * n);

    std::mt19937_64 rng(config.seed);
    std::normal_distribution<double> nd(0.0, 1.0);

    std::copy(config.params.c.begin(), config.params.c.end(), path.q.begin());
    for (std::size_t t = 0; t < T; ++t) {
        double* qt = &path.q[t * n];
        double* yt = &panel.returns[t * n];
        for (std::size_t i = 0; i < n; ++i) {
            const double scale = qt[i] / z_k;
            if (!(scale > 0.0))
                throw DgpValidityError("simulate: q_{t,i} = " + std::to_string(qt[i]) +
                                       " has no positive scale at t=" + std::to_string(t + 1));
            yt[i] = scale * nd(rng);
        }
        if (t + 1 < T) {
            detail::caviar_step_into(config.params, yt, qt, &path.q[(t + 1) * n]);
            if (!detail::row_within_guard(&path.q[(t + 1) * n], n))
                throw ExplosivePathError("simulate: path diverged at t=" + std::to_string(t + 2),
                                         t + 2);
        }
    }
    return {std::move(panel), std::move(path)};
}

/// Fraction of periods with Y_t below q_t, per market.
inline std::vector<double> violation_rates(const ReturnPanel& panel, const VarPath& path) {
    if (panel.size() != path.size() || panel.market_count() != path.n)
        throw ShapeError("violation_rates: panel/path shape mismatch");
    std::vector<double> rates(path.n, 0.0);
    for (std::size_t t = 0; t < panel.size(); ++t)
        for (std::size_t i = 0; i < path.n; ++i)
            if (panel.at(t, i) < path.at(t, i)) rates[i] += 1.0;
    for (auto& r : rates) r /= static_cast<double>(panel.size());
    return rates;
}

}  // namespace caviar
