#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "caviar/distributions.hpp"
#include "caviar/errors.hpp"
#include "caviar/model.hpp"
#include "caviar/optimize.hpp"
#include "caviar/parallel.hpp"

namespace caviar {

// ---------------------------------------------------------------------------
// Bootstrap covariance
// ---------------------------------------------------------------------------

struct CovEstimate {
    std::vector<double> cov;  // p*p, row-major, symmetric
    std::size_t p = 0;
    std::vector<double> std_errors;
    std::size_t replicates_used = 0;
    std::size_t replicates_failed = 0;
    std::size_t block_length = 0;
    bool reliable = true;

    double at(std::size_t i, std::size_t j) const { return cov[i * p + j]; }
};

struct BootstrapConfig {
    std::size_t replicates = 200;
    std::size_t block_length = 0;  // 0 = ceil(T^{1/3})
    std::uint64_t seed = 0;
    double max_failure_fraction = 0.2;
    double max_step = 2.0;  // one-step replicate moves beyond this count as failures
    std::size_t jobs = 1;
};

/// Refits one resampled panel, warm-started at the original estimate.
using RefitFn = std::function<CaviarParams(const ReturnPanel&, const CaviarParams&)>;

/// Warm-started refit with a reduced gradient-descent budget.
inline RefitFn gd_refit(GdConfig cfg) {
    return [cfg](const ReturnPanel& panel, const CaviarParams& warm) {
        return gd_optimize(panel, warm, cfg).first;
    };
}

namespace detail {

// Stacked linearization of the quantile path around theta: row (t,i) holds
// dq_{t,i}/dtheta, response y_{t,i} - q_{t,i}(theta).
inline void linearized_design(const CaviarParams& params, const ReturnPanel& panel,
                              Eigen::MatrixXd& X, Eigen::VectorXd& e) {
    const std::size_t n = params.dim(), T = panel.size(), p = params.flat_size();
    X.resize(static_cast<Eigen::Index>(T * n), static_cast<Eigen::Index>(p));
    e.resize(static_cast<Eigen::Index>(T * n));

    std::vector<double> q_prev = initial_quantiles(params, panel, std::nullopt);
    std::vector<double> q_next(n);
    std::vector<double> S(n * p, 0.0), S_next(n * p);

    for (std::size_t t = 0;; ++t) {
        for (std::size_t i = 0; i < n; ++i) {
            const auto row = static_cast<Eigen::Index>(t * n + i);
            e(row) = panel.at(t, i) - q_prev[i];
            for (std::size_t m = 0; m < p; ++m)
                X(row, static_cast<Eigen::Index>(m)) = S[i * p + m];
        }
        if (t + 1 >= T) break;
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
            dst[i] += 1.0;
            const double* y = panel.row(t);
            for (std::size_t j = 0; j < n; ++j) {
                dst[n + i * n + j] += std::fabs(y[j]);
                dst[n + n * n + i * n + j] += q_prev[j];
            }
        }
        caviar::detail::caviar_step_into(params, panel.row(t), q_prev.data(), q_next.data());
        if (!caviar::detail::row_within_guard(q_next.data(), n))
            throw ExplosivePathError("linearized refit: path diverged", t + 2);
        q_prev.swap(q_next);
        S.swap(S_next);
    }
}

}  // namespace detail

/// One-step refit: linearize the path around the warm start and take the
/// regression-quantile step theta + argmin_d sum rho_k(e - X d). One linear
/// solve per replicate instead of a full nonlinear fit.
inline RefitFn linearized_refit() {
    return [](const ReturnPanel& panel, const CaviarParams& warm) {
        Eigen::MatrixXd X;
        Eigen::VectorXd e;
        detail::linearized_design(warm, panel, X, e);
        const std::vector<double> delta = linear_qr(X, e, warm.level);
        std::vector<double> flat = warm.flatten();
        for (std::size_t m = 0; m < flat.size(); ++m) flat[m] += delta[m];
        return CaviarParams::from_flat(warm.level, warm.dim(), flat);
    };
}

/// Rows of `panel` resampled in moving blocks; original dates are kept so the
/// replicate is still a valid panel.
inline ReturnPanel block_resample(const ReturnPanel& panel, std::size_t block_length,
                                  std::mt19937_64& rng) {
    const std::size_t T = panel.size(), n = panel.market_count();
    ReturnPanel out;
    out.dates = panel.dates;
    out.markets = panel.markets;
    out.returns.resize(T * n);
    std::uniform_int_distribution<std::size_t> start(0, T - block_length);
    std::size_t filled = 0;
    while (filled < T) {
        const std::size_t s = start(rng);
        const std::size_t take = std::min(block_length, T - filled);
        std::copy(panel.returns.begin() + static_cast<std::ptrdiff_t>(s * n),
                  panel.returns.begin() + static_cast<std::ptrdiff_t>((s + take) * n),
                  out.returns.begin() + static_cast<std::ptrdiff_t>(filled * n));
        filled += take;
    }
    return out;
}

namespace detail {

inline std::size_t resolve_block(const BootstrapConfig& cfg, std::size_t T) {
    std::size_t block = cfg.block_length;
    if (block == 0)
        block = static_cast<std::size_t>(std::ceil(std::cbrt(static_cast<double>(T))));
    if (block < 1 || block >= T) throw ValidationError("bootstrap: block length out of range");
    return block;
}

inline CovEstimate covariance_of_draws(const std::vector<std::vector<double>>& draws,
                                       const std::vector<std::uint8_t>& ok, std::size_t p,
                                       std::size_t block, double max_failure_fraction) {
    CovEstimate est;
    est.p = p;
    est.block_length = block;
    for (std::size_t r = 0; r < draws.size(); ++r)
        (ok[r] ? est.replicates_used : est.replicates_failed)++;
    if (static_cast<double>(est.replicates_failed) >
        max_failure_fraction * static_cast<double>(draws.size()))
        throw CovarianceUnreliableError(
            "bootstrap: " + std::to_string(est.replicates_failed) + " of " +
            std::to_string(draws.size()) + " replicate fits failed");

    est.cov.assign(p * p, 0.0);
    est.std_errors.assign(p, 0.0);
    const std::size_t m = est.replicates_used;
    if (m <= 1) {
        est.reliable = false;  // sample covariance is degenerate
        return est;
    }
    std::vector<double> mean(p, 0.0);
    for (std::size_t r = 0; r < draws.size(); ++r) {
        if (!ok[r]) continue;
        for (std::size_t i = 0; i < p; ++i) mean[i] += draws[r][i];
    }
    for (auto& v : mean) v /= static_cast<double>(m);
    for (std::size_t r = 0; r < draws.size(); ++r) {
        if (!ok[r]) continue;
        for (std::size_t i = 0; i < p; ++i) {
            const double di = draws[r][i] - mean[i];
            for (std::size_t j = i; j < p; ++j)
                est.cov[i * p + j] += di * (draws[r][j] - mean[j]);
        }
    }
    const double denom = static_cast<double>(m - 1);
    for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = i; j < p; ++j) {
            est.cov[i * p + j] /= denom;
            est.cov[j * p + i] = est.cov[i * p + j];
        }
    for (std::size_t i = 0; i < p; ++i) est.std_errors[i] = std::sqrt(est.cov[i * p + i]);
    return est;
}

}  // namespace detail

/// Moving-block bootstrap covariance of the flat parameter vector. Each
/// replicate draws from an indexed seed, so the result does not depend on
/// execution order or the number of worker threads.
inline CovEstimate bootstrap_cov(const ReturnPanel& panel, const CaviarParams& fitted,
                                 const RefitFn& refit, const BootstrapConfig& cfg) {
    if (cfg.replicates < 1) throw ValidationError("bootstrap: need at least one replicate");
    const std::size_t block = detail::resolve_block(cfg, panel.size());
    const std::size_t p = fitted.flat_size();
    std::vector<std::vector<double>> draws(cfg.replicates);
    std::vector<std::uint8_t> ok(cfg.replicates, 0);

    parallel_for(cfg.jobs, cfg.replicates, [&](std::size_t r) {
        std::mt19937_64 rng(mix_seed(cfg.seed, r));
        const ReturnPanel resampled = block_resample(panel, block, rng);
        try {
            const CaviarParams refitted = refit(resampled, fitted);
            const std::vector<double> flat = refitted.flatten();
            if (std::all_of(flat.begin(), flat.end(),
                            [](double v) { return std::isfinite(v); })) {
                draws[r] = flat;
                ok[r] = 1;
            }
        } catch (const Error&) {
            // failed replicate; counted below
        }
    });
    return detail::covariance_of_draws(draws, ok, p, block, cfg.max_failure_fraction);
}

/// Paired moving-block bootstrap on the fitted model's linearization: the
/// design dq_t/dtheta and residuals are built once on the original panel,
/// replicate time-blocks select rows of that linear quantile problem, and
/// each replicate takes one regression-quantile step from `fitted`. Captures
/// the estimator's local sampling variability without re-running the
/// recursion over chopped paths.
inline CovEstimate bootstrap_cov_linearized(const ReturnPanel& panel, const CaviarParams& fitted,
                                            const BootstrapConfig& cfg) {
    if (cfg.replicates < 1) throw ValidationError("bootstrap: need at least one replicate");
    const std::size_t T = panel.size(), n = panel.market_count();
    const std::size_t block = detail::resolve_block(cfg, T);
    const std::size_t p = fitted.flat_size();

    Eigen::MatrixXd X;
    Eigen::VectorXd e;
    detail::linearized_design(fitted, panel, X, e);
    const std::vector<double> center = fitted.flatten();

    std::vector<std::vector<double>> draws(cfg.replicates);
    std::vector<std::uint8_t> ok(cfg.replicates, 0);
    parallel_for(cfg.jobs, cfg.replicates, [&](std::size_t r) {
        std::mt19937_64 rng(mix_seed(cfg.seed, r));
        std::uniform_int_distribution<std::size_t> start(0, T - block);
        Eigen::MatrixXd Xr(static_cast<Eigen::Index>(T * n), static_cast<Eigen::Index>(p));
        Eigen::VectorXd er(static_cast<Eigen::Index>(T * n));
        std::size_t filled = 0;
        while (filled < T) {
            const std::size_t s = start(rng);
            const std::size_t take = std::min(block, T - filled);
            for (std::size_t t = 0; t < take; ++t) {
                for (std::size_t i = 0; i < n; ++i) {
                    const auto src = static_cast<Eigen::Index>((s + t) * n + i);
                    const auto dst = static_cast<Eigen::Index>((filled + t) * n + i);
                    Xr.row(dst) = X.row(src);
                    er(dst) = e(src);
                }
            }
            filled += take;
        }
        try {
            const std::vector<double> delta = linear_qr(Xr, er, fitted.level);
            std::vector<double> flat = center;
            bool local = true;
            for (std::size_t m = 0; m < p; ++m) {
                flat[m] += delta[m];
                local = local && std::isfinite(flat[m]) && std::fabs(delta[m]) <= cfg.max_step;
            }
            if (local) {
                draws[r] = std::move(flat);
                ok[r] = 1;
            }
        } catch (const Error&) {
            // failed replicate; counted below
        }
    });
    try {
        return detail::covariance_of_draws(draws, ok, p, block, cfg.max_failure_fraction);
    } catch (const CovarianceUnreliableError& e) {
        throw CovarianceUnreliableError(
            std::string(e.what()) +
            " (the fitted dynamics may be too close to degenerate for the one-step refit; "
            "try the gradient-descent refit instead)");
    }
}

// ---------------------------------------------------------------------------
// Wald tests
// ---------------------------------------------------------------------------

struct WaldTestResult {
    std::string hypothesis;              // restriction in text form, e.g. "a12=b12=0"
    std::string direction;               // what acceptance means for spillover
    std::vector<std::size_t> restriction;
    double statistic = 0.0;
    std::size_t df = 0;
    double p_value = 1.0;
    bool reject = false;
    double alpha = 0.05;
    bool used_pseudoinverse = false;
};

/// W = r' V_r^{-1} r for the restricted entries r of theta against zero.
/// A singular sub-covariance falls back to the Moore-Penrose inverse and
/// flags the result.
inline WaldTestResult wald_test(std::span<const double> theta_hat, const CovEstimate& cov,
                                std::vector<std::size_t> restriction, double alpha = 0.05) {
    if (restriction.empty()) throw ValidationError("wald: empty restriction set");
    if (theta_hat.size() != cov.p) throw ShapeError("wald: theta/covariance size mismatch");
    std::sort(restriction.begin(), restriction.end());
    if (std::adjacent_find(restriction.begin(), restriction.end()) != restriction.end())
        throw ValidationError("wald: duplicate restriction index");
    for (std::size_t idx : restriction)
        if (idx >= theta_hat.size()) throw ValidationError("wald: restriction index out of range");

    const auto q = static_cast<Eigen::Index>(restriction.size());
    Eigen::VectorXd r(q);
    Eigen::MatrixXd V(q, q);
    for (Eigen::Index i = 0; i < q; ++i) {
        r(i) = theta_hat[restriction[static_cast<std::size_t>(i)]];
        for (Eigen::Index j = 0; j < q; ++j)
            V(i, j) = cov.at(restriction[static_cast<std::size_t>(i)],
                             restriction[static_cast<std::size_t>(j)]);
    }

    WaldTestResult out;
    out.restriction = restriction;
    out.df = restriction.size();
    out.alpha = alpha;

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(V);
    const Eigen::VectorXd evals = eig.eigenvalues();
    const double tol = 1e-12 * std::max(1.0, evals.cwiseAbs().maxCoeff());
    Eigen::VectorXd inv_evals(q);
    for (Eigen::Index i = 0; i < q; ++i) {
        if (evals(i) > tol) {
            inv_evals(i) = 1.0 / evals(i);
        } else {
            inv_evals(i) = 0.0;
            out.used_pseudoinverse = true;
        }
    }
    const Eigen::VectorXd z = eig.eigenvectors().transpose() * r;
    out.statistic = (z.array().square() * inv_evals.array()).sum();
    out.p_value = chi2_sf(out.statistic, static_cast<int>(out.df));
    out.reject = out.p_value < alpha;
    return out;
}

/// The three bivariate cross-market hypotheses, in flat-order indices
/// [c1,c2,a11,a12,a21,a22,b11,b12,b21,b22]:
///   a12=a21=b12=b21=0, a21=b21=0, a12=b12=0  (df 4, 2, 2).
inline std::vector<WaldTestResult> spillover_suite(const CaviarParams& fitted,
                                                   const CovEstimate& cov, double alpha = 0.05) {
    if (fitted.dim() != 2) throw ShapeError("spillover_suite: needs a 2-market model");
    const std::vector<double> theta = fitted.flatten();

    struct Spec {
        const char* hypothesis;
        const char* direction;
        std::vector<std::size_t> idx;
    };
    const std::vector<Spec> specs = {
        {"a12=a21=b12=b21=0", "no cross-market spillover in either direction", {3, 4, 7, 8}},
        {"a21=b21=0", "no spillover from market 1 to market 2", {4, 8}},
        {"a12=b12=0", "no spillover from market 2 to market 1", {3, 7}},
    };
    std::vector<WaldTestResult> out;
    out.reserve(specs.size());
    for (const auto& s : specs) {
        WaldTestResult res = wald_test(theta, cov, s.idx, alpha);
        res.hypothesis = s.hypothesis;
        res.direction = s.direction;
        out.push_back(std::move(res));
    }
    return out;
}

}  // namespace caviar
