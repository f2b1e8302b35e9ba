#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "caviar/dates.hpp"
#include "caviar/errors.hpp"
#include "caviar/model.hpp"

namespace caviar {

// ---------------------------------------------------------------------------
// Pseudo-impulse responses
// ---------------------------------------------------------------------------

/// Difference between the shocked and baseline quantile paths after a single
/// return shock; row 0 is the first post-shock step.
struct IrfResult {
    std::size_t shocked_market = 0;
    double shock_size = 0.0;
    std::size_t horizon = 0;
    std::size_t n = 0;
    std::vector<double> responses;  // horizon x n, row-major
    std::vector<std::optional<std::size_t>> half_life;  // per market, 1-based step

    double at(std::size_t h, std::size_t i) const { return responses[h * n + i]; }

    std::vector<double> market_response(std::size_t i) const {
        std::vector<double> out(horizon);
        for (std::size_t h = 0; h < horizon; ++h) out[h] = at(h, i);
        return out;
    }
};

/// Counterfactual single-return shock to market j, propagated through the
/// recursion with future returns frozen at the baseline. Both paths are run
/// explicitly and differenced.
inline IrfResult pseudo_irf(const CaviarParams& params, std::span<const double> baseline_y,
                            std::span<const double> baseline_q, std::size_t j, double delta,
                            std::size_t horizon) {
    params.validate();
    const std::size_t n = params.dim();
    if (baseline_y.size() != n || baseline_q.size() != n)
        throw ShapeError("pseudo_irf: baseline length mismatch");
    if (j >= n) throw ValidationError("pseudo_irf: market index out of range");
    if (horizon < 1) throw ValidationError("pseudo_irf: horizon must be >= 1");
    if (!std::isfinite(delta)) throw DomainError("pseudo_irf: shock must be finite");

    std::vector<double> shocked_y(baseline_y.begin(), baseline_y.end());
    shocked_y[j] += delta;

    IrfResult out;
    out.shocked_market = j;
    out.shock_size = delta;
    out.horizon = horizon;
    out.n = n;
    out.responses.resize(horizon * n);

    std::vector<double> qb(baseline_q.begin(), baseline_q.end()), qb_next(n);
    std::vector<double> qs(baseline_q.begin(), baseline_q.end()), qs_next(n);
    for (std::size_t h = 0; h < horizon; ++h) {
        const double* yb = baseline_y.data();
        const double* ys = h == 0 ? shocked_y.data() : baseline_y.data();
        detail::caviar_step_into(params, yb, qb.data(), qb_next.data());
        detail::caviar_step_into(params, ys, qs.data(), qs_next.data());
        qb.swap(qb_next);
        qs.swap(qs_next);
        for (std::size_t i = 0; i < n; ++i) {
            const double d = qs[i] - qb[i];
            if (!(std::fabs(d) <= kMaxAbsQuantile) || !(std::fabs(qs[i]) <= kMaxAbsQuantile))
                throw ExplosivePathError("pseudo_irf: response diverged at h=" + std::to_string(h + 1),
                                         h + 1);
            out.responses[h * n + i] = d;
        }
    }

    out.half_life.assign(n, std::nullopt);
    for (std::size_t i = 0; i < n; ++i) {
        const double first = std::fabs(out.at(0, i));
        for (std::size_t h = 0; h < horizon; ++h) {
            if (std::fabs(out.at(h, i)) < 0.5 * first) {
                out.half_life[i] = h + 1;
                break;
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Directional comparison
// ---------------------------------------------------------------------------

enum class Dominance { first_to_second, second_to_first, tie };

/// Cross-market response summaries for shocks to i and to j.
struct SpilloverComparison {
    std::size_t market_i = 0;
    std::size_t market_j = 0;
    double peak_i_to_j = 0.0;  // response of j to a shock in i
    double peak_j_to_i = 0.0;
    std::optional<std::size_t> half_life_i_to_j;
    std::optional<std::size_t> half_life_j_to_i;
    Dominance peak_dominance = Dominance::tie;
    Dominance duration_dominance = Dominance::tie;
};

inline SpilloverComparison compare_spillover(const CaviarParams& params,
                                             std::span<const double> baseline_y,
                                             std::span<const double> baseline_q, std::size_t i,
                                             std::size_t j, double delta, std::size_t horizon) {
    if (i == j) throw ValidationError("compare_spillover: markets must differ");
    const IrfResult shock_i = pseudo_irf(params, baseline_y, baseline_q, i, delta, horizon);
    const IrfResult shock_j = pseudo_irf(params, baseline_y, baseline_q, j, delta, horizon);

    SpilloverComparison out;
    out.market_i = i;
    out.market_j = j;
    for (std::size_t h = 0; h < horizon; ++h) {
        out.peak_i_to_j = std::max(out.peak_i_to_j, std::fabs(shock_i.at(h, j)));
        out.peak_j_to_i = std::max(out.peak_j_to_i, std::fabs(shock_j.at(h, i)));
    }
    out.half_life_i_to_j = shock_i.half_life[j];
    out.half_life_j_to_i = shock_j.half_life[i];

    if (out.peak_i_to_j > out.peak_j_to_i)
        out.peak_dominance = Dominance::first_to_second;
    else if (out.peak_j_to_i > out.peak_i_to_j)
        out.peak_dominance = Dominance::second_to_first;

    // A response that never halves within the horizon outlasts one that does.
    const auto duration = [&](const std::optional<std::size_t>& hl) {
        return hl ? static_cast<double>(*hl) : std::numeric_limits<double>::infinity();
    };
    if (duration(out.half_life_i_to_j) > duration(out.half_life_j_to_i))
        out.duration_dominance = Dominance::first_to_second;
    else if (duration(out.half_life_j_to_i) > duration(out.half_life_i_to_j))
        out.duration_dominance = Dominance::second_to_first;
    return out;
}

// ---------------------------------------------------------------------------
// Threshold alerts
// ---------------------------------------------------------------------------

/// Raised when the fitted quantile is m times more extreme than its trailing
/// median. Scale-free: multiplying the whole path by a positive constant
/// leaves the alert set unchanged.
struct Alert {
    Date date;
    std::string market;
    double q = 0.0;
    double reference = 0.0;
    double severity = 0.0;  // q / reference, >= m
};

inline std::vector<Alert> generate_alerts(const VarPath& path, std::span<const Date> dates,
                                          std::span<const std::string> markets,
                                          std::size_t window = 60, double threshold = 1.5) {
    if (window < 5) throw ValidationError("alerts: window must be >= 5");
    if (!(threshold > 1.0)) throw ValidationError("alerts: threshold must exceed 1");
    if (dates.size() != path.size()) throw ShapeError("alerts: dates/path length mismatch");
    if (markets.size() != path.n) throw ShapeError("alerts: market labels mismatch");

    std::vector<Alert> alerts;
    std::vector<double> buf(window);
    for (std::size_t t = window; t < path.size(); ++t) {
        for (std::size_t i = 0; i < path.n; ++i) {
            for (std::size_t s = 0; s < window; ++s) buf[s] = path.at(t - window + s, i);
            std::nth_element(buf.begin(), buf.begin() + static_cast<std::ptrdiff_t>(window / 2),
                             buf.end());
            double ref = buf[window / 2];
            if (window % 2 == 0) {
                const double upper = ref;
                std::nth_element(buf.begin(),
                                 buf.begin() + static_cast<std::ptrdiff_t>(window / 2 - 1),
                                 buf.begin() + static_cast<std::ptrdiff_t>(window / 2));
                ref = 0.5 * (buf[window / 2 - 1] + upper);
            }
            const double q = path.at(t, i);
            if (ref < 0.0 && q <= threshold * ref)
                alerts.push_back(Alert{dates[t], markets[i], q, ref, q / ref});
        }
    }
    return alerts;  // already date-ordered: t ascends, markets inner
}

}  // namespace caviar
