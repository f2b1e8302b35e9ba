#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "caviar/csv.hpp"
#include "caviar/errors.hpp"
#include "caviar/model.hpp"
#include "caviar/objective.hpp"
#include "caviar/parallel.hpp"

namespace caviar {

// ---------------------------------------------------------------------------
// Convergence traces
// ---------------------------------------------------------------------------

struct TraceRecord {
    std::size_t iteration = 0;
    double best_loss = 0.0;
    std::optional<double> mean_loss;  // GA only
    std::optional<double> val_loss;   // GD only
    double millis = 0.0;
};

struct Trace {
    std::vector<TraceRecord> records;
};

/// `iter,best_loss,mean_loss,val_loss,millis` with empty fields where a
/// column does not apply. Timing is off by default so that seeded runs
/// export byte-identical traces.
inline std::string trace_csv(const Trace& trace, bool include_timing = false) {
    csv::Writer w("iter,best_loss,mean_loss,val_loss,millis");
    for (const auto& r : trace.records) {
        w.row({std::to_string(r.iteration), csv::format_double(r.best_loss),
               r.mean_loss ? csv::format_double(*r.mean_loss) : "",
               r.val_loss ? csv::format_double(*r.val_loss) : "",
               include_timing ? csv::format_double(r.millis) : ""});
    }
    return w.str();
}

// ---------------------------------------------------------------------------
// Gradient descent with early stopping
// ---------------------------------------------------------------------------

struct GdConfig {
    double learning_rate = 0.25;
    std::size_t max_iterations = 2000;
    std::size_t patience = 200;     // consecutive validation deteriorations
    double split = 0.8;             // chronological train fraction
    double h = 0.0;                 // smoothing bandwidth; 0 = auto from data
    std::uint64_t seed = 0;

    void validate() const {
        if (!(learning_rate > 0.0)) throw ValidationError("gd: learning rate must be positive");
        if (max_iterations == 0) throw ValidationError("gd: need at least one iteration");
        if (patience < 1) throw ValidationError("gd: patience must be >= 1");
        if (!(split > 0.0 && split < 1.0)) throw ValidationError("gd: split must be in (0,1)");
    }
};

/// Stops after `patience` consecutive evaluations above the best seen so far.
class EarlyStopper {
public:
    explicit EarlyStopper(std::size_t patience) : patience_(patience) {}

    bool should_stop(double validation_loss) {
        if (validation_loss < best_) {
            best_ = validation_loss;
            streak_ = 0;
            return false;
        }
        ++streak_;
        return streak_ >= patience_;
    }

    double best() const { return best_; }

private:
    std::size_t patience_;
    std::size_t streak_ = 0;
    double best_ = std::numeric_limits<double>::infinity();
};

/// One objective evaluation: train loss, its gradient, validation loss.
struct GdEvaluation {
    double train_loss = 0.0;
    std::vector<double> gradient;
    double val_loss = 0.0;
};

using GdObjective = std::function<GdEvaluation(std::span<const double>)>;

/// Steepest descent beta <- beta - r * grad, tracking the iterate with the
/// best validation loss. Aborts on a non-finite loss or gradient and returns
/// the best iterate seen up to that point.
inline std::pair<std::vector<double>, Trace> gradient_descent(const GdObjective& objective,
                                                              std::vector<double> beta,
                                                              const GdConfig& cfg) {
    cfg.validate();
    Trace trace;
    EarlyStopper stopper(cfg.patience);
    std::vector<double> best = beta;
    double best_val = std::numeric_limits<double>::infinity();

    for (std::size_t iter = 0; iter < cfg.max_iterations; ++iter) {
        const auto t0 = std::chrono::steady_clock::now();
        const GdEvaluation eval = objective(beta);
        if (eval.gradient.size() != beta.size())
            throw ShapeError("gradient_descent: gradient length mismatch");
        const bool finite = std::isfinite(eval.train_loss) && std::isfinite(eval.val_loss) &&
                            std::all_of(eval.gradient.begin(), eval.gradient.end(),
                                        [](double g) { return std::isfinite(g); });
        if (!finite) break;  // abort, keep last good iterate

        if (eval.val_loss < best_val) {
            best_val = eval.val_loss;
            best = beta;
        }
        TraceRecord rec;
        rec.iteration = iter;
        rec.best_loss = eval.train_loss;
        rec.val_loss = eval.val_loss;
        rec.millis = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                         .count();
        trace.records.push_back(rec);

        if (stopper.should_stop(eval.val_loss)) break;
        for (std::size_t m = 0; m < beta.size(); ++m)
            beta[m] -= cfg.learning_rate * eval.gradient[m];
    }
    return {std::move(best), std::move(trace)};
}

namespace detail {

/// Smoothed loss/gradient on the leading train rows plus validation loss on
/// the remainder, all along one recursion pass from t = 0.
struct SplitEvaluation {
    double train_loss = 0.0;
    double val_loss = 0.0;
    std::vector<double> train_gradient;
    bool finite = true;
};

inline SplitEvaluation split_loss_grad(const CaviarParams& params, const ReturnPanel& panel,
                                       double h, std::size_t train_rows,
                                       const std::vector<double>& q0) {
    const double k = params.level;
    const std::size_t n = params.dim(), T = panel.size(), p = params.flat_size();
    SplitEvaluation out;
    out.train_gradient.assign(p, 0.0);

    std::vector<double> q_prev = q0, q_next(n);
    std::vector<double> S(n * p, 0.0), S_next(n * p);

    for (std::size_t t = 0;; ++t) {
        const bool in_train = t < train_rows;
        for (std::size_t i = 0; i < n; ++i) {
            const double u = panel.at(t, i) - q_prev[i];
            const double rho = smoothed_pinball(k, u, h);
            if (in_train) {
                out.train_loss += rho;
                if (t > 0) {
                    const double coeff = -smoothed_pinball_derivative(k, u, h);
                    const double* srow = &S[i * p];
                    for (std::size_t m = 0; m < p; ++m) out.train_gradient[m] += coeff * srow[m];
                }
            } else {
                out.val_loss += rho;
            }
        }
        if (t + 1 >= T) break;

        if (t + 1 < train_rows) {
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
            S.swap(S_next);
        }
        caviar::detail::caviar_step_into(params, panel.row(t), q_prev.data(), q_next.data());
        if (!caviar::detail::row_within_guard(q_next.data(), n)) {
            out.finite = false;
            return out;
        }
        q_prev.swap(q_next);
    }
    out.train_loss /= static_cast<double>(train_rows);
    const double val_rows = static_cast<double>(T - train_rows);
    out.val_loss = val_rows > 0.0 ? out.val_loss / val_rows : out.train_loss;
    const double inv = 1.0 / static_cast<double>(train_rows);
    for (auto& g : out.train_gradient) g *= inv;
    return out;
}

}  // namespace detail

/// Fit the recursion by smoothed-loss gradient descent with a chronological
/// train/validation split; returns the iterate with the best validation loss.
inline std::pair<CaviarParams, Trace> gd_optimize(const ReturnPanel& panel,
                                                  const CaviarParams& init, const GdConfig& cfg) {
    cfg.validate();
    init.validate();
    if (panel.market_count() != init.dim()) throw ShapeError("gd_optimize: market count mismatch");
    const std::size_t T = panel.size();
    if (T < 3) throw ValidationError("gd_optimize: panel too short to split");
    std::size_t train_rows =
        static_cast<std::size_t>(std::llround(cfg.split * static_cast<double>(T)));
    train_rows = std::clamp<std::size_t>(train_rows, 2, T - 1);
    const double h = cfg.h > 0.0 ? cfg.h : default_bandwidth(panel);
    const std::vector<double> q0 = initial_quantiles(init, panel, std::nullopt);

    GdObjective objective = [&](std::span<const double> beta) {
        const CaviarParams p = CaviarParams::from_flat(init.level, init.dim(), beta);
        const auto ev = detail::split_loss_grad(p, panel, h, train_rows, q0);
        GdEvaluation out;
        if (!ev.finite) {
            out.train_loss = std::numeric_limits<double>::infinity();
            out.val_loss = std::numeric_limits<double>::infinity();
            out.gradient.assign(p.flat_size(), std::numeric_limits<double>::quiet_NaN());
            return out;
        }
        out.train_loss = ev.train_loss;
        out.val_loss = ev.val_loss;
        out.gradient = ev.train_gradient;
        return out;
    };

    auto [beta, trace] = gradient_descent(objective, init.flatten(), cfg);
    return {CaviarParams::from_flat(init.level, init.dim(), beta), std::move(trace)};
}

// ---------------------------------------------------------------------------
// Binary-chromosome genetic algorithm
// ---------------------------------------------------------------------------

struct GaConfig {
    std::size_t population = 500;
    std::size_t generations = 1000;
    std::size_t bits_per_param = 16;
    std::vector<double> lo{-3.0};   // per-parameter box; size 1 broadcasts
    std::vector<double> hi{3.0};
    double crossover_rate = 0.9;    // single-point
    double mutation_rate = -1.0;    // per bit; negative = 1/chromosome_length
    std::size_t elite_count = 2;
    std::uint64_t seed = 0;
    std::size_t jobs = 1;

    void validate() const {
        if (population < 2) throw ValidationError("ga: population must be >= 2");
        if (bits_per_param < 2) throw ValidationError("ga: bits per parameter must be >= 2");
        if (lo.empty() || hi.empty() || lo.size() != hi.size())
            throw ValidationError("ga: lo/hi bounds mismatch");
        for (std::size_t i = 0; i < lo.size(); ++i)
            if (!(lo[i] < hi[i])) throw ValidationError("ga: need lo < hi");
        if (!(crossover_rate >= 0.0 && crossover_rate <= 1.0))
            throw ValidationError("ga: crossover rate must be in [0,1]");
        if (mutation_rate > 1.0) throw ValidationError("ga: mutation rate must be <= 1");
        if (elite_count >= population) throw ValidationError("ga: too many elites");
    }

    double lo_at(std::size_t field) const { return lo.size() == 1 ? lo[0] : lo.at(field); }
    double hi_at(std::size_t field) const { return hi.size() == 1 ? hi[0] : hi.at(field); }
};

using Chromosome = std::vector<std::uint8_t>;  // one byte per bit, 0 or 1

/// Map consecutive MSB-first fields of bits_per_param bits onto
/// lo + v/(2^bits - 1) * (hi - lo).
inline std::vector<double> decode_bits(std::span<const std::uint8_t> bits, const GaConfig& cfg,
                                       std::size_t param_count) {
    if (bits.size() != cfg.bits_per_param * param_count)
        throw ShapeError("decode: expected " + std::to_string(cfg.bits_per_param * param_count) +
                         " bits, got " + std::to_string(bits.size()));
    const double denom = std::pow(2.0, static_cast<double>(cfg.bits_per_param)) - 1.0;
    std::vector<double> out(param_count);
    for (std::size_t f = 0; f < param_count; ++f) {
        double v = 0.0;
        for (std::size_t b = 0; b < cfg.bits_per_param; ++b)
            v = 2.0 * v + (bits[f * cfg.bits_per_param + b] ? 1.0 : 0.0);
        out[f] = cfg.lo_at(f) + v / denom * (cfg.hi_at(f) - cfg.lo_at(f));
    }
    return out;
}

inline CaviarParams decode_chromosome(std::span<const std::uint8_t> bits, const GaConfig& cfg,
                                      std::size_t n, double level = 0.05) {
    return CaviarParams::from_flat(level, n, decode_bits(bits, cfg, n + 2 * n * n));
}

struct GaOutcome {
    std::vector<double> best_decoded;
    Chromosome best_bits;
    double best_fitness = std::numeric_limits<double>::infinity();
    Trace trace;
};

/// Minimize fitness(decoded chromosome) with tournament-of-2 selection,
/// single-point crossover, per-bit mutation and elitism. Deterministic for a
/// given seed; fitness evaluations may run in parallel.
inline GaOutcome ga_minimize(const std::function<double(std::span<const double>)>& fitness,
                             const GaConfig& cfg, std::size_t param_count) {
    cfg.validate();
    const std::size_t L = cfg.bits_per_param * param_count;
    const double mut_rate =
        cfg.mutation_rate < 0.0 ? 1.0 / static_cast<double>(L) : cfg.mutation_rate;
    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    std::vector<Chromosome> pop(cfg.population, Chromosome(L));
    std::vector<double> fit(cfg.population);
    for (auto& ch : pop)
        for (auto& bit : ch) bit = static_cast<std::uint8_t>(rng() & 1u);

    const auto evaluate = [&](const std::vector<Chromosome>& group, std::vector<double>& out,
                              std::size_t first) {
        parallel_for(cfg.jobs, group.size() - first, [&](std::size_t idx) {
            out[first + idx] = fitness(decode_bits(group[first + idx], cfg, param_count));
        });
    };
    evaluate(pop, fit, 0);

    GaOutcome result;
    const auto update_best = [&]() {
        for (std::size_t i = 0; i < cfg.population; ++i) {
            if (fit[i] < result.best_fitness) {
                result.best_fitness = fit[i];
                result.best_bits = pop[i];
            }
        }
    };
    update_best();

    std::vector<std::size_t> order(cfg.population);
    std::vector<Chromosome> next(cfg.population);
    std::vector<double> next_fit(cfg.population);

    const auto tournament = [&]() -> std::size_t {
        const std::size_t a = rng() % cfg.population;
        const std::size_t b = rng() % cfg.population;
        if (fit[a] != fit[b]) return fit[a] < fit[b] ? a : b;
        return std::min(a, b);
    };

    const auto record = [&](std::size_t gen, double millis) {
        double best = std::numeric_limits<double>::infinity();
        double sum = 0.0;
        std::size_t finite_count = 0;
        for (std::size_t i = 0; i < cfg.population; ++i) {
            best = std::min(best, fit[i]);
            if (std::isfinite(fit[i])) {
                sum += fit[i];
                ++finite_count;
            }
        }
        TraceRecord rec;
        rec.iteration = gen;
        rec.best_loss = best;
        rec.mean_loss = finite_count > 0 ? sum / static_cast<double>(finite_count)
                                         : std::numeric_limits<double>::infinity();
        rec.millis = millis;
        result.trace.records.push_back(rec);
    };
    record(0, 0.0);

    for (std::size_t gen = 1; gen <= cfg.generations; ++gen) {
        const auto t0 = std::chrono::steady_clock::now();

        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return fit[a] < fit[b]; });
        for (std::size_t e = 0; e < cfg.elite_count; ++e) {
            next[e] = pop[order[e]];
            next_fit[e] = fit[order[e]];
        }

        for (std::size_t i = cfg.elite_count; i < cfg.population; i += 2) {
            const std::size_t pa = tournament();
            const std::size_t pb = tournament();
            Chromosome child_a = pop[pa];
            Chromosome child_b = pop[pb];
            if (unit(rng) < cfg.crossover_rate) {
                const std::size_t point = 1 + rng() % (L - 1);
                for (std::size_t bpos = point; bpos < L; ++bpos)
                    std::swap(child_a[bpos], child_b[bpos]);
            }
            for (auto& bit : child_a)
                if (unit(rng) < mut_rate) bit ^= 1u;
            for (auto& bit : child_b)
                if (unit(rng) < mut_rate) bit ^= 1u;
            next[i] = std::move(child_a);
            if (i + 1 < cfg.population) next[i + 1] = std::move(child_b);
        }

        pop.swap(next);
        evaluate(pop, fit, cfg.elite_count);
        for (std::size_t e = 0; e < cfg.elite_count; ++e) fit[e] = next_fit[e];
        update_best();
        record(gen, std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                        .count());
    }
    result.best_decoded = decode_bits(result.best_bits, cfg, param_count);
    return result;
}

/// GA front end for the recursion fit; fitness is the exact (h = 0) loss.
inline std::pair<CaviarParams, Trace> ga_optimize(const ReturnPanel& panel, const GaConfig& cfg,
                                                  double level) {
    const std::size_t n = panel.market_count();
    const std::size_t p = n + 2 * n * n;
    CaviarParams probe(level, n);
    const std::vector<double> q0 = initial_quantiles(probe, panel, std::nullopt);
    LossConfig loss_cfg;  // exact kernel

    const auto fitness = [&](std::span<const double> decoded) {
        const CaviarParams candidate = CaviarParams::from_flat(level, n, decoded);
        return model_loss(candidate, panel, loss_cfg, q0);
    };
    GaOutcome out = ga_minimize(fitness, cfg, p);
    return {CaviarParams::from_flat(level, n, out.best_decoded), std::move(out.trace)};
}

// ---------------------------------------------------------------------------
// Linear quantile regression (IRLS with epsilon-smoothed weights)
// ---------------------------------------------------------------------------

/// Minimize the regression-quantile objective with f_t = X_t beta. Weighted
/// least squares with weights |k - I(r<0)| / max(eps, |r|), annealing eps
/// toward zero; the fixed point is the k-th regression quantile.
inline std::vector<double> linear_qr(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double k,
                                     std::size_t max_iterations = 400) {
    if (!(k > 0.0 && k < 1.0)) throw DomainError("linear_qr: k must be in (0,1)");
    const Eigen::Index T = X.rows(), p = X.cols();
    if (y.size() != T) throw ShapeError("linear_qr: X/y row mismatch");
    if (T <= p) throw ValidationError("linear_qr: need more rows than columns");
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
    if (qr.rank() < p) throw NumericalError("linear_qr: design matrix is rank deficient");

    Eigen::VectorXd beta = qr.solve(y);  // OLS start
    // the epsilon floor is tied to the response scale so exact-fit data
    // (residuals at rounding level) cannot blow the weights up
    const double y_scale = std::max(1e-12, y.cwiseAbs().mean());
    const double eps_floor = 1e-12 * y_scale;
    double eps = std::max(1e-2 * (y - X * beta).cwiseAbs().mean(), eps_floor);

    for (std::size_t it = 0; it < max_iterations; ++it) {
        Eigen::VectorXd r = y - X * beta;
        Eigen::VectorXd w(T);
        for (Eigen::Index t = 0; t < T; ++t) {
            const double asym = r(t) < 0.0 ? (1.0 - k) : k;
            w(t) = asym / std::max(eps, std::fabs(r(t)));
        }
        const Eigen::MatrixXd Xw = w.asDiagonal() * X;
        Eigen::VectorXd beta_new = (X.transpose() * Xw).ldlt().solve(Xw.transpose() * y);
        if (!beta_new.allFinite()) break;
        const double step = (beta_new - beta).cwiseAbs().maxCoeff();
        beta = beta_new;
        if (step < 1e-14 * (1.0 + beta.cwiseAbs().maxCoeff()) && eps <= eps_floor) break;
        eps = std::max(eps_floor, eps * 0.5);
    }
    return std::vector<double>(beta.data(), beta.data() + p);
}

/// Intercept-only regression quantiles per market; the usual GD initializer
/// (A and B start at zero).
inline CaviarParams qr_initial_params(const ReturnPanel& panel, double level) {
    CaviarParams init(level, panel.market_count());
    Eigen::MatrixXd X = Eigen::MatrixXd::Ones(static_cast<Eigen::Index>(panel.size()), 1);
    for (std::size_t i = 0; i < panel.market_count(); ++i) {
        const std::vector<double> col = panel.column(i);
        Eigen::VectorXd y =
            Eigen::Map<const Eigen::VectorXd>(col.data(), static_cast<Eigen::Index>(col.size()));
        init.c[i] = linear_qr(X, y, level)[0];
    }
    return init;
}

/// Start menu for multistart descent: the plain intercept start plus starts
/// with generic own dynamics and the bivariate cross block pre-activated in
/// each sign pattern. The intercept start at A = B = 0 is a stationary point
/// in the spillover directions, so descent from it alone can settle in a
/// sign-flipped basin.
inline std::vector<CaviarParams> structured_starts(const ReturnPanel& panel, double level) {
    const CaviarParams qr = qr_initial_params(panel, level);
    std::vector<CaviarParams> starts{qr};
    if (panel.market_count() != 2) return starts;

    static constexpr double cross[][4] = {
        {0.25, 0.25, 0.25, 0.25}, {0.25, 0.25, 0.0, 0.0},   {0.0, 0.0, 0.25, 0.25},
        {-0.25, -0.25, 0.0, 0.0}, {0.0, 0.0, -0.25, -0.25}, {-0.25, -0.25, -0.25, -0.25},
        {0.25, -0.25, 0.25, -0.25},
    };
    for (const auto& x : cross) {
        CaviarParams p = qr;
        for (std::size_t i = 0; i < 2; ++i) {
            p.a(i, i) = -0.2;
            p.b(i, i) = 0.3;
            p.c[i] = qr.c[i] * 0.6;  // dynamics absorb part of the level
        }
        p.a(0, 1) = x[0];
        p.b(0, 1) = x[1];
        p.a(1, 0) = x[2];
        p.b(1, 0) = x[3];
        starts.push_back(std::move(p));
    }
    return starts;
}

/// Run descent from several starts in parallel and keep the iterate with the
/// lowest exact loss. Deterministic: start order fixes the tie-break.
inline std::pair<CaviarParams, Trace> gd_multistart(const ReturnPanel& panel,
                                                    const std::vector<CaviarParams>& starts,
                                                    const GdConfig& cfg, std::size_t jobs = 1) {
    if (starts.empty()) throw ValidationError("gd_multistart: no starts");
    std::vector<std::pair<CaviarParams, Trace>> fits(starts.size());
    std::vector<double> losses(starts.size(), std::numeric_limits<double>::infinity());
    parallel_for(jobs, starts.size(), [&](std::size_t s) {
        try {
            fits[s] = gd_optimize(panel, starts[s], cfg);
            losses[s] = model_loss(fits[s].first, panel);
        } catch (const Error&) {
            // unusable start; losses[s] stays infinite
        }
    });
    std::size_t best = 0;
    for (std::size_t s = 1; s < starts.size(); ++s)
        if (losses[s] < losses[best]) best = s;
    if (!std::isfinite(losses[best])) throw NumericalError("gd_multistart: every start failed");
    return std::move(fits[best]);
}

}  // namespace caviar
