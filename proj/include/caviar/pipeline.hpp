#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "caviar/csv.hpp"
#include "caviar/inference.hpp"
#include "caviar/irf_alert.hpp"
#include "caviar/model.hpp"
#include "caviar/objective.hpp"
#include "caviar/optimize.hpp"
#include "caviar/panel.hpp"

namespace caviar {

// ---------------------------------------------------------------------------
// Run configuration (flat key-value file, overridable by CLI flags)
// ---------------------------------------------------------------------------

struct RunConfig {
    std::vector<std::pair<std::string, std::string>> inputs;  // (market, csv path), ordered
    std::vector<double> levels{0.01};
    std::string optimizer = "gd";  // "gd" | "ga"
    double alpha = 0.05;
    std::uint64_t seed = 0;
    std::size_t jobs = 1;
    std::string out_dir = ".";
    bool time_trace = false;

    std::string credit_market;  // market 2 of every pair when set
    std::vector<std::pair<std::string, std::string>> pairs;  // explicit override

    GdConfig gd;
    GaConfig ga;
    BootstrapConfig bootstrap;
    std::string bootstrap_refit = "onestep";  // "onestep" | "gd"
    std::size_t bootstrap_refit_iterations = 60;

    double irf_shock = std::numeric_limits<double>::quiet_NaN();  // NaN = -3 x pair std
    std::size_t irf_horizon = 60;

    std::size_t alert_window = 60;
    double alert_threshold = 1.5;

    std::size_t sim_T = 1000;
    double sim_k = 0.05;
    std::vector<std::string> sim_markets{"M1", "M2"};
    std::string sim_params_path;  // optional flat-params CSV
};

namespace detail {

inline bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ValidationError("config: key '" + key + "' expects true/false");
}

inline double parse_num(const std::string& v, const std::string& key) {
    try {
        std::size_t used = 0;
        const double x = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ValidationError("config: key '" + key + "' expects a number, got '" + v + "'");
    }
}

inline std::uint64_t parse_u64(const std::string& v, const std::string& key) {
    try {
        std::size_t used = 0;
        const std::uint64_t x = std::stoull(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ValidationError("config: key '" + key + "' expects an unsigned integer");
    }
}

inline std::string trim(std::string s) {
    const auto issp = [](unsigned char c) { return c == ' ' || c == '\t'; };
    while (!s.empty() && issp(static_cast<unsigned char>(s.front()))) s.erase(s.begin());
    while (!s.empty() && issp(static_cast<unsigned char>(s.back()))) s.pop_back();
    return s;
}

}  // namespace detail

/// Apply one `key = value` setting.
inline void apply_config_key(RunConfig& cfg, const std::string& key, const std::string& value) {
    using detail::parse_bool;
    using detail::parse_num;
    using detail::parse_u64;

    if (key.rfind("input.", 0) == 0) {
        const std::string market = key.substr(6);
        if (market.empty()) throw ValidationError("config: empty market name in '" + key + "'");
        for (auto& [name, path] : cfg.inputs)
            if (name == market) {
                path = value;
                return;
            }
        cfg.inputs.emplace_back(market, value);
        return;
    }
    if (key == "levels") {
        cfg.levels.clear();
        for (const auto& f : csv::split(value)) {
            const double k = parse_num(detail::trim(f), key);
            if (!(k > 0.0 && k < 1.0)) throw ValidationError("config: levels must lie in (0,1)");
            cfg.levels.push_back(k);
        }
        if (cfg.levels.empty()) throw ValidationError("config: levels list is empty");
        return;
    }
    if (key == "optimizer") {
        if (value != "gd" && value != "ga")
            throw ValidationError("config: optimizer must be 'gd' or 'ga'");
        cfg.optimizer = value;
        return;
    }
    if (key == "alpha") { cfg.alpha = parse_num(value, key); return; }
    if (key == "seed") { cfg.seed = parse_u64(value, key); return; }
    if (key == "jobs") { cfg.jobs = static_cast<std::size_t>(parse_u64(value, key)); return; }
    if (key == "out") { cfg.out_dir = value; return; }
    if (key == "time_trace") { cfg.time_trace = parse_bool(value, key); return; }
    if (key == "credit") { cfg.credit_market = value; return; }
    if (key == "pairs") {
        cfg.pairs.clear();
        for (const auto& f : csv::split(value)) {
            const auto parts = csv::split(detail::trim(f), '/');
            if (parts.size() != 2 || parts[0].empty() || parts[1].empty())
                throw ValidationError("config: pairs entries look like M1/M2");
            cfg.pairs.emplace_back(parts[0], parts[1]);
        }
        return;
    }
    if (key == "gd.learning_rate") { cfg.gd.learning_rate = parse_num(value, key); return; }
    if (key == "gd.max_iterations") { cfg.gd.max_iterations = parse_u64(value, key); return; }
    if (key == "gd.patience") { cfg.gd.patience = parse_u64(value, key); return; }
    if (key == "gd.split") { cfg.gd.split = parse_num(value, key); return; }
    if (key == "gd.bandwidth") { cfg.gd.h = parse_num(value, key); return; }
    if (key == "ga.population") { cfg.ga.population = parse_u64(value, key); return; }
    if (key == "ga.generations") { cfg.ga.generations = parse_u64(value, key); return; }
    if (key == "ga.bits") { cfg.ga.bits_per_param = parse_u64(value, key); return; }
    if (key == "ga.lo") { cfg.ga.lo = {parse_num(value, key)}; return; }
    if (key == "ga.hi") { cfg.ga.hi = {parse_num(value, key)}; return; }
    if (key == "ga.crossover") { cfg.ga.crossover_rate = parse_num(value, key); return; }
    if (key == "ga.mutation") { cfg.ga.mutation_rate = parse_num(value, key); return; }
    if (key == "ga.elites") { cfg.ga.elite_count = parse_u64(value, key); return; }
    if (key == "bootstrap.replicates") { cfg.bootstrap.replicates = parse_u64(value, key); return; }
    if (key == "bootstrap.block") { cfg.bootstrap.block_length = parse_u64(value, key); return; }
    if (key == "bootstrap.refit") {
        if (value != "onestep" && value != "gd")
            throw ValidationError("config: bootstrap.refit must be 'onestep' or 'gd'");
        cfg.bootstrap_refit = value;
        return;
    }
    if (key == "bootstrap.refit_iterations") {
        cfg.bootstrap_refit_iterations = parse_u64(value, key);
        return;
    }
    if (key == "irf.shock") {
        cfg.irf_shock = (value == "auto") ? std::numeric_limits<double>::quiet_NaN()
                                          : parse_num(value, key);
        return;
    }
    if (key == "irf.horizon") { cfg.irf_horizon = parse_u64(value, key); return; }
    if (key == "alert.window") { cfg.alert_window = parse_u64(value, key); return; }
    if (key == "alert.threshold") { cfg.alert_threshold = parse_num(value, key); return; }
    if (key == "sim.T") { cfg.sim_T = parse_u64(value, key); return; }
    if (key == "sim.k") { cfg.sim_k = parse_num(value, key); return; }
    if (key == "sim.markets") {
        cfg.sim_markets.clear();
        for (const auto& f : csv::split(value)) cfg.sim_markets.push_back(detail::trim(f));
        return;
    }
    if (key == "sim.params") { cfg.sim_params_path = value; return; }
    throw ValidationError("config: unknown key '" + key + "'");
}

/// `key = value` lines; '#' starts a comment; blank lines ignored.
inline void load_config_file(RunConfig& cfg, const std::string& path) {
    const auto lines = csv::read_lines(path);
    for (std::size_t i = 0; i < lines.size(); ++i) {
        std::string line = lines[i];
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) throw ParseError(path, i + 1, "expected 'key = value'");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        try {
            apply_config_key(cfg, key, value);
        } catch (const ValidationError& e) {
            throw ParseError(path, i + 1, e.what());
        }
    }
}

// ---------------------------------------------------------------------------
// Shared pipeline pieces
// ---------------------------------------------------------------------------

struct FitResult {
    std::string pair_label;  // "M1/M2"
    std::string slug;        // "M1-M2_k0.01"
    CaviarParams params;
    double exact_loss = 0.0;
    Trace trace;
    CovEstimate cov;
    std::vector<std::string> stars;
};

inline std::string significance_stars(double estimate, double se) {
    if (!(se > 0.0)) return "";
    const double z = std::fabs(estimate) / se;
    if (z >= 2.576) return "***";
    if (z >= 1.96) return "**";
    if (z >= 1.645) return "*";
    return "";
}

namespace detail {

inline std::string level_slug(double level) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", level);
    return buf;
}

inline std::string pair_slug(const std::string& m1, const std::string& m2, double level) {
    return m1 + "-" + m2 + "_k" + level_slug(level);
}

inline std::filesystem::path out_path(const RunConfig& cfg, const std::string& file) {
    std::filesystem::create_directories(cfg.out_dir);
    return std::filesystem::path(cfg.out_dir) / file;
}

}  // namespace detail

/// Load, validate and align all configured input series; returns the panel
/// over the common trading days.
inline ReturnPanel load_panel(const RunConfig& cfg) {
    if (cfg.inputs.size() < 1) throw ValidationError("no input series configured");
    std::vector<RawSeries> series;
    series.reserve(cfg.inputs.size());
    for (const auto& [market, path] : cfg.inputs) series.push_back(read_series_csv(path, market));
    if (series.size() == 1) {
        series[0].validate();
        return log_returns(series);
    }
    return log_returns(align(series));
}

/// Market pairs to fit, as (market 1, market 2) index pairs into the panel.
/// Explicit `pairs` wins; otherwise every non-credit market pairs with the
/// credit market; with exactly two inputs the single listed pair is used.
inline std::vector<std::pair<std::size_t, std::size_t>> resolve_pairs(const RunConfig& cfg,
                                                                      const ReturnPanel& panel) {
    const auto index_of = [&](const std::string& name) -> std::size_t {
        for (std::size_t i = 0; i < panel.markets.size(); ++i)
            if (panel.markets[i] == name) return i;
        throw ValidationError("unknown market '" + name + "'");
    };
    std::vector<std::pair<std::size_t, std::size_t>> out;
    if (!cfg.pairs.empty()) {
        for (const auto& [a, b] : cfg.pairs) out.emplace_back(index_of(a), index_of(b));
    } else if (!cfg.credit_market.empty()) {
        const std::size_t credit = index_of(cfg.credit_market);
        for (std::size_t i = 0; i < panel.market_count(); ++i)
            if (i != credit) out.emplace_back(i, credit);
    } else if (panel.market_count() == 2) {
        out.emplace_back(0, 1);
    } else {
        throw ValidationError(
            "more than two markets: set 'credit = MARKET' or an explicit 'pairs = ...' list");
    }
    for (const auto& [a, b] : out)
        if (a == b) throw ValidationError("pair with identical markets");
    return out;
}

inline ReturnPanel select_markets(const ReturnPanel& panel, std::size_t i, std::size_t j) {
    ReturnPanel out;
    out.dates = panel.dates;
    out.markets = {panel.markets[i], panel.markets[j]};
    out.returns.resize(panel.size() * 2);
    for (std::size_t t = 0; t < panel.size(); ++t) {
        out.returns[t * 2] = panel.at(t, i);
        out.returns[t * 2 + 1] = panel.at(t, j);
    }
    return out;
}

/// Fit one market pair at one level with the configured optimizer, then
/// attach the bootstrap covariance.
inline FitResult fit_pair(const ReturnPanel& pair_panel, double level, const RunConfig& cfg,
                          std::uint64_t fit_seed) {
    FitResult fit;
    fit.pair_label = pair_panel.markets[0] + "/" + pair_panel.markets[1];
    fit.slug = detail::pair_slug(pair_panel.markets[0], pair_panel.markets[1], level);

    GdConfig gd = cfg.gd;
    gd.seed = fit_seed;
    if (cfg.optimizer == "ga") {
        GaConfig ga = cfg.ga;
        ga.seed = fit_seed;
        ga.jobs = cfg.jobs;
        auto [params, trace] = ga_optimize(pair_panel, ga, level);
        fit.params = std::move(params);
        fit.trace = std::move(trace);
    } else {
        const CaviarParams init = qr_initial_params(pair_panel, level);
        auto [params, trace] = gd_optimize(pair_panel, init, gd);
        fit.params = std::move(params);
        fit.trace = std::move(trace);
    }
    fit.exact_loss = model_loss(fit.params, pair_panel, LossConfig{});

    BootstrapConfig boot = cfg.bootstrap;
    boot.seed = mix_seed(fit_seed, 0xb00757);
    boot.jobs = cfg.jobs;
    if (cfg.bootstrap_refit == "gd") {
        GdConfig refit = gd;
        refit.max_iterations = cfg.bootstrap_refit_iterations;
        refit.patience = cfg.bootstrap_refit_iterations;
        fit.cov = bootstrap_cov(pair_panel, fit.params, gd_refit(refit), boot);
    } else {
        fit.cov = bootstrap_cov_linearized(pair_panel, fit.params, boot);
    }

    const std::vector<double> flat = fit.params.flatten();
    fit.stars.reserve(flat.size());
    for (std::size_t i = 0; i < flat.size(); ++i)
        fit.stars.push_back(significance_stars(flat[i], fit.cov.std_errors[i]));
    return fit;
}

// ---------------------------------------------------------------------------
// Fit artifact files
// ---------------------------------------------------------------------------

inline std::string flat_params_csv(const CaviarParams& params) {
    const auto names = param_names(params.dim());
    std::string header = "k,n";
    for (const auto& n : names) header += "," + n;
    csv::Writer w(header);
    std::vector<std::string> row{csv::format_double(params.level),
                                 std::to_string(params.dim())};
    for (double v : params.flatten()) row.push_back(csv::format_double(v));
    w.row(row);
    return w.str();
}

inline CaviarParams read_flat_params_csv(const std::string& path) {
    const auto lines = csv::read_lines(path);
    if (lines.size() < 2) throw ParseError(path, 1, "expected a header and one row");
    const auto fields = csv::split(lines[1]);
    if (fields.size() < 2) throw ParseError(path, 2, "expected k,n,...");
    const double k = csv::parse_double(fields[0], path, 2);
    const auto n = static_cast<std::size_t>(csv::parse_double(fields[1], path, 2));
    if (fields.size() != 2 + n + 2 * n * n)
        throw ParseError(path, 2, "expected " + std::to_string(2 + n + 2 * n * n) + " fields");
    std::vector<double> flat;
    flat.reserve(n + 2 * n * n);
    for (std::size_t i = 2; i < fields.size(); ++i)
        flat.push_back(csv::parse_double(fields[i], path, 2));
    return CaviarParams::from_flat(k, n, flat);
}

inline std::string cov_csv(const CovEstimate& cov, std::size_t n) {
    const auto names = param_names(n);
    std::string header = "param";
    for (const auto& nm : names) header += "," + nm;
    csv::Writer w(header);
    for (std::size_t i = 0; i < cov.p; ++i) {
        std::vector<std::string> row{names[i]};
        for (std::size_t j = 0; j < cov.p; ++j) row.push_back(csv::format_double(cov.at(i, j)));
        w.row(row);
    }
    return w.str();
}

inline CovEstimate read_cov_csv(const std::string& path) {
    const auto lines = csv::read_lines(path);
    if (lines.size() < 2) throw ParseError(path, 1, "expected header and matrix rows");
    CovEstimate cov;
    cov.p = lines.size() - 1;
    cov.cov.assign(cov.p * cov.p, 0.0);
    for (std::size_t i = 0; i < cov.p; ++i) {
        const auto fields = csv::split(lines[i + 1]);
        if (fields.size() != cov.p + 1)
            throw ParseError(path, i + 2, "expected " + std::to_string(cov.p + 1) + " fields");
        for (std::size_t j = 0; j < cov.p; ++j)
            cov.cov[i * cov.p + j] = csv::parse_double(fields[j + 1], path, i + 2);
    }
    cov.std_errors.resize(cov.p);
    for (std::size_t i = 0; i < cov.p; ++i) cov.std_errors[i] = std::sqrt(cov.at(i, i));
    return cov;
}

inline std::string params_table_csv(const FitResult& fit, double level) {
    csv::Writer w("pair,level,param,estimate,se,stars");
    const auto names = param_names(fit.params.dim());
    const auto flat = fit.params.flatten();
    for (std::size_t i = 0; i < flat.size(); ++i) {
        w.row({fit.pair_label, detail::level_slug(level), names[i], csv::format_double(flat[i]),
               csv::format_double(fit.cov.std_errors[i]), fit.stars[i]});
    }
    return w.str();
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

/// stats: descriptive table over all configured inputs.
inline std::filesystem::path cmd_stats(const RunConfig& cfg) {
    const ReturnPanel panel = load_panel(cfg);
    const DescriptiveStats stats = describe(panel);
    const auto path = detail::out_path(cfg, "stats.csv");
    csv::write_file(path.string(), stats_table_csv(stats));
    return path;
}

/// simulate: synthetic price files in the exact input format, plus the true
/// generating parameters.
inline std::vector<std::filesystem::path> cmd_simulate(const RunConfig& cfg) {
    SimConfig sim;
    sim.T = cfg.sim_T;
    sim.seed = mix_seed(cfg.seed, 0x51b);
    sim.market_names = cfg.sim_markets;
    const std::size_t n = cfg.sim_markets.size();
    if (n < 1) throw ValidationError("sim.markets must name at least one market");
    if (!cfg.sim_params_path.empty()) {
        sim.params = read_flat_params_csv(cfg.sim_params_path);
        if (sim.params.dim() != n)
            throw ValidationError("sim.params dimension does not match sim.markets");
    } else {
        sim.params = CaviarParams(cfg.sim_k, n);
        for (std::size_t i = 0; i < n; ++i) {
            sim.params.c[i] = -0.4;
            sim.params.a(i, i) = -0.2;
            sim.params.b(i, i) = 0.6;
        }
        if (n >= 2) {  // mild default cross effects
            sim.params.a(0, 1) = -0.05;
            sim.params.b(0, 1) = 0.05;
        }
    }

    const auto [panel, path] = simulate(sim);
    std::vector<std::filesystem::path> written;
    for (std::size_t i = 0; i < n; ++i) {
        RawSeries series{panel.markets[i], {}};
        series.observations.reserve(panel.size() + 1);
        double price = 100.0;
        series.observations.push_back({add_days(sim.start_date, -1), price});
        for (std::size_t t = 0; t < panel.size(); ++t) {
            price *= std::exp(panel.at(t, i) / 100.0);
            series.observations.push_back({panel.dates[t], price});
        }
        const auto file = detail::out_path(cfg, "sim_" + panel.markets[i] + ".csv");
        write_series_csv(file.string(), series);
        written.push_back(file);
    }
    const auto pfile = detail::out_path(cfg, "sim_params.csv");
    csv::write_file(pfile.string(), flat_params_csv(sim.params));
    written.push_back(pfile);
    return written;
}

/// fit: per pair and level, estimate, bootstrap the covariance and write
/// the parameter table, flat row, covariance matrix and trace.
inline std::vector<FitResult> cmd_fit(const RunConfig& cfg) {
    const ReturnPanel panel = load_panel(cfg);
    const auto pairs = resolve_pairs(cfg, panel);
    std::vector<FitResult> fits;
    std::size_t counter = 0;
    for (const auto& [i, j] : pairs) {
        const ReturnPanel pair_panel = select_markets(panel, i, j);
        for (double level : cfg.levels) {
            const std::uint64_t fit_seed = mix_seed(cfg.seed, 0xf17 + counter++);
            FitResult fit = fit_pair(pair_panel, level, cfg, fit_seed);
            csv::write_file(detail::out_path(cfg, "fit_" + fit.slug + ".params.csv").string(),
                            params_table_csv(fit, level));
            csv::write_file(detail::out_path(cfg, "fit_" + fit.slug + ".flat.csv").string(),
                            flat_params_csv(fit.params));
            csv::write_file(detail::out_path(cfg, "fit_" + fit.slug + ".cov.csv").string(),
                            cov_csv(fit.cov, fit.params.dim()));
            csv::write_file(detail::out_path(cfg, "fit_" + fit.slug + ".trace.csv").string(),
                            trace_csv(fit.trace, cfg.time_trace));
            fits.push_back(std::move(fit));
        }
    }
    return fits;
}

namespace detail {

inline std::string require_artifact(const RunConfig& cfg, const std::string& file) {
    const auto path = std::filesystem::path(cfg.out_dir) / file;
    if (!std::filesystem::exists(path))
        throw Error("missing fit artifact '" + path.string() + "'; run the fit command first");
    return path.string();
}

struct PairArtifacts {
    std::string label;
    std::string slug;
    CaviarParams params;
    ReturnPanel panel;  // the two paired columns
};

inline std::vector<PairArtifacts> load_pair_artifacts(const RunConfig& cfg, double level) {
    const ReturnPanel panel = load_panel(cfg);
    const auto pairs = resolve_pairs(cfg, panel);
    std::vector<PairArtifacts> out;
    for (const auto& [i, j] : pairs) {
        PairArtifacts art;
        art.panel = select_markets(panel, i, j);
        art.label = art.panel.markets[0] + "/" + art.panel.markets[1];
        art.slug = pair_slug(art.panel.markets[0], art.panel.markets[1], level);
        art.params = read_flat_params_csv(require_artifact(cfg, "fit_" + art.slug + ".flat.csv"));
        out.push_back(std::move(art));
    }
    return out;
}

}  // namespace detail

/// test: the three joint spillover hypotheses per pair, one file per level.
inline std::vector<std::filesystem::path> cmd_test(const RunConfig& cfg) {
    std::vector<std::filesystem::path> written;
    for (double level : cfg.levels) {
        csv::Writer w("model,hypothesis,chi2,df,pvalue,decision");
        for (const auto& art : detail::load_pair_artifacts(cfg, level)) {
            CovEstimate cov =
                read_cov_csv(detail::require_artifact(cfg, "fit_" + art.slug + ".cov.csv"));
            for (const auto& res : spillover_suite(art.params, cov, cfg.alpha)) {
                w.row({art.label, res.hypothesis, csv::format_double(res.statistic),
                       std::to_string(res.df), csv::format_double(res.p_value),
                       res.reject ? "reject" : "accept"});
            }
        }
        const auto path = detail::out_path(cfg, "tests_k" + detail::level_slug(level) + ".csv");
        csv::write_file(path.string(), w.str());
        written.push_back(path);
    }
    return written;
}

/// irf: responses to a one-period shock in each pair market, plus a
/// per-pair dominance summary.
inline std::vector<std::filesystem::path> cmd_irf(const RunConfig& cfg) {
    std::vector<std::filesystem::path> written;
    const auto hl_text = [](const std::optional<std::size_t>& hl) {
        return hl ? std::to_string(*hl) : std::string("none");
    };
    for (double level : cfg.levels) {
        csv::Writer summary(
            "pair,shock,peak_1to2,halflife_1to2,peak_2to1,halflife_2to1,peak_dominant,"
            "duration_dominant");
        for (const auto& art : detail::load_pair_artifacts(cfg, level)) {
            VarPath path;
            try {
                path = var_path(art.params, art.panel);
            } catch (const ExplosivePathError& e) {
                throw Error(std::string(e.what()) +
                            " (fitted spillover matrix is unstable; refit with tighter bounds "
                            "or check the input data)");
            }
            const std::size_t T = art.panel.size();
            std::vector<double> y_last(art.panel.row(T - 1), art.panel.row(T - 1) + 2);
            std::vector<double> q_last(path.row(T - 1), path.row(T - 1) + 2);

            double delta = cfg.irf_shock;
            if (std::isnan(delta))
                delta = -3.0 * moments(std::span<const double>(art.panel.returns)).std_dev;

            for (std::size_t shock_market : {std::size_t{0}, std::size_t{1}}) {
                IrfResult irf;
                try {
                    irf = pseudo_irf(art.params, y_last, q_last, shock_market, delta,
                                     cfg.irf_horizon);
                } catch (const ExplosivePathError& e) {
                    throw Error(std::string(e.what()) +
                                " (fitted spillover matrix is unstable; refit with tighter "
                                "bounds or a shorter horizon)");
                }
                csv::Writer w("h,market,delta_q");
                for (std::size_t h = 0; h < irf.horizon; ++h)
                    for (std::size_t m = 0; m < 2; ++m)
                        w.row({std::to_string(h + 1), art.panel.markets[m],
                               csv::format_double(irf.at(h, m))});
                const auto file = detail::out_path(
                    cfg, "irf_" + art.slug + "_shock_" + art.panel.markets[shock_market] + ".csv");
                csv::write_file(file.string(), w.str());
                written.push_back(file);
            }

            const SpilloverComparison cmp =
                compare_spillover(art.params, y_last, q_last, 0, 1, delta, cfg.irf_horizon);
            const auto dom_text = [](Dominance d) {
                switch (d) {
                    case Dominance::first_to_second: return "1->2";
                    case Dominance::second_to_first: return "2->1";
                    default: return "tie";
                }
            };
            summary.row({art.label, csv::format_double(delta),
                         csv::format_double(cmp.peak_i_to_j), hl_text(cmp.half_life_i_to_j),
                         csv::format_double(cmp.peak_j_to_i), hl_text(cmp.half_life_j_to_i),
                         dom_text(cmp.peak_dominance), dom_text(cmp.duration_dominance)});
        }
        const auto path =
            detail::out_path(cfg, "irf_dominance_k" + detail::level_slug(level) + ".csv");
        csv::write_file(path.string(), summary.str());
        written.push_back(path);
    }
    return written;
}

/// alert: threshold alerts over the fitted quantile paths of each pair.
inline std::vector<std::filesystem::path> cmd_alert(const RunConfig& cfg) {
    std::vector<std::filesystem::path> written;
    for (double level : cfg.levels) {
        for (const auto& art : detail::load_pair_artifacts(cfg, level)) {
            const VarPath path = var_path(art.params, art.panel);
            const auto alerts = generate_alerts(path, art.panel.dates, art.panel.markets,
                                                cfg.alert_window, cfg.alert_threshold);
            csv::Writer w("date,market,q,reference,severity");
            for (const auto& a : alerts)
                w.row({format_date(a.date), a.market, csv::format_double(a.q),
                       csv::format_double(a.reference), csv::format_double(a.severity)});
            const auto file = detail::out_path(cfg, "alerts_" + art.slug + ".csv");
            csv::write_file(file.string(), w.str());
            written.push_back(file);
        }
    }
    return written;
}

}  // namespace caviar
