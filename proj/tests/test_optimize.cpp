#include <catch2/catch.hpp>

#include <cmath>
#include <random>
#include <set>

#include "caviar/optimize.hpp"
#include "support/oracles.hpp"

using namespace caviar;

namespace {

void require_non_increasing_best(const Trace& trace) {
    for (std::size_t i = 1; i < trace.records.size(); ++i)
        REQUIRE(trace.records[i].best_loss <= trace.records[i - 1].best_loss + 1e-15);
}

}  // namespace

// ---------------------------------------------------------------------------
// Gradient descent core
// ---------------------------------------------------------------------------

TEST_CASE("descent contracts a one-parameter quadratic") {
    GdConfig cfg;
    cfg.learning_rate = 0.1;
    cfg.max_iterations = 100;
    cfg.patience = 100;
    GdObjective objective = [](std::span<const double> beta) {
        GdEvaluation ev;
        ev.train_loss = beta[0] * beta[0];
        ev.val_loss = ev.train_loss;
        ev.gradient = {2.0 * beta[0]};
        return ev;
    };
    const auto [beta, trace] = gradient_descent(objective, {1.0}, cfg);
    // 100 steps of beta <- 0.8 beta: |beta| ~ 0.8^99 ~ 2.5e-10
    REQUIRE(std::fabs(beta[0]) < 1e-8);
    REQUIRE(trace.records.size() == 100);
    REQUIRE(trace.records.front().val_loss.has_value());
}

TEST_CASE("early stopping halts after a run of validation deteriorations") {
    EarlyStopper stopper(3);
    REQUIRE_FALSE(stopper.should_stop(1.0));
    REQUIRE_FALSE(stopper.should_stop(1.1));
    REQUIRE_FALSE(stopper.should_stop(1.2));
    REQUIRE(stopper.should_stop(1.3));  // third consecutive non-improvement

    EarlyStopper reset(3);
    REQUIRE_FALSE(reset.should_stop(1.0));
    REQUIRE_FALSE(reset.should_stop(1.1));
    REQUIRE_FALSE(reset.should_stop(0.9));  // improvement clears the streak
    REQUIRE_FALSE(reset.should_stop(1.0));
    REQUIRE_FALSE(reset.should_stop(1.0));
    REQUIRE(reset.should_stop(1.0));
}

TEST_CASE("descent loop stops early on a manufactured validation curve") {
    GdConfig cfg;
    cfg.learning_rate = 0.01;
    cfg.max_iterations = 100;
    cfg.patience = 3;
    std::size_t calls = 0;
    GdObjective objective = [&calls](std::span<const double>) {
        GdEvaluation ev;
        ev.train_loss = 1.0;
        // validation improves for 5 evaluations, then rises for good
        ev.val_loss = calls < 5 ? 10.0 - static_cast<double>(calls)
                                : 100.0 + static_cast<double>(calls);
        ev.gradient = {0.0};
        ++calls;
        return ev;
    };
    const auto [beta, trace] = gradient_descent(objective, {1.0}, cfg);
    REQUIRE(trace.records.size() == 8);  // 5 improvements + patience of 3
    REQUIRE(trace.records.back().val_loss.has_value());
}

TEST_CASE("descent aborts on non-finite evaluations and keeps the best iterate") {
    GdConfig cfg;
    cfg.learning_rate = 0.5;
    cfg.max_iterations = 50;
    cfg.patience = 50;
    std::size_t calls = 0;
    GdObjective objective = [&calls](std::span<const double> beta) {
        GdEvaluation ev;
        ++calls;
        if (calls > 4) {
            ev.train_loss = std::numeric_limits<double>::infinity();
            ev.val_loss = ev.train_loss;
            ev.gradient = {std::numeric_limits<double>::quiet_NaN()};
            return ev;
        }
        ev.train_loss = beta[0] * beta[0];
        ev.val_loss = ev.train_loss;
        ev.gradient = {2.0 * beta[0]};
        return ev;
    };
    const auto [beta, trace] = gradient_descent(objective, {1.0}, cfg);
    REQUIRE(std::isfinite(beta[0]));
    REQUIRE(trace.records.size() == 4);
}

TEST_CASE("model descent improves the train loss once the rate is small enough") {
    std::mt19937_64 rng(21);
    for (int rep = 0; rep < 5; ++rep) {
        const auto p = oracles::random_stable_params(rng, 2, 0.05);
        const auto panel = oracles::random_panel(rng, 300, 2);
        GdConfig cfg;
        cfg.max_iterations = 2;
        cfg.patience = 2;
        bool improved = false;
        for (double r = 0.5; r > 1e-6; r *= 0.5) {
            cfg.learning_rate = r;
            const auto [fit, trace] = gd_optimize(panel, p, cfg);
            if (trace.records.size() >= 2 &&
                trace.records[1].best_loss < trace.records[0].best_loss) {
                improved = true;
                break;
            }
        }
        REQUIRE(improved);
    }
}

TEST_CASE("model descent recovers a simulated generating process") {
    SimConfig sim;
    sim.params = CaviarParams(0.05, 2);
    sim.params.c = {-0.3, -0.2};
    sim.params.A = {-0.4, -0.1, -0.05, -0.35};
    sim.params.B = {0.6, 0.1, 0.05, 0.55};
    sim.T = 3000;
    sim.seed = 424242;
    const auto [panel, path] = simulate(sim);
    const double at_truth = model_loss(sim.params, panel);

    // init = truth shifted by a perturbation of norm 0.2
    std::mt19937_64 rng(3);
    std::normal_distribution<double> nd(0.0, 1.0);
    auto flat = sim.params.flatten();
    std::vector<double> dir(flat.size());
    double norm = 0.0;
    for (auto& d : dir) {
        d = nd(rng);
        norm += d * d;
    }
    norm = std::sqrt(norm);
    for (std::size_t i = 0; i < flat.size(); ++i) flat[i] += 0.2 * dir[i] / norm;

    GdConfig cfg;  // library defaults
    const auto [fit, trace] = gd_optimize(panel, CaviarParams::from_flat(0.05, 2, flat), cfg);
    REQUIRE(model_loss(fit, panel) <= 1.02 * at_truth);
}

TEST_CASE("descent is deterministic") {
    std::mt19937_64 rng(22);
    const auto panel = oracles::random_panel(rng, 400, 2);
    const auto init = qr_initial_params(panel, 0.05);
    GdConfig cfg;
    cfg.max_iterations = 50;
    const auto first = gd_optimize(panel, init, cfg);
    const auto second = gd_optimize(panel, init, cfg);
    REQUIRE(first.first.flatten() == second.first.flatten());
    REQUIRE(first.second.records.size() == second.second.records.size());
    for (std::size_t i = 0; i < first.second.records.size(); ++i)
        REQUIRE(first.second.records[i].best_loss == second.second.records[i].best_loss);
}

// ---------------------------------------------------------------------------
// Chromosome decoding
// ---------------------------------------------------------------------------

TEST_CASE("decode maps all-zero and all-one fields to the box corners") {
    GaConfig cfg;
    cfg.bits_per_param = 8;
    cfg.lo = {-3.0};
    cfg.hi = {3.0};
    const Chromosome zeros(8 * 4, 0);
    for (double v : decode_bits(zeros, cfg, 4)) REQUIRE(v == -3.0);
    const Chromosome ones(8 * 4, 1);
    for (double v : decode_bits(ones, cfg, 4)) REQUIRE(v == 3.0);
}

TEST_CASE("decode maps a single high bit as documented") {
    // MSB-first: 10000000 -> 128; -3 + 128/255 * 6 = 0.011764705882...
    GaConfig cfg;
    cfg.bits_per_param = 8;
    cfg.lo = {-3.0};
    cfg.hi = {3.0};
    Chromosome bits(8, 0);
    bits[0] = 1;
    const auto decoded = decode_bits(bits, cfg, 1);
    REQUIRE(decoded[0] == Approx(0.011764705882353).margin(1e-12));
}

TEST_CASE("decode is monotone in the unsigned field value") {
    GaConfig cfg;
    cfg.bits_per_param = 6;
    std::mt19937_64 rng(5);
    for (int rep = 0; rep < 200; ++rep) {
        const unsigned v = static_cast<unsigned>(rng() % 63);
        const auto to_bits = [&](unsigned value) {
            Chromosome bits(6);
            for (std::size_t b = 0; b < 6; ++b)
                bits[b] = static_cast<std::uint8_t>((value >> (5 - b)) & 1u);
            return bits;
        };
        const double low = decode_bits(to_bits(v), cfg, 1)[0];
        const double high = decode_bits(to_bits(v + 1), cfg, 1)[0];
        REQUIRE(high > low);
    }
}

TEST_CASE("decode rejects length mismatches") {
    GaConfig cfg;
    REQUIRE_THROWS_AS(decode_bits(Chromosome(10, 0), cfg, 4), ShapeError);
    REQUIRE_THROWS_AS(decode_chromosome(Chromosome(16, 0), cfg, 2), ShapeError);
}

TEST_CASE("decode_chromosome fills the flat parameter order") {
    GaConfig cfg;
    cfg.bits_per_param = 2;
    cfg.lo = {0.0};
    cfg.hi = {3.0};
    // ten 2-bit fields: values 0,1,2,3,0,1,2,3,0,1
    Chromosome bits;
    for (unsigned v : {0u, 1u, 2u, 3u, 0u, 1u, 2u, 3u, 0u, 1u}) {
        bits.push_back(static_cast<std::uint8_t>((v >> 1) & 1u));
        bits.push_back(static_cast<std::uint8_t>(v & 1u));
    }
    const CaviarParams p = decode_chromosome(bits, cfg, 2, 0.05);
    REQUIRE(p.c == std::vector<double>{0.0, 1.0});
    REQUIRE(p.A == std::vector<double>{2.0, 3.0, 0.0, 1.0});
    REQUIRE(p.B == std::vector<double>{2.0, 3.0, 0.0, 1.0});
}

// ---------------------------------------------------------------------------
// Genetic algorithm
// ---------------------------------------------------------------------------

TEST_CASE("GA drives a ten-dimensional sphere toward zero") {
    GaConfig cfg;
    cfg.population = 200;
    cfg.generations = 300;
    cfg.lo = {-1.0};
    cfg.hi = {1.0};
    cfg.seed = 99;
    const auto sphere = [](std::span<const double> x) {
        double s = 0.0;
        for (double v : x) s += v * v;
        return s;
    };
    const GaOutcome out = ga_minimize(sphere, cfg, 10);
    REQUIRE(out.best_fitness <= 5e-2);
    require_non_increasing_best(out.trace);
    REQUIRE(out.trace.records.size() == cfg.generations + 1);
    REQUIRE(out.trace.records.back().mean_loss.has_value());
}

TEST_CASE("GA with no variation only reshuffles existing genomes") {
    GaConfig cfg;
    cfg.population = 20;
    cfg.generations = 5;
    cfg.crossover_rate = 0.0;
    cfg.mutation_rate = 0.0;
    cfg.bits_per_param = 8;
    cfg.seed = 17;

    // watch every decoded candidate through the fitness callback
    std::set<std::vector<double>> seen;
    bool outside_initial = false;
    std::size_t calls = 0;
    const auto fitness = [&](std::span<const double> x) {
        std::vector<double> key(x.begin(), x.end());
        if (calls < cfg.population) {
            seen.insert(key);
        } else if (!seen.count(key)) {
            outside_initial = true;
        }
        ++calls;
        double s = 0.0;
        for (double v : x) s += v * v;
        return s;
    };
    const GaOutcome out = ga_minimize(fitness, cfg, 3);
    REQUIRE_FALSE(outside_initial);  // children are copies of earlier genomes
    require_non_increasing_best(out.trace);
}

TEST_CASE("GA runs are reproducible and thread-count independent") {
    std::mt19937_64 rng(23);
    const auto panel = oracles::random_panel(rng, 200, 2);
    GaConfig cfg;
    cfg.population = 40;
    cfg.generations = 25;
    cfg.seed = 7;
    cfg.jobs = 1;
    const auto first = ga_optimize(panel, cfg, 0.05);
    const auto second = ga_optimize(panel, cfg, 0.05);
    REQUIRE(first.first.flatten() == second.first.flatten());
    cfg.jobs = 4;
    const auto third = ga_optimize(panel, cfg, 0.05);
    REQUIRE(first.first.flatten() == third.first.flatten());
    for (std::size_t i = 0; i < first.second.records.size(); ++i) {
        REQUIRE(first.second.records[i].best_loss == third.second.records[i].best_loss);
        REQUIRE(*first.second.records[i].mean_loss == *third.second.records[i].mean_loss);
    }
}

TEST_CASE("GA fits a simulated bivariate panel to near-optimal loss") {
    SimConfig sim;
    sim.params = CaviarParams(0.05, 2);
    sim.params.c = {-0.3, -0.2};
    sim.params.A = {-0.4, -0.1, -0.05, -0.35};
    sim.params.B = {0.6, 0.1, 0.05, 0.55};
    sim.T = 1500;
    sim.seed = 31;
    const auto [panel, path] = simulate(sim);
    const double at_truth = model_loss(sim.params, panel);

    GaConfig cfg;
    cfg.population = 150;
    cfg.generations = 250;
    cfg.seed = 11;
    cfg.jobs = 2;
    const auto [fit, trace] = ga_optimize(panel, cfg, 0.05);
    REQUIRE(model_loss(fit, panel) <= 1.10 * at_truth);
    require_non_increasing_best(trace);
}

TEST_CASE("GA configuration is validated") {
    GaConfig cfg;
    cfg.population = 1;
    REQUIRE_THROWS_AS(cfg.validate(), ValidationError);
    cfg = GaConfig{};
    cfg.lo = {3.0};
    cfg.hi = {-3.0};
    REQUIRE_THROWS_AS(cfg.validate(), ValidationError);
    cfg = GaConfig{};
    cfg.elite_count = cfg.population;
    REQUIRE_THROWS_AS(cfg.validate(), ValidationError);
}

// ---------------------------------------------------------------------------
// Linear quantile regression
// ---------------------------------------------------------------------------

TEST_CASE("intercept-only median of {1,2,10} is 2") {
    Eigen::MatrixXd X = Eigen::MatrixXd::Ones(3, 1);
    Eigen::VectorXd y(3);
    y << 1.0, 2.0, 10.0;
    const auto beta = linear_qr(X, y, 0.5);
    REQUIRE(beta[0] == Approx(2.0).margin(1e-6));
}

TEST_CASE("noiseless symmetric data reproduces the generating line") {
    Eigen::MatrixXd X(6, 2);
    Eigen::VectorXd y(6);
    for (int t = 0; t < 6; ++t) {
        X(t, 0) = 1.0;
        X(t, 1) = t;
        y(t) = 2.0 + 0.5 * t;  // exact line, zero residuals
    }
    const auto beta = linear_qr(X, y, 0.5);
    REQUIRE(beta[0] == Approx(2.0).margin(1e-7));
    REQUIRE(beta[1] == Approx(0.5).margin(1e-7));
}

TEST_CASE("IRLS objective matches the exhaustive vertex oracle") {
    std::mt19937_64 rng(29);
    std::normal_distribution<double> nd(0.0, 1.0);
    for (int rep = 0; rep < 20; ++rep) {
        const int T = 25, p = 2;
        Eigen::MatrixXd X(T, p);
        Eigen::VectorXd y(T);
        for (int t = 0; t < T; ++t) {
            X(t, 0) = 1.0;
            X(t, 1) = nd(rng);
            y(t) = 0.5 + 0.8 * X(t, 1) + nd(rng);
        }
        const double k = 0.1 + 0.8 * std::uniform_real_distribution<double>(0, 1)(rng);
        const auto beta = linear_qr(X, y, k);
        Eigen::VectorXd f = X * Eigen::Map<const Eigen::VectorXd>(beta.data(), p);
        double objective = 0.0;
        for (int t = 0; t < T; ++t) objective += pinball_kernel(k, y(t) - f(t));
        objective /= T;
        const double oracle = oracles::best_vertex_objective(X, y, k);
        REQUIRE(objective <= oracle + 1e-8);
        REQUIRE(objective >= oracle - 1e-12);  // oracle is the exact minimum
    }
}

TEST_CASE("fitted quantile brackets the requested coverage") {
    std::mt19937_64 rng(33);
    std::normal_distribution<double> nd(0.0, 1.0);
    for (double k : {0.1, 0.25, 0.5, 0.9}) {
        const int T = 200;
        Eigen::MatrixXd X(T, 2);
        Eigen::VectorXd y(T);
        for (int t = 0; t < T; ++t) {
            X(t, 0) = 1.0;
            X(t, 1) = nd(rng);
            y(t) = 1.0 - 0.5 * X(t, 1) + nd(rng);
        }
        const auto beta = linear_qr(X, y, k);
        Eigen::VectorXd f = X * Eigen::Map<const Eigen::VectorXd>(beta.data(), 2);
        int below = 0, at_or_below = 0;
        for (int t = 0; t < T; ++t) {
            if (y(t) < f(t) - 1e-7) ++below;
            if (y(t) <= f(t) + 1e-7) ++at_or_below;
        }
        REQUIRE(static_cast<double>(below) / T <= k + 1e-12);
        REQUIRE(k <= static_cast<double>(at_or_below) / T + 1e-12);
    }
}

TEST_CASE("quantile fit never loses to least squares on its own objective") {
    std::mt19937_64 rng(35);
    std::normal_distribution<double> nd(0.0, 1.0);
    for (int rep = 0; rep < 20; ++rep) {
        const int T = 60;
        Eigen::MatrixXd X(T, 2);
        Eigen::VectorXd y(T);
        for (int t = 0; t < T; ++t) {
            X(t, 0) = 1.0;
            X(t, 1) = nd(rng);
            y(t) = -0.3 + 1.2 * X(t, 1) + nd(rng) * (1.0 + 0.5 * std::fabs(X(t, 1)));
        }
        const double k = 0.1 + 0.8 * std::uniform_real_distribution<double>(0, 1)(rng);
        const auto qr_beta = linear_qr(X, y, k);
        const Eigen::VectorXd ls_beta = X.colPivHouseholderQr().solve(y);
        double qr_obj = 0.0, ls_obj = 0.0;
        for (int t = 0; t < T; ++t) {
            qr_obj += pinball_kernel(
                k, y(t) - X.row(t).dot(Eigen::Map<const Eigen::VectorXd>(qr_beta.data(), 2)));
            ls_obj += pinball_kernel(k, y(t) - X.row(t).dot(ls_beta));
        }
        REQUIRE(qr_obj <= ls_obj + 1e-10);
    }
}

TEST_CASE("rank-deficient designs are rejected") {
    Eigen::MatrixXd X(10, 2);
    X.col(0).setOnes();
    X.col(1).setOnes();  // duplicate column
    Eigen::VectorXd y = Eigen::VectorXd::Random(10);
    REQUIRE_THROWS_AS(linear_qr(X, y, 0.5), NumericalError);
}

TEST_CASE("quantile intercept initializer matches the empirical quantile") {
    std::mt19937_64 rng(41);
    const auto panel = oracles::random_panel(rng, 500, 2);
    const auto init = qr_initial_params(panel, 0.05);
    for (std::size_t i = 0; i < 2; ++i) {
        const double emp = empirical_quantile(panel.column(i), 0.05);
        REQUIRE(init.c[i] == Approx(emp).margin(0.02));
    }
    REQUIRE(init.A == std::vector<double>(4, 0.0));
    REQUIRE(init.B == std::vector<double>(4, 0.0));
}

// ---------------------------------------------------------------------------
// Trace export
// ---------------------------------------------------------------------------

TEST_CASE("trace csv columns and empty fields") {
    Trace trace;
    TraceRecord gd_rec;
    gd_rec.iteration = 0;
    gd_rec.best_loss = 0.5;
    gd_rec.val_loss = 0.6;
    gd_rec.millis = 12.5;
    trace.records.push_back(gd_rec);
    const std::string text = trace_csv(trace);
    REQUIRE(text == "iter,best_loss,mean_loss,val_loss,millis\n0,0.5,,0.6,\n");
    const std::string timed = trace_csv(trace, true);
    REQUIRE(timed == "iter,best_loss,mean_loss,val_loss,millis\n0,0.5,,0.6,12.5\n");
}
