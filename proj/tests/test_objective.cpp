#include <catch2/catch.hpp>

#include <cmath>
#include <random>

#include "caviar/objective.hpp"
#include "support/oracles.hpp"

using namespace caviar;

// ---------------------------------------------------------------------------
// pinball_loss
// ---------------------------------------------------------------------------

TEST_CASE("pinball loss vanishes on zero residuals") {
    const std::vector<double> y{1.0, -2.0, 0.5};
    REQUIRE(pinball_loss(0.3, y, y) == 0.0);
}

TEST_CASE("pinball loss by direct evaluation") {
    // k=0.05: (0.05*1 + 0.95*2)/2 = 0.975
    REQUIRE(pinball_loss(0.05, std::vector<double>{1.0, -2.0}, std::vector<double>{0.0, 0.0}) ==
            Approx(0.975).margin(1e-15));
    // k=0.5 halves the mean absolute error
    REQUIRE(pinball_loss(0.5, std::vector<double>{2.0, -2.0}, std::vector<double>{0.0, 0.0}) ==
            Approx(1.0).margin(1e-15));
}

TEST_CASE("pinball loss validates shapes") {
    REQUIRE_THROWS_AS(pinball_loss(0.5, std::vector<double>{1.0}, std::vector<double>{1.0, 2.0}),
                      ShapeError);
    REQUIRE_THROWS_AS(pinball_loss(0.5, std::vector<double>{}, std::vector<double>{}),
                      ValidationError);
}

TEST_CASE("pinball loss is nonnegative and zero only at equality") {
    std::mt19937_64 rng(2);
    std::normal_distribution<double> nd(0.0, 1.0);
    for (int rep = 0; rep < 50; ++rep) {
        const double k = 0.05 + 0.9 * std::uniform_real_distribution<double>(0, 1)(rng);
        std::vector<double> y(20), f(20);
        for (std::size_t i = 0; i < y.size(); ++i) {
            y[i] = nd(rng);
            f[i] = nd(rng);
        }
        REQUIRE(pinball_loss(k, y, f) > 0.0);
        REQUIRE(pinball_loss(k, y, y) == 0.0);
    }
}

TEST_CASE("pinball loss is translation invariant") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> nd(0.0, 1.0);
    std::vector<double> y(30), f(30);
    for (std::size_t i = 0; i < y.size(); ++i) {
        y[i] = nd(rng);
        f[i] = nd(rng);
    }
    const double base = pinball_loss(0.1, y, f);
    for (double a : {-5.0, 0.7, 42.0}) {
        std::vector<double> ys(y), fs(f);
        for (std::size_t i = 0; i < y.size(); ++i) {
            ys[i] += a;
            fs[i] += a;
        }
        REQUIRE(pinball_loss(0.1, ys, fs) == Approx(base).margin(1e-12));
    }
}

// ---------------------------------------------------------------------------
// smoothed_pinball
// ---------------------------------------------------------------------------

TEST_CASE("smoothed kernel at the origin") {
    for (double k : {0.01, 0.05, 0.5, 0.9}) {
        for (double h : {0.001, 0.01, 0.5}) {
            REQUIRE(smoothed_pinball(k, 0.0, h) == Approx(h * std::log(2.0)).margin(1e-15));
            REQUIRE(smoothed_pinball_derivative(k, 0.0, h) == Approx(k - 0.5).margin(1e-15));
        }
    }
}

TEST_CASE("smoothed kernel tails reach the exact rays") {
    REQUIRE(smoothed_pinball(0.05, 100.0, 0.01) == Approx(5.0).margin(1e-12));
    REQUIRE(smoothed_pinball(0.05, -100.0, 0.01) == Approx(95.0).margin(1e-12));
}

TEST_CASE("smoothed kernel survives extreme arguments") {
    for (double u : {1e8, -1e8, 1e300, -1e300}) {
        const double v = smoothed_pinball(0.05, u, 0.01);
        REQUIRE(std::isfinite(v));
        const double d = smoothed_pinball_derivative(0.05, u, 0.01);
        REQUIRE(std::isfinite(d));
    }
    REQUIRE_THROWS_AS(smoothed_pinball(0.05, 1.0, 0.0), DomainError);
}

TEST_CASE("smoothed kernel stays within h ln 2 of the exact kernel") {
    for (double k : {0.01, 0.05, 0.5, 0.95}) {
        for (double h : {0.5, 0.05, 0.005}) {
            const double cap = h * std::log(2.0);
            for (double u = -10.0; u <= 10.0; u += 0.01) {
                const double gap = smoothed_pinball(k, u, h) - pinball_kernel(k, u);
                REQUIRE(gap >= -1e-12);
                REQUIRE(gap <= cap + 1e-12);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// model_loss
// ---------------------------------------------------------------------------

TEST_CASE("model loss reduces to the constant-quantile pinball loss") {
    std::mt19937_64 rng(11);
    const auto panel = oracles::random_panel(rng, 400, 2);
    CaviarParams p(0.05, 2);
    p.c = {-1.2, -0.4};
    const double loss = model_loss(p, panel, LossConfig{}, p.c);
    const std::vector<double> f0(panel.size(), p.c[0]), f1(panel.size(), p.c[1]);
    const double direct =
        pinball_loss(0.05, panel.column(0), f0) + pinball_loss(0.05, panel.column(1), f1);
    REQUIRE(loss == Approx(direct).margin(1e-14));
}

TEST_CASE("model loss equals the pinball loss along the fitted path") {
    std::mt19937_64 rng(12);
    for (int rep = 0; rep < 10; ++rep) {
        const auto p = oracles::random_stable_params(rng, 2, 0.05);
        const auto panel = oracles::random_panel(rng, 300, 2);
        const auto path = var_path(p, panel);
        const double direct = pinball_loss(0.05, panel.column(0), path.column(0)) +
                              pinball_loss(0.05, panel.column(1), path.column(1));
        REQUIRE(model_loss(p, panel) == Approx(direct).margin(1e-13));
    }
}

TEST_CASE("explosive parameters yield an infinite sentinel") {
    const auto panel = oracles::make_panel(std::vector<double>(60 * 2, 0.0), 2);
    CaviarParams p(0.05, 2);
    p.c = {-1.0, -1.0};
    p.b(0, 0) = 3.0;
    REQUIRE(std::isinf(model_loss(p, panel)));
}

TEST_CASE("the generating parameters sit near a local minimum") {
    SimConfig sim;
    sim.params = CaviarParams(0.05, 2);
    sim.params.c = {-0.3, -0.2};
    sim.params.A = {-0.15, -0.05, -0.02, -0.2};
    sim.params.B = {0.5, 0.1, 0.05, 0.45};
    sim.T = 5000;
    sim.seed = 2024;
    const auto [panel, path] = simulate(sim);
    const double at_truth = model_loss(sim.params, panel);

    std::mt19937_64 rng(77);
    std::normal_distribution<double> nd(0.0, 1.0);
    const auto flat = sim.params.flatten();
    int worse = 0;
    for (int rep = 0; rep < 100; ++rep) {
        std::vector<double> dir(flat.size());
        double norm = 0.0;
        for (auto& d : dir) {
            d = nd(rng);
            norm += d * d;
        }
        norm = std::sqrt(norm);
        std::vector<double> perturbed(flat);
        for (std::size_t i = 0; i < flat.size(); ++i) perturbed[i] += 0.5 * dir[i] / norm;
        const auto candidate = CaviarParams::from_flat(0.05, 2, perturbed);
        if (model_loss(candidate, panel) >= at_truth) ++worse;
    }
    REQUIRE(worse >= 95);
}

TEST_CASE("smoothed losses approach the exact loss as h shrinks") {
    std::mt19937_64 rng(13);
    for (int rep = 0; rep < 5; ++rep) {
        const auto p = oracles::random_stable_params(rng, 2, 0.05);
        const auto panel = oracles::random_panel(rng, 200, 2);
        const double exact = model_loss(p, panel);
        double prev_gap = std::numeric_limits<double>::infinity();
        for (double h : {0.1, 0.01, 0.001}) {
            LossConfig cfg;
            cfg.h = h;
            const double gap = std::fabs(model_loss(p, panel, cfg) - exact);
            REQUIRE(gap <= prev_gap + 1e-15);
            prev_gap = gap;
        }
        REQUIRE(prev_gap <= 0.001 * std::log(2.0) + 1e-12);
    }
}

TEST_CASE("loss configuration is validated") {
    std::mt19937_64 rng(14);
    const auto panel = oracles::random_panel(rng, 50, 2);
    CaviarParams p(0.05, 2);
    p.c = {-1.0, -1.0};
    LossConfig bad_level;
    bad_level.level = 0.01;
    REQUIRE_THROWS_AS(model_loss(p, panel, bad_level), ValidationError);
    LossConfig bad_weights;
    bad_weights.weights = {1.0, -1.0};
    REQUIRE_THROWS_AS(model_loss(p, panel, bad_weights), ValidationError);
    LossConfig zero_weights;
    zero_weights.weights = {0.0, 0.0};
    REQUIRE_THROWS_AS(model_loss(p, panel, zero_weights), ValidationError);
    LossConfig short_weights;
    short_weights.weights = {1.0};
    REQUIRE_THROWS_AS(model_loss(p, panel, short_weights), ShapeError);
    LossConfig weighted;
    weighted.weights = {2.0, 0.0};
    const double w_loss = model_loss(p, panel, weighted, p.c);
    const std::vector<double> f0(panel.size(), p.c[0]);
    REQUIRE(w_loss == Approx(2.0 * pinball_loss(0.05, panel.column(0), f0)).margin(1e-13));
}

// ---------------------------------------------------------------------------
// model_loss_grad
// ---------------------------------------------------------------------------

TEST_CASE("gradient of the collapsed model matches the hand derivative") {
    std::mt19937_64 rng(15);
    const auto panel = oracles::random_panel(rng, 300, 2);
    CaviarParams p(0.05, 2);
    p.c = {-0.8, -0.6};
    LossConfig cfg;
    cfg.h = 0.05;
    const auto res = model_loss_grad(p, panel, cfg, p.c);
    const double T = static_cast<double>(panel.size());
    for (std::size_t i = 0; i < 2; ++i) {
        double hand = 0.0;  // q_1 is the fixed q0, so its row has no c-derivative
        for (std::size_t t = 1; t < panel.size(); ++t)
            hand -= smoothed_pinball_derivative(0.05, panel.at(t, i) - p.c[i], cfg.h);
        hand /= T;
        REQUIRE(res.gradient[i] == Approx(hand).margin(1e-12));
    }
}

TEST_CASE("gradient matches central finite differences on stable instances") {
    std::mt19937_64 rng(16);
    LossConfig cfg;
    cfg.h = 0.05;
    for (int rep = 0; rep < 10; ++rep) {
        const auto p = oracles::random_stable_params(rng, 2, 0.05);
        const auto panel = oracles::random_panel(rng, 500, 2);
        const std::vector<double> q0{-0.9, -1.1};
        const auto res = model_loss_grad(p, panel, cfg, q0);

        const auto loss_at = [&](const std::vector<double>& flat) {
            return model_loss(CaviarParams::from_flat(0.05, 2, flat), panel, cfg, q0);
        };
        const auto fd = oracles::finite_difference_gradient(loss_at, p.flatten(), 1e-5);
        for (std::size_t m = 0; m < fd.size(); ++m) {
            const double scale = std::max(std::fabs(fd[m]), 1e-8);
            REQUIRE(std::fabs(res.gradient[m] - fd[m]) / scale <= 1e-4);
        }
    }
}

TEST_CASE("spillover gradients vanish on an identically zero path") {
    const auto panel = oracles::make_panel(std::vector<double>(100 * 2, 0.0), 2);
    CaviarParams p(0.05, 2);  // c = 0 is the exact quantile of zeros
    p.B = {0.3, 0.1, 0.2, 0.4};
    LossConfig cfg;
    cfg.h = 0.01;
    const auto res = model_loss_grad(p, panel, cfg, std::vector<double>{0.0, 0.0});
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 2; ++j)
            REQUIRE(res.gradient[2 + 4 + i * 2 + j] == 0.0);  // B block
}

TEST_CASE("gradient requires a positive bandwidth") {
    std::mt19937_64 rng(17);
    const auto panel = oracles::random_panel(rng, 50, 2);
    CaviarParams p(0.05, 2);
    p.c = {-1.0, -1.0};
    REQUIRE_THROWS_AS(model_loss_grad(p, panel, LossConfig{}), DomainError);
}

TEST_CASE("explosive paths surface as non-finite gradient results") {
    const auto panel = oracles::make_panel(std::vector<double>(60 * 2, 0.0), 2);
    CaviarParams p(0.05, 2);
    p.c = {-1.0, -1.0};
    p.b(0, 0) = 3.0;
    LossConfig cfg;
    cfg.h = 0.05;
    const auto res = model_loss_grad(p, panel, cfg);
    REQUIRE(std::isinf(res.loss));
    REQUIRE(std::isnan(res.gradient[0]));
}
