#include <doctest.h>

#include <cmath>
#include <random>

#include "sponge/lbfgs.hpp"

using namespace sponge;

TEST_CASE("unconstrained-looking quadratic inside the box") {
    // (x - 0.3)^2 + 10 (y - 0.7)^2
    const Objective f = [](std::span<const double> x, std::span<double> g) {
        g[0] = 2 * (x[0] - 0.3);
        g[1] = 20 * (x[1] - 0.7);
        return (x[0] - 0.3) * (x[0] - 0.3) + 10 * (x[1] - 0.7) * (x[1] - 0.7);
    };
    const auto r = minimize_box(f, {0.9, 0.1});
    CHECK(r.x[0] == doctest::Approx(0.3).epsilon(1e-6));
    CHECK(r.x[1] == doctest::Approx(0.7).epsilon(1e-6));
    CHECK(r.best_value <= r.initial_value);
}

TEST_CASE("optimum on the boundary") {
    const Objective f = [](std::span<const double> x, std::span<double> g) {
        g[0] = 2 * (x[0] - 2.0);
        g[1] = 2 * (x[1] + 1.0);
        return (x[0] - 2.0) * (x[0] - 2.0) + (x[1] + 1.0) * (x[1] + 1.0);
    };
    const auto r = minimize_box(f, {0.5, 0.5});
    CHECK(r.x[0] == 1.0);
    CHECK(r.x[1] == 0.0);
}

TEST_CASE("history never increases and iterates stay in the box") {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> n;
    std::vector<double> c(30);
    for (auto& v : c) v = n(rng);
    const Objective f = [&](std::span<const double> x, std::span<double> g) {
        double s = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            s += std::cos(3 * x[i]) * c[i] + x[i] * x[i];
            g[i] = -3 * std::sin(3 * x[i]) * c[i] + 2 * x[i];
        }
        return s;
    };
    const auto r = minimize_box(f, std::vector<double>(30, 0.5));
    for (std::size_t i = 1; i < r.history.size(); ++i) CHECK(r.history[i] < r.history[i - 1]);
    for (double v : r.x) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("non-finite objective is an error") {
    const Objective f = [](std::span<const double>, std::span<double> g) {
        g[0] = 0.0;
        return std::nan("");
    };
    CHECK_THROWS_AS(minimize_box(f, {0.5}), std::runtime_error);
    LbfgsConfig bad;
    bad.lower = 1.0;
    bad.upper = 0.0;
    CHECK_THROWS(bad.validate());
}

TEST_CASE("positive linear layer is maximised at the all-ones image") {
    CnnModel m;
    m.channels = 1;
    m.height = m.width = 3;
    m.classes = 2;
    CnnLayer hidden;
    hidden.name = "hidden";
    hidden.in_channels = 9;
    hidden.out_channels = 4;
    hidden.relu = true;
    hidden.weights = Matrix(4, 9);
    for (std::size_t i = 0; i < hidden.weights.size(); ++i) hidden.weights.data[i] = 0.1 + 0.01 * static_cast<double>(i);
    hidden.bias.assign(4, 0.0);
    CnnLayer out;
    out.name = "out";
    out.in_channels = 4;
    out.out_channels = 2;
    out.weights = Matrix(2, 4, 0.5);
    out.bias.assign(2, 0.0);
    m.layers = {hidden, out};
    m.validate();

    const auto r = lbfgs_attack(m, Image(1, 3, 3, 0.2));
    for (double p : r.image.pixels) CHECK(p == doctest::Approx(1.0));
    CHECK(r.final_objective < r.initial_objective);
}

TEST_CASE("attack on the reference CNN reaches the density bound") {
    const auto model = CnnModel::reference();
    const auto bound = ibp_max_density(model);
    std::mt19937_64 rng(12);
    for (int i = 0; i < 5; ++i) {
        const auto start = uniform_random_image(rng);
        const auto r = lbfgs_attack(model, start);
        const auto after = cnn_forward(model, r.image).density.overall_density;
        CHECK(after >= cnn_forward(model, start).density.overall_density);
        CHECK(after <= bound.overall_density);
    }
}

TEST_CASE("dead random starts are redrawn") {
    const auto model = CnnModel::reference();
    std::mt19937_64 rng(41);
    std::size_t redrawn = 0;
    for (int i = 0; i < 200; ++i) {
        const auto r = lbfgs_attack_random_start(model, rng);
        redrawn += r.start_draws - 1;
        CHECK(r.final_objective < 0.0);
    }
    // About 2% of uniform starts leave every unit of the reference CNN dead.
    CHECK(redrawn > 0);
    CHECK_THROWS(lbfgs_attack_random_start(model, rng, {}, 0));
}
