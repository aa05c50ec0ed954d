#include <doctest.h>

#include <cmath>
#include <random>

#include "sponge/cnn.hpp"
#include "sponge/stats.hpp"

using namespace sponge;

namespace {

// Number of (a, b) pairs with a > b, ties counting one half.
double pair_count(const std::vector<double>& a, const std::vector<double>& b) {
    double u = 0.0;
    for (double x : a)
        for (double y : b) u += x > y ? 1.0 : (x == y ? 0.5 : 0.0);
    return u;
}

}  // namespace

TEST_CASE("complete separation") {
    const std::vector<double> a{1, 2}, b{3, 4};
    const auto r = mann_whitney_u(a, b);
    CHECK(r.u_a == 0.0);
    CHECK(r.u_b == 4.0);
    CHECK(r.p_greater > 0.5);
}

TEST_CASE("identical samples") {
    const std::vector<double> a{1, 2, 3, 4};
    const auto r = mann_whitney_u(a, a);
    CHECK(r.u_a == 8.0);
    CHECK(r.p_greater == doctest::Approx(0.5));

    const std::vector<double> same{2, 2, 2};
    const auto d = mann_whitney_u(same, same);
    CHECK(d.degenerate);
    CHECK(d.p_greater == 0.5);
    CHECK_THROWS(mann_whitney_u(std::vector<double>{}, a));
}

TEST_CASE("U matches brute-force pair counting") {
    const std::vector<double> a{1, 3, 5}, b{2, 4, 6};
    CHECK(mann_whitney_u(a, b).u_a == pair_count(a, b));
    CHECK(mann_whitney_u(a, b).u_a == 3.0);

    std::mt19937_64 rng(1);
    std::uniform_int_distribution<int> size(1, 12), value(0, 6);
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<double> x(size(rng)), y(size(rng));
        for (auto& v : x) v = value(rng);
        for (auto& v : y) v = value(rng);
        const auto r = mann_whitney_u(x, y);
        CHECK(r.u_a == pair_count(x, y));
        CHECK(r.u_a + r.u_b == static_cast<double>(x.size() * y.size()));
    }
}

TEST_CASE("p-values") {
    std::vector<double> lo, hi;
    for (int i = 0; i < 50; ++i) {
        lo.push_back(i);
        hi.push_back(100 + i);
    }
    CHECK(mann_whitney_u(hi, lo).p_greater < 1e-10);
    CHECK(mann_whitney_u(lo, hi).p_greater > 0.99);

    // Large-sample value: z = (U - mean - 0.5) / sd for untied data.
    const std::vector<double> a{1, 4, 6, 8, 9, 11}, b{2, 3, 5, 7};
    const auto r = mann_whitney_u(a, b);
    const double mu = 12.0, sd = std::sqrt(6.0 * 4.0 * 11.0 / 12.0);
    CHECK(r.z == doctest::Approx((r.u_a - mu - 0.5) / sd));
    CHECK(r.p_greater == doctest::Approx(0.5 * std::erfc(r.z / std::sqrt(2.0))));
}

TEST_CASE("class comparison on CNN energy samples") {
    const auto model = CnnModel::reference();
    std::mt19937_64 rng(3);
    std::vector<double> natural, random, dense;
    const auto ds = natural_like_dataset(30, 10, 4);
    for (const auto& s : ds) natural.push_back(simulate_energy(cnn_forward(model, s.image).trace).energy_optimized_pj);
    for (int i = 0; i < 300; ++i) {
        random.push_back(simulate_energy(cnn_forward(model, uniform_random_image(rng)).trace).energy_optimized_pj);
        dense.push_back(simulate_energy(cnn_forward(model, Image(1, 8, 8, 1.0)).trace).energy_optimized_pj +
                        static_cast<double>(i % 7));
    }
    const auto c = compare_sample_classes(natural, random, dense, 0.01);
    CHECK(c.all_significant());
    REQUIRE(c.tests.size() == 3);
    for (const auto& t : c.tests) {
        CHECK(t.n_needed.has_value());
        CHECK(*t.n_needed <= 300);
        CHECK_FALSE(t.trace.empty());
    }
}

TEST_CASE("sign test") {
    const std::vector<double> d{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
    const auto r = sign_test(d);
    CHECK(r.positives == 10);
    CHECK(r.p_greater == doctest::Approx(std::pow(0.5, 10)));

    const std::vector<double> mixed{1, -1, 0, 2};
    const auto m = sign_test(mixed);
    CHECK(m.positives == 2);
    CHECK(m.negatives == 1);
    CHECK(m.zeros == 1);
    // P(X >= 2), X ~ Bin(3, 1/2) = 4/8.
    CHECK(m.p_greater == doctest::Approx(0.5));

    CHECK(mean(std::vector<double>{1, 2, 3}) == 2.0);
    CHECK(median({4, 1, 3, 2}) == 2.5);
}
