#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "sponge/cnn.hpp"
#include "sponge/measure.hpp"

using namespace sponge;

TEST_CASE("simulated clock") {
    SimulatedClock c(5.0);
    CHECK(c.now() == 5.0);
    c.sleep(0.25);
    c.advance(0.25);
    CHECK(c.now() == 5.5);
    CHECK_THROWS_AS(c.sleep(-1.0), std::invalid_argument);
}

TEST_CASE("fixed-duration runs time exactly") {
    SimulatedClock clock;
    std::size_t calls = 0;
    const auto samples = time_inference([&] { ++calls; clock.sleep(0.125); }, 3, 7, clock, 42);
    CHECK(calls == 10);
    REQUIRE(samples.size() == 7);
    for (const auto& s : samples) {
        CHECK(s.duration_s == 0.125);
        CHECK(s.input_id == 42);
        CHECK(s.ok);
        CHECK_FALSE(s.energy_j.has_value());
    }
    CHECK(samples[1].timestamp_s - samples[0].timestamp_s == 0.125);
    CHECK_THROWS(time_inference([] {}, 0, 0, clock));
}

TEST_CASE("failures are recorded per sample") {
    SimulatedClock clock;
    int n = 0;
    const auto samples = time_inference([&] { if (++n % 2 == 0) throw std::runtime_error("odd"); }, 0, 4, clock);
    CHECK_FALSE(samples[1].ok);
    CHECK(samples[1].error == "odd");
    CHECK(samples[0].ok);
}

TEST_CASE("meters") {
    CHECK(make_meter(std::nullopt) == nullptr);

    SimulatedClock clock;
    SimulatedEnergyMeter meter;
    const auto samples = time_inference([&] { meter.add(2.0); }, 1, 2, clock, 0, &meter);
    CHECK(*samples[0].energy_j == 2.0);

    const auto path = std::filesystem::temp_directory_path() / "sponge_energy_uj_test";
    std::ofstream(path) << "1000000\n";
    CounterFileMeter counter(path);
    CHECK(counter.read_joules() == doctest::Approx(1.0));
    std::ofstream(path) << "3500000\n";
    CHECK(counter.read_joules() == doctest::Approx(3.5));
    std::ofstream(path) << "10\n";
    CHECK_THROWS_AS(counter.read_joules(), std::runtime_error);
    std::filesystem::remove(path);
    CHECK_THROWS(CounterFileMeter(path).read_joules());
}

TEST_CASE("latency follows trace cost") {
    LatencyModel lm;
    ActivationTrace cheap{{LayerTrace{"a", 100, 10, 0, 0, 50, 20}}};
    ActivationTrace dear{{LayerTrace{"a", 100, 90, 0, 0, 50, 40}}};
    CHECK(lm.latency(cheap) == doctest::Approx(1e-4 + 10e-9 + 40e-9));
    CHECK(lm.latency(dear) > lm.latency(cheap));

    // Ordering of CNN inputs by multiply count carries over to latency.
    const auto model = CnnModel::reference();
    std::mt19937_64 rng(1);
    std::vector<std::pair<std::uint64_t, double>> pts;
    for (int i = 0; i < 30; ++i) {
        const auto t = cnn_forward(model, Image(1, 8, 8, 0.03 * i)).trace;
        pts.emplace_back(t.mult_nonzero(), lm.latency(t));
    }
    for (std::size_t i = 1; i < pts.size(); ++i)
        if (pts[i].first > pts[i - 1].first) CHECK(pts[i].second >= pts[i - 1].second);

    lm.noise_sd_s = 1.0;
    for (int i = 0; i < 100; ++i) CHECK(lm.latency(cheap, rng) >= 0.0);
    lm.noise_sd_s = -1.0;
    CHECK_THROWS(lm.validate());
}
