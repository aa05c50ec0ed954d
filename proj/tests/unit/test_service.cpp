#include <doctest.h>

#include <memory>
#include <random>

#include "sponge/corpus.hpp"
#include "sponge/service.hpp"

using namespace sponge;

namespace {

std::shared_ptr<const ToyTranslator> shared_model() {
    static const auto m = std::make_shared<const ToyTranslator>(ToyTranslator::create(reference_vocab(), 7));
    return m;
}

std::shared_ptr<const Vocab> shared_vocab() {
    static const auto v = std::make_shared<const Vocab>(reference_vocab());
    return v;
}

TranslationService make_service(ServiceConfig cfg = {}) { return {cfg, shared_model(), shared_vocab()}; }

}  // namespace

TEST_CASE("cache hits skip inference") {
    auto svc = make_service();
    const auto first = svc.handle("the cat");
    const auto second = svc.handle("the cat");
    CHECK_FALSE(first.cached);
    CHECK(second.cached);
    CHECK(second.server_time_s < first.server_time_s);
    CHECK(second.translation == first.translation);
    CHECK(svc.cache_size() == 1);
}

TEST_CASE("capacity 0 disables the cache") {
    ServiceConfig cfg;
    cfg.cache_capacity = 0;
    auto svc = make_service(cfg);
    const auto a = svc.handle("the cat");
    const auto b = svc.handle("the cat");
    CHECK(a.server_time_s == b.server_time_s);
    CHECK_FALSE(b.cached);
}

TEST_CASE("LRU eviction") {
    ServiceConfig cfg;
    cfg.cache_capacity = 2;
    auto svc = make_service(cfg);
    svc.handle("a");
    svc.handle("b");
    svc.handle("a");
    svc.handle("c");  // evicts b
    CHECK(svc.handle("a").cached);
    CHECK_FALSE(svc.handle("b").cached);
    CHECK(svc.cache_size() == 2);
}

TEST_CASE("input length limit counts characters") {
    auto svc = make_service();
    CHECK(svc.handle(std::string(51, 'a')).rejected);
    CHECK_FALSE(svc.handle(std::string(50, 'a')).rejected);
    // 50 two-byte characters are still 50 characters.
    std::string wide;
    for (int i = 0; i < 50; ++i) wide += "\xc3\xa9";
    CHECK_FALSE(svc.handle(wide).rejected);
}

TEST_CASE("server time is linear in decode steps") {
    ServiceConfig cfg;
    cfg.cache_capacity = 0;
    auto svc = make_service(cfg);
    std::mt19937_64 rng(4);
    for (int i = 0; i < 20; ++i) {
        const auto r = svc.handle(random_text(rng, 5 + i));
        CHECK(r.server_time_s == doctest::Approx(cfg.base_service_s + cfg.per_step_s * r.decode_steps));
    }
}

TEST_CASE("network delay") {
    ServiceConfig cfg;
    auto svc = make_service(cfg);
    double net = 0.0;
    svc.handle("the", &net);
    CHECK(net == 2 * cfg.network.base_s);

    cfg.network.jitter_mean_s = 0.01;
    auto jittery = make_service(cfg);
    for (int i = 0; i < 20; ++i) {
        jittery.handle("the", &net);
        CHECK(net >= 2 * cfg.network.base_s);
    }
}

TEST_CASE("guarded service rejects expensive requests") {
    ServiceConfig cfg;
    cfg.guard = make_profile({1.0}, 100, CostSource::SimulatedEnergy);
    auto svc = make_service(cfg);
    const auto r = svc.handle("the cat");
    CHECK(r.rejected);
    CHECK(svc.cache_size() == 0);
}

TEST_CASE("endpoints") {
    const auto e = Endpoint::parse("127.0.0.1:8080");
    CHECK(e.port == 8080);
    CHECK(e.loopback());
    CHECK(Endpoint::parse("localhost:1").loopback());
    CHECK_FALSE(Endpoint::parse("10.0.0.1:80").loopback());
    CHECK_THROWS(Endpoint::parse("nohost"));
    CHECK_THROWS(Endpoint::parse("h:0"));
    CHECK_THROWS_AS(client_translate(Endpoint::parse("10.0.0.1:80"), "x"), EndpointRefused);
}

TEST_CASE("over the socket") {
    ServiceConfig cfg;
    auto svc = serve(cfg, shared_model(), shared_vocab());
    const auto ep = Endpoint::parse(svc->endpoint());

    SUBCASE("zero jitter round trip is server time plus two base latencies") {
        const auto reply = client_translate(ep, "the cat");
        CHECK(reply.round_trip.ok);
        CHECK(reply.round_trip.duration_s == doctest::Approx(reply.response.server_time_s + 2 * cfg.network.base_s));
        CHECK(reply.response.translation == svc->handle("the cat").translation);
    }
    SUBCASE("rejections come back as errors") {
        const auto reply = client_translate(ep, std::string(60, 'x'));
        CHECK(reply.response.rejected);
        CHECK_FALSE(reply.round_trip.ok);
    }
    SUBCASE("noiseless fitness equals the round trip") {
        BlackboxOptions opts;
        opts.repeats = 1;
        opts.log = std::make_shared<std::vector<BlackboxObservation>>();
        const auto f = blackbox_latency_fitness(ep, opts);
        const auto v = f.evaluate("a big dog").fitness.value;
        CHECK(f.source == FitnessSource::MeasuredLatency);
        REQUIRE(opts.log->size() == 1);
        CHECK(v == (*opts.log)[0].round_trip_s);
        CHECK(v == doctest::Approx((*opts.log)[0].server_time_s + 2 * cfg.network.base_s));
    }
    SUBCASE("median of three suppresses the uncached outlier") {
        BlackboxOptions opts;
        opts.log = std::make_shared<std::vector<BlackboxObservation>>();
        const auto v = blackbox_latency_fitness(ep, opts).evaluate("some new text").fitness.value;
        REQUIRE(opts.log->size() == 3);
        CHECK_FALSE((*opts.log)[0].cached);
        CHECK(v == doctest::Approx((*opts.log)[1].round_trip_s));
        CHECK(v < (*opts.log)[0].round_trip_s);
        CHECK(count_server_time_drops(*opts.log) == 1);
    }
    SUBCASE("rejected inputs fail the evaluation") {
        CHECK_THROWS_AS(blackbox_latency_fitness(ep).evaluate(std::string(80, 'y')), ServiceError);
    }
    SUBCASE("one request at a time") {
        for (int i = 0; i < 10; ++i) client_translate(ep, "w" + std::to_string(i));
        const auto w = svc->windows();
        for (std::size_t i = 1; i < w.size(); ++i) CHECK(w[i].start_s >= w[i - 1].end_s);
        CHECK(svc->requests_served() == w.size());
    }
    svc->stop();
    CHECK_THROWS_AS(client_translate(ep, "the", ClientOptions{0.5}), ServiceError);
}
