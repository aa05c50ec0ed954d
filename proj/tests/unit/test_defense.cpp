#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "sponge/corpus.hpp"
#include "sponge/defense.hpp"
#include "sponge/ga.hpp"

using namespace sponge;

namespace {

const ToyTranslator& translator() {
    static const ToyTranslator m = ToyTranslator::create(reference_vocab(), 7);
    return m;
}

// Independent nearest-rank routine: sort, then index ceil(p n / 100) - 1.
double sorted_rank(std::vector<double> v, double p) {
    std::sort(v.begin(), v.end());
    const auto k = static_cast<std::size_t>(std::ceil(p / 100.0 * static_cast<double>(v.size())));
    return v[std::max<std::size_t>(k, 1) - 1];
}

double max_layer_cost(const ActivationTrace& t, const CostFunction& cost) {
    double m = 0.0;
    for (const auto& l : t.layers) m = std::max(m, cost.layer(l));
    return m;
}

}  // namespace

TEST_CASE("nearest-rank percentile") {
    CHECK(nearest_rank_percentile({5.0}, 99) == 5.0);
    CHECK(nearest_rank_percentile({3, 1, 2}, 100) == 3.0);
    CHECK(nearest_rank_percentile({15, 20, 35, 40, 50}, 30) == 20.0);
    CHECK(nearest_rank_percentile({15, 20, 35, 40, 50}, 40) == 20.0);
    CHECK(nearest_rank_percentile({15, 20, 35, 40, 50}, 50) == 35.0);
    CHECK_THROWS(nearest_rank_percentile({}, 50));
    CHECK_THROWS(nearest_rank_percentile({1.0}, 0));
    CHECK_THROWS(nearest_rank_percentile({1.0}, 101));
}

TEST_CASE("profile of the reference corpus") {
    const auto corpus = natural_corpus(200, 16, 21);
    const CostFunction cost;
    const auto p = profile_natural(translator(), reference_vocab(), corpus, 99, cost);
    REQUIRE(p.costs.size() == corpus.size());
    for (std::size_t i = 0; i < corpus.size(); ++i)
        CHECK(p.costs[i] == doctest::Approx(translation_energy(translator(), reference_vocab(), corpus[i])));
    CHECK(p.threshold == sorted_rank(p.costs, 99));

    std::stringstream ss;
    p.save(ss);
    const auto back = ConsumptionProfile::load(ss);
    CHECK(back.costs == p.costs);
    CHECK(back.threshold == p.threshold);
    CHECK(back.source == p.source);
}

TEST_CASE("guard lets cheap inputs through and stops expensive ones") {
    const auto& v = reference_vocab();
    const CostFunction cost;
    const auto corpus = natural_corpus(200, 16, 21);
    const auto profile = profile_natural(translator(), v, corpus, 99, cost);

    SUBCASE("cheap input runs normally") {
        const auto g = guarded_infer(translator(), encode_text("the", v), profile, cost);
        REQUIRE_FALSE(g.rejected());
        CHECK(g.result->output.ids == translate(translator(), encode_text("the", v)).output.ids);
        CHECK(g.cost == doctest::Approx(cost.total(g.result->trace)));
    }
    SUBCASE("worst case input is rejected") {
        const auto worst = exhaustive_worst_case(translator(), v, ".-a", 8);
        auto tight = profile;
        tight.threshold = nearest_rank_percentile(
            profile_natural(translator(), v, natural_corpus(200, 8, 3), 99, cost).costs, 99);
        const auto g = guarded_infer(translator(), encode_text(worst.input, v), tight, cost);
        REQUIRE(g.rejected());
        CHECK(g.rejection->partial_cost > tight.threshold);
        CHECK(g.rejection->layers_run == g.trace.layers.size());
    }
    SUBCASE("infinite threshold never rejects") {
        auto open = profile;
        open.threshold = std::numeric_limits<double>::infinity();
        std::mt19937_64 rng(1);
        for (int i = 0; i < 20; ++i)
            CHECK_FALSE(guarded_infer(translator(), encode_text(random_text(rng, 30), v), open, cost).rejected());
    }
    SUBCASE("overshoot is bounded by one layer") {
        std::mt19937_64 rng(2);
        for (int i = 0; i < 100; ++i) {
            const auto text = i % 2 ? random_text(rng, 16) : natural_sentence(rng, 16);
            const auto g = guarded_infer(translator(), encode_text(text, v), profile, cost);
            CHECK(g.cost <= profile.threshold + max_layer_cost(g.trace, cost));
            if (g.rejected()) CHECK(g.cost == g.rejection->partial_cost);
        }
    }
}

TEST_CASE("latency guard on the CNN") {
    const auto model = CnnModel::reference();
    CostFunction cost;
    cost.source = CostSource::SimulatedLatency;
    std::vector<Image> corpus;
    for (const auto& s : natural_like_dataset(10, 10, 2)) corpus.push_back(s.image);
    const auto profile = profile_natural(model, corpus, 99, cost);
    CHECK(profile.source == CostSource::SimulatedLatency);
    CHECK(profile.threshold > cost.base());

    const auto g = guarded_infer(model, Image(1, 8, 8, 1.0), profile, cost);
    CHECK(g.cost <= profile.threshold + max_layer_cost(g.trace, cost));
    CHECK_THROWS_AS(guarded_infer(model, corpus[0], profile, CostFunction{}), std::invalid_argument);
}

TEST_CASE("cost source names") {
    CHECK(cost_source_from_string(to_string(CostSource::SimulatedLatency)) == CostSource::SimulatedLatency);
    CHECK(cost_source_from_string(to_string(CostSource::SimulatedEnergy)) == CostSource::SimulatedEnergy);
    CHECK_THROWS(cost_source_from_string("watts"));
}
