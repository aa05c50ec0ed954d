#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "sponge/corpus.hpp"
#include "sponge/ga.hpp"

using namespace sponge;

namespace {

FitnessFunction<std::string> count_of(char c) {
    FitnessFunction<std::string> f;
    f.evaluate = [c](const std::string& s) {
        return Evaluation{{static_cast<double>(std::count(s.begin(), s.end(), c)), FitnessSource::EstimatedOps}};
    };
    f.source = FitnessSource::EstimatedOps;
    f.reentrant = true;
    return f;
}

GaConfig small(std::size_t pool, std::size_t generations, std::uint64_t seed = 1) {
    GaConfig c;
    c.pool_size = pool;
    c.generations = generations;
    c.seed = seed;
    c.threads = 1;
    return c;
}

const ToyTranslator& translator() {
    static const ToyTranslator m = ToyTranslator::create(reference_vocab(), 7);
    return m;
}

}  // namespace

TEST_CASE("NLP crossover") {
    CHECK(crossover_nlp("aaaa", "bbbb", false) == "aabb");
    CHECK(crossover_nlp("aaaa", "bbbb", true) == "bbaa");
    // Odd length: the left part is the shorter one.
    CHECK(crossover_nlp("abcde", "vwxyz", false) == "abxyz");
    CHECK(crossover_nlp("abcde", "vwxyz", true) == "xyzab");
    CHECK_THROWS(crossover_nlp("ab", "abc", false));
    std::mt19937_64 rng(1);
    CHECK(crossover_nlp("aaaa", "bbbb", rng, 0.0) == "aabb");
    CHECK(crossover_nlp("aaaa", "bbbb", rng, 1.0) == "bbaa");
}

TEST_CASE("CV crossover") {
    std::mt19937_64 rng(2);
    const auto a = uniform_random_image(rng);
    const auto b = uniform_random_image(rng);
    CHECK(crossover_cv(a, a, rng) == a);
    CHECK(crossover_cv(a, b, std::vector<bool>(a.size(), true)) == a);
    CHECK(crossover_cv(a, b, std::vector<bool>(a.size(), false)) == b);
    CHECK_THROWS(crossover_cv(a, Image(1, 4, 4), rng));

    // Fair mask: the share taken from `a` is binomial(1e4, 0.5).
    const Image zeros(1, 100, 100, 0.0), ones(1, 100, 100, 1.0);
    const auto child = crossover_cv(zeros, ones, rng);
    const double from_a = static_cast<double>(std::count(child.pixels.begin(), child.pixels.end(), 0.0)) / 1e4;
    CHECK(std::abs(from_a - 0.5) < 4 * 0.005);
}

TEST_CASE("NLP mutation") {
    std::mt19937_64 rng(3);
    CHECK(mutate_nlp("hello", rng, 0.0, "xyz") == "hello");
    const auto all = mutate_nlp("zzzzzzzz", rng, 1.0, "ab");
    CHECK(std::count(all.begin(), all.end(), 'z') == 0);

    const std::string chars = "abcd";
    const double rate = 0.3;
    std::size_t changed = 0, total = 0;
    for (int i = 0; i < 2000; ++i) {
        const std::string s(20, 'a');
        const auto m = mutate_nlp(s, rng, rate, chars);
        for (std::size_t k = 0; k < s.size(); ++k) changed += m[k] != s[k];
        total += s.size();
    }
    const double expected = rate * (1.0 - 1.0 / chars.size());
    const double sd = std::sqrt(expected * (1 - expected) / static_cast<double>(total));
    CHECK(std::abs(static_cast<double>(changed) / static_cast<double>(total) - expected) < 5 * sd);
}

TEST_CASE("CV mutation") {
    std::mt19937_64 rng(4);
    Image img(1, 10, 10, 0.5);
    const auto m = mutate_cv(img, rng, 0.01);
    std::size_t changed = 0;
    for (std::size_t i = 0; i < img.size(); ++i) changed += m.pixels[i] != img.pixels[i];
    CHECK(changed == 1);
    auto x = img;
    for (int i = 0; i < 500; ++i) x = mutate_cv(x, rng, 0.2);
    for (double p : x.pixels) {
        CHECK(p >= 0.0);
        CHECK(p <= 1.0);
    }
}

TEST_CASE("selection") {
    auto cfg = small(10, 1);
    std::vector<Individual<std::string>> pool;
    for (int i = 0; i < 10; ++i) pool.push_back({std::to_string(i), FitnessValue{static_cast<double>(i)}, -1});
    CHECK(select_top(pool, cfg, Domain::Nlp) == std::vector<std::size_t>{9});

    for (auto& ind : pool) ind.fitness = FitnessValue{1.0};
    CHECK(select_top(pool, cfg, Domain::Nlp) == std::vector<std::size_t>{0});

    // 100 members over 25 classes; the top 10% alone covers only 10 of them.
    std::vector<Individual<Image>> cv;
    for (int i = 0; i < 100; ++i)
        cv.push_back({Image(1, 1, 1), FitnessValue{static_cast<double>(i)}, i < 50 ? 0 : (i - 50) % 25});
    auto ccfg = small(100, 1);
    const auto chosen = select_top(cv, ccfg, Domain::Cv);
    std::set<int> classes;
    for (auto idx : chosen) classes.insert(cv[idx].label);
    CHECK(classes.size() >= 20);
}

TEST_CASE("constant fitness keeps the initial best") {
    FitnessFunction<std::string> f;
    f.evaluate = [](const std::string&) { return Evaluation{{1.0}}; };
    const auto r = ga_run_nlp(small(20, 10), f, 6);
    CHECK(r.history.size() == 10);
    for (const auto& h : r.history) CHECK(h.best == 1.0);
    CHECK(r.best().fitness->value == 1.0);
}

TEST_CASE("counting fitness converges to the optimum") {
    const auto r = ga_run_nlp(small(100, 200), count_of('a'), 8, std::string("abcdefgh"));
    CHECK(r.best().payload == "aaaaaaaa");
    CHECK(r.best().fitness->value == 8.0);
    for (std::size_t g = 1; g < r.history.size(); ++g) CHECK(r.history[g].best >= r.history[g - 1].best);
    for (const auto& ind : r.pool) CHECK(ind.payload.size() == 8);
}

TEST_CASE("search is deterministic in its seed") {
    const auto a = ga_run_nlp(small(30, 15, 9), count_of('e'), 10);
    const auto b = ga_run_nlp(small(30, 15, 9), count_of('e'), 10);
    REQUIRE(a.pool.size() == b.pool.size());
    for (std::size_t i = 0; i < a.pool.size(); ++i) CHECK(a.pool[i].payload == b.pool[i].payload);
}

TEST_CASE("callback can stop the run") {
    std::size_t seen = 0;
    const auto r = ga_run_nlp(small(10, 50), count_of('a'), 4, Alphabet{}, [&](const GenerationStats&) {
        return ++seen < 3;
    });
    CHECK(r.history.size() == 3);
}

TEST_CASE("failed evaluations get the worst fitness") {
    FitnessFunction<std::string> f;
    f.evaluate = [](const std::string& s) -> Evaluation {
        if (s[0] == 'a') throw std::runtime_error("boom");
        return {{s[0] == 'b' ? std::nan("") : 2.0}};
    };
    const auto r = ga_run_nlp(small(40, 3), f, 3, std::string("abc"));
    for (const auto& ind : r.pool) {
        if (ind.payload[0] == 'c') CHECK(ind.fitness->value == 2.0);
        else CHECK(ind.fitness->value == 0.0);
    }
    CHECK(r.history[0].failures > 0);
}

TEST_CASE("invalid GA config") {
    auto c = small(0, 1);
    CHECK_THROWS_AS(c.validate(), ValidationError);
    c = small(10, 1);
    c.selection_fraction = 0.0;
    CHECK_THROWS_AS(c.validate(), ValidationError);
    c = small(10, 1);
    c.mutation_rate = 1.5;
    CHECK_THROWS_AS(c.validate(), ValidationError);
}

TEST_CASE("exhaustive search") {
    const auto& v = reference_vocab();
    const auto& m = translator();
    SUBCASE("length 1 is the maximum over the alphabet") {
        const std::string chars = "ab.z";
        const auto w = exhaustive_worst_case(m, v, chars, 1);
        double best = 0.0;
        for (char c : chars) best = std::max(best, translation_energy(m, v, std::string(1, c)));
        CHECK(w.energy_pj == best);
    }
    SUBCASE("length 2 over two characters") {
        const auto w = exhaustive_worst_case(m, v, "xq", 2);
        double best = 0.0;
        for (const char* s : {"xx", "xq", "qx", "qq"}) best = std::max(best, translation_energy(m, v, s));
        CHECK(w.energy_pj == best);
        CHECK(translation_energy(m, v, w.input) == best);
    }
    CHECK_THROWS_AS(exhaustive_worst_case(m, v, Alphabet{}.sampling_chars(), 6), std::length_error);
}

TEST_CASE("GA never beats the exhaustive optimum and gets close to it") {
    const auto& v = reference_vocab();
    const std::string chars = "ae.z q";
    const auto oracle = exhaustive_worst_case(translator(), v, chars, 6);
    const auto r = ga_run_nlp(small(60, 60, 3), translator_energy_fitness(translator(), v), 6, chars);
    CHECK(r.best().fitness->value <= oracle.energy_pj);
    CHECK(r.best().fitness->value >= 0.8 * oracle.energy_pj);
}

TEST_CASE("CNN fitness reports the predicted class") {
    const auto model = CnnModel::reference();
    const auto f = cnn_energy_fitness(model);
    std::mt19937_64 rng(6);
    const auto img = uniform_random_image(rng);
    const auto ev = f.evaluate(img);
    CHECK(ev.label == cnn_forward(model, img).predicted_class);
    CHECK(ev.fitness.value == simulate_energy(cnn_forward(model, img).trace).energy_optimized_pj);

    auto cfg = small(30, 8, 2);
    cfg.min_classes_preserved = 5;
    const auto r = ga_run_cv(cfg, f, Image(1, 8, 8));
    for (std::size_t g = 1; g < r.history.size(); ++g) CHECK(r.history[g].best >= r.history[g - 1].best);
}
