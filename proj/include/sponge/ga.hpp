#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <iostream>
#include <stdexcept>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "sponge/cnn.hpp"
#include "sponge/energy.hpp"
#include "sponge/tokenizer.hpp"
#include "sponge/translator.hpp"

namespace sponge {

enum class Domain { Nlp, Cv };

enum class FitnessSource { SimulatedEnergy, MeasuredLatency, MeasuredEnergy, EstimatedOps };

const char* to_string(FitnessSource s);

/// Scalar objective of the search. Values of different sources are never
/// compared with each other.
struct FitnessValue {
    double value = 0.0;
    FitnessSource source = FitnessSource::SimulatedEnergy;
};

/// What a fitness function returns: the value and, for classifiers, the
/// predicted class used to keep the pool diverse.
struct Evaluation {
    FitnessValue fitness;
    int label = -1;
};

template <class Payload>
struct FitnessFunction {
    std::function<Evaluation(const Payload&)> evaluate;
    FitnessSource source = FitnessSource::SimulatedEnergy;
    /// Safe to call from several threads at once. Measured sources never are.
    bool reentrant = false;
};

struct GaConfig {
    std::size_t pool_size = 1000;
    std::size_t generations = 1000;
    double selection_fraction = 0.10;
    double mutation_rate = 0.05;      // NLP: per-character resampling probability
    double flip_probability = 0.5;    // NLP: chance of swapping the crossover halves
    double dilution_fraction = 0.01;  // CV: fraction of pixels resampled per child
    std::size_t min_classes_preserved = 20;
    bool cache_fitness = true;  // false re-measures every individual each generation
    std::uint64_t seed = 0;
    std::size_t threads = 0;    // 0 = hardware concurrency (only for reentrant fitness)

    void validate() const;
};

template <class Payload>
struct Individual {
    Payload payload;
    std::optional<FitnessValue> fitness;
    int label = -1;
};

struct GenerationStats {
    std::size_t generation = 0;
    double best = 0.0;
    double mean = 0.0;
    FitnessSource source = FitnessSource::SimulatedEnergy;
    std::size_t failures = 0;
};

/// Called after each generation is recorded; returning false ends the run
/// early with the pool evaluated so far.
using GenerationCallback = std::function<bool(const GenerationStats&)>;

template <class Payload>
struct GaResult {
    std::vector<Individual<Payload>> pool;  // final generation, best first
    std::vector<GenerationStats> history;
    const Individual<Payload>& best() const { return pool.front(); }
};

// Domain operators.

/// Left floor(n/2) characters of `a` followed by the rest of `b`; with
/// probability `flip_probability` the two parts are swapped.
std::string crossover_nlp(const std::string& a, const std::string& b, std::mt19937_64& rng, double flip_probability);
std::string crossover_nlp(const std::string& a, const std::string& b, bool flip);

/// Per-pixel blend a*mask + (1-mask)*b with a fair binary mask.
Image crossover_cv(const Image& a, const Image& b, std::mt19937_64& rng);
Image crossover_cv(const Image& a, const Image& b, const std::vector<bool>& mask);

/// Each character independently replaced by a uniform draw from `chars`
/// with probability `rate`.
std::string mutate_nlp(const std::string& s, std::mt19937_64& rng, double rate, const std::string& chars);

/// Exactly ceil(fraction * N) distinct pixels resampled uniformly in [0, 1].
Image mutate_cv(const Image& img, std::mt19937_64& rng, double fraction = 0.01);

/// Indices of the parents: the top ceil(fraction * pool) by fitness (ties by
/// position), and for CV additionally the best member of each of the
/// `min_classes_preserved` classes with the highest best fitness. Members
/// without fitness rank last.
template <class Payload>
std::vector<std::size_t> select_top(const std::vector<Individual<Payload>>& pool, const GaConfig& config,
                                    Domain domain);

/// Genetic search. Every generation evaluates the pool, records best/mean
/// fitness, keeps the parents chosen by select_top, copies the best
/// individual unchanged into the next pool and fills the rest with mutated
/// crossover children.
template <class Payload>
GaResult<Payload> ga_run(const GaConfig& config, const FitnessFunction<Payload>& fitness, Domain domain,
                         const std::function<Payload(std::mt19937_64&)>& random_payload,
                         const std::function<Payload(const Payload&, const Payload&, std::mt19937_64&)>& breed,
                         const GenerationCallback& on_generation = {});

/// NLP search over fixed-length strings drawn from alphabet.sampling_chars().
GaResult<std::string> ga_run_nlp(const GaConfig& config, const FitnessFunction<std::string>& fitness,
                                 std::size_t length, const Alphabet& alphabet = {},
                                 const GenerationCallback& on_generation = {});
/// Same, with an explicit character set.
GaResult<std::string> ga_run_nlp(const GaConfig& config, const FitnessFunction<std::string>& fitness,
                                 std::size_t length, const std::string& chars,
                                 const GenerationCallback& on_generation = {});
/// CV search over images shaped like `shape`, starting from uniform noise.
GaResult<Image> ga_run_cv(const GaConfig& config, const FitnessFunction<Image>& fitness, const Image& shape,
                          const GenerationCallback& on_generation = {});

// White-box fitness functions.

/// Simulated accelerator energy (pJ) of translating the text.
FitnessFunction<std::string> translator_energy_fitness(const ToyTranslator& model, const Vocab& vocab,
                                                       const AsicCostModel& cost = {}, const Alphabet& alphabet = {});
/// Closed-form multiply count of the translation.
FitnessFunction<std::string> translator_ops_fitness(const ToyTranslator& model, const Vocab& vocab,
                                                    const Alphabet& alphabet = {});
/// Simulated accelerator energy of a CNN forward pass; reports the predicted class.
FitnessFunction<Image> cnn_energy_fitness(const CnnModel& model, const AsicCostModel& cost = {});

/// Simulated energy of translating one text. Empty inputs cost nothing.
double translation_energy(const ToyTranslator& model, const Vocab& vocab, const std::string& text,
                          const AsicCostModel& cost = {}, const Alphabet& alphabet = {});

struct WorstCase {
    std::string input;
    double energy_pj = 0.0;
};

/// Enumerates every string of exactly `length` characters from `chars` and
/// returns the first one (in enumeration order) of maximal simulated energy.
/// Throws std::length_error if more than 1e7 strings would be tried.
WorstCase exhaustive_worst_case(const ToyTranslator& model, const Vocab& vocab, const std::string& chars,
                                std::size_t length, const AsicCostModel& cost = {}, const Alphabet& alphabet = {});

// ---------------------------------------------------------------------------
// Template implementations.

namespace detail {

template <class Payload>
bool better(const Individual<Payload>& a, const Individual<Payload>& b) {
    if (!a.fitness) return false;
    if (!b.fitness) return true;
    return a.fitness->value > b.fitness->value;
}

template <class Payload>
std::vector<std::size_t> ranking(const std::vector<Individual<Payload>>& pool) {
    std::vector<std::size_t> order(pool.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return better(pool[a], pool[b]); });
    return order;
}

}  // namespace detail

template <class Payload>
std::vector<std::size_t> select_top(const std::vector<Individual<Payload>>& pool, const GaConfig& config,
                                    Domain domain) {
    if (pool.empty()) return {};
    const auto order = detail::ranking(pool);
    const auto n_top = std::min<std::size_t>(
        pool.size(),
        std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(config.selection_fraction *
                                                                     static_cast<double>(pool.size()) - 1e-9))));
    std::vector<std::size_t> chosen(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_top));
    if (domain == Domain::Cv && config.min_classes_preserved > 0) {
        // Best member per class, visited in ranking order.
        std::vector<std::size_t> class_best;
        std::set<int> seen;
        for (auto idx : order) {
            const int label = pool[idx].label;
            if (label < 0 || !pool[idx].fitness) continue;
            if (seen.insert(label).second) class_best.push_back(idx);
            if (class_best.size() == config.min_classes_preserved) break;
        }
        std::set<std::size_t> have(chosen.begin(), chosen.end());
        for (auto idx : class_best)
            if (have.insert(idx).second) chosen.push_back(idx);
    }
    return chosen;
}

template <class Payload>
GaResult<Payload> ga_run(const GaConfig& config, const FitnessFunction<Payload>& fitness, Domain domain,
                         const std::function<Payload(std::mt19937_64&)>& random_payload,
                         const std::function<Payload(const Payload&, const Payload&, std::mt19937_64&)>& breed,
                         const GenerationCallback& on_generation) {
    config.validate();
    std::mt19937_64 rng(config.seed);
    std::vector<Individual<Payload>> pool;
    pool.reserve(config.pool_size);
    for (std::size_t i = 0; i < config.pool_size; ++i) pool.push_back({random_payload(rng), std::nullopt, -1});

    const std::size_t threads =
        fitness.reentrant ? (config.threads ? config.threads : std::max(1u, std::thread::hardware_concurrency())) : 1;

    GaResult<Payload> result;
    for (std::size_t gen = 0; gen < config.generations; ++gen) {
        std::vector<std::size_t> todo;
        for (std::size_t i = 0; i < pool.size(); ++i)
            if (!config.cache_fitness || !pool[i].fitness) todo.push_back(i);

        std::vector<char> failed(pool.size(), 0);
        auto work = [&](std::size_t begin, std::size_t step) {
            for (std::size_t k = begin; k < todo.size(); k += step) {
                auto& ind = pool[todo[k]];
                try {
                    auto ev = fitness.evaluate(ind.payload);
                    if (!std::isfinite(ev.fitness.value) || ev.fitness.value < 0.0)
                        throw std::runtime_error("fitness is not a finite non-negative number");
                    ind.fitness = ev.fitness;
                    ind.label = ev.label;
                } catch (const std::exception&) {
                    ind.fitness = FitnessValue{0.0, fitness.source};
                    failed[todo[k]] = 1;
                }
            }
        };
        if (threads > 1 && todo.size() > 1) {
            std::vector<std::jthread> workers;
            for (std::size_t t = 0; t < threads; ++t) workers.emplace_back(work, t, threads);
        } else {
            work(0, 1);
        }

        GenerationStats stats;
        stats.generation = gen;
        stats.source = fitness.source;
        double sum = 0.0;
        for (std::size_t i = 0; i < pool.size(); ++i) {
            sum += pool[i].fitness->value;
            stats.best = std::max(stats.best, pool[i].fitness->value);
            stats.failures += static_cast<std::size_t>(failed[i]);
        }
        stats.mean = sum / static_cast<double>(pool.size());
        if (stats.failures)
            std::clog << "ga: generation " << gen << ": " << stats.failures
                      << " fitness evaluation(s) failed, assigned worst fitness\n";
        result.history.push_back(stats);
        if (on_generation && !on_generation(stats)) break;
        if (gen + 1 == config.generations) break;

        const auto parents = select_top(pool, config, domain);
        const auto order = detail::ranking(pool);
        std::vector<Individual<Payload>> next;
        next.reserve(config.pool_size);
        next.push_back(pool[order.front()]);  // elite, unmutated
        std::uniform_int_distribution<std::size_t> pick(0, parents.size() - 1);
        while (next.size() < config.pool_size) {
            const auto& a = pool[parents[pick(rng)]];
            const auto& b = pool[parents[pick(rng)]];
            next.push_back({breed(a.payload, b.payload, rng), std::nullopt, -1});
        }
        pool = std::move(next);
    }

    const auto order = detail::ranking(pool);
    result.pool.reserve(pool.size());
    for (auto idx : order) result.pool.push_back(pool[idx]);
    return result;
}

}  // namespace sponge
