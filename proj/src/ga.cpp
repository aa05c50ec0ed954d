#include "sponge/ga.hpp"

#include <numeric>
#include <stdexcept>

namespace sponge {

const char* to_string(FitnessSource s) {
    switch (s) {
        case FitnessSource::SimulatedEnergy: return "simulated_energy";
        case FitnessSource::MeasuredLatency: return "measured_latency";
        case FitnessSource::MeasuredEnergy: return "measured_energy";
        case FitnessSource::EstimatedOps: return "estimated_ops";
    }
    return "unknown";
}

void GaConfig::validate() const {
    if (pool_size < 2) throw ValidationError("ga: pool_size must be at least 2");
    if (generations < 1) throw ValidationError("ga: generations must be at least 1");
    if (!(selection_fraction > 0.0 && selection_fraction <= 1.0))
        throw ValidationError("ga: selection_fraction must be in (0, 1]");
    if (!(mutation_rate >= 0.0 && mutation_rate <= 1.0)) throw ValidationError("ga: mutation_rate must be in [0, 1]");
    if (!(flip_probability >= 0.0 && flip_probability <= 1.0))
        throw ValidationError("ga: flip_probability must be in [0, 1]");
    if (!(dilution_fraction >= 0.0 && dilution_fraction <= 1.0))
        throw ValidationError("ga: dilution_fraction must be in [0, 1]");
}

std::string crossover_nlp(const std::string& a, const std::string& b, bool flip) {
    if (a.size() != b.size()) throw std::invalid_argument("crossover_nlp: parents differ in length");
    const std::size_t split = a.size() / 2;
    const std::string left = a.substr(0, split);
    const std::string right = b.substr(split);
    return flip ? right + left : left + right;
}

std::string crossover_nlp(const std::string& a, const std::string& b, std::mt19937_64& rng, double flip_probability) {
    std::bernoulli_distribution flip(flip_probability);
    return crossover_nlp(a, b, flip(rng));
}

Image crossover_cv(const Image& a, const Image& b, const std::vector<bool>& mask) {
    if (!a.same_shape(b) || mask.size() != a.size())
        throw std::invalid_argument("crossover_cv: parent or mask shapes differ");
    Image child = a;
    for (std::size_t i = 0; i < child.size(); ++i) child.pixels[i] = mask[i] ? a.pixels[i] : b.pixels[i];
    return child;
}

Image crossover_cv(const Image& a, const Image& b, std::mt19937_64& rng) {
    std::bernoulli_distribution coin(0.5);
    std::vector<bool> mask(a.size());
    for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = coin(rng);
    return crossover_cv(a, b, mask);
}

std::string mutate_nlp(const std::string& s, std::mt19937_64& rng, double rate, const std::string& chars) {
    if (chars.empty()) throw std::invalid_argument("mutate_nlp: empty character set");
    std::bernoulli_distribution hit(rate);
    std::uniform_int_distribution<std::size_t> pick(0, chars.size() - 1);
    std::string out = s;
    for (auto& c : out)
        if (hit(rng)) c = chars[pick(rng)];
    return out;
}

Image mutate_cv(const Image& img, std::mt19937_64& rng, double fraction) {
    Image out = img;
    const std::size_t n = img.size();
    if (n == 0) return out;
    auto k = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9));
    k = std::min(k, n);
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::uniform_real_distribution<double> u(0.0, 1.0);
    // Partial Fisher-Yates: the first k entries become a uniform sample.
    for (std::size_t i = 0; i < k; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, n - 1);
        std::swap(idx[i], idx[pick(rng)]);
        out.pixels[idx[i]] = u(rng);
    }
    return out;
}

GaResult<std::string> ga_run_nlp(const GaConfig& config, const FitnessFunction<std::string>& fitness,
                                 std::size_t length, const std::string& chars,
                                 const GenerationCallback& on_generation) {
    if (length == 0) throw ValidationError("ga: candidate length must be positive");
    if (chars.empty()) throw ValidationError("ga: empty character set");
    std::uniform_int_distribution<std::size_t> pick(0, chars.size() - 1);
    auto init = [&](std::mt19937_64& rng) {
        std::string s(length, ' ');
        for (auto& c : s) c = chars[pick(rng)];
        return s;
    };
    auto breed = [&](const std::string& a, const std::string& b, std::mt19937_64& rng) {
        return mutate_nlp(crossover_nlp(a, b, rng, config.flip_probability), rng, config.mutation_rate, chars);
    };
    return ga_run<std::string>(config, fitness, Domain::Nlp, init, breed, on_generation);
}

GaResult<std::string> ga_run_nlp(const GaConfig& config, const FitnessFunction<std::string>& fitness,
                                 std::size_t length, const Alphabet& alphabet,
                                 const GenerationCallback& on_generation) {
    return ga_run_nlp(config, fitness, length, alphabet.sampling_chars(), on_generation);
}

GaResult<Image> ga_run_cv(const GaConfig& config, const FitnessFunction<Image>& fitness, const Image& shape,
                          const GenerationCallback& on_generation) {
    if (shape.size() == 0) throw ValidationError("ga: empty image shape");
    auto init = [&](std::mt19937_64& rng) {
        return uniform_random_image(rng, shape.channels, shape.height, shape.width);
    };
    auto breed = [&](const Image& a, const Image& b, std::mt19937_64& rng) {
        return mutate_cv(crossover_cv(a, b, rng), rng, config.dilution_fraction);
    };
    return ga_run<Image>(config, fitness, Domain::Cv, init, breed, on_generation);
}

double translation_energy(const ToyTranslator& model, const Vocab& vocab, const std::string& text,
                          const AsicCostModel& cost, const Alphabet& alphabet) {
    const auto input = encode_text(text, vocab, alphabet);
    if (input.ids.empty()) return 0.0;
    return simulate_energy(translate(model, input).trace, cost).energy_optimized_pj;
}

FitnessFunction<std::string> translator_energy_fitness(const ToyTranslator& model, const Vocab& vocab,
                                                       const AsicCostModel& cost, const Alphabet& alphabet) {
    FitnessFunction<std::string> f;
    f.source = FitnessSource::SimulatedEnergy;
    f.reentrant = true;
    f.evaluate = [&model, &vocab, cost, alphabet](const std::string& text) {
        return Evaluation{{translation_energy(model, vocab, text, cost, alphabet), FitnessSource::SimulatedEnergy}, -1};
    };
    return f;
}

FitnessFunction<std::string> translator_ops_fitness(const ToyTranslator& model, const Vocab& vocab,
                                                    const Alphabet& alphabet) {
    FitnessFunction<std::string> f;
    f.source = FitnessSource::EstimatedOps;
    f.reentrant = true;
    f.evaluate = [&model, &vocab, alphabet](const std::string& text) {
        const auto input = encode_text(text, vocab, alphabet);
        double ops = 0.0;
        if (!input.ids.empty())
            ops = static_cast<double>(pipeline_cost_estimate(translate(model, input).dims, model));
        return Evaluation{{ops, FitnessSource::EstimatedOps}, -1};
    };
    return f;
}

FitnessFunction<Image> cnn_energy_fitness(const CnnModel& model, const AsicCostModel& cost) {
    FitnessFunction<Image> f;
    f.source = FitnessSource::SimulatedEnergy;
    f.reentrant = true;
    f.evaluate = [&model, cost](const Image& img) {
        const auto r = cnn_forward(model, img);
        return Evaluation{{simulate_energy(r.trace, cost).energy_optimized_pj, FitnessSource::SimulatedEnergy},
                          r.predicted_class};
    };
    return f;
}

WorstCase exhaustive_worst_case(const ToyTranslator& model, const Vocab& vocab, const std::string& chars,
                                std::size_t length, const AsicCostModel& cost, const Alphabet& alphabet) {
    constexpr double kLimit = 1e7;
    if (chars.empty() || length == 0) throw std::invalid_argument("exhaustive_worst_case: empty search space");
    if (std::pow(static_cast<double>(chars.size()), static_cast<double>(length)) > kLimit)
        throw std::length_error("exhaustive_worst_case: more than 1e7 candidates");

    std::vector<std::size_t> digits(length, 0);
    std::string candidate(length, chars[0]);
    WorstCase best{candidate, -1.0};
    while (true) {
        const double e = translation_energy(model, vocab, candidate, cost, alphabet);
        if (e > best.energy_pj) best = {candidate, e};
        // Odometer increment, last position fastest.
        std::size_t pos = length;
        while (pos > 0) {
            --pos;
            if (++digits[pos] < chars.size()) {
                candidate[pos] = chars[digits[pos]];
                break;
            }
            digits[pos] = 0;
            candidate[pos] = chars[0];
            if (pos == 0) return best;
        }
    }
}

}  // namespace sponge
