#include "sponge/defense.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <ostream>
#include <stdexcept>

namespace sponge {

const char* to_string(CostSource s) {
    return s == CostSource::SimulatedEnergy ? "simulated_energy" : "simulated_latency";
}

CostSource cost_source_from_string(const std::string& s) {
    if (s == "simulated_energy") return CostSource::SimulatedEnergy;
    if (s == "simulated_latency") return CostSource::SimulatedLatency;
    throw ValidationError("unknown cost source '" + s + "'");
}

double CostFunction::base() const { return source == CostSource::SimulatedLatency ? latency.fixed_s : 0.0; }

double CostFunction::layer(const LayerTrace& l) const {
    if (source == CostSource::SimulatedEnergy) return layer_energy_pj(l, asic);
    const auto words = latency.use_compressed_traffic ? l.dram_words_compressed : l.dram_words_raw;
    return latency.per_mult_s * static_cast<double>(l.mult_total) +
           latency.per_dram_word_s * static_cast<double>(words);
}

double CostFunction::total(const ActivationTrace& trace) const {
    double c = base();
    for (const auto& l : trace.layers) c += layer(l);
    return c;
}

void ConsumptionProfile::validate() const {
    if (!(percentile > 0.0 && percentile <= 100.0)) throw ValidationError("profile: percentile must be in (0, 100]");
    if (std::isnan(threshold)) throw ValidationError("profile: threshold is NaN");
}

void ConsumptionProfile::save(std::ostream& out) const {
    validate();
    out << "sponge-profile v1\n";
    out << "source " << to_string(source) << '\n';
    out << std::setprecision(17);
    out << "percentile " << percentile << '\n';
    out << "threshold " << threshold << '\n';
    out << "count " << costs.size() << '\n';
    for (double c : costs) out << c << '\n';
}

ConsumptionProfile ConsumptionProfile::load(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line != "sponge-profile v1") throw ValidationError("profile: bad header");
    auto field = [&](const std::string& key) {
        std::string k, v;
        if (!(in >> k >> v) || k != key) throw ValidationError("profile: expected '" + key + "'");
        return v;
    };
    ConsumptionProfile p;
    p.source = cost_source_from_string(field("source"));
    try {
        p.percentile = std::stod(field("percentile"));
        p.threshold = std::stod(field("threshold"));
        const auto n = std::stoull(field("count"));
        p.costs.resize(n);
        for (auto& c : p.costs)
            if (!(in >> c)) throw ValidationError("profile: truncated cost list");
    } catch (const std::logic_error& e) {
        if (dynamic_cast<const ValidationError*>(&e)) throw;
        throw ValidationError(std::string("profile: bad number: ") + e.what());
    }
    p.validate();
    return p;
}

double nearest_rank_percentile(std::vector<double> values, double percentile) {
    if (values.empty()) throw std::invalid_argument("percentile of an empty set");
    if (!(percentile > 0.0 && percentile <= 100.0)) throw std::invalid_argument("percentile must be in (0, 100]");
    std::sort(values.begin(), values.end());
    const double n = static_cast<double>(values.size());
    auto rank = static_cast<std::size_t>(std::ceil(percentile / 100.0 * n - 1e-9));
    rank = std::clamp<std::size_t>(rank, 1, values.size());
    return values[rank - 1];
}

ConsumptionProfile make_profile(std::vector<double> costs, double percentile, CostSource source) {
    if (costs.empty()) throw std::invalid_argument("profile: empty corpus");
    ConsumptionProfile p;
    p.percentile = percentile;
    p.source = source;
    p.threshold = nearest_rank_percentile(costs, percentile);
    p.costs = std::move(costs);
    p.validate();
    return p;
}

ConsumptionProfile profile_natural(const ToyTranslator& model, const Vocab& vocab,
                                   const std::vector<std::string>& corpus, double percentile,
                                   const CostFunction& cost, const Alphabet& alphabet) {
    std::vector<double> costs;
    costs.reserve(corpus.size());
    for (const auto& text : corpus) {
        const auto input = encode_text(text, vocab, alphabet);
        costs.push_back(input.ids.empty() ? cost.base() : cost.total(translate(model, input).trace));
    }
    return make_profile(std::move(costs), percentile, cost.source);
}

ConsumptionProfile profile_natural(const CnnModel& model, const std::vector<Image>& corpus, double percentile,
                                   const CostFunction& cost) {
    std::vector<double> costs;
    costs.reserve(corpus.size());
    for (const auto& img : corpus) costs.push_back(cost.total(cnn_forward(model, img).trace));
    return make_profile(std::move(costs), percentile, cost.source);
}

namespace {

// Observer that accumulates cost and stops the run once it exceeds the threshold.
struct Meter {
    const CostFunction& cost;
    double threshold;
    double spent;
    std::size_t layers = 0;
    std::optional<Rejection> rejection;

    bool operator()(const LayerTrace& l) {
        spent += cost.layer(l);
        ++layers;
        if (spent > threshold) {
            rejection = Rejection{spent, threshold, l.name, layers};
            return false;
        }
        return true;
    }
};

void check_sources(const ConsumptionProfile& profile, const CostFunction& cost) {
    profile.validate();
    if (profile.source != cost.source)
        throw std::invalid_argument(std::string("guard: profile measures ") + to_string(profile.source) +
                                    " but the cost function measures " + to_string(cost.source));
}

}  // namespace

Guarded<TranslationResult> guarded_infer(const ToyTranslator& model, const TokenSequence& input,
                                         const ConsumptionProfile& profile, const CostFunction& cost) {
    check_sources(profile, cost);
    Meter meter{cost, profile.threshold, cost.base(), 0, std::nullopt};
    auto r = translate(model, input, [&](const LayerTrace& l) { return meter(l); });
    Guarded<TranslationResult> out;
    out.cost = meter.spent;
    out.trace = r.trace;
    if (meter.rejection) out.rejection = meter.rejection;
    else out.result = std::move(r);
    return out;
}

Guarded<CnnResult> guarded_infer(const CnnModel& model, const Image& input, const ConsumptionProfile& profile,
                                 const CostFunction& cost) {
    check_sources(profile, cost);
    Meter meter{cost, profile.threshold, cost.base(), 0, std::nullopt};
    auto r = cnn_forward(model, input, [&](const LayerTrace& l) { return meter(l); });
    Guarded<CnnResult> out;
    out.cost = meter.spent;
    out.trace = r.trace;
    if (meter.rejection) out.rejection = meter.rejection;
    else out.result = std::move(r);
    return out;
}

}  // namespace sponge
