#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "sponge/cnn.hpp"
#include "sponge/energy.hpp"
#include "sponge/measure.hpp"
#include "sponge/translator.hpp"

namespace sponge {

enum class CostSource { SimulatedEnergy, SimulatedLatency };

const char* to_string(CostSource s);
CostSource cost_source_from_string(const std::string& s);

/// Per-layer cost used both for profiling and for the guard, so the two
/// always agree. Energy in pJ, latency in seconds (noise-free).
struct CostFunction {
    CostSource source = CostSource::SimulatedEnergy;
    AsicCostModel asic;
    LatencyModel latency;

    double base() const;
    double layer(const LayerTrace& l) const;
    double total(const ActivationTrace& trace) const;
};

struct ConsumptionProfile {
    std::vector<double> costs;  // one per profiled example, in corpus order
    double percentile = 99.0;
    double threshold = 0.0;
    CostSource source = CostSource::SimulatedEnergy;

    void validate() const;
    // "sponge-profile v1", source, percentile, threshold, count, then one cost per line.
    void save(std::ostream& out) const;
    static ConsumptionProfile load(std::istream& in);
};

/// Nearest-rank percentile: the ceil(p/100 * n)-th smallest value. p in (0, 100].
double nearest_rank_percentile(std::vector<double> values, double percentile);

ConsumptionProfile make_profile(std::vector<double> costs, double percentile, CostSource source);

ConsumptionProfile profile_natural(const ToyTranslator& model, const Vocab& vocab,
                                   const std::vector<std::string>& corpus, double percentile,
                                   const CostFunction& cost, const Alphabet& alphabet = {});
ConsumptionProfile profile_natural(const CnnModel& model, const std::vector<Image>& corpus, double percentile,
                                   const CostFunction& cost);

/// Inference stopped by the guard.
struct Rejection {
    double partial_cost = 0.0;  // includes the layer that crossed the threshold
    double threshold = 0.0;
    std::string layer;          // name of that layer
    std::size_t layers_run = 0;
};

template <class Result>
struct Guarded {
    std::optional<Result> result;
    std::optional<Rejection> rejection;
    double cost = 0.0;  // cost actually expended
    ActivationTrace trace;  // layers actually executed
    bool rejected() const { return rejection.has_value(); }
};

/// Runs the model and aborts after the first layer that takes the
/// accumulated cost above the profile threshold. Throws
/// std::invalid_argument if the cost function and profile disagree on the
/// cost source.
Guarded<TranslationResult> guarded_infer(const ToyTranslator& model, const TokenSequence& input,
                                         const ConsumptionProfile& profile, const CostFunction& cost);
Guarded<CnnResult> guarded_infer(const CnnModel& model, const Image& input, const ConsumptionProfile& profile,
                                 const CostFunction& cost);

}  // namespace sponge
