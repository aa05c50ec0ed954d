#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace sponge {

/// Thrown when a trace, model or config violates a structural invariant.
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Per-operation energy constants of a coarse-grained accelerator. The
/// defaults are 45nm / 0.9V figures: one 32-bit DRAM word and one
/// floating-point multiply.
struct AsicCostModel {
    double dram_access_energy_pj = 1950.0;
    double fp_mult_energy_pj = 3.7;
    bool zero_skip_enabled = true;
    bool dram_compress_enabled = true;

    void validate() const;
};

/// Counts recorded for one layer invocation.
struct LayerTrace {
    std::string name;
    std::uint64_t mult_total = 0;
    std::uint64_t mult_nonzero = 0;
    std::uint64_t act_total = 0;
    std::uint64_t act_nonzero = 0;
    std::uint64_t dram_words_raw = 0;
    std::uint64_t dram_words_compressed = 0;

    bool operator==(const LayerTrace&) const = default;
};

struct ActivationTrace {
    std::vector<LayerTrace> layers;

    void validate() const;
    std::uint64_t mult_total() const;
    std::uint64_t mult_nonzero() const;

    bool operator==(const ActivationTrace&) const = default;
};

struct EnergyReport {
    double energy_optimized_pj = 0.0;
    double energy_unoptimized_pj = 0.0;
    double energy_ratio = 1.0;
    std::uint64_t mult_total = 0;
    std::uint64_t mult_nonzero = 0;
    std::uint64_t act_total = 0;
    std::uint64_t act_nonzero = 0;
    std::uint64_t dram_words_raw = 0;
    std::uint64_t dram_words_compressed = 0;

    double energy_optimized_mj() const { return energy_optimized_pj * 1e-9; }
    double energy_unoptimized_mj() const { return energy_unoptimized_pj * 1e-9; }

    bool operator==(const EnergyReport&) const = default;
};

/// Energy of a single layer on the optimized accelerator.
double layer_energy_pj(const LayerTrace& layer, const AsicCostModel& cost);

EnergyReport simulate_energy(const ActivationTrace& trace, const AsicCostModel& cost = {});

enum class FlushPolicy { PerLayerFullFlush };

/// Shape of one layer's memory traffic. Activation tensors carry their
/// nonzero counts so the compressed size can be derived; weights are never
/// compressed.
struct LayerShape {
    std::uint64_t input_words = 0;
    std::uint64_t input_nonzero = 0;
    std::uint64_t weight_words = 0;
    std::uint64_t output_words = 0;
    std::uint64_t output_nonzero = 0;
};

struct DramTraffic {
    std::uint64_t raw = 0;
    std::uint64_t compressed = 0;
};

/// Words needed to move one activation tensor in (value, index) form. A
/// tensor that would not shrink is moved dense.
std::uint64_t compressed_tensor_words(std::uint64_t words, std::uint64_t nonzero);

DramTraffic dram_traffic(const LayerShape& shape, FlushPolicy policy = FlushPolicy::PerLayerFullFlush);
std::vector<DramTraffic> dram_traffic(const std::vector<LayerShape>& shapes,
                                      FlushPolicy policy = FlushPolicy::PerLayerFullFlush);

/// Symbols of the static + dynamic power model E = (P_static + P_dynamic) * t.
struct PhysicalEnergyParams {
    double i_s = 1e-12;            // reverse saturation current [A]
    double v_d = 0.3;              // diode voltage [V]
    double q = 1.602176634e-19;    // electronic charge [C]
    double k = 1.380649e-23;       // Boltzmann constant [J/K]
    double temperature_k = 300.0;
    double v_core = 0.9;
    double alpha = 0.5;            // activity factor in [0, 1]
    double capacitance_f = 1e-9;
    double frequency_hz = 1e9;
    double duration_s = 1.0;

    void validate() const;
};

double static_power_w(const PhysicalEnergyParams& p);
double dynamic_power_w(const PhysicalEnergyParams& p);
/// Joules over p.duration_s. Throws std::range_error if the diode exponential
/// overflows.
double physical_energy(const PhysicalEnergyParams& p);

// Line-delimited trace format: one layer per line,
//   <name> <mult_total> <mult_nonzero> <act_total> <act_nonzero> <dram_raw> <dram_compressed>
// Lines starting with '#' are comments. Names must not contain whitespace.
void write_trace(std::ostream& out, const ActivationTrace& trace);
ActivationTrace read_trace(std::istream& in);

}  // namespace sponge
