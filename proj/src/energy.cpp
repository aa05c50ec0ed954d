#include "sponge/energy.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

namespace sponge {

void AsicCostModel::validate() const {
    if (!(dram_access_energy_pj > 0.0) || !(fp_mult_energy_pj > 0.0))
        throw ValidationError("cost model energies must be strictly positive");
}

void ActivationTrace::validate() const {
    for (const auto& l : layers) {
        auto fail = [&](const char* what) {
            throw ValidationError("layer '" + l.name + "': " + what);
        };
        if (l.mult_nonzero > l.mult_total) fail("mult_nonzero exceeds mult_total");
        if (l.act_nonzero > l.act_total) fail("act_nonzero exceeds act_total");
        if (l.dram_words_compressed > l.dram_words_raw) fail("compressed DRAM words exceed raw words");
    }
}

std::uint64_t ActivationTrace::mult_total() const {
    std::uint64_t n = 0;
    for (const auto& l : layers) n += l.mult_total;
    return n;
}

std::uint64_t ActivationTrace::mult_nonzero() const {
    std::uint64_t n = 0;
    for (const auto& l : layers) n += l.mult_nonzero;
    return n;
}

double layer_energy_pj(const LayerTrace& l, const AsicCostModel& cost) {
    const auto mults = cost.zero_skip_enabled ? l.mult_nonzero : l.mult_total;
    const auto words = cost.dram_compress_enabled ? l.dram_words_compressed : l.dram_words_raw;
    return static_cast<double>(mults) * cost.fp_mult_energy_pj +
           static_cast<double>(words) * cost.dram_access_energy_pj;
}

EnergyReport simulate_energy(const ActivationTrace& trace, const AsicCostModel& cost) {
    cost.validate();
    trace.validate();

    EnergyReport r;
    // Accumulate per layer in trace order so the result is reproducible bit for bit.
    for (const auto& l : trace.layers) {
        r.energy_optimized_pj += layer_energy_pj(l, cost);
        r.energy_unoptimized_pj += static_cast<double>(l.mult_total) * cost.fp_mult_energy_pj +
                                   static_cast<double>(l.dram_words_raw) * cost.dram_access_energy_pj;
        r.mult_total += l.mult_total;
        r.mult_nonzero += l.mult_nonzero;
        r.act_total += l.act_total;
        r.act_nonzero += l.act_nonzero;
        r.dram_words_raw += l.dram_words_raw;
        r.dram_words_compressed += l.dram_words_compressed;
    }
    r.energy_ratio = r.energy_unoptimized_pj > 0.0 ? r.energy_optimized_pj / r.energy_unoptimized_pj : 1.0;
    return r;
}

std::uint64_t compressed_tensor_words(std::uint64_t words, std::uint64_t nonzero) {
    return std::min(words, 2 * nonzero);
}

DramTraffic dram_traffic(const LayerShape& s, FlushPolicy) {
    if (s.input_nonzero > s.input_words || s.output_nonzero > s.output_words)
        throw ValidationError("nonzero count exceeds tensor size");
    DramTraffic t;
    t.raw = s.input_words + s.weight_words + s.output_words;
    t.compressed = compressed_tensor_words(s.input_words, s.input_nonzero) + s.weight_words +
                   compressed_tensor_words(s.output_words, s.output_nonzero);
    return t;
}

std::vector<DramTraffic> dram_traffic(const std::vector<LayerShape>& shapes, FlushPolicy policy) {
    std::vector<DramTraffic> out;
    out.reserve(shapes.size());
    for (const auto& s : shapes) out.push_back(dram_traffic(s, policy));
    return out;
}

void PhysicalEnergyParams::validate() const {
    const double positive[] = {i_s, v_d, q, k, temperature_k, v_core, capacitance_f, frequency_hz, duration_s};
    for (double v : positive)
        if (!(v > 0.0) || !std::isfinite(v)) throw ValidationError("physical parameters must be finite and positive");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValidationError("alpha must lie in [0, 1]");
}

double static_power_w(const PhysicalEnergyParams& p) {
    const double exponent = p.q * p.v_d / (p.k * p.temperature_k);
    const double e = std::exp(exponent);
    if (!std::isfinite(e)) throw std::range_error("diode exponential overflows: q*V_d/(k*T) = " + std::to_string(exponent));
    return p.i_s * (e - 1.0) * p.v_core;
}

double dynamic_power_w(const PhysicalEnergyParams& p) {
    return p.alpha * p.capacitance_f * p.v_core * p.v_core * p.frequency_hz;
}

double physical_energy(const PhysicalEnergyParams& p) {
    // i_s = 0 and alpha = 0 are allowed here so the zero-draw case can be expressed.
    if (p.i_s < 0.0 || !(p.alpha >= 0.0 && p.alpha <= 1.0) || !(p.duration_s >= 0.0))
        throw ValidationError("invalid physical energy parameters");
    const double stat = p.i_s == 0.0 ? 0.0 : static_power_w(p);
    return (stat + dynamic_power_w(p)) * p.duration_s;
}

void write_trace(std::ostream& out, const ActivationTrace& trace) {
    out << "# sponge-trace v1\n";
    for (const auto& l : trace.layers) {
        out << l.name << ' ' << l.mult_total << ' ' << l.mult_nonzero << ' ' << l.act_total << ' '
            << l.act_nonzero << ' ' << l.dram_words_raw << ' ' << l.dram_words_compressed << '\n';
    }
}

ActivationTrace read_trace(std::istream& in) {
    ActivationTrace t;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        LayerTrace l;
        long long c[6];
        if (!(ss >> l.name >> c[0] >> c[1] >> c[2] >> c[3] >> c[4] >> c[5]))
            throw ValidationError("trace line " + std::to_string(lineno) + ": expected name and six counts");
        for (long long v : c)
            if (v < 0) throw ValidationError("trace line " + std::to_string(lineno) + ": negative count");
        l.mult_total = c[0];
        l.mult_nonzero = c[1];
        l.act_total = c[2];
        l.act_nonzero = c[3];
        l.dram_words_raw = c[4];
        l.dram_words_compressed = c[5];
        std::string extra;
        if (ss >> extra) throw ValidationError("trace line " + std::to_string(lineno) + ": trailing fields");
        t.layers.push_back(std::move(l));
    }
    t.validate();
    return t;
}

}  // namespace sponge
