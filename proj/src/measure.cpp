#include "sponge/measure.hpp"

#include <chrono>
#include <fstream>
#include <stdexcept>
#include <thread>

namespace sponge {

double SimulatedClock::now() {
    std::lock_guard lock(mu_);
    return t_;
}

void SimulatedClock::sleep(double seconds) {
    if (!(seconds >= 0.0)) throw std::invalid_argument("clock: negative sleep");
    std::lock_guard lock(mu_);
    t_ += seconds;
}

double SteadyClock::now() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

void SteadyClock::sleep(double seconds) {
    if (!(seconds >= 0.0)) throw std::invalid_argument("clock: negative sleep");
    std::this_thread::sleep_for(std::chrono::duration<double>(seconds));
}

CounterFileMeter::CounterFileMeter(std::filesystem::path path) : path_(std::move(path)) {
    if (!std::filesystem::exists(path_)) throw std::runtime_error("meter: no counter file at " + path_.string());
}

double CounterFileMeter::read_joules() {
    std::ifstream in(path_);
    long long value = -1;
    if (!(in >> value) || value < 0) throw std::runtime_error("meter: unreadable counter in " + path_.string());
    const auto uj = static_cast<std::uint64_t>(value);
    if (last_ && uj < *last_) throw std::runtime_error("meter: counter went backwards in " + path_.string());
    last_ = uj;
    return static_cast<double>(uj) * 1e-6;
}

void SimulatedEnergyMeter::add(double joules) {
    if (!(joules >= 0.0)) throw std::invalid_argument("meter: energy increments must be non-negative");
    total_ += joules;
}

std::unique_ptr<EnergyMeter> make_meter(const std::optional<std::filesystem::path>& counter_file) {
    if (!counter_file) return nullptr;
    return std::make_unique<CounterFileMeter>(*counter_file);
}

namespace {
std::mutex& session_mutex() {
    static std::mutex mu;
    return mu;
}
}  // namespace

std::vector<LatencySample> time_inference(const std::function<void()>& fn, std::size_t warmup,
                                          std::size_t repetitions, Clock& clock, std::size_t input_id,
                                          EnergyMeter* meter) {
    if (repetitions < 1) throw std::invalid_argument("time_inference: repetitions must be at least 1");
    std::lock_guard lock(session_mutex());
    for (std::size_t i = 0; i < warmup; ++i) {
        try {
            fn();
        } catch (const std::exception&) {
        }
    }
    std::vector<LatencySample> out;
    out.reserve(repetitions);
    for (std::size_t i = 0; i < repetitions; ++i) {
        LatencySample s;
        s.input_id = input_id;
        const double e0 = meter ? meter->read_joules() : 0.0;
        s.timestamp_s = clock.now();
        try {
            fn();
        } catch (const std::exception& e) {
            s.ok = false;
            s.error = e.what();
        }
        s.duration_s = std::max(0.0, clock.now() - s.timestamp_s);
        if (meter) s.energy_j = meter->read_joules() - e0;
        out.push_back(std::move(s));
    }
    return out;
}

void LatencyModel::validate() const {
    if (!(fixed_s >= 0.0 && per_mult_s >= 0.0 && per_dram_word_s >= 0.0 && noise_sd_s >= 0.0))
        throw ValidationError("latency model: all constants must be non-negative");
}

double LatencyModel::latency(const ActivationTrace& trace) const {
    double words = 0.0;
    for (const auto& l : trace.layers)
        words += static_cast<double>(use_compressed_traffic ? l.dram_words_compressed : l.dram_words_raw);
    return fixed_s + per_mult_s * static_cast<double>(trace.mult_total()) + per_dram_word_s * words;
}

double LatencyModel::latency(const ActivationTrace& trace, std::mt19937_64& rng) const {
    const double base = latency(trace);
    if (noise_sd_s <= 0.0) return base;
    std::normal_distribution<double> noise(0.0, noise_sd_s);
    return std::max(0.0, base + noise(rng));
}

}  // namespace sponge
