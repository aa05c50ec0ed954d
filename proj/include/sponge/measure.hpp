#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "sponge/energy.hpp"

namespace sponge {

class Clock {
public:
    virtual ~Clock() = default;
    /// Seconds since an arbitrary origin.
    virtual double now() = 0;
    virtual void sleep(double seconds) = 0;
};

/// Time only moves when someone sleeps on it. Thread-safe.
class SimulatedClock : public Clock {
public:
    explicit SimulatedClock(double start = 0.0) : t_(start) {}
    double now() override;
    void sleep(double seconds) override;  // throws std::invalid_argument on negative input
    void advance(double seconds) { sleep(seconds); }

private:
    std::mutex mu_;
    double t_;
};

class SteadyClock : public Clock {
public:
    double now() override;
    void sleep(double seconds) override;
};

struct LatencySample {
    double duration_s = 0.0;
    std::size_t input_id = 0;
    double timestamp_s = 0.0;  // clock reading at the start of the run
    bool ok = true;
    std::string error;
    std::optional<double> energy_j;  // only with a meter attached
};

/// Cumulative energy counter. Readings never decrease within a session.
class EnergyMeter {
public:
    virtual ~EnergyMeter() = default;
    virtual double read_joules() = 0;
    virtual std::string name() const = 0;
};

/// Reads a text file holding one cumulative microjoule count (the format of
/// the Linux powercap `energy_uj` files). A reading below the previous one
/// throws std::runtime_error.
class CounterFileMeter : public EnergyMeter {
public:
    explicit CounterFileMeter(std::filesystem::path path);
    double read_joules() override;
    std::string name() const override { return "counter:" + path_.string(); }

private:
    std::filesystem::path path_;
    std::optional<std::uint64_t> last_;
};

/// Meter driven by the caller, for tests and simulated runs.
class SimulatedEnergyMeter : public EnergyMeter {
public:
    void add(double joules);
    double read_joules() override { return total_; }
    std::string name() const override { return "simulated"; }

private:
    double total_ = 0.0;
};

/// nullptr (latency-only mode) when no path is configured.
std::unique_ptr<EnergyMeter> make_meter(const std::optional<std::filesystem::path>& counter_file);

/// Runs `fn` warmup + repetitions times, one at a time, and returns the last
/// `repetitions` runs. A throwing run is recorded with ok = false. Sessions
/// on different threads are serialized.
std::vector<LatencySample> time_inference(const std::function<void()>& fn, std::size_t warmup,
                                          std::size_t repetitions, Clock& clock, std::size_t input_id = 0,
                                          EnergyMeter* meter = nullptr);

/// Latency of one inference on the simulated clock: a fixed overhead, a cost
/// per executed multiply and per DRAM word moved, plus optional Gaussian
/// noise (truncated at zero).
struct LatencyModel {
    double fixed_s = 1e-4;
    double per_mult_s = 1e-9;
    double per_dram_word_s = 2e-9;
    double noise_sd_s = 0.0;
    bool use_compressed_traffic = true;

    void validate() const;
    double latency(const ActivationTrace& trace) const;
    double latency(const ActivationTrace& trace, std::mt19937_64& rng) const;
};

}  // namespace sponge
