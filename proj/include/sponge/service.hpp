#pragma once

#include <atomic>
#include <cstdint>
#include <list>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "sponge/defense.hpp"
#include "sponge/ga.hpp"
#include "sponge/measure.hpp"
#include "sponge/tokenizer.hpp"
#include "sponge/translator.hpp"

namespace sponge {

/// Simulated network between client and service: each direction costs
/// base_s plus an exponential jitter with mean jitter_mean_s.
struct NetworkModel {
    double base_s = 0.002;
    double jitter_mean_s = 0.0;
};

enum class TimingMode { Simulated, RealSleep };

struct ServiceConfig {
    std::string host = "127.0.0.1";
    std::uint16_t port = 0;  // 0 = pick a free port
    std::size_t cache_capacity = 256;  // LRU entries, 0 disables
    double base_service_s = 0.002;     // fixed server time per inference
    double per_step_s = 0.001;         // server time per decode step
    double cache_hit_s = 1e-5;         // server time of a cache hit
    NetworkModel network;
    std::size_t max_input_chars = 50;
    std::uint64_t seed = 0;            // jitter stream
    TimingMode timing = TimingMode::Simulated;
    /// Reject requests whose inference crosses this profile's threshold.
    std::optional<ConsumptionProfile> guard;
    CostFunction guard_cost;

    void validate() const;
};

struct TranslationResponse {
    std::string translation;
    double confidence = 0.0;
    double server_time_s = 0.0;
    std::size_t decode_steps = 0;
    bool cached = false;
    bool rejected = false;
    std::string reason;  // why it was rejected
};

/// One request as seen by the service, on the steady clock.
struct ServiceWindow {
    double start_s = 0.0;
    double end_s = 0.0;
};

/// Single-threaded request loop on a background thread. Wire format, both
/// directions: decimal byte count, '\n', then a JSON object of that size.
/// Request {"text": ...}. Reply {"ok", "translation", "confidence",
/// "server_time", "decode_steps", "cached", "network_delay"} or
/// {"ok": false, "error": ...}.
class TranslationService {
public:
    TranslationService(ServiceConfig config, std::shared_ptr<const ToyTranslator> model,
                       std::shared_ptr<const Vocab> vocab, Alphabet alphabet = {});
    ~TranslationService();
    TranslationService(const TranslationService&) = delete;
    TranslationService& operator=(const TranslationService&) = delete;

    std::uint16_t port() const { return port_; }
    std::string endpoint() const;
    void stop();

    std::vector<ServiceWindow> windows() const;
    std::size_t requests_served() const { return served_.load(); }
    std::size_t cache_size() const;

    /// The request handler without the socket, for tests.
    TranslationResponse handle(const std::string& text, double* network_delay = nullptr);

private:
    void loop();
    void serve_connection(int fd);

    struct CacheEntry {
        std::string text;
        TranslationResponse response;
    };

    ServiceConfig config_;
    std::shared_ptr<const ToyTranslator> model_;
    std::shared_ptr<const Vocab> vocab_;
    Alphabet alphabet_;
    int listen_fd_ = -1;
    std::uint16_t port_ = 0;
    std::atomic<bool> stopping_{false};
    std::atomic<std::size_t> served_{0};
    std::thread thread_;
    mutable std::mutex mu_;
    std::list<CacheEntry> lru_;
    std::unordered_map<std::string, std::list<CacheEntry>::iterator> index_;
    std::vector<ServiceWindow> windows_;
    std::mt19937_64 rng_;
    SteadyClock steady_;
};

std::unique_ptr<TranslationService> serve(const ServiceConfig& config, std::shared_ptr<const ToyTranslator> model,
                                          std::shared_ptr<const Vocab> vocab, const Alphabet& alphabet = {});

struct Endpoint {
    std::string host;
    std::uint16_t port = 0;
    static Endpoint parse(const std::string& s);  // "host:port"
    bool loopback() const;
};

class ServiceError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};
class ServiceTimeout : public ServiceError {
    using ServiceError::ServiceError;
};
class ServiceConnectionError : public ServiceError {
    using ServiceError::ServiceError;
};
/// The client refused a non-loopback endpoint.
class EndpointRefused : public ServiceError {
    using ServiceError::ServiceError;
};

struct ClientOptions {
    double timeout_s = 5.0;
    /// Round trip computed as server time plus the simulated network delay
    /// the service reports; otherwise wall-clock.
    TimingMode timing = TimingMode::Simulated;
    /// Sending requests anywhere but loopback is refused unless this is set.
    /// This tool is for measuring services you own.
    bool allow_remote = false;
};

struct ClientReply {
    TranslationResponse response;
    LatencySample round_trip;
};

ClientReply client_translate(const Endpoint& endpoint, const std::string& text, const ClientOptions& options = {});

/// One fitness measurement, kept for the service-side view of a GA run.
struct BlackboxObservation {
    std::string text;
    double round_trip_s = 0.0;
    double server_time_s = 0.0;
    bool cached = false;
};

struct BlackboxOptions {
    std::size_t repeats = 3;        // fitness = median of this many round trips
    std::size_t max_attempts = 3;   // per round trip before giving up
    ClientOptions client;
    std::shared_ptr<std::vector<BlackboxObservation>> log;  // optional
};

/// Number of distinct texts whose server time dropped below their first
/// observation when resubmitted (cache hits on re-measured elites).
std::size_t count_server_time_drops(const std::vector<BlackboxObservation>& log);

/// Fitness = median client round trip in seconds. Rejections count as
/// failures; after max_attempts failures the evaluation throws and the GA
/// assigns the worst fitness. Not reentrant.
FitnessFunction<std::string> blackbox_latency_fitness(const Endpoint& endpoint, const BlackboxOptions& options = {});

}  // namespace sponge
