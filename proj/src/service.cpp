#include "sponge/service.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <iostream>
#include <json.hpp>

#include "sponge/stats.hpp"

namespace sponge {

using json = nlohmann::json;

namespace {

constexpr std::size_t kMaxFrame = 1 << 20;

std::size_t code_points(const std::string& s) {
    std::size_t n = 0;
    for (unsigned char c : s)
        if ((c & 0xC0) != 0x80) ++n;
    return n;
}

using Deadline = std::chrono::steady_clock::time_point;

Deadline deadline_after(double seconds) {
    return std::chrono::steady_clock::now() +
           std::chrono::duration_cast<std::chrono::steady_clock::duration>(std::chrono::duration<double>(seconds));
}

int remaining_ms(Deadline d) {
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(d - std::chrono::steady_clock::now());
    return static_cast<int>(std::max<long long>(0, left.count()));
}

// Waits for `events` on fd; false on timeout.
bool wait_for(int fd, short events, Deadline d) {
    while (true) {
        pollfd p{fd, events, 0};
        const int r = ::poll(&p, 1, remaining_ms(d));
        if (r > 0) return true;
        if (r == 0) return false;
        if (errno != EINTR) throw ServiceConnectionError(std::string("poll: ") + std::strerror(errno));
    }
}

void write_all(int fd, const std::string& data, Deadline d) {
    std::size_t sent = 0;
    while (sent < data.size()) {
        if (!wait_for(fd, POLLOUT, d)) throw ServiceTimeout("timed out sending");
        const auto n = ::send(fd, data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
        if (n < 0) {
            if (errno == EINTR || errno == EAGAIN) continue;
            throw ServiceConnectionError(std::string("send: ") + std::strerror(errno));
        }
        sent += static_cast<std::size_t>(n);
    }
}

// Reads exactly n bytes; returns false on a clean EOF before the first byte.
bool read_exact(int fd, char* buf, std::size_t n, Deadline d) {
    std::size_t got = 0;
    while (got < n) {
        if (!wait_for(fd, POLLIN, d)) throw ServiceTimeout("timed out receiving");
        const auto r = ::recv(fd, buf + got, n - got, 0);
        if (r == 0) {
            if (got == 0) return false;
            throw ServiceConnectionError("connection closed mid-message");
        }
        if (r < 0) {
            if (errno == EINTR || errno == EAGAIN) continue;
            throw ServiceConnectionError(std::string("recv: ") + std::strerror(errno));
        }
        got += static_cast<std::size_t>(r);
    }
    return true;
}

void write_frame(int fd, const json& body, Deadline d) {
    const auto text = body.dump();
    write_all(fd, std::to_string(text.size()) + "\n" + text, d);
}

std::optional<json> read_frame(int fd, Deadline d) {
    std::string header;
    char c = 0;
    while (true) {
        if (!read_exact(fd, &c, 1, d)) {
            if (header.empty()) return std::nullopt;
            throw ServiceConnectionError("connection closed mid-header");
        }
        if (c == '\n') break;
        if (c < '0' || c > '9' || header.size() > 12) throw ServiceConnectionError("malformed frame header");
        header.push_back(c);
    }
    if (header.empty()) throw ServiceConnectionError("malformed frame header");
    const auto size = std::stoull(header);
    if (size > kMaxFrame) throw ServiceConnectionError("frame too large");
    std::string body(size, '\0');
    if (size > 0 && !read_exact(fd, body.data(), size, d)) throw ServiceConnectionError("connection closed mid-frame");
    try {
        return json::parse(body);
    } catch (const json::exception& e) {
        throw ServiceConnectionError(std::string("malformed frame body: ") + e.what());
    }
}

std::size_t decode_steps_started(const ActivationTrace& trace) {
    std::size_t n = 0;
    for (const auto& l : trace.layers)
        if (l.name.starts_with("dec.") && l.name.ends_with(".embed")) ++n;
    return n;
}

}  // namespace

void ServiceConfig::validate() const {
    if (!(base_service_s >= 0.0 && per_step_s >= 0.0 && cache_hit_s >= 0.0 && network.base_s >= 0.0 &&
          network.jitter_mean_s >= 0.0))
        throw ValidationError("service: latencies must be non-negative");
    if (max_input_chars == 0) throw ValidationError("service: max_input_chars must be positive");
    if (guard) {
        guard->validate();
        if (guard->source != guard_cost.source) throw ValidationError("service: guard profile and cost source differ");
    }
}

TranslationService::TranslationService(ServiceConfig config, std::shared_ptr<const ToyTranslator> model,
                                       std::shared_ptr<const Vocab> vocab, Alphabet alphabet)
    : config_(std::move(config)), model_(std::move(model)), vocab_(std::move(vocab)),
      alphabet_(std::move(alphabet)), rng_(config_.seed) {
    config_.validate();
    if (!model_ || !vocab_) throw std::invalid_argument("service: model and vocab are required");
    model_->validate();

    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    hints.ai_flags = AI_PASSIVE | AI_NUMERICSERV;
    addrinfo* res = nullptr;
    const auto port_str = std::to_string(config_.port);
    if (::getaddrinfo(config_.host.c_str(), port_str.c_str(), &hints, &res) != 0 || !res)
        throw ServiceConnectionError("service: cannot resolve " + config_.host);
    listen_fd_ = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
    if (listen_fd_ < 0) {
        ::freeaddrinfo(res);
        throw ServiceConnectionError(std::string("socket: ") + std::strerror(errno));
    }
    const int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    if (::bind(listen_fd_, res->ai_addr, res->ai_addrlen) != 0 || ::listen(listen_fd_, 64) != 0) {
        const std::string err = std::strerror(errno);
        ::freeaddrinfo(res);
        ::close(listen_fd_);
        throw ServiceConnectionError("service: cannot listen on " + config_.host + ":" + port_str + ": " + err);
    }
    ::freeaddrinfo(res);

    sockaddr_storage addr{};
    socklen_t len = sizeof addr;
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = addr.ss_family == AF_INET6 ? ntohs(reinterpret_cast<sockaddr_in6*>(&addr)->sin6_port)
                                       : ntohs(reinterpret_cast<sockaddr_in*>(&addr)->sin_port);
    thread_ = std::thread([this] { loop(); });
}

TranslationService::~TranslationService() { stop(); }

std::string TranslationService::endpoint() const { return config_.host + ":" + std::to_string(port_); }

void TranslationService::stop() {
    if (stopping_.exchange(true)) return;
    if (thread_.joinable()) thread_.join();
    if (listen_fd_ >= 0) ::close(listen_fd_);
    listen_fd_ = -1;
}

std::vector<ServiceWindow> TranslationService::windows() const {
    std::lock_guard lock(mu_);
    return windows_;
}

std::size_t TranslationService::cache_size() const {
    std::lock_guard lock(mu_);
    return lru_.size();
}

void TranslationService::loop() {
    while (!stopping_.load()) {
        pollfd p{listen_fd_, POLLIN, 0};
        if (::poll(&p, 1, 50) <= 0) continue;
        const int fd = ::accept(listen_fd_, nullptr, nullptr);
        if (fd < 0) continue;
        try {
            serve_connection(fd);
        } catch (const std::exception& e) {
            std::clog << "service: dropped connection: " << e.what() << '\n';
        }
        ::close(fd);
    }
}

void TranslationService::serve_connection(int fd) {
    while (!stopping_.load()) {
        auto request = read_frame(fd, deadline_after(10.0));
        if (!request) return;
        json reply;
        if (!request->is_object() || !request->contains("text") || !(*request)["text"].is_string()) {
            reply = {{"ok", false}, {"error", "request must be an object with a string 'text'"}};
        } else {
            double net = 0.0;
            const auto r = handle((*request)["text"].get<std::string>(), &net);
            if (r.rejected)
                reply = {{"ok", false}, {"error", r.reason}, {"server_time", r.server_time_s}, {"network_delay", net}};
            else
                reply = {{"ok", true},
                         {"translation", r.translation},
                         {"confidence", r.confidence},
                         {"server_time", r.server_time_s},
                         {"decode_steps", r.decode_steps},
                         {"cached", r.cached},
                         {"network_delay", net}};
        }
        write_frame(fd, reply, deadline_after(10.0));
    }
}

TranslationResponse TranslationService::handle(const std::string& text, double* network_delay) {
    std::lock_guard lock(mu_);
    ServiceWindow window{steady_.now(), 0.0};
    TranslationResponse r;

    if (code_points(text) > config_.max_input_chars) {
        r.rejected = true;
        r.reason = "input exceeds " + std::to_string(config_.max_input_chars) + " characters";
    } else if (auto it = index_.find(text); it != index_.end()) {
        lru_.splice(lru_.begin(), lru_, it->second);
        r = it->second->response;
        r.cached = true;
        r.server_time_s = config_.cache_hit_s;
    } else {
        const auto input = encode_text(text, *vocab_, alphabet_);
        r.server_time_s = config_.base_service_s;
        if (!input.ids.empty()) {
            std::optional<TranslationResult> result;
            if (config_.guard) {
                auto g = guarded_infer(*model_, input, *config_.guard, config_.guard_cost);
                if (g.rejected()) {
                    r.rejected = true;
                    r.reason = "inference budget exceeded";
                    r.decode_steps = decode_steps_started(g.trace);
                } else {
                    result = std::move(g.result);
                }
            } else {
                result = translate(*model_, input);
            }
            if (result) {
                r.translation = detokenize(result->output.ids, *vocab_, alphabet_);
                r.confidence = std::clamp(result->confidence, 0.0, 1.0);
                r.decode_steps = result->decode_steps();
            }
            r.server_time_s += config_.per_step_s * static_cast<double>(r.decode_steps);
        }
        if (!r.rejected && config_.cache_capacity > 0) {
            lru_.push_front({text, r});
            index_[text] = lru_.begin();
            if (lru_.size() > config_.cache_capacity) {
                index_.erase(lru_.back().text);
                lru_.pop_back();
            }
        }
    }

    double net = 2.0 * config_.network.base_s;
    if (config_.network.jitter_mean_s > 0.0) {
        std::exponential_distribution<double> jitter(1.0 / config_.network.jitter_mean_s);
        net += jitter(rng_) + jitter(rng_);
    }
    if (network_delay) *network_delay = net;
    if (config_.timing == TimingMode::RealSleep) steady_.sleep(r.server_time_s);
    window.end_s = steady_.now();
    windows_.push_back(window);
    ++served_;
    return r;
}

std::unique_ptr<TranslationService> serve(const ServiceConfig& config, std::shared_ptr<const ToyTranslator> model,
                                          std::shared_ptr<const Vocab> vocab, const Alphabet& alphabet) {
    return std::make_unique<TranslationService>(config, std::move(model), std::move(vocab), alphabet);
}

Endpoint Endpoint::parse(const std::string& s) {
    const auto colon = s.rfind(':');
    if (colon == std::string::npos || colon == 0 || colon + 1 == s.size())
        throw std::invalid_argument("endpoint must look like host:port, got '" + s + "'");
    Endpoint e;
    e.host = s.substr(0, colon);
    if (e.host.size() > 2 && e.host.front() == '[' && e.host.back() == ']') e.host = e.host.substr(1, e.host.size() - 2);
    const auto port = std::stoul(s.substr(colon + 1));
    if (port == 0 || port > 65535) throw std::invalid_argument("endpoint port out of range in '" + s + "'");
    e.port = static_cast<std::uint16_t>(port);
    return e;
}

bool Endpoint::loopback() const {
    if (host == "localhost" || host == "::1") return true;
    in_addr a{};
    if (::inet_pton(AF_INET, host.c_str(), &a) == 1) return (ntohl(a.s_addr) >> 24) == 127;
    return false;
}

ClientReply client_translate(const Endpoint& endpoint, const std::string& text, const ClientOptions& options) {
    if (!endpoint.loopback() && !options.allow_remote)
        throw EndpointRefused("refusing to send requests to non-loopback endpoint " + endpoint.host +
                              "; set allow_remote only for services you are authorised to test");
    const auto deadline = deadline_after(options.timeout_s);
    SteadyClock wall;
    const double t0 = wall.now();

    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    hints.ai_flags = AI_NUMERICSERV;
    addrinfo* res = nullptr;
    const auto port_str = std::to_string(endpoint.port);
    if (::getaddrinfo(endpoint.host.c_str(), port_str.c_str(), &hints, &res) != 0 || !res)
        throw ServiceConnectionError("cannot resolve " + endpoint.host);
    const int fd = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
    if (fd < 0) {
        ::freeaddrinfo(res);
        throw ServiceConnectionError(std::string("socket: ") + std::strerror(errno));
    }
    struct Closer {
        int fd;
        ~Closer() { ::close(fd); }
    } closer{fd};
    ::fcntl(fd, F_SETFL, ::fcntl(fd, F_GETFL) | O_NONBLOCK);
    const int rc = ::connect(fd, res->ai_addr, res->ai_addrlen);
    ::freeaddrinfo(res);
    if (rc != 0) {
        if (errno != EINPROGRESS) throw ServiceConnectionError(std::string("connect: ") + std::strerror(errno));
        if (!wait_for(fd, POLLOUT, deadline)) throw ServiceTimeout("timed out connecting to " + endpoint.host);
        int err = 0;
        socklen_t len = sizeof err;
        ::getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &len);
        if (err != 0) throw ServiceConnectionError(std::string("connect: ") + std::strerror(err));
    }

    write_frame(fd, json{{"text", text}}, deadline);
    const auto reply = read_frame(fd, deadline);
    if (!reply || !reply->is_object() || !reply->contains("ok")) throw ServiceConnectionError("malformed reply");
    const double wall_rtt = wall.now() - t0;

    ClientReply out;
    auto& r = out.response;
    r.server_time_s = reply->value("server_time", 0.0);
    if ((*reply)["ok"].get<bool>()) {
        r.translation = reply->value("translation", std::string{});
        r.confidence = reply->value("confidence", 0.0);
        r.decode_steps = reply->value("decode_steps", std::size_t{0});
        r.cached = reply->value("cached", false);
    } else {
        r.rejected = true;
        r.reason = reply->value("error", std::string{"rejected"});
    }
    out.round_trip.timestamp_s = t0;
    out.round_trip.duration_s = options.timing == TimingMode::Simulated
                                    ? r.server_time_s + reply->value("network_delay", 0.0)
                                    : std::max(wall_rtt, r.server_time_s);
    out.round_trip.ok = !r.rejected;
    out.round_trip.error = r.reason;
    return out;
}

FitnessFunction<std::string> blackbox_latency_fitness(const Endpoint& endpoint, const BlackboxOptions& options) {
    if (options.repeats < 1 || options.max_attempts < 1)
        throw ValidationError("blackbox fitness: repeats and max_attempts must be positive");
    FitnessFunction<std::string> f;
    f.source = FitnessSource::MeasuredLatency;
    f.reentrant = false;
    f.evaluate = [endpoint, options](const std::string& text) {
        std::vector<double> rtts;
        for (std::size_t k = 0; k < options.repeats; ++k) {
            std::string last_error;
            bool done = false;
            for (std::size_t attempt = 0; attempt < options.max_attempts && !done; ++attempt) {
                try {
                    const auto reply = client_translate(endpoint, text, options.client);
                    if (reply.response.rejected) {
                        last_error = reply.response.reason;
                        continue;
                    }
                    rtts.push_back(reply.round_trip.duration_s);
                    if (options.log)
                        options.log->push_back(
                            {text, reply.round_trip.duration_s, reply.response.server_time_s, reply.response.cached});
                    done = true;
                } catch (const EndpointRefused&) {
                    throw;
                } catch (const ServiceError& e) {
                    last_error = e.what();
                }
            }
            if (!done) throw ServiceError("blackbox fitness: " + last_error);
        }
        return Evaluation{{median(rtts), FitnessSource::MeasuredLatency}, -1};
    };
    return f;
}

std::size_t count_server_time_drops(const std::vector<BlackboxObservation>& log) {
    std::unordered_map<std::string, double> first;
    std::unordered_map<std::string, bool> dropped;
    for (const auto& o : log) {
        auto [it, fresh] = first.emplace(o.text, o.server_time_s);
        if (!fresh && o.server_time_s < it->second) dropped[o.text] = true;
    }
    return dropped.size();
}

}  // namespace sponge
