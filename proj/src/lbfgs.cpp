#include "sponge/lbfgs.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <stdexcept>
#include <string>

#include "sponge/energy.hpp"

namespace sponge {

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

void check_finite(double value, std::span<const double> grad, std::size_t step) {
    bool ok = std::isfinite(value);
    for (double g : grad) ok = ok && std::isfinite(g);
    if (!ok) throw std::runtime_error("lbfgs: non-finite objective or gradient at step " + std::to_string(step));
}

struct Pair {
    std::vector<double> s, y;
    double rho;
};

// Zero the components that would leave the box from a bound.
void mask_at_bounds(std::vector<double>& d, const std::vector<double>& x, const LbfgsConfig& c) {
    for (std::size_t i = 0; i < d.size(); ++i)
        if ((x[i] <= c.lower && d[i] < 0.0) || (x[i] >= c.upper && d[i] > 0.0)) d[i] = 0.0;
}

}  // namespace

void LbfgsConfig::validate() const {
    if (memory == 0) throw ValidationError("lbfgs: memory must be positive");
    if (!(armijo_c > 0.0 && armijo_c < 1.0)) throw ValidationError("lbfgs: armijo_c must be in (0, 1)");
    if (!(initial_step > 0.0)) throw ValidationError("lbfgs: initial_step must be positive");
    if (!(backtrack > 0.0 && backtrack < 1.0)) throw ValidationError("lbfgs: backtrack must be in (0, 1)");
    if (!(lower < upper)) throw ValidationError("lbfgs: empty box");
}

LbfgsResult minimize_box(const Objective& f, std::vector<double> x, const LbfgsConfig& config) {
    config.validate();
    const std::size_t n = x.size();
    for (auto& v : x) v = std::clamp(v, config.lower, config.upper);

    std::vector<double> g(n), g_new(n), x_new(n), d(n);
    double fx = f(x, g);
    check_finite(fx, g, 0);

    LbfgsResult out;
    out.x = x;
    out.initial_value = out.best_value = fx;
    out.history.push_back(fx);
    std::deque<Pair> mem;

    // Projected Armijo search along d; true on success (x_new, g_new, f_new set).
    double f_new = 0.0;
    auto line_search = [&](const std::vector<double>& dir, std::size_t step) {
        double alpha = config.initial_step;
        for (std::size_t k = 0; k <= config.max_backtracks; ++k, alpha *= config.backtrack) {
            for (std::size_t i = 0; i < n; ++i) x_new[i] = std::clamp(x[i] + alpha * dir[i], config.lower, config.upper);
            double decrease = 0.0;
            bool moved = false;
            for (std::size_t i = 0; i < n; ++i) {
                decrease += g[i] * (x_new[i] - x[i]);
                moved = moved || x_new[i] != x[i];
            }
            if (!moved) return false;
            f_new = f(x_new, g_new);
            check_finite(f_new, g_new, step);
            if (f_new <= fx + config.armijo_c * decrease && f_new < fx) return true;
        }
        return false;
    };

    for (std::size_t step = 1; step <= config.max_steps; ++step) {
        // Two-loop recursion: d = -H g.
        std::vector<double> q = g;
        std::vector<double> a(mem.size());
        for (std::size_t j = mem.size(); j-- > 0;) {
            a[j] = mem[j].rho * dot(mem[j].s, q);
            for (std::size_t i = 0; i < n; ++i) q[i] -= a[j] * mem[j].y[i];
        }
        double gamma = 1.0;
        if (!mem.empty()) gamma = dot(mem.back().s, mem.back().y) / dot(mem.back().y, mem.back().y);
        for (auto& v : q) v *= gamma;
        for (std::size_t j = 0; j < mem.size(); ++j) {
            const double b = mem[j].rho * dot(mem[j].y, q);
            for (std::size_t i = 0; i < n; ++i) q[i] += (a[j] - b) * mem[j].s[i];
        }
        for (std::size_t i = 0; i < n; ++i) d[i] = -q[i];
        mask_at_bounds(d, x, config);

        bool ok = dot(d, g) < 0.0 && line_search(d, step);
        if (!ok) {
            for (std::size_t i = 0; i < n; ++i) d[i] = -g[i];
            mask_at_bounds(d, x, config);
            mem.clear();
            if (!(dot(d, g) < 0.0) || !line_search(d, step)) break;
            ++out.fallback_steps;
        }

        Pair p{std::vector<double>(n), std::vector<double>(n), 0.0};
        for (std::size_t i = 0; i < n; ++i) {
            p.s[i] = x_new[i] - x[i];
            p.y[i] = g_new[i] - g[i];
        }
        const double sy = dot(p.s, p.y);
        if (sy > 1e-12) {
            p.rho = 1.0 / sy;
            mem.push_back(std::move(p));
            if (mem.size() > config.memory) mem.pop_front();
        }
        x = x_new;
        g = g_new;
        fx = f_new;
        ++out.steps;
        out.history.push_back(fx);
        if (fx < out.best_value) {
            out.best_value = fx;
            out.x = x;
        }
    }
    return out;
}

SpongeImage lbfgs_attack(const CnnModel& model, const Image& start, const LbfgsConfig& config) {
    model.validate();
    if (start.size() != model.input_size()) throw ValidationError("lbfgs_attack: start image has the wrong size");
    Image work = start;
    auto objective = [&](std::span<const double> x, std::span<double> grad) {
        std::copy(x.begin(), x.end(), work.pixels.begin());
        return activation_norm_objective(model, work, grad);
    };
    SpongeImage out;
    out.search = minimize_box(objective, start.pixels, config);
    out.image = start;
    out.image.pixels = out.search.x;
    out.initial_objective = out.search.initial_value;
    out.final_objective = out.search.best_value;
    return out;
}

SpongeImage lbfgs_attack_random_start(const CnnModel& model, std::mt19937_64& rng, const LbfgsConfig& config,
                                      std::size_t max_draws) {
    if (max_draws == 0) throw std::invalid_argument("lbfgs_attack_random_start: max_draws must be positive");
    std::vector<double> grad(model.input_size());
    Image start;
    std::size_t draws = 0;
    while (draws < max_draws) {
        start = uniform_random_image(rng, model.channels, model.height, model.width);
        ++draws;
        activation_norm_objective(model, start, grad);
        if (std::any_of(grad.begin(), grad.end(), [](double g) { return g != 0.0; })) break;
    }
    auto out = lbfgs_attack(model, start, config);
    out.start_draws = draws;
    return out;
}

}  // namespace sponge
