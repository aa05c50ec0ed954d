#pragma once

#include <cstddef>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "sponge/cnn.hpp"

namespace sponge {

struct LbfgsConfig {
    std::size_t memory = 10;
    std::size_t max_steps = 200;
    double armijo_c = 1e-4;
    double initial_step = 1.0;
    double backtrack = 0.5;
    std::size_t max_backtracks = 40;
    double lower = 0.0;
    double upper = 1.0;

    void validate() const;
};

struct LbfgsResult {
    std::vector<double> x;           // best iterate seen
    double initial_value = 0.0;
    double best_value = 0.0;
    std::size_t steps = 0;           // accepted steps
    std::size_t fallback_steps = 0;  // steps taken along the plain negative gradient
    std::vector<double> history;     // objective after every accepted step, initial first
};

/// Value and gradient of the function to minimise.
using Objective = std::function<double(std::span<const double> x, std::span<double> grad)>;

/// Box-constrained L-BFGS: two-loop recursion, projection onto [lower, upper]
/// after each step, Armijo backtracking on the projected step. Falls back to
/// the negative gradient when the quasi-Newton direction fails, stops when
/// neither makes progress. Throws std::runtime_error on a non-finite
/// objective or gradient.
LbfgsResult minimize_box(const Objective& f, std::vector<double> x0, const LbfgsConfig& config = {});

struct SpongeImage {
    Image image;
    double initial_objective = 0.0;
    double final_objective = 0.0;
    LbfgsResult search;
    std::size_t start_draws = 1;  // random starts drawn before one had a gradient
};

/// Maximises the summed activation norms of the CNN starting from `start`.
SpongeImage lbfgs_attack(const CnnModel& model, const Image& start, const LbfgsConfig& config = {});

/// Attack from a uniform random start. A start whose objective gradient is
/// zero everywhere (every ReLU unit dead) gives the search nothing to follow,
/// so such starts are redrawn, up to max_draws times; the last draw is used
/// regardless.
SpongeImage lbfgs_attack_random_start(const CnnModel& model, std::mt19937_64& rng, const LbfgsConfig& config = {},
                                      std::size_t max_draws = 100);

}  // namespace sponge
