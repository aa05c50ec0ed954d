#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace sponge {

struct MannWhitneyResult {
    double u_a = 0.0;  // pairs where a wins, ties counted as one half
    double u_b = 0.0;
    double z = 0.0;
    double p_greater = 0.5;  // one-sided: a tends to exceed b
    bool degenerate = false; // every pooled value identical
};

/// Midranks for ties, tie-corrected variance, normal approximation with a
/// continuity correction of 0.5 toward the mean. Throws
/// std::invalid_argument on an empty sample.
MannWhitneyResult mann_whitney_u(std::span<const double> a, std::span<const double> b);

struct NamedSamples {
    std::string name;
    std::vector<double> values;
};

struct PairwiseTest {
    std::string greater;  // hypothesised larger class
    std::string lesser;
    MannWhitneyResult result;
    /// (n per class, p) using the first n observations of each class.
    std::vector<std::pair<std::size_t, double>> trace;
    /// Smallest n in the trace from which p stays below alpha.
    std::optional<std::size_t> n_needed;
};

struct ClassComparison {
    double alpha = 0.01;
    std::vector<PairwiseTest> tests;
    bool all_significant() const;
};

/// `ordered` lists the classes from the hypothesised largest to smallest;
/// every pair (i < j) is tested one-sided for ordered[i] > ordered[j].
ClassComparison compare_sample_classes(const std::vector<NamedSamples>& ordered, double alpha = 0.01);

/// Hypothesised order sponge > natural > random (vision energy).
ClassComparison compare_sample_classes(std::span<const double> natural, std::span<const double> random,
                                       std::span<const double> sponge, double alpha = 0.01);

struct SignTestResult {
    std::size_t positives = 0;
    std::size_t negatives = 0;
    std::size_t zeros = 0;
    double p_greater = 1.0;  // exact binomial P(X >= positives), zeros dropped
};

/// One-sided exact sign test that the differences are typically positive.
SignTestResult sign_test(std::span<const double> differences);

double mean(std::span<const double> v);
double median(std::vector<double> v);

}  // namespace sponge
