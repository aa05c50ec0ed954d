#include "sponge/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace sponge {

MannWhitneyResult mann_whitney_u(std::span<const double> a, std::span<const double> b) {
    if (a.empty() || b.empty()) throw std::invalid_argument("mann_whitney_u: empty sample");
    const std::size_t na = a.size(), nb = b.size(), n = na + nb;

    std::vector<std::pair<double, bool>> pooled;  // value, from a
    pooled.reserve(n);
    for (double v : a) pooled.emplace_back(v, true);
    for (double v : b) pooled.emplace_back(v, false);
    std::sort(pooled.begin(), pooled.end(), [](const auto& x, const auto& y) { return x.first < y.first; });

    double rank_sum_a = 0.0;
    double tie_term = 0.0;  // sum of t^3 - t over tie groups
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && pooled[j].first == pooled[i].first) ++j;
        const double t = static_cast<double>(j - i);
        const double midrank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
        for (std::size_t k = i; k < j; ++k)
            if (pooled[k].second) rank_sum_a += midrank;
        tie_term += t * t * t - t;
        i = j;
    }

    MannWhitneyResult r;
    const double fa = static_cast<double>(na), fb = static_cast<double>(nb), fn = static_cast<double>(n);
    r.u_a = rank_sum_a - fa * (fa + 1.0) / 2.0;
    r.u_b = fa * fb - r.u_a;

    const double var = fa * fb / 12.0 * ((fn + 1.0) - tie_term / (fn * (fn - 1.0)));
    if (pooled.front().first == pooled.back().first || !(var > 0.0)) {
        r.degenerate = true;
        r.z = 0.0;
        r.p_greater = 0.5;
        return r;
    }
    const double d = r.u_a - fa * fb / 2.0;
    const double corrected = std::copysign(std::max(std::abs(d) - 0.5, 0.0), d);
    r.z = corrected / std::sqrt(var);
    r.p_greater = std::clamp(0.5 * std::erfc(r.z / std::sqrt(2.0)), std::numeric_limits<double>::min(), 1.0);
    return r;
}

bool ClassComparison::all_significant() const {
    return std::all_of(tests.begin(), tests.end(), [&](const PairwiseTest& t) { return t.result.p_greater < alpha; });
}

namespace {

std::vector<std::size_t> trace_sizes(std::size_t limit) {
    std::vector<std::size_t> sizes;
    for (std::size_t n = 5; n < limit; n = n < 50 ? n + 5 : n + 25) sizes.push_back(n);
    sizes.push_back(limit);
    return sizes;
}

}  // namespace

ClassComparison compare_sample_classes(const std::vector<NamedSamples>& ordered, double alpha) {
    ClassComparison out;
    out.alpha = alpha;
    for (const auto& c : ordered)
        if (c.values.empty()) throw std::invalid_argument("compare_sample_classes: class '" + c.name + "' is empty");
    for (std::size_t i = 0; i < ordered.size(); ++i) {
        for (std::size_t j = i + 1; j < ordered.size(); ++j) {
            const auto& hi = ordered[i].values;
            const auto& lo = ordered[j].values;
            PairwiseTest t;
            t.greater = ordered[i].name;
            t.lesser = ordered[j].name;
            t.result = mann_whitney_u(hi, lo);
            const std::size_t limit = std::min(hi.size(), lo.size());
            for (auto n : trace_sizes(limit)) {
                const auto r = mann_whitney_u(std::span(hi).first(n), std::span(lo).first(n));
                t.trace.emplace_back(n, r.p_greater);
            }
            for (std::size_t k = t.trace.size(); k-- > 0;) {
                if (t.trace[k].second >= alpha) break;
                t.n_needed = t.trace[k].first;
            }
            out.tests.push_back(std::move(t));
        }
    }
    return out;
}

ClassComparison compare_sample_classes(std::span<const double> natural, std::span<const double> random,
                                       std::span<const double> sponge, double alpha) {
    return compare_sample_classes({{"sponge", {sponge.begin(), sponge.end()}},
                                   {"natural", {natural.begin(), natural.end()}},
                                   {"random", {random.begin(), random.end()}}},
                                  alpha);
}

SignTestResult sign_test(std::span<const double> differences) {
    SignTestResult r;
    for (double d : differences) {
        if (d > 0.0) ++r.positives;
        else if (d < 0.0) ++r.negatives;
        else ++r.zeros;
    }
    const std::size_t n = r.positives + r.negatives;
    if (n == 0) return r;
    // P(X >= k) for X ~ Bin(n, 1/2), summed in log space.
    const double log_half_n = static_cast<double>(n) * std::log(0.5);
    const double lg_n1 = std::lgamma(static_cast<double>(n) + 1.0);
    double p = 0.0;
    for (std::size_t k = r.positives; k <= n; ++k) {
        const double lc = lg_n1 - std::lgamma(static_cast<double>(k) + 1.0) - std::lgamma(static_cast<double>(n - k) + 1.0);
        p += std::exp(lc + log_half_n);
    }
    r.p_greater = std::min(p, 1.0);
    return r;
}

double mean(std::span<const double> v) {
    if (v.empty()) throw std::invalid_argument("mean: empty sample");
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double median(std::vector<double> v) {
    if (v.empty()) throw std::invalid_argument("median: empty sample");
    const std::size_t mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
    const double upper = v[mid];
    if (v.size() % 2 == 1) return upper;
    const double lower = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
    return (lower + upper) / 2.0;
}

}  // namespace sponge
