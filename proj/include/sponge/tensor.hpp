#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "sponge/energy.hpp"

namespace sponge {

/// Row-major dense matrix of doubles.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
    std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
    std::size_t size() const { return data.size(); }

    bool operator==(const Matrix&) const = default;
};

/// Gaussian init with standard deviation `scale`.
Matrix random_matrix(std::size_t rows, std::size_t cols, double scale, std::mt19937_64& rng);

std::uint64_t count_nonzero(std::span<const double> v);

/// Accumulates the counts of one layer invocation: tensors read, weights
/// read, tensors written and multiplies performed.
class LayerRecorder {
public:
    explicit LayerRecorder(std::string name) { entry_.name = std::move(name); }

    void read(std::span<const double> tensor);
    void read_dense(std::uint64_t words);  // e.g. token ids
    void weights(std::uint64_t words);
    /// A written tensor that is not the layer's primary output.
    void write(std::span<const double> tensor);
    /// The layer's output activation; counted for density and traffic.
    void output(std::span<const double> tensor);
    void mults(std::uint64_t total, std::uint64_t nonzero);

    LayerTrace finish() const { return entry_; }

private:
    LayerTrace entry_;
};

/// y = W x + b with multiplies skipped on zero entries of x.
void matvec(const Matrix& w, std::span<const double> x, std::span<const double> bias, std::span<double> y,
            std::uint64_t& mult_total, std::uint64_t& mult_nonzero);

// Named-array text format shared by model checkpoints:
//   array <name> <rows> <cols>
//   <rows*cols values, whitespace separated, printed with 17 significant digits>
void write_array(std::ostream& out, const std::string& name, const Matrix& m);
Matrix read_array(std::istream& in, const std::string& expected_name);

}  // namespace sponge
