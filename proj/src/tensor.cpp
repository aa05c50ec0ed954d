#include "sponge/tensor.hpp"

#include <istream>
#include <ostream>

namespace sponge {

Matrix random_matrix(std::size_t rows, std::size_t cols, double scale, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, scale);
    Matrix m(rows, cols);
    for (auto& v : m.data) v = dist(rng);
    return m;
}

std::uint64_t count_nonzero(std::span<const double> v) {
    std::uint64_t n = 0;
    for (double x : v) n += x != 0.0;
    return n;
}

void LayerRecorder::read(std::span<const double> t) {
    entry_.dram_words_raw += t.size();
    entry_.dram_words_compressed += compressed_tensor_words(t.size(), count_nonzero(t));
}

void LayerRecorder::read_dense(std::uint64_t words) {
    entry_.dram_words_raw += words;
    entry_.dram_words_compressed += words;
}

void LayerRecorder::weights(std::uint64_t words) { read_dense(words); }

void LayerRecorder::write(std::span<const double> t) { read(t); }

void LayerRecorder::output(std::span<const double> t) {
    const auto nnz = count_nonzero(t);
    entry_.act_total += t.size();
    entry_.act_nonzero += nnz;
    entry_.dram_words_raw += t.size();
    entry_.dram_words_compressed += compressed_tensor_words(t.size(), nnz);
}

void LayerRecorder::mults(std::uint64_t total, std::uint64_t nonzero) {
    entry_.mult_total += total;
    entry_.mult_nonzero += nonzero;
}

void matvec(const Matrix& w, std::span<const double> x, std::span<const double> bias, std::span<double> y,
            std::uint64_t& mult_total, std::uint64_t& mult_nonzero) {
    for (std::size_t r = 0; r < w.rows; ++r) y[r] = bias.empty() ? 0.0 : bias[r];
    std::uint64_t nnz = 0;
    for (std::size_t c = 0; c < w.cols; ++c) {
        const double xc = x[c];
        if (xc == 0.0) continue;
        ++nnz;
        for (std::size_t r = 0; r < w.rows; ++r) y[r] += w(r, c) * xc;
    }
    mult_total += static_cast<std::uint64_t>(w.rows) * w.cols;
    mult_nonzero += nnz * w.rows;
}

void write_array(std::ostream& out, const std::string& name, const Matrix& m) {
    const auto old = out.precision(17);
    out << "array " << name << ' ' << m.rows << ' ' << m.cols << '\n';
    for (std::size_t r = 0; r < m.rows; ++r) {
        for (std::size_t c = 0; c < m.cols; ++c) out << (c ? " " : "") << m(r, c);
        out << '\n';
    }
    out.precision(old);
}

Matrix read_array(std::istream& in, const std::string& expected_name) {
    std::string tag, name;
    std::size_t rows = 0, cols = 0;
    if (!(in >> tag >> name >> rows >> cols) || tag != "array")
        throw ValidationError("expected 'array " + expected_name + " <rows> <cols>'");
    if (name != expected_name) throw ValidationError("expected array '" + expected_name + "', found '" + name + "'");
    Matrix m(rows, cols);
    for (auto& v : m.data)
        if (!(in >> v)) throw ValidationError("array '" + name + "' is truncated");
    return m;
}

}  // namespace sponge
