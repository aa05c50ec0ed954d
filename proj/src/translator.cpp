#include "sponge/translator.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <stdexcept>

namespace sponge {

double fertility_prior(const Vocab& vocab, TokenId id) {
    if (vocab.is_reserved(id) || !vocab.is_continuation(id)) return 1.0;
    return 1.0 + 1.0 / static_cast<double>(vocab.surface(id).size());
}

ToyTranslator ToyTranslator::create(const Vocab& vocab, std::uint64_t seed, TranslatorShape shape,
                                    double length_noise) {
    std::mt19937_64 rng(seed);
    const auto V = vocab.size();
    const auto E = shape.l_ein, D = shape.l_eout, F = shape.l_ff;
    auto inv_sqrt = [](std::size_t n) { return 1.0 / std::sqrt(static_cast<double>(n)); };

    ToyTranslator m;
    m.vocab_size = V;
    m.shape = shape;
    m.input_embedding = random_matrix(V, E, 1.0, rng);
    for (std::size_t id = 0; id < V; ++id) m.input_embedding(id, 0) = fertility_prior(vocab, static_cast<TokenId>(id));
    m.enc_wq = random_matrix(E, E, inv_sqrt(E) * 0.5, rng);
    m.enc_wk = random_matrix(E, E, inv_sqrt(E) * 0.5, rng);
    m.enc_wv = random_matrix(E, E, inv_sqrt(E), rng);
    m.enc_ff1_w = random_matrix(F, E, inv_sqrt(E), rng);
    m.enc_ff1_b = random_matrix(1, F, 0.1, rng);
    m.enc_ff2_w = random_matrix(E, F, inv_sqrt(F), rng);
    m.enc_ff2_b = random_matrix(1, E, 0.1, rng);
    m.length_w = random_matrix(1, 2 * E, length_noise, rng);
    m.length_w(0, 0) = 1.0;
    m.length_bias = 0.0;

    m.output_embedding = random_matrix(V, D, 1.0, rng);
    m.dec_wq = random_matrix(D, D, inv_sqrt(D) * 0.5, rng);
    m.dec_wk = random_matrix(D, D, inv_sqrt(D) * 0.5, rng);
    m.dec_wv = random_matrix(D, D, inv_sqrt(D), rng);
    m.cross_wk = random_matrix(D, E, inv_sqrt(E) * 0.5, rng);
    m.cross_wv = random_matrix(D, E, inv_sqrt(E), rng);
    m.dec_ff1_w = random_matrix(F, D, inv_sqrt(D), rng);
    m.dec_ff1_b = random_matrix(1, F, 0.1, rng);
    m.dec_ff2_w = random_matrix(D, F, inv_sqrt(F), rng);
    m.dec_ff2_b = random_matrix(1, D, 0.1, rng);
    m.out_w = random_matrix(V, D, inv_sqrt(D), rng);
    m.out_b = Matrix(1, V);
    return m;
}

void ToyTranslator::validate() const {
    const auto V = vocab_size, E = shape.l_ein, D = shape.l_eout, F = shape.l_ff;
    auto check = [](const Matrix& m, std::size_t r, std::size_t c, const char* name) {
        if (m.rows != r || m.cols != c || m.data.size() != r * c)
            throw ValidationError(std::string("translator weight '") + name + "' has shape " + std::to_string(m.rows) +
                                  "x" + std::to_string(m.cols) + ", expected " + std::to_string(r) + "x" +
                                  std::to_string(c));
    };
    if (V <= static_cast<std::size_t>(Vocab::kUnk) || E == 0 || D == 0 || F == 0)
        throw ValidationError("translator dimensions must be positive");
    check(input_embedding, V, E, "input_embedding");
    check(enc_wq, E, E, "enc_wq");
    check(enc_wk, E, E, "enc_wk");
    check(enc_wv, E, E, "enc_wv");
    check(enc_ff1_w, F, E, "enc_ff1_w");
    check(enc_ff1_b, 1, F, "enc_ff1_b");
    check(enc_ff2_w, E, F, "enc_ff2_w");
    check(enc_ff2_b, 1, E, "enc_ff2_b");
    check(length_w, 1, 2 * E, "length_w");
    check(output_embedding, V, D, "output_embedding");
    check(dec_wq, D, D, "dec_wq");
    check(dec_wk, D, D, "dec_wk");
    check(dec_wv, D, D, "dec_wv");
    check(cross_wk, D, E, "cross_wk");
    check(cross_wv, D, E, "cross_wv");
    check(dec_ff1_w, F, D, "dec_ff1_w");
    check(dec_ff1_b, 1, F, "dec_ff1_b");
    check(dec_ff2_w, D, F, "dec_ff2_w");
    check(dec_ff2_b, 1, D, "dec_ff2_b");
    check(out_w, V, D, "out_w");
    check(out_b, 1, V, "out_b");
    if (max_decode_factor == 0) throw ValidationError("max_decode_factor must be at least 1");
}

namespace {

struct NamedArray {
    const char* name;
    Matrix ToyTranslator::*member;
};

constexpr NamedArray kArrays[] = {
    {"input_embedding", &ToyTranslator::input_embedding},
    {"enc_wq", &ToyTranslator::enc_wq},
    {"enc_wk", &ToyTranslator::enc_wk},
    {"enc_wv", &ToyTranslator::enc_wv},
    {"enc_ff1_w", &ToyTranslator::enc_ff1_w},
    {"enc_ff1_b", &ToyTranslator::enc_ff1_b},
    {"enc_ff2_w", &ToyTranslator::enc_ff2_w},
    {"enc_ff2_b", &ToyTranslator::enc_ff2_b},
    {"length_w", &ToyTranslator::length_w},
    {"output_embedding", &ToyTranslator::output_embedding},
    {"dec_wq", &ToyTranslator::dec_wq},
    {"dec_wk", &ToyTranslator::dec_wk},
    {"dec_wv", &ToyTranslator::dec_wv},
    {"cross_wk", &ToyTranslator::cross_wk},
    {"cross_wv", &ToyTranslator::cross_wv},
    {"dec_ff1_w", &ToyTranslator::dec_ff1_w},
    {"dec_ff1_b", &ToyTranslator::dec_ff1_b},
    {"dec_ff2_w", &ToyTranslator::dec_ff2_w},
    {"dec_ff2_b", &ToyTranslator::dec_ff2_b},
    {"out_w", &ToyTranslator::out_w},
    {"out_b", &ToyTranslator::out_b},
};

constexpr const char* kTranslatorMagic = "sponge-translator";
constexpr int kTranslatorVersion = 1;

}  // namespace

void ToyTranslator::save(std::ostream& out) const {
    const auto old = out.precision(17);
    out << kTranslatorMagic << " v" << kTranslatorVersion << '\n';
    out << "dims " << vocab_size << ' ' << shape.l_ein << ' ' << shape.l_eout << ' ' << shape.l_ff << '\n';
    out << "eos_gain " << eos_gain << '\n';
    out << "length_bias " << length_bias << '\n';
    out << "max_decode_factor " << max_decode_factor << '\n';
    out.precision(old);
    for (const auto& a : kArrays) write_array(out, a.name, this->*a.member);
}

ToyTranslator ToyTranslator::load(std::istream& in) {
    std::string magic, version, key;
    if (!(in >> magic >> version) || magic != kTranslatorMagic)
        throw ValidationError("not a sponge-translator checkpoint");
    if (version != "v" + std::to_string(kTranslatorVersion))
        throw ValidationError("unsupported translator checkpoint version " + version);
    ToyTranslator m;
    auto expect = [&](const char* name) {
        if (!(in >> key) || key != name) throw ValidationError(std::string("checkpoint: expected '") + name + "'");
    };
    expect("dims");
    in >> m.vocab_size >> m.shape.l_ein >> m.shape.l_eout >> m.shape.l_ff;
    expect("eos_gain");
    in >> m.eos_gain;
    expect("length_bias");
    in >> m.length_bias;
    expect("max_decode_factor");
    in >> m.max_decode_factor;
    if (!in) throw ValidationError("checkpoint: malformed header");
    for (const auto& a : kArrays) m.*a.member = read_array(in, a.name);
    m.validate();
    return m;
}

namespace {

void relu(std::span<double> v) {
    for (auto& x : v) x = x > 0.0 ? x : 0.0;
}

void softmax(std::span<double> v) {
    const double mx = *std::max_element(v.begin(), v.end());
    double sum = 0.0;
    for (auto& x : v) sum += (x = std::exp(x - mx));
    for (auto& x : v) x /= sum;
}

double dot(std::span<const double> a, std::span<const double> b, std::uint64_t& nonzero) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] != 0.0 && b[i] != 0.0) ++nonzero;
        s += a[i] * b[i];
    }
    return s;
}

/// Scaled-dot-product attention of `queries` over `keys`/`values`; counts
/// score and weighted-sum multiplies.
void attend(std::span<const double> query, const Matrix& keys, const Matrix& values, std::size_t count,
            std::span<double> ctx, LayerRecorder& rec) {
    std::uint64_t nz = 0;
    std::vector<double> w(count);
    for (std::size_t j = 0; j < count; ++j) w[j] = dot(query, keys.row(j), nz);
    softmax(w);
    std::fill(ctx.begin(), ctx.end(), 0.0);
    for (std::size_t j = 0; j < count; ++j) {
        const auto v = values.row(j);
        for (std::size_t k = 0; k < ctx.size(); ++k) {
            if (w[j] != 0.0 && v[k] != 0.0) ++nz;
            ctx[k] += w[j] * v[k];
        }
    }
    const std::uint64_t total = 2 * static_cast<std::uint64_t>(count) * query.size();
    rec.mults(total, nz);
}

class Run {
public:
    Run(TranslationResult& r, const LayerObserver& obs) : result_(r), observer_(obs) {}

    /// Appends the layer; returns false when the observer aborts.
    bool commit(const LayerRecorder& rec) {
        result_.trace.layers.push_back(rec.finish());
        if (observer_ && !observer_(result_.trace.layers.back())) {
            result_.aborted = true;
            return false;
        }
        return true;
    }

private:
    TranslationResult& result_;
    const LayerObserver& observer_;
};

}  // namespace

TranslationResult translate(const ToyTranslator& m, const TokenSequence& input, const LayerObserver& observer) {
    if (input.ids.empty()) throw std::invalid_argument("translate: input token sequence is empty");
    for (TokenId id : input.ids)
        if (id < 0 || static_cast<std::size_t>(id) >= m.vocab_size)
            throw std::out_of_range("translate: token id " + std::to_string(id) + " outside the model vocab");

    const std::size_t T = input.ids.size();
    const std::size_t E = m.shape.l_ein, D = m.shape.l_eout, F = m.shape.l_ff, V = m.vocab_size;

    TranslationResult result;
    result.dims = {T, 0, E, D};
    Run run(result, observer);
    std::uint64_t mt = 0, mnz = 0;

    // Encoder: embedding lookup.
    Matrix X(T, E);
    {
        LayerRecorder rec("enc.embed");
        for (std::size_t i = 0; i < T; ++i) std::ranges::copy(m.input_embedding.row(input.ids[i]), X.row(i).begin());
        rec.read_dense(T);
        rec.weights(T * E);
        rec.output(X.data);
        if (!run.commit(rec)) return result;
    }

    // Encoder self-attention with residual.
    Matrix H1(T, E);
    {
        LayerRecorder rec("enc.self_attn");
        Matrix Q(T, E), K(T, E), Vv(T, E);
        mt = mnz = 0;
        for (std::size_t i = 0; i < T; ++i) {
            matvec(m.enc_wq, X.row(i), {}, Q.row(i), mt, mnz);
            matvec(m.enc_wk, X.row(i), {}, K.row(i), mt, mnz);
            matvec(m.enc_wv, X.row(i), {}, Vv.row(i), mt, mnz);
        }
        rec.mults(mt, mnz);
        std::vector<double> ctx(E);
        for (std::size_t i = 0; i < T; ++i) {
            attend(Q.row(i), K, Vv, T, ctx, rec);
            for (std::size_t k = 0; k < E; ++k) H1(i, k) = X(i, k) + ctx[k];
        }
        rec.read(X.data);
        rec.weights(3 * E * E);
        rec.output(H1.data);
        if (!run.commit(rec)) return result;
    }

    Matrix U(T, F);
    {
        LayerRecorder rec("enc.ff1");
        mt = mnz = 0;
        for (std::size_t i = 0; i < T; ++i) {
            matvec(m.enc_ff1_w, H1.row(i), m.enc_ff1_b.data, U.row(i), mt, mnz);
            relu(U.row(i));
        }
        rec.mults(mt, mnz);
        rec.read(H1.data);
        rec.weights(F * E + F);
        rec.output(U.data);
        if (!run.commit(rec)) return result;
    }

    Matrix M(T, E);
    {
        LayerRecorder rec("enc.ff2");
        mt = mnz = 0;
        std::vector<double> z(E);
        for (std::size_t i = 0; i < T; ++i) {
            matvec(m.enc_ff2_w, U.row(i), m.enc_ff2_b.data, z, mt, mnz);
            for (std::size_t k = 0; k < E; ++k) M(i, k) = H1(i, k) + z[k];
        }
        rec.mults(mt, mnz);
        rec.read(U.data);
        rec.read(H1.data);
        rec.weights(E * F + E);
        rec.output(M.data);
        if (!run.commit(rec)) return result;
    }

    // Length predictor over sum-pooled embeddings and encoder states.
    {
        LayerRecorder rec("enc.length");
        std::vector<double> pooled(2 * E, 0.0);
        for (std::size_t i = 0; i < T; ++i)
            for (std::size_t k = 0; k < E; ++k) {
                pooled[k] += X(i, k);
                pooled[E + k] += M(i, k);
            }
        std::vector<double> len(1);
        mt = mnz = 0;
        matvec(m.length_w, pooled, std::span<const double>(&m.length_bias, 1), len, mt, mnz);
        result.predicted_length = len[0];
        rec.mults(mt, mnz);
        rec.read(X.data);
        rec.read(M.data);
        rec.weights(2 * E + 1);
        rec.output(len);
        if (!run.commit(rec)) return result;
    }

    // Greedy decoding.
    const std::size_t max_steps = m.max_decode_steps(T);
    Matrix k_cache(max_steps, D), v_cache(max_steps, D);
    Matrix cross_k(T, D), cross_v(T, D);
    std::vector<double> e(D), q(D), kk(D), vv(D), h1(D), h2(D), u(F), z(D), h3(D), logits(V), ctx(D);
    TokenId prev = Vocab::kEos;
    double confidence_sum = 0.0;

    for (std::size_t t = 0; t < max_steps; ++t) {
        const std::string prefix = "dec." + std::to_string(t) + ".";
        result.dims.l_tout = t + 1;
        {
            LayerRecorder rec(prefix + "embed");
            std::ranges::copy(m.output_embedding.row(prev), e.begin());
            rec.read_dense(1);
            rec.weights(D);
            rec.output(e);
            if (!run.commit(rec)) return result;
        }
        {
            LayerRecorder rec(prefix + "self_attn");
            mt = mnz = 0;
            matvec(m.dec_wq, e, {}, q, mt, mnz);
            matvec(m.dec_wk, e, {}, kk, mt, mnz);
            matvec(m.dec_wv, e, {}, vv, mt, mnz);
            rec.mults(mt, mnz);
            rec.read(e);
            rec.read(std::span<const double>(k_cache.data.data(), t * D));
            rec.read(std::span<const double>(v_cache.data.data(), t * D));
            std::ranges::copy(kk, k_cache.row(t).begin());
            std::ranges::copy(vv, v_cache.row(t).begin());
            attend(q, k_cache, v_cache, t + 1, ctx, rec);
            for (std::size_t k = 0; k < D; ++k) h1[k] = e[k] + ctx[k];
            rec.weights(3 * D * D);
            rec.write(kk);
            rec.write(vv);
            rec.output(h1);
            if (!run.commit(rec)) return result;
        }
        {
            // Memory keys and values are re-projected every step: nothing
            // survives a layer flush.
            LayerRecorder rec(prefix + "cross_attn");
            mt = mnz = 0;
            for (std::size_t i = 0; i < T; ++i) {
                matvec(m.cross_wk, M.row(i), {}, cross_k.row(i), mt, mnz);
                matvec(m.cross_wv, M.row(i), {}, cross_v.row(i), mt, mnz);
            }
            rec.mults(mt, mnz);
            attend(h1, cross_k, cross_v, T, ctx, rec);
            for (std::size_t k = 0; k < D; ++k) h2[k] = h1[k] + ctx[k];
            rec.read(M.data);
            rec.read(h1);
            rec.weights(2 * D * E);
            rec.output(h2);
            if (!run.commit(rec)) return result;
        }
        {
            LayerRecorder rec(prefix + "ff1");
            mt = mnz = 0;
            matvec(m.dec_ff1_w, h2, m.dec_ff1_b.data, u, mt, mnz);
            relu(u);
            rec.mults(mt, mnz);
            rec.read(h2);
            rec.weights(F * D + F);
            rec.output(u);
            if (!run.commit(rec)) return result;
        }
        {
            LayerRecorder rec(prefix + "ff2");
            mt = mnz = 0;
            matvec(m.dec_ff2_w, u, m.dec_ff2_b.data, z, mt, mnz);
            for (std::size_t k = 0; k < D; ++k) h3[k] = h2[k] + z[k];
            rec.mults(mt, mnz);
            rec.read(u);
            rec.read(h2);
            rec.weights(D * F + D);
            rec.output(h3);
            if (!run.commit(rec)) return result;
        }
        TokenId next = Vocab::kEos;
        {
            LayerRecorder rec(prefix + "out");
            mt = mnz = 0;
            matvec(m.out_w, h3, m.out_b.data, logits, mt, mnz);
            logits[Vocab::kEos] += m.eos_gain * (static_cast<double>(t + 1) - result.predicted_length);
            rec.mults(mt, mnz);
            rec.read(h3);
            rec.weights(V * D + V);
            rec.output(logits);

            // PAD and UNK are never generated; ties go to the lowest id.
            double best = -std::numeric_limits<double>::infinity();
            for (std::size_t id = 0; id < V; ++id) {
                if (id == static_cast<std::size_t>(Vocab::kPad) || id == static_cast<std::size_t>(Vocab::kUnk)) continue;
                if (logits[id] > best) {
                    best = logits[id];
                    next = static_cast<TokenId>(id);
                }
            }
            double denom = 0.0;
            for (std::size_t id = 0; id < V; ++id) {
                if (id == static_cast<std::size_t>(Vocab::kPad) || id == static_cast<std::size_t>(Vocab::kUnk)) continue;
                denom += std::exp(logits[id] - best);
            }
            confidence_sum += 1.0 / denom;
            if (!run.commit(rec)) return result;
        }
        result.output.ids.push_back(next);
        prev = next;
        if (next == Vocab::kEos) break;
    }
    result.output.truncated = result.output.ids.empty() || result.output.ids.back() != Vocab::kEos;
    result.confidence = result.dims.l_tout ? confidence_sum / static_cast<double>(result.dims.l_tout) : 0.0;
    return result;
}

std::uint64_t cross_attention_mults(std::size_t l_tin, const ToyTranslator& m) {
    const std::uint64_t T = l_tin, E = m.shape.l_ein, D = m.shape.l_eout;
    return 2 * T * E * D + 2 * T * D;
}

std::uint64_t pipeline_cost_estimate(const PipelineDims& dims, const ToyTranslator& m) {
    const std::uint64_t T = dims.l_tin, S = dims.l_tout;
    const std::uint64_t E = m.shape.l_ein, D = m.shape.l_eout, F = m.shape.l_ff, V = m.vocab_size;
    const std::uint64_t encoder = 3 * T * E * E + 2 * T * T * E + 2 * T * E * F + 2 * E;
    const std::uint64_t per_step = 3 * D * D + cross_attention_mults(dims.l_tin, m) + 2 * D * F + D * V;
    // Self-attention over the growing prefix: 2*D*(t+1) summed over steps.
    const std::uint64_t prefix_attention = D * S * (S + 1);
    return encoder + S * per_step + prefix_attention;
}

}  // namespace sponge
