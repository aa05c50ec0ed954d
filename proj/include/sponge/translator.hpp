#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <vector>

#include "sponge/energy.hpp"
#include "sponge/tensor.hpp"
#include "sponge/tokenizer.hpp"

namespace sponge {

struct TranslatorShape {
    std::size_t l_ein = 16;
    std::size_t l_eout = 24;
    std::size_t l_ff = 32;
};

/// Token and embedding sizes of one completed inference.
struct PipelineDims {
    std::size_t l_tin = 0;
    std::size_t l_tout = 0;
    std::size_t l_ein = 0;
    std::size_t l_eout = 0;

    bool operator==(const PipelineDims&) const = default;
};

/// One-layer encoder (single-head self-attention + ReLU feed-forward), a
/// length predictor, and one decoder layer (self-attention, single-head
/// cross-attention, ReLU feed-forward, output projection). Decoding is greedy
/// and stops on EOS.
///
/// The length predictor sums a fertility prior carried in channel 0 of the
/// input embedding (1 for word starts and punctuation, 1 + 1/len for
/// continuation pieces) plus a small learned-looking term over the pooled
/// encoder states. Its prediction L is added to the EOS logit as
/// eos_gain * (step + 1 - L).
struct ToyTranslator {
    std::size_t vocab_size = 0;
    TranslatorShape shape;

    Matrix input_embedding;   // V x l_ein
    Matrix enc_wq, enc_wk, enc_wv;  // l_ein x l_ein
    Matrix enc_ff1_w;         // l_ff x l_ein
    Matrix enc_ff1_b;         // 1 x l_ff
    Matrix enc_ff2_w;         // l_ein x l_ff
    Matrix enc_ff2_b;         // 1 x l_ein
    Matrix length_w;          // 1 x 2*l_ein, applied to [sum(x); sum(enc)]
    double length_bias = 0.0;

    Matrix output_embedding;  // V x l_eout
    Matrix dec_wq, dec_wk, dec_wv;  // l_eout x l_eout
    Matrix cross_wk, cross_wv;      // l_eout x l_ein
    Matrix dec_ff1_w;         // l_ff x l_eout
    Matrix dec_ff1_b;         // 1 x l_ff
    Matrix dec_ff2_w;         // l_eout x l_ff
    Matrix dec_ff2_b;         // 1 x l_eout
    Matrix out_w;             // V x l_eout
    Matrix out_b;             // 1 x V

    double eos_gain = 20.0;
    /// Decoding stops after max_decode_factor * l_tin steps.
    std::size_t max_decode_factor = 4;

    /// Weights drawn from `seed`; fertility prior and length head hand-set
    /// from `vocab`.
    static ToyTranslator create(const Vocab& vocab, std::uint64_t seed, TranslatorShape shape = {},
                                double length_noise = 0.02);

    std::size_t max_decode_steps(std::size_t l_tin) const { return max_decode_factor * l_tin; }
    void validate() const;

    // Checkpoint: header "sponge-translator v1", scalar lines, then named arrays.
    void save(std::ostream& out) const;
    static ToyTranslator load(std::istream& in);
};

/// Fertility prior of one token, as written into input embedding channel 0.
double fertility_prior(const Vocab& vocab, TokenId id);

/// Called after every layer invocation; return false to abort the inference.
using LayerObserver = std::function<bool(const LayerTrace&)>;

struct TranslationResult {
    TokenSequence output;    // generated ids, including the final EOS if emitted
    ActivationTrace trace;
    PipelineDims dims;
    double predicted_length = 0.0;
    double confidence = 0.0;  // mean probability of the chosen tokens
    bool aborted = false;
    std::size_t decode_steps() const { return dims.l_tout; }
};

/// Throws std::invalid_argument on an empty input.
TranslationResult translate(const ToyTranslator& model, const TokenSequence& input,
                            const LayerObserver& observer = {});

/// Closed-form multiply count of a translation with the given dimensions.
std::uint64_t pipeline_cost_estimate(const PipelineDims& dims, const ToyTranslator& model);

/// Multiplies in the cross-attention of one decode step.
std::uint64_t cross_attention_mults(std::size_t l_tin, const ToyTranslator& model);

}  // namespace sponge
