#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "sponge/tokenizer.hpp"

namespace sponge {

/// Common English words used both as whole-word vocab entries and as the
/// source of natural-like sentences.
const std::vector<std::string>& reference_words();

/// Subword pieces added after the words (word starts and "##" continuations).
const std::vector<std::string>& reference_subwords();

/// The documented toy vocab: reserved ids, alphabet symbols, reference words,
/// reference subwords.
const Vocab& reference_vocab();

/// A natural-like sentence of exactly `length` characters built from
/// reference words, ending in '.' when the length allows. Deterministic in
/// the state of `rng`.
std::string natural_sentence(std::mt19937_64& rng, std::size_t length);

std::vector<std::string> natural_corpus(std::size_t count, std::size_t length, std::uint64_t seed);

/// Uniform random string over alphabet.sampling_chars().
std::string random_text(std::mt19937_64& rng, std::size_t length, const Alphabet& alphabet = {});

}  // namespace sponge
