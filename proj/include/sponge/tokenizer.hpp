#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace sponge {

using TokenId = std::int32_t;

/// Characters the text pipeline understands. Letters form words, punctuation
/// always becomes a standalone word, and anything else is replaced by
/// `fallback` during normalization.
struct Alphabet {
    std::string letters = "abcdefghijklmnopqrstuvwxyz0123456789";
    std::string punctuation = ".,!?;:'\"/-()";
    char fallback = '_';

    bool is_letter(char c) const;
    bool is_punct(char c) const;
    /// Every character a normalized text may contain (letters, punctuation,
    /// fallback), without whitespace.
    std::string symbols() const;
    /// Characters a random sponge candidate is drawn from: symbols plus space.
    std::string sampling_chars() const;
};

/// Case-fold, split punctuation into standalone tokens and collapse
/// whitespace. Unknown characters (including each non-ASCII code point) map
/// to the fallback character.
std::vector<std::string> normalize(std::string_view text, const Alphabet& alphabet = {});

/// Subword vocabulary. Pieces that continue a word carry a "##" prefix, the
/// rest start a word. Ids 0..2 are reserved.
class Vocab {
public:
    static constexpr TokenId kPad = 0;
    static constexpr TokenId kEos = 1;
    static constexpr TokenId kUnk = 2;
    static constexpr std::string_view kContinuation = "##";

    Vocab() = default;
    /// `pieces` is the full id-ordered list including the three reserved
    /// entries.
    explicit Vocab(std::vector<std::string> pieces);

    /// Reserved entries, every alphabet symbol as a word start, every letter
    /// and the fallback as a continuation, then `extra` pieces in order
    /// (duplicates skipped).
    static Vocab build(const std::vector<std::string>& extra, const Alphabet& alphabet = {});

    std::size_t size() const { return pieces_.size(); }
    const std::string& piece(TokenId id) const;
    std::optional<TokenId> find(std::string_view piece) const;
    bool is_continuation(TokenId id) const;
    bool is_reserved(TokenId id) const { return id >= 0 && id <= kUnk; }
    /// Piece text without the continuation marker.
    std::string_view surface(TokenId id) const;
    std::size_t max_surface_length() const { return max_len_; }

    /// True when every symbol of the alphabet encodes without UNK.
    bool covers(const Alphabet& alphabet) const;

    // One piece per line; the id is the zero-based line number.
    void save(std::ostream& out) const;
    static Vocab load(std::istream& in);

private:
    std::vector<std::string> pieces_;
    std::unordered_map<std::string, TokenId> index_;
    std::size_t max_len_ = 0;
};

struct TokenSequence {
    std::vector<TokenId> ids;
    std::string source_text;
    bool truncated = false;

    std::size_t length() const { return ids.size(); }
};

/// Greedy longest-prefix segmentation of each word; the first piece is
/// matched against word-start entries and later pieces against continuation
/// entries. Total: characters missing from the vocab become UNK.
TokenSequence bpe_encode(const std::vector<std::string>& words, const Vocab& vocab);

/// normalize + bpe_encode, keeping the raw text as source_text.
TokenSequence encode_text(std::string_view text, const Vocab& vocab, const Alphabet& alphabet = {});

/// Words joined by single spaces. PAD and EOS are dropped, UNK renders as the
/// fallback character. Throws std::out_of_range on an unknown id.
std::string detokenize(std::span<const TokenId> ids, const Vocab& vocab, const Alphabet& alphabet = {});

}  // namespace sponge
