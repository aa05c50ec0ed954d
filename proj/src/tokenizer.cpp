#include "sponge/tokenizer.hpp"

#include <algorithm>
#include <istream>
#include <ostream>
#include <stdexcept>

#include "sponge/energy.hpp"

namespace sponge {

bool Alphabet::is_letter(char c) const { return c == fallback || letters.find(c) != std::string::npos; }

bool Alphabet::is_punct(char c) const { return punctuation.find(c) != std::string::npos; }

std::string Alphabet::symbols() const { return letters + punctuation + fallback; }

std::string Alphabet::sampling_chars() const { return symbols() + ' '; }

std::vector<std::string> normalize(std::string_view text, const Alphabet& alphabet) {
    std::vector<std::string> words;
    std::string current;
    auto flush = [&] {
        if (!current.empty()) words.push_back(std::move(current));
        current.clear();
    };

    for (std::size_t i = 0; i < text.size(); ++i) {
        auto uc = static_cast<unsigned char>(text[i]);
        if (uc >= 0x80) {
            // UTF-8 continuation bytes belong to the code point already replaced.
            if ((uc & 0xC0) == 0x80) continue;
            current.push_back(alphabet.fallback);
            continue;
        }
        char c = static_cast<char>(uc);
        if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
        if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v') {
            flush();
        } else if (alphabet.is_punct(c)) {
            flush();
            words.emplace_back(1, c);
        } else if (alphabet.is_letter(c)) {
            current.push_back(c);
        } else {
            current.push_back(alphabet.fallback);
        }
    }
    flush();
    return words;
}

Vocab::Vocab(std::vector<std::string> pieces) : pieces_(std::move(pieces)) {
    if (pieces_.size() < 3) throw ValidationError("vocab needs the three reserved entries");
    for (std::size_t i = 0; i < pieces_.size(); ++i) {
        const auto& p = pieces_[i];
        if (p.empty()) throw ValidationError("vocab entry " + std::to_string(i) + " is empty");
        if (!index_.emplace(p, static_cast<TokenId>(i)).second)
            throw ValidationError("duplicate vocab entry '" + p + "'");
        if (i > static_cast<std::size_t>(kUnk)) max_len_ = std::max(max_len_, surface(static_cast<TokenId>(i)).size());
    }
}

Vocab Vocab::build(const std::vector<std::string>& extra, const Alphabet& alphabet) {
    std::vector<std::string> pieces{"<pad>", "</s>", "<unk>"};
    for (char c : alphabet.symbols()) pieces.emplace_back(1, c);
    for (char c : alphabet.letters) pieces.push_back(std::string(kContinuation) + c);
    pieces.push_back(std::string(kContinuation) + alphabet.fallback);
    for (const auto& p : extra)
        if (std::find(pieces.begin(), pieces.end(), p) == pieces.end()) pieces.push_back(p);
    return Vocab(std::move(pieces));
}

const std::string& Vocab::piece(TokenId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= pieces_.size())
        throw std::out_of_range("unknown token id " + std::to_string(id));
    return pieces_[static_cast<std::size_t>(id)];
}

std::optional<TokenId> Vocab::find(std::string_view p) const {
    auto it = index_.find(std::string(p));
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

bool Vocab::is_continuation(TokenId id) const {
    const auto& p = piece(id);
    return !is_reserved(id) && p.size() > kContinuation.size() && p.starts_with(kContinuation);
}

std::string_view Vocab::surface(TokenId id) const {
    std::string_view p = piece(id);
    if (is_continuation(id)) p.remove_prefix(kContinuation.size());
    return p;
}

bool Vocab::covers(const Alphabet& alphabet) const {
    for (char c : alphabet.symbols())
        if (!find(std::string(1, c))) return false;
    for (char c : alphabet.letters + alphabet.fallback)
        if (!find(std::string(kContinuation) + c)) return false;
    return true;
}

void Vocab::save(std::ostream& out) const {
    for (const auto& p : pieces_) out << p << '\n';
}

Vocab Vocab::load(std::istream& in) {
    std::vector<std::string> pieces;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        pieces.push_back(line);
    }
    return Vocab(std::move(pieces));
}

namespace {

void encode_word(const std::string& word, const Vocab& vocab, std::vector<TokenId>& out) {
    std::size_t pos = 0;
    std::string key;
    while (pos < word.size()) {
        const bool first = pos == 0;
        std::size_t len = std::min(vocab.max_surface_length(), word.size() - pos);
        std::optional<TokenId> hit;
        for (; len > 0; --len) {
            key.assign(first ? "" : Vocab::kContinuation);
            key.append(word, pos, len);
            if ((hit = vocab.find(key))) break;
        }
        if (hit) {
            out.push_back(*hit);
            pos += len;
        } else {
            out.push_back(Vocab::kUnk);
            pos += 1;
        }
    }
}

}  // namespace

TokenSequence bpe_encode(const std::vector<std::string>& words, const Vocab& vocab) {
    TokenSequence seq;
    for (std::size_t i = 0; i < words.size(); ++i) {
        if (i) seq.source_text.push_back(' ');
        seq.source_text += words[i];
        encode_word(words[i], vocab, seq.ids);
    }
    return seq;
}

TokenSequence encode_text(std::string_view text, const Vocab& vocab, const Alphabet& alphabet) {
    auto seq = bpe_encode(normalize(text, alphabet), vocab);
    seq.source_text = std::string(text);
    return seq;
}

std::string detokenize(std::span<const TokenId> ids, const Vocab& vocab, const Alphabet& alphabet) {
    std::string out;
    for (TokenId id : ids) {
        const auto& p = vocab.piece(id);  // throws on unknown ids
        if (id == Vocab::kPad || id == Vocab::kEos) continue;
        if (id == Vocab::kUnk) {
            if (!out.empty()) out.push_back(' ');
            out.push_back(alphabet.fallback);
            continue;
        }
        if (vocab.is_continuation(id) && !out.empty()) {
            out += vocab.surface(id);
        } else {
            if (!out.empty()) out.push_back(' ');
            out += vocab.is_continuation(id) ? std::string(vocab.surface(id)) : p;
        }
    }
    return out;
}

}  // namespace sponge
