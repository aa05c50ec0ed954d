#include "sponge/corpus.hpp"

#include <algorithm>

namespace sponge {

const std::vector<std::string>& reference_words() {
    static const std::vector<std::string> words{
        "the",     "of",      "and",     "to",      "in",      "is",      "it",      "you",     "that",
        "he",      "was",     "for",     "on",      "are",     "with",    "as",      "his",     "they",
        "be",      "at",      "one",     "have",    "this",    "from",    "by",      "hot",     "word",
        "but",     "what",    "some",    "we",      "can",     "out",     "other",   "were",    "all",
        "there",   "when",    "up",      "use",     "your",    "how",     "said",    "an",      "each",
        "she",     "which",   "do",      "their",   "time",    "if",      "will",    "way",     "about",
        "many",    "then",    "them",    "write",   "would",   "like",    "so",      "these",   "her",
        "long",    "make",    "thing",   "see",     "him",     "two",     "has",     "look",    "more",
        "day",     "could",   "go",      "come",    "did",     "number",  "sound",   "no",      "most",
        "people",  "my",      "over",    "know",    "water",   "than",    "call",    "first",   "who",
        "may",     "down",    "side",    "been",    "now",     "find",    "any",     "new",     "work",
        "part",    "take",    "get",     "place",   "made",    "live",    "where",   "after",   "back",
        "little",  "only",    "round",   "man",     "year",    "came",    "show",    "every",   "good",
        "give",    "our",     "under",   "name",    "very",    "through", "just",    "form",    "great",
        "think",   "say",     "help",    "low",     "line",    "before",  "turn",    "cause",   "same",
        "mean",    "differ",  "move",    "right",   "boy",     "old",     "too",     "does",    "tell",
        "sentence","set",     "three",   "want",    "air",     "well",    "also",    "play",    "small",
        "end",     "put",     "home",    "read",    "hand",    "port",    "large",   "spell",   "add",
        "even",    "land",    "here",    "must",    "big",     "high",    "such",    "follow",  "act",
        "why",     "ask",     "men",     "change",  "went",    "light",   "kind",    "off",     "need",
        "house",   "picture", "try",     "again",   "animal",  "point",   "mother",  "world",   "near",
        "build",   "self",    "earth",   "father",  "head",    "stand",   "own",     "page",    "should",
        "country", "found",   "answer",  "school",  "grow",    "study",   "still",   "learn",   "plant",
        "cover",   "food",    "sun",     "four",    "thought", "let",     "keep",    "eye",     "never",
        "last",    "door",    "between", "city",    "tree",    "cross",   "since",   "hard",    "start",
        "might",   "story",   "saw",     "far",     "sea",     "draw",    "left",    "late",    "run",
        "while",   "press",   "close",   "night",   "real",    "life",    "few",     "stop",    "open",
        "seem",    "together","next",    "white",   "children","begin",   "got",     "walk",    "example",
        "ease",    "paper",   "often",   "always",  "music",   "those",   "both",    "mark",    "book",
        "letter",  "until",   "mile",    "river",   "car",     "feet",    "care",    "second",  "group",
        "carry",   "took",    "rain",    "eat",     "room",    "friend",  "began",   "idea",    "fish",
        "mountain","north",   "once",    "base",    "hear",    "horse",   "cut",     "sure",    "watch",
        "color",   "face",    "wood",    "main",    "enough",  "plain",   "girl",    "usual",   "young",
        "ready",   "above",   "ever",    "red",     "list",    "though",  "feel",    "talk",    "bird",
        "soon",    "body",    "dog",     "family",  "direct",  "pose",    "leave",   "song",    "measure",
        "state",   "product", "black",   "short",   "numeral", "class",   "wind",    "question","happen",
        "summer",  "holiday", "garden",  "morning", "evening", "window",  "travel",  "market",  "letter",
        "a",       "i",
    };
    return words;
}

const std::vector<std::string>& reference_subwords() {
    static const std::vector<std::string> pieces{
        "ath",    "##az",   "##agor", "##aphobia", "##aph", "##bi",  "##ing", "##ed",  "##er",
        "##es",   "##ly",   "##tion", "##ment",    "##ness","##able","##al",  "##ous", "##ive",
        "##st",   "##th",   "##ch",   "##sh",      "##ou",  "##an",  "##in",  "##on",  "##en",
        "##ar",   "##or",   "##re",   "##at",      "##it",  "##le",  "##ll",  "##ss",  "##ee",
        "pre",    "un",     "re",     "dis",       "con",   "pro",   "com",   "ex",    "sub",
        "inter",  "over",   "trans",
    };
    return pieces;
}

const Vocab& reference_vocab() {
    static const Vocab vocab = [] {
        std::vector<std::string> extra = reference_words();
        extra.insert(extra.end(), reference_subwords().begin(), reference_subwords().end());
        return Vocab::build(extra);
    }();
    return vocab;
}

namespace {

bool fillable(std::size_t remaining) {
    // Single-letter words make every positive remainder fillable; keep at
    // least a two-letter word after a separating space when possible.
    return remaining == 0 || remaining >= 3;
}

}  // namespace

std::string natural_sentence(std::mt19937_64& rng, std::size_t length) {
    if (length == 0) return {};
    const auto& words = reference_words();
    const bool period = length >= 3;
    std::size_t body = period ? length - 1 : length;

    std::string out;
    std::size_t remaining = body;
    std::uniform_int_distribution<std::size_t> pick(0, words.size() - 1);
    while (remaining > 0) {
        std::string chosen;
        for (int attempt = 0; attempt < 64 && chosen.empty(); ++attempt) {
            const auto& w = words[pick(rng)];
            if (w.size() <= remaining && fillable(remaining - w.size())) chosen = w;
        }
        if (chosen.empty()) {
            std::vector<const std::string*> fits;
            for (const auto& w : words)
                if (w.size() <= remaining && (w.size() == remaining || w.size() + 2 <= remaining)) fits.push_back(&w);
            std::uniform_int_distribution<std::size_t> pf(0, fits.size() - 1);
            chosen = *fits[pf(rng)];
        }
        out += chosen;
        remaining -= chosen.size();
        if (remaining > 0) {
            out.push_back(' ');
            --remaining;
        }
    }
    if (period) out.push_back('.');
    return out;
}

std::vector<std::string> natural_corpus(std::size_t count, std::size_t length, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<std::string> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) out.push_back(natural_sentence(rng, length));
    return out;
}

std::string random_text(std::mt19937_64& rng, std::size_t length, const Alphabet& alphabet) {
    const std::string chars = alphabet.sampling_chars();
    std::uniform_int_distribution<std::size_t> pick(0, chars.size() - 1);
    std::string s(length, ' ');
    for (auto& c : s) c = chars[pick(rng)];
    return s;
}

}  // namespace sponge
