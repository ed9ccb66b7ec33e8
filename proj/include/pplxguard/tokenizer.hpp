#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "pplxguard/errors.hpp"

namespace pplxguard {

// Byte offsets into the original text, half-open.
struct Span {
    std::size_t begin = 0;
    std::size_t end = 0;

    friend bool operator==(const Span&, const Span&) = default;
};

// Tokenized text bound to one tokenization scheme. Token ids are stable
// 63-bit hashes of the surface bytes, so equal surfaces hash to equal ids
// across processes and runs; scorers resolve ids against their own vocab
// (unknown ids fall to UNK there, not here).
struct TokenSequence {
    std::vector<std::uint64_t> tokens;
    std::vector<Span> surfaces;
    std::string scheme_id;

    std::size_t size() const noexcept { return tokens.size(); }
    bool empty() const noexcept { return tokens.empty(); }

    std::string_view surface(std::string_view original, std::size_t i) const {
        const Span& s = surfaces[i];
        return original.substr(s.begin, s.end - s.begin);
    }
};

struct TokenizerOptions {
    // Hard cap on token count; 0 disables the cap. Inputs over the cap are
    // rejected with InputTooLong, which callers surface as a detection
    // signal in its own right.
    std::size_t max_tokens = 8192;
};

inline constexpr std::string_view kRefWordScheme = "ref-word-v1";

// FNV-1a 64, masked to 63 bits so ids stay non-negative in any signed or
// JSON representation.
inline std::uint64_t token_id(std::string_view surface) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : surface) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h & 0x7fffffffffffffffull;
}

// Registered schemes: the built-in reference scheme plus any "ext:<name>"
// namespace an external scorer declares. External schemes segment exactly
// like the reference scheme; the namespace only prevents mixing sequences
// across scorers with different vocabularies.
inline bool scheme_known(std::string_view scheme_id) {
    if (scheme_id == kRefWordScheme) return true;
    return scheme_id.size() > 4 && scheme_id.substr(0, 4) == "ext:";
}

namespace detail {

struct Codepoint {
    char32_t value;
    std::size_t length;  // bytes consumed
};

inline Codepoint decode_utf8(std::string_view text, std::size_t pos) {
    const auto byte = [&](std::size_t i) -> unsigned char {
        return static_cast<unsigned char>(text[i]);
    };
    const unsigned char b0 = byte(pos);
    if (b0 < 0x80) return {b0, 1};

    std::size_t len = 0;
    char32_t cp = 0;
    if ((b0 & 0xE0) == 0xC0) { len = 2; cp = b0 & 0x1F; }
    else if ((b0 & 0xF0) == 0xE0) { len = 3; cp = b0 & 0x0F; }
    else if ((b0 & 0xF8) == 0xF0) { len = 4; cp = b0 & 0x07; }
    else return {0xFFFD, 1};

    if (pos + len > text.size()) return {0xFFFD, 1};
    for (std::size_t i = 1; i < len; ++i) {
        if ((byte(pos + i) & 0xC0) != 0x80) return {0xFFFD, 1};
        cp = (cp << 6) | (byte(pos + i) & 0x3F);
    }
    return {cp, len};
}

inline bool is_whitespace(char32_t c) {
    switch (c) {
        case U'\t': case U'\n': case U'\v': case U'\f': case U'\r': case U' ':
        case 0x0085: case 0x00A0: case 0x1680:
        case 0x2028: case 0x2029: case 0x202F: case 0x205F: case 0x3000:
            return true;
        default:
            return c >= 0x2000 && c <= 0x200A;
    }
}

inline bool is_punctuation(char32_t c) {
    if (c < 0x80) {
        return (c >= U'!' && c <= U'/') || (c >= U':' && c <= U'@') ||
               (c >= U'[' && c <= U'`') || (c >= U'{' && c <= U'~');
    }
    // Common non-ASCII punctuation blocks; everything else non-whitespace
    // counts as a word character.
    if (c >= 0x2010 && c <= 0x205E) return true;           // general punctuation
    if (c >= 0x3001 && c <= 0x303F) return true;           // CJK punctuation
    switch (c) {
        case 0x00A1: case 0x00A7: case 0x00AB: case 0x00B6: case 0x00B7:
        case 0x00BB: case 0x00BF:
        case 0xFF01: case 0xFF0C: case 0xFF0E: case 0xFF1A: case 0xFF1B:
        case 0xFF1F:
            return true;
        default:
            return false;
    }
}

enum class CharClass { Whitespace, Punctuation, Word };

inline CharClass classify(char32_t c) {
    if (is_whitespace(c)) return CharClass::Whitespace;
    if (is_punctuation(c)) return CharClass::Punctuation;
    return CharClass::Word;
}

// Segmentation shared by tokenize() and corpus training; returns spans
// without enforcing caps or emptiness.
inline std::vector<Span> segment(std::string_view text) {
    std::vector<Span> spans;
    std::size_t pos = 0;
    while (pos < text.size()) {
        const auto [cp, len] = decode_utf8(text, pos);
        const CharClass cls = classify(cp);
        if (cls == CharClass::Whitespace) {
            pos += len;
            continue;
        }
        // Maximal run of the same class (word chars or punctuation chars).
        const std::size_t start = pos;
        pos += len;
        while (pos < text.size()) {
            const auto [cp2, len2] = decode_utf8(text, pos);
            if (classify(cp2) != cls) break;
            pos += len2;
        }
        spans.push_back({start, pos});
    }
    return spans;
}

}  // namespace detail

inline TokenSequence tokenize(std::string_view text, std::string_view scheme_id,
                              const TokenizerOptions& opts = {}) {
    if (!scheme_known(scheme_id))
        raise(Errc::UnknownScheme, "no such tokenization scheme: " + std::string(scheme_id));

    std::vector<Span> spans = detail::segment(text);
    if (spans.empty())
        raise(Errc::EmptyInput, "no tokens after tokenization");
    if (opts.max_tokens > 0 && spans.size() > opts.max_tokens)
        raise(Errc::InputTooLong,
              "input has " + std::to_string(spans.size()) + " tokens, cap is " +
                  std::to_string(opts.max_tokens));

    TokenSequence seq;
    seq.scheme_id = std::string(scheme_id);
    seq.tokens.reserve(spans.size());
    seq.surfaces = std::move(spans);
    for (const Span& s : seq.surfaces)
        seq.tokens.push_back(token_id(text.substr(s.begin, s.end - s.begin)));
    return seq;
}

// Round-trip identity: rebuilds the original from its spans plus the
// inter-span text. The result is byte-identical to `original` whenever the
// sequence was produced from it.
inline std::string detokenize(const TokenSequence& seq, std::string_view original) {
    std::string out;
    out.reserve(original.size());
    std::size_t pos = 0;
    for (const Span& s : seq.surfaces) {
        if (s.begin < pos || s.end < s.begin || s.end > original.size())
            raise(Errc::SpanMismatch,
                  "span [" + std::to_string(s.begin) + "," + std::to_string(s.end) +
                      ") does not fit the original text");
        out.append(original.substr(pos, s.begin - pos));
        out.append(original.substr(s.begin, s.end - s.begin));
        pos = s.end;
    }
    out.append(original.substr(pos));
    return out;
}

}  // namespace pplxguard
