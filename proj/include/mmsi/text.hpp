#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace mmsi {

// Byte length of the UTF-8 sequence starting at s[pos]. Invalid lead bytes
// are consumed one byte at a time so malformed input cannot loop forever.
inline std::size_t utf8_len(std::string_view s, std::size_t pos) {
    const unsigned char c = static_cast<unsigned char>(s[pos]);
    std::size_t n = 1;
    if ((c & 0x80u) == 0x00u) n = 1;
    else if ((c & 0xE0u) == 0xC0u) n = 2;
    else if ((c & 0xF0u) == 0xE0u) n = 3;
    else if ((c & 0xF8u) == 0xF0u) n = 4;
    if (pos + n > s.size()) n = 1;
    return n;
}

// Splits into UTF-8 code point substrings.
inline std::vector<std::string> utf8_chars(std::string_view s) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < s.size()) {
        const std::size_t n = utf8_len(s, i);
        out.emplace_back(s.substr(i, n));
        i += n;
    }
    return out;
}

inline bool is_ascii_space(char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

// Sentence terminators. ASCII marks end a sentence only when followed by
// whitespace or end of text (guards decimals like "3.5"); fullwidth CJK marks
// end one unconditionally since CJK text carries no inter-sentence spaces.
inline bool is_fullwidth_terminal(std::string_view cp) {
    return cp == "。" || cp == "！" || cp == "？" || cp == "；";
}

inline bool is_ascii_terminal(char c) {
    return c == '.' || c == '!' || c == '?' || c == ';';
}

// Sentence spans cover the whole string; each span includes its terminal
// punctuation and any trailing whitespace, so concatenating all spans
// reproduces the input exactly.
inline std::vector<std::string> split_sentences(std::string_view text) {
    std::vector<std::string> spans;
    std::size_t start = 0;
    std::size_t i = 0;
    while (i < text.size()) {
        const std::size_t n = utf8_len(text, i);
        bool boundary = false;
        if (n == 1 && is_ascii_terminal(text[i])) {
            boundary = i + 1 >= text.size() || is_ascii_space(text[i + 1]);
        } else if (is_fullwidth_terminal(text.substr(i, n))) {
            boundary = true;
        }
        i += n;
        if (boundary) {
            while (i < text.size() && is_ascii_space(text[i])) ++i;
            spans.emplace_back(text.substr(start, i - start));
            start = i;
        }
    }
    if (start < text.size()) spans.emplace_back(text.substr(start));
    return spans;
}

inline bool contains(std::string_view haystack, std::string_view needle) {
    return haystack.find(needle) != std::string_view::npos;
}

// Non-overlapping occurrence count.
inline std::size_t count_occurrences(std::string_view s, std::string_view sub) {
    if (sub.empty()) return 0;
    std::size_t count = 0;
    std::size_t pos = 0;
    while ((pos = s.find(sub, pos)) != std::string_view::npos) {
        ++count;
        pos += sub.size();
    }
    return count;
}

inline std::string replace_all(std::string_view s, std::string_view from, std::string_view to) {
    if (from.empty()) return std::string(s);
    std::string out;
    out.reserve(s.size());
    std::size_t pos = 0;
    while (true) {
        const std::size_t hit = s.find(from, pos);
        if (hit == std::string_view::npos) {
            out.append(s.substr(pos));
            return out;
        }
        out.append(s.substr(pos, hit - pos));
        out.append(to);
        pos = hit + from.size();
    }
}

inline std::string rtrim(std::string s) {
    while (!s.empty() && is_ascii_space(s.back())) s.pop_back();
    return s;
}

}  // namespace mmsi
