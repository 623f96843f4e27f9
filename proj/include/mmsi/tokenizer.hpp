#pragma once

#include <fstream>
#include <set>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "mmsi/corpus.hpp"
#include "mmsi/text.hpp"

namespace mmsi {

struct TokenSequence {
    std::vector<int> ids;
    std::vector<std::string> surface;
    std::vector<bool> special;  // class-summary / separator / mask / pad

    std::size_t size() const { return ids.size(); }
};

// Character-level tokenizer with BERT-style special tokens. Special-token
// literals in the raw text (notably "[MASK]" inserted by oriented masking)
// are consumed as single tokens, so a masked name can never split.
class CharTokenizer {
public:
    static constexpr int kPad = 0;
    static constexpr int kCls = 1;
    static constexpr int kSep = 2;
    static constexpr int kMask = 3;
    static constexpr int kUnk = 4;

    static const char* pad_token() { return "[PAD]"; }
    static const char* cls_token() { return "[CLS]"; }
    static const char* sep_token() { return "[SEP]"; }
    static const char* mask_token() { return "[MASK]"; }
    static const char* unk_token() { return "[UNK]"; }

    CharTokenizer() { init_specials(); }

    static CharTokenizer from_corpus(const CaseCorpus& corpus) {
        std::set<std::string> chars;
        for (const auto& c : corpus.cases) {
            for (const auto& ch : utf8_chars(c.fd)) chars.insert(ch);
            for (const auto& ch : utf8_chars(c.cv)) chars.insert(ch);
        }
        CharTokenizer tok;
        for (const auto& ch : chars) {
            if (ch == "\n" || ch == "\r" || ch == "\t") continue;  // keep vocab file line-safe
            tok.add_token(ch);
        }
        return tok;
    }

    static CharTokenizer from_texts(const std::vector<std::string>& texts) {
        std::set<std::string> chars;
        for (const auto& t : texts)
            for (const auto& ch : utf8_chars(t)) chars.insert(ch);
        CharTokenizer tok;
        for (const auto& ch : chars) {
            if (ch == "\n" || ch == "\r" || ch == "\t") continue;
            tok.add_token(ch);
        }
        return tok;
    }

    int vocab_size() const { return static_cast<int>(vocab_.size()); }

    int id_of(const std::string& token) const {
        auto it = index_.find(token);
        return it == index_.end() ? kUnk : it->second;
    }

    const std::string& token_of(int id) const { return vocab_.at(static_cast<std::size_t>(id)); }

    TokenSequence tokenize(const std::string& text, int max_len) const {
        if (max_len < 2) throw std::runtime_error("max_len must be at least 2");
        TokenSequence seq;
        seq.ids.push_back(kCls);
        seq.surface.push_back(cls_token());
        seq.special.push_back(true);

        std::size_t i = 0;
        const std::size_t cap = static_cast<std::size_t>(max_len) - 1;  // room for [SEP]
        while (i < text.size() && seq.ids.size() < cap) {
            bool matched_special = false;
            for (int sid : {kMask, kCls, kSep, kPad, kUnk}) {
                const std::string& lit = vocab_[static_cast<std::size_t>(sid)];
                if (text.compare(i, lit.size(), lit) == 0) {
                    seq.ids.push_back(sid);
                    seq.surface.push_back(lit);
                    seq.special.push_back(sid != kUnk);
                    i += lit.size();
                    matched_special = true;
                    break;
                }
            }
            if (matched_special) continue;
            const std::size_t n = utf8_len(text, i);
            std::string ch = text.substr(i, n);
            i += n;
            if (ch == "\n" || ch == "\r" || ch == "\t") ch = " ";
            seq.ids.push_back(id_of(ch));
            seq.surface.push_back(std::move(ch));
            seq.special.push_back(false);
        }
        seq.ids.push_back(kSep);
        seq.surface.push_back(sep_token());
        seq.special.push_back(true);
        return seq;
    }

    static void append_pad(TokenSequence& seq, std::size_t count) {
        for (std::size_t i = 0; i < count; ++i) {
            seq.ids.push_back(kPad);
            seq.surface.push_back(pad_token());
            seq.special.push_back(true);
        }
    }

    // One token per line, id = line number (0-based).
    void save(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write vocabulary file: " + path);
        for (const auto& t : vocab_) out << t << "\n";
    }

    static CharTokenizer load(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw std::runtime_error("cannot open vocabulary file: " + path);
        CharTokenizer tok;
        tok.vocab_.clear();
        tok.index_.clear();
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty() && in.eof()) break;
            tok.index_[line] = static_cast<int>(tok.vocab_.size());
            tok.vocab_.push_back(line);
        }
        if (tok.vocab_.size() < 5 || tok.vocab_[kPad] != pad_token() ||
            tok.vocab_[kCls] != cls_token() || tok.vocab_[kSep] != sep_token() ||
            tok.vocab_[kMask] != mask_token() || tok.vocab_[kUnk] != unk_token())
            throw std::runtime_error("vocabulary file " + path + " lacks the special-token prefix");
        return tok;
    }

private:
    void init_specials() {
        for (const char* t : {pad_token(), cls_token(), sep_token(), mask_token(), unk_token()})
            add_token(t);
    }

    void add_token(const std::string& t) {
        if (index_.count(t)) return;
        index_[t] = static_cast<int>(vocab_.size());
        vocab_.push_back(t);
    }

    std::vector<std::string> vocab_;
    std::unordered_map<std::string, int> index_;
};

}  // namespace mmsi
