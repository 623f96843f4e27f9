#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmsi/corpus.hpp"
#include "mmsi/rng.hpp"
#include "mmsi/text.hpp"
#include "mmsi/tokenizer.hpp"

namespace mmsi {

enum class MaskStrategy { original, split, mask };

inline std::string strategy_name(MaskStrategy s) {
    switch (s) {
        case MaskStrategy::original: return "original";
        case MaskStrategy::split: return "split";
        case MaskStrategy::mask: return "mask";
    }
    return "?";
}

inline MaskStrategy strategy_from_name(const std::string& s) {
    if (s == "original") return MaskStrategy::original;
    if (s == "split") return MaskStrategy::split;
    if (s == "mask") return MaskStrategy::mask;
    throw std::runtime_error("unknown masking strategy: \"" + s + "\"");
}

enum class Construction { pairs, random_balanced, full };

inline std::string construction_name(Construction c) {
    switch (c) {
        case Construction::pairs: return "pairs";
        case Construction::random_balanced: return "random";
        case Construction::full: return "full";
    }
    return "?";
}

inline Construction construction_from_name(const std::string& s) {
    if (s == "pairs") return Construction::pairs;
    if (s == "random") return Construction::random_balanced;
    if (s == "full") return Construction::full;
    throw std::runtime_error("unknown construction: \"" + s + "\"");
}

enum class TextSource { fd, cv, cv_d };

inline std::string text_source_name(TextSource s) {
    switch (s) {
        case TextSource::fd: return "fd";
        case TextSource::cv: return "cv";
        case TextSource::cv_d: return "cv_d";
    }
    return "?";
}

struct MaskedSample {
    std::string case_id;
    std::string target_name;
    MaskStrategy strategy = MaskStrategy::mask;
    TextSource source = TextSource::fd;
    TokenSequence tokens;                      // model input
    std::optional<TokenSequence> fd_tokens;    // prison pipeline: the stage-1 input
    Role role = Role::accomplice;
    double months = 0.0;
};

// Applies one masking strategy to raw text and tokenizes. Masking replaces
// every raw-text occurrence of the target name with the mask-token literal
// before tokenization, so a multi-character name collapses to one [MASK].
inline MaskedSample apply_masking(const std::string& text,
                                  const std::string& target_name,
                                  MaskStrategy strategy,
                                  const CharTokenizer& tokenizer,
                                  int max_len) {
    if (strategy != MaskStrategy::original && !contains(text, target_name))
        throw std::runtime_error("defendant \"" + target_name + "\" does not occur in the text");

    std::string prepared;
    switch (strategy) {
        case MaskStrategy::original:
            prepared = text;
            break;
        case MaskStrategy::split: {
            for (const auto& sentence : split_sentences(text))
                if (contains(sentence, target_name)) prepared += sentence;
            prepared = rtrim(std::move(prepared));
            break;
        }
        case MaskStrategy::mask:
            prepared = replace_all(text, target_name, CharTokenizer::mask_token());
            break;
    }

    MaskedSample sample;
    sample.target_name = target_name;
    sample.strategy = strategy;
    sample.tokens = tokenizer.tokenize(prepared, max_len);
    return sample;
}

// Masks a derived sample; for the prison task both the regression input
// (cv_d) and the stage-1 input (fd) are masked with the same target.
inline MaskedSample mask_sample(const DefendantSample& s,
                                MaskStrategy strategy,
                                const CharTokenizer& tokenizer,
                                int max_len) {
    MaskedSample out = apply_masking(s.text, s.name, strategy, tokenizer, max_len);
    out.case_id = s.case_id;
    out.role = s.role;
    out.months = static_cast<double>(s.months);
    switch (s.task) {
        case Task::guilt_inference: out.source = TextSource::fd; break;
        case Task::guilt_identification: out.source = TextSource::cv; break;
        case Task::prison: out.source = TextSource::cv_d; break;
    }
    if (s.task == Task::prison)
        out.fd_tokens =
            apply_masking(s.fd_text, s.name, strategy, tokenizer, max_len).tokens;
    return out;
}

struct SampleSet {
    std::vector<MaskedSample> samples;
    Construction construction = Construction::full;
    MaskStrategy strategy = MaskStrategy::mask;
    std::array<int, 2> class_counts{0, 0};  // indexed by Role

    void recount() {
        class_counts = {0, 0};
        for (const auto& s : samples) ++class_counts[static_cast<std::size_t>(s.role)];
    }
};

inline SampleSet balance_classes(const std::vector<DefendantSample>& samples,
                                 std::uint64_t seed,
                                 MaskStrategy strategy,
                                 const CharTokenizer& tokenizer,
                                 int max_len) {
    std::vector<std::size_t> by_role[2];
    for (std::size_t i = 0; i < samples.size(); ++i)
        by_role[static_cast<std::size_t>(samples[i].role)].push_back(i);
    if (by_role[0].empty() || by_role[1].empty())
        throw std::runtime_error("cannot balance classes: a role is absent");

    const std::size_t keep = std::min(by_role[0].size(), by_role[1].size());
    Rng rng(hash_combine(seed, "balance_classes"));
    std::vector<std::size_t> chosen;
    for (auto& idx : by_role) {
        if (idx.size() > keep) {
            rng.shuffle(idx);
            idx.resize(keep);
            std::sort(idx.begin(), idx.end());
        }
        chosen.insert(chosen.end(), idx.begin(), idx.end());
    }
    std::sort(chosen.begin(), chosen.end());

    SampleSet set;
    set.construction = Construction::full;
    set.strategy = strategy;
    for (std::size_t i : chosen)
        set.samples.push_back(mask_sample(samples[i], strategy, tokenizer, max_len));
    set.recount();
    return set;
}

// Builds one of the three training-set constructions.
//  pairs  — same-case (principal, accomplice) tuples from mixed-role cases,
//           emitted adjacently, principal first; unmatched majority-role
//           samples within a case are dropped.
//  random — equal per-role counts drawn uniformly, sized to match pairs.
//  full   — everything, majority role downsampled to the minority count.
inline SampleSet build_pairs_dataset(const std::vector<DefendantSample>& samples,
                                     Construction mode,
                                     std::uint64_t seed,
                                     MaskStrategy strategy,
                                     const CharTokenizer& tokenizer,
                                     int max_len) {
    if (mode == Construction::full)
        return balance_classes(samples, seed, strategy, tokenizer, max_len);

    // Group by case, preserving first-appearance order.
    std::vector<std::string> case_order;
    std::map<std::string, std::array<std::vector<std::size_t>, 2>> by_case;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        auto [it, inserted] = by_case.try_emplace(samples[i].case_id);
        if (inserted) case_order.push_back(samples[i].case_id);
        it->second[static_cast<std::size_t>(samples[i].role)].push_back(i);
    }

    Rng rng(hash_combine(seed, "pair_matching"));
    std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (principal, accomplice)
    for (const auto& cid : case_order) {
        auto& roles = by_case[cid];
        auto& acc = roles[static_cast<std::size_t>(Role::accomplice)];
        auto& pri = roles[static_cast<std::size_t>(Role::principal)];
        if (acc.empty() || pri.empty()) continue;
        auto& minority = pri.size() <= acc.size() ? pri : acc;
        auto& majority = pri.size() <= acc.size() ? acc : pri;
        std::vector<std::size_t> picks = majority;
        rng.shuffle(picks);
        picks.resize(minority.size());
        for (std::size_t k = 0; k < minority.size(); ++k) {
            const bool pri_is_minority = pri.size() <= acc.size();
            pairs.emplace_back(pri_is_minority ? minority[k] : picks[k],
                               pri_is_minority ? picks[k] : minority[k]);
        }
    }

    SampleSet set;
    set.strategy = strategy;
    if (mode == Construction::pairs) {
        if (pairs.empty())
            throw std::runtime_error("pairs construction needs at least one mixed-role case");
        set.construction = Construction::pairs;
        for (const auto& [pi, ai] : pairs) {
            set.samples.push_back(mask_sample(samples[pi], strategy, tokenizer, max_len));
            set.samples.push_back(mask_sample(samples[ai], strategy, tokenizer, max_len));
        }
        set.recount();
        return set;
    }

    // random: per-role uniform draws, count matched to the pairs construction.
    const std::size_t per_role = pairs.size();
    std::vector<std::size_t> by_role[2];
    for (std::size_t i = 0; i < samples.size(); ++i)
        by_role[static_cast<std::size_t>(samples[i].role)].push_back(i);
    if (by_role[0].size() < per_role || by_role[1].size() < per_role)
        throw std::runtime_error("not enough samples per role for the random construction");
    std::vector<std::size_t> chosen;
    for (auto& idx : by_role) {
        rng.shuffle(idx);
        idx.resize(per_role);
        std::sort(idx.begin(), idx.end());
        chosen.insert(chosen.end(), idx.begin(), idx.end());
    }
    std::sort(chosen.begin(), chosen.end());
    set.construction = Construction::random_balanced;
    for (std::size_t i : chosen)
        set.samples.push_back(mask_sample(samples[i], strategy, tokenizer, max_len));
    set.recount();
    return set;
}

// ---------------------------------------------------------------------------
// Serialization: a header line with strategy/construction, then one record
// per sample in the corpus key style.

inline void save_sample_set(const SampleSet& set, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write sample set file: " + path);
    json header;
    header["type"] = "sample_set";
    header["strategy"] = strategy_name(set.strategy);
    header["construction"] = construction_name(set.construction);
    out << header.dump() << "\n";
    for (const auto& s : set.samples) {
        json rec;
        rec["@id"] = s.case_id;
        rec["@name"] = s.target_name;
        rec["@guilt"] = role_name(s.role);
        rec["@prison"] = s.months;
        rec["source"] = text_source_name(s.source);
        rec["tokens"] = s.tokens.surface;
        if (s.fd_tokens) rec["fd_tokens"] = s.fd_tokens->surface;
        out << rec.dump() << "\n";
    }
}

inline SampleSet load_sample_set(const std::string& path, const CharTokenizer& tokenizer) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open sample set file: " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty sample set file: " + path);
    json header = json::parse(line);
    if (header.value("type", "") != "sample_set")
        throw std::runtime_error("not a sample set file: " + path);

    SampleSet set;
    set.strategy = strategy_from_name(header["strategy"].get<std::string>());
    set.construction = construction_from_name(header["construction"].get<std::string>());

    auto rebuild = [&tokenizer](const json& arr) {
        TokenSequence seq;
        for (const auto& t : arr) {
            const std::string s = t.get<std::string>();
            seq.ids.push_back(tokenizer.id_of(s));
            seq.special.push_back(s == CharTokenizer::cls_token() || s == CharTokenizer::sep_token() ||
                                  s == CharTokenizer::mask_token() || s == CharTokenizer::pad_token());
            seq.surface.push_back(s);
        }
        return seq;
    };

    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::parse_error& e) {
            throw std::runtime_error("line " + std::to_string(line_no) + ": malformed record: " +
                                     e.what());
        }
        MaskedSample s;
        s.case_id = rec["@id"].get<std::string>();
        s.target_name = rec["@name"].get<std::string>();
        s.role = role_from_name(rec["@guilt"].get<std::string>());
        s.months = rec["@prison"].get<double>();
        s.strategy = set.strategy;
        const std::string src = rec.value("source", "fd");
        s.source = src == "cv" ? TextSource::cv : (src == "cv_d" ? TextSource::cv_d : TextSource::fd);
        s.tokens = rebuild(rec["tokens"]);
        if (rec.contains("fd_tokens")) s.fd_tokens = rebuild(rec["fd_tokens"]);
        set.samples.push_back(std::move(s));
    }
    set.recount();
    return set;
}

}  // namespace mmsi
