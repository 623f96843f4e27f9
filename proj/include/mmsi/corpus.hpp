#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmsi/rng.hpp"
#include "mmsi/text.hpp"

namespace mmsi {

using json = nlohmann::json;

enum class Role { accomplice = 0, principal = 1 };

inline std::string role_name(Role r) {
    return r == Role::principal ? "principal" : "accomplice";
}

inline Role role_from_name(const std::string& s) {
    if (s == "principal") return Role::principal;
    if (s == "accomplice") return Role::accomplice;
    throw std::runtime_error("unknown guilt role: \"" + s + "\"");
}

struct DefendantRecord {
    std::string name;
    int prison_months = 0;
    std::optional<int> probation_months;
    Role guilt = Role::accomplice;
};

struct JudicialCase {
    std::string id;
    std::vector<DefendantRecord> defendants;
    std::string fd;
    std::string cv;
    std::optional<std::string> cv_d;
};

enum class Provenance { loaded, synthetic };

struct CaseCorpus {
    std::vector<JudicialCase> cases;
    int prison_max = 180;
    Provenance provenance = Provenance::loaded;
    std::vector<std::string> warnings;
};

// ---------------------------------------------------------------------------
// Validation

inline void validate_corpus(const CaseCorpus& corpus) {
    std::set<std::string> seen_ids;
    for (const auto& c : corpus.cases) {
        if (c.id.empty()) throw std::runtime_error("case with empty id");
        if (!seen_ids.insert(c.id).second)
            throw std::runtime_error("duplicate case id \"" + c.id + "\"");
        if (c.defendants.empty())
            throw std::runtime_error("case \"" + c.id + "\" has no defendants");
        for (const auto& d : c.defendants) {
            if (d.name.empty())
                throw std::runtime_error("case \"" + c.id + "\": defendant with empty name");
            if (d.prison_months < 0)
                throw std::runtime_error("case \"" + c.id + "\": negative prison months for \"" + d.name + "\"");
            if (d.prison_months > corpus.prison_max)
                throw std::runtime_error("case \"" + c.id + "\": prison months " +
                                         std::to_string(d.prison_months) + " exceed prison_max " +
                                         std::to_string(corpus.prison_max));
            if (!contains(c.fd, d.name) && !contains(c.cv, d.name))
                throw std::runtime_error("case \"" + c.id + "\": defendant \"" + d.name +
                                         "\" appears in neither FD nor CV");
        }
    }
}

// Within-case substring collisions between names make substring masking
// ambiguous; real corpora may contain them, so they are warnings, not errors.
inline std::vector<std::string> name_collision_warnings(const CaseCorpus& corpus) {
    std::vector<std::string> warnings;
    for (const auto& c : corpus.cases) {
        for (std::size_t i = 0; i < c.defendants.size(); ++i) {
            for (std::size_t j = 0; j < c.defendants.size(); ++j) {
                if (i == j) continue;
                const auto& a = c.defendants[i].name;
                const auto& b = c.defendants[j].name;
                if (a != b && contains(b, a))
                    warnings.push_back("case \"" + c.id + "\": name \"" + a +
                                       "\" is a substring of \"" + b + "\"");
                if (a == b && i < j)
                    warnings.push_back("case \"" + c.id + "\": duplicate defendant name \"" + a + "\"");
            }
        }
    }
    return warnings;
}

// ---------------------------------------------------------------------------
// On-disk format: JSON lines, one defendant record per line with the flat
// keys @id/@name/@FD/@CV/@prison/@probation/@guilt; lines of one case are
// grouped. An optional first line {"prison_max":..,"provenance":".."} carries
// corpus-level fields.

inline std::string get_string_field(const json& rec, const char* key, std::size_t line_no) {
    if (!rec.contains(key))
        throw std::runtime_error("line " + std::to_string(line_no) + ": missing required key \"" +
                                 key + "\"");
    if (!rec[key].is_string())
        throw std::runtime_error("line " + std::to_string(line_no) + ": key \"" + key +
                                 "\" must be a string");
    return rec[key].get<std::string>();
}

inline int get_int_field(const json& rec, const char* key, std::size_t line_no) {
    if (!rec.contains(key))
        throw std::runtime_error("line " + std::to_string(line_no) + ": missing required key \"" +
                                 key + "\"");
    if (!rec[key].is_number_integer())
        throw std::runtime_error("line " + std::to_string(line_no) + ": key \"" + key +
                                 "\" must be an integer");
    return rec[key].get<int>();
}

inline CaseCorpus load_corpus(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open corpus file: " + path);

    CaseCorpus corpus;
    corpus.provenance = Provenance::loaded;

    std::set<std::string> closed_ids;
    std::string current_id;
    JudicialCase current;

    auto flush_case = [&] {
        if (current_id.empty()) return;
        if (!closed_ids.insert(current_id).second)
            throw std::runtime_error("duplicate case id \"" + current_id + "\"");
        corpus.cases.push_back(std::move(current));
        current = JudicialCase{};
        current_id.clear();
    };

    std::string line;
    std::size_t line_no = 0;
    bool saw_record = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::parse_error& e) {
            throw std::runtime_error("line " + std::to_string(line_no) +
                                     ": malformed record: " + e.what());
        }
        if (!rec.is_object())
            throw std::runtime_error("line " + std::to_string(line_no) + ": record must be an object");

        if (!saw_record && !rec.contains("@id")) {
            // Corpus header.
            if (rec.contains("prison_max")) corpus.prison_max = rec["prison_max"].get<int>();
            if (rec.contains("provenance"))
                corpus.provenance = rec["provenance"].get<std::string>() == "synthetic"
                                        ? Provenance::synthetic
                                        : Provenance::loaded;
            continue;
        }
        saw_record = true;

        const std::string id = get_string_field(rec, "@id", line_no);
        const std::string name = get_string_field(rec, "@name", line_no);
        const std::string fd = get_string_field(rec, "@FD", line_no);
        const std::string cv = get_string_field(rec, "@CV", line_no);
        const int prison = get_int_field(rec, "@prison", line_no);
        const std::string guilt = get_string_field(rec, "@guilt", line_no);

        if (id != current_id) {
            flush_case();
            current_id = id;
            current.id = id;
            current.fd = fd;
            current.cv = cv;
        } else {
            if (fd != current.fd)
                throw std::runtime_error("line " + std::to_string(line_no) +
                                         ": key \"@FD\" differs within case \"" + id + "\"");
            if (cv != current.cv)
                throw std::runtime_error("line " + std::to_string(line_no) +
                                         ": key \"@CV\" differs within case \"" + id + "\"");
        }

        DefendantRecord d;
        d.name = name;
        d.prison_months = prison;
        d.guilt = role_from_name(guilt);
        if (rec.contains("@probation") && !rec["@probation"].is_null())
            d.probation_months = get_int_field(rec, "@probation", line_no);
        current.defendants.push_back(std::move(d));
    }
    flush_case();

    validate_corpus(corpus);
    corpus.warnings = name_collision_warnings(corpus);
    return corpus;
}

inline void save_corpus(const CaseCorpus& corpus, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write corpus file: " + path);
    json header;
    header["prison_max"] = corpus.prison_max;
    header["provenance"] = corpus.provenance == Provenance::synthetic ? "synthetic" : "loaded";
    out << header.dump() << "\n";
    for (const auto& c : corpus.cases) {
        for (const auto& d : c.defendants) {
            json rec;
            rec["@id"] = c.id;
            rec["@name"] = d.name;
            rec["@FD"] = c.fd;
            rec["@CV"] = c.cv;
            rec["@prison"] = d.prison_months;
            if (d.probation_months) rec["@probation"] = *d.probation_months;
            rec["@guilt"] = role_name(d.guilt);
            out << rec.dump() << "\n";
        }
    }
}

// ---------------------------------------------------------------------------
// Court-view pruning

inline std::vector<std::string> default_role_keywords() {
    return {"principal", "accomplice", "主犯", "从犯"};
}

// cv_d = cv with every sentence containing a role keyword removed.
inline JudicialCase prune_court_view(const JudicialCase& c,
                                     const std::vector<std::string>& role_keywords) {
    if (c.cv.empty()) throw std::runtime_error("case \"" + c.id + "\": cannot prune empty CV");
    if (role_keywords.empty()) throw std::runtime_error("role keyword set is empty");
    std::string kept;
    for (const auto& sentence : split_sentences(c.cv)) {
        bool has_keyword = false;
        for (const auto& kw : role_keywords) {
            if (contains(sentence, kw)) {
                has_keyword = true;
                break;
            }
        }
        if (!has_keyword) kept += sentence;
    }
    JudicialCase out = c;
    out.cv_d = rtrim(std::move(kept));
    return out;
}

struct PruneReport {
    std::size_t cases_pruned = 0;
    std::vector<std::string> empty_cvd_case_ids;
};

inline PruneReport prune_corpus(CaseCorpus& corpus, const std::vector<std::string>& role_keywords) {
    PruneReport report;
    for (auto& c : corpus.cases) {
        c = prune_court_view(c, role_keywords);
        ++report.cases_pruned;
        if (c.cv_d->empty()) report.empty_cvd_case_ids.push_back(c.id);
    }
    return report;
}

// ---------------------------------------------------------------------------
// Splitting

struct CorpusSplits {
    CaseCorpus train;
    CaseCorpus val;
    CaseCorpus test;
};

inline CorpusSplits split_corpus(const CaseCorpus& corpus,
                                 std::array<double, 3> ratios,
                                 std::uint64_t seed) {
    for (double r : ratios)
        if (r <= 0.0) throw std::runtime_error("split ratios must be positive");
    const double sum = ratios[0] + ratios[1] + ratios[2];
    if (std::abs(sum - 1.0) > 1e-9)
        throw std::runtime_error("split ratios must sum to 1");
    const std::size_t n = corpus.cases.size();
    if (n < 3) throw std::runtime_error("need at least 3 cases to split");

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(hash_combine(seed, "split_corpus"));
    rng.shuffle(order);

    std::size_t n_train = static_cast<std::size_t>(std::llround(ratios[0] * static_cast<double>(n)));
    std::size_t n_val = static_cast<std::size_t>(std::llround(ratios[1] * static_cast<double>(n)));
    n_train = std::min(n_train, n - 2);
    if (n_train == 0) n_train = 1;
    if (n_val == 0) n_val = 1;
    if (n_train + n_val >= n) n_val = n - n_train - 1;

    auto make_part = [&](std::size_t begin, std::size_t end) {
        CaseCorpus part;
        part.prison_max = corpus.prison_max;
        part.provenance = corpus.provenance;
        std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(begin),
                                     order.begin() + static_cast<std::ptrdiff_t>(end));
        std::sort(idx.begin(), idx.end());
        for (std::size_t i : idx) part.cases.push_back(corpus.cases[i]);
        return part;
    };

    CorpusSplits splits;
    splits.train = make_part(0, n_train);
    splits.val = make_part(n_train, n_train + n_val);
    splits.test = make_part(n_train + n_val, n);
    return splits;
}

// ---------------------------------------------------------------------------
// Synthetic corpus generation

struct SentencingRule {
    std::array<int, 4> base_months{12, 36, 84, 150};  // by severity tier 1..4
    double accomplice_factor = 0.4;
    double surrender_discount = 0.2;
    double confession_discount = 0.1;
    int min_months = 6;

    int months(int tier, Role role, bool surrendered, bool confessed, int prison_max) const {
        double m = static_cast<double>(base_months[static_cast<std::size_t>(tier - 1)]);
        if (role == Role::accomplice) m *= accomplice_factor;
        m *= 1.0 - (surrendered ? surrender_discount : 0.0) - (confessed ? confession_discount : 0.0);
        const int rounded = static_cast<int>(std::llround(m));
        return std::clamp(rounded, min_months, prison_max);
    }
};

struct SyntheticVocabulary {
    std::vector<std::string> names;
    std::vector<std::string> victims;
    std::vector<std::string> principal_verbs;
    std::vector<std::string> accomplice_verbs;
    std::vector<std::string> instruments;
    std::vector<std::string> assist_tasks;
    std::vector<std::string> places;

    void require_nonempty() const {
        if (names.size() < 21 || victims.empty() || principal_verbs.empty() ||
            accomplice_verbs.empty() || instruments.empty() || assist_tasks.empty() ||
            places.empty())
            throw std::runtime_error("synthetic vocabulary is missing a required lexicon");
    }
};

inline SyntheticVocabulary default_synthetic_vocabulary() {
    SyntheticVocabulary v;
    v.names = {"Anda", "Boce", "Ciro", "Dena", "Elio", "Fuso", "Gita", "Hoan",
               "Ivor", "Jade", "Kemo", "Lupe", "Mira", "Nodi", "Ovid", "Pena",
               "Quil", "Rafa", "Sato", "Tevi", "Ulan", "Vera", "Wyse", "Xeno",
               "Yuri", "Zane", "Aldo", "Brio", "Cleo", "Dario"};
    v.victims = {"Omar", "Rhea", "Silo", "Tara", "Udo", "Vito"};
    v.principal_verbs = {"struck", "stabbed", "beat", "clubbed"};
    v.accomplice_verbs = {"pushed", "grabbed", "shoved", "tripped"};
    v.instruments = {"pipe", "knife", "bat", "brick"};
    v.assist_tasks = {"block the path", "hold the door", "keep watch", "fetch the car"};
    v.places = {"market", "alley", "yard", "dock"};
    return v;
}

struct SyntheticSpec {
    int n_cases = 100;
    // weights[i] is the weight of (i + 1) defendants per case; up to 20.
    std::vector<double> defendants_per_case_weights{0.388, 0.30, 0.18, 0.09, 0.042};
    double role_mix_fraction = 0.295;
    std::uint64_t seed = 0;
    SyntheticVocabulary vocabulary = default_synthetic_vocabulary();
    SentencingRule sentencing_rule;
    int prison_max = 180;
    // Solo sentences are the only role cue Split can exploit; they are kept
    // deliberately noisy so the role signal concentrates in co-mention
    // sentences that only masking can disambiguate.
    double solo_sentence_prob = 0.8;
    double solo_verb_swap_prob = 0.3;
    std::array<double, 4> severity_weights{0.3, 0.35, 0.25, 0.1};
    double surrender_prob = 0.25;
    double confession_prob = 0.4;
};

inline void validate_synthetic_spec(const SyntheticSpec& spec) {
    if (spec.n_cases <= 0) throw std::runtime_error("n_cases must be positive");
    if (spec.defendants_per_case_weights.empty() || spec.defendants_per_case_weights.size() > 20)
        throw std::runtime_error("defendants_per_case_weights must cover 1..20");
    if (spec.role_mix_fraction < 0.0 || spec.role_mix_fraction > 1.0)
        throw std::runtime_error("role_mix_fraction must be a probability");
    spec.vocabulary.require_nonempty();
    // The rule must never sentence an accomplice above a same-situation principal.
    for (int tier = 1; tier <= 4; ++tier)
        for (int s = 0; s < 2; ++s)
            for (int c = 0; c < 2; ++c) {
                const int p = spec.sentencing_rule.months(tier, Role::principal, s, c, spec.prison_max);
                const int a = spec.sentencing_rule.months(tier, Role::accomplice, s, c, spec.prison_max);
                if (a > p)
                    throw std::runtime_error("sentencing rule violates principal >= accomplice");
            }
}

namespace detail {

inline std::string join_names(const std::vector<std::string>& names) {
    std::string out;
    for (std::size_t i = 0; i < names.size(); ++i) {
        if (i > 0) out += (i + 1 == names.size()) ? " and " : ", ";
        out += names[i];
    }
    return out;
}

}  // namespace detail

inline CaseCorpus generate_synthetic_corpus(const SyntheticSpec& spec) {
    validate_synthetic_spec(spec);
    const auto& voc = spec.vocabulary;
    Rng rng(hash_combine(spec.seed, "synthetic_corpus"));

    CaseCorpus corpus;
    corpus.prison_max = spec.prison_max;
    corpus.provenance = Provenance::synthetic;

    for (int case_idx = 0; case_idx < spec.n_cases; ++case_idx) {
        const bool mixed = rng.bernoulli(spec.role_mix_fraction);
        std::size_t n_def = 0;
        do {
            n_def = rng.weighted_index(spec.defendants_per_case_weights) + 1;
        } while (mixed && n_def < 2);

        auto name_idx = rng.sample_indices(voc.names.size(), n_def);
        std::vector<std::string> names;
        for (auto i : name_idx) names.push_back(voc.names[i]);
        const std::string victim = voc.victims[rng.uniform_u64(voc.victims.size())];

        std::vector<Role> roles(n_def);
        if (mixed) {
            for (auto& r : roles)
                r = rng.bernoulli(0.5) ? Role::principal : Role::accomplice;
            bool has_p = false, has_a = false;
            for (auto r : roles) (r == Role::principal ? has_p : has_a) = true;
            if (!has_p) roles[rng.uniform_u64(n_def)] = Role::principal;
            else if (!has_a) roles[rng.uniform_u64(n_def)] = Role::accomplice;
        } else {
            const Role uniform_role = rng.bernoulli(0.5) ? Role::principal : Role::accomplice;
            for (auto& r : roles) r = uniform_role;
        }

        const int tier = static_cast<int>(rng.weighted_index(
                             {spec.severity_weights.begin(), spec.severity_weights.end()})) +
                         1;
        const std::string instrument = voc.instruments[rng.uniform_u64(voc.instruments.size())];
        const std::string place = voc.places[rng.uniform_u64(voc.places.size())];

        std::vector<std::size_t> principals, accomplices;
        for (std::size_t i = 0; i < n_def; ++i)
            (roles[i] == Role::principal ? principals : accomplices).push_back(i);

        // --- fact description ---
        std::vector<std::string> fd;
        fd.push_back(detail::join_names(names) + " confronted " + victim + " at the " + place + ".");

        // Co-mention sentences carry the reliable role signal: the principal
        // appears in the initiating slot, the accomplice in the assisting slot.
        // Both names are present, so only the mask anchor can tell a model
        // which side the target is on.
        for (std::size_t ai : accomplices) {
            if (principals.empty()) break;
            const std::size_t pi = principals[rng.uniform_u64(principals.size())];
            const std::string& task = voc.assist_tasks[rng.uniform_u64(voc.assist_tasks.size())];
            if (rng.bernoulli(0.5))
                fd.push_back(names[pi] + " told " + names[ai] + " to " + task + ".");
            else
                fd.push_back(names[pi] + " handed " + names[ai] + " the " + instrument + ".");
        }
        if (!principals.empty() && !accomplices.empty()) {
            const std::size_t pi = principals[rng.uniform_u64(principals.size())];
            const std::size_t ai = accomplices[rng.uniform_u64(accomplices.size())];
            fd.push_back(names[pi] + " swung the " + instrument + " at " + victim + " while " +
                         names[ai] + " stood by.");
        } else if (!principals.empty()) {
            const std::size_t pi = principals[rng.uniform_u64(principals.size())];
            fd.push_back(names[pi] + " swung the " + instrument + " at " + victim + ".");
        } else {
            fd.push_back(detail::join_names(names) + " hemmed " + victim + " in.");
        }

        // Solo sentences: weak, sometimes contradictory role cues.
        for (std::size_t i = 0; i < n_def; ++i) {
            if (!rng.bernoulli(spec.solo_sentence_prob)) continue;
            const bool swap = rng.bernoulli(spec.solo_verb_swap_prob);
            const bool use_principal_verb = (roles[i] == Role::principal) != swap;
            const auto& verbs = use_principal_verb ? voc.principal_verbs : voc.accomplice_verbs;
            fd.push_back(names[i] + " " + verbs[rng.uniform_u64(verbs.size())] + " " + victim + ".");
        }

        fd.push_back("The clash left " + victim + " with grade-" + std::to_string(tier) +
                     " wounds.");

        // --- court view ---
        std::vector<bool> surrendered(n_def), confessed(n_def);
        std::vector<std::string> cv;
        for (std::size_t i = 0; i < n_def; ++i) {
            cv.push_back(roles[i] == Role::principal
                             ? names[i] + " was identified as the principal offender."
                             : names[i] + " acted as an accomplice.");
        }
        cv.push_back("The injuries of " + victim + " were assessed as grade-" +
                     std::to_string(tier) + ".");
        for (std::size_t i = 0; i < n_def; ++i) {
            cv.push_back("The court reviewed the conduct of " + names[i] + ".");
            surrendered[i] = rng.bernoulli(spec.surrender_prob);
            confessed[i] = rng.bernoulli(spec.confession_prob);
            if (surrendered[i]) cv.push_back(names[i] + " surrendered voluntarily.");
            if (confessed[i]) cv.push_back(names[i] + " confessed in court.");
        }

        JudicialCase jc;
        jc.id = "case-" + std::to_string(100000 + case_idx).substr(1);
        for (std::size_t i = 0; i < n_def; ++i) {
            DefendantRecord d;
            d.name = names[i];
            d.guilt = roles[i];
            d.prison_months = spec.sentencing_rule.months(tier, roles[i], surrendered[i],
                                                          confessed[i], spec.prison_max);
            jc.defendants.push_back(std::move(d));
        }
        std::string fd_text, cv_text;
        for (std::size_t i = 0; i < fd.size(); ++i) fd_text += (i ? " " : "") + fd[i];
        for (std::size_t i = 0; i < cv.size(); ++i) cv_text += (i ? " " : "") + cv[i];
        jc.fd = std::move(fd_text);
        jc.cv = std::move(cv_text);
        corpus.cases.push_back(std::move(jc));
    }

    validate_corpus(corpus);
    return corpus;
}

// ---------------------------------------------------------------------------
// Sample derivation

enum class Task { guilt_inference, guilt_identification, prison };

inline std::string task_name(Task t) {
    switch (t) {
        case Task::guilt_inference: return "guilt_inference";
        case Task::guilt_identification: return "guilt_identification";
        case Task::prison: return "prison";
    }
    return "?";
}

inline Task task_from_name(const std::string& s) {
    if (s == "guilt_inference") return Task::guilt_inference;
    if (s == "guilt_identification") return Task::guilt_identification;
    if (s == "prison") return Task::prison;
    throw std::runtime_error("unknown task: \"" + s + "\"");
}

// One raw (case, defendant, task) unit before masking/tokenization.
struct DefendantSample {
    std::string case_id;
    std::string name;
    Task task = Task::guilt_inference;
    std::string text;     // fd, cv, or cv_d depending on task
    std::string fd_text;  // prison task only: the stage-1 input
    Role role = Role::accomplice;
    int months = 0;
};

inline std::vector<DefendantSample> derive_samples(const CaseCorpus& corpus, Task task) {
    std::vector<DefendantSample> samples;
    for (const auto& c : corpus.cases) {
        if (task == Task::prison && !c.cv_d)
            throw std::runtime_error("case \"" + c.id +
                                     "\" has no pruned court view; run pruning before deriving "
                                     "prison samples");
        for (const auto& d : c.defendants) {
            DefendantSample s;
            s.case_id = c.id;
            s.name = d.name;
            s.task = task;
            s.role = d.guilt;
            s.months = d.prison_months;
            switch (task) {
                case Task::guilt_inference: s.text = c.fd; break;
                case Task::guilt_identification: s.text = c.cv; break;
                case Task::prison:
                    s.text = *c.cv_d;
                    s.fd_text = c.fd;
                    break;
            }
            samples.push_back(std::move(s));
        }
    }
    return samples;
}

}  // namespace mmsi
