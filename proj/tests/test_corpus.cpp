#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "mmsi/corpus.hpp"

using namespace mmsi;
namespace fs = std::filesystem;

namespace {

struct TempFile {
    fs::path path;
    explicit TempFile(const std::string& name) {
        path = fs::temp_directory_path() / name;
    }
    ~TempFile() { std::error_code ec; fs::remove(path, ec); }
};

void write_lines(const fs::path& p, const std::vector<std::string>& lines) {
    std::ofstream out(p, std::ios::binary);
    for (const auto& l : lines) out << l << "\n";
}

// Independent sentence counter for the pruning oracle: counts terminal marks
// followed by whitespace or end of string, one pass over bytes.
std::size_t count_sentences(const std::string& text) {
    std::size_t n = 0;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if ((c == '.' || c == '!' || c == '?' || c == ';') &&
            (i + 1 == text.size() || text[i + 1] == ' ' || text[i + 1] == '\n'))
            ++n;
    }
    return n;
}

}  // namespace

TEST_CASE("corpus loads, validates and round-trips") {
    TempFile f("mmsi_corpus_roundtrip.jsonl");
    write_lines(f.path, {
        R"({"prison_max":180,"provenance":"loaded"})",
        R"({"@id":"c1","@name":"Zan","@FD":"Zan hit Omar.","@CV":"Zan was the principal.","@prison":24,"@guilt":"principal"})",
        R"({"@id":"c1","@name":"Kay","@FD":"Zan hit Omar.","@CV":"Zan was the principal.","@prison":8,"@probation":12,"@guilt":"accomplice"})",
        R"({"@id":"c2","@name":"Kay","@FD":"Kay pushed Omar.","@CV":"Kay acted alone.","@prison":10,"@guilt":"principal"})",
    });
    const CaseCorpus corpus = load_corpus(f.path.string());
    CHECK(corpus.cases.size() == 2);
    CHECK(corpus.provenance == Provenance::loaded);
    CHECK(corpus.cases[0].defendants.size() == 2);
    CHECK(corpus.cases[0].defendants[1].probation_months == 12);
    CHECK(corpus.cases[1].defendants[0].guilt == Role::principal);

    TempFile g("mmsi_corpus_roundtrip2.jsonl");
    save_corpus(corpus, g.path.string());
    const CaseCorpus again = load_corpus(g.path.string());
    REQUIRE(again.cases.size() == corpus.cases.size());
    for (std::size_t i = 0; i < corpus.cases.size(); ++i) {
        CHECK(again.cases[i].id == corpus.cases[i].id);
        CHECK(again.cases[i].fd == corpus.cases[i].fd);
        CHECK(again.cases[i].cv == corpus.cases[i].cv);
        CHECK(again.cases[i].defendants.size() == corpus.cases[i].defendants.size());
    }
}

TEST_CASE("loader errors name the offending key and line") {
    TempFile f("mmsi_corpus_badkey.jsonl");
    write_lines(f.path, {
        R"({"@id":"c1","@name":"Zan","@FD":"Zan hit Omar.","@CV":"ok Zan","@prison":24})",
    });
    CHECK_THROWS_WITH(load_corpus(f.path.string()),
                      Catch::Matchers::ContainsSubstring("@guilt"));

    TempFile g("mmsi_corpus_malformed.jsonl");
    write_lines(g.path, {
        R"({"@id":"c1","@name":"Zan","@FD":"Zan hit Omar.","@CV":"ok Zan","@prison":24,"@guilt":"principal"})",
        R"(not json)",
    });
    CHECK_THROWS_WITH(load_corpus(g.path.string()), Catch::Matchers::ContainsSubstring("line 2"));

    // A case id that reappears after another case is a duplicate.
    TempFile h("mmsi_corpus_dup.jsonl");
    write_lines(h.path, {
        R"({"@id":"c1","@name":"Zan","@FD":"Zan and Kay.","@CV":"x Zan Kay","@prison":24,"@guilt":"principal"})",
        R"({"@id":"c2","@name":"Kay","@FD":"Kay.","@CV":"y Kay","@prison":10,"@guilt":"accomplice"})",
        R"({"@id":"c1","@name":"Kay","@FD":"Zan and Kay.","@CV":"x Zan Kay","@prison":8,"@guilt":"accomplice"})",
    });
    CHECK_THROWS_WITH(load_corpus(h.path.string()),
                      Catch::Matchers::ContainsSubstring("duplicate case id"));
}

TEST_CASE("name substring collisions are warnings, not errors") {
    TempFile f("mmsi_corpus_collide.jsonl");
    write_lines(f.path, {
        R"({"@id":"c1","@name":"Li","@FD":"Li and Lin fought Omar.","@CV":"Li Lin","@prison":24,"@guilt":"principal"})",
        R"({"@id":"c1","@name":"Lin","@FD":"Li and Lin fought Omar.","@CV":"Li Lin","@prison":8,"@guilt":"accomplice"})",
    });
    const CaseCorpus corpus = load_corpus(f.path.string());
    REQUIRE_FALSE(corpus.warnings.empty());
    CHECK_THAT(corpus.warnings.front(), Catch::Matchers::ContainsSubstring("substring"));
}

TEST_CASE("prune_court_view removes exactly the keyword sentences") {
    JudicialCase c;
    c.id = "c1";
    c.fd = "A led.";
    c.cv = "A led. A is the principal. B helped.";
    c.defendants.push_back({"A", 24, std::nullopt, Role::principal});

    const JudicialCase pruned = prune_court_view(c, {"principal"});
    REQUIRE(pruned.cv_d.has_value());
    CHECK(*pruned.cv_d == "A led. B helped.");
    CHECK(pruned.cv == c.cv);  // original untouched

    // No keyword anywhere: cv_d equals cv.
    JudicialCase d = c;
    d.cv = "A led. B helped.";
    CHECK(*prune_court_view(d, {"principal"}).cv_d == d.cv);

    // All sentences removed is not an error; the corpus-level report flags it.
    JudicialCase e = c;
    e.cv = "A is the principal.";
    CHECK(*prune_court_view(e, {"principal"}).cv_d == "");

    JudicialCase empty_cv = c;
    empty_cv.cv = "";
    CHECK_THROWS(prune_court_view(empty_cv, {"principal"}));
    CHECK_THROWS(prune_court_view(c, {}));
}

TEST_CASE("pruning is idempotent and the corpus report flags emptied views") {
    SyntheticSpec spec;
    spec.n_cases = 40;
    spec.seed = 11;
    spec.role_mix_fraction = 0.4;
    CaseCorpus corpus = generate_synthetic_corpus(spec);
    const PruneReport report = prune_corpus(corpus, default_role_keywords());
    CHECK(report.cases_pruned == 40);
    for (const auto& c : corpus.cases) {
        REQUIRE(c.cv_d.has_value());
        JudicialCase again = c;
        again.cv = *c.cv_d;
        if (again.cv.empty()) continue;
        CHECK(*prune_court_view(again, default_role_keywords()).cv_d == *c.cv_d);
    }
}

TEST_CASE("single-defendant corpus loses exactly one sentence per court view") {
    SyntheticSpec spec;
    spec.n_cases = 100;
    spec.seed = 3;
    spec.role_mix_fraction = 0.0;
    spec.defendants_per_case_weights = {1.0};  // one defendant, one role sentence
    CaseCorpus corpus = generate_synthetic_corpus(spec);
    for (const auto& c : corpus.cases) {
        const std::size_t before = count_sentences(c.cv);
        const JudicialCase pruned = prune_court_view(c, default_role_keywords());
        CHECK(count_sentences(*pruned.cv_d) == before - 1);
    }
}

TEST_CASE("split_corpus hits exact sizes, is deterministic and partitions") {
    SyntheticSpec spec;
    spec.n_cases = 10;
    spec.seed = 21;
    const CaseCorpus corpus = generate_synthetic_corpus(spec);
    const CorpusSplits s1 = split_corpus(corpus, {0.8, 0.1, 0.1}, 7);
    CHECK(s1.train.cases.size() == 8);
    CHECK(s1.val.cases.size() == 1);
    CHECK(s1.test.cases.size() == 1);

    const CorpusSplits s2 = split_corpus(corpus, {0.8, 0.1, 0.1}, 7);
    for (std::size_t i = 0; i < s1.train.cases.size(); ++i)
        CHECK(s1.train.cases[i].id == s2.train.cases[i].id);

    std::set<std::string> seen;
    for (const auto* part : {&s1.train, &s1.val, &s1.test})
        for (const auto& c : part->cases) CHECK(seen.insert(c.id).second);
    CHECK(seen.size() == corpus.cases.size());

    CaseCorpus tiny;
    tiny.cases.resize(2);
    CHECK_THROWS(split_corpus(tiny, {0.8, 0.1, 0.1}, 1));
    CHECK_THROWS(split_corpus(corpus, {0.8, 0.1, 0.2}, 1));
}

TEST_CASE("synthetic generation is deterministic and respects the sentencing order") {
    SyntheticSpec spec;
    spec.n_cases = 30;
    spec.seed = 99;
    spec.role_mix_fraction = 1.0;
    const CaseCorpus a = generate_synthetic_corpus(spec);
    const CaseCorpus b = generate_synthetic_corpus(spec);

    TempFile fa("mmsi_gen_a.jsonl"), fb("mmsi_gen_b.jsonl");
    save_corpus(a, fa.path.string());
    save_corpus(b, fb.path.string());
    std::ifstream ia(fa.path, std::ios::binary), ib(fb.path, std::ios::binary);
    std::string ca((std::istreambuf_iterator<char>(ia)), std::istreambuf_iterator<char>());
    std::string cb((std::istreambuf_iterator<char>(ib)), std::istreambuf_iterator<char>());
    CHECK(ca == cb);  // byte-identical on the same seed

    for (const auto& c : a.cases) {
        int min_principal = 1 << 20, max_accomplice = -1;
        for (const auto& d : c.defendants) {
            if (d.guilt == Role::principal)
                min_principal = std::min(min_principal, d.prison_months);
            else
                max_accomplice = std::max(max_accomplice, d.prison_months);
        }
        if (max_accomplice >= 0 && min_principal < (1 << 20))
            CHECK(min_principal >= max_accomplice);
    }
}

TEST_CASE("mixed-role fraction tracks the requested probability") {
    SyntheticSpec spec;
    spec.n_cases = 500;
    spec.seed = 12345;
    spec.role_mix_fraction = 0.295;
    const CaseCorpus corpus = generate_synthetic_corpus(spec);
    int mixed = 0;
    for (const auto& c : corpus.cases) {
        bool has_p = false, has_a = false;
        for (const auto& d : c.defendants)
            (d.guilt == Role::principal ? has_p : has_a) = true;
        if (has_p && has_a) ++mixed;
    }
    const double fraction = static_cast<double>(mixed) / 500.0;
    CHECK(fraction > 0.295 - 0.05);
    CHECK(fraction < 0.295 + 0.05);
}

TEST_CASE("one mixed two-defendant case gets one principal and one accomplice") {
    SyntheticSpec spec;
    spec.n_cases = 1;
    spec.seed = 4;
    spec.role_mix_fraction = 1.0;
    spec.defendants_per_case_weights = {0.0, 1.0};  // exactly two defendants
    const CaseCorpus corpus = generate_synthetic_corpus(spec);
    REQUIRE(corpus.cases.size() == 1);
    const auto& c = corpus.cases[0];
    REQUIRE(c.defendants.size() == 2);
    int principal_months = -1, accomplice_months = -1;
    for (const auto& d : c.defendants)
        (d.guilt == Role::principal ? principal_months : accomplice_months) = d.prison_months;
    REQUIRE(principal_months >= 0);
    REQUIRE(accomplice_months >= 0);
    CHECK(principal_months >= accomplice_months);
}

TEST_CASE("derive_samples cardinality and text sources") {
    SyntheticSpec spec;
    spec.n_cases = 25;
    spec.seed = 6;
    CaseCorpus corpus = generate_synthetic_corpus(spec);
    std::size_t defendants = 0;
    for (const auto& c : corpus.cases) defendants += c.defendants.size();

    const auto gi = derive_samples(corpus, Task::guilt_inference);
    CHECK(gi.size() == defendants);
    bool all_fd = true;
    for (const auto& s : gi) {
        bool found = false;
        for (const auto& c : corpus.cases)
            if (c.id == s.case_id && s.text == c.fd) found = true;
        all_fd = all_fd && found;
    }
    CHECK(all_fd);

    const auto id_samples = derive_samples(corpus, Task::guilt_identification);
    CHECK(id_samples.size() == defendants);
    // Identification samples carry cv text, not fd.
    bool all_cv = true;
    for (const auto& s : id_samples) {
        bool found = false;
        for (const auto& c : corpus.cases)
            if (c.id == s.case_id && s.text == c.cv) found = true;
        all_cv = all_cv && found;
    }
    CHECK(all_cv);

    CHECK_THROWS_WITH(derive_samples(corpus, Task::prison),
                      Catch::Matchers::ContainsSubstring("prun"));
    prune_corpus(corpus, default_role_keywords());
    const auto prison = derive_samples(corpus, Task::prison);
    CHECK(prison.size() == defendants);
    for (const auto& s : prison) CHECK_FALSE(s.fd_text.empty());
}

TEST_CASE("generator rejects a broken sentencing rule and empty lexicons") {
    SyntheticSpec spec;
    spec.n_cases = 5;
    spec.sentencing_rule.accomplice_factor = 2.0;  // accomplices above principals
    CHECK_THROWS(generate_synthetic_corpus(spec));

    SyntheticSpec spec2;
    spec2.n_cases = 5;
    spec2.vocabulary.instruments.clear();
    CHECK_THROWS_WITH(generate_synthetic_corpus(spec2),
                      Catch::Matchers::ContainsSubstring("lexicon"));
}
