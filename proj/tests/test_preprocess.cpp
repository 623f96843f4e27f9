#include <catch2/catch_amalgamated.hpp>

#include <map>
#include <set>

#include "mmsi/preprocess.hpp"
#include "mmsi/text.hpp"

using namespace mmsi;

namespace {

CharTokenizer tokenizer_for(const std::vector<std::string>& texts) {
    return CharTokenizer::from_texts(texts);
}

std::size_t mask_count(const TokenSequence& seq) {
    std::size_t n = 0;
    for (int id : seq.ids)
        if (id == CharTokenizer::kMask) ++n;
    return n;
}

bool surface_contains(const TokenSequence& seq, const std::string& needle) {
    std::string joined;
    for (const auto& s : seq.surface) joined += s;
    return contains(joined, needle);
}

}  // namespace

TEST_CASE("mask strategy anchors every target occurrence") {
    const std::string text = "Zhang invited Li; Zhang beat Wang.";
    const auto tok = tokenizer_for({text});

    const MaskedSample masked = apply_masking(text, "Zhang", MaskStrategy::mask, tok, 128);
    CHECK(mask_count(masked.tokens) == 2);
    CHECK_FALSE(surface_contains(masked.tokens, "Zhang"));
    CHECK(surface_contains(masked.tokens, "Li"));
    CHECK(surface_contains(masked.tokens, "Wang"));
}

TEST_CASE("split strategy keeps only sentences with the target") {
    const std::string text = "Zhang invited Li; Zhang beat Wang.";
    const auto tok = tokenizer_for({text});

    const MaskedSample split = apply_masking(text, "Li", MaskStrategy::split, tok, 128);
    CHECK(surface_contains(split.tokens, "Zhang invited Li;"));
    CHECK_FALSE(surface_contains(split.tokens, "Wang"));
}

TEST_CASE("original strategy tokenizes the text unchanged") {
    const std::string text = "Zhang invited Li; Zhang beat Wang.";
    const auto tok = tokenizer_for({text});
    const MaskedSample original = apply_masking(text, "Zhang", MaskStrategy::original, tok, 128);
    const TokenSequence direct = tok.tokenize(text, 128);
    CHECK(original.tokens.ids == direct.ids);
}

TEST_CASE("masking errors name the absent defendant") {
    const std::string text = "Zhang beat Wang.";
    const auto tok = tokenizer_for({text});
    CHECK_THROWS_WITH(apply_masking(text, "Chen", MaskStrategy::mask, tok, 64),
                      Catch::Matchers::ContainsSubstring("Chen"));
    CHECK_THROWS_WITH(apply_masking(text, "Chen", MaskStrategy::split, tok, 64),
                      Catch::Matchers::ContainsSubstring("Chen"));
    CHECK_NOTHROW(apply_masking(text, "Chen", MaskStrategy::original, tok, 64));
}

TEST_CASE("mask-count conservation against raw occurrences") {
    SyntheticSpec spec;
    spec.n_cases = 60;
    spec.seed = 31;
    spec.role_mix_fraction = 0.6;
    const CaseCorpus corpus = generate_synthetic_corpus(spec);
    const auto tok = CharTokenizer::from_corpus(corpus);
    const auto samples = derive_samples(corpus, Task::guilt_inference);
    for (const auto& s : samples) {
        const MaskedSample m = mask_sample(s, MaskStrategy::mask, tok, 4096);
        CHECK(mask_count(m.tokens) == count_occurrences(s.text, s.name));
        CHECK_FALSE(surface_contains(m.tokens, s.name));
        // Other defendants' names stay intact.
        for (const auto& c : corpus.cases) {
            if (c.id != s.case_id) continue;
            for (const auto& d : c.defendants)
                if (d.name != s.name && contains(s.text, d.name))
                    CHECK(surface_contains(m.tokens, d.name));
        }
    }
}

TEST_CASE("truncation caps the sequence while masking still holds") {
    SyntheticSpec spec;
    spec.n_cases = 10;
    spec.seed = 8;
    const CaseCorpus corpus = generate_synthetic_corpus(spec);
    const auto tok = CharTokenizer::from_corpus(corpus);
    const auto samples = derive_samples(corpus, Task::guilt_inference);
    for (const auto& s : samples) {
        const MaskedSample m = mask_sample(s, MaskStrategy::mask, tok, 32);
        CHECK(m.tokens.size() <= 32);
        CHECK(mask_count(m.tokens) <= count_occurrences(s.text, s.name));
    }
}

TEST_CASE("split retains the target in every kept sentence") {
    SyntheticSpec spec;
    spec.n_cases = 40;
    spec.seed = 17;
    spec.role_mix_fraction = 0.5;
    const CaseCorpus corpus = generate_synthetic_corpus(spec);
    const auto tok = CharTokenizer::from_corpus(corpus);
    for (const auto& s : derive_samples(corpus, Task::guilt_inference)) {
        const MaskedSample m = mask_sample(s, MaskStrategy::split, tok, 4096);
        std::string joined;
        for (const auto& t : m.tokens.surface)
            if (t != CharTokenizer::cls_token() && t != CharTokenizer::sep_token()) joined += t;
        for (const auto& sentence : split_sentences(joined))
            CHECK(contains(sentence, s.name));
    }
}

TEST_CASE("pairs construction pairs opposite roles within a case") {
    SyntheticSpec spec;
    spec.n_cases = 50;
    spec.seed = 23;
    spec.role_mix_fraction = 0.6;
    const CaseCorpus corpus = generate_synthetic_corpus(spec);
    const auto tok = CharTokenizer::from_corpus(corpus);
    const auto samples = derive_samples(corpus, Task::guilt_inference);

    const SampleSet pairs = build_pairs_dataset(samples, Construction::pairs, 5,
                                                MaskStrategy::mask, tok, 512);
    REQUIRE(pairs.samples.size() % 2 == 0);
    REQUIRE(!pairs.samples.empty());
    CHECK(pairs.class_counts[0] == pairs.class_counts[1]);
    std::set<std::string> mixed_cases;
    for (const auto& c : corpus.cases) {
        bool has_p = false, has_a = false;
        for (const auto& d : c.defendants)
            (d.guilt == Role::principal ? has_p : has_a) = true;
        if (has_p && has_a) mixed_cases.insert(c.id);
    }
    for (std::size_t i = 0; i < pairs.samples.size(); i += 2) {
        const auto& p = pairs.samples[i];
        const auto& a = pairs.samples[i + 1];
        CHECK(p.case_id == a.case_id);
        CHECK(p.role == Role::principal);
        CHECK(a.role == Role::accomplice);
        CHECK(mixed_cases.count(p.case_id) == 1);
    }

    const SampleSet random_set = build_pairs_dataset(samples, Construction::random_balanced, 5,
                                                     MaskStrategy::mask, tok, 512);
    CHECK(random_set.samples.size() == pairs.samples.size());
    CHECK(random_set.class_counts[0] == random_set.class_counts[1]);

    const SampleSet full = build_pairs_dataset(samples, Construction::full, 5,
                                               MaskStrategy::mask, tok, 512);
    CHECK(full.class_counts[0] == full.class_counts[1]);
    int minority = 0, p_total = 0, a_total = 0;
    for (const auto& s : samples) (s.role == Role::principal ? p_total : a_total) += 1;
    minority = std::min(p_total, a_total);
    CHECK(full.class_counts[0] == minority);
}

TEST_CASE("seeded pairing picks a valid matching among the enumerable ones") {
    // One case, two principals and one accomplice: exactly one pair comes out
    // and its principal is one of the two.
    CaseCorpus corpus;
    JudicialCase c;
    c.id = "c1";
    c.fd = "Anda and Boce and Ciro met Omar. Anda struck Omar. Boce struck Omar. Ciro watched.";
    c.cv = "Anda principal. Boce principal. Ciro accomplice.";
    c.defendants.push_back({"Anda", 30, std::nullopt, Role::principal});
    c.defendants.push_back({"Boce", 28, std::nullopt, Role::principal});
    c.defendants.push_back({"Ciro", 8, std::nullopt, Role::accomplice});
    corpus.cases.push_back(c);

    const auto tok = CharTokenizer::from_corpus(corpus);
    const auto samples = derive_samples(corpus, Task::guilt_inference);
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const SampleSet pairs = build_pairs_dataset(samples, Construction::pairs, seed,
                                                    MaskStrategy::mask, tok, 512);
        REQUIRE(pairs.samples.size() == 2);
        CHECK(pairs.samples[0].role == Role::principal);
        CHECK((pairs.samples[0].target_name == "Anda" || pairs.samples[0].target_name == "Boce"));
        CHECK(pairs.samples[1].target_name == "Ciro");
    }

    // Determinism: same seed, same members.
    const SampleSet p1 = build_pairs_dataset(samples, Construction::pairs, 3,
                                             MaskStrategy::mask, tok, 512);
    const SampleSet p2 = build_pairs_dataset(samples, Construction::pairs, 3,
                                             MaskStrategy::mask, tok, 512);
    CHECK(p1.samples[0].target_name == p2.samples[0].target_name);
}

TEST_CASE("pairs construction fails without a mixed-role case") {
    CaseCorpus corpus;
    JudicialCase c;
    c.id = "c1";
    c.fd = "Anda struck Omar.";
    c.cv = "Anda principal.";
    c.defendants.push_back({"Anda", 30, std::nullopt, Role::principal});
    corpus.cases.push_back(c);
    const auto tok = CharTokenizer::from_corpus(corpus);
    const auto samples = derive_samples(corpus, Task::guilt_inference);
    CHECK_THROWS_WITH(build_pairs_dataset(samples, Construction::pairs, 1, MaskStrategy::mask,
                                          tok, 512),
                      Catch::Matchers::ContainsSubstring("mixed"));
}

TEST_CASE("balance_classes downsamples to the minority count at paper scale") {
    // Mirrors the corpus-scale counts: 9,464 principals vs 11,242 accomplices
    // balance to 9,464 per class.
    std::vector<DefendantSample> samples;
    samples.reserve(9464 + 11242);
    for (int i = 0; i < 9464; ++i)
        samples.push_back({"p" + std::to_string(i), "X", Task::guilt_inference, "X hit Y.",
                           "", Role::principal, 24});
    for (int i = 0; i < 11242; ++i)
        samples.push_back({"a" + std::to_string(i), "X", Task::guilt_inference, "X hit Y.",
                           "", Role::accomplice, 8});
    const auto tok = CharTokenizer::from_texts({"X hit Y."});
    const SampleSet balanced = balance_classes(samples, 1, MaskStrategy::original, tok, 32);
    CHECK(balanced.class_counts[static_cast<int>(Role::principal)] == 9464);
    CHECK(balanced.class_counts[static_cast<int>(Role::accomplice)] == 9464);

    // Already balanced input keeps its membership.
    std::vector<DefendantSample> even(samples.begin(), samples.begin() + 4);
    even[2].role = Role::accomplice;
    even[3].role = Role::accomplice;
    const SampleSet kept = balance_classes(even, 1, MaskStrategy::original, tok, 32);
    CHECK(kept.samples.size() == 4);

    // Determinism of the retained ids.
    const SampleSet b1 = balance_classes(samples, 7, MaskStrategy::original, tok, 32);
    const SampleSet b2 = balance_classes(samples, 7, MaskStrategy::original, tok, 32);
    REQUIRE(b1.samples.size() == b2.samples.size());
    for (std::size_t i = 0; i < b1.samples.size(); ++i)
        CHECK(b1.samples[i].case_id == b2.samples[i].case_id);

    std::vector<DefendantSample> one_class(samples.begin(), samples.begin() + 3);
    CHECK_THROWS(balance_classes(one_class, 1, MaskStrategy::original, tok, 32));
}

TEST_CASE("sample sets serialize with their header and reload") {
    SyntheticSpec spec;
    spec.n_cases = 12;
    spec.seed = 77;
    spec.role_mix_fraction = 0.8;
    CaseCorpus corpus = generate_synthetic_corpus(spec);
    prune_corpus(corpus, default_role_keywords());
    const auto tok = CharTokenizer::from_corpus(corpus);
    const auto samples = derive_samples(corpus, Task::prison);
    const SampleSet set = build_pairs_dataset(samples, Construction::pairs, 9,
                                              MaskStrategy::mask, tok, 256);

    const auto path = std::filesystem::temp_directory_path() / "mmsi_sampleset.jsonl";
    save_sample_set(set, path.string());
    const SampleSet loaded = load_sample_set(path.string(), tok);
    std::filesystem::remove(path);

    REQUIRE(loaded.samples.size() == set.samples.size());
    CHECK(loaded.construction == set.construction);
    CHECK(loaded.strategy == set.strategy);
    for (std::size_t i = 0; i < set.samples.size(); ++i) {
        CHECK(loaded.samples[i].tokens.ids == set.samples[i].tokens.ids);
        CHECK(loaded.samples[i].months == set.samples[i].months);
        CHECK(loaded.samples[i].source == set.samples[i].source);
        REQUIRE(loaded.samples[i].fd_tokens.has_value());
        CHECK(loaded.samples[i].fd_tokens->ids == set.samples[i].fd_tokens->ids);
    }
}
