#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>

#include "mmsi/experiment.hpp"
#include "mmsi/stats.hpp"
#include "mmsi/train.hpp"

using namespace mmsi;

namespace {

EncoderConfig tiny_config() {
    EncoderConfig c;
    c.layers = 1;
    c.heads = 2;
    c.d = 8;
    c.max_len = 128;
    c.dropout = 0.0;
    return c;
}

SampleSet tiny_classification_set(int n_cases, std::uint64_t seed, const CharTokenizer& tok) {
    SyntheticSpec spec;
    spec.n_cases = n_cases;
    spec.seed = seed;
    spec.role_mix_fraction = 1.0;
    const CaseCorpus corpus = generate_synthetic_corpus(spec);
    const auto samples = derive_samples(corpus, Task::guilt_inference);
    return build_pairs_dataset(samples, Construction::pairs, seed, MaskStrategy::mask, tok, 128);
}

}  // namespace

TEST_CASE("student-t quantiles against table values") {
    CHECK(student_t_quantile(0.975, 1) == Catch::Approx(12.70620474).margin(1e-6));
    CHECK(student_t_quantile(0.975, 4) == Catch::Approx(2.77644511).margin(1e-7));
    CHECK(student_t_quantile(0.975, 9) == Catch::Approx(2.26215716).margin(1e-7));
    CHECK(student_t_quantile(0.975, 49) == Catch::Approx(2.00957524).margin(1e-7));
    CHECK(student_t_quantile(0.025, 9) == Catch::Approx(-2.26215716).margin(1e-7));
}

TEST_CASE("confidence interval examples") {
    const auto [mean, hw] = confidence_interval({0.0, 1.0}, 0.95);
    CHECK(mean == 0.5);
    CHECK(hw == Catch::Approx(6.3531).margin(1e-3));

    const auto [cmean, chw] = confidence_interval({2.0, 2.0, 2.0, 2.0}, 0.95);
    CHECK(cmean == 2.0);
    CHECK(chw == 0.0);

    // Negation flips the mean, keeps the halfwidth.
    const auto [nmean, nhw] = confidence_interval({-0.0, -1.0}, 0.95);
    CHECK(nmean == -0.5);
    CHECK(nhw == Catch::Approx(hw).margin(1e-12));

    CHECK_THROWS(confidence_interval({1.0}, 0.95));
}

TEST_CASE("protocol bookkeeping: counts, seeds, order independence") {
    // A stub runner isolates the bookkeeping from model training.
    std::vector<std::pair<int, int>> calls;
    auto run = [&](int r, int j, std::uint64_t split_seed,
                   std::uint64_t train_seed) -> std::map<std::string, double> {
        calls.emplace_back(r, j);
        return {{"Acc", 0.5 + 0.001 * static_cast<double>(r) + 0.0001 * static_cast<double>(j)},
                {"hash", static_cast<double>((split_seed ^ train_seed) % 1000)}};
    };
    const AggregateReport report = run_protocol(10, 5, 42, run);
    CHECK(calls.size() == 50);
    CHECK(report.metrics.at("Acc").n_runs == 50);
    CHECK(report.metrics.at("Acc").ci_defined);
    CHECK(report.seeds.size() == 50);

    // Same seeds regardless of execution interleaving.
    const AggregateReport parallel = run_protocol(10, 5, 42, run, 2);
    CHECK(parallel.seeds == report.seeds);
    CHECK(parallel.metrics.at("Acc").mean == report.metrics.at("Acc").mean);

    // Repetitions reuse the resample split seed.
    for (int r = 0; r < 10; ++r)
        for (int j = 1; j < 5; ++j)
            CHECK(report.seeds[static_cast<std::size_t>(r * 5 + j)].first ==
                  report.seeds[static_cast<std::size_t>(r * 5)].first);

    const AggregateReport single = run_protocol(1, 1, 7, run);
    CHECK_FALSE(single.metrics.at("Acc").ci_defined);
    CHECK(single.metrics.at("Acc").n_runs == 1);
}

TEST_CASE("constant-label training degenerates to the class prior") {
    SyntheticSpec spec;
    spec.n_cases = 12;
    spec.seed = 5;
    spec.role_mix_fraction = 0.0;
    const CaseCorpus corpus = generate_synthetic_corpus(spec);
    const auto tok = CharTokenizer::from_corpus(corpus);
    auto samples = derive_samples(corpus, Task::guilt_inference);
    for (auto& s : samples) s.role = Role::principal;  // constant labels

    SampleSet set;
    set.strategy = MaskStrategy::mask;
    for (const auto& s : samples)
        set.samples.push_back(mask_sample(s, MaskStrategy::mask, tok, 128));
    set.recount();

    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.learning_rate = 1e-3;
    cfg.batch_size = 8;
    cfg.dropout = 0.0;
    cfg.seed = 3;
    auto [model, history] = train_classifier(set, set, cfg, tiny_config(), tok.vocab_size());
    CHECK(history.epochs.back().val_metrics.at("accuracy") == 1.0);  // prior of the single class
}

TEST_CASE("training is deterministic for a fixed seed") {
    const auto tok_corpus = [] {
        SyntheticSpec spec;
        spec.n_cases = 16;
        spec.seed = 9;
        spec.role_mix_fraction = 1.0;
        return generate_synthetic_corpus(spec);
    }();
    const auto tok = CharTokenizer::from_corpus(tok_corpus);
    const SampleSet train_set = tiny_classification_set(16, 9, tok);
    const SampleSet val_set = tiny_classification_set(8, 10, tok);

    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.learning_rate = 1e-3;
    cfg.batch_size = 4;
    cfg.dropout = 0.1;
    cfg.seed = 77;
    auto [m1, h1] = train_classifier(train_set, val_set, cfg, tiny_config(), tok.vocab_size());
    auto [m2, h2] = train_classifier(train_set, val_set, cfg, tiny_config(), tok.vocab_size());
    REQUIRE(h1.epochs.size() == h2.epochs.size());
    for (std::size_t i = 0; i < h1.epochs.size(); ++i)
        CHECK(h1.epochs[i].train_loss == h2.epochs[i].train_loss);  // bitwise

    // The returned model reproduces the best epoch's validation metric.
    double best = -1.0;
    for (const auto& e : h1.epochs) best = std::max(best, e.val_metrics.at("accuracy"));
    const ClassificationMetrics final_metrics = evaluate_classifier(*m1, val_set);
    CHECK(final_metrics.acc == Catch::Approx(best).margin(1e-12));
    CHECK(h1.best_epoch >= 0);
}

TEST_CASE("regressor converges toward a constant target") {
    SyntheticSpec spec;
    spec.n_cases = 10;
    spec.seed = 19;
    CaseCorpus corpus = generate_synthetic_corpus(spec);
    prune_corpus(corpus, default_role_keywords());
    const auto tok = CharTokenizer::from_corpus(corpus);
    auto samples = derive_samples(corpus, Task::prison);
    for (auto& s : samples) s.months = 24;

    SampleSet set;
    for (const auto& s : samples)
        set.samples.push_back(mask_sample(s, MaskStrategy::mask, tok, 160));
    set.recount();

    TrainConfig cfg;
    cfg.epochs = 80;
    cfg.learning_rate = 0.2;
    cfg.batch_size = 8;
    cfg.dropout = 0.0;
    cfg.seed = 4;
    auto [model, history] = train_regressor(set, set, cfg, tiny_config(), tok.vocab_size(),
                                            FusionMode::none, corpus.prison_max);
    double mse = 0.0;
    for (const auto& s : set.samples) {
        const double pred = model->predict_raw(s.tokens, 0.0);
        mse += (pred - 24.0) * (pred - 24.0);
    }
    mse /= static_cast<double>(set.samples.size());
    CHECK(mse < 0.05 * 24.0 * 24.0);  // within 5% of the squared scale
}

TEST_CASE("predicted label source requires a classifier") {
    const auto tok = CharTokenizer::from_texts({"ab cd"});
    SampleSet dummy;
    MaskedSample s;
    s.tokens = tok.tokenize("ab", 64);
    s.months = 10;
    dummy.samples.push_back(s);
    dummy.recount();
    TrainConfig cfg;
    cfg.label_source = LabelSource::predicted;
    cfg.epochs = 1;
    cfg.learning_rate = 1e-3;
    CHECK_THROWS_WITH(train_regressor(dummy, dummy, cfg, tiny_config(), tok.vocab_size(),
                                      FusionMode::broadcast, 180),
                      Catch::Matchers::ContainsSubstring("classifier"));
}

TEST_CASE("protocol isolation: no test case leaks into training") {
    SyntheticSpec spec;
    spec.n_cases = 30;
    spec.seed = 55;
    spec.role_mix_fraction = 0.7;
    const CaseCorpus corpus = generate_synthetic_corpus(spec);
    const CorpusSplits splits = split_corpus(corpus, {0.8, 0.1, 0.1}, 99);
    CHECK_NOTHROW(audit_split_isolation(splits));

    std::set<std::string> train_ids;
    for (const auto& c : splits.train.cases) train_ids.insert(c.id);
    for (const auto& c : splits.test.cases) CHECK(train_ids.count(c.id) == 0);
}
