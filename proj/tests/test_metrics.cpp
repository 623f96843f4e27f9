#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "mmsi/metrics.hpp"
#include "mmsi/rng.hpp"

using namespace mmsi;

// Independent oracle: a direct transcription of the metric formulas, kept
// separate from the library implementation on purpose.
namespace oracle {

double score1(double y, double yh) {
    const double h = std::fabs(std::log(yh + 1.0) - std::log(y + 1.0));
    if (h <= 0.2) return 1.0;
    if (h > 0.2 && h <= 0.4) return 0.8;
    if (h > 0.4 && h <= 0.6) return 0.6;
    if (h > 0.6 && h <= 0.8) return 0.4;
    if (h > 0.8 && h <= 1.0) return 0.2;
    return 0.0;
}

double score2(double y, double yh) { return std::fabs(y - yh) <= 0.25 * y ? 1.0 : 0.0; }

double score3(double y, double yh, double pmax) { return std::fabs(yh - y) / pmax; }

void classification(const std::vector<int>& preds, const std::vector<int>& labels, double& acc,
                    double& p, double& r, double& f1) {
    double n = static_cast<double>(preds.size());
    double correct = 0, tp = 0, pred_pos = 0, true_pos = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (preds[i] == labels[i]) correct += 1;
        if (preds[i] == 1 && labels[i] == 1) tp += 1;
        if (preds[i] == 1) pred_pos += 1;
        if (labels[i] == 1) true_pos += 1;
    }
    acc = correct / n;
    p = pred_pos > 0 ? tp / pred_pos : 0.0;
    r = true_pos > 0 ? tp / true_pos : 0.0;
    f1 = (p + r) > 0 ? 2 * p * r / (p + r) : 0.0;
}

}  // namespace oracle

TEST_CASE("score1 hand-evaluated examples") {
    CHECK(score1(12.0, 12.0) == 1.0);
    // h = ln(21/13) ~ 0.4796 -> bucket 0.6
    CHECK(score1(12.0, 20.0) == 0.6);
    CHECK(score1_bucket(0.2) == 1.0);  // inclusive upper edge
    CHECK(score1_bucket(0.4) == 0.8);
    CHECK(score1_bucket(1.0) == 0.2);
    CHECK(score1_bucket(1.0000001) == 0.0);
}

TEST_CASE("score1 values stay in the bucket set and are symmetric") {
    Rng rng(42);
    for (int i = 0; i < 2000; ++i) {
        const double y = rng.uniform(0.0, 180.0);
        const double yh = rng.uniform(0.0, 180.0);
        const double s = score1(y, yh);
        CHECK((s == 0.0 || s == 0.2 || s == 0.4 || s == 0.6 || s == 0.8 || s == 1.0));
        CHECK(s == score1(yh, y));
    }
}

TEST_CASE("score2 tolerance boundary and zero-target edge") {
    CHECK(score2(40.0, 50.0) == 1.0);   // |10| <= 10, inclusive
    CHECK(score2(40.0, 50.01) == 0.0);  // just past
    CHECK(score2(0.0, 0.0) == 1.0);
    CHECK(score2(0.0, 0.5) == 0.0);
    Rng rng(7);
    for (int i = 0; i < 500; ++i) {
        const double y = rng.uniform(0.0, 180.0);
        CHECK(score2(y, y) == 1.0);
    }
}

TEST_CASE("score3 arithmetic and homogeneity") {
    CHECK(score3(30.0, 30.0, 180.0) == 0.0);
    CHECK(score3(30.0, 48.0, 180.0) == Catch::Approx(0.1).epsilon(1e-15));
    Rng rng(9);
    for (int i = 0; i < 200; ++i) {
        const double y = rng.uniform(0.0, 100.0);
        const double yh = rng.uniform(0.0, 100.0);
        const double pm = rng.uniform(1.0, 300.0);
        CHECK(score3(2.0 * y, 2.0 * yh, 2.0 * pm) == Catch::Approx(score3(y, yh, pm)).margin(1e-15));
    }
    CHECK_THROWS(score3(1.0, 1.0, 0.0));
    CHECK_THROWS(score1(-1.0, 1.0));
    CHECK_THROWS(score2(-1.0, 1.0));
}

TEST_CASE("regression metrics match the independent oracle") {
    Rng rng(123);
    std::vector<double> preds, truths;
    for (int i = 0; i < 1000; ++i) {
        truths.push_back(rng.uniform(0.0, 180.0));
        preds.push_back(rng.uniform(0.0, 180.0));
    }
    const RegressionMetrics m = regression_metrics(preds, truths, 180.0);
    double s1 = 0, s2 = 0, s3 = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        s1 += oracle::score1(truths[i], preds[i]);
        s2 += oracle::score2(truths[i], preds[i]);
        s3 += oracle::score3(truths[i], preds[i], 180.0);
    }
    const double n = static_cast<double>(preds.size());
    CHECK(m.imp_score == Catch::Approx(s1 / n).margin(1e-12));
    CHECK(m.imp_acc == Catch::Approx(s2 / n).margin(1e-12));
    CHECK(m.imp_err == Catch::Approx(s3 / n).margin(1e-12));
    CHECK(m.per_sample.size() == preds.size());
}

TEST_CASE("regression metrics: single perfect prediction and concatenation") {
    const RegressionMetrics perfect = regression_metrics({24.0}, {24.0}, 180.0);
    CHECK(perfect.imp_score == 1.0);
    CHECK(perfect.imp_acc == 1.0);
    CHECK(perfect.imp_err == 0.0);

    const std::vector<double> pa = {10, 20, 30}, ta = {12, 28, 30};
    const std::vector<double> pb = {40, 90}, tb = {44, 60};
    std::vector<double> pc = pa, tc = ta;
    pc.insert(pc.end(), pb.begin(), pb.end());
    tc.insert(tc.end(), tb.begin(), tb.end());
    const auto ma = regression_metrics(pa, ta, 180.0);
    const auto mb = regression_metrics(pb, tb, 180.0);
    const auto mc = regression_metrics(pc, tc, 180.0);
    const double wa = 3.0 / 5.0, wb = 2.0 / 5.0;
    CHECK(mc.imp_score == Catch::Approx(wa * ma.imp_score + wb * mb.imp_score).margin(1e-12));
    CHECK(mc.imp_err == Catch::Approx(wa * ma.imp_err + wb * mb.imp_err).margin(1e-12));
}

TEST_CASE("imp_err scales inversely with prison_max; imp_score and imp_acc do not move") {
    Rng rng(5);
    std::vector<double> preds, truths;
    for (int i = 0; i < 100; ++i) {
        truths.push_back(rng.uniform(0.0, 180.0));
        preds.push_back(rng.uniform(0.0, 180.0));
    }
    const auto a = regression_metrics(preds, truths, 180.0);
    const auto b = regression_metrics(preds, truths, 360.0);
    CHECK(a.imp_score == b.imp_score);
    CHECK(a.imp_acc == b.imp_acc);
    CHECK(a.imp_err == Catch::Approx(2.0 * b.imp_err).margin(1e-12));
}

TEST_CASE("classification metrics hand count") {
    const auto m = classification_metrics({1, 1, 0, 0}, {1, 0, 1, 0});
    CHECK(m.acc == 0.5);
    CHECK(m.precision == 0.5);
    CHECK(m.recall == 0.5);
    CHECK(m.f1 == 0.5);

    const auto perfect = classification_metrics({1, 0, 1}, {1, 0, 1});
    CHECK(perfect.acc == 1.0);
    CHECK(perfect.f1 == 1.0);
}

TEST_CASE("classification metrics degenerate flags") {
    // All-negative predictions with positives present: recall 0, precision undefined.
    const auto m = classification_metrics({0, 0, 0}, {1, 0, 1});
    CHECK(m.recall == 0.0);
    CHECK(m.precision == 0.0);
    CHECK_FALSE(m.precision_defined);
    CHECK(m.recall_defined);
    CHECK_FALSE(m.f1_defined);
    CHECK(m.f1 == 0.0);

    CHECK_THROWS(classification_metrics({}, {}));
    CHECK_THROWS(classification_metrics({1}, {1, 0}));
    CHECK_THROWS(regression_metrics({1.0}, {}, 180.0));
}

TEST_CASE("classification metrics match the oracle on random inputs") {
    Rng rng(77);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<int> preds, labels;
        for (int i = 0; i < 64; ++i) {
            preds.push_back(rng.bernoulli(0.5) ? 1 : 0);
            labels.push_back(rng.bernoulli(0.5) ? 1 : 0);
        }
        const auto m = classification_metrics(preds, labels);
        double acc, p, r, f1;
        oracle::classification(preds, labels, acc, p, r, f1);
        CHECK(m.acc == Catch::Approx(acc).margin(1e-12));
        if (m.precision_defined) CHECK(m.precision == Catch::Approx(p).margin(1e-12));
        if (m.recall_defined) CHECK(m.recall == Catch::Approx(r).margin(1e-12));
        if (m.f1_defined) CHECK(m.f1 == Catch::Approx(f1).margin(1e-12));
    }
}
