#pragma once

#include <cmath>
#include <stdexcept>
#include <tuple>
#include <vector>

namespace mmsi {

// ---------------------------------------------------------------------------
// Imprisonment metrics. Natural logarithm throughout; bucket upper edges are
// inclusive.

inline double score1_bucket(double h) {
    if (h < 0.0) throw std::runtime_error("score1 bucket input must be nonnegative");
    if (h <= 0.2) return 1.0;
    if (h <= 0.4) return 0.8;
    if (h <= 0.6) return 0.6;
    if (h <= 0.8) return 0.4;
    if (h <= 1.0) return 0.2;
    return 0.0;
}

inline double log_ratio_distance(double y, double y_hat) {
    if (y < 0.0 || y_hat < 0.0) throw std::runtime_error("months must be nonnegative");
    return std::abs(std::log(y_hat + 1.0) - std::log(y + 1.0));
}

inline double score1(double y, double y_hat) {
    return score1_bucket(log_ratio_distance(y, y_hat));
}

inline double score2(double y, double y_hat) {
    if (y < 0.0 || y_hat < 0.0) throw std::runtime_error("months must be nonnegative");
    return std::abs(y - y_hat) <= 0.25 * y ? 1.0 : 0.0;
}

inline double score3(double y, double y_hat, double prison_max) {
    if (prison_max <= 0.0) throw std::runtime_error("prison_max must be positive");
    return std::abs(y_hat - y) / prison_max;
}

struct RegressionMetrics {
    double imp_score = 0.0;
    double imp_acc = 0.0;
    double imp_err = 0.0;
    std::vector<std::tuple<double, double, double>> per_sample;
};

inline RegressionMetrics regression_metrics(const std::vector<double>& preds,
                                            const std::vector<double>& truths,
                                            double prison_max) {
    if (preds.empty() || preds.size() != truths.size())
        throw std::runtime_error("regression metrics need equally sized, nonempty inputs");
    RegressionMetrics m;
    m.per_sample.reserve(preds.size());
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const double s1 = score1(truths[i], preds[i]);
        const double s2 = score2(truths[i], preds[i]);
        const double s3 = score3(truths[i], preds[i], prison_max);
        m.per_sample.emplace_back(s1, s2, s3);
        m.imp_score += s1;
        m.imp_acc += s2;
        m.imp_err += s3;
    }
    const double n = static_cast<double>(preds.size());
    m.imp_score /= n;
    m.imp_acc /= n;
    m.imp_err /= n;
    return m;
}

// ---------------------------------------------------------------------------
// Classification metrics; positive class = principal (1). Zero-denominator
// precision/recall are reported as 0 and flagged.

struct ClassificationMetrics {
    double acc = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    bool precision_defined = true;
    bool recall_defined = true;
    bool f1_defined = true;
};

inline ClassificationMetrics classification_metrics(const std::vector<int>& preds,
                                                    const std::vector<int>& labels) {
    if (preds.empty() || preds.size() != labels.size())
        throw std::runtime_error("classification metrics need equally sized, nonempty inputs");
    long tp = 0, fp = 0, fn = 0, correct = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (preds[i] == labels[i]) ++correct;
        if (preds[i] == 1 && labels[i] == 1) ++tp;
        if (preds[i] == 1 && labels[i] == 0) ++fp;
        if (preds[i] == 0 && labels[i] == 1) ++fn;
    }
    ClassificationMetrics m;
    m.acc = static_cast<double>(correct) / static_cast<double>(preds.size());
    if (tp + fp == 0) {
        m.precision_defined = false;
    } else {
        m.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    }
    if (tp + fn == 0) {
        m.recall_defined = false;
    } else {
        m.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
    }
    if (!m.precision_defined || !m.recall_defined || m.precision + m.recall == 0.0) {
        m.f1_defined = false;
        m.f1 = 0.0;
    } else {
        m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
    }
    return m;
}

}  // namespace mmsi
