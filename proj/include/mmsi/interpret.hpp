#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "mmsi/mmsi.hpp"
#include "mmsi/train.hpp"

namespace mmsi {

// ---------------------------------------------------------------------------
// Scalar-output differentiable views of the models, for attribution.

class AttributionModel {
public:
    virtual ~AttributionModel() = default;
    virtual double value(const Matrix& x, const TokenSequence& seq) const = 0;
    virtual double value_and_grad(const Matrix& x, const TokenSequence& seq, Matrix& dx) = 0;
    virtual const Encoder& target_encoder() const = 0;
    virtual bool classification() const = 0;
};

// Raw regression head output (unclamped), with a fixed broadcast guilt value.
class RegressorAttribution : public AttributionModel {
public:
    RegressorAttribution(PrisonRegressor& model, double guilt_value)
        : model_(model), guilt_(guilt_value) {}

    double value(const Matrix& x, const TokenSequence& seq) const override {
        ForwardCache c;
        const Matrix hidden = model_.encoder().forward(x, seq, false, nullptr, &c);
        Vector h = hidden.row(0).transpose();
        if (model_.use_fusion()) h = broadcast_fuse(h, static_cast<int>(guilt_)).h_fused;
        return (h.transpose() * model_.params().at("head.w").value)(0, 0) +
               model_.params().at("head.b").value(0, 0);
    }

    double value_and_grad(const Matrix& x, const TokenSequence& seq, Matrix& dx) override {
        ForwardCache c;
        const Matrix hidden = model_.encoder().forward(x, seq, false, nullptr, &c);
        Vector h = hidden.row(0).transpose();
        if (model_.use_fusion()) h = broadcast_fuse(h, static_cast<int>(guilt_)).h_fused;
        const double out = (h.transpose() * model_.params().at("head.w").value)(0, 0) +
                           model_.params().at("head.b").value(0, 0);
        Matrix dh = Matrix::Zero(hidden.rows(), hidden.cols());
        dh.row(0) = model_.params().at("head.w").value.col(0).transpose();
        dx = model_.encoder().backward(c, dh, false);
        return out;
    }

    const Encoder& target_encoder() const override { return model_.encoder(); }
    bool classification() const override { return false; }

private:
    PrisonRegressor& model_;
    double guilt_;
};

// Probability of a fixed class (the model's prediction at the unperturbed
// input), so the scalar stays consistent along the interpolation path.
class ClassifierAttribution : public AttributionModel {
public:
    ClassifierAttribution(GuiltClassifier& model, int target_class)
        : model_(model), target_(target_class) {}

    double value(const Matrix& x, const TokenSequence& seq) const override {
        const double p = probability(x, seq);
        return target_ == 1 ? p : 1.0 - p;
    }

    double value_and_grad(const Matrix& x, const TokenSequence& seq, Matrix& dx) override {
        ForwardCache c;
        const Matrix hidden = model_.encoder().forward(x, seq, false, nullptr, &c);
        const double logit = (hidden.row(0) * model_.params().at("head.w").value)(0, 0) +
                             model_.params().at("head.b").value(0, 0);
        const double p = sigmoid(logit);
        const double sign = target_ == 1 ? 1.0 : -1.0;
        const double dlogit = sign * p * (1.0 - p);
        Matrix dh = Matrix::Zero(hidden.rows(), hidden.cols());
        dh.row(0) = model_.params().at("head.w").value.col(0).transpose() * dlogit;
        dx = model_.encoder().backward(c, dh, false);
        return target_ == 1 ? p : 1.0 - p;
    }

    const Encoder& target_encoder() const override { return model_.encoder(); }
    bool classification() const override { return true; }

private:
    double probability(const Matrix& x, const TokenSequence& seq) const {
        ForwardCache c;
        const Matrix hidden = model_.encoder().forward(x, seq, false, nullptr, &c);
        const double logit = (hidden.row(0) * model_.params().at("head.w").value)(0, 0) +
                             model_.params().at("head.b").value(0, 0);
        return sigmoid(logit);
    }

    GuiltClassifier& model_;
    int target_;
};

// ---------------------------------------------------------------------------
// Integrated gradients

enum class IgBaseline { zero_embedding, pad_embedding };

struct TokenAttribution {
    std::vector<std::string> tokens;
    std::vector<double> scores;
    std::vector<bool> special;
    double prediction = 0.0;
    double baseline_prediction = 0.0;
    double completeness_residual = 0.0;
    int steps = 0;
    bool classification = false;
};

// Midpoint-rule approximation of the straight-line path integral over the
// input embeddings; per-token score sums the embedding dimensions.
inline TokenAttribution integrated_gradients(AttributionModel& model, const TokenSequence& seq,
                                             int steps,
                                             IgBaseline baseline = IgBaseline::pad_embedding) {
    if (steps < 8) throw std::runtime_error("integrated gradients needs at least 8 steps");
    const Encoder& enc = model.target_encoder();
    const Matrix x = enc.embed_tokens(seq);
    const Matrix x0 = baseline == IgBaseline::zero_embedding
                          ? Matrix::Zero(x.rows(), x.cols()).eval()
                          : enc.pad_baseline(seq.size());
    const Matrix diff = x - x0;

    Matrix avg_grad = Matrix::Zero(x.rows(), x.cols());
    Matrix dx;
    for (int k = 0; k < steps; ++k) {
        const double alpha = (static_cast<double>(k) + 0.5) / static_cast<double>(steps);
        model.value_and_grad(x0 + alpha * diff, seq, dx);
        avg_grad += dx;
    }
    avg_grad /= static_cast<double>(steps);

    TokenAttribution attr;
    attr.tokens = seq.surface;
    attr.special = seq.special;
    attr.steps = steps;
    attr.classification = model.classification();
    attr.prediction = model.value(x, seq);
    attr.baseline_prediction = model.value(x0, seq);
    attr.scores.resize(seq.size());
    double total = 0.0;
    for (Eigen::Index t = 0; t < x.rows(); ++t) {
        attr.scores[static_cast<std::size_t>(t)] =
            (diff.row(t).array() * avg_grad.row(t).array()).sum();
        total += attr.scores[static_cast<std::size_t>(t)];
    }
    attr.completeness_residual = std::abs(total - (attr.prediction - attr.baseline_prediction));
    return attr;
}

// ---------------------------------------------------------------------------
// Top-k selection. Regression ranks by |score|; classification by signed
// score toward the predicted class. Ties break toward the lower index.

struct TopK {
    std::vector<std::size_t> indices;
    bool truncated = false;  // fewer eligible tokens than requested
};

inline TopK top_k_tokens(const TokenAttribution& attr, int k, bool exempt_specials = true) {
    if (k < 1) throw std::runtime_error("k must be at least 1");
    std::vector<std::size_t> eligible;
    for (std::size_t i = 0; i < attr.scores.size(); ++i)
        if (!(exempt_specials && attr.special[i])) eligible.push_back(i);

    auto key = [&](std::size_t i) {
        return attr.classification ? attr.scores[i] : std::abs(attr.scores[i]);
    };
    std::stable_sort(eligible.begin(), eligible.end(), [&](std::size_t a, std::size_t b) {
        const double ka = key(a), kb = key(b);
        if (ka != kb) return ka > kb;
        return a < b;
    });

    TopK out;
    if (static_cast<std::size_t>(k) >= eligible.size()) {
        out.indices = eligible;
        out.truncated = static_cast<std::size_t>(k) > eligible.size();
    } else {
        out.indices.assign(eligible.begin(), eligible.begin() + k);
    }
    return out;
}

// Removes the given positions and closes the sequence up.
inline TokenSequence remove_tokens(const TokenSequence& seq,
                                   const std::vector<std::size_t>& positions) {
    std::vector<bool> drop(seq.size(), false);
    for (std::size_t p : positions) drop[p] = true;
    TokenSequence out;
    for (std::size_t i = 0; i < seq.size(); ++i) {
        if (drop[i]) continue;
        out.ids.push_back(seq.ids[i]);
        out.surface.push_back(seq.surface[i]);
        out.special.push_back(seq.special[i]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Comprehensiveness

struct CompReport {
    int k = 0;
    std::map<std::string, double> comp_metric;  // regression: per metric name
    std::optional<double> comp_p;               // classification
};

struct CompOptions {
    int steps = 32;
    IgBaseline baseline = IgBaseline::pad_embedding;
    LabelSource label_source = LabelSource::ground_truth;
    const GuiltClassifier* classifier = nullptr;
};

inline CompReport comprehensiveness_regression(PrisonRegressor& model, const SampleSet& set,
                                               int k, const CompOptions& opt = {}) {
    if (k < 0) throw std::runtime_error("k must be nonnegative");
    std::vector<double> preds, preds_removed, truths;
    for (const auto& s : set.samples) {
        int guilt = s.role == Role::principal ? 1 : 0;
        if (opt.label_source == LabelSource::predicted && model.use_fusion()) {
            if (!opt.classifier || !s.fd_tokens)
                throw std::runtime_error("predicted label source needs a classifier and fd tokens");
            guilt = make_guilt_prediction(opt.classifier->probability(*s.fd_tokens)).label;
        }
        TokenSequence reduced = s.tokens;
        if (k > 0) {
            RegressorAttribution target(model, static_cast<double>(guilt));
            const TokenAttribution attr =
                integrated_gradients(target, s.tokens, opt.steps, opt.baseline);
            const TopK top = top_k_tokens(attr, k, true);
            reduced = remove_tokens(s.tokens, top.indices);
        }
        preds.push_back(model.predict_clamped(s.tokens, static_cast<double>(guilt)));
        preds_removed.push_back(model.predict_clamped(reduced, static_cast<double>(guilt)));
        truths.push_back(s.months);
    }
    const double pm = static_cast<double>(model.prison_max());
    const RegressionMetrics full = regression_metrics(preds, truths, pm);
    const RegressionMetrics reduced = regression_metrics(preds_removed, truths, pm);
    CompReport report;
    report.k = k;
    report.comp_metric["ImpScore"] = full.imp_score - reduced.imp_score;
    report.comp_metric["ImpAcc"] = full.imp_acc - reduced.imp_acc;
    report.comp_metric["ImpErr"] = full.imp_err - reduced.imp_err;
    return report;
}

inline CompReport comprehensiveness_classification(GuiltClassifier& model, const SampleSet& set,
                                                   int k, const CompOptions& opt = {}) {
    if (k < 0) throw std::runtime_error("k must be nonnegative");
    double drop_sum = 0.0;
    for (const auto& s : set.samples) {
        const int y = s.role == Role::principal ? 1 : 0;
        auto prob_of_true = [&](const TokenSequence& seq) {
            const double p = model.probability(seq);
            return y == 1 ? p : 1.0 - p;
        };
        TokenSequence reduced = s.tokens;
        if (k > 0) {
            const int predicted = make_guilt_prediction(model.probability(s.tokens)).label;
            ClassifierAttribution target(model, predicted);
            const TokenAttribution attr =
                integrated_gradients(target, s.tokens, opt.steps, opt.baseline);
            const TopK top = top_k_tokens(attr, k, true);
            reduced = remove_tokens(s.tokens, top.indices);
        }
        drop_sum += prob_of_true(s.tokens) - prob_of_true(reduced);
    }
    CompReport report;
    report.k = k;
    report.comp_p = set.samples.empty() ? 0.0 : drop_sum / static_cast<double>(set.samples.size());
    return report;
}

// ---------------------------------------------------------------------------
// Token-frequency aggregation for word-cloud style exports. Specials stay
// eligible here: the mask anchor is itself a finding worth surfacing.

inline std::vector<std::pair<std::string, int>> aggregate_token_frequencies(
    const std::vector<TokenAttribution>& attrs, int k, bool exempt_specials = false) {
    if (k < 1) throw std::runtime_error("k must be at least 1");
    std::map<std::string, int> counts;
    for (const auto& attr : attrs) {
        if (attr.scores.empty()) continue;
        const TopK top = top_k_tokens(attr, k, exempt_specials);
        for (std::size_t i : top.indices) ++counts[attr.tokens[i]];
    }
    std::vector<std::pair<std::string, int>> table(counts.begin(), counts.end());
    std::stable_sort(table.begin(), table.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    return table;
}

// ---------------------------------------------------------------------------
// Attention export: class-summary row of head-averaged attention for one
// layer, max-normalized to [0,1].

struct AttentionEntry {
    std::size_t position = 0;
    std::string token;
    double weight = 0.0;
};

inline std::vector<AttentionEntry> export_attention(const EncoderOutput& out,
                                                    const TokenSequence& seq, int layer) {
    if (layer < 0 || static_cast<std::size_t>(layer) >= out.attention.size())
        throw std::runtime_error("attention layer index out of range");
    const auto& heads = out.attention[static_cast<std::size_t>(layer)];
    RowVector row = RowVector::Zero(static_cast<Eigen::Index>(seq.size()));
    for (const auto& p : heads) row += p.row(0);
    row /= static_cast<double>(heads.size());
    const double mx = row.maxCoeff();
    std::vector<AttentionEntry> entries;
    entries.reserve(seq.size());
    for (std::size_t i = 0; i < seq.size(); ++i)
        entries.push_back({i, seq.surface[i], mx > 0.0 ? row(static_cast<Eigen::Index>(i)) / mx : 0.0});
    return entries;
}

}  // namespace mmsi
