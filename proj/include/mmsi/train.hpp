#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <future>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mmsi/metrics.hpp"
#include "mmsi/mmsi.hpp"
#include "mmsi/stats.hpp"

namespace mmsi {

enum class LabelSource { ground_truth, predicted };

inline std::string label_source_name(LabelSource s) {
    return s == LabelSource::ground_truth ? "ground_truth" : "predicted";
}

struct TrainConfig {
    double learning_rate = 1e-5;
    int batch_size = 16;
    int epochs = 10;
    double dropout = 0.1;
    std::uint64_t seed = 0;
    double weight_decay = 0.01;
    double clip_norm = 1.0;
    LabelSource label_source = LabelSource::ground_truth;

    void validate() const {
        if (learning_rate <= 0.0) throw std::runtime_error("learning rate must be positive");
        if (epochs < 1) throw std::runtime_error("epochs must be at least 1");
        if (batch_size < 1) throw std::runtime_error("batch size must be at least 1");
    }
};

// Decoupled weight decay with adaptive moments; no warmup.
class AdamW {
public:
    AdamW(ParamStore& store, double lr, double weight_decay)
        : store_(store), lr_(lr), decay_(weight_decay) {
        for (const auto& t : store.tensors()) {
            m_.push_back(Matrix::Zero(t.value.rows(), t.value.cols()));
            v_.push_back(Matrix::Zero(t.value.rows(), t.value.cols()));
        }
    }

    void step() {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, t_);
        const double bc2 = 1.0 - std::pow(beta2_, t_);
        std::size_t i = 0;
        for (auto& p : store_.tensors()) {
            m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * p.grad;
            v_[i] = beta2_ * v_[i].array().matrix() +
                    (1.0 - beta2_) * p.grad.array().square().matrix();
            const Matrix mhat = m_[i] / bc1;
            const Matrix vhat = v_[i] / bc2;
            p.value.array() -=
                lr_ * (mhat.array() / (vhat.array().sqrt() + eps_) + decay_ * p.value.array());
            ++i;
        }
    }

private:
    ParamStore& store_;
    double lr_;
    double decay_;
    double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
    long t_ = 0;
    std::vector<Matrix> m_, v_;
};

inline double clip_gradients(ParamStore& store, double max_norm) {
    const double norm = store.grad_norm();
    if (max_norm > 0.0 && norm > max_norm) store.scale_grads(max_norm / norm);
    return norm;
}

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double grad_norm_mean = 0.0;
    std::map<std::string, double> val_metrics;
};

struct TrainHistory {
    std::vector<EpochRecord> epochs;
    int best_epoch = -1;
    std::string selection_metric;
};

// ---------------------------------------------------------------------------
// Evaluation helpers

struct PredictionRow {
    std::string case_id;
    std::string defendant;
    int guilt_pred = 0;
    double p = 0.0;
    double months_pred = 0.0;
    double months_true = 0.0;
};

inline ClassificationMetrics evaluate_classifier(const GuiltClassifier& model,
                                                 const SampleSet& set,
                                                 std::vector<PredictionRow>* rows = nullptr) {
    std::vector<int> preds, labels;
    preds.reserve(set.samples.size());
    for (const auto& s : set.samples) {
        const GuiltPrediction g = make_guilt_prediction(model.probability(s.tokens));
        preds.push_back(g.label);
        labels.push_back(s.role == Role::principal ? 1 : 0);
        if (rows)
            rows->push_back({s.case_id, s.target_name, g.label, g.p, 0.0,
                             static_cast<double>(labels.back())});
    }
    return classification_metrics(preds, labels);
}

// Guilt values for fusion come from the ground truth or from a stage-1
// classifier, mirroring the two label sources.
inline RegressionMetrics evaluate_regressor(const PrisonRegressor& model, const SampleSet& set,
                                            LabelSource source,
                                            const GuiltClassifier* classifier,
                                            std::vector<PredictionRow>* rows = nullptr) {
    if (source == LabelSource::predicted && model.use_fusion() && classifier == nullptr)
        throw std::runtime_error("predicted label source needs a classifier");
    std::vector<double> preds, truths;
    preds.reserve(set.samples.size());
    for (const auto& s : set.samples) {
        int guilt = s.role == Role::principal ? 1 : 0;
        double p = static_cast<double>(guilt);
        if (source == LabelSource::predicted && model.use_fusion()) {
            if (!s.fd_tokens)
                throw std::runtime_error("sample lacks the fd tokens needed for stage-1 inference");
            const GuiltPrediction g = make_guilt_prediction(classifier->probability(*s.fd_tokens));
            guilt = g.label;
            p = g.p;
        }
        const double months = model.predict_clamped(s.tokens, static_cast<double>(guilt));
        preds.push_back(months);
        truths.push_back(s.months);
        if (rows) rows->push_back({s.case_id, s.target_name, guilt, p, months, s.months});
    }
    return regression_metrics(preds, truths, static_cast<double>(model.prison_max()));
}

struct JointEval {
    ClassificationMetrics classification;
    RegressionMetrics regression;
};

inline JointEval evaluate_joint(const JointModel& model, const SampleSet& set,
                                std::vector<PredictionRow>* rows = nullptr) {
    std::vector<int> cls_preds, cls_labels;
    std::vector<double> preds, truths;
    for (const auto& s : set.samples) {
        if (!s.fd_tokens) throw std::runtime_error("joint evaluation needs fd tokens per sample");
        MaskedSample fd = s;
        fd.tokens = *s.fd_tokens;
        const JointOutput out = model.forward(fd, s);
        const int label = out.logits(1) >= out.logits(0) ? 1 : 0;
        const double months =
            std::clamp(out.months, 0.0, static_cast<double>(model.prison_max()));
        cls_preds.push_back(label);
        cls_labels.push_back(s.role == Role::principal ? 1 : 0);
        preds.push_back(months);
        truths.push_back(s.months);
        if (rows)
            rows->push_back({s.case_id, s.target_name, label,
                             JointModel::softmax2(out.logits)(1), months, s.months});
    }
    JointEval e;
    e.classification = classification_metrics(cls_preds, cls_labels);
    e.regression = regression_metrics(preds, truths, static_cast<double>(model.prison_max()));
    return e;
}

// ---------------------------------------------------------------------------
// Training loops. Best-validation checkpoint is restored before returning;
// repetition-to-repetition determinism comes from the config seed alone.

namespace detail {

template <typename StepFn>
double run_epoch(ParamStore& store, AdamW& opt, std::size_t n_samples, int batch_size,
                 double clip_norm, Rng& shuffle_rng, StepFn&& step, double* grad_norm_mean) {
    std::vector<std::size_t> order(n_samples);
    for (std::size_t i = 0; i < n_samples; ++i) order[i] = i;
    shuffle_rng.shuffle(order);

    double loss_sum = 0.0;
    double norm_sum = 0.0;
    std::size_t batches = 0;
    std::size_t pos = 0;
    while (pos < order.size()) {
        const std::size_t end = std::min(order.size(), pos + static_cast<std::size_t>(batch_size));
        const double weight = 1.0 / static_cast<double>(end - pos);
        store.zero_grads();
        for (std::size_t i = pos; i < end; ++i) loss_sum += weight * step(order[i], weight);
        norm_sum += clip_gradients(store, clip_norm);
        opt.step();
        ++batches;
        pos = end;
    }
    if (grad_norm_mean) *grad_norm_mean = batches ? norm_sum / static_cast<double>(batches) : 0.0;
    return loss_sum / (batches ? static_cast<double>(batches) : 1.0);
}

}  // namespace detail

inline std::pair<std::unique_ptr<GuiltClassifier>, TrainHistory> train_classifier(
    const SampleSet& train_set, const SampleSet& val_set, const TrainConfig& cfg,
    EncoderConfig enc_cfg, int vocab_size,
    TextSource expected_source = TextSource::fd) {
    cfg.validate();
    if (train_set.samples.empty() || val_set.samples.empty())
        throw std::runtime_error("training needs nonempty train and validation sets");
    enc_cfg.dropout = cfg.dropout;
    auto model = std::make_unique<GuiltClassifier>(enc_cfg, vocab_size, cfg.seed, expected_source);
    AdamW opt(model->params(), cfg.learning_rate, cfg.weight_decay);
    Rng dropout_rng(hash_combine(cfg.seed, "dropout"));

    TrainHistory history;
    history.selection_metric = "val_accuracy";
    double best = -1.0;
    std::vector<Matrix> best_params;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng(hash_combine(hash_combine(cfg.seed, "shuffle"), static_cast<std::uint64_t>(epoch)));
        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = detail::run_epoch(
            model->params(), opt, train_set.samples.size(), cfg.batch_size, cfg.clip_norm,
            shuffle_rng,
            [&](std::size_t i, double w) {
                const auto& s = train_set.samples[i];
                return model->forward_backward(s.tokens, s.role == Role::principal ? 1.0 : 0.0, w,
                                               dropout_rng);
            },
            &rec.grad_norm_mean);
        const ClassificationMetrics vm = evaluate_classifier(*model, val_set);
        rec.val_metrics["accuracy"] = vm.acc;
        rec.val_metrics["f1"] = vm.f1;
        history.epochs.push_back(rec);
        if (vm.acc > best) {
            best = vm.acc;
            best_params = model->params().snapshot();
            history.best_epoch = epoch;
        }
    }
    model->params().restore(best_params);
    return {std::move(model), std::move(history)};
}

enum class FusionMode { none, broadcast };

inline std::pair<std::unique_ptr<PrisonRegressor>, TrainHistory> train_regressor(
    const SampleSet& train_set, const SampleSet& val_set, const TrainConfig& cfg,
    EncoderConfig enc_cfg, int vocab_size, FusionMode fusion, int prison_max,
    const GuiltClassifier* classifier = nullptr) {
    cfg.validate();
    if (train_set.samples.empty() || val_set.samples.empty())
        throw std::runtime_error("training needs nonempty train and validation sets");
    if (cfg.label_source == LabelSource::predicted && fusion == FusionMode::broadcast &&
        classifier == nullptr)
        throw std::runtime_error("predicted label source needs a classifier");
    enc_cfg.dropout = cfg.dropout;
    auto model = std::make_unique<PrisonRegressor>(enc_cfg, vocab_size, cfg.seed,
                                                   fusion == FusionMode::broadcast, prison_max);
    AdamW opt(model->params(), cfg.learning_rate, cfg.weight_decay);
    Rng dropout_rng(hash_combine(cfg.seed, "dropout"));

    auto guilt_value = [&](const MaskedSample& s) -> double {
        if (fusion == FusionMode::none) return 0.0;
        if (cfg.label_source == LabelSource::ground_truth)
            return s.role == Role::principal ? 1.0 : 0.0;
        if (!s.fd_tokens)
            throw std::runtime_error("sample lacks the fd tokens needed for stage-1 inference");
        return static_cast<double>(
            make_guilt_prediction(classifier->probability(*s.fd_tokens)).label);
    };

    TrainHistory history;
    history.selection_metric = "val_imp_err";
    double best = std::numeric_limits<double>::infinity();
    std::vector<Matrix> best_params;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng(hash_combine(hash_combine(cfg.seed, "shuffle"), static_cast<std::uint64_t>(epoch)));
        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = detail::run_epoch(
            model->params(), opt, train_set.samples.size(), cfg.batch_size, cfg.clip_norm,
            shuffle_rng,
            [&](std::size_t i, double w) {
                const auto& s = train_set.samples[i];
                return model->forward_backward(s.tokens, guilt_value(s), s.months, w, dropout_rng);
            },
            &rec.grad_norm_mean);
        const RegressionMetrics vm =
            evaluate_regressor(*model, val_set, cfg.label_source, classifier);
        rec.val_metrics["imp_score"] = vm.imp_score;
        rec.val_metrics["imp_acc"] = vm.imp_acc;
        rec.val_metrics["imp_err"] = vm.imp_err;
        history.epochs.push_back(rec);
        if (vm.imp_err < best) {
            best = vm.imp_err;
            best_params = model->params().snapshot();
            history.best_epoch = epoch;
        }
    }
    model->params().restore(best_params);
    return {std::move(model), std::move(history)};
}

inline std::pair<std::unique_ptr<JointModel>, TrainHistory> train_joint(
    const SampleSet& train_set, const SampleSet& val_set, const TrainConfig& cfg,
    EncoderConfig enc_cfg, int vocab_size, const JointConfig& joint_cfg, int prison_max) {
    cfg.validate();
    joint_cfg.validate();
    if (train_set.samples.empty() || val_set.samples.empty())
        throw std::runtime_error("training needs nonempty train and validation sets");
    enc_cfg.dropout = cfg.dropout;
    auto model = std::make_unique<JointModel>(enc_cfg, vocab_size, cfg.seed, prison_max);
    AdamW opt(model->params(), cfg.learning_rate, cfg.weight_decay);
    Rng dropout_rng(hash_combine(cfg.seed, "dropout"));

    TrainHistory history;
    history.selection_metric = "val_imp_err";
    double best = std::numeric_limits<double>::infinity();
    std::vector<Matrix> best_params;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng(hash_combine(hash_combine(cfg.seed, "shuffle"), static_cast<std::uint64_t>(epoch)));
        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = detail::run_epoch(
            model->params(), opt, train_set.samples.size(), cfg.batch_size, cfg.clip_norm,
            shuffle_rng,
            [&](std::size_t i, double w) {
                const auto& s = train_set.samples[i];
                if (!s.fd_tokens)
                    throw std::runtime_error("joint training needs fd tokens per sample");
                MaskedSample fd = s;
                fd.tokens = *s.fd_tokens;
                return model->forward_backward(fd, s, s.role, s.months, joint_cfg, w, dropout_rng);
            },
            &rec.grad_norm_mean);
        const JointEval vm = evaluate_joint(*model, val_set);
        rec.val_metrics["accuracy"] = vm.classification.acc;
        rec.val_metrics["f1"] = vm.classification.f1;
        rec.val_metrics["imp_score"] = vm.regression.imp_score;
        rec.val_metrics["imp_acc"] = vm.regression.imp_acc;
        rec.val_metrics["imp_err"] = vm.regression.imp_err;
        history.epochs.push_back(rec);
        if (vm.regression.imp_err < best) {
            best = vm.regression.imp_err;
            best_params = model->params().snapshot();
            history.best_epoch = epoch;
        }
    }
    model->params().restore(best_params);
    return {std::move(model), std::move(history)};
}

// ---------------------------------------------------------------------------
// Confidence intervals and the resampling x repetition protocol.

inline std::pair<double, double> confidence_interval(const std::vector<double>& values,
                                                     double level = 0.95) {
    if (values.size() < 2)
        throw std::runtime_error("confidence interval needs at least two values");
    const double n = static_cast<double>(values.size());
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= n;
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / (n - 1.0));
    const double t = student_t_quantile(0.5 * (1.0 + level), n - 1.0);
    return {mean, t * sd / std::sqrt(n)};
}

struct MetricSummary {
    double mean = 0.0;
    double ci_halfwidth = 0.0;
    bool ci_defined = false;
    int n_runs = 0;
};

struct AggregateReport {
    int n_resamples = 0;
    int n_repetitions = 0;
    std::map<std::string, MetricSummary> metrics;
    std::vector<std::map<std::string, double>> runs;  // in (resample, repetition) order
    std::vector<std::pair<std::uint64_t, std::uint64_t>> seeds;  // (split, train) per run
    // Each repetition reuses its resample's split; only the training seed varies.
    std::string repetition_policy = "repetitions reuse the resample split; training seed varies";
};

using ProtocolRunFn = std::function<std::map<std::string, double>(
    int resample, int repetition, std::uint64_t split_seed, std::uint64_t train_seed)>;

inline AggregateReport run_protocol(int n_resamples, int n_repetitions, std::uint64_t base_seed,
                                    const ProtocolRunFn& run, int jobs = 1) {
    if (n_resamples < 1 || n_repetitions < 1)
        throw std::runtime_error("protocol counts must be at least 1");
    AggregateReport report;
    report.n_resamples = n_resamples;
    report.n_repetitions = n_repetitions;

    struct Slot {
        int r, j;
        std::uint64_t split_seed, train_seed;
    };
    std::vector<Slot> slots;
    for (int r = 0; r < n_resamples; ++r) {
        const std::uint64_t split_seed =
            hash_combine(hash_combine(base_seed, "resample"), static_cast<std::uint64_t>(r));
        for (int j = 0; j < n_repetitions; ++j) {
            const std::uint64_t train_seed = hash_combine(
                hash_combine(split_seed, "repetition"), static_cast<std::uint64_t>(j));
            slots.push_back({r, j, split_seed, train_seed});
        }
    }

    report.runs.resize(slots.size());
    report.seeds.resize(slots.size());
    if (jobs <= 1) {
        for (std::size_t i = 0; i < slots.size(); ++i) {
            const auto& s = slots[i];
            report.runs[i] = run(s.r, s.j, s.split_seed, s.train_seed);
            report.seeds[i] = {s.split_seed, s.train_seed};
        }
    } else {
        std::vector<std::future<void>> futures;
        std::atomic<std::size_t> next{0};
        for (int w = 0; w < jobs; ++w) {
            futures.push_back(std::async(std::launch::async, [&] {
                while (true) {
                    const std::size_t i = next.fetch_add(1);
                    if (i >= slots.size()) return;
                    const auto& s = slots[i];
                    report.runs[i] = run(s.r, s.j, s.split_seed, s.train_seed);
                    report.seeds[i] = {s.split_seed, s.train_seed};
                }
            }));
        }
        for (auto& f : futures) f.get();
    }

    std::map<std::string, std::vector<double>> pooled;
    for (const auto& r : report.runs)
        for (const auto& [k, v] : r) pooled[k].push_back(v);
    for (const auto& [k, vals] : pooled) {
        MetricSummary s;
        s.n_runs = static_cast<int>(vals.size());
        if (vals.size() >= 2) {
            auto [mean, hw] = confidence_interval(vals, 0.95);
            s.mean = mean;
            s.ci_halfwidth = hw;
            s.ci_defined = true;
        } else {
            s.mean = vals.empty() ? 0.0 : vals[0];
            s.ci_defined = false;
        }
        report.metrics[k] = s;
    }
    return report;
}

}  // namespace mmsi
