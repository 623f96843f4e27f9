#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mmsi/corpus.hpp"
#include "mmsi/encoder.hpp"
#include "mmsi/preprocess.hpp"

namespace mmsi {

// ---------------------------------------------------------------------------
// Losses

constexpr double kProbEps = 1e-7;

inline double bce_loss(const std::vector<double>& probs, const std::vector<double>& labels) {
    if (probs.empty() || probs.size() != labels.size())
        throw std::runtime_error("bce_loss needs equally sized, nonempty inputs");
    double sum = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        const double p = std::clamp(probs[i], kProbEps, 1.0 - kProbEps);
        sum += -(labels[i] * std::log(p) + (1.0 - labels[i]) * std::log(1.0 - p));
    }
    return sum / static_cast<double>(probs.size());
}

// d loss / d prob, matching the clamped loss.
inline std::vector<double> bce_loss_grad(const std::vector<double>& probs,
                                         const std::vector<double>& labels) {
    if (probs.empty() || probs.size() != labels.size())
        throw std::runtime_error("bce_loss needs equally sized, nonempty inputs");
    std::vector<double> g(probs.size());
    const double n = static_cast<double>(probs.size());
    for (std::size_t i = 0; i < probs.size(); ++i) {
        const double p = std::clamp(probs[i], kProbEps, 1.0 - kProbEps);
        g[i] = (-labels[i] / p + (1.0 - labels[i]) / (1.0 - p)) / n;
    }
    return g;
}

inline double mse_loss(const std::vector<double>& preds, const std::vector<double>& targets) {
    if (preds.empty() || preds.size() != targets.size())
        throw std::runtime_error("mse_loss needs equally sized, nonempty inputs");
    double sum = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const double r = preds[i] - targets[i];
        sum += r * r;
    }
    return sum / static_cast<double>(preds.size());
}

inline std::vector<double> mse_loss_grad(const std::vector<double>& preds,
                                         const std::vector<double>& targets) {
    if (preds.empty() || preds.size() != targets.size())
        throw std::runtime_error("mse_loss needs equally sized, nonempty inputs");
    std::vector<double> g(preds.size());
    const double n = static_cast<double>(preds.size());
    for (std::size_t i = 0; i < preds.size(); ++i)
        g[i] = 2.0 * (preds[i] - targets[i]) / n;
    return g;
}

// ---------------------------------------------------------------------------
// Predictions and fusion

struct GuiltPrediction {
    double p = 0.5;      // probability of principal
    int label = 1;       // 1 = principal, 0 = accomplice; ties go to principal
};

inline GuiltPrediction make_guilt_prediction(double p, double threshold = 0.5) {
    GuiltPrediction g;
    g.p = p;
    g.label = p >= threshold ? 1 : 0;
    return g;
}

struct JudgmentPrediction {
    GuiltPrediction guilt;
    double months = 0.0;
};

struct FusedState {
    Vector h_fused;
};

// h_fused = h_cls + v_g with v_g = guilt * ones(d).
inline FusedState broadcast_fuse(const Vector& h_cls, int guilt_label) {
    if (guilt_label != 0 && guilt_label != 1)
        throw std::runtime_error("guilt label must be 0 or 1");
    FusedState f;
    f.h_fused = (h_cls.array() + static_cast<double>(guilt_label)).matrix();
    return f;
}

// ---------------------------------------------------------------------------
// Stage 1: guilt classifier (encoder + sigmoid head, zero-initialized head).

class GuiltClassifier {
public:
    GuiltClassifier(const EncoderConfig& cfg, int vocab_size, std::uint64_t init_seed,
                    TextSource expected_source = TextSource::fd)
        : init_rng_(hash_combine(init_seed, "classifier_init")),
          encoder_(cfg, vocab_size, store_, "enc.", init_rng_),
          expected_source_(expected_source) {
        head_w_ = &store_.add("head.w", cfg.d, 1);
        head_b_ = &store_.add("head.b", 1, 1);
    }

    ParamStore& params() { return store_; }
    const ParamStore& params() const { return store_; }
    const Encoder& encoder() const { return encoder_; }
    Encoder& encoder() { return encoder_; }
    TextSource expected_source() const { return expected_source_; }
    void set_expected_source(TextSource s) { expected_source_ = s; }

    double probability(const TokenSequence& seq) const {
        ForwardCache cache;
        const Matrix hidden = encoder_.forward(encoder_.embed_tokens(seq), seq, false, nullptr, &cache);
        const double logit = (hidden.row(0) * head_w_->value)(0, 0) + head_b_->value(0, 0);
        return sigmoid(logit);
    }

    GuiltPrediction infer(const MaskedSample& sample) const {
        if (sample.source != expected_source_)
            throw std::runtime_error("classifier expects " + text_source_name(expected_source_) +
                                     " input but sample was built from " +
                                     text_source_name(sample.source));
        return make_guilt_prediction(probability(sample.tokens));
    }

    // One training example; gradients accumulate scaled by `weight`.
    double forward_backward(const TokenSequence& seq, double label, double weight,
                            Rng& dropout_rng) {
        ForwardCache cache;
        const Matrix hidden = encoder_.forward(encoder_.embed_tokens(seq), seq, true, &dropout_rng, &cache);
        const double logit = (hidden.row(0) * head_w_->value)(0, 0) + head_b_->value(0, 0);
        const double p = sigmoid(logit);
        const double pc = std::clamp(p, kProbEps, 1.0 - kProbEps);
        const double loss = -(label * std::log(pc) + (1.0 - label) * std::log(1.0 - pc));

        const double dlogit = (p - label) * weight;
        head_w_->grad += hidden.row(0).transpose() * dlogit;
        head_b_->grad(0, 0) += dlogit;
        Matrix d_hidden = Matrix::Zero(hidden.rows(), hidden.cols());
        d_hidden.row(0) = head_w_->value.col(0).transpose() * dlogit;
        encoder_.backward(cache, d_hidden, true);
        return loss;
    }

private:
    ParamStore store_;
    Rng init_rng_;
    Encoder encoder_;
    ParamTensor *head_w_, *head_b_;
    TextSource expected_source_;
};

inline GuiltPrediction infer_guilt(const MaskedSample& sample, const GuiltClassifier& model) {
    return model.infer(sample);
}

// ---------------------------------------------------------------------------
// Stage 2: sentencing regressor over the pruned court view. The guilt label
// is broadcast and added to the class-summary state before the linear head.

class PrisonRegressor {
public:
    PrisonRegressor(const EncoderConfig& cfg, int vocab_size, std::uint64_t init_seed,
                    bool use_fusion, int prison_max = 180)
        : init_rng_(hash_combine(init_seed, "regressor_init")),
          encoder_(cfg, vocab_size, store_, "enc.", init_rng_),
          use_fusion_(use_fusion),
          prison_max_(prison_max) {
        head_w_ = &store_.add("head.w", cfg.d, 1);
        head_b_ = &store_.add("head.b", 1, 1);
    }

    ParamStore& params() { return store_; }
    const ParamStore& params() const { return store_; }
    const Encoder& encoder() const { return encoder_; }
    Encoder& encoder() { return encoder_; }
    bool use_fusion() const { return use_fusion_; }
    int prison_max() const { return prison_max_; }

    // Raw head output; kept unclamped so losses stay unbiased.
    double predict_raw(const TokenSequence& seq, double guilt_value) const {
        ForwardCache cache;
        const Matrix hidden = encoder_.forward(encoder_.embed_tokens(seq), seq, false, nullptr, &cache);
        Vector h = hidden.row(0).transpose();
        if (use_fusion_) h = broadcast_fuse(h, static_cast<int>(guilt_value)).h_fused;
        return (h.transpose() * head_w_->value)(0, 0) + head_b_->value(0, 0);
    }

    double predict_clamped(const TokenSequence& seq, double guilt_value) const {
        return std::clamp(predict_raw(seq, guilt_value), 0.0, static_cast<double>(prison_max_));
    }

    double forward_backward(const TokenSequence& seq, double guilt_value, double target,
                            double weight, Rng& dropout_rng) {
        ForwardCache cache;
        const Matrix hidden = encoder_.forward(encoder_.embed_tokens(seq), seq, true, &dropout_rng, &cache);
        Vector h = hidden.row(0).transpose();
        if (use_fusion_) h = broadcast_fuse(h, static_cast<int>(guilt_value)).h_fused;
        const double pred = (h.transpose() * head_w_->value)(0, 0) + head_b_->value(0, 0);
        const double residual = pred - target;
        const double loss = residual * residual;

        const double dpred = 2.0 * residual * weight;
        head_w_->grad += h * dpred;  // fusion shift is constant w.r.t. params
        head_b_->grad(0, 0) += dpred;
        Matrix d_hidden = Matrix::Zero(hidden.rows(), hidden.cols());
        d_hidden.row(0) = head_w_->value.col(0).transpose() * dpred;
        encoder_.backward(cache, d_hidden, true);
        return loss;
    }

private:
    ParamStore store_;
    Rng init_rng_;
    Encoder encoder_;
    ParamTensor *head_w_, *head_b_;
    bool use_fusion_;
    int prison_max_;
};

inline double predict_prison(const MaskedSample& sample, int guilt_label,
                             const PrisonRegressor& model) {
    if (sample.source != TextSource::cv_d)
        throw std::runtime_error("regressor expects cv_d input but sample was built from " +
                                 text_source_name(sample.source));
    return model.predict_clamped(sample.tokens, static_cast<double>(guilt_label));
}

// Full two-stage pass for one defendant: guilt from the fd path, months from
// the cv_d path fused with the predicted label.
inline JudgmentPrediction mmsi_forward(const JudicialCase& c, const std::string& defendant,
                                       const GuiltClassifier& classifier,
                                       const PrisonRegressor& regressor,
                                       const CharTokenizer& tokenizer, int max_len,
                                       MaskStrategy strategy = MaskStrategy::mask) {
    if (!c.cv_d)
        throw std::runtime_error("case \"" + c.id +
                                 "\" has no pruned court view; prune before prediction");
    MaskedSample fd_sample = apply_masking(c.fd, defendant, strategy, tokenizer, max_len);
    fd_sample.source = TextSource::fd;
    fd_sample.case_id = c.id;
    MaskedSample cvd_sample = apply_masking(*c.cv_d, defendant, strategy, tokenizer, max_len);
    cvd_sample.source = TextSource::cv_d;
    cvd_sample.case_id = c.id;

    JudgmentPrediction out;
    out.guilt = infer_guilt(fd_sample, classifier);
    out.months = predict_prison(cvd_sample, out.guilt.label, regressor);
    return out;
}

// ---------------------------------------------------------------------------
// Joint multi-task model: two encoders; the fd branch produces class
// probabilities projected into the hidden space, the cv_d branch produces an
// attention-refined summary; their sum feeds both heads.

struct JointConfig {
    double alpha = 1.0;  // classification weight
    double beta = 0.1;   // regression weight

    void validate() const {
        if (alpha < 0.0 || beta < 0.0) throw std::runtime_error("loss weights must be >= 0");
        if (alpha == 0.0 && beta == 0.0)
            throw std::runtime_error("alpha and beta cannot both be zero");
    }
};

struct JointOutput {
    Eigen::Vector2d logits;   // final classification head (index 1 = principal)
    double months = 0.0;
    Eigen::Vector2d fd_probs; // stage-level probabilities from the fd branch
};

class JointModel {
public:
    JointModel(const EncoderConfig& cfg, int vocab_size, std::uint64_t init_seed,
               int prison_max = 180)
        : init_rng_(hash_combine(init_seed, "joint_init")),
          enc_fd_(cfg, vocab_size, store_, "fd.", init_rng_),
          enc_cv_(cfg, vocab_size, store_, "cv.", init_rng_),
          prison_max_(prison_max) {
        const int d = cfg.d;
        fd_logit_w_ = &store_.add("fd_logit.w", d, 2);
        fd_logit_b_ = &store_.add("fd_logit.b", 1, 2);
        proj_w_ = &store_.add("proj.w", 2, d);
        proj_b_ = &store_.add("proj.b", 1, d);
        cls_w_ = &store_.add("cls.w", d, 2);
        cls_b_ = &store_.add("cls.b", 1, 2);
        reg_w_ = &store_.add("reg.w", d, 1);
        reg_b_ = &store_.add("reg.b", 1, 1);
        // Projection gets a small random init so the classification branch is
        // wired into the fused state from the first step; heads start at zero.
        for (Eigen::Index i = 0; i < proj_w_->value.rows(); ++i)
            for (Eigen::Index j = 0; j < proj_w_->value.cols(); ++j)
                proj_w_->value(i, j) = init_rng_.normal(0.0, 0.02);
    }

    ParamStore& params() { return store_; }
    const ParamStore& params() const { return store_; }
    const Encoder& fd_encoder() const { return enc_fd_; }
    const Encoder& cv_encoder() const { return enc_cv_; }
    int prison_max() const { return prison_max_; }
    ParamTensor& projection_w() { return *proj_w_; }
    ParamTensor& projection_b() { return *proj_b_; }

    struct Cache {
        ForwardCache fd, cv;
        Eigen::Vector2d fd_logits, fd_probs;
        Vector proj;     // d
        RowVector attn_w;  // refinement weights over cv positions
        Vector fused;    // d
        JointOutput out;
    };

    JointOutput forward(const MaskedSample& fd_sample, const MaskedSample& cvd_sample,
                        bool train = false, Rng* dropout_rng = nullptr,
                        Cache* cache = nullptr) const {
        if (fd_sample.case_id != cvd_sample.case_id ||
            fd_sample.target_name != cvd_sample.target_name)
            throw std::runtime_error("joint forward got mismatched defendants: \"" +
                                     fd_sample.case_id + "/" + fd_sample.target_name +
                                     "\" vs \"" + cvd_sample.case_id + "/" +
                                     cvd_sample.target_name + "\"");
        Cache local;
        Cache& c = cache ? *cache : local;

        const Matrix fd_hidden = enc_fd_.forward(enc_fd_.embed_tokens(fd_sample.tokens),
                                                 fd_sample.tokens, train, dropout_rng, &c.fd);
        c.fd_logits = (fd_hidden.row(0) * fd_logit_w_->value).transpose() +
                      fd_logit_b_->value.row(0).transpose();
        c.fd_probs = softmax2(c.fd_logits);
        c.proj = (c.fd_probs.transpose() * proj_w_->value).transpose() +
                 proj_b_->value.row(0).transpose();

        const Matrix cv_hidden = enc_cv_.forward(enc_cv_.embed_tokens(cvd_sample.tokens),
                                                 cvd_sample.tokens, train, dropout_rng, &c.cv);
        // Refinement weights: head-averaged class-summary attention row of the
        // final layer, applied over the final hidden states.
        const auto& last = c.cv.layers.back();
        c.attn_w = RowVector::Zero(cv_hidden.rows());
        for (const auto& p : last.p) c.attn_w += p.row(0);
        c.attn_w /= static_cast<double>(last.p.size());
        Vector summary = (c.attn_w * cv_hidden).transpose();

        c.fused = summary + c.proj;
        c.out.logits = (c.fused.transpose() * cls_w_->value).transpose() +
                       cls_b_->value.row(0).transpose();
        c.out.months = (c.fused.transpose() * reg_w_->value)(0, 0) + reg_b_->value(0, 0);
        c.out.fd_probs = c.fd_probs;
        return c.out;
    }

    // Loss for a single example; alpha * CE(logits, role) + beta * MSE.
    static double loss(const JointOutput& out, Role role, double months_true,
                       const JointConfig& cfg) {
        cfg.validate();
        const Eigen::Vector2d logp = log_softmax2(out.logits);
        const double ce = -logp(role == Role::principal ? 1 : 0);
        const double r = out.months - months_true;
        return cfg.alpha * ce + cfg.beta * r * r;
    }

    double forward_backward(const MaskedSample& fd_sample, const MaskedSample& cvd_sample,
                            Role role, double months_true, const JointConfig& cfg,
                            double weight, Rng& dropout_rng) {
        cfg.validate();
        Cache c;
        const JointOutput out = forward(fd_sample, cvd_sample, true, &dropout_rng, &c);
        const double total = loss(out, role, months_true, cfg);

        // Heads.
        const Eigen::Vector2d probs = softmax2(out.logits);
        Eigen::Vector2d dlogits = probs;
        dlogits(role == Role::principal ? 1 : 0) -= 1.0;
        dlogits *= cfg.alpha * weight;
        const double dmonths = 2.0 * (out.months - months_true) * cfg.beta * weight;

        cls_w_->grad += c.fused * dlogits.transpose();
        cls_b_->grad.row(0) += dlogits.transpose();
        reg_w_->grad += c.fused * dmonths;
        reg_b_->grad(0, 0) += dmonths;
        Vector dfused = cls_w_->value * dlogits + reg_w_->value.col(0) * dmonths;

        // cv branch: fused = attn_w * cv_hidden + proj.
        const Matrix& cv_hidden = c.cv.hidden;
        Matrix d_cv_hidden = c.attn_w.transpose() * dfused.transpose();
        RowVector d_attn_w = (cv_hidden * dfused).transpose();
        enc_cv_.backward(c.cv, d_cv_hidden, true, &d_attn_w);

        // fd branch: proj = probs^T W + b.
        proj_w_->grad += c.fd_probs * dfused.transpose();
        proj_b_->grad.row(0) += dfused.transpose();
        Eigen::Vector2d dprobs = proj_w_->value * dfused;
        // softmax backward
        const double dot = dprobs.dot(c.fd_probs);
        Eigen::Vector2d dfd_logits = (c.fd_probs.array() * (dprobs.array() - dot)).matrix();
        fd_logit_w_->grad += c.fd.hidden.row(0).transpose() * dfd_logits.transpose();
        fd_logit_b_->grad.row(0) += dfd_logits.transpose();
        Matrix d_fd_hidden = Matrix::Zero(c.fd.hidden.rows(), c.fd.hidden.cols());
        d_fd_hidden.row(0) = (fd_logit_w_->value * dfd_logits).transpose();
        enc_fd_.backward(c.fd, d_fd_hidden, true);
        return total;
    }

    static Eigen::Vector2d softmax2(const Eigen::Vector2d& z) {
        const double m = z.maxCoeff();
        Eigen::Vector2d e = (z.array() - m).exp().matrix();
        return e / e.sum();
    }

    static Eigen::Vector2d log_softmax2(const Eigen::Vector2d& z) {
        const double m = z.maxCoeff();
        const double lse = m + std::log((z.array() - m).exp().sum());
        return (z.array() - lse).matrix();
    }

private:
    ParamStore store_;
    Rng init_rng_;
    Encoder enc_fd_, enc_cv_;
    ParamTensor *fd_logit_w_, *fd_logit_b_, *proj_w_, *proj_b_;
    ParamTensor *cls_w_, *cls_b_, *reg_w_, *reg_b_;
    int prison_max_;
};

inline JointOutput joint_forward(const MaskedSample& fd_sample, const MaskedSample& cvd_sample,
                                 const JointModel& model) {
    return model.forward(fd_sample, cvd_sample);
}

inline double joint_loss(const JointOutput& out, Role role, double months_true,
                         const JointConfig& cfg) {
    return JointModel::loss(out, role, months_true, cfg);
}

}  // namespace mmsi
