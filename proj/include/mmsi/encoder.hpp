#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "mmsi/rng.hpp"
#include "mmsi/tokenizer.hpp"

namespace mmsi {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

struct EncoderConfig {
    int layers = 2;
    int heads = 4;
    int d = 128;
    int max_len = 512;
    double dropout = 0.1;
    int ffn_mult = 4;

    void validate() const {
        if (layers < 1 || heads < 1 || d < 1 || max_len < 2 || ffn_mult < 1)
            throw std::runtime_error("encoder config has non-positive dimensions");
        if (d % heads != 0) throw std::runtime_error("hidden size must be divisible by heads");
        if (dropout < 0.0 || dropout >= 1.0) throw std::runtime_error("dropout must be in [0,1)");
    }

    nlohmann::json to_json() const {
        return {{"layers", layers}, {"heads", heads},   {"d", d},
                {"max_len", max_len}, {"dropout", dropout}, {"ffn_mult", ffn_mult}};
    }

    static EncoderConfig from_json(const nlohmann::json& j) {
        EncoderConfig c;
        c.layers = j.value("layers", c.layers);
        c.heads = j.value("heads", c.heads);
        c.d = j.value("d", c.d);
        c.max_len = j.value("max_len", c.max_len);
        c.dropout = j.value("dropout", c.dropout);
        c.ffn_mult = j.value("ffn_mult", c.ffn_mult);
        c.validate();
        return c;
    }
};

// ---------------------------------------------------------------------------
// Named parameter tensors. A deque keeps references stable while models add
// tensors during construction.

struct ParamTensor {
    std::string name;
    Matrix value;
    Matrix grad;
};

class ParamStore {
public:
    ParamTensor& add(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
        if (index_.count(name)) throw std::runtime_error("duplicate parameter name: " + name);
        ParamTensor t;
        t.name = name;
        t.value = Matrix::Zero(rows, cols);
        t.grad = Matrix::Zero(rows, cols);
        tensors_.push_back(std::move(t));
        index_[name] = tensors_.size() - 1;
        return tensors_.back();
    }

    ParamTensor& at(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::runtime_error("unknown parameter: " + name);
        return tensors_[it->second];
    }

    std::deque<ParamTensor>& tensors() { return tensors_; }
    const std::deque<ParamTensor>& tensors() const { return tensors_; }

    void zero_grads() {
        for (auto& t : tensors_) t.grad.setZero();
    }

    double grad_norm() const {
        double sq = 0.0;
        for (const auto& t : tensors_) sq += t.grad.squaredNorm();
        return std::sqrt(sq);
    }

    void scale_grads(double s) {
        for (auto& t : tensors_) t.grad *= s;
    }

    std::vector<Matrix> snapshot() const {
        std::vector<Matrix> copy;
        copy.reserve(tensors_.size());
        for (const auto& t : tensors_) copy.push_back(t.value);
        return copy;
    }

    void restore(const std::vector<Matrix>& snap) {
        if (snap.size() != tensors_.size())
            throw std::runtime_error("snapshot size mismatch");
        for (std::size_t i = 0; i < snap.size(); ++i) tensors_[i].value = snap[i];
    }

private:
    std::deque<ParamTensor> tensors_;
    std::unordered_map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// Activation helpers

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * 0.7071067811865475244)); }

inline double gelu_grad(double x) {
    const double phi = std::exp(-0.5 * x * x) * 0.3989422804014326779;  // N(0,1) pdf
    const double Phi = 0.5 * (1.0 + std::erf(x * 0.7071067811865475244));
    return Phi + x * phi;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Row softmax in place; -inf entries become exact zeros.
inline void softmax_rows(Matrix& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        const double mx = m.row(i).maxCoeff();
        double sum = 0.0;
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            const double e = std::exp(m(i, j) - mx);
            m(i, j) = e;
            sum += e;
        }
        m.row(i) /= sum;
    }
}

// ---------------------------------------------------------------------------
// Forward caches

struct LayerNormCache {
    Matrix xhat;
    Vector rstd;
};

struct LayerCache {
    Matrix x_in;  // layer input
    std::vector<Matrix> q, k, v, p;  // per head
    Matrix attn_concat;
    Matrix attn_drop_mask;
    LayerNormCache ln1;
    Matrix ln1_out;
    Matrix ffn_pre;   // before GELU
    Matrix ffn_act;   // after GELU
    Matrix ffn_drop_mask;
    LayerNormCache ln2;
};

struct ForwardCache {
    std::vector<int> ids;
    std::vector<bool> is_pad;
    Matrix x_embed;  // token + position embeddings, before the embedding norm
    LayerNormCache ln_emb;
    Matrix emb_drop_mask;
    Matrix x0;  // stack input
    std::vector<LayerCache> layers;
    Matrix hidden;
    bool train = false;
};

struct EncoderOutput {
    Matrix hidden;  // seq_len x d
    Vector cls;
    std::vector<std::vector<Matrix>> attention;  // [layer][head], rows sum to 1
};

// ---------------------------------------------------------------------------
// Bidirectional transformer encoder (post-norm blocks, learned positions).

class Encoder {
public:
    Encoder(const EncoderConfig& cfg, int vocab_size, ParamStore& store,
            const std::string& prefix, Rng& init)
        : cfg_(cfg), vocab_size_(vocab_size) {
        cfg_.validate();
        const int d = cfg_.d;
        const int f = cfg_.d * cfg_.ffn_mult;
        tok_emb_ = &store.add(prefix + "tok_emb", vocab_size, d);
        pos_emb_ = &store.add(prefix + "pos_emb", cfg_.max_len, d);
        ln_emb_g_ = &store.add(prefix + "ln_emb.g", 1, d);
        ln_emb_b_ = &store.add(prefix + "ln_emb.b", 1, d);
        gaussian_init(tok_emb_->value, init);
        gaussian_init(pos_emb_->value, init);
        ln_emb_g_->value.setOnes();
        for (int l = 0; l < cfg_.layers; ++l) {
            const std::string p = prefix + "layer" + std::to_string(l) + ".";
            Layer lay;
            lay.wq = &store.add(p + "wq", d, d);
            lay.bq = &store.add(p + "bq", 1, d);
            lay.wk = &store.add(p + "wk", d, d);
            lay.bk = &store.add(p + "bk", 1, d);
            lay.wv = &store.add(p + "wv", d, d);
            lay.bv = &store.add(p + "bv", 1, d);
            lay.wo = &store.add(p + "wo", d, d);
            lay.bo = &store.add(p + "bo", 1, d);
            lay.ln1_g = &store.add(p + "ln1.g", 1, d);
            lay.ln1_b = &store.add(p + "ln1.b", 1, d);
            lay.w1 = &store.add(p + "w1", d, f);
            lay.b1 = &store.add(p + "b1", 1, f);
            lay.w2 = &store.add(p + "w2", f, d);
            lay.b2 = &store.add(p + "b2", 1, d);
            lay.ln2_g = &store.add(p + "ln2.g", 1, d);
            lay.ln2_b = &store.add(p + "ln2.b", 1, d);
            for (auto* w : {lay.wq, lay.wk, lay.wv, lay.wo, lay.w1, lay.w2})
                gaussian_init(w->value, init);
            lay.ln1_g->value.setOnes();
            lay.ln2_g->value.setOnes();
            layers_.push_back(lay);
        }
    }

    const EncoderConfig& config() const { return cfg_; }
    int vocab_size() const { return vocab_size_; }

    // Token + position embeddings, before the embedding norm. This is the
    // matrix attribution paths interpolate over.
    Matrix embed_tokens(const TokenSequence& seq) const {
        check_length(seq);
        const auto n = static_cast<Eigen::Index>(seq.size());
        Matrix x(n, cfg_.d);
        for (Eigen::Index t = 0; t < n; ++t) {
            const int id = seq.ids[static_cast<std::size_t>(t)];
            if (id < 0 || id >= vocab_size_)
                throw std::runtime_error("token id out of vocabulary range");
            x.row(t) = tok_emb_->value.row(id) + pos_emb_->value.row(t);
        }
        return x;
    }

    // Runs the stack from explicit input embeddings. Pad positions are taken
    // from seq and masked out of every attention row.
    Matrix forward(const Matrix& x_embed, const TokenSequence& seq, bool train,
                   Rng* dropout_rng, ForwardCache* cache) const {
        check_length(seq);
        if (x_embed.rows() != static_cast<Eigen::Index>(seq.size()) || x_embed.cols() != cfg_.d)
            throw std::runtime_error("embedding matrix shape mismatch");
        if (train && !dropout_rng)
            throw std::runtime_error("training forward needs a dropout rng");

        const auto n = x_embed.rows();
        std::vector<bool> is_pad(seq.size());
        for (std::size_t t = 0; t < seq.size(); ++t) is_pad[t] = seq.ids[t] == CharTokenizer::kPad;

        ForwardCache local;
        ForwardCache& c = cache ? *cache : local;
        c.ids = seq.ids;
        c.is_pad = is_pad;
        c.train = train;
        c.x_embed = x_embed;

        Matrix x = layer_norm(x_embed, ln_emb_g_->value, ln_emb_b_->value, &c.ln_emb);
        apply_dropout(x, train, dropout_rng, &c.emb_drop_mask);
        c.x0 = x;

        c.layers.assign(static_cast<std::size_t>(cfg_.layers), LayerCache{});
        for (int l = 0; l < cfg_.layers; ++l) x = layer_forward(layers_[static_cast<std::size_t>(l)], x, is_pad, train, dropout_rng, c.layers[static_cast<std::size_t>(l)]);
        c.hidden = x;
        return x;
    }

    EncoderOutput encode(const TokenSequence& seq, bool train = false,
                         Rng* dropout_rng = nullptr) const {
        ForwardCache cache;
        EncoderOutput out;
        out.hidden = forward(embed_tokens(seq), seq, train, dropout_rng, &cache);
        out.cls = out.hidden.row(0).transpose();
        out.attention.reserve(cache.layers.size());
        for (const auto& lc : cache.layers) out.attention.push_back(lc.p);
        return out;
    }

    // Backpropagates d_hidden to the input embeddings. Parameter gradients
    // accumulate only when requested (attribution paths skip them).
    // extra_cls_attn_grad, when set, is an upstream gradient on the
    // head-averaged class-summary attention row of the final layer.
    Matrix backward(const ForwardCache& c, const Matrix& d_hidden,
                    bool accumulate_param_grads,
                    const RowVector* extra_cls_attn_grad = nullptr) {
        Matrix dx = d_hidden;
        for (int l = cfg_.layers - 1; l >= 0; --l) {
            const RowVector* extra = (l == cfg_.layers - 1) ? extra_cls_attn_grad : nullptr;
            dx = layer_backward(layers_[static_cast<std::size_t>(l)], c.layers[static_cast<std::size_t>(l)], dx,
                                accumulate_param_grads, extra);
        }
        if (c.emb_drop_mask.size()) dx.array() *= c.emb_drop_mask.array();
        Matrix d_embed = layer_norm_backward(dx, c.ln_emb, ln_emb_g_->value,
                                             accumulate_param_grads ? ln_emb_g_ : nullptr,
                                             accumulate_param_grads ? ln_emb_b_ : nullptr);
        if (accumulate_param_grads) {
            for (Eigen::Index t = 0; t < d_embed.rows(); ++t) {
                tok_emb_->grad.row(c.ids[static_cast<std::size_t>(t)]) += d_embed.row(t);
                pos_emb_->grad.row(t) += d_embed.row(t);
            }
        }
        return d_embed;
    }

    // Embedding matrix for a same-length all-pad sequence (positions kept).
    Matrix pad_baseline(std::size_t len) const {
        Matrix x(static_cast<Eigen::Index>(len), cfg_.d);
        for (Eigen::Index t = 0; t < x.rows(); ++t)
            x.row(t) = tok_emb_->value.row(CharTokenizer::kPad) + pos_emb_->value.row(t);
        return x;
    }

private:
    struct Layer {
        ParamTensor *wq, *bq, *wk, *bk, *wv, *bv, *wo, *bo;
        ParamTensor *ln1_g, *ln1_b, *w1, *b1, *w2, *b2, *ln2_g, *ln2_b;
    };

    void check_length(const TokenSequence& seq) const {
        if (seq.size() > static_cast<std::size_t>(cfg_.max_len))
            throw std::runtime_error("sequence length " + std::to_string(seq.size()) +
                                     " exceeds max_len " + std::to_string(cfg_.max_len));
        if (seq.size() == 0 || seq.ids[0] != CharTokenizer::kCls)
            throw std::runtime_error("sequence must start with the class-summary token");
    }

    static void gaussian_init(Matrix& m, Rng& rng) {
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = rng.normal(0.0, 0.02);
    }

    static Matrix layer_norm(const Matrix& x, const Matrix& g, const Matrix& b,
                             LayerNormCache* cache) {
        constexpr double eps = 1e-12;
        Matrix xhat(x.rows(), x.cols());
        Vector rstd(x.rows());
        const double dinv = 1.0 / static_cast<double>(x.cols());
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            const double mean = x.row(i).mean();
            const double var = (x.row(i).array() - mean).square().sum() * dinv;
            const double r = 1.0 / std::sqrt(var + eps);
            xhat.row(i) = (x.row(i).array() - mean) * r;
            rstd(i) = r;
        }
        Matrix out = (xhat.array().rowwise() * g.row(0).array()).rowwise() + b.row(0).array();
        if (cache) {
            cache->xhat = std::move(xhat);
            cache->rstd = std::move(rstd);
        }
        return out;
    }

    static Matrix layer_norm_backward(const Matrix& dy, const LayerNormCache& c, const Matrix& g,
                                      ParamTensor* dg, ParamTensor* db) {
        if (dg) dg->grad.row(0) += (dy.array() * c.xhat.array()).colwise().sum().matrix();
        if (db) db->grad.row(0) += dy.colwise().sum();
        Matrix dxhat = dy.array().rowwise() * g.row(0).array();
        Matrix dx(dy.rows(), dy.cols());
        const double dinv = 1.0 / static_cast<double>(dy.cols());
        for (Eigen::Index i = 0; i < dy.rows(); ++i) {
            const double m1 = dxhat.row(i).mean();
            const double m2 = (dxhat.row(i).array() * c.xhat.row(i).array()).sum() * dinv;
            dx.row(i) =
                ((dxhat.row(i).array() - m1) - c.xhat.row(i).array() * m2) * c.rstd(i);
        }
        return dx;
    }

    void apply_dropout(Matrix& x, bool train, Rng* rng, Matrix* mask) const {
        if (!train || cfg_.dropout == 0.0) {
            if (mask) mask->resize(0, 0);
            return;
        }
        const double keep = 1.0 - cfg_.dropout;
        const double scale = 1.0 / keep;
        Matrix m(x.rows(), x.cols());
        for (Eigen::Index i = 0; i < x.rows(); ++i)
            for (Eigen::Index j = 0; j < x.cols(); ++j)
                m(i, j) = rng->uniform() < keep ? scale : 0.0;
        x.array() *= m.array();
        if (mask) *mask = std::move(m);
    }

    Matrix layer_forward(const Layer& lay, const Matrix& x, const std::vector<bool>& is_pad,
                         bool train, Rng* rng, LayerCache& c) const {
        const auto n = x.rows();
        const int heads = cfg_.heads;
        const int dk = cfg_.d / heads;
        const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
        c.x_in = x;

        Matrix q = (x * lay.wq->value).rowwise() + lay.bq->value.row(0);
        Matrix k = (x * lay.wk->value).rowwise() + lay.bk->value.row(0);
        Matrix v = (x * lay.wv->value).rowwise() + lay.bv->value.row(0);

        c.q.resize(static_cast<std::size_t>(heads));
        c.k.resize(static_cast<std::size_t>(heads));
        c.v.resize(static_cast<std::size_t>(heads));
        c.p.resize(static_cast<std::size_t>(heads));
        Matrix concat(n, cfg_.d);
        const double neg_inf = -std::numeric_limits<double>::infinity();
        for (int h = 0; h < heads; ++h) {
            auto qh = q.middleCols(h * dk, dk);
            auto kh = k.middleCols(h * dk, dk);
            auto vh = v.middleCols(h * dk, dk);
            Matrix scores = qh * kh.transpose() * scale;
            for (Eigen::Index j = 0; j < n; ++j)
                if (is_pad[static_cast<std::size_t>(j)]) scores.col(j).setConstant(neg_inf);
            softmax_rows(scores);
            concat.middleCols(h * dk, dk) = scores * vh;
            c.q[static_cast<std::size_t>(h)] = qh;
            c.k[static_cast<std::size_t>(h)] = kh;
            c.v[static_cast<std::size_t>(h)] = vh;
            c.p[static_cast<std::size_t>(h)] = std::move(scores);
        }
        c.attn_concat = concat;

        Matrix attn = (concat * lay.wo->value).rowwise() + lay.bo->value.row(0);
        apply_dropout(attn, train, rng, &c.attn_drop_mask);
        Matrix y = layer_norm(x + attn, lay.ln1_g->value, lay.ln1_b->value, &c.ln1);
        c.ln1_out = y;

        c.ffn_pre = (y * lay.w1->value).rowwise() + lay.b1->value.row(0);
        c.ffn_act = c.ffn_pre.unaryExpr([](double t) { return gelu(t); });
        Matrix f = (c.ffn_act * lay.w2->value).rowwise() + lay.b2->value.row(0);
        apply_dropout(f, train, rng, &c.ffn_drop_mask);
        return layer_norm(y + f, lay.ln2_g->value, lay.ln2_b->value, &c.ln2);
    }

    Matrix layer_backward(Layer& lay, const LayerCache& c, const Matrix& d_out, bool acc,
                          const RowVector* extra_cls_attn_grad) {
        const auto n = d_out.rows();
        const int heads = cfg_.heads;
        const int dk = cfg_.d / heads;
        const double scale = 1.0 / std::sqrt(static_cast<double>(dk));

        // ln2(y + f)
        Matrix d_sum2 = layer_norm_backward(d_out, c.ln2, lay.ln2_g->value,
                                            acc ? lay.ln2_g : nullptr, acc ? lay.ln2_b : nullptr);
        Matrix dy = d_sum2;
        Matrix df = d_sum2;
        if (c.ffn_drop_mask.size()) df.array() *= c.ffn_drop_mask.array();

        // f = gelu(y*w1 + b1) * w2 + b2
        if (acc) {
            lay.w2->grad += c.ffn_act.transpose() * df;
            lay.b2->grad.row(0) += df.colwise().sum();
        }
        Matrix dact = df * lay.w2->value.transpose();
        Matrix dpre = dact.array() * c.ffn_pre.unaryExpr([](double t) { return gelu_grad(t); }).array();
        if (acc) {
            lay.w1->grad += c.ln1_out.transpose() * dpre;
            lay.b1->grad.row(0) += dpre.colwise().sum();
        }
        dy += dpre * lay.w1->value.transpose();

        // ln1(x + attn)
        Matrix d_sum1 = layer_norm_backward(dy, c.ln1, lay.ln1_g->value,
                                            acc ? lay.ln1_g : nullptr, acc ? lay.ln1_b : nullptr);
        Matrix dx = d_sum1;
        Matrix dattn = d_sum1;
        if (c.attn_drop_mask.size()) dattn.array() *= c.attn_drop_mask.array();

        // attn = concat * wo + bo
        if (acc) {
            lay.wo->grad += c.attn_concat.transpose() * dattn;
            lay.bo->grad.row(0) += dattn.colwise().sum();
        }
        Matrix dconcat = dattn * lay.wo->value.transpose();

        Matrix dq(n, cfg_.d), dkm(n, cfg_.d), dv(n, cfg_.d);
        for (int h = 0; h < heads; ++h) {
            const Matrix& p = c.p[static_cast<std::size_t>(h)];
            auto da = dconcat.middleCols(h * dk, dk);
            Matrix dp = da * c.v[static_cast<std::size_t>(h)].transpose();
            if (extra_cls_attn_grad)
                dp.row(0) += *extra_cls_attn_grad / static_cast<double>(heads);
            dv.middleCols(h * dk, dk) = p.transpose() * da;
            // softmax rows: ds = p .* (dp - rowdot(dp, p))
            Matrix ds(n, n);
            for (Eigen::Index i = 0; i < n; ++i) {
                const double dot = dp.row(i).cwiseProduct(p.row(i)).sum();
                ds.row(i) = p.row(i).array() * (dp.row(i).array() - dot);
            }
            dq.middleCols(h * dk, dk) = ds * c.k[static_cast<std::size_t>(h)] * scale;
            dkm.middleCols(h * dk, dk) = ds.transpose() * c.q[static_cast<std::size_t>(h)] * scale;
        }

        if (acc) {
            lay.wq->grad += c.x_in.transpose() * dq;
            lay.bq->grad.row(0) += dq.colwise().sum();
            lay.wk->grad += c.x_in.transpose() * dkm;
            lay.bk->grad.row(0) += dkm.colwise().sum();
            lay.wv->grad += c.x_in.transpose() * dv;
            lay.bv->grad.row(0) += dv.colwise().sum();
        }
        dx += dq * lay.wq->value.transpose();
        dx += dkm * lay.wk->value.transpose();
        dx += dv * lay.wv->value.transpose();
        return dx;
    }

    EncoderConfig cfg_;
    int vocab_size_;
    ParamTensor *tok_emb_, *pos_emb_, *ln_emb_g_, *ln_emb_b_;
    std::vector<Layer> layers_;
};

}  // namespace mmsi
