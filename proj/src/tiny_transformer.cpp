#include "specexit/tiny_transformer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>

namespace specexit {

namespace {

constexpr double kLnEps = 1e-5;
const double kGeluC = std::sqrt(2.0 / std::numbers::pi);

double gelu(double u) { return 0.5 * u * (1.0 + std::tanh(kGeluC * (u + 0.044715 * u * u * u))); }

double gelu_grad(double u) {
    const double t = std::tanh(kGeluC * (u + 0.044715 * u * u * u));
    return 0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * 0.044715 * u * u);
}

// Column-wise layer norm. Returns g * xhat + b and keeps xhat and 1/sigma for backward.
Eigen::MatrixXd layer_norm(const Eigen::MatrixXd& x, const Eigen::VectorXd& g, const Eigen::VectorXd& b,
                           Eigen::MatrixXd* xhat_out = nullptr, Eigen::VectorXd* inv_out = nullptr) {
    const double d = static_cast<double>(x.rows());
    Eigen::MatrixXd xhat(x.rows(), x.cols());
    Eigen::VectorXd inv(x.cols());
    for (Eigen::Index t = 0; t < x.cols(); ++t) {
        const double mu = x.col(t).mean();
        const double var = (x.col(t).array() - mu).square().sum() / d;
        inv(t) = 1.0 / std::sqrt(var + kLnEps);
        xhat.col(t) = (x.col(t).array() - mu) * inv(t);
    }
    Eigen::MatrixXd out = (xhat.array().colwise() * g.array()).colwise() + b.array();
    if (xhat_out) *xhat_out = std::move(xhat);
    if (inv_out) *inv_out = std::move(inv);
    return out;
}

Eigen::MatrixXd layer_norm_backward(const Eigen::MatrixXd& dout, const Eigen::MatrixXd& xhat,
                                    const Eigen::VectorXd& inv, const Eigen::VectorXd& g, Eigen::VectorXd& dg,
                                    Eigen::VectorXd& db) {
    dg += (dout.array() * xhat.array()).rowwise().sum().matrix();
    db += dout.rowwise().sum();
    const Eigen::MatrixXd dxhat = dout.array().colwise() * g.array();
    Eigen::MatrixXd dx(dout.rows(), dout.cols());
    for (Eigen::Index t = 0; t < dout.cols(); ++t) {
        const double m1 = dxhat.col(t).mean();
        const double m2 = dxhat.col(t).dot(xhat.col(t)) / static_cast<double>(dout.rows());
        dx.col(t) = inv(t) * (dxhat.col(t).array() - m1 - xhat.col(t).array() * m2);
    }
    return dx;
}

void softmax_inplace(Eigen::Ref<Eigen::VectorXd> v) {
    v.array() = (v.array() - v.maxCoeff()).exp();
    v /= v.sum();
}

class TransformerCache final : public TargetCache {
public:
    TransformerCache(const TransformerConfig& cfg)
        : k(static_cast<std::size_t>(cfg.layers), Eigen::MatrixXd(cfg.dim, cfg.context)),
          v(static_cast<std::size_t>(cfg.layers), Eigen::MatrixXd(cfg.dim, cfg.context)) {}
    std::size_t size() const override { return n; }
    void truncate(std::size_t keep) override { n = std::min(n, keep); }

    std::vector<Eigen::MatrixXd> k, v;  // per layer, D x context
    std::size_t n = 0;
};

}  // namespace

void TransformerConfig::validate() const {
    if (vocab_size < 2) throw ConfigError("transformer vocabulary must have at least 2 tokens");
    if (dim < 1 || layers < 1 || heads < 1 || context < 2 || mlp_mult < 1) {
        throw ConfigError("transformer dimensions must be positive");
    }
    if (dim % heads != 0) throw ConfigError("model dimension must be divisible by the head count");
}

TransformerParams TransformerParams::zeros_like(const TransformerConfig& cfg) {
    const int d = cfg.dim, f = cfg.dim * cfg.mlp_mult;
    TransformerParams p;
    p.tok_emb = Eigen::MatrixXd::Zero(d, cfg.vocab_size);
    p.pos_emb = Eigen::MatrixXd::Zero(d, cfg.context);
    for (int l = 0; l < cfg.layers; ++l) {
        LayerParams lp;
        lp.ln1_g = lp.ln1_b = lp.ln2_g = lp.ln2_b = lp.b2 = Eigen::VectorXd::Zero(d);
        lp.wq = lp.wk = lp.wv = lp.wo = Eigen::MatrixXd::Zero(d, d);
        lp.w1 = Eigen::MatrixXd::Zero(f, d);
        lp.b1 = Eigen::VectorXd::Zero(f);
        lp.w2 = Eigen::MatrixXd::Zero(d, f);
        p.layer.push_back(std::move(lp));
    }
    p.lnf_g = p.lnf_b = Eigen::VectorXd::Zero(d);
    p.w_out = Eigen::MatrixXd::Zero(cfg.vocab_size, d);
    p.b_out = Eigen::VectorXd::Zero(cfg.vocab_size);
    return p;
}

void TransformerParams::for_each(const std::function<void(const std::string&, Eigen::MatrixXd&)>& matrix,
                                 const std::function<void(const std::string&, Eigen::VectorXd&)>& vector) {
    matrix("tok_emb", tok_emb);
    matrix("pos_emb", pos_emb);
    for (std::size_t l = 0; l < layer.size(); ++l) {
        const std::string p = "layer." + std::to_string(l) + ".";
        LayerParams& lp = layer[l];
        vector(p + "ln1_g", lp.ln1_g);
        vector(p + "ln1_b", lp.ln1_b);
        matrix(p + "wq", lp.wq);
        matrix(p + "wk", lp.wk);
        matrix(p + "wv", lp.wv);
        matrix(p + "wo", lp.wo);
        vector(p + "ln2_g", lp.ln2_g);
        vector(p + "ln2_b", lp.ln2_b);
        matrix(p + "w1", lp.w1);
        vector(p + "b1", lp.b1);
        matrix(p + "w2", lp.w2);
        vector(p + "b2", lp.b2);
    }
    vector("lnf_g", lnf_g);
    vector("lnf_b", lnf_b);
    matrix("w_out", w_out);
    vector("b_out", b_out);
}

void TransformerParams::for_each(const std::function<void(const std::string&, const Eigen::MatrixXd&)>& matrix,
                                 const std::function<void(const std::string&, const Eigen::VectorXd&)>& vector) const {
    auto* self = const_cast<TransformerParams*>(this);
    self->for_each([&](const std::string& n, Eigen::MatrixXd& m) { matrix(n, m); },
                   [&](const std::string& n, Eigen::VectorXd& v) { vector(n, v); });
}

std::size_t TransformerParams::count() const {
    std::size_t n = 0;
    for_each([&](const std::string&, const Eigen::MatrixXd& m) { n += static_cast<std::size_t>(m.size()); },
             [&](const std::string&, const Eigen::VectorXd& v) { n += static_cast<std::size_t>(v.size()); });
    return n;
}

TinyTransformer::TinyTransformer(TransformerConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    params_ = TransformerParams::zeros_like(cfg_);
    std::mt19937_64 rng(cfg_.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const double base = 0.02, resid = 0.02 / std::sqrt(2.0 * cfg_.layers);
    auto fill = [&](Eigen::MatrixXd& m, double scale) {
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * normal(rng);
    };
    fill(params_.tok_emb, base);
    fill(params_.pos_emb, base);
    for (LayerParams& lp : params_.layer) {
        lp.ln1_g.setOnes();
        lp.ln2_g.setOnes();
        fill(lp.wq, base);
        fill(lp.wk, base);
        fill(lp.wv, base);
        fill(lp.wo, resid);
        fill(lp.w1, base);
        fill(lp.w2, resid);
    }
    params_.lnf_g.setOnes();
    fill(params_.w_out, base);
}

TinyTransformer::TinyTransformer(TransformerConfig cfg, TransformerParams params)
    : cfg_(cfg), params_(std::move(params)) {
    cfg_.validate();
    const TransformerParams shape = TransformerParams::zeros_like(cfg_);
    std::vector<std::pair<Eigen::Index, Eigen::Index>> want, got;
    shape.for_each([&](const std::string&, const Eigen::MatrixXd& m) { want.emplace_back(m.rows(), m.cols()); },
                   [&](const std::string&, const Eigen::VectorXd& v) { want.emplace_back(v.size(), 1); });
    params_.for_each([&](const std::string&, const Eigen::MatrixXd& m) { got.emplace_back(m.rows(), m.cols()); },
                     [&](const std::string&, const Eigen::VectorXd& v) { got.emplace_back(v.size(), 1); });
    if (want != got) throw ConfigError("transformer parameters do not match the configuration");
}

std::unique_ptr<TargetCache> TinyTransformer::make_cache() const { return std::make_unique<TransformerCache>(cfg_); }

ForwardOutput TinyTransformer::forward(std::span<const TokenId> context, TargetCache& cache_base) const {
    auto* cache = dynamic_cast<TransformerCache*>(&cache_base);
    if (!cache) throw UsageError("TinyTransformer needs its own cache type");
    if (context.size() > static_cast<std::size_t>(cfg_.context)) {
        throw ConfigError("context of " + std::to_string(context.size()) + " tokens exceeds the model context " +
                          std::to_string(cfg_.context));
    }
    if (cache->n > context.size()) throw UsageError("cache is longer than the context");

    const Eigen::Index start = static_cast<Eigen::Index>(cache->n);
    const Eigen::Index n_new = static_cast<Eigen::Index>(context.size()) - start;
    const int d = cfg_.dim, dh = cfg_.dim / cfg_.heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    Eigen::MatrixXd x(d, n_new);
    for (Eigen::Index j = 0; j < n_new; ++j) {
        const TokenId t = context[static_cast<std::size_t>(start + j)];
        if (t < 0 || t >= cfg_.vocab_size) throw ConfigError("token outside the transformer vocabulary");
        x.col(j) = params_.tok_emb.col(t) + params_.pos_emb.col(start + j);
    }

    for (std::size_t l = 0; l < params_.layer.size(); ++l) {
        const LayerParams& lp = params_.layer[l];
        const Eigen::MatrixXd a = layer_norm(x, lp.ln1_g, lp.ln1_b);
        const Eigen::MatrixXd q = lp.wq * a;
        cache->k[l].middleCols(start, n_new).noalias() = lp.wk * a;
        cache->v[l].middleCols(start, n_new).noalias() = lp.wv * a;

        Eigen::MatrixXd o(d, n_new);
        for (Eigen::Index j = 0; j < n_new; ++j) {
            const Eigen::Index len = start + j + 1;
            for (int h = 0; h < cfg_.heads; ++h) {
                const auto keys = cache->k[l].block(h * dh, 0, dh, len);
                const auto vals = cache->v[l].block(h * dh, 0, dh, len);
                Eigen::VectorXd w = (keys.transpose() * q.col(j).segment(h * dh, dh)) * scale;
                softmax_inplace(w);
                o.col(j).segment(h * dh, dh).noalias() = vals * w;
            }
        }
        x.noalias() += lp.wo * o;

        const Eigen::MatrixXd m = layer_norm(x, lp.ln2_g, lp.ln2_b);
        const Eigen::MatrixXd u = (lp.w1 * m).colwise() + lp.b1;
        x.noalias() += lp.w2 * u.unaryExpr([](double v) { return gelu(v); });
        x.colwise() += lp.b2;
    }
    cache->n = context.size();

    ForwardOutput out;
    out.hidden = layer_norm(x, params_.lnf_g, params_.lnf_b);
    out.logits = (params_.w_out * out.hidden).colwise() + params_.b_out;
    return out;
}

double TinyTransformer::loss_and_gradient(std::span<const TokenId> tokens, TransformerParams* grad) const {
    if (tokens.size() < 2) throw UsageError("language-model loss needs at least two tokens");
    if (tokens.size() > static_cast<std::size_t>(cfg_.context)) throw ConfigError("sequence exceeds model context");
    const Eigen::Index T = static_cast<Eigen::Index>(tokens.size()) - 1;  // positions that predict a target
    const int d = cfg_.dim, dh = cfg_.dim / cfg_.heads, H = cfg_.heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    struct Saved {
        Eigen::MatrixXd xhat1, a, q, k, v, o, xhat2, m, u, g;
        Eigen::VectorXd inv1, inv2;
        std::vector<Eigen::MatrixXd> p;  // per head, T x T, row = query
    };
    std::vector<Saved> saved(params_.layer.size());

    Eigen::MatrixXd x(d, T);
    for (Eigen::Index t = 0; t < T; ++t) {
        const TokenId tok = tokens[static_cast<std::size_t>(t)];
        if (tok < 0 || tok >= cfg_.vocab_size) throw ConfigError("token outside the transformer vocabulary");
        x.col(t) = params_.tok_emb.col(tok) + params_.pos_emb.col(t);
    }
    for (std::size_t l = 0; l < params_.layer.size(); ++l) {
        const LayerParams& lp = params_.layer[l];
        Saved& s = saved[l];
        s.a = layer_norm(x, lp.ln1_g, lp.ln1_b, &s.xhat1, &s.inv1);
        s.q = lp.wq * s.a;
        s.k = lp.wk * s.a;
        s.v = lp.wv * s.a;
        s.o.resize(d, T);
        for (int h = 0; h < H; ++h) {
            Eigen::MatrixXd p = (s.q.middleRows(h * dh, dh).transpose() * s.k.middleRows(h * dh, dh)) * scale;
            for (Eigen::Index i = 0; i < T; ++i) {
                for (Eigen::Index j = i + 1; j < T; ++j) p(i, j) = -std::numeric_limits<double>::infinity();
                Eigen::VectorXd row = p.row(i).transpose();
                softmax_inplace(row);
                p.row(i) = row.transpose();
            }
            s.o.middleRows(h * dh, dh).noalias() = s.v.middleRows(h * dh, dh) * p.transpose();
            s.p.push_back(std::move(p));
        }
        x.noalias() += lp.wo * s.o;
        s.m = layer_norm(x, lp.ln2_g, lp.ln2_b, &s.xhat2, &s.inv2);
        s.u = (lp.w1 * s.m).colwise() + lp.b1;
        s.g = s.u.unaryExpr([](double v) { return gelu(v); });
        x.noalias() += lp.w2 * s.g;
        x.colwise() += lp.b2;
    }
    Eigen::MatrixXd xhatf;
    Eigen::VectorXd invf;
    const Eigen::MatrixXd hf = layer_norm(x, params_.lnf_g, params_.lnf_b, &xhatf, &invf);
    Eigen::MatrixXd dlogits = (params_.w_out * hf).colwise() + params_.b_out;

    double loss = 0.0;
    for (Eigen::Index t = 0; t < T; ++t) {
        auto col = dlogits.col(t);
        const double top = col.maxCoeff();
        const double lse = top + std::log((col.array() - top).exp().sum());
        const TokenId target = tokens[static_cast<std::size_t>(t + 1)];
        if (target < 0 || target >= cfg_.vocab_size) throw ConfigError("token outside the transformer vocabulary");
        loss += lse - col(target);
        col.array() = (col.array() - lse).exp();
        col(target) -= 1.0;
    }
    loss /= static_cast<double>(T);
    if (!grad) return loss;
    dlogits /= static_cast<double>(T);

    *grad = TransformerParams::zeros_like(cfg_);
    TransformerParams& g = *grad;
    g.w_out.noalias() = dlogits * hf.transpose();
    g.b_out = dlogits.rowwise().sum();
    Eigen::MatrixXd dx =
        layer_norm_backward(params_.w_out.transpose() * dlogits, xhatf, invf, params_.lnf_g, g.lnf_g, g.lnf_b);

    for (std::size_t li = params_.layer.size(); li-- > 0;) {
        const LayerParams& lp = params_.layer[li];
        LayerParams& gl = g.layer[li];
        const Saved& s = saved[li];

        // MLP block.
        gl.w2.noalias() = dx * s.g.transpose();
        gl.b2 = dx.rowwise().sum();
        const Eigen::MatrixXd du = (lp.w2.transpose() * dx).cwiseProduct(s.u.unaryExpr([](double v) {
            return gelu_grad(v);
        }));
        gl.w1.noalias() = du * s.m.transpose();
        gl.b1 = du.rowwise().sum();
        dx += layer_norm_backward(lp.w1.transpose() * du, s.xhat2, s.inv2, lp.ln2_g, gl.ln2_g, gl.ln2_b);

        // Attention block.
        gl.wo.noalias() = dx * s.o.transpose();
        const Eigen::MatrixXd dout = lp.wo.transpose() * dx;
        Eigen::MatrixXd dq(d, T), dk(d, T), dv(d, T);
        for (int h = 0; h < H; ++h) {
            const Eigen::MatrixXd& p = s.p[static_cast<std::size_t>(h)];
            const auto doh = dout.middleRows(h * dh, dh);
            dv.middleRows(h * dh, dh).noalias() = doh * p;
            const Eigen::MatrixXd dp = doh.transpose() * s.v.middleRows(h * dh, dh);
            const Eigen::VectorXd rowdot = (dp.array() * p.array()).rowwise().sum();
            const Eigen::MatrixXd ds = (p.array() * (dp.array().colwise() - rowdot.array())).matrix() * scale;
            dq.middleRows(h * dh, dh).noalias() = s.k.middleRows(h * dh, dh) * ds.transpose();
            dk.middleRows(h * dh, dh).noalias() = s.q.middleRows(h * dh, dh) * ds;
        }
        gl.wq.noalias() = dq * s.a.transpose();
        gl.wk.noalias() = dk * s.a.transpose();
        gl.wv.noalias() = dv * s.a.transpose();
        const Eigen::MatrixXd da = lp.wq.transpose() * dq + lp.wk.transpose() * dk + lp.wv.transpose() * dv;
        dx += layer_norm_backward(da, s.xhat1, s.inv1, lp.ln1_g, gl.ln1_g, gl.ln1_b);
    }

    for (Eigen::Index t = 0; t < T; ++t) {
        g.tok_emb.col(tokens[static_cast<std::size_t>(t)]) += dx.col(t);
        g.pos_emb.col(t) += dx.col(t);
    }
    return loss;
}

Adam::Adam(const TransformerConfig& cfg, AdamOptions options)
    : opt_(options), m_(TransformerParams::zeros_like(cfg)), v_(TransformerParams::zeros_like(cfg)) {}

void Adam::step(TransformerParams& params, TransformerParams& grad) {
    double sq = 0.0;
    grad.for_each([&](const std::string&, const Eigen::MatrixXd& m) { sq += m.squaredNorm(); },
                  [&](const std::string&, const Eigen::VectorXd& v) { sq += v.squaredNorm(); });
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) throw ConfigError("non-finite gradient in language-model training");
    const double clip = opt_.clip_norm > 0.0 && norm > opt_.clip_norm ? opt_.clip_norm / norm : 1.0;

    ++t_;
    const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));

    // Walk the four parameter trees in lockstep through their flat visit order.
    std::vector<double*> p_data, g_data, m_data, v_data;
    std::vector<Eigen::Index> sizes;
    auto collect = [&](TransformerParams& tree, std::vector<double*>& out, bool record) {
        tree.for_each(
            [&](const std::string&, Eigen::MatrixXd& m) {
                out.push_back(m.data());
                if (record) sizes.push_back(m.size());
            },
            [&](const std::string&, Eigen::VectorXd& v) {
                out.push_back(v.data());
                if (record) sizes.push_back(v.size());
            });
    };
    collect(params, p_data, true);
    collect(grad, g_data, false);
    collect(m_, m_data, false);
    collect(v_, v_data, false);

    for (std::size_t k = 0; k < sizes.size(); ++k) {
        Eigen::Map<Eigen::ArrayXd> p(p_data[k], sizes[k]), g(g_data[k], sizes[k]), m(m_data[k], sizes[k]),
            v(v_data[k], sizes[k]);
        g *= clip;
        m = opt_.beta1 * m + (1.0 - opt_.beta1) * g;
        v = opt_.beta2 * v + (1.0 - opt_.beta2) * g.square();
        p -= opt_.learning_rate * (m / c1) / ((v / c2).sqrt() + opt_.epsilon);
    }
}

std::vector<double> train_language_model(TinyTransformer& model, const std::vector<std::vector<TokenId>>& corpus,
                                         const LmTrainOptions& options,
                                         const std::function<void(int, double)>& on_epoch) {
    if (corpus.empty()) throw ConfigError("language-model corpus is empty");
    Adam adam(model.config(), options.adam);
    std::vector<std::size_t> order(corpus.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(options.seed);
    std::vector<double> epoch_loss;
    TransformerParams grad;
    for (int epoch = 0; epoch < options.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double total = 0.0;
        for (std::size_t idx : order) {
            total += model.loss_and_gradient(corpus[idx], &grad);
            adam.step(model.params(), grad);
        }
        epoch_loss.push_back(total / static_cast<double>(corpus.size()));
        if (on_epoch) on_epoch(epoch, epoch_loss.back());
    }
    return epoch_loss;
}

}  // namespace specexit
