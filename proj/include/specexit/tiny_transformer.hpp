#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "specexit/model.hpp"

namespace specexit {

struct TransformerConfig {
    int vocab_size = 64;
    int dim = 64;
    int layers = 2;
    int heads = 4;
    int context = 256;
    int mlp_mult = 4;
    std::uint64_t seed = 0;

    void validate() const;
};

struct LayerParams {
    Eigen::VectorXd ln1_g, ln1_b;
    Eigen::MatrixXd wq, wk, wv, wo;  // D x D
    Eigen::VectorXd ln2_g, ln2_b;
    Eigen::MatrixXd w1;  // F x D
    Eigen::VectorXd b1;
    Eigen::MatrixXd w2;  // D x F
    Eigen::VectorXd b2;
};

struct TransformerParams {
    Eigen::MatrixXd tok_emb;  // D x V
    Eigen::MatrixXd pos_emb;  // D x context
    std::vector<LayerParams> layer;
    Eigen::VectorXd lnf_g, lnf_b;
    Eigen::MatrixXd w_out;  // V x D
    Eigen::VectorXd b_out;

    static TransformerParams zeros_like(const TransformerConfig& cfg);

    /// Visits every parameter array with a stable dotted name, e.g. "layer.0.wq".
    void for_each(const std::function<void(const std::string&, Eigen::MatrixXd&)>& matrix,
                  const std::function<void(const std::string&, Eigen::VectorXd&)>& vector);
    void for_each(const std::function<void(const std::string&, const Eigen::MatrixXd&)>& matrix,
                  const std::function<void(const std::string&, const Eigen::VectorXd&)>& vector) const;
    std::size_t count() const;
};

/// Pre-LN decoder-only transformer with learned positions and a GELU MLP. The hidden
/// state exposed to draft heads is the final layer-norm output that the LM head reads.
class TinyTransformer final : public TargetModel {
public:
    explicit TinyTransformer(TransformerConfig cfg);
    TinyTransformer(TransformerConfig cfg, TransformerParams params);

    using TargetModel::forward;

    int vocab_size() const override { return cfg_.vocab_size; }
    int hidden_dim() const override { return cfg_.dim; }
    std::unique_ptr<TargetCache> make_cache() const override;
    ForwardOutput forward(std::span<const TokenId> context, TargetCache& cache) const override;

    /// Mean next-token cross-entropy over `tokens` (predicting tokens[1:] from the
    /// prefixes) and its gradient with respect to every parameter.
    double loss_and_gradient(std::span<const TokenId> tokens, TransformerParams* grad) const;

    const TransformerConfig& config() const { return cfg_; }
    const TransformerParams& params() const { return params_; }
    TransformerParams& params() { return params_; }

private:
    TransformerConfig cfg_;
    TransformerParams params_;
};

struct AdamOptions {
    double learning_rate = 3e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double clip_norm = 1.0;  // global gradient norm clip; <= 0 disables
};

class Adam {
public:
    Adam(const TransformerConfig& cfg, AdamOptions options);
    void step(TransformerParams& params, TransformerParams& grad);
    std::size_t steps() const { return t_; }

private:
    AdamOptions opt_;
    TransformerParams m_, v_;
    std::size_t t_ = 0;
};

struct LmTrainOptions {
    int epochs = 20;
    std::uint64_t seed = 0;
    AdamOptions adam;
};

/// Sequence-level Adam training; returns the mean loss of each epoch.
std::vector<double> train_language_model(TinyTransformer& model, const std::vector<std::vector<TokenId>>& corpus,
                                         const LmTrainOptions& options,
                                         const std::function<void(int, double)>& on_epoch = {});

}  // namespace specexit
