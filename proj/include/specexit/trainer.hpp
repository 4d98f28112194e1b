#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "specexit/model.hpp"

namespace specexit {

class TrainingError : public std::runtime_error {
public:
    TrainingError(const std::string& what, std::size_t batch_id) : std::runtime_error(what), batch_id(batch_id) {}
    std::size_t batch_id;
};

/// Column-major examples: hidden.col(i) with its gold next token and signal labels.
struct TrainBatch {
    Eigen::MatrixXd hidden;  // D x N
    std::vector<TokenId> gold;
    Eigen::VectorXd conf;
    Eigen::VectorXd prog;
    Eigen::VectorXd rem;  // tokens, >= 0
    std::size_t id = 0;

    Eigen::Index size() const { return hidden.cols(); }
    void validate(Eigen::Index vocab_size) const;
    TrainBatch select(std::span<const Eigen::Index> columns) const;
};

struct LossBreakdown {
    double cls = 0.0;
    double conf = 0.0;
    double prog = 0.0;
    double rem = 0.0;
    double total = 0.0;
};

struct WeightState {
    std::array<double, 3> lambda{1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
    bool degenerate = false;  // every task gradient was zero

    double sum() const { return lambda[0] + lambda[1] + lambda[2]; }
};

/// Mean cross-entropy of logits (V x N) against gold ids.
template <typename Derived>
typename Derived::Scalar loss_cls(const Eigen::MatrixBase<Derived>& logits, std::span<const TokenId> gold) {
    using Scalar = typename Derived::Scalar;
    Scalar total(0);
    for (Eigen::Index i = 0; i < logits.cols(); ++i) {
        const Scalar top = logits.col(i).maxCoeff();
        const Scalar lse = top + std::log((logits.col(i).array() - top).exp().sum());
        total += lse - logits(gold[static_cast<std::size_t>(i)], i);
    }
    return total / static_cast<Scalar>(logits.cols());
}

/// mean (sigmoid(raw) - gold)^2; the confidence and progress losses.
template <typename DerivedRaw, typename DerivedGold>
typename DerivedRaw::Scalar loss_sigmoid_mse(const Eigen::MatrixBase<DerivedRaw>& raw,
                                             const Eigen::MatrixBase<DerivedGold>& gold) {
    using Scalar = typename DerivedRaw::Scalar;
    const auto pred = raw.unaryExpr([](Scalar x) { return sigmoid(x); });
    return (pred - gold).squaredNorm() / static_cast<Scalar>(raw.size());
}

template <typename DerivedRaw, typename DerivedGold>
typename DerivedRaw::Scalar loss_conf(const Eigen::MatrixBase<DerivedRaw>& raw,
                                      const Eigen::MatrixBase<DerivedGold>& gold) {
    return loss_sigmoid_mse(raw, gold);
}

template <typename DerivedRaw, typename DerivedGold>
typename DerivedRaw::Scalar loss_prog(const Eigen::MatrixBase<DerivedRaw>& raw,
                                      const Eigen::MatrixBase<DerivedGold>& gold) {
    return loss_sigmoid_mse(raw, gold);
}

/// mean (raw - log(1 + r))^2: squared logarithmic error with the log taken on the label.
template <typename DerivedRaw, typename DerivedGold>
typename DerivedRaw::Scalar loss_rem(const Eigen::MatrixBase<DerivedRaw>& raw,
                                     const Eigen::MatrixBase<DerivedGold>& gold) {
    using Scalar = typename DerivedRaw::Scalar;
    return (raw - gold.array().log1p().matrix()).squaredNorm() / static_cast<Scalar>(raw.size());
}

/// lambda_j = |g_j| / sum_k |g_k| over the three regression tasks; uniform when all are zero.
WeightState dynamic_weights(const std::array<double, 3>& grad_norms);

/// Gradients of each loss with respect to the head rows it reads.
struct TaskGradients {
    Eigen::MatrixXd cls;                        // V x D, d L_cls / d W_tok
    Eigen::Matrix<double, 3, Eigen::Dynamic> signal;  // row j: d L_j / d W_signal.row(j)

    std::array<double, 3> norms() const;
};

/// Unweighted task losses; total is left at cls + sum of the regression losses.
LossBreakdown evaluate_losses(const DraftHeadd& head, const TrainBatch& batch);
TaskGradients compute_gradients(const DraftHeadd& head, const TrainBatch& batch);

enum class TrainMode { joint, token_only };

struct SgdOptimizer {
    double learning_rate = 1e-2;
};

struct StepResult {
    LossBreakdown loss;  // before the update, weighted by `weights`
    WeightState weights;
};

/// One SGD step on L_cls + sum_j lambda_j L_j with lambda from this batch's gradient norms.
StepResult train_step(const TrainBatch& batch, DraftHeadd& head, const SgdOptimizer& optimizer,
                      TrainMode mode = TrainMode::joint);

struct TrainOptions {
    int epochs = 10;
    double learning_rate = 1e-2;
    std::size_t batch_size = 32;
    std::uint64_t seed = 0;
    TrainMode mode = TrainMode::joint;
};

struct TrainLogRow {
    std::size_t step = 0;
    LossBreakdown loss;
    WeightState weights;
};

struct TrainResult {
    std::vector<TrainLogRow> log;
    bool diverged = false;
    std::size_t failed_batch = 0;
};

/// Shuffled mini-batch SGD over `data`. On a non-finite loss the head is restored to
/// its state before the failing step and training stops.
TrainResult train_head(DraftHeadd& head, const TrainBatch& data, const TrainOptions& options,
                       const std::function<void(const TrainLogRow&)>& on_step = {});

DraftHeadd random_head(Eigen::Index vocab, Eigen::Index dim, double scale, std::uint64_t seed);

struct GradCheckReport {
    double max_rel_error = 0.0;
    double max_abs_error = 0.0;
    double max_cross_task = 0.0;  // largest |finite difference| of a loss w.r.t. rows it does not read
};

/// Central differences of all four losses over every head weight, against the analytic gradients.
GradCheckReport gradient_check(const DraftHeadd& head, const TrainBatch& batch, double epsilon);

}  // namespace specexit
