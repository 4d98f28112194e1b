#pragma once

#include <memory>

#include "specexit/model.hpp"
#include "specexit/table_model.hpp"

namespace specexit {

/// Draft whose candidates come from a scripted TableModel and whose signals come
/// from a DraftHead applied to the target hidden state.
class ScriptedDraft final : public DraftModel {
public:
    ScriptedDraft(std::shared_ptr<const TableModel> script, DraftHeadd head);

    const DraftHeadd& head() const override { return head_; }
    Proposal propose(const HiddenVector& last_hidden, std::span<const TokenId> context, int depth) const override;

private:
    std::shared_ptr<const TableModel> script_;
    DraftHeadd head_;
};

/// Hidden-state-reuse draft: rolls the target hidden state forward with a linear
/// predictor h' = A h + E[token] + b and reads candidates off the head's token rows.
class FeatureDraft final : public DraftModel {
public:
    FeatureDraft(Eigen::MatrixXd transition, Eigen::MatrixXd embedding, Eigen::VectorXd bias, DraftHeadd head);

    const DraftHeadd& head() const override { return head_; }
    Proposal propose(const HiddenVector& last_hidden, std::span<const TokenId> context, int depth) const override;

    HiddenVector predict_next_hidden(const HiddenVector& h, TokenId token) const;

    const Eigen::MatrixXd& transition() const { return transition_; }
    const Eigen::MatrixXd& embedding() const { return embedding_; }
    const Eigen::VectorXd& bias() const { return bias_; }

    /// Ridge least squares fit of the predictor on consecutive target states:
    /// column j of `next_hidden` should follow `hidden` column j after reading tokens[j].
    static FeatureDraft fit(const Eigen::MatrixXd& hidden, std::span<const TokenId> tokens,
                            const Eigen::MatrixXd& next_hidden, int vocab_size, DraftHeadd head, double ridge = 1e-3);

private:
    Eigen::MatrixXd transition_;  // D x D
    Eigen::MatrixXd embedding_;   // D x V
    Eigen::VectorXd bias_;        // D
    DraftHeadd head_;
};

}  // namespace specexit
