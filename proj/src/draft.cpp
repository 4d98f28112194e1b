#include "specexit/draft.hpp"

namespace specexit {

ScriptedDraft::ScriptedDraft(std::shared_ptr<const TableModel> script, DraftHeadd head)
    : script_(std::move(script)), head_(std::move(head)) {
    if (!script_) throw ConfigError("scripted draft needs a script");
    if (head_.signal.cols() != script_->hidden_dim()) {
        throw ConfigError("draft head dimension does not match the script hidden dimension");
    }
}

Proposal ScriptedDraft::propose(const HiddenVector& last_hidden, std::span<const TokenId> context, int depth) const {
    if (depth < 1) throw UsageError("draft depth must be >= 1");
    Proposal out;
    out.signals = project_signals<double>(head_, last_hidden);
    TableModel::Cursor cursor;
    for (TokenId t : context) cursor = script_->advance(cursor, t);
    out.candidates.reserve(static_cast<std::size_t>(depth));
    for (int k = 0; k < depth; ++k) {
        const TokenId next = script_->next_token(cursor);
        out.candidates.push_back(next);
        cursor = script_->advance(cursor, next);
    }
    return out;
}

FeatureDraft::FeatureDraft(Eigen::MatrixXd transition, Eigen::MatrixXd embedding, Eigen::VectorXd bias,
                           DraftHeadd head)
    : transition_(std::move(transition)), embedding_(std::move(embedding)), bias_(std::move(bias)),
      head_(std::move(head)) {
    const auto d = head_.dim();
    if (transition_.rows() != d || transition_.cols() != d || embedding_.rows() != d ||
        embedding_.cols() != head_.vocab_size() || bias_.size() != d) {
        throw ConfigError("feature draft parameter shapes do not match the head");
    }
}

HiddenVector FeatureDraft::predict_next_hidden(const HiddenVector& h, TokenId token) const {
    return transition_ * h + embedding_.col(token) + bias_;
}

Proposal FeatureDraft::propose(const HiddenVector& last_hidden, std::span<const TokenId> context, int depth) const {
    if (depth < 1) throw UsageError("draft depth must be >= 1");
    if (context.empty()) throw UsageError("feature draft needs at least one context token");
    Proposal out;
    out.signals = project_signals<double>(head_, last_hidden);
    HiddenVector h = last_hidden;
    TokenId token = context.back();
    for (int k = 0; k < depth; ++k) {
        h = predict_next_hidden(h, token);
        Eigen::Index best = 0;
        (head_.token * h).maxCoeff(&best);
        token = static_cast<TokenId>(best);
        out.candidates.push_back(token);
    }
    return out;
}

FeatureDraft FeatureDraft::fit(const Eigen::MatrixXd& hidden, std::span<const TokenId> tokens,
                               const Eigen::MatrixXd& next_hidden, int vocab_size, DraftHeadd head, double ridge) {
    const Eigen::Index d = hidden.rows();
    const Eigen::Index n = hidden.cols();
    if (static_cast<Eigen::Index>(tokens.size()) != n || next_hidden.cols() != n || next_hidden.rows() != d) {
        throw ConfigError("feature draft fit needs matching hidden/token/next columns");
    }
    // Design matrix rows: [h; one_hot(token); 1].
    const Eigen::Index k = d + vocab_size + 1;
    Eigen::MatrixXd x = Eigen::MatrixXd::Zero(k, n);
    x.topRows(d) = hidden;
    for (Eigen::Index j = 0; j < n; ++j) {
        x(d + tokens[static_cast<std::size_t>(j)], j) = 1.0;
        x(k - 1, j) = 1.0;
    }
    Eigen::MatrixXd gram = x * x.transpose();
    gram.diagonal().array() += ridge;
    const Eigen::MatrixXd coef = gram.ldlt().solve(x * next_hidden.transpose()).transpose();  // d x k
    return FeatureDraft(coef.leftCols(d), coef.middleCols(d, vocab_size), coef.col(k - 1), std::move(head));
}

}  // namespace specexit
