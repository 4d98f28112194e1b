#include "specexit/model.hpp"

namespace specexit {

TokenId ForwardOutput::argmax(Eigen::Index col) const {
    Eigen::Index best = 0;
    logits.col(col).maxCoeff(&best);
    return static_cast<TokenId>(best);
}

ForwardOutput TargetModel::forward(std::span<const TokenId> context) const {
    auto cache = make_cache();
    return forward(context, *cache);
}

double softmax_probability(const Eigen::Ref<const Eigen::VectorXd>& logits, TokenId token) {
    const double top = logits.maxCoeff();
    const double denom = (logits.array() - top).exp().sum();
    return std::exp(logits(token) - top) / denom;
}

}  // namespace specexit
