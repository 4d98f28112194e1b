#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "specexit/seq.hpp"

namespace specexit {

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

using HiddenVector = Eigen::VectorXd;

/// Row order of the signal block of a DraftHead.
enum Signal : int { kConfidence = 0, kProgress = 1, kRemaining = 2 };
inline constexpr int kNumSignals = 3;

/// Extended output projection: V token rows plus three signal rows that read the
/// same hidden vector but occupy separate output coordinates.
template <typename Scalar>
struct DraftHead {
    MatrixX<Scalar> token;                           // V x D
    Eigen::Matrix<Scalar, 3, Eigen::Dynamic> signal;  // 3 x D: confidence, progress, remaining

    DraftHead() = default;
    DraftHead(Eigen::Index vocab, Eigen::Index dim)
        : token(MatrixX<Scalar>::Zero(vocab, dim)), signal(Eigen::Matrix<Scalar, 3, Eigen::Dynamic>::Zero(3, dim)) {}

    Eigen::Index vocab_size() const { return token.rows(); }
    Eigen::Index dim() const { return token.cols(); }

    auto confidence_row() { return signal.row(kConfidence); }
    auto progress_row() { return signal.row(kProgress); }
    auto remaining_row() { return signal.row(kRemaining); }

    bool all_finite() const { return token.allFinite() && signal.allFinite(); }
};

using DraftHeadd = DraftHead<double>;

template <typename Scalar>
struct SignalPrediction {
    Scalar conf_raw{0};
    Scalar prog_raw{0};
    Scalar rem_raw{0};
};

/// Decoded signals: confidence and progress in [0, 1], remaining in tokens.
struct SignalTriple {
    double confidence = 0.0;
    double progress = 0.0;
    double remaining = 0.0;

    std::array<double, 3> as_array() const { return {confidence, progress, remaining}; }
    static SignalTriple from_array(const std::array<double, 3>& v) { return {v[0], v[1], v[2]}; }
};

template <typename Scalar>
struct HeadOutput {
    VectorX<Scalar> logits;
    SignalPrediction<Scalar> pred;
};

template <typename Scalar>
Scalar sigmoid(Scalar x) {
    using std::exp;
    if (x >= Scalar(0)) return Scalar(1) / (Scalar(1) + exp(-x));
    const Scalar e = exp(x);
    return e / (Scalar(1) + e);
}

template <typename Scalar, typename Derived>
SignalPrediction<Scalar> project_signals(const DraftHead<Scalar>& head, const Eigen::MatrixBase<Derived>& h) {
    if (h.size() != head.signal.cols()) {
        throw ConfigError("hidden dimension " + std::to_string(h.size()) + " does not match head dimension " +
                          std::to_string(head.signal.cols()));
    }
    const Eigen::Matrix<Scalar, 3, 1> s = head.signal * h;
    return {s(kConfidence), s(kProgress), s(kRemaining)};
}

/// logits = W_tok h, raw signals = W_signal h.
template <typename Scalar, typename Derived>
HeadOutput<Scalar> head_project(const DraftHead<Scalar>& head, const Eigen::MatrixBase<Derived>& h) {
    if (h.size() != head.token.cols() || head.token.cols() != head.signal.cols()) {
        throw ConfigError("hidden dimension " + std::to_string(h.size()) + " does not match head dimension " +
                          std::to_string(head.token.cols()));
    }
    return {head.token * h, project_signals(head, h)};
}

template <typename Scalar>
SignalTriple decode_signals(const SignalPrediction<Scalar>& pred) {
    const double rem = std::expm1(static_cast<double>(pred.rem_raw));
    return {static_cast<double>(sigmoid(pred.conf_raw)), static_cast<double>(sigmoid(pred.prog_raw)),
            std::clamp(rem, 0.0, std::numeric_limits<double>::max())};
}

/// Per-position outputs of a target forward. Column j belongs to the j-th newly
/// processed position.
struct ForwardOutput {
    Eigen::MatrixXd logits;  // V x n
    Eigen::MatrixXd hidden;  // D x n

    Eigen::Index positions() const { return logits.cols(); }
    TokenId argmax(Eigen::Index col) const;
};

/// Per-position state a target model keeps between incremental forwards.
class TargetCache {
public:
    virtual ~TargetCache() = default;
    virtual std::size_t size() const = 0;
    /// Drops every position at index >= n.
    virtual void truncate(std::size_t n) = 0;
};

class TargetModel {
public:
    virtual ~TargetModel() = default;

    virtual int vocab_size() const = 0;
    virtual int hidden_dim() const = 0;
    virtual std::unique_ptr<TargetCache> make_cache() const = 0;

    /// Processes context[cache.size():] and appends those positions to the cache.
    /// The cached positions must hold the leading tokens of `context`.
    virtual ForwardOutput forward(std::span<const TokenId> context, TargetCache& cache) const = 0;

    /// Uncached forward over the whole context.
    ForwardOutput forward(std::span<const TokenId> context) const;
};

struct Proposal {
    std::vector<TokenId> candidates;
    SignalPrediction<double> signals;
};

class DraftModel {
public:
    virtual ~DraftModel() = default;

    virtual const DraftHeadd& head() const = 0;

    /// Greedy proposal of `depth` tokens continuing `context`. `last_hidden` is the
    /// target hidden state of the last processed position; the signal prediction is
    /// taken from it before any candidate is drafted.
    virtual Proposal propose(const HiddenVector& last_hidden, std::span<const TokenId> context, int depth) const = 0;
};

/// Probability of each realized token under softmax(logits column).
double softmax_probability(const Eigen::Ref<const Eigen::VectorXd>& logits, TokenId token);

}  // namespace specexit
