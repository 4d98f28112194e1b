#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "specexit/model.hpp"

namespace specexit {

/// Deterministic scripted model. Next-token choices come from, in order:
///   1. a prefix trie of registered scripts (exact match on the whole context),
///   2. a last-token transition table,
///   3. a configured fallback token.
/// The chosen token receives probability `prob` under the softmax of the emitted
/// logits; all other tokens share the remainder equally.
class TableModel final : public TargetModel {
public:
    struct Options {
        int vocab_size = 16;
        int hidden_dim = 8;
        TokenId fallback = 0;
        double default_prob = 0.9;
        std::uint64_t seed = 0;  // fixes the per-token hidden vectors
    };

    explicit TableModel(Options options);

    using TargetModel::forward;

    int vocab_size() const override { return options_.vocab_size; }
    int hidden_dim() const override { return options_.hidden_dim; }
    std::unique_ptr<TargetCache> make_cache() const override;
    ForwardOutput forward(std::span<const TokenId> context, TargetCache& cache) const override;

    /// Registers every prefix of `sequence` with its scripted successor.
    /// probs[i] (optional) is the probability of sequence[i + 1] after prefix [0, i];
    /// hiddens (optional, D x len) column i is the hidden state at position i.
    void add_script(std::span<const TokenId> sequence, std::span<const double> probs = {},
                    const Eigen::MatrixXd* hiddens = nullptr);
    /// Like add_script, but the first `given` tokens are supplied from outside (a prompt,
    /// a forced marker): only the successors of longer prefixes are registered.
    void add_branch(std::span<const TokenId> sequence, std::size_t given, std::span<const double> probs = {},
                    const Eigen::MatrixXd* hiddens = nullptr);
    void set_transition(TokenId from, TokenId to, std::optional<double> prob = std::nullopt);

    /// Greedy successor of the whole context.
    TokenId successor(std::span<const TokenId> context) const;

    /// Re-targets a `rate` fraction of scripted successors and transitions to a random
    /// other token. Used to derive imperfect drafts from a target script.
    void perturb(double rate, std::uint64_t seed);

    /// Fixed per-token hidden vectors (D x V) used wherever no script hidden is set.
    const Eigen::MatrixXd& token_hidden() const { return token_hidden_; }
    std::size_t script_nodes() const { return nodes_.size(); }

    /// Walk state over the trie; node < 0 means the context left the trie.
    struct Cursor {
        int node = 0;
        TokenId last = -1;
    };
    Cursor advance(Cursor cursor, TokenId token) const;
    TokenId next_token(const Cursor& cursor) const;

private:
    struct Node {
        std::vector<std::pair<TokenId, int>> children;  // sorted by token
        TokenId next = -1;
        double prob = 0.0;
        int hidden = -1;
    };

    void insert(std::span<const TokenId> sequence, std::span<const double> probs, const Eigen::MatrixXd* hiddens,
                std::size_t given);
    void check_token(TokenId token) const;
    double check_prob(double prob) const;
    int child(int node, TokenId token) const;
    int ensure_child(int node, TokenId token);
    void emit(const Cursor& cursor, Eigen::Ref<Eigen::VectorXd> logits, Eigen::Ref<Eigen::VectorXd> hidden) const;

    Options options_;
    std::vector<Node> nodes_;
    std::vector<Eigen::VectorXd> hiddens_;
    std::vector<TokenId> transition_;
    std::vector<double> transition_prob_;
    Eigen::MatrixXd token_hidden_;
};

}  // namespace specexit
