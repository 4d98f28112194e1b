#include "specexit/table_model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace specexit {

namespace {

class TableCache final : public TargetCache {
public:
    std::size_t size() const override { return cursors.size(); }
    void truncate(std::size_t n) override {
        if (n < cursors.size()) cursors.resize(n);
    }

    std::vector<TableModel::Cursor> cursors;
};

}  // namespace

TableModel::TableModel(Options options) : options_(options), nodes_(1) {
    if (options_.vocab_size < static_cast<int>(Vocabulary::kMinSize) || options_.hidden_dim < 1) {
        throw ConfigError("table model needs vocab_size >= 8 and hidden_dim >= 1");
    }
    check_token(options_.fallback);
    options_.default_prob = check_prob(options_.default_prob);
    transition_.assign(static_cast<std::size_t>(options_.vocab_size), -1);
    transition_prob_.assign(static_cast<std::size_t>(options_.vocab_size), options_.default_prob);

    std::mt19937_64 rng(options_.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    token_hidden_.resize(options_.hidden_dim, options_.vocab_size);
    for (Eigen::Index c = 0; c < token_hidden_.cols(); ++c) {
        for (Eigen::Index r = 0; r < token_hidden_.rows(); ++r) token_hidden_(r, c) = normal(rng);
    }
}

void TableModel::check_token(TokenId token) const {
    if (token < 0 || token >= options_.vocab_size) {
        throw ConfigError("token " + std::to_string(token) + " outside table vocabulary");
    }
}

double TableModel::check_prob(double prob) const {
    if (!(prob > 1.0 / options_.vocab_size) || !(prob <= 1.0)) {
        throw ConfigError("scripted probability must lie in (1/V, 1]");
    }
    return std::min(prob, 1.0 - 1e-12);
}

int TableModel::child(int node, TokenId token) const {
    const auto& kids = nodes_[static_cast<std::size_t>(node)].children;
    auto it = std::lower_bound(kids.begin(), kids.end(), token,
                               [](const auto& kid, TokenId t) { return kid.first < t; });
    return (it != kids.end() && it->first == token) ? it->second : -1;
}

int TableModel::ensure_child(int node, TokenId token) {
    if (int existing = child(node, token); existing >= 0) return existing;
    const int created = static_cast<int>(nodes_.size());
    nodes_.emplace_back();
    auto& kids = nodes_[static_cast<std::size_t>(node)].children;
    auto it = std::lower_bound(kids.begin(), kids.end(), token,
                               [](const auto& kid, TokenId t) { return kid.first < t; });
    kids.insert(it, {token, created});
    return created;
}

void TableModel::add_script(std::span<const TokenId> sequence, std::span<const double> probs,
                            const Eigen::MatrixXd* hiddens) {
    insert(sequence, probs, hiddens, 0);
}

void TableModel::add_branch(std::span<const TokenId> sequence, std::size_t given, std::span<const double> probs,
                            const Eigen::MatrixXd* hiddens) {
    if (given > sequence.size()) throw ConfigError("branch has fewer tokens than its given prefix");
    insert(sequence, probs, hiddens, given);
}

void TableModel::insert(std::span<const TokenId> sequence, std::span<const double> probs,
                        const Eigen::MatrixXd* hiddens, std::size_t given) {
    if (!probs.empty() && probs.size() + 1 < sequence.size()) {
        throw ConfigError("script probabilities must cover every successor");
    }
    if (hiddens && (hiddens->rows() != options_.hidden_dim ||
                    hiddens->cols() < static_cast<Eigen::Index>(sequence.size()))) {
        throw ConfigError("script hidden matrix must be D x len(sequence)");
    }
    int node = 0;
    for (std::size_t i = 0; i < sequence.size(); ++i) {
        check_token(sequence[i]);
        node = ensure_child(node, sequence[i]);
        auto& n = nodes_[static_cast<std::size_t>(node)];
        if (hiddens) {
            const Eigen::VectorXd h = hiddens->col(static_cast<Eigen::Index>(i));
            if (n.hidden < 0) {
                n.hidden = static_cast<int>(hiddens_.size());
                hiddens_.push_back(h);
            } else if (hiddens_[static_cast<std::size_t>(n.hidden)] != h) {
                throw ConfigError("conflicting hidden state for a shared script prefix");
            }
        }
        if (i + 1 < sequence.size() && i + 1 >= given) {
            const TokenId next = sequence[i + 1];
            check_token(next);
            const double prob = probs.empty() ? options_.default_prob : check_prob(probs[i]);
            if (n.next >= 0 && n.next != next) {
                throw ConfigError("conflicting successor for a shared script prefix");
            }
            n.next = next;
            n.prob = prob;
        }
    }
}

void TableModel::set_transition(TokenId from, TokenId to, std::optional<double> prob) {
    check_token(from);
    check_token(to);
    transition_[static_cast<std::size_t>(from)] = to;
    transition_prob_[static_cast<std::size_t>(from)] = prob ? check_prob(*prob) : options_.default_prob;
}

TableModel::Cursor TableModel::advance(Cursor cursor, TokenId token) const {
    check_token(token);
    cursor.node = cursor.node >= 0 ? child(cursor.node, token) : -1;
    cursor.last = token;
    return cursor;
}

TokenId TableModel::next_token(const Cursor& cursor) const {
    if (cursor.node >= 0) {
        const auto& n = nodes_[static_cast<std::size_t>(cursor.node)];
        if (n.next >= 0) return n.next;
    }
    if (cursor.last >= 0) {
        const TokenId t = transition_[static_cast<std::size_t>(cursor.last)];
        if (t >= 0) return t;
    }
    return options_.fallback;
}

TokenId TableModel::successor(std::span<const TokenId> context) const {
    Cursor cursor;
    for (TokenId t : context) cursor = advance(cursor, t);
    return next_token(cursor);
}

void TableModel::emit(const Cursor& cursor, Eigen::Ref<Eigen::VectorXd> logits,
                      Eigen::Ref<Eigen::VectorXd> hidden) const {
    const Node* node = cursor.node >= 0 ? &nodes_[static_cast<std::size_t>(cursor.node)] : nullptr;
    TokenId next = options_.fallback;
    double prob = options_.default_prob;
    if (node && node->next >= 0) {
        next = node->next;
        prob = node->prob;
    } else if (cursor.last >= 0 && transition_[static_cast<std::size_t>(cursor.last)] >= 0) {
        next = transition_[static_cast<std::size_t>(cursor.last)];
        prob = transition_prob_[static_cast<std::size_t>(cursor.last)];
    }
    // softmax gives `next` probability prob when its logit is ln(prob (V - 1) / (1 - prob)).
    logits.setZero();
    logits(next) = std::log(prob * (options_.vocab_size - 1) / (1.0 - prob));

    if (node && node->hidden >= 0) {
        hidden = hiddens_[static_cast<std::size_t>(node->hidden)];
    } else {
        hidden = token_hidden_.col(cursor.last);
    }
}

std::unique_ptr<TargetCache> TableModel::make_cache() const { return std::make_unique<TableCache>(); }

ForwardOutput TableModel::forward(std::span<const TokenId> context, TargetCache& cache) const {
    auto& table_cache = dynamic_cast<TableCache&>(cache);
    const std::size_t start = table_cache.size();
    if (start > context.size()) {
        throw UsageError("cache holds more positions than the context");
    }
    const auto n = static_cast<Eigen::Index>(context.size() - start);
    ForwardOutput out{Eigen::MatrixXd(options_.vocab_size, n), Eigen::MatrixXd(options_.hidden_dim, n)};
    Cursor cursor = start == 0 ? Cursor{} : table_cache.cursors.back();
    for (Eigen::Index j = 0; j < n; ++j) {
        cursor = advance(cursor, context[start + static_cast<std::size_t>(j)]);
        table_cache.cursors.push_back(cursor);
        emit(cursor, out.logits.col(j), out.hidden.col(j));
    }
    return out;
}

void TableModel::perturb(double rate, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    std::uniform_int_distribution<TokenId> shift(1, options_.vocab_size - 1);
    auto retarget = [&](TokenId t) { return static_cast<TokenId>((t + shift(rng)) % options_.vocab_size); };
    for (auto& node : nodes_) {
        if (node.next >= 0 && coin(rng) < rate) node.next = retarget(node.next);
    }
    for (auto& t : transition_) {
        if (t >= 0 && coin(rng) < rate) t = retarget(t);
    }
}

}  // namespace specexit
