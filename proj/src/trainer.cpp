#include "specexit/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace specexit {

void TrainBatch::validate(Eigen::Index vocab_size) const {
    const Eigen::Index n = size();
    if (n < 1) throw ConfigError("training batch must hold at least one example");
    if (static_cast<Eigen::Index>(gold.size()) != n || conf.size() != n || prog.size() != n || rem.size() != n) {
        throw ConfigError("training batch columns disagree in length");
    }
    for (TokenId t : gold) {
        if (t < 0 || t >= vocab_size) throw ConfigError("gold token outside vocabulary");
    }
    if ((conf.array() < 0.0).any() || (conf.array() > 1.0).any() || (prog.array() < 0.0).any() ||
        (prog.array() > 1.0).any() || (rem.array() < 0.0).any()) {
        throw ConfigError("signal labels out of range");
    }
}

TrainBatch TrainBatch::select(std::span<const Eigen::Index> columns) const {
    TrainBatch out;
    const auto n = static_cast<Eigen::Index>(columns.size());
    out.hidden.resize(hidden.rows(), n);
    out.conf.resize(n);
    out.prog.resize(n);
    out.rem.resize(n);
    out.gold.resize(columns.size());
    for (Eigen::Index j = 0; j < n; ++j) {
        const Eigen::Index c = columns[static_cast<std::size_t>(j)];
        out.hidden.col(j) = hidden.col(c);
        out.gold[static_cast<std::size_t>(j)] = gold[static_cast<std::size_t>(c)];
        out.conf(j) = conf(c);
        out.prog(j) = prog(c);
        out.rem(j) = rem(c);
    }
    return out;
}

WeightState dynamic_weights(const std::array<double, 3>& grad_norms) {
    WeightState w;
    const double total = grad_norms[0] + grad_norms[1] + grad_norms[2];
    if (!(total > 0.0)) {
        w.degenerate = true;
        return w;
    }
    for (int j = 0; j < 3; ++j) w.lambda[j] = grad_norms[j] / total;
    return w;
}

std::array<double, 3> TaskGradients::norms() const {
    return {signal.row(kConfidence).norm(), signal.row(kProgress).norm(), signal.row(kRemaining).norm()};
}

LossBreakdown evaluate_losses(const DraftHeadd& head, const TrainBatch& batch) {
    const Eigen::MatrixXd logits = head.token * batch.hidden;
    const Eigen::Matrix<double, 3, Eigen::Dynamic> raw = head.signal * batch.hidden;
    LossBreakdown l;
    l.cls = loss_cls(logits, batch.gold);
    l.conf = loss_conf(raw.row(kConfidence).transpose(), batch.conf);
    l.prog = loss_prog(raw.row(kProgress).transpose(), batch.prog);
    l.rem = loss_rem(raw.row(kRemaining).transpose(), batch.rem);
    l.total = l.cls + l.conf + l.prog + l.rem;
    return l;
}

TaskGradients compute_gradients(const DraftHeadd& head, const TrainBatch& batch) {
    const Eigen::Index n = batch.size();
    const double inv_n = 1.0 / static_cast<double>(n);

    // Cross-entropy: (softmax - onehot) h^T / N.
    Eigen::MatrixXd delta = head.token * batch.hidden;
    for (Eigen::Index i = 0; i < n; ++i) {
        auto col = delta.col(i);
        col.array() = (col.array() - col.maxCoeff()).exp();
        col /= col.sum();
        col(batch.gold[static_cast<std::size_t>(i)]) -= 1.0;
    }

    const Eigen::Matrix<double, 3, Eigen::Dynamic> raw = head.signal * batch.hidden;
    Eigen::Matrix<double, 3, Eigen::Dynamic> coef(3, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double sc = sigmoid(raw(kConfidence, i));
        const double sp = sigmoid(raw(kProgress, i));
        // d/dz (sigmoid(z) - y)^2 = 2 (sigmoid(z) - y) sigmoid(z) (1 - sigmoid(z))
        coef(kConfidence, i) = 2.0 * (sc - batch.conf(i)) * sc * (1.0 - sc);
        coef(kProgress, i) = 2.0 * (sp - batch.prog(i)) * sp * (1.0 - sp);
        coef(kRemaining, i) = 2.0 * (raw(kRemaining, i) - std::log1p(batch.rem(i)));
    }

    TaskGradients g;
    g.cls = delta * batch.hidden.transpose() * inv_n;
    g.signal = coef * batch.hidden.transpose() * inv_n;
    return g;
}

StepResult train_step(const TrainBatch& batch, DraftHeadd& head, const SgdOptimizer& optimizer, TrainMode mode) {
    StepResult result;
    result.loss = evaluate_losses(head, batch);
    const TaskGradients grads = compute_gradients(head, batch);

    if (mode == TrainMode::joint) {
        result.weights = dynamic_weights(grads.norms());
    } else {
        result.weights.lambda = {0.0, 0.0, 0.0};
    }
    const auto& lambda = result.weights.lambda;
    result.loss.total = result.loss.cls + lambda[0] * result.loss.conf + lambda[1] * result.loss.prog +
                        lambda[2] * result.loss.rem;
    if (!std::isfinite(result.loss.total) || !grads.cls.allFinite() || !grads.signal.allFinite()) {
        throw TrainingError("non-finite loss in batch " + std::to_string(batch.id), batch.id);
    }

    const double lr = optimizer.learning_rate;
    head.token.noalias() -= lr * grads.cls;
    for (int j = 0; j < kNumSignals; ++j) {
        head.signal.row(j) -= (lr * lambda[static_cast<std::size_t>(j)]) * grads.signal.row(j);
    }
    return result;
}

TrainResult train_head(DraftHeadd& head, const TrainBatch& data, const TrainOptions& options,
                       const std::function<void(const TrainLogRow&)>& on_step) {
    data.validate(head.vocab_size());
    if (options.batch_size < 1) throw ConfigError("batch size must be >= 1");

    std::vector<Eigen::Index> order(static_cast<std::size_t>(data.size()));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::mt19937_64 rng(options.seed);
    const SgdOptimizer sgd{options.learning_rate};

    TrainResult result;
    std::size_t step = 0;
    for (int epoch = 0; epoch < options.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
            const std::size_t stop = std::min(order.size(), start + options.batch_size);
            TrainBatch batch = data.select(std::span(order).subspan(start, stop - start));
            batch.id = step;
            const DraftHeadd stable = head;
            try {
                const StepResult r = train_step(batch, head, sgd, options.mode);
                TrainLogRow row{step, r.loss, r.weights};
                result.log.push_back(row);
                if (on_step) on_step(row);
            } catch (const TrainingError& e) {
                head = stable;
                result.diverged = true;
                result.failed_batch = e.batch_id;
                return result;
            }
            ++step;
        }
    }
    return result;
}

DraftHeadd random_head(Eigen::Index vocab, Eigen::Index dim, double scale, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, scale);
    DraftHeadd head(vocab, dim);
    head.token = head.token.unaryExpr([&](double) { return normal(rng); });
    head.signal = head.signal.unaryExpr([&](double) { return normal(rng); });
    return head;
}

GradCheckReport gradient_check(const DraftHeadd& head, const TrainBatch& batch, double epsilon) {
    if (!(epsilon >= 1e-6 && epsilon <= 1e-3)) throw ConfigError("gradient check epsilon must lie in [1e-6, 1e-3]");
    const TaskGradients analytic = compute_gradients(head, batch);

    // Index 0..2 are the regression tasks in signal-row order, 3 is cross-entropy.
    auto task_losses = [&](const DraftHeadd& h) {
        const LossBreakdown l = evaluate_losses(h, batch);
        return std::array<double, 4>{l.conf, l.prog, l.rem, l.cls};
    };

    GradCheckReport report;
    auto record = [&](double exact, double numeric) {
        const double abs_err = std::abs(exact - numeric);
        const double scale = std::max({std::abs(exact), std::abs(numeric), 1e-6});
        report.max_abs_error = std::max(report.max_abs_error, abs_err);
        report.max_rel_error = std::max(report.max_rel_error, abs_err / scale);
    };

    DraftHeadd probe = head;
    auto central = [&](double& weight) {
        const double saved = weight;
        weight = saved + epsilon;
        const auto up = task_losses(probe);
        weight = saved - epsilon;
        const auto down = task_losses(probe);
        weight = saved;
        std::array<double, 4> d{};
        for (std::size_t t = 0; t < 4; ++t) d[t] = (up[t] - down[t]) / (2.0 * epsilon);
        return d;
    };

    for (int row = 0; row < kNumSignals; ++row) {
        for (Eigen::Index col = 0; col < head.signal.cols(); ++col) {
            const auto d = central(probe.signal(row, col));
            for (int task = 0; task < 4; ++task) {
                if (task == row) {
                    record(analytic.signal(row, col), d[static_cast<std::size_t>(task)]);
                } else {
                    report.max_cross_task = std::max(report.max_cross_task, std::abs(d[static_cast<std::size_t>(task)]));
                }
            }
        }
    }
    for (Eigen::Index row = 0; row < head.token.rows(); ++row) {
        for (Eigen::Index col = 0; col < head.token.cols(); ++col) {
            const auto d = central(probe.token(row, col));
            record(analytic.cls(row, col), d[3]);
            for (std::size_t task = 0; task < 3; ++task) {
                report.max_cross_task = std::max(report.max_cross_task, std::abs(d[task]));
            }
        }
    }
    return report;
}

}  // namespace specexit
