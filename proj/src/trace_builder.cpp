#include "specexit/trace_builder.hpp"

#include <algorithm>
#include <cmath>

namespace specexit {

GreedyAnswerOracle::GreedyAnswerOracle(const TargetModel& model, TokenId eos, std::size_t max_answer_tokens)
    : model_(model), eos_(eos), max_answer_tokens_(max_answer_tokens) {}

std::vector<TokenId> GreedyAnswerOracle::check(std::span<const TokenId> prompt,
                                               std::span<const TokenId> reasoning_prefix,
                                               const MarkerSet& markers) const {
    std::vector<TokenId> context = thinking_prompt(prompt, markers);
    context.insert(context.end(), reasoning_prefix.begin(), reasoning_prefix.end());
    context.push_back(markers.think_close);

    auto cache = model_.make_cache();
    std::vector<TokenId> answer;
    while (answer.size() < max_answer_tokens_) {
        const ForwardOutput out = model_.forward(context, *cache);
        const TokenId next = out.argmax(out.positions() - 1);
        if (next == eos_) break;
        answer.push_back(next);
        context.push_back(next);
    }
    return answer;
}

ThinkSpan extract_think_span(std::span<const TokenId> full_output, const MarkerSet& markers) {
    const auto count = [&](TokenId t) { return std::count(full_output.begin(), full_output.end(), t); };
    if (count(markers.think_open) != 1 || count(markers.think_close) != 1) {
        throw MalformedTraceError("output must contain exactly one think_open and one think_close");
    }
    const auto open = std::find(full_output.begin(), full_output.end(), markers.think_open);
    const auto close = std::find(full_output.begin(), full_output.end(), markers.think_close);
    if (close < open) throw MalformedTraceError("think_close precedes think_open");
    return {{open + 1, close}, {close + 1, full_output.end()}};
}

std::size_t minimal_prefix_search(const ReasoningTrace& trace, const AnswerOracle& oracle,
                                  std::span<const TokenId> reference_answer, const MarkerSet& markers) {
    if (trace.paragraph_ends.empty()) throw UsageError("minimal_prefix_search needs at least one paragraph");
    const std::span<const TokenId> reasoning(trace.reasoning);
    for (std::size_t k = 0; k < trace.paragraph_ends.size(); ++k) {
        const auto prefix = reasoning.first(trace.paragraph_ends[k] + 1);
        const auto answer = oracle.check(trace.prompt, prefix, markers);
        if (std::equal(answer.begin(), answer.end(), reference_answer.begin(), reference_answer.end())) {
            return k;
        }
    }
    return trace.paragraph_ends.size() - 1;
}

SignalLabels annotate_signals(std::size_t exit_position, std::span<const double> token_probs) {
    if (exit_position >= token_probs.size()) {
        throw UsageError("exit position must index a reasoning token");
    }
    SignalLabels labels;
    const std::size_t n = exit_position + 1;
    labels.conf.reserve(n);
    labels.prog.reserve(n);
    labels.remaining.reserve(n);
    double log_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double p = token_probs[i];
        if (!(p > 0.0)) {
            p = 1e-12;
            ++labels.clamped_probabilities;
        }
        log_sum += std::log(std::min(p, 1.0));
        labels.conf.push_back(std::exp(log_sum / static_cast<double>(i + 1)));
        labels.prog.push_back(exit_position == 0 ? 1.0
                                                 : static_cast<double>(i) / static_cast<double>(exit_position));
        labels.remaining.push_back(static_cast<double>(exit_position - i));
    }
    return labels;
}

std::vector<TokenId> thinking_prompt(std::span<const TokenId> prompt, const MarkerSet& markers) {
    std::vector<TokenId> context(prompt.begin(), prompt.end());
    context.push_back(markers.think_open);
    return context;
}

std::vector<double> realized_token_probs(const TargetModel& model, std::span<const TokenId> prompt,
                                         std::span<const TokenId> reasoning, const MarkerSet& markers) {
    std::vector<TokenId> context = thinking_prompt(prompt, markers);
    const std::size_t offset = context.size();
    context.insert(context.end(), reasoning.begin(), reasoning.end());
    const ForwardOutput out = model.forward(context);
    std::vector<double> probs(reasoning.size());
    for (std::size_t i = 0; i < reasoning.size(); ++i) {
        // Token at context index offset + i is predicted by the column before it.
        probs[i] = softmax_probability(out.logits.col(static_cast<Eigen::Index>(offset + i - 1)), reasoning[i]);
    }
    return probs;
}

AnnotatedTrace build_annotated_trace(const ReasoningTrace& trace, const TargetModel& model,
                                     const AnswerOracle& oracle, const MarkerSet& markers) {
    if (trace.reasoning.empty()) throw MalformedTraceError(trace.id + ": empty reasoning");
    ReasoningTrace full = trace;
    if (full.paragraph_ends.empty()) full.paragraph_ends = segment_paragraphs(full.reasoning, markers);
    validate_trace(full, markers);

    AnnotatedTrace out;
    out.reference_answer = full.answer;
    out.original_paragraphs = full.paragraph_ends.size();
    out.original_reasoning_tokens = full.reasoning.size();
    out.exit_paragraph = minimal_prefix_search(full, oracle, full.answer, markers);

    const std::size_t exit_position = full.paragraph_ends[out.exit_paragraph];
    const auto probs = realized_token_probs(model, full.prompt, full.reasoning, markers);
    out.labels = annotate_signals(exit_position, probs);

    out.trace = full;
    out.trace.reasoning.resize(exit_position + 1);
    out.trace.paragraph_ends.resize(out.exit_paragraph + 1);
    return out;
}

}  // namespace specexit
