#pragma once

#include <span>
#include <string>
#include <vector>

#include "specexit/model.hpp"
#include "specexit/seq.hpp"

namespace specexit {

/// Answers a prompt after reasoning is forcibly closed following `reasoning_prefix`.
class AnswerOracle {
public:
    virtual ~AnswerOracle() = default;
    virtual std::vector<TokenId> check(std::span<const TokenId> prompt, std::span<const TokenId> reasoning_prefix,
                                       const MarkerSet& markers) const = 0;
};

/// Greedy target decoding of prompt + <think> + prefix + </think> until `eos`.
class GreedyAnswerOracle final : public AnswerOracle {
public:
    GreedyAnswerOracle(const TargetModel& model, TokenId eos, std::size_t max_answer_tokens = 64);

    std::vector<TokenId> check(std::span<const TokenId> prompt, std::span<const TokenId> reasoning_prefix,
                               const MarkerSet& markers) const override;

private:
    const TargetModel& model_;
    TokenId eos_;
    std::size_t max_answer_tokens_;
};

struct SignalLabels {
    std::vector<double> conf;
    std::vector<double> prog;
    std::vector<double> remaining;
    std::size_t clamped_probabilities = 0;  // zero probabilities replaced by 1e-12

    std::size_t size() const { return conf.size(); }
};

struct AnnotatedTrace {
    ReasoningTrace trace;  // reasoning truncated after the exit paragraph
    std::size_t exit_paragraph = 0;
    std::size_t original_paragraphs = 0;
    std::size_t original_reasoning_tokens = 0;
    SignalLabels labels;
    std::vector<TokenId> reference_answer;
};

struct ThinkSpan {
    std::vector<TokenId> reasoning;
    std::vector<TokenId> answer;
};

/// Splits [.. <think> reasoning </think> answer] at the markers.
ThinkSpan extract_think_span(std::span<const TokenId> full_output, const MarkerSet& markers);

/// Smallest paragraph index whose forced-exit answer equals `reference_answer`;
/// the final index when no prefix succeeds.
std::size_t minimal_prefix_search(const ReasoningTrace& trace, const AnswerOracle& oracle,
                                  std::span<const TokenId> reference_answer, const MarkerSet& markers);

/// Per-token labels for positions 0..exit_position: running geometric-mean confidence,
/// linear progress and the token countdown to the exit position.
SignalLabels annotate_signals(std::size_t exit_position, std::span<const double> token_probs);

/// Probability the target assigns to each reasoning token given everything before it.
std::vector<double> realized_token_probs(const TargetModel& model, std::span<const TokenId> prompt,
                                         std::span<const TokenId> reasoning, const MarkerSet& markers);

/// Prompt followed by the think-open marker: the context a generation starts from.
std::vector<TokenId> thinking_prompt(std::span<const TokenId> prompt, const MarkerSet& markers);

/// Full data-construction pass for one trace.
AnnotatedTrace build_annotated_trace(const ReasoningTrace& trace, const TargetModel& model,
                                     const AnswerOracle& oracle, const MarkerSet& markers);

}  // namespace specexit
