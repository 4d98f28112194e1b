#pragma once

#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "specexit/exit_controller.hpp"
#include "specexit/model.hpp"
#include "specexit/seq.hpp"

namespace specexit {

struct GenerateOptions {
    int gamma = 4;
    std::size_t max_tokens = 256;     // generated-token budget; reasoning is closed when it runs out
    std::size_t answer_budget = 64;   // extra tokens allowed after a budget exit
    TokenId eos = 3;
    bool early_exit = true;
};

/// Mutable state of one generation session. The model cache holds every committed
/// position except the last one, which the next verify forward processes.
struct EngineState {
    std::vector<TokenId> committed;
    std::size_t prompt_len = 0;
    std::unique_ptr<TargetCache> cache;
    bool is_thinking = true;
    Smoother smoother;
    HiddenVector last_hidden;
    bool terminated = false;
    bool budget_exit = false;
    std::optional<std::size_t> exit_position;  // committed index of the split token before a forced </think>

    std::size_t generated() const { return committed.size() - prompt_len; }
    std::size_t cache_len() const { return cache ? cache->size() : 0; }
};

struct StepOutcome {
    std::vector<TokenId> accepted;  // t_acpt
    std::size_t l_acpt = 0;
    TokenId t_rec = -1;
    SignalPrediction<double> raw;
    SignalTriple signals;
    SignalTriple smoothed;
    bool exited = false;
};

struct VerifyResult {
    std::vector<TokenId> accepted;
    std::size_t l_acpt = 0;
    TokenId t_rec = -1;
    ForwardOutput out;   // columns: last committed token, then each candidate
    std::size_t base = 0;  // committed index of column 0
};

struct EngineCounters {
    std::size_t target_forwards = 0;
    std::size_t target_positions = 0;
    std::size_t draft_forwards = 0;
};

struct StepLogRecord {
    std::size_t step = 0;
    std::size_t l_acpt = 0;
    TokenId t_rec = -1;
    SignalPrediction<double> raw;
    SignalTriple smoothed;
    bool exited = false;
};

struct GenerationResult {
    std::vector<TokenId> output;  // generated tokens only
    std::size_t reasoning_tokens = 0;
    std::size_t answer_tokens = 0;
    std::optional<std::size_t> exit_position;  // index into output of the split token before a forced </think>
    bool budget_exit = false;
    std::vector<StepLogRecord> steps;
    std::vector<std::size_t> accept_lengths;
    std::size_t untrimmed_commits = 0;  // sum over steps of l_acpt + 1
    double latency_s = 0.0;
    EngineCounters counters;

    std::vector<TokenId> answer(TokenId think_close, TokenId eos) const;
    double mean_accept_length() const;
};

/// One target forward over the committed context plus `candidates`; accepts the
/// longest candidate prefix that matches the target's greedy choices.
VerifyResult verify_chain(EngineState& state, std::span<const TokenId> candidates, const TargetModel& target);

/// Cuts committed to keep_len, appends `replacement` and drops cached positions >= keep_len.
void truncate_state(EngineState& state, std::size_t keep_len, TokenId replacement);

class SpecExitEngine {
public:
    SpecExitEngine(const TargetModel& target, const DraftModel* draft, MarkerSet markers, StoppingConfig config,
                   GenerateOptions options);

    /// Initializes a session: prefill of every prompt token but the last.
    EngineState start(std::span<const TokenId> prompt);

    /// Speculative iteration: signals, smoothing, draft, verify, optional exit, commit.
    StepOutcome decode_step(EngineState& state);

    /// Plain greedy iteration: one target position, no draft and no exit gate.
    StepOutcome greedy_step(EngineState& state);

    GenerationResult generate(std::span<const TokenId> prompt);
    GenerationResult generate_target_only(std::span<const TokenId> prompt);

    const EngineCounters& counters() const { return counters_; }
    const GenerateOptions& options() const { return options_; }
    const MarkerSet& markers() const { return markers_; }
    const StoppingConfig& config() const { return config_; }

private:
    void commit(EngineState& state, const VerifyResult& verify, StepOutcome& outcome);
    GenerationResult run(std::span<const TokenId> prompt, bool speculative);

    const TargetModel& target_;
    const DraftModel* draft_;
    MarkerSet markers_;
    StoppingConfig config_;
    GenerateOptions options_;
    EngineCounters counters_;
};

}  // namespace specexit
