#include "specexit/engine.hpp"

#include <algorithm>
#include <chrono>
#include <numeric>

namespace specexit {

std::vector<TokenId> GenerationResult::answer(TokenId think_close, TokenId eos) const {
    auto close = std::find(output.begin(), output.end(), think_close);
    if (close == output.end()) return {};
    auto end = std::find(close + 1, output.end(), eos);
    return {close + 1, end};
}

double GenerationResult::mean_accept_length() const {
    if (accept_lengths.empty()) return 0.0;
    return static_cast<double>(std::accumulate(accept_lengths.begin(), accept_lengths.end(), std::size_t{0})) /
           static_cast<double>(accept_lengths.size());
}

VerifyResult verify_chain(EngineState& state, std::span<const TokenId> candidates, const TargetModel& target) {
    if (state.committed.empty()) throw UsageError("verify_chain needs a committed context");
    VerifyResult v;
    v.base = state.committed.size() - 1;
    if (state.cache->size() != v.base) {
        throw UsageError("cache must hold every committed position but the last");
    }
    std::vector<TokenId> context = state.committed;
    context.insert(context.end(), candidates.begin(), candidates.end());
    v.out = target.forward(context, *state.cache);

    // Column j predicts the token after context[base + j].
    std::size_t l = 0;
    while (l < candidates.size() && v.out.argmax(static_cast<Eigen::Index>(l)) == candidates[l]) ++l;
    v.l_acpt = l;
    v.t_rec = v.out.argmax(static_cast<Eigen::Index>(l));
    v.accepted.assign(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(l));
    return v;
}

void truncate_state(EngineState& state, std::size_t keep_len, TokenId replacement) {
    if (keep_len > state.committed.size()) {
        throw UsageError("truncate_state keep_len " + std::to_string(keep_len) + " exceeds committed length " +
                         std::to_string(state.committed.size()));
    }
    state.committed.resize(keep_len);
    state.committed.push_back(replacement);
    state.prompt_len = std::min(state.prompt_len, keep_len);
    if (state.cache) state.cache->truncate(std::min(state.cache->size(), keep_len));
}

SpecExitEngine::SpecExitEngine(const TargetModel& target, const DraftModel* draft, MarkerSet markers,
                               StoppingConfig config, GenerateOptions options)
    : target_(target), draft_(draft), markers_(std::move(markers)), config_(std::move(config)), options_(options) {
    markers_.validate();
    config_.validate();
    if (options_.gamma < 1) throw ConfigError("draft depth gamma must be >= 1");
    if (options_.max_tokens < 1) throw ConfigError("max_tokens must be >= 1");
    if (draft_ && draft_->head().signal.cols() != target_.hidden_dim()) {
        throw ConfigError("draft head dimension does not match the target hidden dimension");
    }
}

EngineState SpecExitEngine::start(std::span<const TokenId> prompt) {
    if (prompt.empty()) throw UsageError("prompt must be non-empty");
    for (TokenId t : prompt) {
        if (t < 0 || t >= target_.vocab_size()) throw ConfigError("prompt token outside vocabulary");
    }
    EngineState state;
    state.committed.assign(prompt.begin(), prompt.end());
    state.prompt_len = prompt.size();
    state.cache = target_.make_cache();
    state.smoother = Smoother(config_.smoothing);
    state.last_hidden = HiddenVector::Zero(target_.hidden_dim());
    if (prompt.size() >= 2) {
        const ForwardOutput out = target_.forward(prompt.first(prompt.size() - 1), *state.cache);
        state.last_hidden = out.hidden.col(out.positions() - 1);
        ++counters_.target_forwards;
        counters_.target_positions += static_cast<std::size_t>(out.positions());
    }
    return state;
}

StepOutcome SpecExitEngine::decode_step(EngineState& state) {
    if (state.terminated) throw UsageError("decode_step on a terminated session");
    if (!draft_) throw UsageError("speculative decoding needs a draft model");

    StepOutcome outcome;
    const Proposal proposal = draft_->propose(state.last_hidden, state.committed, options_.gamma);
    counters_.draft_forwards += static_cast<std::size_t>(options_.gamma);
    outcome.raw = proposal.signals;
    outcome.signals = decode_signals(proposal.signals);
    outcome.smoothed = state.smoother.update(outcome.signals);

    const VerifyResult verify = verify_chain(state, proposal.candidates, target_);
    ++counters_.target_forwards;
    counters_.target_positions += static_cast<std::size_t>(verify.out.positions());
    outcome.accepted = verify.accepted;
    outcome.l_acpt = verify.l_acpt;
    outcome.t_rec = verify.t_rec;

    if (options_.early_exit && state.is_thinking && should_exit(outcome.smoothed, config_)) {
        for (std::size_t j = 0; j < outcome.l_acpt; ++j) {
            const TokenId token = outcome.accepted[j];
            if (token == markers_.think_close) break;
            if (is_step_split(token, markers_, config_.marker_mode)) {
                outcome.l_acpt = j + 1;
                outcome.accepted.resize(j + 1);
                outcome.t_rec = markers_.think_close;
                outcome.exited = true;
                break;
            }
        }
    }
    commit(state, verify, outcome);
    return outcome;
}

StepOutcome SpecExitEngine::greedy_step(EngineState& state) {
    if (state.terminated) throw UsageError("greedy_step on a terminated session");
    StepOutcome outcome;
    const VerifyResult verify = verify_chain(state, {}, target_);
    ++counters_.target_forwards;
    counters_.target_positions += static_cast<std::size_t>(verify.out.positions());
    outcome.t_rec = verify.t_rec;
    commit(state, verify, outcome);
    return outcome;
}

void SpecExitEngine::commit(EngineState& state, const VerifyResult& verify, StepOutcome& outcome) {
    std::vector<TokenId> fresh = outcome.accepted;
    fresh.push_back(outcome.t_rec);

    const std::size_t limit = options_.max_tokens + (state.budget_exit ? options_.answer_budget : 0);
    const std::size_t room = limit - state.generated();
    if (fresh.size() > room) fresh.resize(room);
    if (auto eos = std::find(fresh.begin(), fresh.end(), options_.eos); eos != fresh.end()) {
        fresh.erase(eos + 1, fresh.end());
        state.terminated = true;
    }
    state.committed.insert(state.committed.end(), fresh.begin(), fresh.end());

    // Column j of the verify output is committed position base + j.
    const std::size_t valid = std::min(verify.base + outcome.l_acpt + 1, state.committed.size() - 1);
    state.cache->truncate(valid);
    state.last_hidden = verify.out.hidden.col(static_cast<Eigen::Index>(state.committed.size() - 2 - verify.base));

    if (state.is_thinking) {
        const bool closed = std::find(fresh.begin(), fresh.end(), markers_.think_close) != fresh.end();
        if (outcome.exited && closed) {
            state.exit_position = verify.base + outcome.l_acpt;
        } else {
            outcome.exited = false;
        }
        if (closed) state.is_thinking = false;
    } else {
        outcome.exited = false;
    }
    if (std::any_of(fresh.begin(), fresh.end(), [&](TokenId t) { return markers_.paragraph.count(t) > 0; })) {
        state.smoother.on_paragraph_boundary();
    }

    if (state.is_thinking && !state.terminated && state.generated() >= options_.max_tokens) {
        // Budget exhausted while reasoning: the last budgeted slot becomes </think>.
        const std::size_t keep = state.prompt_len + options_.max_tokens - 1;
        if (keep >= verify.base + 1) {
            state.last_hidden = verify.out.hidden.col(static_cast<Eigen::Index>(keep - 1 - verify.base));
        }
        truncate_state(state, keep, markers_.think_close);
        state.is_thinking = false;
        state.budget_exit = true;
    }
    const std::size_t final_limit = options_.max_tokens + (state.budget_exit ? options_.answer_budget : 0);
    if (state.generated() >= final_limit) state.terminated = true;
}

GenerationResult SpecExitEngine::generate(std::span<const TokenId> prompt) { return run(prompt, true); }

GenerationResult SpecExitEngine::generate_target_only(std::span<const TokenId> prompt) { return run(prompt, false); }

GenerationResult SpecExitEngine::run(std::span<const TokenId> prompt, bool speculative) {
    const auto t0 = std::chrono::steady_clock::now();
    const EngineCounters before = counters_;
    GenerationResult result;

    EngineState state = start(prompt);
    std::size_t step = 0;
    while (!state.terminated) {
        const StepOutcome outcome = speculative ? decode_step(state) : greedy_step(state);
        result.accept_lengths.push_back(outcome.l_acpt);
        result.untrimmed_commits += outcome.l_acpt + 1;
        if (speculative) {
            result.steps.push_back({step, outcome.l_acpt, outcome.t_rec, outcome.raw, outcome.smoothed,
                                    outcome.exited});
        }
        ++step;
    }

    result.output.assign(state.committed.begin() + static_cast<std::ptrdiff_t>(state.prompt_len),
                         state.committed.end());
    if (state.exit_position) result.exit_position = *state.exit_position - state.prompt_len;
    result.budget_exit = state.budget_exit;

    const auto close = std::find(result.output.begin(), result.output.end(), markers_.think_close);
    if (close == result.output.end()) {
        result.reasoning_tokens = result.output.size();
        if (!result.output.empty() && result.output.back() == options_.eos) --result.reasoning_tokens;
    } else {
        result.reasoning_tokens = static_cast<std::size_t>(close - result.output.begin());
        const auto end = std::find(close + 1, result.output.end(), options_.eos);
        result.answer_tokens = static_cast<std::size_t>(end - (close + 1));
    }

    result.counters.target_forwards = counters_.target_forwards - before.target_forwards;
    result.counters.target_positions = counters_.target_positions - before.target_positions;
    result.counters.draft_forwards = counters_.draft_forwards - before.draft_forwards;
    result.latency_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return result;
}

}  // namespace specexit
