#pragma once

// Token-by-token greedy decoding with uncached full forwards. Serves as the reference
// the speculative engine must reproduce when its exit gate is off.

#include <vector>

#include "specexit/model.hpp"

namespace oracle {

struct GreedyReference {
    std::vector<specexit::TokenId> output;
    bool budget_exit = false;
};

// Reasoning that is still open when the budget runs out gets </think> in its last slot,
// after which `answer_budget` more tokens may follow.
inline GreedyReference greedy_decode(const specexit::TargetModel& target, std::vector<specexit::TokenId> context,
                                     specexit::TokenId think_close, specexit::TokenId eos, std::size_t max_tokens,
                                     std::size_t answer_budget) {
    GreedyReference ref;
    bool thinking = true;
    std::size_t limit = max_tokens;
    while (ref.output.size() < limit) {
        const specexit::ForwardOutput out = target.forward(context);
        specexit::TokenId next = out.argmax(out.positions() - 1);
        if (thinking && ref.output.size() + 1 == max_tokens && next != think_close && next != eos) {
            next = think_close;
            ref.budget_exit = true;
            limit += answer_budget;
        }
        if (next == think_close) thinking = false;
        ref.output.push_back(next);
        context.push_back(next);
        if (next == eos) break;
    }
    return ref;
}

}  // namespace oracle
