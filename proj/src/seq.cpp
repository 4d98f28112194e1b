#include "specexit/seq.hpp"

#include <algorithm>

namespace specexit {

Vocabulary::Vocabulary(std::vector<std::string> surface) : surface_(std::move(surface)) {
    if (surface_.size() < kMinSize) {
        throw ConfigError("vocabulary must hold at least " + std::to_string(kMinSize) + " tokens");
    }
}

const std::string& Vocabulary::surface(TokenId id) const {
    if (!contains(id)) {
        throw ConfigError("token id " + std::to_string(id) + " outside vocabulary");
    }
    return surface_[static_cast<std::size_t>(id)];
}

TokenId Vocabulary::id_of(const std::string& text) const {
    auto it = std::find(surface_.begin(), surface_.end(), text);
    if (it == surface_.end()) {
        throw ConfigError("unknown token '" + text + "'");
    }
    return static_cast<TokenId>(it - surface_.begin());
}

std::string Vocabulary::render(std::span<const TokenId> tokens, const std::string& sep) const {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i > 0) out += sep;
        out += contains(tokens[i]) ? surface_[static_cast<std::size_t>(tokens[i])] : "<?>";
    }
    return out;
}

SplitMode parse_split_mode(const std::string& text) {
    if (text == "paragraph") return SplitMode::paragraph;
    if (text == "discourse") return SplitMode::discourse;
    if (text == "contrastive") return SplitMode::contrastive;
    throw ConfigError("unknown marker mode '" + text + "'");
}

std::string to_string(SplitMode mode) {
    switch (mode) {
        case SplitMode::paragraph: return "paragraph";
        case SplitMode::discourse: return "discourse";
        case SplitMode::contrastive: return "contrastive";
    }
    return "paragraph";
}

void MarkerSet::validate() const {
    if (think_open == think_close) {
        throw ConfigError("think_open and think_close must differ");
    }
    for (const auto* set : {&paragraph, &discourse}) {
        if (set->count(think_open) || set->count(think_close)) {
            throw ConfigError("step-split sets may not contain the think markers");
        }
    }
    if (!std::includes(discourse.begin(), discourse.end(), contrastive.begin(), contrastive.end())) {
        throw ConfigError("contrastive markers must be a subset of the discourse markers");
    }
}

const std::set<TokenId>& MarkerSet::split_set(SplitMode mode) const {
    switch (mode) {
        case SplitMode::discourse: return discourse;
        case SplitMode::contrastive: return contrastive;
        case SplitMode::paragraph: break;
    }
    return paragraph;
}

std::vector<std::size_t> segment_paragraphs(std::span<const TokenId> reasoning, const MarkerSet& markers) {
    if (reasoning.empty()) {
        throw UsageError("segment_paragraphs requires a non-empty sequence");
    }
    std::vector<std::size_t> ends;
    for (std::size_t i = 0; i < reasoning.size(); ++i) {
        if (markers.paragraph.count(reasoning[i])) ends.push_back(i);
    }
    if (ends.empty() || ends.back() != reasoning.size() - 1) {
        ends.push_back(reasoning.size() - 1);
    }
    return ends;
}

bool is_step_split(TokenId token, const MarkerSet& markers, SplitMode mode) {
    return markers.split_set(mode).count(token) > 0;
}

void validate_trace(const ReasoningTrace& trace, const MarkerSet& markers) {
    const auto& ends = trace.paragraph_ends;
    if (trace.reasoning.empty()) {
        if (!ends.empty()) throw MalformedTraceError(trace.id + ": paragraph_ends on empty reasoning");
        return;
    }
    if (ends.empty() || ends.back() != trace.reasoning.size() - 1) {
        throw MalformedTraceError(trace.id + ": paragraph_ends must end at the last reasoning token");
    }
    for (std::size_t k = 0; k < ends.size(); ++k) {
        if (k > 0 && ends[k] <= ends[k - 1]) {
            throw MalformedTraceError(trace.id + ": paragraph_ends not strictly increasing");
        }
        const bool last = k + 1 == ends.size();
        if (!last && !markers.paragraph.count(trace.reasoning[ends[k]])) {
            throw MalformedTraceError(trace.id + ": paragraph end " + std::to_string(ends[k]) +
                                      " is not a delimiter");
        }
    }
}

}  // namespace specexit
