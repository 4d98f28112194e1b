#pragma once

#include <cstddef>
#include <cstdint>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace specexit {

using TokenId = std::int32_t;

/// Thrown when a model, head or run is configured with inconsistent shapes or values.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class MalformedTraceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Thrown when an operation is called on state that does not admit it.
class UsageError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Toy vocabulary. Ids 0..2 are reserved for the reasoning markers.
class Vocabulary {
public:
    static constexpr TokenId kThinkOpen = 0;
    static constexpr TokenId kThinkClose = 1;
    static constexpr TokenId kParagraph = 2;
    static constexpr std::size_t kMinSize = 8;

    explicit Vocabulary(std::vector<std::string> surface);

    std::size_t size() const { return surface_.size(); }
    bool contains(TokenId id) const { return id >= 0 && static_cast<std::size_t>(id) < surface_.size(); }
    const std::string& surface(TokenId id) const;
    /// Linear lookup; throws ConfigError for unknown strings.
    TokenId id_of(const std::string& text) const;

    std::string render(std::span<const TokenId> tokens, const std::string& sep = " ") const;

private:
    std::vector<std::string> surface_;
};

enum class SplitMode { paragraph, discourse, contrastive };

SplitMode parse_split_mode(const std::string& text);
std::string to_string(SplitMode mode);

struct MarkerSet {
    TokenId think_open = Vocabulary::kThinkOpen;
    TokenId think_close = Vocabulary::kThinkClose;
    std::set<TokenId> paragraph{Vocabulary::kParagraph};
    std::set<TokenId> discourse;
    std::set<TokenId> contrastive;

    /// Throws ConfigError if the marker invariants do not hold.
    void validate() const;
    const std::set<TokenId>& split_set(SplitMode mode) const;
};

struct ReasoningTrace {
    std::string id;
    std::vector<TokenId> prompt;
    std::vector<TokenId> reasoning;
    std::vector<TokenId> answer;
    std::vector<std::size_t> paragraph_ends;
};

/// Positions of paragraph delimiters in `reasoning`, plus the final index when the
/// sequence does not end on a delimiter.
std::vector<std::size_t> segment_paragraphs(std::span<const TokenId> reasoning, const MarkerSet& markers);

bool is_step_split(TokenId token, const MarkerSet& markers, SplitMode mode = SplitMode::paragraph);

/// Checks paragraph_ends against the reasoning span; throws MalformedTraceError.
void validate_trace(const ReasoningTrace& trace, const MarkerSet& markers);

}  // namespace specexit
