#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "specexit/model.hpp"
#include "specexit/seq.hpp"
#include "specexit/table_model.hpp"

namespace specexit {

/// Fixed toy vocabulary: markers at 0..3, digits, operators and a few reasoning words.
Vocabulary suite_vocabulary();
/// Paragraph delimiter "\n\n"; discourse markers Wait/But/Alternatively/Therefore/So/Hmm,
/// of which Wait/But/Alternatively are contrastive.
MarkerSet suite_markers(const Vocabulary& vocab);
inline constexpr TokenId kSuiteEos = 3;

struct SuiteOptions {
    std::size_t tasks = 50;
    std::uint64_t seed = 7;
    int hidden_dim = 16;
    double draft_error = 0.15;  // fraction of draft successors re-targeted
    double min_token_prob = 0.85;
    double max_token_prob = 0.99;
};

/// One addition problem with four reasoning paragraphs: restate, compute, recheck,
/// wrap-up. Closing reasoning after the compute paragraph already yields the answer,
/// so the last two paragraphs (half of the reasoning tokens) are redundant.
struct SyntheticTask {
    std::string id;
    std::vector<TokenId> prompt;  // without <think>
    std::vector<TokenId> reasoning;
    std::vector<TokenId> answer;  // without <eos>
    std::vector<std::size_t> paragraph_ends;
    std::size_t minimal_paragraph = 1;
    std::vector<double> token_probs;  // probability of each reasoning token
};

/// Verbose addition suite with a scripted target whose hidden vectors carry the
/// oracle signals in a fixed orthonormal basis.
struct VerboseSuite {
    Vocabulary vocab = suite_vocabulary();
    MarkerSet markers = suite_markers(vocab);
    TokenId eos = kSuiteEos;
    SuiteOptions options;
    std::vector<SyntheticTask> tasks;
    std::shared_ptr<TableModel> target;
    std::shared_ptr<TableModel> draft_script;
    Eigen::MatrixXd basis;  // D x D; columns 1..3 read logit(conf), logit(prog), log1p(remaining)

    /// Head whose signal rows decode the target hidden states exactly.
    DraftHeadd oracle_head() const;
    ReasoningTrace trace(std::size_t index) const;
    std::vector<TokenId> generation_prompt(std::size_t index) const;
};

VerboseSuite make_verbose_suite(const SuiteOptions& options = {});

/// Random bigram target plus a perturbed copy used as draft.
struct ScriptPair {
    std::shared_ptr<TableModel> target;
    std::shared_ptr<TableModel> draft;
    std::vector<TokenId> prompt;
};

ScriptPair random_script_pair(std::uint64_t seed);

}  // namespace specexit
