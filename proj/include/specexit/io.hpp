#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "specexit/engine.hpp"
#include "specexit/exit_controller.hpp"
#include "specexit/synthetic.hpp"
#include "specexit/tiny_transformer.hpp"
#include "specexit/trace_builder.hpp"
#include "specexit/trainer.hpp"

namespace specexit {

/// A file or record that does not follow its documented schema.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Trace JSONL. One object per line:
//   {"id", "prompt", "reasoning", "answer", "paragraph_ends", "exit_paragraph",
//    "labels": {"conf", "prog", "remaining"}}
// Raw traces may omit exit_paragraph/labels; paragraph_ends is recomputed when absent
// and checked when present.

ReasoningTrace parse_raw_trace(const std::string& line, const MarkerSet& markers, std::size_t vocab_size);
std::string raw_trace_to_json(const ReasoningTrace& trace);
/// The "id" string of a line, if it is a JSON object that has one.
std::optional<std::string> peek_trace_id(const std::string& line);

std::string annotated_trace_to_json(const AnnotatedTrace& trace);
AnnotatedTrace parse_annotated_trace(const std::string& line, const MarkerSet& markers, std::size_t vocab_size);

/// Lines of a text file, keeping blank lines so line numbers stay meaningful.
std::vector<std::string> read_lines(const std::filesystem::path& path);

// Step log JSONL: {"step", "l_acpt", "t_rec", "conf_raw", "prog_raw", "rem_raw",
// "conf_s", "prog_s", "rem_s", "exited"}.

std::string step_record_to_json(const StepLogRecord& record);
StepLogRecord parse_step_record(const std::string& line);

// Training log CSV with header
// step,loss_cls,loss_conf,loss_prog,loss_rem,lambda_c,lambda_p,lambda_r,total.

void write_train_csv(std::ostream& os, const std::vector<TrainLogRow>& rows);
std::vector<TrainLogRow> read_train_csv(std::istream& is);

// Checkpoint JSON:
//   {"format": "specexit-checkpoint", "version": 1,
//    "arrays": [{"name": str, "shape": [rows, cols], "data": [row-major reals]}]}

struct NamedArray {
    std::string name;
    Eigen::MatrixXd value;
};

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedArray>& arrays);
std::vector<NamedArray> load_checkpoint(const std::filesystem::path& path);

/// Arrays "head.token" (V x D) and "head.signal" (3 x D).
std::vector<NamedArray> head_arrays(const DraftHeadd& head);
DraftHeadd head_from_arrays(const std::vector<NamedArray>& arrays);

/// Arrays prefixed "lm." plus an "lm.config" row [vocab, dim, layers, heads, context, mlp_mult].
std::vector<NamedArray> transformer_arrays(const TinyTransformer& model);
TinyTransformer transformer_from_arrays(const std::vector<NamedArray>& arrays);

// Run configuration JSON. Sections and keys:
//   smoothing.{kind, alpha, window}, thresholds.{confidence, progress, remaining},
//   signals.enabled, markers.mode, generation.{gamma, max_tokens, answer_budget},
//   suite.{tasks, hidden_dim, draft_error}, seed, checkpoint, out.
// Every key is optional; unknown keys are rejected.

struct RunConfig {
    StoppingConfig stopping = StoppingConfig::combined();
    int gamma = 4;
    std::size_t max_tokens = 512;
    std::size_t answer_budget = 64;
    SuiteOptions suite;  // suite.seed is the run seed
    std::optional<std::filesystem::path> checkpoint;
    std::filesystem::path out = "out";

    void validate() const;
    GenerateOptions generate_options(TokenId eos) const;
};

RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);
std::string run_config_to_json(const RunConfig& config);

}  // namespace specexit
