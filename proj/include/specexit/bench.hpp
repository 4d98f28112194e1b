#pragma once

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "specexit/io.hpp"

namespace specexit {

enum class Method { target_only, spec_only, specexit };

Method parse_method(const std::string& text);
std::string to_string(Method method);

/// One generation of one task under one method.
struct RunRecord {
    std::string task_id;
    Method method = Method::specexit;
    bool failed = false;
    std::string error;
    bool correct = false;
    std::size_t reasoning_tokens = 0;
    std::size_t total_tokens = 0;
    double latency_s = 0.0;
    double accept_len_mean = 0.0;
    bool exited = false;
    bool budget_exit = false;
    std::size_t target_forwards = 0;
    long long exit_position = -1;  // -1 when the run did not exit early
    std::size_t violations = 0;    // forced </think> not directly after a configured split token
};

/// Aggregates over the runs that did not fail.
struct MetricsReport {
    std::string method;
    double acc = 0.0;
    double tok_mean = 0.0;            // generated tokens, reasoning and answer
    double reasoning_tok_mean = 0.0;  // tokens before </think>
    double lat_mean_s = 0.0;
    double accept_len_mean = 0.0;
    double exit_rate = 0.0;
    std::size_t target_forwards = 0;  // summed over runs
    std::size_t runs = 0;
    std::size_t failures = 0;
    std::size_t violations = 0;
};

MetricsReport aggregate(const std::string& label, const std::vector<RunRecord>& runs);

/// Early-exit placement check: the forced </think> of an early exit must sit right
/// after a token of the split set for `mode`. Returns the number of violations (0 or 1).
std::size_t placement_violations(const GenerationResult& result, const MarkerSet& markers, SplitMode mode);

/// Outcome of annotating a raw trace JSONL stream.
struct BuildDataStats {
    std::size_t total = 0;  // non-blank lines
    std::size_t annotated = 0;
    std::size_t skipped = 0;
    double pruned_fraction = 0.0;  // mean fraction of paragraphs after the exit paragraph

    bool too_many_skipped() const { return 10 * skipped > total; }
};

/// Annotates every line with the suite target as answer oracle. Malformed lines are
/// skipped and reported on `log` with their id (or line number).
BuildDataStats build_data(const VerboseSuite& suite, const std::vector<std::string>& lines, std::ostream& out,
                          std::ostream& log);

/// One example per reasoning position up to the exit: target hidden state, next token
/// (</think> after the exit token) and the three labels.
TrainBatch training_batch(const VerboseSuite& suite, const std::vector<AnnotatedTrace>& traces);

struct HeadTrainingOutcome {
    DraftHeadd initial;
    DraftHeadd head;
    TrainResult result;
    LossBreakdown held_out_before;
    LossBreakdown held_out_after;
    std::size_t train_examples = 0;
    std::size_t held_out_examples = 0;  // 0 when the training set is reused for evaluation
};

/// Shuffles traces with options.seed, holds out a fraction of them and trains a random
/// head of the given init scale on the rest.
HeadTrainingOutcome train_head_on_traces(const VerboseSuite& suite, std::vector<AnnotatedTrace> traces,
                                         const TrainOptions& options, double holdout, double init_scale);

/// Suite plus the signal head used by the draft.
struct BenchSetup {
    VerboseSuite suite;
    DraftHeadd head;
};

/// Builds the suite of `config` and loads the checkpoint head, or uses the oracle head.
BenchSetup make_bench_setup(const RunConfig& config);

using StepLogSink = std::function<void(const std::string& task_id, const GenerationResult&)>;

/// Runs every suite task under `method`. Generation errors are recorded as failed runs.
std::vector<RunRecord> run_method(const BenchSetup& setup, const RunConfig& config, Method method,
                                  const StepLogSink& sink = {});

enum class AblationKind { signals, smoothing, split_tokens };

AblationKind parse_ablation_kind(const std::string& text);
std::string to_string(AblationKind kind);

struct AblationRow {
    std::string label;
    StoppingConfig stopping;
    MetricsReport report;
};

/// The configurations swept by an ablation; thresholds and smoothing not under study
/// come from `base`.
std::vector<AblationRow> ablation_grid(AblationKind kind, const StoppingConfig& base);

/// Runs specexit for every grid row; rows come back with their reports filled in.
std::vector<AblationRow> run_ablation(AblationKind kind, const BenchSetup& setup, const RunConfig& config,
                                      const StepLogSink& sink = {});

// Report JSON: {"method", "acc", "tok_mean", "lat_mean_s", "accept_len_mean", "exit_rate",
// "target_forwards"} plus "reasoning_tok_mean", "runs", "failures", "violations".
std::string report_to_json(const MetricsReport& report);
MetricsReport parse_report(const std::string& text);
std::string reports_to_json(const std::vector<MetricsReport>& reports);
std::vector<MetricsReport> parse_reports(const std::string& text);

void write_runs_csv(std::ostream& os, const std::vector<RunRecord>& runs);
std::vector<RunRecord> read_runs_csv(std::istream& is);

/// Markdown-style table of accuracy and token counts per ablation row.
std::string ablation_table(const std::vector<AblationRow>& rows);
void write_ablation_csv(std::ostream& os, const std::vector<AblationRow>& rows);

/// Three-panel bar chart (accuracy, tokens, latency) as a standalone SVG document.
std::string bar_chart_svg(const std::vector<MetricsReport>& reports, const std::string& title);

}  // namespace specexit
