#include <gtest/gtest.h>

#include <regex>
#include <sstream>

#include "specexit/bench.hpp"

using namespace specexit;

namespace {

RunConfig small_config(std::size_t tasks = 12) {
    RunConfig c;
    c.suite.tasks = tasks;
    return c;
}

const BenchSetup& setup() {
    static const BenchSetup s = make_bench_setup(small_config());
    return s;
}

RunRecord run(bool correct, std::size_t reasoning, std::size_t total, bool exited, bool failed = false) {
    RunRecord r;
    r.correct = correct;
    r.reasoning_tokens = reasoning;
    r.total_tokens = total;
    r.exited = exited;
    r.failed = failed;
    r.latency_s = 0.5;
    r.accept_len_mean = 2.0;
    r.target_forwards = 10;
    return r;
}

std::vector<std::string> raw_lines(const VerboseSuite& s, std::size_t keep_paragraphs) {
    std::vector<std::string> lines;
    for (std::size_t i = 0; i < s.tasks.size(); ++i) {
        ReasoningTrace t = s.trace(i);
        if (keep_paragraphs < t.paragraph_ends.size()) {
            t.reasoning.resize(t.paragraph_ends[keep_paragraphs - 1] + 1);
            t.paragraph_ends.resize(keep_paragraphs);
        }
        lines.push_back(raw_trace_to_json(t));
    }
    return lines;
}

}  // namespace

TEST(Aggregate, ExcludesFailedRuns) {
    const std::vector<RunRecord> runs = {run(true, 10, 14, true), run(false, 30, 34, false), run(true, 0, 0, false, true)};
    const MetricsReport r = aggregate("m", runs);
    EXPECT_EQ(r.method, "m");
    EXPECT_EQ(r.runs, 2u);
    EXPECT_EQ(r.failures, 1u);
    EXPECT_DOUBLE_EQ(r.acc, 0.5);
    EXPECT_DOUBLE_EQ(r.reasoning_tok_mean, 20.0);
    EXPECT_DOUBLE_EQ(r.tok_mean, 24.0);
    EXPECT_DOUBLE_EQ(r.exit_rate, 0.5);
    EXPECT_DOUBLE_EQ(r.lat_mean_s, 0.5);
    EXPECT_EQ(r.target_forwards, 20u);

    const MetricsReport empty = aggregate("none", {run(true, 1, 1, false, true)});
    EXPECT_EQ(empty.runs, 0u);
    EXPECT_EQ(empty.acc, 0.0);
}

TEST(PlacementViolations, ChecksSplitBeforeForcedClose) {
    const MarkerSet m;  // paragraph split id 2, </think> id 1
    GenerationResult g;
    g.output = {5, 6, 2, 1, 7, 3};
    EXPECT_EQ(placement_violations(g, m, SplitMode::paragraph), 0u);  // no exit recorded
    g.exit_position = 2;
    EXPECT_EQ(placement_violations(g, m, SplitMode::paragraph), 0u);
    g.exit_position = 1;
    EXPECT_EQ(placement_violations(g, m, SplitMode::paragraph), 1u);
    g.output = {5, 6, 2};
    g.exit_position = 2;
    EXPECT_EQ(placement_violations(g, m, SplitMode::paragraph), 1u);  // close missing
}

TEST(Bench, SpecOnlyMatchesTargetOnly) {
    const auto target = run_method(setup(), small_config(), Method::target_only);
    const auto spec = run_method(setup(), small_config(), Method::spec_only);
    ASSERT_EQ(target.size(), spec.size());
    for (std::size_t i = 0; i < target.size(); ++i) {
        EXPECT_EQ(spec[i].correct, target[i].correct);
        EXPECT_EQ(spec[i].total_tokens, target[i].total_tokens);
        EXPECT_EQ(spec[i].reasoning_tokens, target[i].reasoning_tokens);
        EXPECT_LE(spec[i].target_forwards, target[i].target_forwards);
        EXPECT_FALSE(spec[i].exited);
    }
    const MetricsReport a = aggregate("t", target), b = aggregate("s", spec);
    EXPECT_EQ(a.acc, b.acc);
    EXPECT_EQ(a.tok_mean, b.tok_mean);
    EXPECT_EQ(a.acc, 1.0);
}

TEST(Bench, UnreachableThresholdsReproduceSpecOnly) {
    RunConfig inert = small_config();
    inert.stopping.confidence = 1.0;  // sigmoid output never exceeds 1
    const MetricsReport exit = aggregate("x", run_method(setup(), inert, Method::specexit));
    const MetricsReport spec = aggregate("x", run_method(setup(), small_config(), Method::spec_only));
    EXPECT_EQ(exit.acc, spec.acc);
    EXPECT_EQ(exit.tok_mean, spec.tok_mean);
    EXPECT_EQ(exit.reasoning_tok_mean, spec.reasoning_tok_mean);
    EXPECT_EQ(exit.accept_len_mean, spec.accept_len_mean);
    EXPECT_EQ(exit.exit_rate, 0.0);
    EXPECT_EQ(exit.target_forwards, spec.target_forwards);
}

TEST(Bench, EarlyExitShortensReasoning) {
    const MetricsReport spec = aggregate("s", run_method(setup(), small_config(), Method::spec_only));
    const MetricsReport exit = aggregate("e", run_method(setup(), small_config(), Method::specexit));
    EXPECT_LT(exit.reasoning_tok_mean, spec.reasoning_tok_mean);
    EXPECT_LT(exit.target_forwards, spec.target_forwards);
    EXPECT_EQ(exit.acc, spec.acc);
    EXPECT_GT(exit.exit_rate, 0.5);
    EXPECT_EQ(exit.violations, 0u);
}

TEST(Bench, ReportsAreReproducible) {
    const BenchSetup other = make_bench_setup(small_config());
    const auto a = run_method(setup(), small_config(), Method::specexit);
    const auto b = run_method(other, small_config(), Method::specexit);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].task_id, b[i].task_id);
        EXPECT_EQ(a[i].total_tokens, b[i].total_tokens);
        EXPECT_EQ(a[i].correct, b[i].correct);
        EXPECT_EQ(a[i].exit_position, b[i].exit_position);
        EXPECT_EQ(a[i].target_forwards, b[i].target_forwards);
    }
}

TEST(Bench, GenerationErrorsAreCountedNotThrown) {
    RunConfig c = small_config(3);
    BenchSetup s = make_bench_setup(c);
    s.suite.tasks[1].prompt.push_back(999);  // outside the vocabulary
    const auto runs = run_method(s, c, Method::specexit);
    const MetricsReport r = aggregate("bad", runs);
    EXPECT_EQ(r.failures, 1u);
    EXPECT_EQ(r.runs, 2u);
    EXPECT_TRUE(runs[1].failed);
    EXPECT_FALSE(runs[1].error.empty());
    EXPECT_EQ(r.acc, 1.0);
}

TEST(Ablation, GridsMatchTheStudiedConfigurations) {
    const StoppingConfig base = StoppingConfig::combined();
    const auto signals = ablation_grid(AblationKind::signals, base);
    ASSERT_EQ(signals.size(), 4u);
    EXPECT_EQ(signals[0].stopping.enabled, std::set<SignalKind>{SignalKind::confidence});
    EXPECT_EQ(signals[0].stopping.confidence, 0.9);
    EXPECT_EQ(signals[1].stopping.enabled, std::set<SignalKind>{SignalKind::progress});
    EXPECT_EQ(signals[1].stopping.progress, 0.8);
    EXPECT_EQ(signals[2].stopping.enabled, std::set<SignalKind>{SignalKind::remaining});
    EXPECT_EQ(signals[2].stopping.remaining, 100.0);
    EXPECT_EQ(signals[3].stopping.enabled.size(), 3u);
    EXPECT_EQ(signals[3].stopping.confidence, 0.8);
    EXPECT_EQ(signals[3].stopping.progress, 0.3);
    EXPECT_EQ(signals[3].stopping.remaining, 200.0);

    const auto smoothing = ablation_grid(AblationKind::smoothing, base);
    ASSERT_EQ(smoothing.size(), 5u);
    using K = SmoothingMethod::Kind;
    const K kinds[] = {K::none, K::momentum, K::sliding_window, K::paragraph_mean, K::ewma};
    for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(smoothing[i].stopping.smoothing.kind, kinds[i]);
    EXPECT_EQ(smoothing[1].stopping.smoothing.window, 10);
    EXPECT_EQ(smoothing[2].stopping.smoothing.window, 10);
    EXPECT_EQ(smoothing[4].stopping.smoothing.alpha, 0.1);

    const auto split = ablation_grid(AblationKind::split_tokens, base);
    ASSERT_EQ(split.size(), 3u);
    EXPECT_EQ(split[1].stopping.marker_mode, SplitMode::discourse);
    EXPECT_EQ(split[2].stopping.marker_mode, SplitMode::contrastive);
}

TEST(Ablation, ParagraphModeExitsOnlyAtDelimiters) {
    std::size_t exits = 0;
    const StepLogSink check = [&](const std::string&, const GenerationResult& g) {
        if (!g.exit_position) return;
        ++exits;
        EXPECT_TRUE(setup().suite.markers.paragraph.count(g.output[*g.exit_position]));
        EXPECT_EQ(g.output[*g.exit_position + 1], setup().suite.markers.think_close);
    };
    const auto rows = run_ablation(AblationKind::split_tokens, setup(), small_config());
    for (const auto& row : rows) EXPECT_EQ(row.report.violations, 0u) << row.label;
    RunConfig c = small_config();
    run_method(setup(), c, Method::specexit, check);
    EXPECT_GT(exits, 0u);
    EXPECT_NE(ablation_table(rows).find("| contrastive |"), std::string::npos);
}

TEST(ReportJson, RoundTripAndSchema) {
    MetricsReport r;
    r.method = "specexit";
    r.acc = 0.96;
    r.tok_mean = 74.625;
    r.lat_mean_s = 1.0 / 3.0;
    r.accept_len_mean = 2.6;
    r.exit_rate = 1.0;
    r.target_forwards = 1114;
    const std::string text = report_to_json(r);
    for (const char* key : {"method", "acc", "tok_mean", "lat_mean_s", "accept_len_mean", "exit_rate", "target_forwards"}) {
        EXPECT_NE(text.find(std::string("\"") + key + "\""), std::string::npos) << key;
    }
    const MetricsReport b = parse_report(text);
    EXPECT_EQ(b.method, r.method);
    EXPECT_EQ(b.acc, r.acc);
    EXPECT_EQ(b.lat_mean_s, r.lat_mean_s);
    EXPECT_EQ(b.target_forwards, r.target_forwards);
    EXPECT_EQ(parse_reports(reports_to_json({r, r})).size(), 2u);

    EXPECT_THROW(parse_report(R"({"method":"x","acc":1.5,"tok_mean":1,"lat_mean_s":0,"accept_len_mean":0,"exit_rate":0,"target_forwards":0})"),
                 FormatError);
    EXPECT_THROW(parse_report(R"({"method":"x"})"), FormatError);
}

TEST(RunsCsv, RoundTrip) {
    auto runs = run_method(setup(), small_config(), Method::specexit);
    runs[1].failed = true;
    std::stringstream ss;
    write_runs_csv(ss, runs);
    const auto back = read_runs_csv(ss);
    ASSERT_EQ(back.size(), runs.size());
    for (std::size_t i = 0; i < runs.size(); ++i) {
        EXPECT_EQ(back[i].task_id, runs[i].task_id);
        EXPECT_EQ(back[i].method, runs[i].method);
        EXPECT_EQ(back[i].failed, runs[i].failed);
        EXPECT_EQ(back[i].total_tokens, runs[i].total_tokens);
        EXPECT_EQ(back[i].latency_s, runs[i].latency_s);
        EXPECT_EQ(back[i].accept_len_mean, runs[i].accept_len_mean);
        EXPECT_EQ(back[i].exit_position, runs[i].exit_position);
    }
}

TEST(BuildData, PrunedFractionOnKnownFixtures) {
    const VerboseSuite& s = setup().suite;
    std::stringstream out, log;
    const BuildDataStats half = build_data(s, raw_lines(s, 4), out, log);
    EXPECT_EQ(half.total, s.tasks.size());
    EXPECT_EQ(half.skipped, 0u);
    EXPECT_DOUBLE_EQ(half.pruned_fraction, 0.5);

    // Only the two needed paragraphs: nothing left to prune.
    std::stringstream out2;
    const BuildDataStats none = build_data(s, raw_lines(s, 2), out2, log);
    EXPECT_EQ(none.annotated, s.tasks.size());
    EXPECT_DOUBLE_EQ(none.pruned_fraction, 0.0);

    // Every output line parses back as an annotated trace.
    std::string line;
    std::size_t n = 0;
    while (std::getline(out, line)) {
        EXPECT_EQ(parse_annotated_trace(line, s.markers, s.vocab.size()).exit_paragraph, 1u);
        ++n;
    }
    EXPECT_EQ(n, s.tasks.size());
}

TEST(BuildData, SkipsMalformedLinesWithTheirIds) {
    const VerboseSuite& s = setup().suite;
    std::vector<std::string> lines = raw_lines(s, 4);
    lines.push_back("");  // blank lines are ignored
    lines.push_back(R"({"id":"broken","prompt":[1],"reasoning":[99],"answer":[]})");
    std::stringstream out, log;
    const BuildDataStats st = build_data(s, lines, out, log);
    EXPECT_EQ(st.total, s.tasks.size() + 1);
    EXPECT_EQ(st.skipped, 1u);
    EXPECT_FALSE(st.too_many_skipped());
    EXPECT_NE(log.str().find("broken"), std::string::npos);

    lines.push_back("{oops");
    const BuildDataStats worse = build_data(s, lines, out, log);
    EXPECT_EQ(worse.skipped, 2u);
    EXPECT_TRUE(worse.too_many_skipped());  // 2 of 14
    EXPECT_NE(log.str().find("line " + std::to_string(lines.size())), std::string::npos);
}

TEST(HeadTraining, EpochsZeroKeepsInitialization) {
    const VerboseSuite& s = setup().suite;
    std::stringstream out, log;
    build_data(s, raw_lines(s, 4), out, log);
    std::vector<AnnotatedTrace> traces;
    for (std::string line; std::getline(out, line);) traces.push_back(parse_annotated_trace(line, s.markers, s.vocab.size()));

    TrainOptions o;
    o.epochs = 0;
    const HeadTrainingOutcome zero = train_head_on_traces(s, traces, o, 0.25, 0.01);
    EXPECT_EQ(zero.head.token, zero.initial.token);
    EXPECT_EQ(zero.head.signal, zero.initial.signal);
    EXPECT_TRUE(zero.result.log.empty());

    o.epochs = 3;
    o.learning_rate = 0.0;
    const HeadTrainingOutcome frozen = train_head_on_traces(s, traces, o, 0.25, 0.01);
    EXPECT_EQ(frozen.held_out_after.prog, frozen.held_out_before.prog);
    EXPECT_EQ(frozen.held_out_after.cls, frozen.held_out_before.cls);
    EXPECT_GT(frozen.held_out_examples, 0u);
}

TEST(HeadTraining, LearnsSuiteSignalsOnHeldOutTraces) {
    const VerboseSuite& s = setup().suite;
    std::stringstream out, log;
    build_data(s, raw_lines(s, 4), out, log);
    std::vector<AnnotatedTrace> traces;
    for (std::string line; std::getline(out, line);) traces.push_back(parse_annotated_trace(line, s.markers, s.vocab.size()));
    TrainOptions o;
    o.epochs = 100;
    const HeadTrainingOutcome r = train_head_on_traces(s, traces, o, 0.25, 0.01);
    EXPECT_FALSE(r.result.diverged);
    EXPECT_LE(r.held_out_after.conf, r.held_out_before.conf / 10);
    EXPECT_LE(r.held_out_after.prog, r.held_out_before.prog / 10);
    EXPECT_LE(r.held_out_after.rem, r.held_out_before.rem / 10);
}

TEST(Svg, BarChartHasOneBarPerMethodAndPanel) {
    std::vector<MetricsReport> reports(3);
    reports[0].method = "target_only";
    reports[1].method = "spec_only";
    reports[2].method = "a<b&c";
    for (auto& r : reports) {
        r.acc = 0.9;
        r.tok_mean = 100;
        r.lat_mean_s = 0.01;
    }
    const std::string svg = bar_chart_svg(reports, "t");
    EXPECT_EQ(svg.rfind("<svg", 0), 0u);
    EXPECT_NE(svg.find("</svg>"), std::string::npos);
    const std::regex rect("<rect ");
    const auto n = std::distance(std::sregex_iterator(svg.begin(), svg.end(), rect), std::sregex_iterator());
    EXPECT_EQ(n, 1 + 3 * 3 + 3);  // background, bars, legend swatches
    EXPECT_NE(svg.find("a&lt;b&amp;c"), std::string::npos);
}
