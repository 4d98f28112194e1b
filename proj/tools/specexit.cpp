// specexit: batch driver for data building, head training, generation, benchmarks,
// ablations and plots on the synthetic verbose suite.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "specexit/bench.hpp"
#include "specexit/draft.hpp"

using namespace specexit;
namespace fs = std::filesystem;

namespace {

struct CommonFlags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<int> gamma;
    std::optional<std::size_t> max_tokens;
    std::optional<std::string> out;
    std::optional<std::string> checkpoint;

    void add_to(CLI::App* cmd) {
        cmd->add_option("--config", config, "run configuration JSON")->check(CLI::ExistingFile);
        cmd->add_option("--seed", seed, "suite seed");
        cmd->add_option("--gamma", gamma, "draft chain length");
        cmd->add_option("--max-tokens", max_tokens, "generated-token budget");
        cmd->add_option("--out", out, "output directory");
        cmd->add_option("--checkpoint", checkpoint, "draft head checkpoint (default: oracle head)");
    }

    RunConfig resolve() const {
        RunConfig c = config.empty() ? RunConfig{} : load_run_config(config);
        if (seed) c.suite.seed = *seed;
        if (gamma) c.gamma = *gamma;
        if (max_tokens) c.max_tokens = *max_tokens;
        if (out) c.out = *out;
        if (checkpoint) c.checkpoint = *checkpoint;
        c.validate();
        fs::create_directories(c.out);
        return c;
    }
};

std::ofstream open_out(const fs::path& path) {
    std::ofstream os(path);
    if (!os) throw FormatError("cannot write " + path.string());
    return os;
}

void write_text(const fs::path& path, const std::string& text) { open_out(path) << text; }

// ---- build-data ----

int cmd_build_data(const CommonFlags& flags, const std::string& input) {
    const RunConfig cfg = flags.resolve();
    const VerboseSuite suite = make_verbose_suite(cfg.suite);

    fs::path in_path = input;
    if (input.empty()) {
        in_path = cfg.out / "raw_traces.jsonl";
        std::ofstream raw = open_out(in_path);
        for (std::size_t i = 0; i < suite.tasks.size(); ++i) raw << raw_trace_to_json(suite.trace(i)) << '\n';
        std::cerr << "wrote " << suite.tasks.size() << " suite traces to " << in_path << '\n';
    }

    std::ofstream out = open_out(cfg.out / "annotated.jsonl");
    const BuildDataStats stats = build_data(suite, read_lines(in_path), out, std::cerr);
    if (stats.total == 0) {
        std::cerr << "error: " << in_path << " holds no traces\n";
        return 1;
    }
    std::cout << "traces " << stats.total << ", annotated " << stats.annotated << ", skipped " << stats.skipped << '\n'
              << "pruned paragraph fraction " << std::fixed << std::setprecision(4) << stats.pruned_fraction << '\n';
    if (stats.too_many_skipped()) {
        std::cerr << "error: more than 10% of the input lines were malformed\n";
        return 1;
    }
    return 0;
}

// ---- train ----

struct TrainFlags {
    std::string data;
    int epochs = 100;
    double lr = 1e-2;
    std::size_t batch_size = 32;
    double holdout = 0.2;
    double init_scale = 0.01;
    int lm_epochs = 0;
};

void print_losses(const char* label, const LossBreakdown& l) {
    std::cout << label << ": cls " << l.cls << "  conf " << l.conf << "  prog " << l.prog << "  rem " << l.rem << '\n';
}

int cmd_train(const CommonFlags& flags, const TrainFlags& tf) {
    const RunConfig cfg = flags.resolve();
    const VerboseSuite suite = make_verbose_suite(cfg.suite);
    const fs::path data = tf.data.empty() ? cfg.out / "annotated.jsonl" : fs::path(tf.data);

    std::vector<AnnotatedTrace> traces;
    for (const std::string& line : read_lines(data)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        traces.push_back(parse_annotated_trace(line, suite.markers, suite.vocab.size()));
    }
    if (traces.empty()) throw ConfigError(data.string() + " holds no annotated traces");

    TrainOptions opts;
    opts.epochs = tf.epochs;
    opts.learning_rate = tf.lr;
    opts.batch_size = tf.batch_size;
    opts.seed = cfg.suite.seed;
    const HeadTrainingOutcome o = train_head_on_traces(suite, std::move(traces), opts, tf.holdout, tf.init_scale);

    save_checkpoint(cfg.out / "head.json", head_arrays(o.head));
    std::ofstream csv = open_out(cfg.out / "train_log.csv");
    write_train_csv(csv, o.result.log);

    std::cout << "examples: train " << o.train_examples << ", held-out " << o.held_out_examples
              << (o.held_out_examples == 0 ? " (no hold-out; evaluating on train)" : "") << '\n';
    print_losses("held-out before", o.held_out_before);
    print_losses("held-out after ", o.held_out_after);
    std::cout << "checkpoint " << (cfg.out / "head.json").string() << ", log " << (cfg.out / "train_log.csv").string()
              << '\n';

    if (tf.lm_epochs > 0) {
        TransformerConfig tc;
        tc.vocab_size = static_cast<int>(suite.vocab.size());
        tc.seed = cfg.suite.seed;
        TinyTransformer lm(tc);
        std::vector<std::vector<TokenId>> corpus;
        for (const SyntheticTask& t : suite.tasks) {
            std::vector<TokenId> s = thinking_prompt(t.prompt, suite.markers);
            s.insert(s.end(), t.reasoning.begin(), t.reasoning.end());
            s.push_back(suite.markers.think_close);
            s.insert(s.end(), t.answer.begin(), t.answer.end());
            s.push_back(suite.eos);
            if (s.size() > static_cast<std::size_t>(tc.context)) s.resize(static_cast<std::size_t>(tc.context));
            corpus.push_back(std::move(s));
        }
        LmTrainOptions lo;
        lo.epochs = tf.lm_epochs;
        lo.seed = cfg.suite.seed;
        train_language_model(lm, corpus, lo,
                             [](int e, double loss) { std::cout << "lm epoch " << e << " loss " << loss << '\n'; });
        save_checkpoint(cfg.out / "lm.json", transformer_arrays(lm));
    }

    if (o.result.diverged) {
        std::cerr << "error: non-finite loss at batch " << o.result.failed_batch
                  << "; saved the last stable head\n";
        return 2;
    }
    return 0;
}

// ---- generate ----

int cmd_generate(const CommonFlags& flags, const std::string& method_name, std::size_t task) {
    const RunConfig cfg = flags.resolve();
    const Method method = parse_method(method_name);
    const BenchSetup setup = make_bench_setup(cfg);
    const VerboseSuite& suite = setup.suite;
    if (task >= suite.tasks.size()) throw ConfigError("--task out of range");

    const ScriptedDraft draft(suite.draft_script, setup.head);
    GenerateOptions o = cfg.generate_options(suite.eos);
    o.early_exit = method == Method::specexit;
    SpecExitEngine engine(*suite.target, &draft, suite.markers, cfg.stopping, o);
    const auto prompt = suite.generation_prompt(task);
    const GenerationResult g = method == Method::target_only ? engine.generate_target_only(prompt)
                                                              : engine.generate(prompt);

    std::ofstream log = open_out(cfg.out / "steps.jsonl");
    for (const StepLogRecord& r : g.steps) log << step_record_to_json(r) << '\n';

    const auto answer = g.answer(suite.markers.think_close, suite.eos);
    std::cout << "prompt:    " << suite.vocab.render(prompt) << '\n'
              << "output:    " << suite.vocab.render(g.output) << '\n'
              << "answer:    " << suite.vocab.render(answer)
              << (answer == suite.tasks[task].answer ? "  (correct)" : "  (wrong)") << '\n'
              << "reasoning tokens " << g.reasoning_tokens << ", total " << g.output.size() << ", target forwards "
              << g.counters.target_forwards << ", mean accept length " << g.mean_accept_length() << '\n';
    if (g.exit_position) std::cout << "early exit after output token " << *g.exit_position << '\n';
    if (g.budget_exit) std::cout << "reasoning closed by the token budget\n";
    return 0;
}

// ---- bench / ablate / plot ----

StepLogSink step_sink(std::ofstream& os, const std::string& label) {
    return [&os, label](const std::string& task_id, const GenerationResult& g) {
        for (const StepLogRecord& r : g.steps) {
            auto j = nlohmann::json::parse(step_record_to_json(r));
            j["task"] = task_id;
            j["run"] = label;
            os << j.dump() << '\n';
        }
    };
}

int cmd_bench(const CommonFlags& flags, const std::string& method_name) {
    const RunConfig cfg = flags.resolve();
    const BenchSetup setup = make_bench_setup(cfg);
    std::vector<Method> methods = {Method::target_only, Method::spec_only, Method::specexit};
    if (!method_name.empty()) methods = {parse_method(method_name)};

    std::vector<RunRecord> all;
    std::vector<MetricsReport> reports;
    std::ofstream steps = open_out(cfg.out / "steps.jsonl");
    for (Method m : methods) {
        const auto runs = run_method(setup, cfg, m, step_sink(steps, to_string(m)));
        reports.push_back(aggregate(to_string(m), runs));
        all.insert(all.end(), runs.begin(), runs.end());
    }
    write_text(cfg.out / "report.json", reports_to_json(reports) + "\n");
    std::ofstream csv = open_out(cfg.out / "runs.csv");
    write_runs_csv(csv, all);
    write_text(cfg.out / "bench.svg", bar_chart_svg(reports, "SpecExit on the verbose suite"));

    std::size_t failures = 0, violations = 0;
    std::cout << std::fixed;
    for (const MetricsReport& r : reports) {
        std::cout << std::setw(12) << r.method << "  acc " << std::setprecision(3) << r.acc << "  reasoning tok "
                  << std::setprecision(1) << r.reasoning_tok_mean << "  tok " << r.tok_mean << "  target fwd "
                  << r.target_forwards << "  accept len " << std::setprecision(2) << r.accept_len_mean
                  << "  exit rate " << r.exit_rate << "  failures " << r.failures << '\n';
        failures += r.failures;
        violations += r.violations;
    }
    std::cout << "exit-placement violations " << violations << '\n';
    std::cout << "wrote report.json, runs.csv, steps.jsonl, bench.svg to " << cfg.out.string() << '\n';
    return failures == all.size() || violations > 0 ? 1 : 0;
}

int cmd_ablate(const CommonFlags& flags, const std::string& kind_name) {
    const RunConfig cfg = flags.resolve();
    const AblationKind kind = parse_ablation_kind(kind_name);
    const BenchSetup setup = make_bench_setup(cfg);
    const std::string stem = "ablation_" + to_string(kind);
    std::ofstream steps = open_out(cfg.out / (stem + "_steps.jsonl"));
    const auto rows = run_ablation(kind, setup, cfg, step_sink(steps, to_string(kind)));

    const std::string table = ablation_table(rows);
    std::cout << table;
    write_text(cfg.out / (stem + ".md"), table);
    std::ofstream csv = open_out(cfg.out / (stem + ".csv"));
    write_ablation_csv(csv, rows);
    std::vector<MetricsReport> reports;
    for (const AblationRow& r : rows) reports.push_back(r.report);
    write_text(cfg.out / (stem + ".svg"), bar_chart_svg(reports, "Ablation: " + to_string(kind)));
    std::size_t violations = 0;
    for (const auto& r : reports) violations += r.violations;
    std::cout << "exit-placement violations " << violations << '\n';
    return violations > 0 ? 1 : 0;
}

int cmd_plot(const CommonFlags& flags, const std::string& report_path) {
    const RunConfig cfg = flags.resolve();
    const fs::path in = report_path.empty() ? cfg.out / "report.json" : fs::path(report_path);
    std::ifstream is(in);
    if (!is) throw FormatError("cannot open " + in.string());
    std::stringstream buf;
    buf << is.rdbuf();
    const auto reports = parse_reports(buf.str());
    const fs::path svg = cfg.out / (in.stem().string() + ".svg");
    write_text(svg, bar_chart_svg(reports, in.stem().string()));
    std::cout << "wrote " << svg.string() << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"SpecExit speculative decoding with signal-guided early exit"};
    app.require_subcommand(1);

    CommonFlags build_flags, train_flags, gen_flags, bench_flags, ablate_flags, plot_flags;

    std::string input;
    auto* build = app.add_subcommand("build-data", "annotate reasoning traces with exit points and signal labels");
    build_flags.add_to(build);
    build->add_option("--input", input, "raw trace JSONL (default: the suite's own traces)");

    TrainFlags tf;
    auto* train = app.add_subcommand("train", "train the draft head on annotated traces");
    train_flags.add_to(train);
    train->add_option("--data", tf.data, "annotated JSONL (default: OUT/annotated.jsonl)");
    train->add_option("--epochs", tf.epochs, "training epochs");
    train->add_option("--lr", tf.lr, "SGD learning rate");
    train->add_option("--batch-size", tf.batch_size, "mini-batch size");
    train->add_option("--holdout", tf.holdout, "fraction of traces held out");
    train->add_option("--init-scale", tf.init_scale, "std of the random head initialization");
    train->add_option("--lm-epochs", tf.lm_epochs, "also train a TinyTransformer language model for this many epochs");

    std::string gen_method = "specexit";
    std::size_t task = 0;
    auto* gen = app.add_subcommand("generate", "decode one suite task and write its step log");
    gen_flags.add_to(gen);
    gen->add_option("--method", gen_method, "target_only | spec_only | specexit");
    gen->add_option("--task", task, "suite task index");

    std::string bench_method;
    auto* bench = app.add_subcommand("bench", "run the methods over the suite and write report, CSV and plot");
    bench_flags.add_to(bench);
    bench->add_option("--method", bench_method, "run a single method (default: all three)");

    std::string kind;
    auto* ablate = app.add_subcommand("ablate", "sweep stop signals, smoothing or split tokens");
    ablate_flags.add_to(ablate);
    ablate->add_option("--kind", kind, "signals | smoothing | split_tokens")->required();

    std::string report;
    auto* plot = app.add_subcommand("plot", "render a report JSON as an SVG bar chart");
    plot_flags.add_to(plot);
    plot->add_option("--report", report, "report JSON (default: OUT/report.json)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*build) return cmd_build_data(build_flags, input);
        if (*train) return cmd_train(train_flags, tf);
        if (*gen) return cmd_generate(gen_flags, gen_method, task);
        if (*bench) return cmd_bench(bench_flags, bench_method);
        if (*ablate) return cmd_ablate(ablate_flags, kind);
        if (*plot) return cmd_plot(plot_flags, report);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
