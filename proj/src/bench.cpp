#include "specexit/bench.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <random>
#include <sstream>

#include <json.hpp>

#include "specexit/draft.hpp"

namespace specexit {

using nlohmann::json;

Method parse_method(const std::string& text) {
    if (text == "target_only") return Method::target_only;
    if (text == "spec_only") return Method::spec_only;
    if (text == "specexit") return Method::specexit;
    throw ConfigError("unknown method '" + text + "' (target_only, spec_only, specexit)");
}

std::string to_string(Method method) {
    switch (method) {
        case Method::target_only: return "target_only";
        case Method::spec_only: return "spec_only";
        case Method::specexit: return "specexit";
    }
    return "specexit";
}

AblationKind parse_ablation_kind(const std::string& text) {
    if (text == "signals") return AblationKind::signals;
    if (text == "smoothing") return AblationKind::smoothing;
    if (text == "split_tokens") return AblationKind::split_tokens;
    throw ConfigError("unknown ablation '" + text + "' (signals, smoothing, split_tokens)");
}

std::string to_string(AblationKind kind) {
    switch (kind) {
        case AblationKind::signals: return "signals";
        case AblationKind::smoothing: return "smoothing";
        case AblationKind::split_tokens: return "split_tokens";
    }
    return "signals";
}

MetricsReport aggregate(const std::string& label, const std::vector<RunRecord>& runs) {
    MetricsReport r;
    r.method = label;
    for (const RunRecord& run : runs) {
        if (run.failed) {
            ++r.failures;
            continue;
        }
        ++r.runs;
        r.acc += run.correct ? 1.0 : 0.0;
        r.tok_mean += static_cast<double>(run.total_tokens);
        r.reasoning_tok_mean += static_cast<double>(run.reasoning_tokens);
        r.lat_mean_s += run.latency_s;
        r.accept_len_mean += run.accept_len_mean;
        r.exit_rate += run.exited ? 1.0 : 0.0;
        r.target_forwards += run.target_forwards;
        r.violations += run.violations;
    }
    if (r.runs > 0) {
        const double n = static_cast<double>(r.runs);
        r.acc /= n;
        r.tok_mean /= n;
        r.reasoning_tok_mean /= n;
        r.lat_mean_s /= n;
        r.accept_len_mean /= n;
        r.exit_rate /= n;
    }
    return r;
}

std::size_t placement_violations(const GenerationResult& result, const MarkerSet& markers, SplitMode mode) {
    if (!result.exit_position) return 0;
    const std::size_t e = *result.exit_position;
    const bool ok = e + 1 < result.output.size() && result.output[e + 1] == markers.think_close &&
                    is_step_split(result.output[e], markers, mode);
    return ok ? 0 : 1;
}

BuildDataStats build_data(const VerboseSuite& suite, const std::vector<std::string>& lines, std::ostream& out,
                          std::ostream& log) {
    const GreedyAnswerOracle oracle(*suite.target, suite.eos);
    BuildDataStats stats;
    double pruned = 0.0;
    for (std::size_t ln = 0; ln < lines.size(); ++ln) {
        if (lines[ln].find_first_not_of(" \t\r") == std::string::npos) continue;
        ++stats.total;
        const std::string id = peek_trace_id(lines[ln]).value_or("line " + std::to_string(ln + 1));
        try {
            const ReasoningTrace trace = parse_raw_trace(lines[ln], suite.markers, suite.vocab.size());
            const AnnotatedTrace a = build_annotated_trace(trace, *suite.target, oracle, suite.markers);
            out << annotated_trace_to_json(a) << '\n';
            ++stats.annotated;
            pruned += 1.0 - static_cast<double>(a.exit_paragraph + 1) / static_cast<double>(a.original_paragraphs);
        } catch (const std::exception& e) {
            ++stats.skipped;
            log << "skipping " << id << ": " << e.what() << '\n';
        }
    }
    if (stats.annotated > 0) stats.pruned_fraction = pruned / static_cast<double>(stats.annotated);
    return stats;
}

TrainBatch training_batch(const VerboseSuite& suite, const std::vector<AnnotatedTrace>& traces) {
    std::vector<Eigen::VectorXd> hidden;
    std::vector<double> conf, prog, rem;
    TrainBatch b;
    for (const AnnotatedTrace& a : traces) {
        std::vector<TokenId> ctx = thinking_prompt(a.trace.prompt, suite.markers);
        const std::size_t offset = ctx.size();
        ctx.insert(ctx.end(), a.trace.reasoning.begin(), a.trace.reasoning.end());
        const ForwardOutput fwd = suite.target->forward(ctx);
        for (std::size_t i = 0; i < a.labels.size(); ++i) {
            hidden.push_back(fwd.hidden.col(static_cast<Eigen::Index>(offset + i)));
            b.gold.push_back(i + 1 < a.trace.reasoning.size() ? a.trace.reasoning[i + 1] : suite.markers.think_close);
            conf.push_back(a.labels.conf[i]);
            prog.push_back(a.labels.prog[i]);
            rem.push_back(a.labels.remaining[i]);
        }
    }
    b.hidden.resize(suite.options.hidden_dim, static_cast<Eigen::Index>(hidden.size()));
    for (std::size_t j = 0; j < hidden.size(); ++j) b.hidden.col(static_cast<Eigen::Index>(j)) = hidden[j];
    b.conf = Eigen::Map<Eigen::VectorXd>(conf.data(), static_cast<Eigen::Index>(conf.size()));
    b.prog = Eigen::Map<Eigen::VectorXd>(prog.data(), static_cast<Eigen::Index>(prog.size()));
    b.rem = Eigen::Map<Eigen::VectorXd>(rem.data(), static_cast<Eigen::Index>(rem.size()));
    return b;
}

HeadTrainingOutcome train_head_on_traces(const VerboseSuite& suite, std::vector<AnnotatedTrace> traces,
                                         const TrainOptions& options, double holdout, double init_scale) {
    if (traces.empty()) throw ConfigError("no annotated traces to train on");
    if (!(holdout >= 0.0 && holdout < 1.0)) throw ConfigError("holdout fraction must lie in [0, 1)");
    if (options.epochs < 0) throw ConfigError("epochs must be >= 0");
    std::mt19937_64 rng(options.seed);
    std::shuffle(traces.begin(), traces.end(), rng);
    std::size_t n_hold = static_cast<std::size_t>(holdout * static_cast<double>(traces.size()));
    if (n_hold == traces.size()) n_hold = 0;
    const std::vector<AnnotatedTrace> held(traces.end() - static_cast<std::ptrdiff_t>(n_hold), traces.end());
    traces.resize(traces.size() - n_hold);

    const TrainBatch train = training_batch(suite, traces);
    const TrainBatch eval = held.empty() ? train : training_batch(suite, held);

    HeadTrainingOutcome o;
    o.initial = random_head(static_cast<Eigen::Index>(suite.vocab.size()), suite.options.hidden_dim, init_scale,
                            options.seed);
    o.head = o.initial;
    o.held_out_before = evaluate_losses(o.head, eval);
    o.result = train_head(o.head, train, options);
    o.held_out_after = evaluate_losses(o.head, eval);
    o.train_examples = static_cast<std::size_t>(train.size());
    o.held_out_examples = held.empty() ? 0 : static_cast<std::size_t>(eval.size());
    return o;
}

BenchSetup make_bench_setup(const RunConfig& config) {
    config.validate();
    BenchSetup setup{make_verbose_suite(config.suite), {}};
    if (config.checkpoint) {
        setup.head = head_from_arrays(load_checkpoint(*config.checkpoint));
        if (setup.head.vocab_size() != static_cast<Eigen::Index>(setup.suite.vocab.size()) ||
            setup.head.dim() != config.suite.hidden_dim) {
            throw ConfigError("checkpoint head shape does not match the suite");
        }
    } else {
        setup.head = setup.suite.oracle_head();
    }
    return setup;
}

std::vector<RunRecord> run_method(const BenchSetup& setup, const RunConfig& config, Method method,
                                  const StepLogSink& sink) {
    const VerboseSuite& suite = setup.suite;
    const ScriptedDraft draft(suite.draft_script, setup.head);
    GenerateOptions opts = config.generate_options(suite.eos);
    opts.early_exit = method == Method::specexit;
    SpecExitEngine engine(*suite.target, &draft, suite.markers, config.stopping, opts);

    std::vector<RunRecord> runs;
    for (std::size_t i = 0; i < suite.tasks.size(); ++i) {
        const SyntheticTask& task = suite.tasks[i];
        RunRecord rec;
        rec.task_id = task.id;
        rec.method = method;
        try {
            const auto prompt = suite.generation_prompt(i);
            const GenerationResult g =
                method == Method::target_only ? engine.generate_target_only(prompt) : engine.generate(prompt);
            rec.correct = g.answer(suite.markers.think_close, suite.eos) == task.answer;
            rec.reasoning_tokens = g.reasoning_tokens;
            rec.total_tokens = g.output.size();
            rec.latency_s = g.latency_s;
            rec.accept_len_mean = g.mean_accept_length();
            rec.exited = g.exit_position.has_value();
            rec.budget_exit = g.budget_exit;
            rec.target_forwards = g.counters.target_forwards;
            rec.exit_position = g.exit_position ? static_cast<long long>(*g.exit_position) : -1;
            rec.violations = placement_violations(g, suite.markers, config.stopping.marker_mode);
            if (sink) sink(task.id, g);
        } catch (const std::exception& e) {
            rec.failed = true;
            rec.error = e.what();
        }
        runs.push_back(std::move(rec));
    }
    return runs;
}

std::vector<AblationRow> ablation_grid(AblationKind kind, const StoppingConfig& base) {
    std::vector<AblationRow> rows;
    auto with_smoothing = [&](StoppingConfig c) {
        c.smoothing = base.smoothing;
        c.marker_mode = base.marker_mode;
        return c;
    };
    switch (kind) {
        case AblationKind::signals:
            rows.push_back({"confidence>0.9", with_smoothing(StoppingConfig::confidence_only(0.9)), {}});
            rows.push_back({"progress>0.8", with_smoothing(StoppingConfig::progress_only(0.8)), {}});
            rows.push_back({"remaining<100", with_smoothing(StoppingConfig::remaining_only(100.0)), {}});
            rows.push_back({"combined 0.8/0.3/200", with_smoothing(StoppingConfig::combined()), {}});
            break;
        case AblationKind::smoothing:
            for (const SmoothingMethod& m :
                 {SmoothingMethod::none(), SmoothingMethod::momentum(10), SmoothingMethod::sliding_window(10),
                  SmoothingMethod::paragraph_mean(), SmoothingMethod::ewma(0.1)}) {
                StoppingConfig c = base;
                c.smoothing = m;
                rows.push_back({m.label(), c, {}});
            }
            break;
        case AblationKind::split_tokens:
            for (SplitMode mode : {SplitMode::paragraph, SplitMode::discourse, SplitMode::contrastive}) {
                StoppingConfig c = base;
                c.marker_mode = mode;
                rows.push_back({to_string(mode), c, {}});
            }
            break;
    }
    return rows;
}

std::vector<AblationRow> run_ablation(AblationKind kind, const BenchSetup& setup, const RunConfig& config,
                                      const StepLogSink& sink) {
    std::vector<AblationRow> rows = ablation_grid(kind, config.stopping);
    for (AblationRow& row : rows) {
        RunConfig c = config;
        c.stopping = row.stopping;
        row.report = aggregate(row.label, run_method(setup, c, Method::specexit, sink));
    }
    return rows;
}

namespace {

json report_json(const MetricsReport& r) {
    return json{{"method", r.method},
                {"acc", r.acc},
                {"tok_mean", r.tok_mean},
                {"lat_mean_s", r.lat_mean_s},
                {"accept_len_mean", r.accept_len_mean},
                {"exit_rate", r.exit_rate},
                {"target_forwards", r.target_forwards},
                {"reasoning_tok_mean", r.reasoning_tok_mean},
                {"runs", r.runs},
                {"failures", r.failures},
                {"violations", r.violations}};
}

MetricsReport report_from(const json& j) {
    if (!j.is_object()) throw FormatError("report must be a JSON object");
    MetricsReport r;
    try {
        r.method = j.at("method").get<std::string>();
        r.acc = j.at("acc").get<double>();
        r.tok_mean = j.at("tok_mean").get<double>();
        r.lat_mean_s = j.at("lat_mean_s").get<double>();
        r.accept_len_mean = j.at("accept_len_mean").get<double>();
        r.exit_rate = j.at("exit_rate").get<double>();
        r.target_forwards = j.at("target_forwards").get<std::size_t>();
        r.reasoning_tok_mean = j.value("reasoning_tok_mean", 0.0);
        r.runs = j.value("runs", std::size_t{0});
        r.failures = j.value("failures", std::size_t{0});
        r.violations = j.value("violations", std::size_t{0});
    } catch (const json::exception& e) {
        throw FormatError(std::string("bad report: ") + e.what());
    }
    if (r.acc < 0.0 || r.acc > 1.0 || r.exit_rate < 0.0 || r.exit_rate > 1.0) {
        throw FormatError("report fractions must lie in [0, 1]");
    }
    if (r.tok_mean < 0.0) throw FormatError("report token mean must be >= 0");
    return r;
}

json parse_json(const std::string& text) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw FormatError(std::string("invalid JSON: ") + e.what());
    }
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

}  // namespace

std::string report_to_json(const MetricsReport& report) { return report_json(report).dump(2); }

MetricsReport parse_report(const std::string& text) { return report_from(parse_json(text)); }

std::string reports_to_json(const std::vector<MetricsReport>& reports) {
    json arr = json::array();
    for (const MetricsReport& r : reports) arr.push_back(report_json(r));
    return arr.dump(2);
}

std::vector<MetricsReport> parse_reports(const std::string& text) {
    const json j = parse_json(text);
    std::vector<MetricsReport> out;
    if (j.is_array()) {
        for (const json& r : j) out.push_back(report_from(r));
    } else {
        out.push_back(report_from(j));
    }
    return out;
}

namespace {
constexpr const char* kRunsHeader =
    "task_id,method,failed,correct,reasoning_tokens,total_tokens,latency_s,accept_len_mean,exited,budget_exit,"
    "target_forwards,exit_position,violations";
}

void write_runs_csv(std::ostream& os, const std::vector<RunRecord>& runs) {
    os << kRunsHeader << '\n' << std::setprecision(17);
    for (const RunRecord& r : runs) {
        os << r.task_id << ',' << to_string(r.method) << ',' << r.failed << ',' << r.correct << ','
           << r.reasoning_tokens << ',' << r.total_tokens << ',' << r.latency_s << ',' << r.accept_len_mean << ','
           << r.exited << ',' << r.budget_exit << ',' << r.target_forwards << ',' << r.exit_position << ','
           << r.violations << '\n';
    }
}

std::vector<RunRecord> read_runs_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line) || line != kRunsHeader) throw FormatError("runs CSV header mismatch");
    std::vector<RunRecord> runs;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto c = split_csv(line);
        if (c.size() != 13) throw FormatError("runs CSV row needs 13 columns: " + line);
        RunRecord r;
        try {
            r.task_id = c[0];
            r.method = parse_method(c[1]);
            r.failed = std::stoi(c[2]) != 0;
            r.correct = std::stoi(c[3]) != 0;
            r.reasoning_tokens = std::stoull(c[4]);
            r.total_tokens = std::stoull(c[5]);
            r.latency_s = std::stod(c[6]);
            r.accept_len_mean = std::stod(c[7]);
            r.exited = std::stoi(c[8]) != 0;
            r.budget_exit = std::stoi(c[9]) != 0;
            r.target_forwards = std::stoull(c[10]);
            r.exit_position = std::stoll(c[11]);
            r.violations = std::stoull(c[12]);
        } catch (const std::logic_error&) {
            throw FormatError("runs CSV row has a malformed cell: " + line);
        }
        runs.push_back(std::move(r));
    }
    return runs;
}

std::string ablation_table(const std::vector<AblationRow>& rows) {
    std::ostringstream os;
    os << "| config | acc | reasoning tok | tok | exit rate | target fwd |\n";
    os << "|---|---|---|---|---|---|\n";
    os << std::fixed;
    for (const AblationRow& row : rows) {
        const MetricsReport& r = row.report;
        os << "| " << row.label << " | " << std::setprecision(3) << r.acc << " | " << std::setprecision(1)
           << r.reasoning_tok_mean << " | " << r.tok_mean << " | " << std::setprecision(3) << r.exit_rate << " | "
           << r.target_forwards << " |\n";
    }
    return os.str();
}

void write_ablation_csv(std::ostream& os, const std::vector<AblationRow>& rows) {
    os << "config,acc,reasoning_tok_mean,tok_mean,lat_mean_s,exit_rate,target_forwards,failures,violations\n"
       << std::setprecision(17);
    for (const AblationRow& row : rows) {
        const MetricsReport& r = row.report;
        os << '"' << row.label << "\"," << r.acc << ',' << r.reasoning_tok_mean << ',' << r.tok_mean << ','
           << r.lat_mean_s << ',' << r.exit_rate << ',' << r.target_forwards << ',' << r.failures << ','
           << r.violations << '\n';
    }
}

namespace {

std::string escape_xml(const std::string& s) {
    std::string out;
    for (char ch : s) {
        switch (ch) {
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '&': out += "&amp;"; break;
            case '"': out += "&quot;"; break;
            default: out += ch;
        }
    }
    return out;
}

std::string fmt(double v, int digits) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(digits) << v;
    return os.str();
}

}  // namespace

std::string bar_chart_svg(const std::vector<MetricsReport>& reports, const std::string& title) {
    static const char* kColors[] = {"#9e9e9e", "#5b8fd6", "#e07b39", "#4caf50", "#8e6cc1", "#c94f6d"};
    struct Panel {
        const char* name;
        double (*value)(const MetricsReport&);
        int digits;
    };
    const Panel panels[] = {
        {"Acc", [](const MetricsReport& r) { return 100.0 * r.acc; }, 1},
        {"Tok", [](const MetricsReport& r) { return r.tok_mean; }, 1},
        {"Lat (ms)", [](const MetricsReport& r) { return 1000.0 * r.lat_mean_s; }, 2},
    };
    const double panel_w = 220, panel_h = 200, top = 50, left = 20, bar_gap = 8;
    const double width = left * 2 + 3 * panel_w, height = top + panel_h + 60 + 18.0 * static_cast<double>(reports.size());

    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
       << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << width / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << escape_xml(title)
       << "</text>\n";
    const double n = static_cast<double>(std::max<std::size_t>(reports.size(), 1));
    for (int p = 0; p < 3; ++p) {
        const Panel& panel = panels[p];
        const double x0 = left + p * panel_w + 15, plot_w = panel_w - 30, base = top + panel_h;
        double top_value = 0.0;
        for (const MetricsReport& r : reports) top_value = std::max(top_value, panel.value(r));
        if (top_value <= 0.0) top_value = 1.0;
        os << "<text x=\"" << x0 + plot_w / 2 << "\" y=\"" << top - 8 << "\" text-anchor=\"middle\">" << panel.name
           << "</text>\n";
        os << "<line x1=\"" << x0 << "\" y1=\"" << base << "\" x2=\"" << x0 + plot_w << "\" y2=\"" << base
           << "\" stroke=\"black\"/>\n";
        const double bar_w = (plot_w - bar_gap * (n + 1)) / n;
        for (std::size_t i = 0; i < reports.size(); ++i) {
            const double v = panel.value(reports[i]);
            const double h = (panel_h - 20) * v / top_value;
            const double x = x0 + bar_gap + static_cast<double>(i) * (bar_w + bar_gap);
            os << "<rect x=\"" << x << "\" y=\"" << base - h << "\" width=\"" << bar_w << "\" height=\"" << h
               << "\" fill=\"" << kColors[i % 6] << "\"/>\n";
            os << "<text x=\"" << x + bar_w / 2 << "\" y=\"" << base - h - 4 << "\" text-anchor=\"middle\">"
               << fmt(v, panel.digits) << "</text>\n";
        }
    }
    for (std::size_t i = 0; i < reports.size(); ++i) {
        const double y = top + panel_h + 30 + 18.0 * static_cast<double>(i);
        os << "<rect x=\"" << left + 15 << "\" y=\"" << y - 10 << "\" width=\"12\" height=\"12\" fill=\""
           << kColors[i % 6] << "\"/>\n";
        os << "<text x=\"" << left + 33 << "\" y=\"" << y << "\">" << escape_xml(reports[i].method) << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

}  // namespace specexit
