// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "reference_decoder.hpp"
#include "specexit/bench.hpp"
#include "specexit/draft.hpp"
#include "specexit/engine.hpp"
#include "specexit/trace_builder.hpp"
#include "specexit/trainer.hpp"

using namespace specexit;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

int failures = 0;

void report(int id, const char* name, bool ok, const std::string& detail) {
    std::printf("criterion %d (%s): %s  %s\n", id, name, ok ? "PASS" : "FAIL", detail.c_str());
    std::fflush(stdout);
    if (!ok) ++failures;
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

// --- 1 -------------------------------------------------------------------------------

void losslessness() {
    const auto t0 = Clock::now();
    StoppingConfig cfg;
    cfg.smoothing = SmoothingMethod::none();
    std::size_t pairs = 0, mismatches = 0, tokens = 0;
    for (std::uint64_t seed = 1000; seed < 1120; ++seed) {
        const ScriptPair pair = random_script_pair(seed);
        const DraftHeadd head(pair.target->vocab_size(), pair.target->hidden_dim());
        const ScriptedDraft draft(pair.draft, head);
        const auto ref = oracle::greedy_decode(*pair.target, pair.prompt, Vocabulary::kThinkClose, 3, 64, 16);
        for (int gamma : {1, 2, 4, 7}) {
            GenerateOptions o;
            o.gamma = gamma;
            o.max_tokens = 64;
            o.answer_budget = 16;
            o.eos = 3;
            o.early_exit = false;
            SpecExitEngine engine(*pair.target, &draft, MarkerSet{}, cfg, o);
            const GenerationResult r = engine.generate(pair.prompt);
            if (r.output != ref.output || r.budget_exit != ref.budget_exit) ++mismatches;
        }
        tokens += ref.output.size();
        ++pairs;
    }
    const double secs = seconds_since(t0);
    report(1, "losslessness", pairs >= 100 && mismatches == 0 && secs < 60.0,
           fmt("%zu pairs x 4 gammas, %zu reference tokens, %zu mismatches, %.2fs", pairs, tokens, mismatches, secs));
}

// --- 2 -------------------------------------------------------------------------------

TrainBatch random_batch(int V, int D, int N, unsigned seed) {
    std::mt19937 rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    TrainBatch b;
    b.hidden.resize(D, N);
    for (Eigen::Index i = 0; i < b.hidden.size(); ++i) b.hidden.data()[i] = n(rng);
    b.conf.resize(N);
    b.prog.resize(N);
    b.rem.resize(N);
    for (int i = 0; i < N; ++i) {
        b.gold.push_back(static_cast<TokenId>(rng() % V));
        b.conf(i) = u(rng);
        b.prog(i) = u(rng);
        b.rem(i) = std::floor(300.0 * u(rng));
    }
    return b;
}

void gradients() {
    double worst_rel = 0.0, worst_cross = 0.0;
    for (unsigned seed = 0; seed < 10; ++seed) {
        const DraftHeadd head = random_head(7, 6, 0.5, seed);
        const TrainBatch b = random_batch(7, 6, 16, seed + 50);
        const GradCheckReport r = gradient_check(head, b, 1e-4);
        worst_rel = std::max(worst_rel, r.max_rel_error);
        worst_cross = std::max(worst_cross, r.max_cross_task);
    }
    report(2, "gradient check", worst_rel < 1e-4 && worst_cross == 0.0,
           fmt("10 heads, max relative error %.3e, max cross-task %.1e", worst_rel, worst_cross));
}

// --- 3 -------------------------------------------------------------------------------

void weighting() {
    std::mt19937 rng(3);
    std::uniform_real_distribution<double> u(0.0, 10.0);
    double worst_sum = 0.0, worst_scale = 0.0;
    for (int i = 0; i < 10000; ++i) {
        const std::array<double, 3> g{u(rng), u(rng), u(rng)};
        const WeightState w = dynamic_weights(g);
        worst_sum = std::max(worst_sum, std::abs(w.sum() - 1.0));
        const double k = std::exp(u(rng) - 5.0);
        const WeightState ws = dynamic_weights({k * g[0], k * g[1], k * g[2]});
        for (int j = 0; j < 3; ++j) worst_scale = std::max(worst_scale, std::abs(ws.lambda[j] - w.lambda[j]));
    }
    bool symmetric = true;
    for (double v : {1e-6, 0.3, 1.0, 42.0}) {
        const WeightState w = dynamic_weights({v, v, v});
        for (double l : w.lambda) symmetric = symmetric && std::abs(l - 1.0 / 3.0) < 1e-15;
    }
    report(3, "dynamic weights", worst_sum <= 1e-9 && worst_scale <= 1e-9 && symmetric,
           fmt("10000 draws, max |sum-1| %.1e, max scale drift %.1e, symmetric %s", worst_sum, worst_scale,
               symmetric ? "yes" : "no"));
}

// --- 4 -------------------------------------------------------------------------------

std::vector<double> smooth(const SmoothingMethod& m, const std::vector<double>& s, const std::vector<bool>& boundary) {
    Smoother sm(m);
    std::vector<double> out;
    for (std::size_t t = 0; t < s.size(); ++t) {
        if (boundary[t]) sm.on_paragraph_boundary();
        const SignalTriple x = sm.update({s[t], s[t], s[t]});
        out.push_back(x.remaining);
    }
    return out;
}

void smoothing() {
    std::mt19937 rng(44);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double worst = 0.0, worst_closed = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t len = 1 + rng() % 80;
        std::vector<double> s(len);
        std::vector<bool> boundary(len, false);
        std::vector<std::size_t> start(len, 0);
        const double scale = trial % 2 ? 1.0 : 300.0;  // remaining-like magnitudes on even trials
        for (std::size_t t = 0; t < len; ++t) {
            s[t] = scale * u(rng);
            boundary[t] = t > 0 && u(rng) < 0.12;
            start[t] = t == 0 || boundary[t] ? t : start[t - 1];
        }
        const double alpha = 0.01 + 0.98 * u(rng);
        const std::size_t n = 2 + rng() % 15;
        const auto e = smooth(SmoothingMethod::ewma(alpha), s, boundary);
        const auto w = smooth(SmoothingMethod::sliding_window(static_cast<int>(n)), s, boundary);
        const auto m = smooth(SmoothingMethod::momentum(static_cast<int>(n)), s, boundary);
        const auto p = smooth(SmoothingMethod::paragraph_mean(), s, boundary);
        const auto z = smooth(SmoothingMethod::none(), s, boundary);
        for (std::size_t t = 0; t < len; ++t) {
            worst = std::max({worst, std::abs(e[t] - oracle::ewma(s, t, alpha)),
                              std::abs(w[t] - oracle::sliding_window(s, t, n)),
                              std::abs(m[t] - oracle::momentum(s, t, n)),
                              std::abs(p[t] - oracle::paragraph_mean(s, t, start)),
                              std::abs(z[t] - s[t])});
            worst_closed = std::max(worst_closed, std::abs(e[t] - oracle::ewma_closed_form(s, t, alpha)));
        }
    }
    double worst_fixed = 0.0;
    for (const SmoothingMethod& m : {SmoothingMethod::none(), SmoothingMethod::ewma(0.1),
                                     SmoothingMethod::sliding_window(10), SmoothingMethod::momentum(10),
                                     SmoothingMethod::paragraph_mean()}) {
        for (double c : {0.0, 0.37, 1.0, 150.0}) {
            std::vector<double> s(40, c);
            std::vector<bool> boundary(40, false);
            for (std::size_t t = 5; t < 40; t += 9) boundary[t] = true;
            for (double v : smooth(m, s, boundary)) worst_fixed = std::max(worst_fixed, std::abs(v - c));
        }
    }
    report(4, "smoothing", worst <= 1e-9 && worst_closed <= 1e-9 && worst_fixed <= 1e-9,
           fmt("1000 streams, max error %.1e, EWMA closed form %.1e, constant fixed point %.1e", worst,
               worst_closed, worst_fixed));
}

// --- 5 -------------------------------------------------------------------------------

// Answers correctly iff the prefix length is one of `good`.
class LengthOracle final : public AnswerOracle {
public:
    LengthOracle(std::vector<std::size_t> good, std::vector<TokenId> right, std::vector<TokenId> wrong)
        : good_(std::move(good)), right_(std::move(right)), wrong_(std::move(wrong)) {}
    std::vector<TokenId> check(std::span<const TokenId>, std::span<const TokenId> prefix,
                               const MarkerSet&) const override {
        return std::find(good_.begin(), good_.end(), prefix.size()) != good_.end() ? right_ : wrong_;
    }

private:
    std::vector<std::size_t> good_;
    std::vector<TokenId> right_, wrong_;
};

// Every label invariant of one annotated trace, against the probabilities it came from.
bool labels_hold(const SignalLabels& l, std::size_t exit, const std::vector<double>& probs) {
    if (l.size() != exit + 1) return false;
    double log_sum = 0.0;
    for (std::size_t i = 0; i <= exit; ++i) {
        log_sum += std::log(std::max(probs[i], 1e-12));
        if (std::abs(l.conf[i] - std::exp(log_sum / static_cast<double>(i + 1))) > 1e-12) return false;
        if (l.conf[i] <= 0.0 || l.conf[i] > 1.0) return false;
        if (i > 0 && !(l.prog[i] >= l.prog[i - 1] && l.remaining[i] < l.remaining[i - 1])) return false;
        if ((l.remaining[i] == 0.0) != (l.prog[i] == 1.0)) return false;
    }
    const bool starts = exit == 0 ? l.prog[0] == 1.0 : l.prog[0] == 0.0;
    return starts && l.prog[exit] == 1.0 && l.remaining[exit] == 0.0;
}

void prefix_search() {
    constexpr TokenId kSplit = Vocabulary::kParagraph;
    const std::vector<TokenId> right{20}, wrong{21};
    std::mt19937 rng(505);
    std::size_t traces = 0, disagreements = 0, bad_labels = 0;
    for (int trial = 0; trial < 200; ++trial) {
        ReasoningTrace t;
        t.id = "r" + std::to_string(trial);
        t.prompt = {9};
        const std::size_t paragraphs = 1 + rng() % 10;
        for (std::size_t k = 0; k < paragraphs; ++k) {
            for (std::size_t w = rng() % 6; w > 0; --w) t.reasoning.push_back(static_cast<TokenId>(10 + rng() % 6));
            t.reasoning.push_back(kSplit);
            t.paragraph_ends.push_back(t.reasoning.size() - 1);
        }
        std::vector<std::size_t> good;
        for (std::size_t e : t.paragraph_ends)
            if (rng() % 4 == 0) good.push_back(e + 1);
        const LengthOracle oracle(good, right, wrong);

        std::size_t expect = paragraphs - 1;
        for (std::size_t k = 0; k < paragraphs; ++k) {
            const auto prefix = std::span<const TokenId>(t.reasoning).first(t.paragraph_ends[k] + 1);
            if (oracle.check(t.prompt, prefix, MarkerSet{}) == right) {
                expect = k;
                break;
            }
        }
        const std::size_t got = minimal_prefix_search(t, oracle, right, MarkerSet{});
        if (got != expect) ++disagreements;

        std::vector<double> probs(t.reasoning.size());
        std::uniform_real_distribution<double> u(0.05, 1.0);
        for (auto& p : probs) p = u(rng);
        const std::size_t exit = t.paragraph_ends[got];
        if (!labels_hold(annotate_signals(exit, probs), exit, probs)) ++bad_labels;
        ++traces;
    }

    // The suite traces go through the full pipeline with the target as answer oracle.
    const VerboseSuite suite = make_verbose_suite();
    const GreedyAnswerOracle answers(*suite.target, suite.eos);
    for (std::size_t i = 0; i < suite.tasks.size(); ++i) {
        const AnnotatedTrace a = build_annotated_trace(suite.trace(i), *suite.target, answers, suite.markers);
        const auto probs = realized_token_probs(*suite.target, suite.tasks[i].prompt, suite.tasks[i].reasoning,
                                                suite.markers);
        const std::size_t exit = a.trace.paragraph_ends[a.exit_paragraph];
        if (!labels_hold(a.labels, exit, probs)) ++bad_labels;
        ++traces;
    }
    report(5, "minimal prefix search", disagreements == 0 && bad_labels == 0,
           fmt("200 random traces, %zu disagreements with exhaustive search; %zu annotated traces, %zu label "
               "violations",
               disagreements, traces, bad_labels));
}

// --- 6 -------------------------------------------------------------------------------

void learning() {
    const VerboseSuite suite = make_verbose_suite();
    const GreedyAnswerOracle answers(*suite.target, suite.eos);
    std::vector<AnnotatedTrace> traces;
    for (std::size_t i = 0; i < suite.tasks.size(); ++i)
        traces.push_back(build_annotated_trace(suite.trace(i), *suite.target, answers, suite.markers));

    TrainOptions o;
    o.epochs = 100;
    o.seed = 11;
    const HeadTrainingOutcome joint = train_head_on_traces(suite, traces, o, 0.2, 0.01);
    o.mode = TrainMode::token_only;
    const HeadTrainingOutcome tok = train_head_on_traces(suite, traces, o, 0.2, 0.01);

    const LossBreakdown& b = joint.held_out_before;
    const LossBreakdown& a = joint.held_out_after;
    const bool drop = !joint.result.diverged && a.conf <= b.conf / 10 && a.prog <= b.prog / 10 && a.rem <= b.rem / 10;
    const double degrade = (a.cls - tok.held_out_after.cls) / tok.held_out_after.cls;
    report(6, "learning", drop && degrade <= 0.05 && joint.held_out_examples > 0,
           fmt("held-out conf %.2e->%.2e, prog %.2e->%.2e, rem %.2e->%.2e; CE joint %.6f vs token-only %.6f "
               "(%+.2f%%)",
               b.conf, a.conf, b.prog, a.prog, b.rem, a.rem, a.cls, tok.held_out_after.cls, 100 * degrade));
}

// --- 7 and 8 -------------------------------------------------------------------------

struct Logged {
    std::string task;
    GenerationResult result;
    SplitMode mode;
};

// Independent of the library's own check: an early exit is valid only if output[e] is in
// the configured split set and the very next token is the forced </think>, with no
// other </think> before it.
std::size_t count_violations(const std::vector<Logged>& logs, const MarkerSet& markers) {
    std::size_t bad = 0;
    for (const Logged& l : logs) {
        const auto& out = l.result.output;
        if (!l.result.exit_position) continue;
        const std::size_t e = *l.result.exit_position;
        const auto first_close = std::find(out.begin(), out.end(), markers.think_close) - out.begin();
        const auto& split = markers.split_set(l.mode);
        const bool ok = e + 1 < out.size() && static_cast<std::size_t>(first_close) == e + 1 &&
                        split.count(out[e]) == 1;
        if (!ok) ++bad;
    }
    return bad;
}

void end_to_end() {
    const auto t0 = Clock::now();
    RunConfig config;
    const BenchSetup setup = make_bench_setup(config);
    const VerboseSuite& suite = setup.suite;

    std::vector<Logged> logs;
    auto sink_for = [&](SplitMode mode) {
        return [&logs, mode](const std::string& task, const GenerationResult& g) { logs.push_back({task, g, mode}); };
    };
    const auto spec = run_method(setup, config, Method::spec_only, sink_for(config.stopping.marker_mode));
    const std::size_t spec_logs = logs.size();
    const auto exit = run_method(setup, config, Method::specexit, sink_for(config.stopping.marker_mode));
    const double secs = seconds_since(t0);

    std::size_t same_answers = 0, spec_reason = 0, exit_reason = 0, spec_fw = 0, exit_fw = 0, failed = 0;
    for (std::size_t i = 0; i < suite.tasks.size(); ++i) {
        if (spec[i].failed || exit[i].failed) {
            ++failed;
            continue;
        }
        const auto& gs = logs[i].result;
        const auto& ge = logs[spec_logs + i].result;
        if (gs.answer(suite.markers.think_close, suite.eos) == ge.answer(suite.markers.think_close, suite.eos))
            ++same_answers;
        spec_reason += spec[i].reasoning_tokens;
        exit_reason += exit[i].reasoning_tokens;
        spec_fw += spec[i].target_forwards;
        exit_fw += exit[i].target_forwards;
    }
    const double reduction = 1.0 - static_cast<double>(exit_reason) / static_cast<double>(spec_reason);
    const double fewer = 1.0 - static_cast<double>(exit_fw) / static_cast<double>(spec_fw);
    const std::size_t n = suite.tasks.size();
    report(7, "end-to-end early exit",
           n == 50 && failed == 0 && same_answers == n && reduction >= 0.30 && fewer >= 0.20 && secs < 300.0,
           fmt("%zu tasks, reasoning %.1f->%.1f (-%.1f%%), forwards %zu->%zu (-%.1f%%), same answers %zu/%zu, "
               "%.2fs",
               n, static_cast<double>(spec_reason) / n, static_cast<double>(exit_reason) / n, 100 * reduction,
               spec_fw, exit_fw, 100 * fewer, same_answers, n, secs));

    // Placement across the bench logs above and every ablation sweep.
    for (AblationKind kind : {AblationKind::signals, AblationKind::smoothing, AblationKind::split_tokens}) {
        for (AblationRow row : ablation_grid(kind, config.stopping)) {
            RunConfig c = config;
            c.stopping = row.stopping;
            run_method(setup, c, Method::specexit, sink_for(row.stopping.marker_mode));
        }
    }
    std::size_t exits = 0, budget = 0;
    for (const Logged& l : logs) {
        exits += l.result.exit_position.has_value();
        budget += l.result.budget_exit;
    }
    const std::size_t bad = count_violations(logs, suite.markers);
    report(8, "exit placement", bad == 0 && exits > 0,
           fmt("%zu logged runs, %zu early exits, %zu budget closes, %zu violations", logs.size(), exits, budget, bad));
}

}  // namespace

int main() {
    struct Entry {
        int id;
        const char* name;
        std::function<void()> run;
    };
    const std::vector<Entry> criteria{{1, "losslessness", losslessness},
                                      {2, "gradient check", gradients},
                                      {3, "dynamic weights", weighting},
                                      {4, "smoothing", smoothing},
                                      {5, "minimal prefix search", prefix_search},
                                      {6, "learning", learning},
                                      {7, "end-to-end early exit", end_to_end}};
    for (const Entry& c : criteria) {
        try {
            c.run();
        } catch (const std::exception& e) {
            report(c.id, c.name, false, std::string("threw: ") + e.what());
        }
    }
    std::printf("%s: %d failing\n", failures == 0 ? "ALL PASS" : "FAILURES", failures);
    return failures == 0 ? 0 : 1;
}
