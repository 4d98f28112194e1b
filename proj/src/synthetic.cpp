#include "specexit/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

namespace specexit {

namespace {

const std::vector<std::string>& suite_words() {
    static const std::vector<std::string> words = {
        "<think>", "</think>", "\\n\\n", "<eos>", "0",     "1",      "2",     "3",     "4",      "5",
        "6",       "7",        "8",      "9",     "+",     "=",      ".",     "Wait",  "But",    "Alternatively",
        "Therefore", "So",     "Hmm",    "we",    "need",  "to",     "add",   "and",   "ones",   "tens",
        "hundreds", "carry",   "the",    "sum",   "is",    "answer", "let",   "me",    "check",  "again",
        "digit",   "write",    "it",     "as",    "total", "verify", "yes",   "done"};
    return words;
}

double logit_clamped(double p) {
    const double q = std::clamp(p, 1e-3, 1.0 - 1e-3);
    return std::log(q / (1.0 - q));
}

struct SignalPoint {
    double conf = 1.0;
    double prog = 0.0;
    double rem = 0.0;
};

class SuiteBuilder {
public:
    SuiteBuilder(const VerboseSuite& suite, std::mt19937_64& rng) : suite_(suite), vocab_(suite.vocab) {
        const int d = suite.options.hidden_dim;
        std::normal_distribution<double> normal(0.0, 1.0);
        token_part_.resize(d - 4, static_cast<Eigen::Index>(vocab_.size()));
        for (Eigen::Index c = 0; c < token_part_.cols(); ++c) {
            for (Eigen::Index r = 0; r < token_part_.rows(); ++r) token_part_(r, c) = 0.5 * normal(rng);
        }
    }

    TokenId tok(const std::string& word) const { return vocab_.id_of(word); }

    std::vector<TokenId> digits(int value) const {
        std::vector<TokenId> out;
        for (char ch : std::to_string(value)) out.push_back(static_cast<TokenId>(4 + (ch - '0')));
        return out;
    }

    Eigen::VectorXd encode(const SignalPoint& s, TokenId token) const {
        Eigen::VectorXd phi(suite_.options.hidden_dim);
        phi << 1.0, logit_clamped(s.conf), logit_clamped(s.prog), std::log1p(s.rem), token_part_.col(token);
        return suite_.basis * phi;
    }

private:
    const VerboseSuite& suite_;
    const Vocabulary& vocab_;
    Eigen::MatrixXd token_part_;
};

}  // namespace

Vocabulary suite_vocabulary() { return Vocabulary(suite_words()); }

MarkerSet suite_markers(const Vocabulary& vocab) {
    MarkerSet m;
    m.think_open = vocab.id_of("<think>");
    m.think_close = vocab.id_of("</think>");
    m.paragraph = {vocab.id_of("\\n\\n")};
    for (const char* w : {"Wait", "But", "Alternatively", "Therefore", "So", "Hmm"}) m.discourse.insert(vocab.id_of(w));
    for (const char* w : {"Wait", "But", "Alternatively"}) m.contrastive.insert(vocab.id_of(w));
    m.validate();
    return m;
}

DraftHeadd VerboseSuite::oracle_head() const {
    DraftHeadd head(static_cast<Eigen::Index>(vocab.size()), basis.rows());
    // Orthonormal basis: column k of B reads coordinate k of B^T h.
    head.signal.row(kConfidence) = basis.col(1).transpose();
    head.signal.row(kProgress) = basis.col(2).transpose();
    head.signal.row(kRemaining) = basis.col(3).transpose();
    return head;
}

ReasoningTrace VerboseSuite::trace(std::size_t index) const {
    const auto& t = tasks.at(index);
    return {t.id, t.prompt, t.reasoning, t.answer, t.paragraph_ends};
}

std::vector<TokenId> VerboseSuite::generation_prompt(std::size_t index) const {
    std::vector<TokenId> p = tasks.at(index).prompt;
    p.push_back(markers.think_open);
    return p;
}

VerboseSuite make_verbose_suite(const SuiteOptions& options) {
    if (options.hidden_dim < 5) throw ConfigError("suite hidden_dim must be >= 5");
    if (options.tasks < 1) throw ConfigError("suite needs at least one task");

    VerboseSuite suite;
    suite.options = options;
    std::mt19937_64 rng(options.seed);

    {
        std::normal_distribution<double> normal(0.0, 1.0);
        Eigen::MatrixXd raw(options.hidden_dim, options.hidden_dim);
        for (Eigen::Index c = 0; c < raw.cols(); ++c) {
            for (Eigen::Index r = 0; r < raw.rows(); ++r) raw(r, c) = normal(rng);
        }
        Eigen::HouseholderQR<Eigen::MatrixXd> qr(raw);
        suite.basis = qr.householderQ() * Eigen::MatrixXd::Identity(options.hidden_dim, options.hidden_dim);
    }
    SuiteBuilder b(suite, rng);

    TableModel::Options topt;
    topt.vocab_size = static_cast<int>(suite.vocab.size());
    topt.hidden_dim = options.hidden_dim;
    topt.fallback = suite.eos;
    topt.default_prob = 0.95;
    topt.seed = options.seed + 1;
    suite.target = std::make_shared<TableModel>(topt);

    const TokenId nl = b.tok("\\n\\n");
    const TokenId dot = b.tok(".");
    const TokenId plus = b.tok("+");
    const TokenId eq = b.tok("=");
    const std::vector<std::string> places = {"ones", "tens", "hundreds"};

    std::uniform_int_distribution<int> operand(100, 899);
    std::uniform_real_distribution<double> prob(options.min_token_prob, options.max_token_prob);
    std::set<std::pair<int, int>> used;

    for (std::size_t task_index = 0; task_index < options.tasks; ++task_index) {
        int a = 0, c = 0;
        do {
            a = operand(rng);
            c = operand(rng);
        } while (!used.insert({a, c}).second);
        const int result = a + c;
        const auto da = b.digits(a), dc = b.digits(c), dr = b.digits(result);

        SyntheticTask task;
        task.id = "add-" + std::to_string(task_index);
        task.prompt = da;
        task.prompt.push_back(plus);
        task.prompt.insert(task.prompt.end(), dc.begin(), dc.end());
        task.prompt.push_back(eq);
        task.answer = dr;

        std::vector<TokenId> p1 = {b.tok("we"), b.tok("need"), b.tok("to"), b.tok("add")};
        p1.insert(p1.end(), da.begin(), da.end());
        p1.push_back(b.tok("and"));
        p1.insert(p1.end(), dc.begin(), dc.end());
        p1.insert(p1.end(), {dot, nl});

        std::vector<TokenId> p2, p3 = {b.tok("Wait"), b.tok("let"), b.tok("me"), b.tok("check"), b.tok("again"), dot};
        int carry = 0;
        for (std::size_t k = 0; k < places.size(); ++k) {
            const TokenId x = da[2 - k], y = dc[2 - k];
            const int sum = (x - 4) + (y - 4) + carry;
            const TokenId cin = static_cast<TokenId>(4 + carry);
            carry = sum / 10;
            const TokenId digit = static_cast<TokenId>(4 + sum % 10);
            p2.insert(p2.end(), {b.tok(places[k]), x, plus, y, plus, cin, eq, digit, b.tok("carry"),
                                 static_cast<TokenId>(4 + carry), dot});
            p3.insert(p3.end(), {b.tok(places[k]), x, plus, y, plus, cin, eq, digit, dot});
        }
        p2.insert(p2.end(), {b.tok("So"), b.tok("the"), b.tok("sum"), b.tok("is")});
        p2.insert(p2.end(), dr.begin(), dr.end());
        p2.insert(p2.end(), {dot, nl});
        p3.insert(p3.end(), {b.tok("Therefore"), b.tok("the"), b.tok("answer"), b.tok("is")});
        p3.insert(p3.end(), dr.begin(), dr.end());
        p3.insert(p3.end(), {dot, nl});

        // Wrap-up paragraph sized so the two redundant paragraphs match the first two.
        const std::size_t needed = p1.size() + p2.size() - p3.size();
        std::vector<TokenId> p4 = {b.tok("Hmm"), b.tok("yes"), b.tok("the"), b.tok("total"), b.tok("is")};
        p4.insert(p4.end(), dr.begin(), dr.end());
        p4.push_back(dot);
        for (std::size_t i = 0; p4.size() + 1 < needed; ++i) p4.push_back(i % 2 == 0 ? b.tok("done") : dot);
        p4.resize(std::max<std::size_t>(needed, 2) - 1);
        p4.push_back(nl);

        for (const auto* para : {&p1, &p2, &p3, &p4}) {
            task.reasoning.insert(task.reasoning.end(), para->begin(), para->end());
            task.paragraph_ends.push_back(task.reasoning.size() - 1);
        }
        task.minimal_paragraph = 1;
        for (std::size_t i = 0; i < task.reasoning.size(); ++i) task.token_probs.push_back(prob(rng));

        // Per-position oracle signals along the reasoning.
        const std::size_t exit_pos = task.paragraph_ends[task.minimal_paragraph];
        std::vector<SignalPoint> points(task.reasoning.size());
        double log_sum = 0.0;
        for (std::size_t i = 0; i < task.reasoning.size(); ++i) {
            log_sum += std::log(task.token_probs[i]);
            points[i].conf = std::exp(log_sum / static_cast<double>(i + 1));
            points[i].prog = std::min(1.0, static_cast<double>(i) / static_cast<double>(exit_pos));
            points[i].rem = i < exit_pos ? static_cast<double>(exit_pos - i) : 0.0;
        }

        std::vector<TokenId> head_ctx = task.prompt;
        head_ctx.push_back(suite.markers.think_open);

        // Script: prompt + <think> + reasoning[0..cut] + </think> + answer + <eos>.
        auto add_branch = [&](std::size_t cut, const std::vector<TokenId>& answer) {
            std::vector<TokenId> seq = head_ctx;
            std::vector<double> probs;
            std::vector<Eigen::VectorXd> hidden;
            const SignalPoint prompt_point{1.0, 0.0, 0.0};
            for (TokenId t : head_ctx) hidden.push_back(b.encode(prompt_point, t));
            for (std::size_t i = 0; i + 1 < head_ctx.size(); ++i) probs.push_back(topt.default_prob);
            for (std::size_t i = 0; i <= cut; ++i) {
                probs.push_back(task.token_probs[i]);
                seq.push_back(task.reasoning[i]);
                hidden.push_back(b.encode(points[i], task.reasoning[i]));
            }
            const SignalPoint done{points[cut].conf, 1.0, 0.0};
            std::vector<TokenId> tail = {suite.markers.think_close};
            tail.insert(tail.end(), answer.begin(), answer.end());
            tail.push_back(suite.eos);
            for (TokenId t : tail) {
                probs.push_back(topt.default_prob);
                seq.push_back(t);
                hidden.push_back(b.encode(done, t));
            }
            Eigen::MatrixXd h(options.hidden_dim, static_cast<Eigen::Index>(hidden.size()));
            for (std::size_t j = 0; j < hidden.size(); ++j) h.col(static_cast<Eigen::Index>(j)) = hidden[j];
            // Prompts of different tasks share digit prefixes, so the prompt is always given.
            const bool forced = cut + 1 < task.reasoning.size();
            suite.target->add_branch(seq, head_ctx.size() + (forced ? cut + 2 : 0), probs, &h);
        };

        add_branch(task.reasoning.size() - 1, task.answer);
        for (std::size_t i = 0; i + 1 < task.reasoning.size(); ++i) {
            const TokenId t = task.reasoning[i];
            if (suite.markers.paragraph.count(t) || suite.markers.discourse.count(t)) {
                add_branch(i, i >= exit_pos ? task.answer : da);
            }
        }
        suite.tasks.push_back(std::move(task));
    }

    suite.draft_script = std::make_shared<TableModel>(*suite.target);
    suite.draft_script->perturb(options.draft_error, options.seed + 2);
    return suite;
}

ScriptPair random_script_pair(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> vocab_dist(8, 40);
    std::uniform_int_distribution<int> dim_dist(2, 12);
    const int v = vocab_dist(rng);
    std::uniform_int_distribution<TokenId> token(0, v - 1);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    TableModel::Options opt;
    opt.vocab_size = v;
    opt.hidden_dim = dim_dist(rng);
    opt.fallback = token(rng);
    opt.default_prob = 0.5 + 0.49 * unit(rng);
    opt.seed = seed ^ 0x9e3779b97f4a7c15ULL;

    ScriptPair pair;
    pair.target = std::make_shared<TableModel>(opt);
    for (TokenId t = 0; t < v; ++t) {
        if (unit(rng) < 0.9) pair.target->set_transition(t, token(rng), 0.3 + 0.69 * unit(rng));
    }
    std::uniform_int_distribution<int> prompt_len(1, 6), script_len(0, 40);
    for (int i = prompt_len(rng); i > 0; --i) pair.prompt.push_back(token(rng));
    std::vector<TokenId> script = pair.prompt;
    for (int i = script_len(rng); i > 0; --i) script.push_back(token(rng));
    pair.target->add_script(script);

    pair.draft = std::make_shared<TableModel>(*pair.target);
    pair.draft->perturb(0.7 * unit(rng), seed + 17);
    return pair;
}

}  // namespace specexit
