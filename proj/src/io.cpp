#include "specexit/io.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

namespace specexit {

namespace {

using nlohmann::json;

json parse_object(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw FormatError(std::string("invalid JSON: ") + e.what());
    }
    if (!j.is_object()) throw FormatError("expected a JSON object");
    return j;
}

const json& field(const json& j, const char* key) {
    auto it = j.find(key);
    if (it == j.end()) throw FormatError(std::string("missing field \"") + key + "\"");
    return *it;
}

std::vector<TokenId> token_list(const json& j, const char* key, std::size_t vocab_size) {
    const json& arr = field(j, key);
    if (!arr.is_array()) throw FormatError(std::string("\"") + key + "\" must be an array");
    std::vector<TokenId> out;
    for (const json& v : arr) {
        if (!v.is_number_integer()) throw FormatError(std::string("\"") + key + "\" must hold integers");
        const auto id = v.get<std::int64_t>();
        if (id < 0 || static_cast<std::size_t>(id) >= vocab_size) {
            throw FormatError(std::string("token ") + std::to_string(id) + " in \"" + key + "\" outside vocabulary");
        }
        out.push_back(static_cast<TokenId>(id));
    }
    return out;
}

std::vector<std::size_t> index_list(const json& arr, const char* key) {
    if (!arr.is_array()) throw FormatError(std::string("\"") + key + "\" must be an array");
    std::vector<std::size_t> out;
    for (const json& v : arr) {
        if (!v.is_number_integer() || v.get<std::int64_t>() < 0) {
            throw FormatError(std::string("\"") + key + "\" must hold non-negative integers");
        }
        out.push_back(v.get<std::size_t>());
    }
    return out;
}

std::vector<double> real_list(const json& arr, const char* key) {
    if (!arr.is_array()) throw FormatError(std::string("\"") + key + "\" must be an array");
    std::vector<double> out;
    for (const json& v : arr) {
        if (!v.is_number()) throw FormatError(std::string("\"") + key + "\" must hold numbers");
        out.push_back(v.get<double>());
    }
    return out;
}

json trace_fields(const ReasoningTrace& t) {
    return json{{"id", t.id},
                {"prompt", t.prompt},
                {"reasoning", t.reasoning},
                {"answer", t.answer},
                {"paragraph_ends", t.paragraph_ends}};
}

ReasoningTrace trace_from(const json& j, const MarkerSet& markers, std::size_t vocab_size) {
    ReasoningTrace t;
    const json& id = field(j, "id");
    if (!id.is_string()) throw FormatError("\"id\" must be a string");
    t.id = id.get<std::string>();
    t.prompt = token_list(j, "prompt", vocab_size);
    t.reasoning = token_list(j, "reasoning", vocab_size);
    t.answer = token_list(j, "answer", vocab_size);
    if (t.reasoning.empty()) throw FormatError(t.id + ": empty reasoning");
    if (auto it = j.find("paragraph_ends"); it != j.end()) {
        t.paragraph_ends = index_list(*it, "paragraph_ends");
    } else {
        t.paragraph_ends = segment_paragraphs(t.reasoning, markers);
    }
    try {
        validate_trace(t, markers);
    } catch (const MalformedTraceError& e) {
        throw FormatError(e.what());
    }
    return t;
}

template <typename T>
T number(const json& j, const char* key) {
    const json& v = field(j, key);
    if (!v.is_number()) throw FormatError(std::string("\"") + key + "\" must be a number");
    return v.get<T>();
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

}  // namespace

ReasoningTrace parse_raw_trace(const std::string& line, const MarkerSet& markers, std::size_t vocab_size) {
    return trace_from(parse_object(line), markers, vocab_size);
}

std::optional<std::string> peek_trace_id(const std::string& line) {
    const json j = json::parse(line, nullptr, false);
    if (j.is_object()) {
        if (auto it = j.find("id"); it != j.end() && it->is_string()) return it->get<std::string>();
    }
    return std::nullopt;
}

std::string raw_trace_to_json(const ReasoningTrace& trace) { return trace_fields(trace).dump(); }

std::string annotated_trace_to_json(const AnnotatedTrace& a) {
    json j = trace_fields(a.trace);
    std::vector<long long> remaining;
    for (double r : a.labels.remaining) remaining.push_back(std::llround(r));
    j["exit_paragraph"] = a.exit_paragraph;
    j["labels"] = json{{"conf", a.labels.conf}, {"prog", a.labels.prog}, {"remaining", remaining}};
    j["original_paragraphs"] = a.original_paragraphs;
    j["original_reasoning_tokens"] = a.original_reasoning_tokens;
    return j.dump();
}

AnnotatedTrace parse_annotated_trace(const std::string& line, const MarkerSet& markers, std::size_t vocab_size) {
    const json j = parse_object(line);
    AnnotatedTrace a;
    a.trace = trace_from(j, markers, vocab_size);
    a.reference_answer = a.trace.answer;
    a.exit_paragraph = number<std::size_t>(j, "exit_paragraph");
    if (a.exit_paragraph >= a.trace.paragraph_ends.size()) throw FormatError(a.trace.id + ": exit_paragraph out of range");
    const json& labels = field(j, "labels");
    if (!labels.is_object()) throw FormatError("\"labels\" must be an object");
    a.labels.conf = real_list(field(labels, "conf"), "conf");
    a.labels.prog = real_list(field(labels, "prog"), "prog");
    a.labels.remaining = real_list(field(labels, "remaining"), "remaining");
    const std::size_t n = a.trace.paragraph_ends[a.exit_paragraph] + 1;
    if (a.labels.conf.size() != n || a.labels.prog.size() != n || a.labels.remaining.size() != n) {
        throw FormatError(a.trace.id + ": label lengths must cover the reasoning up to the exit");
    }
    a.original_paragraphs = j.value("original_paragraphs", a.trace.paragraph_ends.size());
    a.original_reasoning_tokens = j.value("original_reasoning_tokens", a.trace.reasoning.size());
    return a;
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open " + path.string());
    std::vector<std::string> lines;
    for (std::string line; std::getline(in, line);) lines.push_back(line);
    return lines;
}

std::string step_record_to_json(const StepLogRecord& r) {
    return json{{"step", r.step},
                {"l_acpt", r.l_acpt},
                {"t_rec", r.t_rec},
                {"conf_raw", r.raw.conf_raw},
                {"prog_raw", r.raw.prog_raw},
                {"rem_raw", r.raw.rem_raw},
                {"conf_s", r.smoothed.confidence},
                {"prog_s", r.smoothed.progress},
                {"rem_s", r.smoothed.remaining},
                {"exited", r.exited}}
        .dump();
}

StepLogRecord parse_step_record(const std::string& line) {
    const json j = parse_object(line);
    StepLogRecord r;
    r.step = number<std::size_t>(j, "step");
    r.l_acpt = number<std::size_t>(j, "l_acpt");
    r.t_rec = number<TokenId>(j, "t_rec");
    r.raw.conf_raw = number<double>(j, "conf_raw");
    r.raw.prog_raw = number<double>(j, "prog_raw");
    r.raw.rem_raw = number<double>(j, "rem_raw");
    r.smoothed.confidence = number<double>(j, "conf_s");
    r.smoothed.progress = number<double>(j, "prog_s");
    r.smoothed.remaining = number<double>(j, "rem_s");
    const json& exited = field(j, "exited");
    if (!exited.is_boolean()) throw FormatError("\"exited\" must be a boolean");
    r.exited = exited.get<bool>();
    return r;
}

namespace {
constexpr const char* kTrainHeader = "step,loss_cls,loss_conf,loss_prog,loss_rem,lambda_c,lambda_p,lambda_r,total";
}

void write_train_csv(std::ostream& os, const std::vector<TrainLogRow>& rows) {
    os << kTrainHeader << '\n' << std::setprecision(17);
    for (const TrainLogRow& r : rows) {
        os << r.step << ',' << r.loss.cls << ',' << r.loss.conf << ',' << r.loss.prog << ',' << r.loss.rem << ','
           << r.weights.lambda[0] << ',' << r.weights.lambda[1] << ',' << r.weights.lambda[2] << ',' << r.loss.total
           << '\n';
    }
}

std::vector<TrainLogRow> read_train_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line) || trim(line) != kTrainHeader) throw FormatError("training CSV header mismatch");
    std::vector<TrainLogRow> rows;
    while (std::getline(is, line)) {
        if (trim(line).empty()) continue;
        std::stringstream ss(line);
        std::vector<std::string> cells;
        for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
        if (cells.size() != 9) throw FormatError("training CSV row needs 9 columns: " + line);
        TrainLogRow r;
        try {
            r.step = std::stoull(cells[0]);
            r.loss.cls = std::stod(cells[1]);
            r.loss.conf = std::stod(cells[2]);
            r.loss.prog = std::stod(cells[3]);
            r.loss.rem = std::stod(cells[4]);
            for (int k = 0; k < 3; ++k) r.weights.lambda[static_cast<std::size_t>(k)] = std::stod(cells[5 + k]);
            r.loss.total = std::stod(cells[8]);
        } catch (const std::logic_error&) {
            throw FormatError("training CSV row has a non-numeric cell: " + line);
        }
        rows.push_back(r);
    }
    return rows;
}

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedArray>& arrays) {
    json list = json::array();
    for (const NamedArray& a : arrays) {
        std::vector<double> data;
        data.reserve(static_cast<std::size_t>(a.value.size()));
        for (Eigen::Index r = 0; r < a.value.rows(); ++r) {
            for (Eigen::Index c = 0; c < a.value.cols(); ++c) data.push_back(a.value(r, c));
        }
        list.push_back(json{{"name", a.name}, {"shape", {a.value.rows(), a.value.cols()}}, {"data", data}});
    }
    std::ofstream out(path);
    if (!out) throw FormatError("cannot write " + path.string());
    out << json{{"format", "specexit-checkpoint"}, {"version", 1}, {"arrays", list}}.dump() << '\n';
}

std::vector<NamedArray> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open checkpoint " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    const json j = parse_object(buf.str());
    if (j.value("format", "") != "specexit-checkpoint" || j.value("version", 0) != 1) {
        throw FormatError(path.string() + " is not a version 1 specexit checkpoint");
    }
    std::vector<NamedArray> arrays;
    for (const json& a : field(j, "arrays")) {
        NamedArray na;
        na.name = field(a, "name").get<std::string>();
        const auto shape = index_list(field(a, "shape"), "shape");
        const auto data = real_list(field(a, "data"), "data");
        if (shape.size() != 2 || shape[0] * shape[1] != data.size()) {
            throw FormatError("array " + na.name + ": shape does not match data length");
        }
        na.value.resize(static_cast<Eigen::Index>(shape[0]), static_cast<Eigen::Index>(shape[1]));
        std::size_t k = 0;
        for (Eigen::Index r = 0; r < na.value.rows(); ++r) {
            for (Eigen::Index c = 0; c < na.value.cols(); ++c) na.value(r, c) = data[k++];
        }
        arrays.push_back(std::move(na));
    }
    return arrays;
}

namespace {
const Eigen::MatrixXd& find_array(const std::vector<NamedArray>& arrays, const std::string& name) {
    for (const NamedArray& a : arrays) {
        if (a.name == name) return a.value;
    }
    throw FormatError("checkpoint has no array \"" + name + "\"");
}
}  // namespace

std::vector<NamedArray> head_arrays(const DraftHeadd& head) {
    return {{"head.token", head.token}, {"head.signal", head.signal}};
}

DraftHeadd head_from_arrays(const std::vector<NamedArray>& arrays) {
    const Eigen::MatrixXd& token = find_array(arrays, "head.token");
    const Eigen::MatrixXd& signal = find_array(arrays, "head.signal");
    if (signal.rows() != 3 || signal.cols() != token.cols()) throw FormatError("head.signal must be 3 x D");
    DraftHeadd head(token.rows(), token.cols());
    head.token = token;
    head.signal = signal;
    return head;
}

std::vector<NamedArray> transformer_arrays(const TinyTransformer& model) {
    const TransformerConfig& c = model.config();
    Eigen::MatrixXd cfg(1, 6);
    cfg << c.vocab_size, c.dim, c.layers, c.heads, c.context, c.mlp_mult;
    std::vector<NamedArray> out{{"lm.config", cfg}};
    model.params().for_each([&](const std::string& n, const Eigen::MatrixXd& m) { out.push_back({"lm." + n, m}); },
                            [&](const std::string& n, const Eigen::VectorXd& v) { out.push_back({"lm." + n, v}); });
    return out;
}

TinyTransformer transformer_from_arrays(const std::vector<NamedArray>& arrays) {
    const Eigen::MatrixXd& cfg = find_array(arrays, "lm.config");
    if (cfg.size() != 6) throw FormatError("lm.config must hold 6 integers");
    TransformerConfig c;
    c.vocab_size = static_cast<int>(cfg(0));
    c.dim = static_cast<int>(cfg(1));
    c.layers = static_cast<int>(cfg(2));
    c.heads = static_cast<int>(cfg(3));
    c.context = static_cast<int>(cfg(4));
    c.mlp_mult = static_cast<int>(cfg(5));
    c.validate();
    TransformerParams p = TransformerParams::zeros_like(c);
    auto fill = [&](const std::string& n, auto& dst) {
        const Eigen::MatrixXd& src = find_array(arrays, "lm." + n);
        if (src.size() != dst.size() || (dst.cols() > 1 && (src.rows() != dst.rows() || src.cols() != dst.cols()))) {
            throw FormatError("array lm." + n + " has the wrong shape");
        }
        dst = Eigen::Map<const Eigen::MatrixXd>(src.data(), dst.rows(), dst.cols());
    };
    p.for_each([&](const std::string& n, Eigen::MatrixXd& m) { fill(n, m); },
               [&](const std::string& n, Eigen::VectorXd& v) { fill(n, v); });
    return TinyTransformer(c, std::move(p));
}

void RunConfig::validate() const {
    stopping.validate();
    if (gamma < 1) throw ConfigError("gamma must be >= 1");
    if (max_tokens < 1) throw ConfigError("max_tokens must be >= 1");
    if (suite.tasks < 1) throw ConfigError("suite.tasks must be >= 1");
    if (suite.hidden_dim < 5) throw ConfigError("suite.hidden_dim must be >= 5");
    if (!(suite.draft_error >= 0.0 && suite.draft_error <= 1.0)) throw ConfigError("suite.draft_error must lie in [0, 1]");
}

GenerateOptions RunConfig::generate_options(TokenId eos) const {
    GenerateOptions o;
    o.gamma = gamma;
    o.max_tokens = max_tokens;
    o.answer_budget = answer_budget;
    o.eos = eos;
    return o;
}

namespace {

void reject_unknown(const json& j, std::initializer_list<const char*> known, const std::string& where) {
    for (const auto& [key, value] : j.items()) {
        if (std::find_if(known.begin(), known.end(), [&](const char* k) { return key == k; }) == known.end()) {
            throw ConfigError("unknown config key " + where + key);
        }
    }
}

const json* section(const json& j, const char* key) {
    auto it = j.find(key);
    if (it == j.end()) return nullptr;
    if (!it->is_object()) throw ConfigError(std::string("config section \"") + key + "\" must be an object");
    return &*it;
}

template <typename T>
void maybe(const json& j, const char* key, T& dst) {
    auto it = j.find(key);
    if (it == j.end()) return;
    try {
        dst = it->get<T>();
    } catch (const json::exception&) {
        throw ConfigError(std::string("config key \"") + key + "\" has the wrong type");
    }
}

}  // namespace

RunConfig parse_run_config(const std::string& text) {
    json j;
    try {
        j = parse_object(text);
    } catch (const FormatError& e) {
        throw ConfigError(e.what());
    }
    reject_unknown(j, {"smoothing", "thresholds", "signals", "markers", "generation", "suite", "seed", "checkpoint", "out"},
                   "");
    RunConfig c;
    if (const json* s = section(j, "smoothing")) {
        reject_unknown(*s, {"kind", "alpha", "window"}, "smoothing.");
        std::string kind = to_string(c.stopping.smoothing.kind);
        maybe(*s, "kind", kind);
        c.stopping.smoothing.kind = parse_smoothing_kind(kind);
        maybe(*s, "alpha", c.stopping.smoothing.alpha);
        maybe(*s, "window", c.stopping.smoothing.window);
    }
    if (const json* s = section(j, "thresholds")) {
        reject_unknown(*s, {"confidence", "progress", "remaining"}, "thresholds.");
        maybe(*s, "confidence", c.stopping.confidence);
        maybe(*s, "progress", c.stopping.progress);
        maybe(*s, "remaining", c.stopping.remaining);
    }
    if (const json* s = section(j, "signals")) {
        reject_unknown(*s, {"enabled"}, "signals.");
        std::vector<std::string> names;
        if (s->contains("enabled")) {
            maybe(*s, "enabled", names);
            c.stopping.enabled.clear();
            for (const std::string& n : names) c.stopping.enabled.insert(parse_signal_kind(n));
        }
    }
    if (const json* s = section(j, "markers")) {
        reject_unknown(*s, {"mode"}, "markers.");
        std::string mode = to_string(c.stopping.marker_mode);
        maybe(*s, "mode", mode);
        c.stopping.marker_mode = parse_split_mode(mode);
    }
    if (const json* s = section(j, "generation")) {
        reject_unknown(*s, {"gamma", "max_tokens", "answer_budget"}, "generation.");
        maybe(*s, "gamma", c.gamma);
        maybe(*s, "max_tokens", c.max_tokens);
        maybe(*s, "answer_budget", c.answer_budget);
    }
    if (const json* s = section(j, "suite")) {
        reject_unknown(*s, {"tasks", "hidden_dim", "draft_error"}, "suite.");
        maybe(*s, "tasks", c.suite.tasks);
        maybe(*s, "hidden_dim", c.suite.hidden_dim);
        maybe(*s, "draft_error", c.suite.draft_error);
    }
    maybe(j, "seed", c.suite.seed);
    if (auto it = j.find("checkpoint"); it != j.end() && !it->is_null()) {
        std::string p;
        maybe(j, "checkpoint", p);
        c.checkpoint = p;
    }
    if (j.contains("out")) {
        std::string p;
        maybe(j, "out", p);
        c.out = p;
    }
    c.validate();
    return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_run_config(buf.str());
}

std::string run_config_to_json(const RunConfig& c) {
    std::vector<std::string> enabled;
    for (SignalKind k : c.stopping.enabled) enabled.push_back(to_string(k));
    json j{{"smoothing",
            {{"kind", to_string(c.stopping.smoothing.kind)},
             {"alpha", c.stopping.smoothing.alpha},
             {"window", c.stopping.smoothing.window}}},
           {"thresholds",
            {{"confidence", c.stopping.confidence},
             {"progress", c.stopping.progress},
             {"remaining", c.stopping.remaining}}},
           {"signals", {{"enabled", enabled}}},
           {"markers", {{"mode", to_string(c.stopping.marker_mode)}}},
           {"generation", {{"gamma", c.gamma}, {"max_tokens", c.max_tokens}, {"answer_budget", c.answer_budget}}},
           {"suite",
            {{"tasks", c.suite.tasks}, {"hidden_dim", c.suite.hidden_dim}, {"draft_error", c.suite.draft_error}}},
           {"seed", c.suite.seed},
           {"out", c.out.string()}};
    j["checkpoint"] = c.checkpoint ? json(c.checkpoint->string()) : json(nullptr);
    return j.dump(2);
}

}  // namespace specexit
