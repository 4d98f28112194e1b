#include "specexit/exit_controller.hpp"

#include <cmath>

namespace specexit {

void SmoothingMethod::validate() const {
    switch (kind) {
        case Kind::ewma:
            if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("ewma alpha must lie in (0, 1]");
            break;
        case Kind::sliding_window:
            if (window < 1) throw ConfigError("sliding window needs N >= 1");
            break;
        case Kind::momentum:
            if (window < 2) throw ConfigError("momentum needs N >= 2");
            break;
        case Kind::none:
        case Kind::paragraph_mean:
            break;
    }
}

std::string SmoothingMethod::label() const {
    switch (kind) {
        case Kind::none: return "none";
        case Kind::ewma: return "ewma(" + std::to_string(alpha).substr(0, 4) + ")";
        case Kind::sliding_window: return "sliding_window(" + std::to_string(window) + ")";
        case Kind::momentum: return "momentum(" + std::to_string(window) + ")";
        case Kind::paragraph_mean: return "paragraph_mean";
    }
    return "none";
}

SmoothingMethod::Kind parse_smoothing_kind(const std::string& text) {
    using K = SmoothingMethod::Kind;
    if (text == "none") return K::none;
    if (text == "ewma") return K::ewma;
    if (text == "sliding_window") return K::sliding_window;
    if (text == "momentum") return K::momentum;
    if (text == "paragraph_mean") return K::paragraph_mean;
    throw ConfigError("unknown smoothing kind '" + text + "'");
}

std::string to_string(SmoothingMethod::Kind kind) {
    using K = SmoothingMethod::Kind;
    switch (kind) {
        case K::none: return "none";
        case K::ewma: return "ewma";
        case K::sliding_window: return "sliding_window";
        case K::momentum: return "momentum";
        case K::paragraph_mean: return "paragraph_mean";
    }
    return "none";
}

Smoother::Smoother(SmoothingMethod method) : method_(method) { method_.validate(); }

SignalTriple Smoother::update(const SignalTriple& raw) {
    using K = SmoothingMethod::Kind;
    const auto s = raw.as_array();
    const auto window = static_cast<std::size_t>(std::max(method_.window, 1));

    history_.push_back(s);
    while (history_.size() > window) history_.pop_front();
    for (int k = 0; k < 3; ++k) paragraph_sum_[k] += s[k];
    ++paragraph_count_;

    std::array<double, 3> x{};
    switch (method_.kind) {
        case K::none:
            x = s;
            break;
        case K::ewma:
            if (!seeded_) {
                x = s;
            } else {
                for (int k = 0; k < 3; ++k) x[k] = method_.alpha * s[k] + (1.0 - method_.alpha) * smoothed_[k];
            }
            break;
        case K::sliding_window:
            for (const auto& v : history_) {
                for (int k = 0; k < 3; ++k) x[k] += v[k];
            }
            for (auto& v : x) v /= static_cast<double>(history_.size());
            break;
        case K::momentum:
            // Latest value plus the mean step over the window: s + (s - s_oldest) / (n - 1).
            if (history_.size() < 2) {
                x = s;
            } else {
                const auto& oldest = history_.front();
                const double steps = static_cast<double>(history_.size() - 1);
                for (int k = 0; k < 3; ++k) x[k] = s[k] + (s[k] - oldest[k]) / steps;
            }
            break;
        case K::paragraph_mean:
            for (int k = 0; k < 3; ++k) x[k] = paragraph_sum_[k] / static_cast<double>(paragraph_count_);
            break;
    }
    smoothed_ = x;
    seeded_ = true;
    return SignalTriple::from_array(x);
}

void Smoother::on_paragraph_boundary() {
    paragraph_sum_ = {};
    paragraph_count_ = 0;
}

SignalKind parse_signal_kind(const std::string& text) {
    if (text == "confidence") return SignalKind::confidence;
    if (text == "progress") return SignalKind::progress;
    if (text == "remaining") return SignalKind::remaining;
    throw ConfigError("unknown signal '" + text + "'");
}

std::string to_string(SignalKind kind) {
    switch (kind) {
        case SignalKind::confidence: return "confidence";
        case SignalKind::progress: return "progress";
        case SignalKind::remaining: return "remaining";
    }
    return "confidence";
}

void StoppingConfig::validate() const {
    if (enabled.empty()) throw ConfigError("at least one stopping signal must be enabled");
    if (!(confidence >= 0.0 && confidence <= 1.0)) throw ConfigError("confidence threshold must lie in [0, 1]");
    if (!(progress >= 0.0 && progress <= 1.0)) throw ConfigError("progress threshold must lie in [0, 1]");
    if (!(remaining >= 0.0)) throw ConfigError("remaining threshold must be >= 0");
    smoothing.validate();
}

StoppingConfig StoppingConfig::combined() { return {}; }

StoppingConfig StoppingConfig::confidence_only(double threshold) {
    StoppingConfig cfg;
    cfg.confidence = threshold;
    cfg.enabled = {SignalKind::confidence};
    return cfg;
}

StoppingConfig StoppingConfig::progress_only(double threshold) {
    StoppingConfig cfg;
    cfg.progress = threshold;
    cfg.enabled = {SignalKind::progress};
    return cfg;
}

StoppingConfig StoppingConfig::remaining_only(double threshold) {
    StoppingConfig cfg;
    cfg.remaining = threshold;
    cfg.enabled = {SignalKind::remaining};
    return cfg;
}

bool should_exit(const SignalTriple& smoothed, const StoppingConfig& config) {
    if (config.enabled.empty()) return false;
    for (SignalKind kind : config.enabled) {
        switch (kind) {
            case SignalKind::confidence:
                if (!(smoothed.confidence > config.confidence)) return false;
                break;
            case SignalKind::progress:
                if (!(smoothed.progress > config.progress)) return false;
                break;
            case SignalKind::remaining:
                if (!(smoothed.remaining < config.remaining)) return false;
                break;
        }
    }
    return true;
}

}  // namespace specexit
