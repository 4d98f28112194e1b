#pragma once

#include <array>
#include <deque>
#include <set>
#include <string>

#include "specexit/model.hpp"
#include "specexit/seq.hpp"

namespace specexit {

struct SmoothingMethod {
    enum class Kind { none, ewma, sliding_window, momentum, paragraph_mean };

    Kind kind = Kind::ewma;
    double alpha = 0.1;  // ewma
    int window = 10;     // sliding_window, momentum

    static SmoothingMethod none() { return {Kind::none, 0.1, 10}; }
    static SmoothingMethod ewma(double alpha) { return {Kind::ewma, alpha, 10}; }
    static SmoothingMethod sliding_window(int n) { return {Kind::sliding_window, 0.1, n}; }
    static SmoothingMethod momentum(int n) { return {Kind::momentum, 0.1, n}; }
    static SmoothingMethod paragraph_mean() { return {Kind::paragraph_mean, 0.1, 10}; }

    void validate() const;
    std::string label() const;
};

SmoothingMethod::Kind parse_smoothing_kind(const std::string& text);
std::string to_string(SmoothingMethod::Kind kind);

/// Streaming smoother applied independently to confidence, progress and remaining.
class Smoother {
public:
    explicit Smoother(SmoothingMethod method = {});

    /// Consumes the raw signal of one decode iteration and returns the smoothed value.
    SignalTriple update(const SignalTriple& raw);
    /// Starts a new paragraph: clears the paragraph-mean accumulator.
    void on_paragraph_boundary();

    const SmoothingMethod& method() const { return method_; }
    std::size_t paragraph_count() const { return paragraph_count_; }
    std::size_t history_size() const { return history_.size(); }

private:
    SmoothingMethod method_;
    std::deque<std::array<double, 3>> history_;  // last `window` raw values
    std::array<double, 3> smoothed_{};
    bool seeded_ = false;
    std::array<double, 3> paragraph_sum_{};
    std::size_t paragraph_count_ = 0;
};

enum class SignalKind { confidence, progress, remaining };

SignalKind parse_signal_kind(const std::string& text);
std::string to_string(SignalKind kind);

struct StoppingConfig {
    double confidence = 0.8;
    double progress = 0.3;
    double remaining = 200.0;
    std::set<SignalKind> enabled{SignalKind::confidence, SignalKind::progress, SignalKind::remaining};
    SmoothingMethod smoothing = SmoothingMethod::ewma(0.1);
    SplitMode marker_mode = SplitMode::paragraph;

    void validate() const;

    /// Combined thresholds with EWMA smoothing (conf > 0.8, prog > 0.3, rem < 200, alpha 0.1).
    static StoppingConfig combined();
    static StoppingConfig confidence_only(double threshold = 0.9);
    static StoppingConfig progress_only(double threshold = 0.8);
    static StoppingConfig remaining_only(double threshold = 100.0);
};

/// True iff every enabled gate holds: confidence > tau_c, progress > tau_p, remaining < tau_r.
bool should_exit(const SignalTriple& smoothed, const StoppingConfig& config);

}  // namespace specexit
