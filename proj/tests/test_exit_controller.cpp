#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "specexit/exit_controller.hpp"

using namespace specexit;

namespace {

SignalTriple flat(double v) { return {v, v, v}; }

// Runs a smoother over a stream, resetting the paragraph accumulator before the
// observations listed in `boundaries`.
std::vector<double> smooth_stream(const SmoothingMethod& m, const std::vector<double>& s,
                                  const std::vector<bool>& boundary_before) {
    Smoother sm(m);
    std::vector<double> out;
    for (std::size_t t = 0; t < s.size(); ++t) {
        if (boundary_before[t]) sm.on_paragraph_boundary();
        out.push_back(sm.update(flat(s[t])).progress);
    }
    return out;
}

}  // namespace

TEST(Smoother, EwmaExample) {
    Smoother sm(SmoothingMethod::ewma(0.1));
    EXPECT_DOUBLE_EQ(sm.update(flat(0.5)).confidence, 0.5);
    EXPECT_NEAR(sm.update(flat(1.0)).confidence, 0.55, 1e-12);
}

TEST(Smoother, MomentumExample) {
    Smoother sm(SmoothingMethod::momentum(3));
    sm.update(flat(0.1));
    sm.update(flat(0.2));
    EXPECT_NEAR(sm.update(flat(0.3)).remaining, 0.4, 1e-12);
}

TEST(Smoother, MomentumWithOneObservationReturnsIt) {
    Smoother sm(SmoothingMethod::momentum(10));
    EXPECT_DOUBLE_EQ(sm.update(flat(0.7)).confidence, 0.7);
}

TEST(Smoother, MomentumCanLeaveTheRawRange) {
    Smoother sm(SmoothingMethod::momentum(4));
    double last = 0.0;
    for (double v : {0.0, 0.5, 1.0}) last = sm.update(flat(v)).confidence;
    EXPECT_GT(last, 1.0);
}

TEST(Smoother, SlidingWindowShortHistoryAveragesWhatExists) {
    Smoother sm(SmoothingMethod::sliding_window(10));
    sm.update(flat(1.0));
    EXPECT_DOUBLE_EQ(sm.update(flat(0.0)).confidence, 0.5);
    EXPECT_LE(sm.history_size(), 10u);
}

TEST(Smoother, ParagraphMeanResets) {
    Smoother sm(SmoothingMethod::paragraph_mean());
    sm.update(flat(1.0));
    EXPECT_DOUBLE_EQ(sm.update(flat(0.0)).progress, 0.5);
    sm.on_paragraph_boundary();
    EXPECT_EQ(sm.paragraph_count(), 0u);
    EXPECT_DOUBLE_EQ(sm.update(flat(0.2)).progress, 0.2);
}

TEST(Smoother, NoneIsIdentity) {
    Smoother sm(SmoothingMethod::none());
    EXPECT_DOUBLE_EQ(sm.update({0.1, 0.2, 30.0}).remaining, 30.0);
    EXPECT_DOUBLE_EQ(sm.update({0.9, 0.2, 3.0}).confidence, 0.9);
}

TEST(Smoother, SignalsAreSmoothedIndependently) {
    Smoother sm(SmoothingMethod::ewma(0.5));
    sm.update({0.0, 1.0, 10.0});
    const SignalTriple x = sm.update({1.0, 0.0, 20.0});
    EXPECT_DOUBLE_EQ(x.confidence, 0.5);
    EXPECT_DOUBLE_EQ(x.progress, 0.5);
    EXPECT_DOUBLE_EQ(x.remaining, 15.0);
}

TEST(Smoother, ConstantSignalIsAFixedPoint) {
    for (const SmoothingMethod& m : {SmoothingMethod::none(), SmoothingMethod::ewma(0.3),
                                     SmoothingMethod::sliding_window(4), SmoothingMethod::momentum(5),
                                     SmoothingMethod::paragraph_mean()}) {
        Smoother sm(m);
        for (int t = 0; t < 25; ++t) {
            if (t % 7 == 3) sm.on_paragraph_boundary();
            const SignalTriple x = sm.update({0.42, 0.42, 0.42});
            EXPECT_NEAR(x.confidence, 0.42, 1e-12) << m.label();
        }
    }
}

TEST(Smoother, MatchesBruteForceOnRandomStreams) {
    std::mt19937 rng(17);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t len = 1 + rng() % 60;
        std::vector<double> s(len);
        std::vector<bool> boundary(len, false);
        std::vector<std::size_t> para_start(len, 0);
        for (std::size_t t = 0; t < len; ++t) {
            s[t] = u(rng);
            boundary[t] = t > 0 && u(rng) < 0.15;
            para_start[t] = boundary[t] || t == 0 ? t : para_start[t - 1];
        }
        const double alpha = 0.05 + 0.9 * u(rng);
        const int n = 2 + static_cast<int>(rng() % 12);

        const auto e = smooth_stream(SmoothingMethod::ewma(alpha), s, boundary);
        const auto w = smooth_stream(SmoothingMethod::sliding_window(n), s, boundary);
        const auto m = smooth_stream(SmoothingMethod::momentum(n), s, boundary);
        const auto p = smooth_stream(SmoothingMethod::paragraph_mean(), s, boundary);
        for (std::size_t t = 0; t < len; ++t) {
            EXPECT_NEAR(e[t], oracle::ewma(s, t, alpha), 1e-9);
            EXPECT_NEAR(e[t], oracle::ewma_closed_form(s, t, alpha), 1e-9);
            EXPECT_NEAR(w[t], oracle::sliding_window(s, t, static_cast<std::size_t>(n)), 1e-9);
            EXPECT_NEAR(m[t], oracle::momentum(s, t, static_cast<std::size_t>(n)), 1e-9);
            EXPECT_NEAR(p[t], oracle::paragraph_mean(s, t, para_start), 1e-9);
            for (double v : {e[t], w[t], p[t]}) {
                EXPECT_GE(v, 0.0);
                EXPECT_LE(v, 1.0);
            }
        }
    }
}

TEST(Smoother, InvalidParametersThrow) {
    EXPECT_THROW(Smoother(SmoothingMethod::ewma(0.0)), ConfigError);
    EXPECT_THROW(Smoother(SmoothingMethod::ewma(1.5)), ConfigError);
    EXPECT_NO_THROW(Smoother(SmoothingMethod::ewma(1.0)));
    EXPECT_THROW(Smoother(SmoothingMethod::sliding_window(0)), ConfigError);
    EXPECT_THROW(Smoother(SmoothingMethod::momentum(1)), ConfigError);
    EXPECT_THROW(parse_smoothing_kind("median"), ConfigError);
}

TEST(ShouldExit, CombinedGateExamples) {
    const StoppingConfig cfg = StoppingConfig::combined();
    EXPECT_TRUE(should_exit({0.85, 0.4, 150.0}, cfg));
    EXPECT_FALSE(should_exit({0.85, 0.2, 150.0}, cfg));
    EXPECT_FALSE(should_exit({0.8, 0.4, 150.0}, cfg));
    EXPECT_FALSE(should_exit({0.85, 0.4, 200.0}, cfg));
}

TEST(ShouldExit, SingleSignalPresets) {
    EXPECT_TRUE(should_exit({0.95, 0.0, 1e6}, StoppingConfig::confidence_only()));
    EXPECT_FALSE(should_exit({0.9, 1.0, 0.0}, StoppingConfig::confidence_only()));
    EXPECT_TRUE(should_exit({0.0, 0.81, 1e6}, StoppingConfig::progress_only()));
    EXPECT_TRUE(should_exit({0.0, 0.0, 99.0}, StoppingConfig::remaining_only()));
    EXPECT_FALSE(should_exit({1.0, 1.0, 100.0}, StoppingConfig::remaining_only()));
}

TEST(ShouldExit, MonotoneInEachSignal) {
    std::mt19937 rng(2);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const StoppingConfig cfg = StoppingConfig::combined();
    for (int i = 0; i < 2000; ++i) {
        const SignalTriple x{u(rng), u(rng), 400.0 * u(rng)};
        if (!should_exit(x, cfg)) continue;
        EXPECT_TRUE(should_exit({std::min(1.0, x.confidence + 0.1), x.progress, x.remaining}, cfg));
        EXPECT_TRUE(should_exit({x.confidence, std::min(1.0, x.progress + 0.1), x.remaining}, cfg));
        EXPECT_TRUE(should_exit({x.confidence, x.progress, x.remaining * 0.5}, cfg));
    }
}

TEST(StoppingConfig, Validation) {
    StoppingConfig cfg;
    EXPECT_NO_THROW(cfg.validate());
    cfg.enabled.clear();
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = StoppingConfig::combined();
    cfg.confidence = 1.2;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = StoppingConfig::combined();
    cfg.remaining = -1.0;
    EXPECT_THROW(cfg.validate(), ConfigError);
    EXPECT_THROW(parse_signal_kind("entropy"), ConfigError);
}
