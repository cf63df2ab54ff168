// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "driftlab/detectors/detectors.hpp"
#include "driftlab/error.hpp"
#include "oracles.hpp"

namespace dd = driftlab::detectors;
using driftlab::benchgen::StreamRecord;

namespace {

std::vector<dd::DriftSignal> replay(dd::ScalarDetector& det, const std::vector<double>& trace) {
    std::vector<dd::DriftSignal> out;
    for (double e : trace) out.push_back(det.update(e));
    return out;
}

std::optional<std::size_t> first_drift(const std::vector<dd::DriftSignal>& sig, std::size_t from = 0) {
    for (std::size_t i = from; i < sig.size(); ++i) {
        if (sig[i].drift()) return i;
    }
    return std::nullopt;
}

bool same(const std::vector<dd::DriftSignal>& a, const std::vector<dd::DriftSignal>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].status != b[i].status || a[i].position_hint != b[i].position_hint) return false;
    }
    return true;
}

// Two-dimensional stream whose target function flips at `boundary`.
std::vector<StreamRecord> toy_stream(std::size_t len, std::size_t boundary, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<StreamRecord> out;
    for (std::size_t t = 0; t < len; ++t) {
        StreamRecord r;
        r.t = t;
        r.env_id = t >= boundary ? 1 : 0;
        r.new_env = t == boundary;
        r.x = {u(rng), u(rng)};
        const double shift = t >= boundary ? 3.0 : 0.0;
        r.y = (r.x[0] - shift) * (r.x[0] - shift) + r.x[1] * r.x[1];
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace

TEST(Ddm, ConstantSmallErrorsStayStable) {
    dd::Ddm d(dd::DdmConfig{.threshold = 0.5});
    for (int i = 0; i < 5000; ++i) EXPECT_EQ(d.update(0.01).status, dd::DriftStatus::kStable);
}

TEST(Ddm, RateJumpDetectedWithin60) {
    // Deterministic Bernoulli-like trace: 1 in 20 high, then 3 in 5 high.
    std::vector<double> trace;
    for (int i = 0; i < 200; ++i) trace.push_back(i % 20 == 7 ? 1.0 : 0.0);
    for (int i = 0; i < 200; ++i) trace.push_back(i % 5 < 3 ? 1.0 : 0.0);
    dd::Ddm d(dd::DdmConfig{.threshold = 0.5});
    const auto sig = replay(d, trace);
    EXPECT_FALSE(first_drift(sig).value_or(1000) < 200);
    const auto hit = first_drift(sig, 200);
    ASSERT_TRUE(hit);
    EXPECT_LE(*hit - 200, 60u);
    EXPECT_EQ(*sig[*hit].position_hint, *hit);
}

TEST(Ddm, ResetReplayIsIdentical) {
    std::mt19937_64 rng(4);
    std::vector<double> trace;
    for (int i = 0; i < 600; ++i) trace.push_back(std::bernoulli_distribution(i < 300 ? 0.1 : 0.5)(rng) ? 1.0 : 0.0);
    dd::Ddm d(dd::DdmConfig{.threshold = 0.5});
    const auto a = replay(d, trace);
    d.reset();
    EXPECT_EQ(d.samples_seen(), 0u);
    EXPECT_TRUE(same(a, replay(d, trace)));
}

TEST(Ddm, CalibrationSetsMeanPlusTwoSigma) {
    dd::Ddm d;
    const std::vector<double> e{1.0, 3.0};
    d.calibrate(e);
    EXPECT_DOUBLE_EQ(d.threshold(), 2.0 + 2.0 * 1.0);
}

TEST(HddmA, UniformStreamFalseDriftsBounded) {
    std::size_t total = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        std::mt19937_64 rng(seed);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        dd::HddmA h;
        for (int i = 0; i < 10000; ++i) total += h.update(u(rng)).drift() ? 1 : 0;
    }
    EXPECT_LE(total, 3u);
}

TEST(HddmA, StepChangeDetected) {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(-0.1, 0.1);
    dd::HddmA h;
    std::vector<double> trace;
    for (int i = 0; i < 500; ++i) trace.push_back(0.2 + u(rng));
    for (int i = 0; i < 500; ++i) trace.push_back(0.8 + u(rng));
    const auto sig = replay(h, trace);
    EXPECT_FALSE(first_drift(sig).value_or(1000) < 500);
    const auto hit = first_drift(sig, 500);
    ASSERT_TRUE(hit);
    EXPECT_LT(*hit, 600u);
    // The cut point lands near the step.
    EXPECT_NEAR(static_cast<double>(*sig[*hit].position_hint), 500.0, 20.0);
}

TEST(HddmA, ConstantStreamStable) {
    dd::HddmA h;
    for (int i = 0; i < 3000; ++i) EXPECT_FALSE(h.update(0.4).drift());
}

TEST(HddmA, ScalerClipsAndRejectsRawOutOfRange) {
    dd::HddmA h;
    EXPECT_THROW(h.update_normalized(1.5), std::logic_error);
    const std::vector<double> cal{2.0, 4.0};
    h.calibrate(cal);
    EXPECT_NO_THROW(h.update(100.0));
    dd::MinMaxScaler s;
    s.fit(cal);
    EXPECT_DOUBLE_EQ(s.transform(3.0), 0.5);
    EXPECT_DOUBLE_EQ(s.transform(-7.0), 0.0);
    EXPECT_DOUBLE_EQ(s.transform(9.0), 1.0);
}

TEST(Adwin, ConstantStreamGrowsWithoutCut) {
    dd::Adwin a;
    std::size_t prev = 0;
    for (int i = 0; i < 3000; ++i) {
        EXPECT_FALSE(a.update(0.7).drift());
        EXPECT_GT(a.width(), prev);
        prev = a.width();
    }
    // Exponential histogram keeps O(log n) buckets.
    EXPECT_LE(a.bucket_count(), 6u * 12u);
}

TEST(Adwin, MeanStepCutWithin100) {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n(0.0, 0.1);
    dd::Adwin a;
    std::vector<double> trace;
    for (int i = 0; i < 1000; ++i) trace.push_back((i < 500 ? 1.0 : 3.0) + n(rng));
    const auto sig = replay(a, trace);
    EXPECT_FALSE(first_drift(sig).value_or(1000) < 500);
    const auto hit = first_drift(sig, 500);
    ASSERT_TRUE(hit);
    EXPECT_LT(*hit - 500, 100u);
    EXPECT_LE(*sig[*hit].position_hint, 500u + 100u);
}

TEST(Adwin, StatisticsMatchBruteForce) {
    std::mt19937_64 rng(9);
    std::normal_distribution<double> n(0.0, 1.0);
    dd::Adwin a;
    std::vector<double> seen;
    for (int i = 0; i < 500; ++i) {
        const double v = (i < 250 ? 0.0 : 2.0) + n(rng);
        seen.push_back(v);
        a.update(v);
        const std::size_t w = a.width();
        ASSERT_LE(w, seen.size());
        double s = 0.0;
        for (std::size_t k = seen.size() - w; k < seen.size(); ++k) s += seen[k];
        const double mean = s / static_cast<double>(w);
        double ss = 0.0;
        for (std::size_t k = seen.size() - w; k < seen.size(); ++k) ss += (seen[k] - mean) * (seen[k] - mean);
        EXPECT_NEAR(a.mean(), mean, 1e-9);
        EXPECT_NEAR(a.variance(), ss / static_cast<double>(w), 1e-9);
    }
}

TEST(Kswin, DistanceMatchesCdfOracle) {
    std::mt19937_64 rng(21);
    std::normal_distribution<double> n(0.0, 1.0);
    for (int rep = 0; rep < 20; ++rep) {
        std::vector<double> a(30 + rep), b(45);
        for (auto& v : a) v = std::round(n(rng) * 4.0) / 4.0;  // ties on purpose
        for (auto& v : b) v = std::round((n(rng) + 0.3) * 4.0) / 4.0;
        EXPECT_NEAR(dd::ks_distance(a, b), oracle::ks_distance(a, b), 1e-12);
    }
}

TEST(Kswin, IdenticalSlicesStable) {
    dd::Kswin k;
    for (int i = 0; i < 400; ++i) {
        const auto s = k.update(0.5);
        EXPECT_FALSE(s.drift());
        EXPECT_EQ(s.warm_up, i < 99);
    }
    EXPECT_DOUBLE_EQ(k.last_distance(), 0.0);
    EXPECT_DOUBLE_EQ(k.last_p_value(), 1.0);
}

TEST(Kswin, DisjointSupportsDrift) {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    dd::Kswin k;
    for (int i = 0; i < 100; ++i) ASSERT_FALSE(k.update(u(rng)).drift());
    bool fired = false;
    for (int i = 0; i < 30 && !fired; ++i) {
        const auto s = k.update(2.0 + u(rng));
        if (s.drift()) {
            fired = true;
            EXPECT_GT(k.last_p_value(), 0.0);
        }
    }
    EXPECT_TRUE(fired);
    // Full separation of the 30-sample slices gives distance 1.
    EXPECT_DOUBLE_EQ(dd::ks_distance(std::vector<double>{0.1, 0.2}, std::vector<double>{2.1, 2.5}), 1.0);
}

TEST(Kswin, PValueReferenceValues) {
    // Kolmogorov survival function Q(1.36) ~ 0.0494, Q(0.5) ~ 0.9639.
    const double sq = std::sqrt(15.0);
    const auto d_for = [&](double lambda) { return lambda / (sq + 0.12 + 0.11 / sq); };
    EXPECT_NEAR(dd::ks_p_value(d_for(1.36), 30, 30), 0.0494, 5e-4);
    EXPECT_NEAR(dd::ks_p_value(d_for(0.5), 30, 30), 0.9639, 5e-4);
    // Reference values (scipy.special.kolmogorov) on both sides of the series switch.
    EXPECT_NEAR(dd::ks_p_value(d_for(0.3), 30, 30), 0.9999906941986655, 1e-12);
    EXPECT_NEAR(dd::ks_p_value(d_for(1.1799), 30, 30), 0.12351204971188676, 1e-12);
    EXPECT_NEAR(dd::ks_p_value(d_for(1.1801), 30, 30), 0.12339559161939295, 1e-12);
    EXPECT_NEAR(dd::ks_p_value(d_for(2.0), 30, 30), 0.0006709252557796953, 1e-12);
}

TEST(Kswin, ResetIsExact) {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> trace;
    for (int i = 0; i < 400; ++i) trace.push_back(u(rng) + (i > 200 ? 0.6 : 0.0));
    dd::Kswin k(dd::KswinConfig{.seed = 17});
    const auto a = replay(k, trace);
    k.reset();
    EXPECT_TRUE(same(a, replay(k, trace)));
}

TEST(Detectors, NoDriftToWarningWithinAStep) {
    // A drift step reports drift only; the interface never mixes states.
    std::mt19937_64 rng(8);
    std::normal_distribution<double> n(0.0, 0.1);
    std::vector<std::unique_ptr<dd::ScalarDetector>> dets;
    dets.push_back(std::make_unique<dd::Ddm>(dd::DdmConfig{.threshold = 1.5}));
    dets.push_back(std::make_unique<dd::Adwin>());
    dets.push_back(std::make_unique<dd::Kswin>());
    for (auto& d : dets) {
        for (int i = 0; i < 800; ++i) {
            const auto s = d->update((i < 400 ? 1.0 : 2.0) + n(rng));
            EXPECT_EQ(s.position_hint.has_value(), s.drift()) << d->name();
        }
    }
}

TEST(TraceAdapter, NoTokenBeforeFirstWindow) {
    std::size_t calls = 0;
    dd::TraceDetector det([&](const auto&) { ++calls; return std::size_t{1}; });
    const auto stream = toy_stream(120 + 29, 10000, 1);
    for (const auto& r : stream) EXPECT_FALSE(det.observe(r).drift());
    EXPECT_EQ(calls, 0u);
}

TEST(TraceAdapter, ClassZeroNeverFires) {
    dd::TraceDetector det([](const auto&) { return std::size_t{0}; });
    const auto stream = toy_stream(2000, 800, 2);
    for (const auto& r : stream) EXPECT_FALSE(det.observe(r).drift());
    EXPECT_GT(det.evaluations(), 40u);
}

TEST(TraceAdapter, ForcedLabelMapsToWindowStart) {
    // Surrogate warm-up takes t = 0..119, so window k starts at 120 + 30k.
    // The boundary at 400 lies in window 9 = [390, 420); it completes at t = 419.
    constexpr std::size_t kBoundary = 400;
    std::optional<driftlab::tokenizer::TokenSequence> fired;
    const auto stub = [&](const driftlab::tokenizer::TokenSequence& s) -> std::size_t {
        for (std::size_t j = 0; j < s.window_starts.size(); ++j) {
            if (s.window_starts[j] <= kBoundary && kBoundary < s.window_starts[j] + 30) {
                fired = s;
                return j + 1;
            }
        }
        return 0;
    };
    dd::TraceDetector det(stub);
    const auto stream = toy_stream(700, kBoundary, 3);
    const auto events = dd::run_detector(det, stream);
    ASSERT_EQ(events.size(), 1u);
    EXPECT_EQ(events[0].t, 419u);
    EXPECT_EQ(*events[0].position_hint, 390u);
    ASSERT_TRUE(fired);
    const auto& seq = *fired;
    EXPECT_EQ(seq.window_starts.front(), 150u);  // window 0 is context only
    EXPECT_EQ(seq.tokens.size(), 9u);
}

TEST(StreamDetectors, OracleAndNull) {
    const auto stream = toy_stream(600, 250, 4);
    dd::OracleDetector o;
    const auto ev = dd::run_detector(o, stream);
    ASSERT_EQ(dd::detection_times(ev), std::vector<std::size_t>{250});
    dd::NullDetector z;
    EXPECT_TRUE(dd::run_detector(z, stream).empty());
}

TEST(StreamDetectors, PipelineDetectsFunctionShift) {
    const auto stream = toy_stream(1500, 700, 5);
    for (const char* kind : {"ddm", "hddm_a", "adwin", "kswin"}) {
        dd::DetectorSpec spec;
        spec.kind = kind;
        auto det = dd::make_detector(spec);
        const auto times = dd::detection_times(dd::run_detector(*det, stream));
        ASSERT_FALSE(times.empty()) << kind;
        EXPECT_GE(times.front(), 700u) << kind;
        EXPECT_LE(times.front(), 760u) << kind;
    }
}

TEST(StreamDetectors, DeterministicAndResetExact) {
    const auto stream = toy_stream(1500, 700, 6);
    dd::DetectorSpec spec;
    spec.kind = "kswin";
    spec.seed = 3;
    auto det = dd::make_detector(spec);
    const auto a = dd::run_detector(*det, stream);
    det->reset();
    const auto b = dd::run_detector(*det, stream);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].t, b[i].t);
        EXPECT_EQ(a[i].position_hint, b[i].position_hint);
    }
}

TEST(StreamDetectors, FactoryErrors) {
    dd::DetectorSpec spec;
    spec.kind = "trace";
    EXPECT_THROW(dd::make_detector(spec), driftlab::ConfigError);
    spec.kind = "bogus";
    EXPECT_THROW(dd::make_detector(spec), driftlab::ConfigError);
}

TEST(DetectionLog, RoundTrip) {
    const std::vector<dd::DetectionEvent> ev{{12, "ddm", dd::DriftStatus::kWarning, std::nullopt},
                                             {40, "ddm", dd::DriftStatus::kDrift, 33}};
    const auto path = std::filesystem::temp_directory_path() / "driftlab_detlog_test.jsonl";
    dd::save_detection_log(path, ev);
    const auto back = dd::load_detection_log(path);
    ASSERT_EQ(back.size(), 2u);
    EXPECT_EQ(back[0].status, dd::DriftStatus::kWarning);
    EXPECT_FALSE(back[0].position_hint);
    EXPECT_EQ(back[1].t, 40u);
    EXPECT_EQ(*back[1].position_hint, 33u);
    std::filesystem::remove(path);
}
