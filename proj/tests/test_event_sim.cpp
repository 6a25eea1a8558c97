#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "ehdr/event_sim.hpp"

using namespace ehdr;

namespace {

HdrImage constant_image(int w, int h, float lum) {
    HdrImage img(w, h);
    for (auto& v : img.pix) v = lum;
    return img;
}

// frames whose log-luminance rises by delta_log between t0 and t1
std::vector<HdrFrame> ramp_pair(float delta_log, float log_eps, uint64_t t1 = 1000) {
    // nudge above the threshold so float->double log round-off cannot drop
    // a boundary crossing
    delta_log *= 1.00001f;
    const float l0 = 0.5f;
    // pick l1 so that log(l1+eps) - log(l0+eps) == delta_log
    const float l1 = (l0 + log_eps) * std::exp(delta_log) - log_eps;
    return {{constant_image(2, 2, l0), 0}, {constant_image(2, 2, l1), t1}};
}

}  // namespace

TEST(SimulateEvents, ConstantSequenceIsSilent) {
    std::vector<HdrFrame> frames = {{constant_image(4, 4, 0.3f), 0},
                                    {constant_image(4, 4, 0.3f), 1000},
                                    {constant_image(4, 4, 0.3f), 2000}};
    SimulatorConfig cfg;
    cfg.contrast_threshold = 0.2f;
    EXPECT_TRUE(simulate_events(frames, cfg).events.empty());
}

TEST(SimulateEvents, SingleFullCrossing) {
    SimulatorConfig cfg;
    cfg.contrast_threshold = 0.2f;
    auto frames = ramp_pair(0.2f, cfg.log_eps);
    auto stream = simulate_events(frames, cfg);
    // one +1 event per pixel, exactly at t=1000
    ASSERT_EQ(stream.events.size(), 4u);
    for (const auto& e : stream.events) {
        EXPECT_EQ(e.p, 1);
        EXPECT_EQ(e.t, 1000u);
    }
}

TEST(SimulateEvents, TwoPointFiveCrossingsEmitTwoEvents) {
    SimulatorConfig cfg;
    cfg.contrast_threshold = 0.2f;
    auto frames = ramp_pair(0.5f, cfg.log_eps);
    auto stream = simulate_events(frames, cfg);
    ASSERT_EQ(stream.events.size(), 8u);  // 2 events on each of 4 pixels
    // crossing times: L interpolates linearly, crossings at 0.4 and 0.8 of span
    uint64_t t_lo = stream.events.front().t;
    uint64_t t_hi = stream.events.back().t;
    EXPECT_NEAR(double(t_lo), 400.0, 1.0);
    EXPECT_NEAR(double(t_hi), 800.0, 1.0);
}

TEST(SimulateEvents, ResidualCarriesAcrossFrames) {
    SimulatorConfig cfg;
    cfg.contrast_threshold = 0.2f;
    const float eps = cfg.log_eps;
    const float l0 = 0.5f;
    const float half = (l0 + eps) * std::exp(0.1f) - eps;    // +0.5 C
    const float full = (l0 + eps) * std::exp(0.25f) - eps;   // +1.25 C total
    std::vector<HdrFrame> frames = {{constant_image(1, 1, l0), 0},
                                    {constant_image(1, 1, half), 1000},
                                    {constant_image(1, 1, full), 2000}};
    auto stream = simulate_events(frames, cfg);
    ASSERT_EQ(stream.events.size(), 1u);  // 1.25 C total -> exactly one event
    EXPECT_GT(stream.events[0].t, 1000u);
}

TEST(SimulateEvents, NegativeDirection) {
    SimulatorConfig cfg;
    cfg.contrast_threshold = 0.2f;
    auto frames = ramp_pair(-0.45f, cfg.log_eps);
    auto stream = simulate_events(frames, cfg);
    ASSERT_EQ(stream.events.size(), 8u);  // floor(0.45/0.2) = 2 per pixel
    for (const auto& e : stream.events) EXPECT_EQ(e.p, -1);
}

TEST(SimulateEvents, MonotonicityInThreshold) {
    SceneMotion motion{2.0f, 0.5f, -1.5f, 0.0f};
    DynamicScene scene(3, 32, 32, motion, 1000);
    std::vector<HdrFrame> frames;
    for (uint64_t t = 0; t <= 6000; t += 1000) frames.push_back(scene.frame(t));
    SimulatorConfig cfg;
    size_t last = SIZE_MAX;
    for (float c : {0.1f, 0.2f, 0.4f, 0.8f}) {
        cfg.contrast_threshold = c;
        const size_t n = simulate_events(frames, cfg).events.size();
        EXPECT_LE(n, last);
        last = n;
    }
}

TEST(SimulateEvents, StreamSortedAndPerPixelIncreasing) {
    SceneMotion motion{2.0f, 0.0f, -1.0f, 1.0f};
    DynamicScene scene(11, 32, 32, motion, 1000);
    std::vector<HdrFrame> frames;
    for (uint64_t t = 0; t <= 4000; t += 1000) frames.push_back(scene.frame(t));
    SimulatorConfig cfg;
    cfg.contrast_threshold = 0.3f;
    auto stream = simulate_events(frames, cfg);
    ASSERT_FALSE(stream.events.empty());
    for (size_t i = 1; i < stream.events.size(); ++i)
        EXPECT_LE(stream.events[i - 1].t, stream.events[i].t);
}

TEST(SimulateEvents, RejectsBadInput) {
    std::vector<HdrFrame> one = {{constant_image(2, 2, 0.1f), 0}};
    SimulatorConfig cfg;
    EXPECT_THROW(simulate_events(one, cfg), SimError);
    auto inf_img = constant_image(2, 2, 0.1f);
    inf_img.pix[0] = std::numeric_limits<float>::infinity();
    std::vector<HdrFrame> frames = {{constant_image(2, 2, 0.1f), 0}, {inf_img, 1000}};
    EXPECT_THROW(simulate_events(frames, cfg), SimError);
}

TEST(CalibrateThreshold, ReproducesTargetRate) {
    SceneMotion motion{2.0f, 1.0f, -1.0f, 0.5f};
    DynamicScene scene(29, 32, 32, motion, 1000);
    std::vector<HdrFrame> frames;
    for (uint64_t t = 0; t <= 8000; t += 1000) frames.push_back(scene.frame(t));
    SimulatorConfig cfg;

    cfg.contrast_threshold = 0.25f;
    auto mid_stream = simulate_events(frames, cfg);
    const double mid_rate = event_rate(mid_stream, 0, 8001, 1000);
    ASSERT_GT(mid_rate, 0.0);

    const float c = calibrate_threshold(frames, mid_rate, 0.05f, 1.5f, cfg, 1000);
    cfg.contrast_threshold = c;
    const double achieved = event_rate(simulate_events(frames, cfg), 0, 8001, 1000);
    EXPECT_NEAR(achieved, mid_rate, 0.05 * mid_rate);
}

TEST(CalibrateThreshold, UnreachableTargetErrors) {
    SceneMotion motion{2.0f, 0.0f, 0.0f, 0.0f};
    DynamicScene scene(5, 32, 32, motion, 1000);
    std::vector<HdrFrame> frames;
    for (uint64_t t = 0; t <= 4000; t += 1000) frames.push_back(scene.frame(t));
    SimulatorConfig cfg;
    EXPECT_THROW(calibrate_threshold(frames, 0.0, 0.05f, 1.0f, cfg, 1000), SimError);
    EXPECT_THROW(calibrate_threshold(frames, 1e12, 0.05f, 1.0f, cfg, 1000), SimError);
}

TEST(SynthesizeBracket, NoiselessFormula) {
    auto spec = BracketSpec::from_fstops({-2, 0, 2});
    NoiseModel nn{0.0f, 0.0f, 8};
    HdrImage hdr = constant_image(2, 2, 1.0f);
    // reference exposure 1.0 so the linear value at fstop 0 is exactly 1.0
    auto ldr = synthesize_bracket(hdr, 0, spec, nn, 1, 1.0f);
    for (float v : ldr.pix) EXPECT_FLOAT_EQ(v, 1.0f);

    HdrImage half = constant_image(2, 2, 0.5f);
    auto ldr2 = synthesize_bracket(half, 0, spec, nn, 1, 1.0f);
    for (float v : ldr2.pix) EXPECT_NEAR(v, 186.0f / 255.0f, 1e-4);
}

TEST(SynthesizeBracket, FstopQuadruplesLinearValues) {
    auto spec = BracketSpec::from_fstops({-2, 0, 2});
    NoiseModel nn{0.0f, 0.0f, 16};
    HdrImage hdr = constant_image(2, 2, 0.05f);
    auto base = synthesize_bracket(hdr, 0, spec, nn, 1, 1.0f);
    auto plus2 = synthesize_bracket(hdr, 2, spec, nn, 1, 1.0f);
    for (size_t i = 0; i < base.pix.size(); ++i)
        EXPECT_NEAR(linearize(plus2.pix[i]), 4.0f * linearize(base.pix[i]), 1e-3);
    EXPECT_FLOAT_EQ(base.exposure_time, 4.0f);    // relative to -2 f-stop
    EXPECT_FLOAT_EQ(plus2.exposure_time, 16.0f);
}

TEST(SynthesizeBracket, RoundTripRecoversRadiance) {
    // zero noise, unclipped: synthesize -> linearize -> compensate recovers
    // the scaled HDR values up to quantization
    auto spec = BracketSpec::from_fstops({-1, 0, 1});
    NoiseModel nn{0.0f, 0.0f, 8};
    std::mt19937 rng(13);
    std::uniform_real_distribution<float> u(0.05f, 0.12f);
    HdrImage hdr(4, 4);
    for (auto& v : hdr.pix) v = u(rng);
    const float e_ref = 1.0f;
    const float rs = radiance_scale(spec, e_ref);
    for (int f : spec.fstops) {
        auto ldr = synthesize_bracket(hdr, f, spec, nn, 1, e_ref);
        auto comp = exposure_compensate(ldr);
        // quantization error in gamma space, propagated through v^gamma
        for (size_t i = 0; i < hdr.pix.size(); ++i) {
            const float expect = hdr.pix[i] * rs;
            EXPECT_NEAR(comp.pix[i], expect, 0.02f * expect + 1e-3f);
        }
    }
}

TEST(BracketSpec, ExactlyOneReference) {
    EXPECT_THROW(BracketSpec::from_fstops({-3, 3}), SimError);
    EXPECT_THROW(BracketSpec::from_fstops({0, 0, 3}), SimError);
    auto spec = BracketSpec::from_fstops({-3, 0, 3});
    EXPECT_EQ(spec.reference_index, 1u);
    EXPECT_EQ(spec.min_fstop(), -3);
}

TEST(DynamicScene, MotionAndDynamicRange) {
    SceneMotion still{0, 0, 0, 0};
    DynamicScene static_scene(41, 40, 40, still, 1000);
    auto f0 = static_scene.render(0);
    auto f1 = static_scene.render(5000);
    EXPECT_EQ(f0.pix, f1.pix);  // zero motion: identical frames

    float mn = std::numeric_limits<float>::max(), mx = 0.0f;
    for (float v : f0.pix) {
        if (v > 0) mn = std::min(mn, v);
        mx = std::max(mx, v);
    }
    EXPECT_GE(mx / mn, 1e4f);  // at least 4 decades

    EXPECT_THROW(DynamicScene(1, 16, 16, still, 1000), SimError);
}

TEST(DynamicScene, TranslationMovesObjects) {
    SceneMotion motion{2.0f, 0.0f, 0.0f, 0.0f};
    DynamicScene scene(43, 64, 64, motion, 1000);
    auto f0 = scene.render(0);
    auto f1 = scene.render(1000);
    // disc (radiance 1.0) centroid shifts 2 px in x between renders
    // the disc starts in the left half; restrict to x < 48 so the bright end
    // of the static background ramp stays out of the centroid
    auto centroid_x = [](const HdrImage& img) {
        double sx = 0, n = 0;
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < 48; ++x)
                if (img.at(x, y, 0) > 0.5f) {
                    sx += x;
                    n += 1;
                }
        return sx / n;
    };
    EXPECT_NEAR(centroid_x(f1) - centroid_x(f0), 2.0, 0.35);
}
