#pragma once

// Event synthesis from HDR frame sequences, contrast-threshold calibration
// against a target event rate, bracketed LDR synthesis with a simple noise
// model, and a procedural dynamic test scene.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

#include "ehdr/event.hpp"
#include "ehdr/hdr_math.hpp"
#include "ehdr/image.hpp"

namespace ehdr {

struct SimError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct SimulatorConfig {
    float contrast_threshold = 0.2f;  // log-intensity units, both polarities
    float log_eps = 1e-3f;
    int frame_skip = 2;  // full frames between bracketed LDR captures
};

struct BracketSpec {
    std::vector<int> fstops;  // e.g. {-3, 0, 3}
    size_t reference_index = 0;

    static BracketSpec from_fstops(std::vector<int> fs) {
        BracketSpec spec;
        spec.fstops = std::move(fs);
        bool found = false;
        for (size_t i = 0; i < spec.fstops.size(); ++i) {
            if (spec.fstops[i] == 0) {
                if (found) throw SimError("BracketSpec: multiple reference (0 f-stop) brackets");
                spec.reference_index = i;
                found = true;
            }
        }
        if (!found) throw SimError("BracketSpec: no reference (0 f-stop) bracket");
        return spec;
    }
    int min_fstop() const { return *std::min_element(fstops.begin(), fstops.end()); }
};

struct NoiseModel {
    float read_noise_sigma = 0.01f;   // normalized intensity units
    float shot_noise_scale = 0.005f;  // variance per unit signal
    int quantization_bits = 8;
};

struct HdrFrame {
    HdrImage image;
    uint64_t timestamp_us = 0;
};

// Per-pixel reference-level crossing simulator. Tracks L = log(lum + eps) of
// the 709 luminance; between consecutive frames an event fires for every full
// threshold crossing from the last-event reference level, timestamped by
// linear interpolation of L. The reference level advances by +-C per event,
// carrying residual change across frames.
inline EventStream simulate_events(const std::vector<HdrFrame>& frames,
                                   const SimulatorConfig& cfg) {
    if (frames.size() < 2) throw SimError("simulate_events: need at least 2 frames");
    const int w = frames[0].image.width, h = frames[0].image.height;
    for (size_t i = 1; i < frames.size(); ++i) {
        if (frames[i].image.width != w || frames[i].image.height != h)
            throw SimError("simulate_events: frame resolution mismatch");
        if (frames[i].timestamp_us <= frames[i - 1].timestamp_us)
            throw SimError("simulate_events: timestamps not strictly increasing");
    }
    const float C = cfg.contrast_threshold;
    if (C <= 0.0f) throw SimError("simulate_events: contrast threshold must be positive");

    auto log_lum = [&](const HdrImage& img, int x, int y) {
        const float lum =
            luminance709(img.at(x, y, 0), img.at(x, y, 1), img.at(x, y, 2));
        if (!std::isfinite(lum)) throw SimError("simulate_events: non-finite frame value");
        return std::log(lum + cfg.log_eps);
    };

    EventStream stream;
    stream.width = uint16_t(w);
    stream.height = uint16_t(h);
    std::vector<double> ref(size_t(w) * h);
    std::vector<double> prev(size_t(w) * h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            ref[size_t(y) * w + x] = prev[size_t(y) * w + x] = log_lum(frames[0].image, x, y);

    for (size_t f = 1; f < frames.size(); ++f) {
        const double ta = double(frames[f - 1].timestamp_us);
        const double tb = double(frames[f].timestamp_us);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const size_t i = size_t(y) * w + x;
                const double la = prev[i];
                const double lb = log_lum(frames[f].image, x, y);
                double r = ref[i];
                if (lb > la) {
                    while (lb >= r + C) {
                        r += C;
                        const double t = ta + (tb - ta) * (r - la) / (lb - la);
                        stream.events.push_back(
                            {uint64_t(std::llround(t)), uint16_t(x), uint16_t(y), int8_t(1)});
                    }
                } else if (lb < la) {
                    while (lb <= r - C) {
                        r -= C;
                        const double t = ta + (tb - ta) * (r - la) / (lb - la);
                        stream.events.push_back(
                            {uint64_t(std::llround(t)), uint16_t(x), uint16_t(y), int8_t(-1)});
                    }
                }
                ref[i] = r;
                prev[i] = lb;
            }
    }
    std::sort(stream.events.begin(), stream.events.end(), [](const Event& a, const Event& b) {
        if (a.t != b.t) return a.t < b.t;
        if (a.y != b.y) return a.y < b.y;
        if (a.x != b.x) return a.x < b.x;
        return a.p < b.p;
    });
    return stream;
}

// Bisection on C until the simulated rate is within 5% of the target
// (or 32 iterations). Rate is monotonically non-increasing in C.
inline float calibrate_threshold(const std::vector<HdrFrame>& frames, double target_rate,
                                 float lo, float hi, const SimulatorConfig& base_cfg,
                                 uint64_t frame_interval_us) {
    auto rate_at = [&](float c) {
        SimulatorConfig cfg = base_cfg;
        cfg.contrast_threshold = c;
        EventStream s = simulate_events(frames, cfg);
        return event_rate(s, frames.front().timestamp_us, frames.back().timestamp_us + 1,
                          frame_interval_us);
    };
    const double r_lo = rate_at(lo), r_hi = rate_at(hi);
    if (target_rate > r_lo || target_rate < r_hi)
        throw SimError("calibrate_threshold: target rate outside bracketing interval");
    float a = lo, b = hi;
    float c = lo;
    for (int it = 0; it < 32; ++it) {
        c = 0.5f * (a + b);
        const double r = rate_at(c);
        if (target_rate > 0.0 && std::abs(r - target_rate) <= 0.05 * target_rate) return c;
        if (r > target_rate)
            a = c;  // too many events, raise threshold
        else
            b = c;
    }
    return c;
}

// Reference exposure maps the stack's median luminance to 0.18.
inline float reference_exposure(const HdrImage& hdr) {
    std::vector<float> lum(size_t(hdr.width) * hdr.height);
    for (int y = 0; y < hdr.height; ++y)
        for (int x = 0; x < hdr.width; ++x)
            lum[size_t(y) * hdr.width + x] =
                luminance709(hdr.at(x, y, 0), hdr.at(x, y, 1), hdr.at(x, y, 2));
    const size_t mid = lum.size() / 2;
    std::nth_element(lum.begin(), lum.begin() + ptrdiff_t(mid), lum.end());
    const float med = std::max(lum[mid], 1e-12f);
    return 0.18f / med;
}

// Exposure-scale, add shot + read noise, clip, gamma-encode, quantize.
inline LdrImage synthesize_bracket(const HdrImage& hdr, int fstop, const BracketSpec& spec,
                                   const NoiseModel& noise, uint32_t rng_seed,
                                   float ref_exposure = -1.0f) {
    const float e_ref = ref_exposure > 0.0f ? ref_exposure : reference_exposure(hdr);
    const float gain = e_ref * std::pow(2.0f, float(fstop));
    const float levels = float((1 << noise.quantization_bits) - 1);
    std::mt19937 rng(rng_seed);
    std::normal_distribution<float> gauss(0.0f, 1.0f);

    LdrImage out(hdr.width, hdr.height);
    out.fstop = fstop;
    out.exposure_time = std::pow(2.0f, float(fstop - spec.min_fstop()));
    for (size_t i = 0; i < hdr.pix.size(); ++i) {
        float v = hdr.pix[i] * gain;
        if (noise.shot_noise_scale > 0.0f)
            v += gauss(rng) * std::sqrt(std::max(v, 0.0f) * noise.shot_noise_scale);
        if (noise.read_noise_sigma > 0.0f) v += gauss(rng) * noise.read_noise_sigma;
        v = std::clamp(v, 0.0f, 1.0f);
        v = delinearize(v);
        out.pix[i] = std::round(v * levels) / levels;
    }
    return out;
}

// The scale factor mapping scene radiance into the stack's recoverable [0,1]
// range: compensated bracket values equal radiance * this factor.
inline float radiance_scale(const BracketSpec& spec, float ref_exposure) {
    return ref_exposure * std::pow(2.0f, float(spec.min_fstop()));
}

// ---- procedural dynamic scene ----

struct SceneMotion {
    float disc_vx = 2.0f;  // px per frame interval
    float disc_vy = 0.0f;
    float square_vx = -1.0f;
    float square_vy = 0.5f;
};

// Gradient background spanning >= 4 decades of radiance, a moving bright disc
// and a moving dark square. Deterministic per seed.
class DynamicScene {
public:
    DynamicScene(uint32_t seed, int width, int height, SceneMotion motion,
                 uint64_t frame_interval_us)
        : width_(width), height_(height), motion_(motion), interval_us_(frame_interval_us) {
        if (width < 32 || height < 32) throw SimError("DynamicScene: size must be >= 32x32");
        std::mt19937 rng(seed);
        std::uniform_real_distribution<float> u(0.0f, 1.0f);
        disc_x0_ = width * (0.25f + 0.2f * u(rng));
        disc_y0_ = height * (0.3f + 0.3f * u(rng));
        disc_r_ = std::min(width, height) * (0.10f + 0.06f * u(rng));
        sq_x0_ = width * (0.55f + 0.2f * u(rng));
        sq_y0_ = height * (0.3f + 0.3f * u(rng));
        sq_half_ = std::min(width, height) * (0.08f + 0.05f * u(rng));
        disc_radiance_ = 1.0f;
        square_radiance_ = 2e-5f;
        tint_ = {0.9f + 0.1f * u(rng), 0.8f + 0.2f * u(rng), 0.7f + 0.3f * u(rng)};
    }

    HdrImage render(uint64_t t_us) const {
        const float frames = float(double(t_us) / double(interval_us_));
        HdrImage img(width_, height_);
        const float dcx = disc_x0_ + motion_.disc_vx * frames;
        const float dcy = disc_y0_ + motion_.disc_vy * frames;
        const float scx = sq_x0_ + motion_.square_vx * frames;
        const float scy = sq_y0_ + motion_.square_vy * frames;
        for (int y = 0; y < height_; ++y)
            for (int x = 0; x < width_; ++x) {
                // background: horizontal log ramp over 4 decades, 1e-4 .. 1
                const float fx = float(x) / float(width_ - 1);
                const float fy = float(y) / float(height_ - 1);
                float rad = std::pow(10.0f, -4.0f + 4.0f * fx) * (0.7f + 0.3f * fy);
                const float dd = std::hypot(float(x) - dcx, float(y) - dcy);
                if (dd < disc_r_) rad = disc_radiance_;
                if (std::abs(float(x) - scx) < sq_half_ && std::abs(float(y) - scy) < sq_half_)
                    rad = square_radiance_;
                img.at(x, y, 0) = rad * tint_[0];
                img.at(x, y, 1) = rad * tint_[1];
                img.at(x, y, 2) = rad * tint_[2];
            }
        return img;
    }

    HdrFrame frame(uint64_t t_us) const { return {render(t_us), t_us}; }
    uint64_t frame_interval_us() const { return interval_us_; }
    int width() const { return width_; }
    int height() const { return height_; }

private:
    int width_, height_;
    SceneMotion motion_;
    uint64_t interval_us_;
    float disc_x0_, disc_y0_, disc_r_;
    float sq_x0_, sq_y0_, sq_half_;
    float disc_radiance_, square_radiance_;
    std::array<float, 3> tint_;
};

}  // namespace ehdr
