#pragma once

// Gamma CRF handling, exposure compensation, triangle-weighted HDR merging
// and mu-law tonemapping. All per-pixel, channel-independent.

#include <algorithm>
#include <cmath>
#include <vector>

#include "ehdr/image.hpp"

namespace ehdr {

constexpr float kDefaultGamma = 2.2f;
constexpr float kDefaultMu = 5000.0f;

// Inverse CRF: stored value -> linear, v^gamma.
inline float linearize(float v, float gamma = kDefaultGamma) { return std::pow(v, gamma); }
inline float delinearize(float v, float gamma = kDefaultGamma) {
    return std::pow(v, 1.0f / gamma);
}

inline HdrImage linearize(const LdrImage& ldr, float gamma = kDefaultGamma) {
    HdrImage out(ldr.width, ldr.height);
    for (size_t i = 0; i < ldr.pix.size(); ++i) out.pix[i] = linearize(ldr.pix[i], gamma);
    return out;
}

// Exposure compensated linearized image: linearize(I) / t.
inline HdrImage exposure_compensate(const LdrImage& ldr, float gamma = kDefaultGamma) {
    if (ldr.exposure_time <= 0.0f)
        throw ImageError("exposure_compensate: non-positive exposure time");
    HdrImage out = linearize(ldr, gamma);
    const float inv_t = 1.0f / ldr.exposure_time;
    for (auto& v : out.pix) v *= inv_t;
    return out;
}

enum class ExposureRank { Shortest, Middle, Longest };

// Piecewise-linear confidence in the stored LDR value. Shortest exposures
// trust bright pixels, longest trust dark ones, middles peak at 0.5.
inline float triangle_weight(float v, ExposureRank rank) {
    switch (rank) {
        case ExposureRank::Shortest:
            return v >= 0.5f ? 1.0f : 2.0f * v;
        case ExposureRank::Longest:
            return v <= 0.5f ? 1.0f : 2.0f * (1.0f - v);
        case ExposureRank::Middle:
        default:
            return v <= 0.5f ? 2.0f * v : 2.0f * (1.0f - v);
    }
}

inline ExposureRank exposure_rank(size_t idx, size_t count, bool is_min, bool is_max) {
    (void)idx;
    (void)count;
    if (is_min && !is_max) return ExposureRank::Shortest;
    if (is_max && !is_min) return ExposureRank::Longest;
    return ExposureRank::Middle;
}

// Weighted-average merge H = sum_i a_i(v_i) * I~_i / sum_i a_i(v_i).
// Pixels where every weight vanishes fall back to the bracket whose stored
// value is farthest from the {0,1} clip points.
inline HdrImage merge_hdr(const std::vector<LdrImage>& brackets, float gamma = kDefaultGamma) {
    if (brackets.size() < 2) throw ImageError("merge_hdr: need at least 2 brackets");
    const int w = brackets[0].width, h = brackets[0].height;
    float t_min = brackets[0].exposure_time, t_max = brackets[0].exposure_time;
    for (const auto& b : brackets) {
        if (b.width != w || b.height != h) throw ImageError("merge_hdr: bracket shape mismatch");
        t_min = std::min(t_min, b.exposure_time);
        t_max = std::max(t_max, b.exposure_time);
    }
    std::vector<HdrImage> comp;
    std::vector<ExposureRank> ranks;
    comp.reserve(brackets.size());
    for (const auto& b : brackets) {
        comp.push_back(exposure_compensate(b, gamma));
        ranks.push_back(exposure_rank(0, brackets.size(), b.exposure_time == t_min,
                                      b.exposure_time == t_max));
    }
    HdrImage out(w, h);
    for (size_t i = 0; i < out.pix.size(); ++i) {
        float num = 0.0f, den = 0.0f;
        for (size_t j = 0; j < brackets.size(); ++j) {
            const float a = triangle_weight(brackets[j].pix[i], ranks[j]);
            num += a * comp[j].pix[i];
            den += a;
        }
        if (den > 0.0f) {
            out.pix[i] = num / den;
        } else {
            // doubly-clipped pixel: best-exposed bracket wins
            float best_conf = -1.0f;
            for (size_t j = 0; j < brackets.size(); ++j) {
                const float v = brackets[j].pix[i];
                const float conf = std::min(v, 1.0f - v);
                if (conf > best_conf) {
                    best_conf = conf;
                    out.pix[i] = comp[j].pix[i];
                }
            }
        }
    }
    return out;
}

// T = log(1 + mu*H) / log(1 + mu); input clamped to [0,1], negatives rejected.
inline float mu_law(float h, float mu = kDefaultMu) {
    if (h < 0.0f) throw ImageError("mu_law: negative input");
    const float c = std::min(h, 1.0f);
    return std::log1p(mu * c) / std::log1p(mu);
}

inline float mu_law_derivative(float h, float mu = kDefaultMu) {
    if (h < 0.0f || h > 1.0f) return 0.0f;
    return mu / ((1.0f + mu * h) * std::log1p(mu));
}

inline HdrImage mu_law(const HdrImage& img, float mu = kDefaultMu) {
    HdrImage out(img.width, img.height);
    for (size_t i = 0; i < img.pix.size(); ++i) out.pix[i] = mu_law(img.pix[i], mu);
    return out;
}

}  // namespace ehdr
