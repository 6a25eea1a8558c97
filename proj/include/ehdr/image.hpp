#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace ehdr {

struct ImageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Gamma-encoded bracket frame, HWC RGB in [0,1]. exposure_time is relative to
// the shortest bracket in its stack (shortest = 1).
struct LdrImage {
    int width = 0;
    int height = 0;
    std::vector<float> pix;  // height*width*3
    float exposure_time = 1.0f;
    int fstop = 0;
    uint64_t timestamp_us = 0;

    LdrImage() = default;
    LdrImage(int w, int h) : width(w), height(h), pix(size_t(w) * h * 3, 0.0f) {}
    float& at(int x, int y, int c) { return pix[(size_t(y) * width + x) * 3 + c]; }
    float at(int x, int y, int c) const { return pix[(size_t(y) * width + x) * 3 + c]; }
};

// Linear-radiance image, HWC RGB, non-negative.
struct HdrImage {
    int width = 0;
    int height = 0;
    std::vector<float> pix;

    HdrImage() = default;
    HdrImage(int w, int h) : width(w), height(h), pix(size_t(w) * h * 3, 0.0f) {}
    float& at(int x, int y, int c) { return pix[(size_t(y) * width + x) * 3 + c]; }
    float at(int x, int y, int c) const { return pix[(size_t(y) * width + x) * 3 + c]; }
};

// ITU-R 709 luma weights; event simulation and SSIM run on luminance.
inline float luminance709(float r, float g, float b) {
    return 0.2126f * r + 0.7152f * g + 0.0722f * b;
}

}  // namespace ehdr
