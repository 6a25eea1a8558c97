#pragma once

// PSNR-mu and SSIM-mu on mu-law tonemapped images, plus the directory
// evaluation harness.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ehdr/hdr_math.hpp"
#include "ehdr/image.hpp"

namespace ehdr {

constexpr float kPsnrCap = 99.0f;  // reported for zero MSE

inline void check_metric_shapes(const HdrImage& a, const HdrImage& b, const char* op) {
    if (a.width != b.width || a.height != b.height)
        throw ImageError(std::string(op) + ": shape mismatch " + std::to_string(a.width) + "x" +
                         std::to_string(a.height) + " vs " + std::to_string(b.width) + "x" +
                         std::to_string(b.height));
}

// -10 log10(MSE) on mu-law images, peak 1.
inline float psnr_mu(const HdrImage& pred, const HdrImage& gt, float mu = kDefaultMu) {
    check_metric_shapes(pred, gt, "psnr_mu");
    double mse = 0.0;
    for (size_t i = 0; i < pred.pix.size(); ++i) {
        const double d = double(mu_law(pred.pix[i], mu)) - double(mu_law(gt.pix[i], mu));
        mse += d * d;
    }
    mse /= double(pred.pix.size());
    if (mse <= 0.0) return kPsnrCap;
    return std::min(kPsnrCap, float(-10.0 * std::log10(mse)));
}

// Mean local SSIM over Gaussian windows on mu-law luminance.
inline float ssim_mu(const HdrImage& pred, const HdrImage& gt, int window = 11,
                     float sigma = 1.5f, float k1 = 0.01f, float k2 = 0.03f,
                     float mu = kDefaultMu) {
    check_metric_shapes(pred, gt, "ssim_mu");
    const int w = pred.width, h = pred.height;
    if (w < window || h < window)
        throw ImageError("ssim_mu: image smaller than window");

    std::vector<double> ga(size_t(w) * h), gb(size_t(w) * h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            ga[size_t(y) * w + x] = mu_law(
                luminance709(pred.at(x, y, 0), pred.at(x, y, 1), pred.at(x, y, 2)), mu);
            gb[size_t(y) * w + x] =
                mu_law(luminance709(gt.at(x, y, 0), gt.at(x, y, 1), gt.at(x, y, 2)), mu);
        }

    std::vector<double> kernel(static_cast<size_t>(window));
    const int half = window / 2;
    double ksum = 0.0;
    for (int i = 0; i < window; ++i) {
        kernel[size_t(i)] = std::exp(-0.5 * double(i - half) * (i - half) / (sigma * sigma));
        ksum += kernel[size_t(i)];
    }
    for (auto& k : kernel) k /= ksum;

    const double c1 = double(k1) * k1, c2 = double(k2) * k2;
    double total = 0.0;
    size_t count = 0;
    for (int y = half; y < h - half; ++y)
        for (int x = half; x < w - half; ++x) {
            double ma = 0, mb = 0, va = 0, vb = 0, cov = 0;
            for (int dy = -half; dy <= half; ++dy)
                for (int dx = -half; dx <= half; ++dx) {
                    const double kw = kernel[size_t(dy + half)] * kernel[size_t(dx + half)];
                    const double a = ga[size_t(y + dy) * w + x + dx];
                    const double b = gb[size_t(y + dy) * w + x + dx];
                    ma += kw * a;
                    mb += kw * b;
                    va += kw * a * a;
                    vb += kw * b * b;
                    cov += kw * a * b;
                }
            va -= ma * ma;
            vb -= mb * mb;
            cov -= ma * mb;
            total += ((2 * ma * mb + c1) * (2 * cov + c2)) /
                     ((ma * ma + mb * mb + c1) * (va + vb + c2));
            ++count;
        }
    return float(total / double(count));
}

inline HdrImage crop_border(const HdrImage& img, int border) {
    if (2 * border >= img.width || 2 * border >= img.height)
        throw ImageError("crop_border: border too large");
    HdrImage out(img.width - 2 * border, img.height - 2 * border);
    for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x)
            for (int c = 0; c < 3; ++c) out.at(x, y, c) = img.at(x + border, y + border, c);
    return out;
}

struct SampleScore {
    std::string name;
    float psnr = 0.0f;
    float ssim = 0.0f;
};

struct EvalReport {
    std::vector<SampleScore> samples;
    float mean_psnr = 0.0f;
    float mean_ssim = 0.0f;
    std::vector<std::string> skipped;

    void finalize() {
        double ps = 0.0, ss = 0.0;
        for (const auto& s : samples) {
            ps += s.psnr;
            ss += s.ssim;
        }
        if (!samples.empty()) {
            mean_psnr = float(ps / double(samples.size()));
            mean_ssim = float(ss / double(samples.size()));
        }
    }
    void write_csv(const std::string& path) const {
        std::ofstream os(path);
        os << "sample,psnr_mu,ssim_mu\n";
        for (const auto& s : samples)
            os << s.name << "," << s.psnr << "," << s.ssim << "\n";
        os << "mean," << mean_psnr << "," << mean_ssim << "\n";
    }
};

inline SampleScore score_pair(const std::string& name, const HdrImage& pred,
                              const HdrImage& gt, int border_crop) {
    const HdrImage p = border_crop > 0 ? crop_border(pred, border_crop) : pred;
    const HdrImage g = border_crop > 0 ? crop_border(gt, border_crop) : gt;
    return {name, psnr_mu(p, g), ssim_mu(p, g)};
}

}  // namespace ehdr
