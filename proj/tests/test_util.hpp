#pragma once

// Test-only oracles: naive convolution reference and central finite
// difference gradient checking. Kept independent of the library's
// gemm/backward code paths.

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "ehdr/tensor.hpp"

namespace test_util {

// Direct quintuple-loop convolution, zero padding.
template <class S>
ehdr::TensorT<S> naive_conv2d(const ehdr::TensorT<S>& input, const ehdr::TensorT<S>& weight,
                              const ehdr::TensorT<S>& bias, int stride, int pad) {
    const auto& is = input.shape();
    const auto& ws = weight.shape();
    const int N = is[0], C = is[1], H = is[2], W = is[3];
    const int OC = ws[0], KH = ws[2], KW = ws[3];
    const int OH = (H + 2 * pad - KH) / stride + 1;
    const int OW = (W + 2 * pad - KW) / stride + 1;
    auto out = ehdr::TensorT<S>::zeros({N, OC, OH, OW});
    for (int n = 0; n < N; ++n)
        for (int oc = 0; oc < OC; ++oc)
            for (int oy = 0; oy < OH; ++oy)
                for (int ox = 0; ox < OW; ++ox) {
                    double acc = double(bias.data()[size_t(oc)]);
                    for (int c = 0; c < C; ++c)
                        for (int ky = 0; ky < KH; ++ky)
                            for (int kx = 0; kx < KW; ++kx) {
                                const int iy = oy * stride - pad + ky;
                                const int ix = ox * stride - pad + kx;
                                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                                acc += double(weight.at(oc, c, ky, kx)) *
                                       double(input.at(n, c, iy, ix));
                            }
                    out.at(n, oc, oy, ox) = S(acc);
                }
    return out;
}

// Analytic gradients of `make_loss()` w.r.t. each tensor in `params` versus
// central finite differences on the same 64-bit graph. Returns the max
// relative error.
inline double fd_max_rel_err(std::vector<ehdr::TensorT<double>> params,
                             const std::function<ehdr::TensorT<double>()>& make_loss,
                             double eps = 1e-4) {
    for (auto& p : params) p.zero_grad();
    auto loss = make_loss();
    loss.backward();
    double max_err = 0.0;
    for (auto& p : params) {
        for (size_t i = 0; i < p.numel(); ++i) {
            const double orig = p.data()[i];
            p.data()[i] = orig + eps;
            const double up = make_loss().data()[0];
            p.data()[i] = orig - eps;
            const double dn = make_loss().data()[0];
            p.data()[i] = orig;
            const double fd = (up - dn) / (2.0 * eps);
            const double an = p.has_grad() ? p.grad()[i] : 0.0;
            const double err = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1.0});
            max_err = std::max(max_err, err);
        }
    }
    return max_err;
}

template <class S>
double max_abs_diff(const ehdr::TensorT<S>& a, const ehdr::TensorT<S>& b) {
    double m = 0.0;
    for (size_t i = 0; i < a.numel(); ++i)
        m = std::max(m, std::abs(double(a.data()[i]) - double(b.data()[i])));
    return m;
}

}  // namespace test_util
