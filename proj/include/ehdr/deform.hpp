#pragma once

// Modulated deformable convolution: y(p) = sum_k w_k * x(p + p_k + dp_k) * m_k
// with fractional offsets read through zero-padded bilinear sampling.
// Differentiable in the input, the weights, the offsets and the masks.

#include "ehdr/tensor.hpp"

namespace ehdr {

// offsets: N x 2K x H x W, channel 2k = dx_k, 2k+1 = dy_k (taps in row-major
// kernel order); masks: N x K x H x W in [0,1]. Output spatial dims follow
// conv2d with the same stride/padding.
template <class S>
TensorT<S> deform_conv(const TensorT<S>& input, const TensorT<S>& offsets,
                       const TensorT<S>& masks, const ConvParamsT<S>& params) {
    const auto& is = input.shape();
    const auto& ws = params.weight.shape();
    const int N = is[0], C = is[1], H = is[2], W = is[3];
    const int OC = ws[0], KH = ws[2], KW = ws[3], K = KH * KW;
    const int stride = params.stride, pad = params.padding;
    const int OH = (H + 2 * pad - KH) / stride + 1;
    const int OW = (W + 2 * pad - KW) / stride + 1;
    if (is[1] != ws[1])
        throw TensorError("deform_conv: channel mismatch input " + shape_str(is) + " weight " +
                          shape_str(ws));
    if (offsets.ndim() != 4 || offsets.dim(1) != 2 * K || offsets.dim(2) != OH ||
        offsets.dim(3) != OW)
        throw TensorError("deform_conv: offset shape " + shape_str(offsets.shape()) +
                          ", expected 2K=" + std::to_string(2 * K) + " channels at " +
                          std::to_string(OH) + "x" + std::to_string(OW));
    if (masks.ndim() != 4 || masks.dim(1) != K || masks.dim(2) != OH || masks.dim(3) != OW)
        throw TensorError("deform_conv: mask shape " + shape_str(masks.shape()));

    auto out = TensorT<S>::zeros({N, OC, OH, OW});
    const auto& xv = input.data();
    const auto& ov = offsets.data();
    const auto& mv = masks.data();
    const auto& wv = params.weight.data();
    const auto& bv = params.bias.data();

    auto x_at = [&](int n, int c, int y, int x) -> S {
        if (y < 0 || y >= H || x < 0 || x >= W) return S(0);
        return xv[((size_t(n) * C + c) * H + y) * W + x];
    };

    for (int n = 0; n < N; ++n)
        for (int oy = 0; oy < OH; ++oy)
            for (int ox = 0; ox < OW; ++ox) {
                // sampled, mask-scaled input values per (tap, channel)
                for (int oc = 0; oc < OC; ++oc)
                    out.data()[((size_t(n) * OC + oc) * OH + oy) * OW + ox] = bv[size_t(oc)];
                for (int k = 0; k < K; ++k) {
                    const int ky = k / KW, kx = k % KW;
                    const size_t pix = (size_t(n) * OH + oy) * OW + ox;
                    const S dx = ov[(size_t(n) * 2 * K + 2 * k) * OH * OW + size_t(oy) * OW + ox];
                    const S dy = ov[(size_t(n) * 2 * K + 2 * k + 1) * OH * OW + size_t(oy) * OW + ox];
                    const S m = mv[(size_t(n) * K + k) * OH * OW + size_t(oy) * OW + ox];
                    (void)pix;
                    const double sx = ox * stride - pad + kx + double(dx);
                    const double sy = oy * stride - pad + ky + double(dy);
                    const int x0 = int(std::floor(sx)), y0 = int(std::floor(sy));
                    const S fx = S(sx - x0), fy = S(sy - y0);
                    for (int c = 0; c < C; ++c) {
                        const S v = (S(1) - fy) * ((S(1) - fx) * x_at(n, c, y0, x0) +
                                                  fx * x_at(n, c, y0, x0 + 1)) +
                                    fy * ((S(1) - fx) * x_at(n, c, y0 + 1, x0) +
                                          fx * x_at(n, c, y0 + 1, x0 + 1));
                        const S vm = v * m;
                        for (int oc = 0; oc < OC; ++oc)
                            out.data()[((size_t(n) * OC + oc) * OH + oy) * OW + ox] +=
                                wv[((size_t(oc) * C + c) * KH + ky) * KW + kx] * vm;
                    }
                }
            }

    if (detail::track<S>({input, offsets, masks, params.weight, params.bias})) {
        out.set_requires_grad(true);
        auto xn = input.node();
        auto on = offsets.node();
        auto mn = masks.node();
        auto wn = params.weight.node();
        auto bn = params.bias.node();
        out.node()->parents = {xn, on, mn, wn, bn};
        out.node()->backprop = [xn, on, mn, wn, bn, N, C, H, W, OC, KH, KW, K, stride, pad,
                                OH, OW](TensorNode<S>& node) {
            xn->ensure_grad();
            on->ensure_grad();
            mn->ensure_grad();
            wn->ensure_grad();
            bn->ensure_grad();
            const auto& xv = xn->value;
            const auto& ov = on->value;
            const auto& mv = mn->value;
            const auto& wv = wn->value;
            auto x_at = [&](int n, int c, int y, int x) -> S {
                if (y < 0 || y >= H || x < 0 || x >= W) return S(0);
                return xv[((size_t(n) * C + c) * H + y) * W + x];
            };
            auto gx_acc = [&](int n, int c, int y, int x, S g) {
                if (y < 0 || y >= H || x < 0 || x >= W) return;
                xn->grad[((size_t(n) * C + c) * H + y) * W + x] += g;
            };
            for (int n = 0; n < N; ++n)
                for (int oy = 0; oy < OH; ++oy)
                    for (int ox = 0; ox < OW; ++ox) {
                        for (int oc = 0; oc < OC; ++oc)
                            bn->grad[size_t(oc)] +=
                                node.grad[((size_t(n) * OC + oc) * OH + oy) * OW + ox];
                        for (int k = 0; k < K; ++k) {
                            const int ky = k / KW, kx = k % KW;
                            const size_t oidx =
                                (size_t(n) * 2 * K + 2 * k) * OH * OW + size_t(oy) * OW + ox;
                            const size_t oidy =
                                (size_t(n) * 2 * K + 2 * k + 1) * OH * OW + size_t(oy) * OW + ox;
                            const size_t midx =
                                (size_t(n) * K + k) * OH * OW + size_t(oy) * OW + ox;
                            const S dx = ov[oidx], dy = ov[oidy], m = mv[midx];
                            const double sx = ox * stride - pad + kx + double(dx);
                            const double sy = oy * stride - pad + ky + double(dy);
                            const int x0 = int(std::floor(sx)), y0 = int(std::floor(sy));
                            const S fx = S(sx - x0), fy = S(sy - y0);
                            for (int c = 0; c < C; ++c) {
                                const S v00 = x_at(n, c, y0, x0);
                                const S v01 = x_at(n, c, y0, x0 + 1);
                                const S v10 = x_at(n, c, y0 + 1, x0);
                                const S v11 = x_at(n, c, y0 + 1, x0 + 1);
                                const S v = (S(1) - fy) * ((S(1) - fx) * v00 + fx * v01) +
                                            fy * ((S(1) - fx) * v10 + fx * v11);
                                // dv/dx, dv/dy of the bilinear read
                                const S dv_dx = (S(1) - fy) * (v01 - v00) + fy * (v11 - v10);
                                const S dv_dy = (S(1) - fx) * (v10 - v00) + fx * (v11 - v01);
                                // sum over output channels of w * upstream grad
                                S gw_sum = S(0);
                                for (int oc = 0; oc < OC; ++oc) {
                                    const S go =
                                        node.grad[((size_t(n) * OC + oc) * OH + oy) * OW + ox];
                                    const size_t widx =
                                        ((size_t(oc) * C + c) * KH + ky) * KW + kx;
                                    wn->grad[widx] += go * v * m;
                                    gw_sum += go * wv[widx];
                                }
                                const S gvm = gw_sum;       // d loss / d (v*m)
                                const S gv = gvm * m;       // d loss / d v
                                mn->grad[midx] += gvm * v;
                                on->grad[oidx] += gv * dv_dx;
                                on->grad[oidy] += gv * dv_dy;
                                gx_acc(n, c, y0, x0, gv * (S(1) - fy) * (S(1) - fx));
                                gx_acc(n, c, y0, x0 + 1, gv * (S(1) - fy) * fx);
                                gx_acc(n, c, y0 + 1, x0, gv * fy * (S(1) - fx));
                                gx_acc(n, c, y0 + 1, x0 + 1, gv * fy * fx);
                            }
                        }
                    }
        };
    }
    return out;
}

}  // namespace ehdr
