#pragma once

// Dense NCHW float tensors with reverse-mode gradient tracking.
// The operator set is exactly what the network needs: conv2d, pointwise
// activations, concat/slice, bilinear resampling and reductions.
// Everything is templated on the scalar type so gradient checks can run
// in a 64-bit shadow mode while production stays 32-bit.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include <cblas.h>

namespace ehdr {

struct TensorError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline std::string shape_str(const std::vector<int>& s) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

template <class S>
struct TensorNode {
    std::vector<int> shape;
    std::vector<S> value;
    std::vector<S> grad;  // empty until backward touches this node
    bool requires_grad = false;
    bool backward_done = false;  // set on the node backward() ran from
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backprop;

    size_t numel() const { return value.size(); }
    void ensure_grad() {
        if (grad.empty()) grad.assign(value.size(), S(0));
    }
};

template <class S>
class TensorT {
public:
    using Node = TensorNode<S>;
    using NodePtr = std::shared_ptr<Node>;

    TensorT() = default;
    explicit TensorT(NodePtr n) : node_(std::move(n)) {}

    static TensorT zeros(std::vector<int> shape, bool requires_grad = false) {
        return filled(std::move(shape), S(0), requires_grad);
    }
    static TensorT filled(std::vector<int> shape, S v, bool requires_grad = false) {
        auto n = std::make_shared<Node>();
        size_t count = 1;
        for (int d : shape) {
            if (d <= 0) throw TensorError("non-positive dimension in shape " + shape_str(shape));
            count *= size_t(d);
        }
        n->shape = std::move(shape);
        n->value.assign(count, v);
        n->requires_grad = requires_grad;
        return TensorT(n);
    }
    static TensorT from_data(std::vector<int> shape, std::vector<S> data, bool requires_grad = false) {
        size_t count = 1;
        for (int d : shape) count *= size_t(d);
        if (count != data.size())
            throw TensorError("data length " + std::to_string(data.size()) +
                              " does not match shape " + shape_str(shape));
        auto n = std::make_shared<Node>();
        n->shape = std::move(shape);
        n->value = std::move(data);
        n->requires_grad = requires_grad;
        return TensorT(n);
    }
    static TensorT uniform(std::vector<int> shape, S lo, S hi, std::mt19937& rng,
                           bool requires_grad = false) {
        auto t = zeros(std::move(shape), requires_grad);
        std::uniform_real_distribution<double> d{double(lo), double(hi)};
        for (auto& v : t.node_->value) v = S(d(rng));
        return t;
    }

    bool valid() const { return node_ != nullptr; }
    const std::vector<int>& shape() const { return node_->shape; }
    int dim(int i) const { return node_->shape[size_t(i)]; }
    int ndim() const { return int(node_->shape.size()); }
    size_t numel() const { return node_->value.size(); }
    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool b) { node_->requires_grad = b; }

    std::vector<S>& data() { return node_->value; }
    const std::vector<S>& data() const { return node_->value; }
    std::vector<S>& grad() { return node_->grad; }
    const std::vector<S>& grad() const { return node_->grad; }
    bool has_grad() const { return !node_->grad.empty(); }
    void zero_grad() {
        node_->grad.clear();
        node_->backward_done = false;
    }

    // NCHW accessors
    S& at(int n, int c, int h, int w) { return node_->value[size_t(offset(n, c, h, w))]; }
    S at(int n, int c, int h, int w) const { return node_->value[size_t(offset(n, c, h, w))]; }
    S grad_at(int n, int c, int h, int w) const {
        return node_->grad.empty() ? S(0) : node_->grad[size_t(offset(n, c, h, w))];
    }

    NodePtr node() const { return node_; }

    bool all_finite() const {
        for (S v : node_->value)
            if (!std::isfinite(double(v))) return false;
        return true;
    }

    // Reverse pass from this (scalar) tensor; accumulates into .grad of every
    // reachable tensor whose path requires gradients.
    void backward() const {
        if (numel() != 1) throw TensorError("backward requires a scalar loss, got shape " + shape_str(shape()));
        if (node_->backward_done)
            throw TensorError("backward called twice on the same loss without reset");
        node_->backward_done = true;

        std::vector<Node*> order;
        topo_sort(order);
        node_->ensure_grad();
        node_->grad[0] = S(1);
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            Node* n = *it;
            if (n->backprop && !n->grad.empty()) n->backprop(*n);
        }
    }

private:
    int64_t offset(int n, int c, int h, int w) const {
        const auto& s = node_->shape;
        return ((int64_t(n) * s[1] + c) * s[2] + h) * s[3] + w;
    }

    void topo_sort(std::vector<Node*>& order) const {
        std::unordered_set<Node*> visited;
        std::vector<std::pair<Node*, size_t>> stack;
        stack.emplace_back(node_.get(), 0);
        visited.insert(node_.get());
        while (!stack.empty()) {
            auto& [n, i] = stack.back();
            if (i < n->parents.size()) {
                Node* p = n->parents[i++].get();
                if (visited.insert(p).second) stack.emplace_back(p, 0);
            } else {
                order.push_back(n);
                stack.pop_back();
            }
        }
    }

    NodePtr node_;
};

using Tensor = TensorT<float>;

namespace detail {

template <class S>
bool track(std::initializer_list<TensorT<S>> ins) {
    for (const auto& t : ins)
        if (t.requires_grad()) return true;
    return false;
}

template <class S>
void accumulate(TensorNode<S>& parent, const std::vector<S>& g) {
    parent.ensure_grad();
    for (size_t i = 0; i < g.size(); ++i) parent.grad[i] += g[i];
}

inline void gemm(int m, int n, int k, const float* a, const float* b, float* c, bool acc) {
    cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, m, n, k, 1.0f, a, k, b, n,
                acc ? 1.0f : 0.0f, c, n);
}
inline void gemm(int m, int n, int k, const double* a, const double* b, double* c, bool acc) {
    cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, m, n, k, 1.0, a, k, b, n,
                acc ? 1.0 : 0.0, c, n);
}
inline void gemm_tn(int m, int n, int k, const float* a, const float* b, float* c, bool acc) {
    cblas_sgemm(CblasRowMajor, CblasTrans, CblasNoTrans, m, n, k, 1.0f, a, m, b, n,
                acc ? 1.0f : 0.0f, c, n);
}
inline void gemm_tn(int m, int n, int k, const double* a, const double* b, double* c, bool acc) {
    cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, m, n, k, 1.0, a, m, b, n,
                acc ? 1.0 : 0.0, c, n);
}
inline void gemm_nt(int m, int n, int k, const float* a, const float* b, float* c, bool acc) {
    cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasTrans, m, n, k, 1.0f, a, k, b, k,
                acc ? 1.0f : 0.0f, c, n);
}
inline void gemm_nt(int m, int n, int k, const double* a, const double* b, double* c, bool acc) {
    cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, m, n, k, 1.0, a, k, b, k,
                acc ? 1.0 : 0.0, c, n);
}

template <class S>
void im2col(const S* img, int C, int H, int W, int kh, int kw, int pad, int stride,
            int oh, int ow, S* cols) {
    // cols: [C*kh*kw, oh*ow]
    for (int c = 0; c < C; ++c) {
        for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx) {
                S* dst = cols + size_t((c * kh + ky) * kw + kx) * oh * ow;
                for (int y = 0; y < oh; ++y) {
                    int iy = y * stride - pad + ky;
                    if (iy < 0 || iy >= H) {
                        std::fill(dst + size_t(y) * ow, dst + size_t(y + 1) * ow, S(0));
                        continue;
                    }
                    const S* src = img + (size_t(c) * H + iy) * W;
                    for (int x = 0; x < ow; ++x) {
                        int ix = x * stride - pad + kx;
                        dst[size_t(y) * ow + x] = (ix >= 0 && ix < W) ? src[ix] : S(0);
                    }
                }
            }
        }
    }
}

template <class S>
void col2im_acc(const S* cols, int C, int H, int W, int kh, int kw, int pad, int stride,
                int oh, int ow, S* img) {
    for (int c = 0; c < C; ++c) {
        for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx) {
                const S* src = cols + size_t((c * kh + ky) * kw + kx) * oh * ow;
                for (int y = 0; y < oh; ++y) {
                    int iy = y * stride - pad + ky;
                    if (iy < 0 || iy >= H) continue;
                    S* dst = img + (size_t(c) * H + iy) * W;
                    for (int x = 0; x < ow; ++x) {
                        int ix = x * stride - pad + kx;
                        if (ix >= 0 && ix < W) dst[ix] += src[size_t(y) * ow + x];
                    }
                }
            }
        }
    }
}

}  // namespace detail

// ---- elementwise ops ----

template <class S, class F, class DF>
TensorT<S> pointwise(const TensorT<S>& x, F f, DF df) {
    auto out = TensorT<S>::zeros(x.shape());
    const auto& xv = x.data();
    auto& ov = out.data();
    for (size_t i = 0; i < xv.size(); ++i) ov[i] = f(xv[i]);
    if (x.requires_grad()) {
        out.set_requires_grad(true);
        auto xn = x.node();
        out.node()->parents = {xn};
        out.node()->backprop = [xn, df](TensorNode<S>& n) {
            xn->ensure_grad();
            for (size_t i = 0; i < n.grad.size(); ++i)
                xn->grad[i] += n.grad[i] * df(xn->value[i]);
        };
    }
    return out;
}

template <class S>
TensorT<S> relu(const TensorT<S>& x) {
    return pointwise(x, [](S v) { return v > S(0) ? v : S(0); },
                     [](S v) { return v > S(0) ? S(1) : S(0); });
}

template <class S>
TensorT<S> leaky_relu(const TensorT<S>& x, S slope = S(0.1)) {
    return pointwise(x, [slope](S v) { return v > S(0) ? v : slope * v; },
                     [slope](S v) { return v > S(0) ? S(1) : slope; });
}

template <class S>
TensorT<S> sigmoid(const TensorT<S>& x) {
    return pointwise(x, [](S v) { return S(1) / (S(1) + std::exp(-v)); },
                     [](S v) {
                         S s = S(1) / (S(1) + std::exp(-v));
                         return s * (S(1) - s);
                     });
}

template <class S>
TensorT<S> tanh_t(const TensorT<S>& x) {
    return pointwise(x, [](S v) { return std::tanh(v); },
                     [](S v) {
                         S t = std::tanh(v);
                         return S(1) - t * t;
                     });
}

template <class S>
TensorT<S> abs_t(const TensorT<S>& x) {
    return pointwise(x, [](S v) { return std::abs(v); },
                     [](S v) { return v > S(0) ? S(1) : (v < S(0) ? S(-1) : S(0)); });
}

template <class S>
TensorT<S> scale(const TensorT<S>& x, S a) {
    return pointwise(x, [a](S v) { return a * v; }, [a](S) { return a; });
}

// mu-law tonemap T(h) = log(1 + mu*h) / log(1 + mu), input clamped to [0, 1].
template <class S>
TensorT<S> mu_law_t(const TensorT<S>& x, S mu = S(5000)) {
    const S inv_log = S(1) / std::log1p(mu);
    return pointwise(
        x,
        [mu, inv_log](S v) {
            S c = std::min(std::max(v, S(0)), S(1));
            return std::log1p(mu * c) * inv_log;
        },
        [mu, inv_log](S v) {
            if (v < S(0) || v > S(1)) return S(0);
            return mu / (S(1) + mu * v) * inv_log;
        });
}

template <class S>
void check_same_shape(const TensorT<S>& a, const TensorT<S>& b, const char* op) {
    if (a.shape() != b.shape())
        throw TensorError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                          " vs " + shape_str(b.shape()));
}

template <class S, class F>
TensorT<S> binary_op(const TensorT<S>& a, const TensorT<S>& b, const char* name, F f,
                     std::function<void(TensorNode<S>&, TensorNode<S>&, TensorNode<S>&)> bp) {
    check_same_shape(a, b, name);
    auto out = TensorT<S>::zeros(a.shape());
    const auto& av = a.data();
    const auto& bv = b.data();
    auto& ov = out.data();
    for (size_t i = 0; i < av.size(); ++i) ov[i] = f(av[i], bv[i]);
    if (detail::track<S>({a, b})) {
        out.set_requires_grad(true);
        auto an = a.node();
        auto bn = b.node();
        out.node()->parents = {an, bn};
        out.node()->backprop = [an, bn, bp](TensorNode<S>& n) { bp(n, *an, *bn); };
    }
    return out;
}

template <class S>
TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b) {
    return binary_op<S>(a, b, "add", [](S x, S y) { return x + y; },
                        [](TensorNode<S>& n, TensorNode<S>& an, TensorNode<S>& bn) {
                            detail::accumulate(an, n.grad);
                            detail::accumulate(bn, n.grad);
                        });
}

template <class S>
TensorT<S> sub(const TensorT<S>& a, const TensorT<S>& b) {
    return binary_op<S>(a, b, "sub", [](S x, S y) { return x - y; },
                        [](TensorNode<S>& n, TensorNode<S>& an, TensorNode<S>& bn) {
                            detail::accumulate(an, n.grad);
                            bn.ensure_grad();
                            for (size_t i = 0; i < n.grad.size(); ++i) bn.grad[i] -= n.grad[i];
                        });
}

template <class S>
TensorT<S> mul(const TensorT<S>& a, const TensorT<S>& b) {
    return binary_op<S>(a, b, "mul", [](S x, S y) { return x * y; },
                        [](TensorNode<S>& n, TensorNode<S>& an, TensorNode<S>& bn) {
                            an.ensure_grad();
                            bn.ensure_grad();
                            for (size_t i = 0; i < n.grad.size(); ++i) {
                                an.grad[i] += n.grad[i] * bn.value[i];
                                bn.grad[i] += n.grad[i] * an.value[i];
                            }
                        });
}

template <class S>
TensorT<S> div_t(const TensorT<S>& a, const TensorT<S>& b) {
    return binary_op<S>(a, b, "div", [](S x, S y) { return x / y; },
                        [](TensorNode<S>& n, TensorNode<S>& an, TensorNode<S>& bn) {
                            an.ensure_grad();
                            bn.ensure_grad();
                            for (size_t i = 0; i < n.grad.size(); ++i) {
                                S inv = S(1) / bn.value[i];
                                an.grad[i] += n.grad[i] * inv;
                                bn.grad[i] -= n.grad[i] * an.value[i] * inv * inv;
                            }
                        });
}

template <class S>
TensorT<S> add_scalar(const TensorT<S>& x, S c) {
    return pointwise(x, [c](S v) { return v + c; }, [](S) { return S(1); });
}

// ---- reductions ----

template <class S>
TensorT<S> sum(const TensorT<S>& x) {
    auto out = TensorT<S>::zeros({1});
    S acc = S(0);
    for (S v : x.data()) acc += v;
    out.data()[0] = acc;
    if (x.requires_grad()) {
        out.set_requires_grad(true);
        auto xn = x.node();
        out.node()->parents = {xn};
        out.node()->backprop = [xn](TensorNode<S>& n) {
            xn->ensure_grad();
            for (auto& g : xn->grad) g += n.grad[0];
        };
    }
    return out;
}

template <class S>
TensorT<S> mean(const TensorT<S>& x) {
    return scale(sum(x), S(1) / S(x.numel()));
}

// ---- shape ops ----

template <class S>
TensorT<S> concat_channels(const std::vector<TensorT<S>>& xs) {
    if (xs.empty()) throw TensorError("concat_channels: empty input list");
    const auto& s0 = xs[0].shape();
    int c_total = 0;
    for (const auto& x : xs) {
        const auto& s = x.shape();
        if (s.size() != 4 || s[0] != s0[0] || s[2] != s0[2] || s[3] != s0[3])
            throw TensorError("concat_channels: incompatible shapes " + shape_str(s0) + " vs " +
                              shape_str(s));
        c_total += s[1];
    }
    auto out = TensorT<S>::zeros({s0[0], c_total, s0[2], s0[3]});
    const size_t plane = size_t(s0[2]) * s0[3];
    bool any_grad = false;
    for (int n = 0; n < s0[0]; ++n) {
        size_t c_off = 0;
        for (const auto& x : xs) {
            const int cx = x.shape()[1];
            std::copy(x.data().begin() + size_t(n) * cx * plane,
                      x.data().begin() + size_t(n + 1) * cx * plane,
                      out.data().begin() + (size_t(n) * c_total + c_off) * plane);
            c_off += size_t(cx);
            any_grad |= x.requires_grad();
        }
    }
    if (any_grad) {
        out.set_requires_grad(true);
        std::vector<std::shared_ptr<TensorNode<S>>> parents;
        for (const auto& x : xs) parents.push_back(x.node());
        out.node()->parents = parents;
        const int N = s0[0];
        out.node()->backprop = [parents, N, c_total, plane](TensorNode<S>& n) {
            for (int b = 0; b < N; ++b) {
                size_t c_off = 0;
                for (auto& p : parents) {
                    const size_t cx = size_t(p->shape[1]);
                    p->ensure_grad();
                    for (size_t i = 0; i < cx * plane; ++i)
                        p->grad[size_t(b) * cx * plane + i] +=
                            n.grad[(size_t(b) * c_total + c_off) * plane + i];
                    c_off += cx;
                }
            }
        };
    }
    return out;
}

template <class S>
TensorT<S> slice_channels(const TensorT<S>& x, int c0, int c1) {
    const auto& s = x.shape();
    if (s.size() != 4 || c0 < 0 || c1 > s[1] || c0 >= c1)
        throw TensorError("slice_channels: bad range [" + std::to_string(c0) + "," +
                          std::to_string(c1) + ") for shape " + shape_str(s));
    const int cs = c1 - c0;
    auto out = TensorT<S>::zeros({s[0], cs, s[2], s[3]});
    const size_t plane = size_t(s[2]) * s[3];
    for (int n = 0; n < s[0]; ++n)
        std::copy(x.data().begin() + (size_t(n) * s[1] + c0) * plane,
                  x.data().begin() + (size_t(n) * s[1] + c1) * plane,
                  out.data().begin() + size_t(n) * cs * plane);
    if (x.requires_grad()) {
        out.set_requires_grad(true);
        auto xn = x.node();
        const int N = s[0], C = s[1];
        out.node()->parents = {xn};
        out.node()->backprop = [xn, N, C, c0, cs, plane](TensorNode<S>& n) {
            xn->ensure_grad();
            for (int b = 0; b < N; ++b)
                for (size_t i = 0; i < size_t(cs) * plane; ++i)
                    xn->grad[(size_t(b) * C + c0) * plane + i] +=
                        n.grad[size_t(b) * cs * plane + i];
        };
    }
    return out;
}

template <class S>
TensorT<S> crop_spatial(const TensorT<S>& x, int top, int left, int h, int w) {
    const auto& s = x.shape();
    if (top < 0 || left < 0 || top + h > s[2] || left + w > s[3])
        throw TensorError("crop_spatial: region out of bounds for shape " + shape_str(s));
    auto out = TensorT<S>::zeros({s[0], s[1], h, w});
    for (int n = 0; n < s[0]; ++n)
        for (int c = 0; c < s[1]; ++c)
            for (int y = 0; y < h; ++y) {
                const S* src = x.data().data() + ((size_t(n) * s[1] + c) * s[2] + top + y) * s[3] + left;
                std::copy(src, src + w, out.data().data() + ((size_t(n) * s[1] + c) * h + y) * w);
            }
    if (x.requires_grad()) {
        out.set_requires_grad(true);
        auto xn = x.node();
        auto sh = s;
        out.node()->parents = {xn};
        out.node()->backprop = [xn, sh, top, left, h, w](TensorNode<S>& n) {
            xn->ensure_grad();
            for (int b = 0; b < sh[0]; ++b)
                for (int c = 0; c < sh[1]; ++c)
                    for (int y = 0; y < h; ++y)
                        for (int xx = 0; xx < w; ++xx)
                            xn->grad[((size_t(b) * sh[1] + c) * sh[2] + top + y) * sh[3] + left + xx] +=
                                n.grad[((size_t(b) * sh[1] + c) * h + y) * w + xx];
        };
    }
    return out;
}

// Reflection padding (no edge duplication) on both spatial axes.
template <class S>
TensorT<S> reflect_pad(const TensorT<S>& x, int pad_h, int pad_w) {
    const auto& s = x.shape();
    if (pad_h >= s[2] || pad_w >= s[3])
        throw TensorError("reflect_pad: padding too large for shape " + shape_str(s));
    const int H = s[2] + 2 * pad_h, W = s[3] + 2 * pad_w;
    auto reflect = [](int i, int n) {
        if (i < 0) i = -i;
        if (i >= n) i = 2 * n - 2 - i;
        return i;
    };
    auto out = TensorT<S>::zeros({s[0], s[1], H, W});
    for (int n = 0; n < s[0]; ++n)
        for (int c = 0; c < s[1]; ++c)
            for (int y = 0; y < H; ++y) {
                int sy = reflect(y - pad_h, s[2]);
                for (int xx = 0; xx < W; ++xx) {
                    int sx = reflect(xx - pad_w, s[3]);
                    out.data()[((size_t(n) * s[1] + c) * H + y) * W + xx] =
                        x.data()[((size_t(n) * s[1] + c) * s[2] + sy) * s[3] + sx];
                }
            }
    if (x.requires_grad()) {
        out.set_requires_grad(true);
        auto xn = x.node();
        auto sh = s;
        out.node()->parents = {xn};
        out.node()->backprop = [xn, sh, pad_h, pad_w, H, W, reflect](TensorNode<S>& n) {
            xn->ensure_grad();
            for (int b = 0; b < sh[0]; ++b)
                for (int c = 0; c < sh[1]; ++c)
                    for (int y = 0; y < H; ++y) {
                        int sy = reflect(y - pad_h, sh[2]);
                        for (int xx = 0; xx < W; ++xx) {
                            int sx = reflect(xx - pad_w, sh[3]);
                            xn->grad[((size_t(b) * sh[1] + c) * sh[2] + sy) * sh[3] + sx] +=
                                n.grad[((size_t(b) * sh[1] + c) * H + y) * W + xx];
                        }
                    }
        };
    }
    return out;
}

// ---- bilinear sampling ----

// Zero-padded bilinear read at fractional (x, y); samples fully outside
// contribute 0, partial neighbors use zero fill.
template <class S>
S bilinear_sample(const TensorT<S>& t, double x, double y, int channel, int batch) {
    const auto& s = t.shape();
    const int H = s[2], W = s[3];
    const int x0 = int(std::floor(x)), y0 = int(std::floor(y));
    const double fx = x - x0, fy = y - y0;
    auto read = [&](int yy, int xx) -> S {
        if (yy < 0 || yy >= H || xx < 0 || xx >= W) return S(0);
        return t.data()[((size_t(batch) * s[1] + channel) * H + yy) * W + xx];
    };
    return S((1 - fy) * ((1 - fx) * read(y0, x0) + fx * read(y0, x0 + 1)) +
             fy * ((1 - fx) * read(y0 + 1, x0) + fx * read(y0 + 1, x0 + 1)));
}

// Differentiable 2x bilinear upsample (half-pixel centers, clamped borders).
template <class S>
TensorT<S> upsample2x(const TensorT<S>& x) {
    const auto& s = x.shape();
    const int H = s[2], W = s[3], OH = 2 * H, OW = 2 * W;
    auto out = TensorT<S>::zeros({s[0], s[1], OH, OW});
    // precompute source coords/weights per output position
    std::vector<int> y0(OH), x0(OW);
    std::vector<S> wy(OH), wx(OW);
    auto setup = [](int n, int o, std::vector<int>& i0, std::vector<S>& f) {
        for (int i = 0; i < o; ++i) {
            double src = (i + 0.5) / 2.0 - 0.5;
            double c = std::clamp(src, 0.0, double(n - 1));
            i0[i] = std::min(int(std::floor(c)), n - 2 < 0 ? 0 : n - 2);
            f[i] = S(c - i0[i]);
        }
    };
    setup(H, OH, y0, wy);
    setup(W, OW, x0, wx);
    for (int n = 0; n < s[0]; ++n)
        for (int c = 0; c < s[1]; ++c) {
            const S* src = x.data().data() + (size_t(n) * s[1] + c) * H * W;
            S* dst = out.data().data() + (size_t(n) * s[1] + c) * OH * OW;
            for (int y = 0; y < OH; ++y) {
                int yy = y0[y];
                S fy = wy[y];
                int y1 = std::min(yy + 1, H - 1);
                for (int xx = 0; xx < OW; ++xx) {
                    int xi = x0[xx];
                    S fx = wx[xx];
                    int x1 = std::min(xi + 1, W - 1);
                    dst[size_t(y) * OW + xx] =
                        (S(1) - fy) * ((S(1) - fx) * src[size_t(yy) * W + xi] + fx * src[size_t(yy) * W + x1]) +
                        fy * ((S(1) - fx) * src[size_t(y1) * W + xi] + fx * src[size_t(y1) * W + x1]);
                }
            }
        }
    if (x.requires_grad()) {
        out.set_requires_grad(true);
        auto xn = x.node();
        auto sh = s;
        out.node()->parents = {xn};
        out.node()->backprop = [xn, sh, y0, x0, wy, wx, OH, OW](TensorNode<S>& n) {
            xn->ensure_grad();
            const int H = sh[2], W = sh[3];
            for (int b = 0; b < sh[0]; ++b)
                for (int c = 0; c < sh[1]; ++c) {
                    S* gsrc = xn->grad.data() + (size_t(b) * sh[1] + c) * H * W;
                    const S* gdst = n.grad.data() + (size_t(b) * sh[1] + c) * OH * OW;
                    for (int y = 0; y < OH; ++y) {
                        int yy = y0[size_t(y)];
                        S fy = wy[size_t(y)];
                        int y1 = std::min(yy + 1, H - 1);
                        for (int xx = 0; xx < OW; ++xx) {
                            int xi = x0[size_t(xx)];
                            S fx = wx[size_t(xx)];
                            int x1 = std::min(xi + 1, W - 1);
                            S g = gdst[size_t(y) * OW + xx];
                            gsrc[size_t(yy) * W + xi] += (S(1) - fy) * (S(1) - fx) * g;
                            gsrc[size_t(yy) * W + x1] += (S(1) - fy) * fx * g;
                            gsrc[size_t(y1) * W + xi] += fy * (S(1) - fx) * g;
                            gsrc[size_t(y1) * W + x1] += fy * fx * g;
                        }
                    }
                }
        };
    }
    return out;
}

// ---- convolution ----

template <class S>
struct ConvParamsT {
    TensorT<S> weight;  // OC x IC x kH x kW
    TensorT<S> bias;    // OC
    int stride = 1;
    int padding = 0;

    int out_channels() const { return weight.dim(0); }
    int in_channels() const { return weight.dim(1); }
};

using ConvParams = ConvParamsT<float>;

// Fan-in scaled uniform init; biases zero.
template <class S>
ConvParamsT<S> make_conv(int out_ch, int in_ch, int k, int stride, int pad, std::mt19937& rng,
                         bool zero_init = false) {
    ConvParamsT<S> p;
    if (zero_init) {
        p.weight = TensorT<S>::zeros({out_ch, in_ch, k, k}, true);
    } else {
        const S bound = S(1.0 / std::sqrt(double(in_ch) * k * k));
        p.weight = TensorT<S>::uniform({out_ch, in_ch, k, k}, -bound, bound, rng, true);
    }
    p.bias = TensorT<S>::zeros({out_ch}, true);
    p.stride = stride;
    p.padding = pad;
    return p;
}

template <class S>
TensorT<S> conv2d(const TensorT<S>& input, const ConvParamsT<S>& params) {
    const auto& is = input.shape();
    const auto& ws = params.weight.shape();
    if (is.size() != 4 || ws.size() != 4 || is[1] != ws[1])
        throw TensorError("conv2d: shape mismatch input " + shape_str(is) + " weight " +
                          shape_str(ws));
    const int N = is[0], C = is[1], H = is[2], W = is[3];
    const int OC = ws[0], KH = ws[2], KW = ws[3];
    const int stride = params.stride, pad = params.padding;
    const int OH = (H + 2 * pad - KH) / stride + 1;
    const int OW = (W + 2 * pad - KW) / stride + 1;
    if (OH <= 0 || OW <= 0)
        throw TensorError("conv2d: kernel " + shape_str(ws) + " larger than padded input " +
                          shape_str(is));

    auto out = TensorT<S>::zeros({N, OC, OH, OW});
    const int K = C * KH * KW;
    std::vector<S> cols(size_t(K) * OH * OW);
    for (int n = 0; n < N; ++n) {
        detail::im2col(input.data().data() + size_t(n) * C * H * W, C, H, W, KH, KW, pad,
                       stride, OH, OW, cols.data());
        S* o = out.data().data() + size_t(n) * OC * OH * OW;
        detail::gemm(OC, OH * OW, K, params.weight.data().data(), cols.data(), o, false);
        for (int c = 0; c < OC; ++c) {
            const S b = params.bias.data()[size_t(c)];
            if (b != S(0))
                for (int i = 0; i < OH * OW; ++i) o[size_t(c) * OH * OW + i] += b;
        }
    }

    if (detail::track<S>({input, params.weight, params.bias})) {
        out.set_requires_grad(true);
        auto xn = input.node();
        auto wn = params.weight.node();
        auto bn = params.bias.node();
        out.node()->parents = {xn, wn, bn};
        out.node()->backprop = [xn, wn, bn, N, C, H, W, OC, KH, KW, stride, pad, OH,
                                OW](TensorNode<S>& node) {
            const int K = C * KH * KW;
            std::vector<S> cols(size_t(K) * OH * OW);
            std::vector<S> gcols(size_t(K) * OH * OW);
            const bool need_x = xn->requires_grad || xn->backprop;
            const bool need_w = wn->requires_grad || wn->backprop;
            if (need_x) xn->ensure_grad();
            if (need_w) wn->ensure_grad();
            bn->ensure_grad();
            for (int n = 0; n < N; ++n) {
                const S* go = node.grad.data() + size_t(n) * OC * OH * OW;
                for (int c = 0; c < OC; ++c)
                    for (int i = 0; i < OH * OW; ++i)
                        bn->grad[size_t(c)] += go[size_t(c) * OH * OW + i];
                if (need_w) {
                    detail::im2col(xn->value.data() + size_t(n) * C * H * W, C, H, W, KH, KW,
                                   pad, stride, OH, OW, cols.data());
                    // gW[OC,K] += go[OC,OHW] * cols[K,OHW]^T
                    detail::gemm_nt(OC, K, OH * OW, go, cols.data(), wn->grad.data(), true);
                }
                if (need_x) {
                    // gcols[K,OHW] = W[OC,K]^T * go[OC,OHW]
                    detail::gemm_tn(K, OH * OW, OC, wn->value.data(), go, gcols.data(), false);
                    detail::col2im_acc(gcols.data(), C, H, W, KH, KW, pad, stride, OH, OW,
                                       xn->grad.data() + size_t(n) * C * H * W);
                }
            }
        };
    }
    return out;
}

}  // namespace ehdr
