#pragma once

// The EHDR network: pyramid image/event encoders, event-guided deformable
// feature alignment with ConvLSTM chunk integration, pairwise + spatial
// attention fusion and residual reconstruction.

#include <array>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "ehdr/deform.hpp"
#include "ehdr/event.hpp"
#include "ehdr/hdr_math.hpp"
#include "ehdr/image.hpp"
#include "ehdr/tensor.hpp"

namespace ehdr {

struct EhdrConfig {
    int base_channels = 8;  // 64 matches the full-scale architecture
    int voxel_bins = kVoxelBins;
    int deform_kernel = 3;  // K = 9 taps
    float leaky_slope = 0.1f;
    float attention_eps = 1e-6f;

    int taps() const { return deform_kernel * deform_kernel; }
};

template <class S>
struct PyramidT {
    TensorT<S> l1, l2, l3;  // full, half, quarter resolution
    const TensorT<S>& level(int l) const { return l == 1 ? l1 : (l == 2 ? l2 : l3); }
};

template <class S>
using ParamVisitor = std::function<void(const std::string&, TensorT<S>&)>;

template <class S>
void visit_conv(const std::string& prefix, ConvParamsT<S>& p, const ParamVisitor<S>& fn) {
    fn(prefix + ".weight", p.weight);
    fn(prefix + ".bias", p.bias);
}

// (Conv2d, ReLU, Conv2d) with a residual connection.
template <class S>
struct ResBlockT {
    ConvParamsT<S> conv1, conv2;

    void init(int ch, std::mt19937& rng) {
        conv1 = make_conv<S>(ch, ch, 3, 1, 1, rng);
        conv2 = make_conv<S>(ch, ch, 3, 1, 1, rng);
    }
    TensorT<S> forward(const TensorT<S>& x) const {
        return add(x, conv2d(relu(conv2d(x, conv1)), conv2));
    }
    void visit(const std::string& prefix, const ParamVisitor<S>& fn) {
        visit_conv(prefix + ".conv1", conv1, fn);
        visit_conv(prefix + ".conv2", conv2, fn);
    }
};

// (Conv2d s2, LeakyReLU, Conv2d, LeakyReLU) downsampling block.
template <class S>
struct DownBlockT {
    ConvParamsT<S> conv1, conv2;
    S slope;

    void init(int ch, S leaky, std::mt19937& rng) {
        slope = leaky;
        conv1 = make_conv<S>(ch, ch, 3, 2, 1, rng);
        conv2 = make_conv<S>(ch, ch, 3, 1, 1, rng);
    }
    TensorT<S> forward(const TensorT<S>& x) const {
        return leaky_relu(conv2d(leaky_relu(conv2d(x, conv1), slope), conv2), slope);
    }
    void visit(const std::string& prefix, const ParamVisitor<S>& fn) {
        visit_conv(prefix + ".conv1", conv1, fn);
        visit_conv(prefix + ".conv2", conv2, fn);
    }
};

// Head conv, 5 residual blocks, 2 downsampling blocks -> 3-scale pyramid.
template <class S>
struct EncoderT {
    ConvParamsT<S> head;
    std::vector<ResBlockT<S>> blocks;
    DownBlockT<S> down1, down2;

    void init(int in_ch, int ch, S slope, std::mt19937& rng) {
        head = make_conv<S>(ch, in_ch, 3, 1, 1, rng);
        blocks.resize(5);
        for (auto& b : blocks) b.init(ch, rng);
        down1.init(ch, slope, rng);
        down2.init(ch, slope, rng);
    }
    PyramidT<S> forward(const TensorT<S>& x) const {
        TensorT<S> f = conv2d(x, head);
        for (const auto& b : blocks) f = b.forward(f);
        PyramidT<S> py;
        py.l1 = f;
        py.l2 = down1.forward(py.l1);
        py.l3 = down2.forward(py.l2);
        return py;
    }
    void visit(const std::string& prefix, const ParamVisitor<S>& fn) {
        visit_conv(prefix + ".head.0", head, fn);
        for (size_t i = 0; i < blocks.size(); ++i)
            blocks[i].visit(prefix + ".res." + std::to_string(i), fn);
        down1.visit(prefix + ".down.0", fn);
        down2.visit(prefix + ".down.1", fn);
    }
};

template <class S>
struct ConvLstmStateT {
    TensorT<S> hidden, cell;
};

// Single conv over [input, hidden] produces the i, f, o, g gates.
template <class S>
struct ConvLstmCellT {
    ConvParamsT<S> gates;
    int channels = 0;

    void init(int ch, std::mt19937& rng) {
        channels = ch;
        gates = make_conv<S>(4 * ch, 2 * ch, 3, 1, 1, rng);
    }
    ConvLstmStateT<S> step(const TensorT<S>& x, const ConvLstmStateT<S>& state) const {
        auto z = conv2d(concat_channels<S>({x, state.hidden}), gates);
        auto i = sigmoid(slice_channels(z, 0, channels));
        auto f = sigmoid(slice_channels(z, channels, 2 * channels));
        auto o = sigmoid(slice_channels(z, 2 * channels, 3 * channels));
        auto g = tanh_t(slice_channels(z, 3 * channels, 4 * channels));
        ConvLstmStateT<S> next;
        next.cell = add(mul(f, state.cell), mul(i, g));
        next.hidden = mul(o, tanh_t(next.cell));
        return next;
    }
    // Runs the recurrence over per-chunk features, returns the final hidden state.
    TensorT<S> integrate(const std::vector<TensorT<S>>& chunks) const {
        if (chunks.empty()) throw TensorError("ConvLSTM integrate: empty chunk list");
        ConvLstmStateT<S> state;
        state.hidden = TensorT<S>::zeros(chunks[0].shape());
        state.cell = TensorT<S>::zeros(chunks[0].shape());
        for (const auto& c : chunks) state = step(c, state);
        return state.hidden;
    }
    void visit(const std::string& prefix, const ParamVisitor<S>& fn) {
        visit_conv(prefix + ".gates", gates, fn);
    }
};

template <class S>
struct DeformFieldT {
    TensorT<S> offsets;  // 2K channels, (dx, dy) per tap
    TensorT<S> masks;    // K channels, sigmoid-bounded
};

// (3 x (Conv2d, LeakyReLU), Conv2d) block emitting 3K channels: 2K residual
// offsets and K pre-sigmoid masks. The emitting conv is zero-initialized so
// training starts from the identity alignment.
template <class S>
struct DeformPredictorT {
    ConvParamsT<S> conv1, conv2, conv3, emit;
    S slope;
    int taps = 9;
    bool takes_coarser = false;

    void init(int ch, int k_taps, bool with_coarser, S leaky, std::mt19937& rng) {
        slope = leaky;
        taps = k_taps;
        takes_coarser = with_coarser;
        const int in_ch = 3 * ch + (with_coarser ? 2 * k_taps : 0);
        conv1 = make_conv<S>(ch, in_ch, 3, 1, 1, rng);
        conv2 = make_conv<S>(ch, ch, 3, 1, 1, rng);
        conv3 = make_conv<S>(ch, ch, 3, 1, 1, rng);
        emit = make_conv<S>(3 * k_taps, ch, 3, 1, 1, rng, /*zero_init=*/true);
    }
    // coarser offsets arrive already upsampled and scaled to this level.
    DeformFieldT<S> predict(const TensorT<S>& f_ref, const TensorT<S>& f_nonref,
                            const TensorT<S>& f_events,
                            const std::optional<TensorT<S>>& coarser_offsets) const {
        std::vector<TensorT<S>> ins = {f_ref, f_nonref, f_events};
        if (takes_coarser) {
            if (!coarser_offsets)
                throw TensorError("DeformPredictor: missing coarser offsets");
            ins.push_back(*coarser_offsets);
        }
        auto t = leaky_relu(conv2d(concat_channels(ins), conv1), slope);
        t = leaky_relu(conv2d(t, conv2), slope);
        t = leaky_relu(conv2d(t, conv3), slope);
        auto out = conv2d(t, emit);
        DeformFieldT<S> field;
        auto residual = slice_channels(out, 0, 2 * taps);
        field.offsets = coarser_offsets ? add(residual, *coarser_offsets) : residual;
        field.masks = sigmoid(slice_channels(out, 2 * taps, 3 * taps));
        return field;
    }
    void visit(const std::string& prefix, const ParamVisitor<S>& fn) {
        visit_conv(prefix + ".conv1", conv1, fn);
        visit_conv(prefix + ".conv2", conv2, fn);
        visit_conv(prefix + ".conv3", conv3, fn);
        visit_conv(prefix + ".emit", emit, fn);
    }
};

// Coarse-to-fine offset prediction (L3 -> L1) with residual composition;
// the final field drives one modulated deformable convolution at L1.
// Shared between the two temporal directions.
template <class S>
struct AlignModuleT {
    DeformPredictorT<S> pred_l3, pred_l2, pred_l1;
    ConvLstmCellT<S> lstm_l3, lstm_l2, lstm_l1;
    ConvParamsT<S> deform;  // applied at L1

    void init(const EhdrConfig& cfg, std::mt19937& rng) {
        const int ch = cfg.base_channels;
        const S slope = S(cfg.leaky_slope);
        pred_l3.init(ch, cfg.taps(), false, slope, rng);
        pred_l2.init(ch, cfg.taps(), true, slope, rng);
        pred_l1.init(ch, cfg.taps(), true, slope, rng);
        lstm_l3.init(ch, rng);
        lstm_l2.init(ch, rng);
        lstm_l1.init(ch, rng);
        deform = make_conv<S>(ch, ch, cfg.deform_kernel, 1, cfg.deform_kernel / 2, rng);
    }

    // event_chunks: per-chunk encoder pyramids in temporal order.
    TensorT<S> forward(const PyramidT<S>& nonref, const PyramidT<S>& ref,
                       const std::vector<PyramidT<S>>& event_chunks,
                       bool propagate_offsets = true) const {
        auto integrate = [&](const ConvLstmCellT<S>& cell, int level) {
            std::vector<TensorT<S>> feats;
            feats.reserve(event_chunks.size());
            for (const auto& py : event_chunks) feats.push_back(py.level(level));
            return cell.integrate(feats);
        };
        auto ev3 = integrate(lstm_l3, 3);
        auto ev2 = integrate(lstm_l2, 2);
        auto ev1 = integrate(lstm_l1, 1);

        auto f3 = pred_l3.predict(ref.l3, nonref.l3, ev3, std::nullopt);
        // offsets double when the grid resolution doubles
        auto up3 = propagate_offsets
                       ? std::optional<TensorT<S>>(scale(upsample2x(f3.offsets), S(2)))
                       : std::optional<TensorT<S>>(
                             TensorT<S>::zeros({f3.offsets.dim(0), f3.offsets.dim(1),
                                                2 * f3.offsets.dim(2), 2 * f3.offsets.dim(3)}));
        auto f2 = pred_l2.predict(ref.l2, nonref.l2, ev2, up3);
        auto up2 = propagate_offsets
                       ? std::optional<TensorT<S>>(scale(upsample2x(f2.offsets), S(2)))
                       : std::optional<TensorT<S>>(
                             TensorT<S>::zeros({f2.offsets.dim(0), f2.offsets.dim(1),
                                                2 * f2.offsets.dim(2), 2 * f2.offsets.dim(3)}));
        auto f1 = pred_l1.predict(ref.l1, nonref.l1, ev1, up2);
        return deform_conv(nonref.l1, f1.offsets, f1.masks, deform);
    }

    void visit(const std::string& prefix, const ParamVisitor<S>& fn) {
        pred_l3.visit(prefix + ".pred.l3", fn);
        pred_l2.visit(prefix + ".pred.l2", fn);
        pred_l1.visit(prefix + ".pred.l1", fn);
        lstm_l3.visit(prefix + ".lstm.l3", fn);
        lstm_l2.visit(prefix + ".lstm.l2", fn);
        lstm_l1.visit(prefix + ".lstm.l1", fn);
        visit_conv(prefix + ".deform.l1", deform, fn);
    }
};

// Per-pixel, per-channel blending weights from a shared (Conv2d, LeakyReLU,
// Conv2d, Sigmoid) block applied pairwise against the reference features.
template <class S>
struct PairwiseAttentionT {
    ConvParamsT<S> conv1, conv2;
    S slope;
    S eps;

    void init(int ch, S leaky, S epsilon, std::mt19937& rng) {
        slope = leaky;
        eps = epsilon;
        conv1 = make_conv<S>(ch, 2 * ch, 3, 1, 1, rng);
        conv2 = make_conv<S>(ch, ch, 3, 1, 1, rng);
    }
    TensorT<S> weight_for(const TensorT<S>& f, const TensorT<S>& ref) const {
        return sigmoid(conv2d(leaky_relu(conv2d(concat_channels<S>({f, ref}), conv1), slope),
                              conv2));
    }
    TensorT<S> forward(const TensorT<S>& ref, const TensorT<S>& aligned_minus,
                       const TensorT<S>& aligned_plus) const {
        check_same_shape(ref, aligned_minus, "pairwise_attention");
        check_same_shape(ref, aligned_plus, "pairwise_attention");
        auto a0 = weight_for(ref, ref);
        auto am = weight_for(aligned_minus, ref);
        auto ap = weight_for(aligned_plus, ref);
        auto num = add(add(mul(a0, ref), mul(am, aligned_minus)), mul(ap, aligned_plus));
        auto den = add_scalar(add(add(a0, am), ap), eps);
        return div_t(num, den);
    }
    void visit(const std::string& prefix, const ParamVisitor<S>& fn) {
        visit_conv(prefix + ".conv1", conv1, fn);
        visit_conv(prefix + ".conv2", conv2, fn);
    }
};

// 3-level sigmoid mask pyramid: coarser pre-sigmoid maps are upsampled and
// added before the final sigmoid; the masked features pass through a
// residual conv.
template <class S>
struct SpatialAttentionT {
    ConvParamsT<S> down2, down3;       // stride-2 context convs
    ConvParamsT<S> mask1, mask2, mask3;
    ConvParamsT<S> residual;
    S slope;

    void init(int ch, S leaky, std::mt19937& rng) {
        slope = leaky;
        down2 = make_conv<S>(ch, ch, 3, 2, 1, rng);
        down3 = make_conv<S>(ch, ch, 3, 2, 1, rng);
        mask1 = make_conv<S>(ch, ch, 3, 1, 1, rng);
        mask2 = make_conv<S>(ch, ch, 3, 1, 1, rng);
        mask3 = make_conv<S>(ch, ch, 3, 1, 1, rng);
        residual = make_conv<S>(ch, ch, 3, 1, 1, rng);
    }
    TensorT<S> forward(const TensorT<S>& fused) const {
        auto d2 = leaky_relu(conv2d(fused, down2), slope);
        auto d3 = leaky_relu(conv2d(d2, down3), slope);
        auto pre3 = conv2d(d3, mask3);
        auto pre2 = add(conv2d(d2, mask2), upsample2x(pre3));
        auto pre1 = add(conv2d(fused, mask1), upsample2x(pre2));
        auto masked = mul(fused, sigmoid(pre1));
        return add(masked, conv2d(masked, residual));
    }
    void visit(const std::string& prefix, const ParamVisitor<S>& fn) {
        visit_conv(prefix + ".down.2", down2, fn);
        visit_conv(prefix + ".down.3", down3, fn);
        visit_conv(prefix + ".mask.1", mask1, fn);
        visit_conv(prefix + ".mask.2", mask2, fn);
        visit_conv(prefix + ".mask.3", mask3, fn);
        visit_conv(prefix + ".residual", residual, fn);
    }
};

// 10 residual blocks, reference-feature skip, 3-channel decode, terminal
// sigmoid to the normalized HDR range.
template <class S>
struct ReconstructionT {
    std::vector<ResBlockT<S>> blocks;
    ConvParamsT<S> out;

    void init(int ch, std::mt19937& rng) {
        blocks.resize(10);
        for (auto& b : blocks) b.init(ch, rng);
        out = make_conv<S>(3, ch, 3, 1, 1, rng);
    }
    TensorT<S> forward(const TensorT<S>& attended, const TensorT<S>& ref_l1) const {
        TensorT<S> f = attended;
        for (const auto& b : blocks) f = b.forward(f);
        f = add(f, ref_l1);
        return sigmoid(conv2d(f, out));
    }
    void visit(const std::string& prefix, const ParamVisitor<S>& fn) {
        for (size_t i = 0; i < blocks.size(); ++i)
            blocks[i].visit(prefix + ".res." + std::to_string(i), fn);
        visit_conv(prefix + ".out", out, fn);
    }
};

// Voxel grids for one forward pass: chunk lists for both temporal windows.
template <class S>
struct EventInputT {
    std::vector<TensorT<S>> toward_plus;   // reference -> long-exposure bracket
    std::vector<TensorT<S>> toward_minus;  // reference -> short, time-reversed
};

template <class S>
class EhdrModelT {
public:
    EhdrConfig config;
    EncoderT<S> image_encoder, event_encoder;
    AlignModuleT<S> align;
    PairwiseAttentionT<S> attn_pair;
    SpatialAttentionT<S> attn_spatial;
    ReconstructionT<S> recon;

    explicit EhdrModelT(const EhdrConfig& cfg = {}, uint32_t seed = 0) : config(cfg) {
        std::mt19937 rng(seed);
        const S slope = S(cfg.leaky_slope);
        image_encoder.init(6, cfg.base_channels, slope, rng);
        event_encoder.init(cfg.voxel_bins, cfg.base_channels, slope, rng);
        align.init(cfg, rng);
        attn_pair.init(cfg.base_channels, slope, S(cfg.attention_eps), rng);
        attn_spatial.init(cfg.base_channels, slope, rng);
        recon.init(cfg.base_channels, rng);
    }

    void visit_params(const ParamVisitor<S>& fn) {
        image_encoder.visit("image_encoder", fn);
        event_encoder.visit("event_encoder", fn);
        align.visit("align", fn);
        attn_pair.visit("attn_pair", fn);
        attn_spatial.visit("attn_spatial", fn);
        recon.visit("recon", fn);
    }

    std::vector<TensorT<S>> parameters() {
        std::vector<TensorT<S>> out;
        visit_params([&](const std::string&, TensorT<S>& t) { out.push_back(t); });
        return out;
    }

    // LDR bracket -> 6-channel NCHW tensor [I_j, I~_j], reflection-padded to a
    // multiple of 4.
    TensorT<S> image_input(const LdrImage& ldr) const {
        const HdrImage comp = exposure_compensate(ldr);
        const int H = ldr.height, W = ldr.width;
        auto t = TensorT<S>::zeros({1, 6, H, W});
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
                for (int c = 0; c < 3; ++c) {
                    t.at(0, c, y, x) = S(ldr.at(x, y, c));
                    t.at(0, 3 + c, y, x) = S(comp.at(x, y, c));
                }
        return pad_to_multiple(t);
    }

    TensorT<S> voxel_input(const VoxelGrid& grid) const {
        auto t = TensorT<S>::zeros({1, grid.bins, grid.height, grid.width});
        for (int b = 0; b < grid.bins; ++b)
            for (int y = 0; y < grid.height; ++y)
                for (int x = 0; x < grid.width; ++x) t.at(0, b, y, x) = S(grid.at(b, x, y));
        return pad_to_multiple(t);
    }

    // Full pipeline from pre-rasterized voxel grids. pad/crop bookkeeping is
    // internal; output matches the bracket resolution.
    TensorT<S> forward_tensor(const std::array<LdrImage, 3>& brackets,
                              const EventInputT<S>& events) const {
        const int H = brackets[0].height, W = brackets[0].width;
        auto enc_minus = image_encoder.forward(image_input(brackets[0]));
        auto enc_ref = image_encoder.forward(image_input(brackets[1]));
        auto enc_plus = image_encoder.forward(image_input(brackets[2]));

        auto encode_chunks = [&](const std::vector<TensorT<S>>& grids) {
            std::vector<PyramidT<S>> out;
            out.reserve(grids.size());
            for (const auto& g : grids) out.push_back(event_encoder.forward(g));
            return out;
        };
        auto ev_plus = encode_chunks(events.toward_plus);
        auto ev_minus = encode_chunks(events.toward_minus);

        auto aligned_plus = align.forward(enc_plus, enc_ref, ev_plus);
        auto aligned_minus = align.forward(enc_minus, enc_ref, ev_minus);

        auto fused = attn_pair.forward(enc_ref.l1, aligned_minus, aligned_plus);
        auto attended = attn_spatial.forward(fused);
        auto hdr = recon.forward(attended, enc_ref.l1);
        if (hdr.dim(2) != H || hdr.dim(3) != W) hdr = crop_spatial(hdr, 0, 0, H, W);
        return hdr;
    }

    // Missing events in a window degrade to a single zero voxel grid.
    EventInputT<S> event_input(const std::array<LdrImage, 3>& brackets,
                               const EventStream& stream, uint64_t tau_us = 0,
                               bool* warned_empty = nullptr) const {
        const uint64_t t_minus = brackets[0].timestamp_us;
        const uint64_t t_ref = brackets[1].timestamp_us;
        const uint64_t t_plus = brackets[2].timestamp_us;
        EventInputT<S> input;
        auto build = [&](uint64_t t0, uint64_t t1, ChunkDirection dir,
                         std::vector<TensorT<S>>& dst) {
            const uint64_t span = t0 < t1 ? t1 - t0 : t0 - t1;
            const uint64_t tau = tau_us ? tau_us : std::max<uint64_t>(1, span / 4);
            bool any = false;
            for (const auto& chunk : chunk_stream(stream, t0, t1, tau, dir)) {
                any |= !chunk.events.empty();
                dst.push_back(voxel_input(
                    voxelize(chunk, stream.width, stream.height, config.voxel_bins)));
            }
            if (!any && warned_empty) *warned_empty = true;
        };
        if (stream.events.empty()) {
            if (warned_empty) *warned_empty = true;
            VoxelGrid zero(config.voxel_bins, brackets[0].width, brackets[0].height);
            input.toward_plus.push_back(voxel_input(zero));
            input.toward_minus.push_back(voxel_input(zero));
            return input;
        }
        build(t_ref, t_plus, ChunkDirection::Forward, input.toward_plus);
        build(t_ref, t_minus, ChunkDirection::Backward, input.toward_minus);
        return input;
    }

    HdrImage forward(const std::array<LdrImage, 3>& brackets, const EventStream& stream,
                     uint64_t tau_us = 0) const {
        auto out = forward_tensor(brackets, event_input(brackets, stream, tau_us));
        HdrImage img(brackets[0].width, brackets[0].height);
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x)
                for (int c = 0; c < 3; ++c) img.at(x, y, c) = float(out.at(0, c, y, x));
        return img;
    }

private:
    TensorT<S> pad_to_multiple(const TensorT<S>& t, int multiple = 4) const {
        const int H = t.dim(2), W = t.dim(3);
        const int ph = (multiple - H % multiple) % multiple;
        const int pw = (multiple - W % multiple) % multiple;
        if (ph == 0 && pw == 0) return t;
        // asymmetric padding via reflect on both sides then crop to the front
        auto padded = reflect_pad(t, (ph + 1) / 2, (pw + 1) / 2);
        return crop_spatial(padded, 0, 0, H + ph, W + pw);
    }
};

using EhdrModel = EhdrModelT<float>;

}  // namespace ehdr
