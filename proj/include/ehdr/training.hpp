#pragma once

// mu-law L1 loss, Adam, augmentation and the desk-scale training harness.

#include <array>
#include <climits>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <filesystem>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "ehdr/event_sim.hpp"
#include "ehdr/io.hpp"
#include "ehdr/metrics.hpp"
#include "ehdr/model.hpp"

namespace ehdr {

struct TrainError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---- loss ----

template <class S>
TensorT<S> mu_l1_loss(const TensorT<S>& pred, const TensorT<S>& gt, S mu = S(kDefaultMu)) {
    check_same_shape(pred, gt, "mu_l1_loss");
    return mean(abs_t(sub(mu_law_t(pred, mu), mu_law_t(gt, mu))));
}

// ---- Adam ----

template <class S>
struct AdamStateT {
    std::vector<std::vector<S>> m, v;
    int64_t step = 0;
};

using AdamState = AdamStateT<float>;

template <class S>
void adam_step(std::vector<TensorT<S>>& params, AdamStateT<S>& state, S lr, S beta1 = S(0.9),
               S beta2 = S(0.999), S eps = S(1e-8)) {
    if (state.m.empty()) {
        state.m.resize(params.size());
        state.v.resize(params.size());
        for (size_t i = 0; i < params.size(); ++i) {
            state.m[i].assign(params[i].numel(), S(0));
            state.v[i].assign(params[i].numel(), S(0));
        }
    }
    state.step += 1;
    const S bc1 = S(1) - S(std::pow(double(beta1), double(state.step)));
    const S bc2 = S(1) - S(std::pow(double(beta2), double(state.step)));
    for (size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i];
        if (!p.has_grad()) continue;
        auto& m = state.m[i];
        auto& v = state.v[i];
        const auto& g = p.grad();
        auto& val = p.data();
        for (size_t j = 0; j < val.size(); ++j) {
            m[j] = beta1 * m[j] + (S(1) - beta1) * g[j];
            v[j] = beta2 * v[j] + (S(1) - beta2) * g[j] * g[j];
            const S mhat = m[j] / bc1;
            const S vhat = v[j] / bc2;
            val[j] -= lr * mhat / (S(std::sqrt(double(vhat))) + eps);
        }
    }
}

// ---- samples & augmentation ----

struct TrainSample {
    std::array<LdrImage, 3> brackets;  // time-ordered: short, reference, long
    std::vector<VoxelGrid> vox_plus;   // reference -> long window chunks
    std::vector<VoxelGrid> vox_minus;  // reference -> short, time-reversed
    HdrImage gt;                       // normalized linear radiance, [0,1]
};

struct AugmentParams {
    int crop_x = 0, crop_y = 0;
    int crop_w = 0, crop_h = 0;  // region in the source image
    int out_w = 0, out_h = 0;    // resize target (scale augmentation)
    int rot90 = 0;               // quarter turns, counter-clockwise
    bool flip_h = false, flip_v = false;
    std::array<int, 3> channel_perm = {0, 1, 2};

    static AugmentParams identity(int w, int h) {
        AugmentParams p;
        p.crop_w = p.out_w = w;
        p.crop_h = p.out_h = h;
        return p;
    }
    bool is_identity(int w, int h) const {
        return crop_x == 0 && crop_y == 0 && crop_w == w && crop_h == h && out_w == w &&
               out_h == h && rot90 == 0 && !flip_h && !flip_v &&
               channel_perm == std::array<int, 3>{0, 1, 2};
    }
};

inline AugmentParams random_augment_params(int w, int h, int crop, std::mt19937& rng) {
    if (crop > w || crop > h) throw TrainError("augment: crop larger than image");
    static constexpr std::array<float, 3> kScales = {1.0f, 0.75f, 0.5f};
    AugmentParams p;
    // crop-then-resize: a scale factor f crops crop/f pixels and resizes down
    std::uniform_int_distribution<int> pick3(0, 2);
    float f = kScales[size_t(pick3(rng))];
    int src = int(std::lround(crop / f));
    if (src > w || src > h) {
        f = 1.0f;
        src = crop;
    }
    p.crop_w = p.crop_h = src;
    p.out_w = p.out_h = crop;
    p.crop_x = std::uniform_int_distribution<int>(0, w - src)(rng);
    p.crop_y = std::uniform_int_distribution<int>(0, h - src)(rng);
    p.rot90 = std::uniform_int_distribution<int>(0, 3)(rng);
    p.flip_h = std::uniform_int_distribution<int>(0, 1)(rng) != 0;
    p.flip_v = std::uniform_int_distribution<int>(0, 1)(rng) != 0;
    static constexpr std::array<std::array<int, 3>, 6> kPerms = {
        {{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}}};
    p.channel_perm = kPerms[size_t(std::uniform_int_distribution<int>(0, 5)(rng))];
    return p;
}

namespace aug_detail {

// One geometric pipeline for every plane: crop, bilinear resize, rot90, flips.
template <class GetF>
std::vector<float> transform_plane(int /*src_w*/, int /*src_h*/, const AugmentParams& p,
                                   GetF get) {
    std::vector<float> cropped(size_t(p.out_w) * p.out_h);
    for (int y = 0; y < p.out_h; ++y)
        for (int x = 0; x < p.out_w; ++x) {
            float v;
            if (p.out_w == p.crop_w && p.out_h == p.crop_h) {
                v = get(p.crop_x + x, p.crop_y + y);
            } else {
                const double sx = (x + 0.5) * double(p.crop_w) / p.out_w - 0.5;
                const double sy = (y + 0.5) * double(p.crop_h) / p.out_h - 0.5;
                const int x0 = int(std::floor(sx)), y0 = int(std::floor(sy));
                const double fx = sx - x0, fy = sy - y0;
                auto rd = [&](int xx, int yy) {
                    xx = std::clamp(xx, 0, p.crop_w - 1);
                    yy = std::clamp(yy, 0, p.crop_h - 1);
                    return double(get(p.crop_x + xx, p.crop_y + yy));
                };
                v = float((1 - fy) * ((1 - fx) * rd(x0, y0) + fx * rd(x0 + 1, y0)) +
                          fy * ((1 - fx) * rd(x0, y0 + 1) + fx * rd(x0 + 1, y0 + 1)));
            }
            cropped[size_t(y) * p.out_w + x] = v;
        }

    int w = p.out_w, h = p.out_h;
    std::vector<float> cur = std::move(cropped);
    for (int r = 0; r < p.rot90 % 4; ++r) {
        // (x, y) -> (h-1-y, x): CCW quarter turn
        std::vector<float> next(size_t(w) * h);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                next[size_t(x) * h + (h - 1 - y)] = cur[size_t(y) * w + x];
        std::swap(w, h);
        cur = std::move(next);
    }
    if (p.flip_h) {
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w / 2; ++x)
                std::swap(cur[size_t(y) * w + x], cur[size_t(y) * w + (w - 1 - x)]);
    }
    if (p.flip_v) {
        for (int y = 0; y < h / 2; ++y)
            for (int x = 0; x < w; ++x)
                std::swap(cur[size_t(y) * w + x], cur[size_t(h - 1 - y) * w + x]);
    }
    return cur;
}

inline void out_dims(const AugmentParams& p, int& w, int& h) {
    w = p.out_w;
    h = p.out_h;
    if (p.rot90 % 2 == 1) std::swap(w, h);
}

}  // namespace aug_detail

inline LdrImage apply_augment(const LdrImage& img, const AugmentParams& p) {
    int w, h;
    aug_detail::out_dims(p, w, h);
    LdrImage out(w, h);
    out.exposure_time = img.exposure_time;
    out.fstop = img.fstop;
    out.timestamp_us = img.timestamp_us;
    for (int c = 0; c < 3; ++c) {
        const int src_c = p.channel_perm[size_t(c)];
        auto plane = aug_detail::transform_plane(
            img.width, img.height, p, [&](int x, int y) { return img.at(x, y, src_c); });
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) out.at(x, y, c) = plane[size_t(y) * w + x];
    }
    return out;
}

inline HdrImage apply_augment(const HdrImage& img, const AugmentParams& p) {
    int w, h;
    aug_detail::out_dims(p, w, h);
    HdrImage out(w, h);
    for (int c = 0; c < 3; ++c) {
        const int src_c = p.channel_perm[size_t(c)];
        auto plane = aug_detail::transform_plane(
            img.width, img.height, p, [&](int x, int y) { return img.at(x, y, src_c); });
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) out.at(x, y, c) = plane[size_t(y) * w + x];
    }
    return out;
}

inline VoxelGrid apply_augment(const VoxelGrid& grid, const AugmentParams& p) {
    int w, h;
    aug_detail::out_dims(p, w, h);
    VoxelGrid out(grid.bins, w, h);
    for (int b = 0; b < grid.bins; ++b) {
        auto plane = aug_detail::transform_plane(
            grid.width, grid.height, p, [&](int x, int y) { return grid.at(b, x, y); });
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) out.at(b, x, y) = plane[size_t(y) * w + x];
    }
    return out;
}

// Same geometric transform for every spatial plane; channel swap touches RGB
// data only, never the voxel bins.
inline TrainSample apply_augment(const TrainSample& sample, const AugmentParams& p) {
    TrainSample out;
    for (size_t i = 0; i < 3; ++i) out.brackets[i] = apply_augment(sample.brackets[i], p);
    for (const auto& v : sample.vox_plus) out.vox_plus.push_back(apply_augment(v, p));
    for (const auto& v : sample.vox_minus) out.vox_minus.push_back(apply_augment(v, p));
    out.gt = apply_augment(sample.gt, p);
    return out;
}

inline TrainSample augment(const TrainSample& sample, int crop, std::mt19937& rng) {
    return apply_augment(sample, random_augment_params(sample.gt.width, sample.gt.height,
                                                       crop, rng));
}

// ---- synthetic samples ----

struct SyntheticSampleOptions {
    int width = 64;
    int height = 64;
    SceneMotion motion;
    std::vector<int> fstops = {-3, 0, 3};
    NoiseModel noise;
    SimulatorConfig sim;
    uint64_t frame_interval_us = 1000;
    int chunks_per_window = 4;  // tau = inter-bracket interval / 4
};

// Renders a dynamic scene at the bracket timestamps (misaligned brackets),
// simulates events over the whole window, and rasterizes the two event
// windows into voxel-grid chunks. Ground truth is the exact reference-time
// render in the stack's normalized radiance units.
inline TrainSample make_synthetic_sample(uint32_t seed, const SyntheticSampleOptions& opt) {
    DynamicScene scene(seed, opt.width, opt.height, opt.motion, opt.frame_interval_us);
    const auto spec = BracketSpec::from_fstops(opt.fstops);
    const uint64_t spacing = opt.frame_interval_us * uint64_t(opt.sim.frame_skip + 1);
    const std::array<uint64_t, 3> bracket_ts = {0, spacing, 2 * spacing};

    std::vector<HdrFrame> frames;
    for (uint64_t t = 0; t <= 2 * spacing; t += opt.frame_interval_us)
        frames.push_back(scene.frame(t));
    EventStream stream = simulate_events(frames, opt.sim);

    const HdrImage ref_render = scene.render(bracket_ts[1]);
    const float e_ref = reference_exposure(ref_render);

    TrainSample sample;
    // fstops sorted ascending so brackets are time-ordered short, mid, long
    std::vector<int> fs = opt.fstops;
    std::sort(fs.begin(), fs.end());
    for (size_t i = 0; i < 3; ++i) {
        sample.brackets[i] = synthesize_bracket(scene.render(bracket_ts[i]), fs[i], spec,
                                                opt.noise, seed + uint32_t(i) * 7919, e_ref);
        sample.brackets[i].timestamp_us = bracket_ts[i];
    }

    const uint64_t tau = std::max<uint64_t>(1, spacing / uint64_t(opt.chunks_per_window));
    for (const auto& chunk :
         chunk_stream(stream, bracket_ts[1], bracket_ts[2], tau, ChunkDirection::Forward))
        sample.vox_plus.push_back(voxelize(chunk, opt.width, opt.height));
    for (const auto& chunk :
         chunk_stream(stream, bracket_ts[1], bracket_ts[0], tau, ChunkDirection::Backward))
        sample.vox_minus.push_back(voxelize(chunk, opt.width, opt.height));

    const float rad_scale = radiance_scale(spec, e_ref);
    sample.gt = HdrImage(opt.width, opt.height);
    for (size_t i = 0; i < sample.gt.pix.size(); ++i)
        sample.gt.pix[i] = std::clamp(ref_render.pix[i] * rad_scale, 0.0f, 1.0f);
    return sample;
}

// ---- training loop ----

struct TrainConfig {
    float lr = 1e-4f;
    int lr_halving_period = 15;  // epochs
    int batch_size = 2;
    int epochs = 1;
    int max_steps = 0;  // 0 = run all epochs
    int crop = 64;      // divisible by 4
    uint32_t seed = 0;
    bool augment = true;
    bool use_events = true;  // false: zeroed voxel grids (event ablation)
    float l1_weight = 1.0f;
};

struct TrainResult {
    std::vector<float> loss_curve;
    float initial_loss = 0.0f;
    float final_loss = 0.0f;
    int steps = 0;
};

template <class S>
TensorT<S> hdr_to_tensor(const HdrImage& img) {
    auto t = TensorT<S>::zeros({1, 3, img.height, img.width});
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) t.at(0, c, y, x) = S(img.at(x, y, c));
    return t;
}

template <class S>
HdrImage tensor_to_hdr(const TensorT<S>& t) {
    HdrImage img(t.dim(3), t.dim(2));
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) img.at(x, y, c) = float(t.at(0, c, y, x));
    return img;
}

template <class S>
EventInputT<S> sample_event_input(const EhdrModelT<S>& model, const TrainSample& sample,
                                  bool use_events) {
    EventInputT<S> input;
    auto push = [&](const std::vector<VoxelGrid>& grids, std::vector<TensorT<S>>& dst) {
        for (const auto& g : grids) {
            if (use_events) {
                dst.push_back(model.voxel_input(g));
            } else {
                VoxelGrid zero(g.bins, g.width, g.height);
                dst.push_back(model.voxel_input(zero));
            }
        }
    };
    push(sample.vox_plus, input.toward_plus);
    push(sample.vox_minus, input.toward_minus);
    return input;
}

template <class S>
Checkpoint model_checkpoint(EhdrModelT<S>& model) {
    Checkpoint ckpt;
    model.visit_params([&](const std::string& name, TensorT<S>& t) {
        std::vector<float> data(t.data().begin(), t.data().end());
        ckpt.tensors.emplace(name, Tensor::from_data(t.shape(), std::move(data)));
    });
    ckpt.config["base_channels"] = std::to_string(model.config.base_channels);
    ckpt.config["voxel_bins"] = std::to_string(model.config.voxel_bins);
    ckpt.config["deform_kernel"] = std::to_string(model.config.deform_kernel);
    return ckpt;
}

template <class S>
void load_model(EhdrModelT<S>& model, const Checkpoint& ckpt) {
    model.visit_params([&](const std::string& name, TensorT<S>& t) {
        auto it = ckpt.tensors.find(name);
        if (it == ckpt.tensors.end())
            throw TrainError("checkpoint is missing tensor " + name);
        if (it->second.shape() != t.shape())
            throw TrainError("checkpoint shape mismatch for " + name);
        std::copy(it->second.data().begin(), it->second.data().end(), t.data().begin());
    });
}

// Runs epochs with per-period lr halving; logs `step,epoch,lr,loss` CSV when
// log_path is non-empty. Aborts on NaN loss with a diagnostic dump.
template <class S>
TrainResult train(const std::vector<TrainSample>& dataset, EhdrModelT<S>& model,
                  const TrainConfig& cfg, const std::string& out_dir = "",
                  const std::string& log_path = "") {
    if (dataset.empty()) throw TrainError("train: empty dataset");
    if (cfg.crop % 4 != 0) throw TrainError("train: crop size must be divisible by 4");
    if (cfg.lr <= 0.0f) throw TrainError("train: learning rate must be positive");

    auto params = model.parameters();
    AdamStateT<S> adam;
    std::mt19937 rng(cfg.seed);
    std::ofstream log;
    if (!log_path.empty()) {
        log.open(log_path);
        log << "step,epoch,lr,loss\n";
    }

    TrainResult result;
    int step = 0;
    const int total_epochs = cfg.max_steps > 0 ? INT_MAX : cfg.epochs;
    for (int epoch = 0; epoch < total_epochs; ++epoch) {
        const float lr = cfg.lr * std::pow(0.5f, float(epoch / cfg.lr_halving_period));
        std::vector<size_t> order(dataset.size());
        std::iota(order.begin(), order.end(), size_t(0));
        std::shuffle(order.begin(), order.end(), rng);
        for (size_t s0 = 0; s0 < order.size(); s0 += size_t(cfg.batch_size)) {
            for (auto& p : params) p.zero_grad();
            double batch_loss = 0.0;
            int batch_n = 0;
            for (size_t b = s0; b < std::min(order.size(), s0 + size_t(cfg.batch_size)); ++b) {
                TrainSample sample = dataset[order[b]];
                if (cfg.augment) sample = augment(sample, cfg.crop, rng);
                auto input = sample_event_input(model, sample, cfg.use_events);
                auto pred = model.forward_tensor(sample.brackets, input);
                auto loss = scale(mu_l1_loss(pred, hdr_to_tensor<S>(sample.gt)),
                                  S(cfg.l1_weight));
                const double lv = double(loss.data()[0]);
                if (!std::isfinite(lv)) {
                    if (!out_dir.empty()) {
                        std::filesystem::create_directories(out_dir);
                        write_pfm(out_dir + "/nan_batch_gt.pfm", sample.gt);
                        write_pfm(out_dir + "/nan_batch_pred.pfm", tensor_to_hdr(pred));
                    }
                    throw TrainError("train: NaN loss at step " + std::to_string(step) +
                                     " (offending batch dumped)");
                }
                loss.backward();
                batch_loss += lv;
                ++batch_n;
            }
            batch_loss /= std::max(1, batch_n);
            adam_step(params, adam, S(lr));
            if (result.loss_curve.empty()) result.initial_loss = float(batch_loss);
            result.loss_curve.push_back(float(batch_loss));
            if (log.is_open())
                log << step << "," << epoch << "," << lr << "," << batch_loss << "\n";
            ++step;
            if (cfg.max_steps > 0 && step >= cfg.max_steps) goto done;
        }
    }
done:
    result.steps = step;
    result.final_loss = result.loss_curve.empty() ? 0.0f : result.loss_curve.back();
    if (!out_dir.empty()) save_checkpoint(out_dir + "/checkpoint", model_checkpoint(model));
    return result;
}

}  // namespace ehdr
