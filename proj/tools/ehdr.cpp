// Command-line front end: synthetic scene/event generation, HDR merging,
// tonemapping, training, inference and evaluation.

#include <cstdio>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ehdr/io.hpp"
#include "ehdr/metrics.hpp"
#include "ehdr/model.hpp"
#include "ehdr/training.hpp"

using namespace ehdr;
namespace fs = std::filesystem;

namespace {

struct GlobalOpts {
    uint32_t seed = 0;
    std::string config;
    bool verbose = false;
};

void vlog(const GlobalOpts& g, const std::string& msg) {
    if (g.verbose) std::fprintf(stderr, "[ehdr] %s\n", msg.c_str());
}

std::map<std::string, std::string> load_cfg(const GlobalOpts& g) {
    if (g.config.empty()) return {};
    return read_config(g.config);
}

template <class T>
T cfg_get(const std::map<std::string, std::string>& cfg, const std::string& key, T fallback) {
    auto it = cfg.find(key);
    if (it == cfg.end()) return fallback;
    if constexpr (std::is_same_v<T, int>) return std::stoi(it->second);
    else if constexpr (std::is_same_v<T, float>) return std::stof(it->second);
    else if constexpr (std::is_same_v<T, bool>) return it->second == "1" || it->second == "true";
    else return it->second;
}

SyntheticSampleOptions scene_options(const std::map<std::string, std::string>& cfg) {
    SyntheticSampleOptions opt;
    opt.width = cfg_get(cfg, "data.width", 64);
    opt.height = cfg_get(cfg, "data.height", 64);
    opt.motion.disc_vx = cfg_get(cfg, "data.disc_vx", 2.0f);
    opt.motion.disc_vy = cfg_get(cfg, "data.disc_vy", 0.5f);
    opt.motion.square_vx = cfg_get(cfg, "data.square_vx", -1.5f);
    opt.motion.square_vy = cfg_get(cfg, "data.square_vy", 1.0f);
    opt.sim.contrast_threshold = cfg_get(cfg, "sim.contrast_threshold", 0.2f);
    return opt;
}

// Sample directory layout: bracket_{0,1,2}.png + .meta, events.ehev, gt.pfm.
void write_sample_dir(const std::string& dir, const std::array<LdrImage, 3>& brackets,
                      const EventStream& events, const HdrImage* gt) {
    fs::create_directories(dir);
    for (size_t i = 0; i < 3; ++i) {
        const auto stem = dir + "/bracket_" + std::to_string(i);
        write_png(stem + ".png", brackets[i]);
        write_ldr_meta(stem + ".meta", brackets[i]);
    }
    write_ehev(dir + "/events.ehev", events);
    if (gt) write_pfm(dir + "/gt.pfm", *gt);
}

std::array<LdrImage, 3> read_bracket_dir(const std::string& dir) {
    std::array<LdrImage, 3> brackets;
    for (size_t i = 0; i < 3; ++i) {
        const auto stem = dir + "/bracket_" + std::to_string(i);
        brackets[i] = read_png(stem + ".png");
        read_ldr_meta(stem + ".meta", brackets[i]);
    }
    return brackets;
}

// Renders the standard synthetic scene and its bracket/event capture.
struct CapturedScene {
    std::array<LdrImage, 3> brackets;
    EventStream events;
    HdrImage gt;
};

CapturedScene capture_scene(uint32_t seed, const SyntheticSampleOptions& opt) {
    auto sample = make_synthetic_sample(seed, opt);
    DynamicScene scene(seed, opt.width, opt.height, opt.motion, opt.frame_interval_us);
    std::vector<HdrFrame> frames;
    const uint64_t spacing = opt.frame_interval_us * uint64_t(opt.sim.frame_skip + 1);
    for (uint64_t t = 0; t <= 2 * spacing; t += opt.frame_interval_us)
        frames.push_back(scene.frame(t));
    CapturedScene cap;
    cap.brackets = sample.brackets;
    cap.events = simulate_events(frames, opt.sim);
    cap.gt = sample.gt;
    return cap;
}

int cmd_simulate(const GlobalOpts& g, const std::string& out_dir, int width, int height,
                 int frames, double target_rate) {
    auto cfg = load_cfg(g);
    auto opt = scene_options(cfg);
    opt.width = width;
    opt.height = height;
    DynamicScene scene(g.seed, width, height, opt.motion, opt.frame_interval_us);
    std::vector<HdrFrame> seq;
    for (int i = 0; i < frames; ++i)
        seq.push_back(scene.frame(uint64_t(i) * opt.frame_interval_us));

    SimulatorConfig sim = opt.sim;
    if (target_rate > 0.0) {
        sim.contrast_threshold =
            calibrate_threshold(seq, target_rate, 0.02f, 2.0f, sim, opt.frame_interval_us);
        vlog(g, "calibrated contrast threshold " + std::to_string(sim.contrast_threshold));
    }
    auto events = simulate_events(seq, sim);
    fs::create_directories(out_dir);
    write_ehev(out_dir + "/events.ehev", events);
    write_pfm(out_dir + "/frame_first.pfm", seq.front().image);
    write_pfm(out_dir + "/frame_last.pfm", seq.back().image);
    std::printf("simulated %zu events over %d frames -> %s\n", events.events.size(), frames,
                out_dir.c_str());
    return 0;
}

int cmd_brackets(const GlobalOpts& g, const std::string& out_dir) {
    auto cfg = load_cfg(g);
    auto cap = capture_scene(g.seed, scene_options(cfg));
    write_sample_dir(out_dir, cap.brackets, cap.events, &cap.gt);
    std::printf("wrote bracketed capture (%zu events) -> %s\n", cap.events.events.size(),
                out_dir.c_str());
    return 0;
}

int cmd_merge_hdr(const GlobalOpts& g, const std::string& in_dir, const std::string& out_path) {
    auto brackets = read_bracket_dir(in_dir);
    auto merged = merge_hdr({brackets[0], brackets[1], brackets[2]});
    write_pfm(out_path, merged);
    vlog(g, "merged " + in_dir + " -> " + out_path);
    return 0;
}

int cmd_tonemap(const GlobalOpts& g, const std::string& in_path, const std::string& out_path,
                float mu) {
    auto hdr = read_pfm(in_path);
    LdrImage out(hdr.width, hdr.height);
    for (size_t i = 0; i < hdr.pix.size(); ++i)
        out.pix[i] = mu_law(std::clamp(hdr.pix[i], 0.0f, 1.0f), mu);
    write_png(out_path, out);
    vlog(g, "tonemapped " + in_path + " -> " + out_path);
    return 0;
}

int cmd_train(const GlobalOpts& g, const std::string& out_dir, int steps_override) {
    auto cfg = load_cfg(g);
    auto opt = scene_options(cfg);

    const int num_samples = cfg_get(cfg, "data.num_samples", 1);
    std::vector<TrainSample> dataset;
    for (int i = 0; i < num_samples; ++i)
        dataset.push_back(make_synthetic_sample(g.seed + uint32_t(i), opt));
    vlog(g, "generated " + std::to_string(num_samples) + " synthetic samples");

    EhdrConfig mc;
    mc.base_channels = cfg_get(cfg, "model.base_channels", 8);
    EhdrModel model(mc, g.seed);

    TrainConfig tc;
    tc.lr = cfg_get(cfg, "train.lr", 1e-4f);
    tc.lr_halving_period = cfg_get(cfg, "train.lr_halving_period", 15);
    tc.batch_size = cfg_get(cfg, "train.batch", 2);
    tc.epochs = cfg_get(cfg, "train.epochs", 1);
    tc.max_steps = steps_override > 0 ? steps_override : cfg_get(cfg, "train.steps", 0);
    tc.crop = cfg_get(cfg, "train.crop", 64);
    tc.augment = cfg_get(cfg, "train.augment", true);
    tc.use_events = cfg_get(cfg, "train.use_events", true);
    tc.seed = g.seed;

    fs::create_directories(out_dir);
    auto result = train(dataset, model, tc, out_dir, out_dir + "/loss.csv");
    std::printf("trained %d steps, loss %.5f -> %.5f, checkpoint in %s/checkpoint\n",
                result.steps, result.initial_loss, result.final_loss, out_dir.c_str());
    return 0;
}

int cmd_infer(const GlobalOpts& g, const std::string& ckpt_dir, const std::string& in_dir,
              const std::string& out_path) {
    auto ckpt = load_checkpoint(ckpt_dir);
    EhdrConfig mc;
    if (ckpt.config.count("base_channels"))
        mc.base_channels = std::stoi(ckpt.config.at("base_channels"));
    EhdrModel model(mc, 0);
    load_model(model, ckpt);

    auto brackets = read_bracket_dir(in_dir);
    auto events = read_ehev(in_dir + "/events.ehev");
    auto hdr = model.forward(brackets, events);
    write_pfm(out_path, hdr);
    vlog(g, "inference " + in_dir + " -> " + out_path);
    return 0;
}

int cmd_evaluate(const GlobalOpts& g, const std::string& pred_dir, const std::string& gt_dir,
                 int border, const std::string& out_csv) {
    EvalReport report;
    std::vector<fs::path> preds;
    for (const auto& entry : fs::directory_iterator(pred_dir))
        if (entry.path().extension() == ".pfm") preds.push_back(entry.path());
    std::sort(preds.begin(), preds.end());
    for (const auto& p : preds) {
        const auto gt_path = fs::path(gt_dir) / p.filename();
        if (!fs::exists(gt_path)) {
            std::fprintf(stderr, "warning: no ground truth for %s, skipped\n",
                         p.filename().string().c_str());
            report.skipped.push_back(p.filename().string());
            continue;
        }
        report.samples.push_back(score_pair(p.stem().string(), read_pfm(p.string()),
                                            read_pfm(gt_path.string()), border));
    }
    if (report.samples.empty()) throw FormatError("evaluate: no matching .pfm pairs");
    report.finalize();
    for (const auto& s : report.samples)
        std::printf("%s  psnr_mu %.3f  ssim_mu %.4f\n", s.name.c_str(), s.psnr, s.ssim);
    std::printf("mean  psnr_mu %.3f  ssim_mu %.4f\n", report.mean_psnr, report.mean_ssim);
    if (!out_csv.empty()) report.write_csv(out_csv);
    vlog(g, "evaluated " + std::to_string(report.samples.size()) + " samples");
    return 0;
}

int cmd_gradcheck() {
    using DTensor = TensorT<double>;
    std::mt19937 rng(1);
    double worst = 0.0;
    auto fd_check = [&](std::vector<DTensor> params, const std::function<DTensor()>& loss) {
        for (auto& p : params) p.zero_grad();
        auto l = loss();
        l.backward();
        const double eps = 1e-4;
        for (auto& p : params)
            for (size_t i = 0; i < p.numel(); ++i) {
                const double orig = p.data()[i];
                p.data()[i] = orig + eps;
                const double up = loss().data()[0];
                p.data()[i] = orig - eps;
                const double dn = loss().data()[0];
                p.data()[i] = orig;
                const double fd = (up - dn) / (2 * eps);
                const double an = p.grad()[i];
                worst = std::max(worst, std::abs(an - fd) /
                                            std::max({std::abs(an), std::abs(fd), 1.0}));
            }
    };
    {
        auto x = DTensor::uniform({1, 2, 5, 5}, -1.0, 1.0, rng, true);
        ConvParamsT<double> p;
        p.weight = DTensor::uniform({3, 2, 3, 3}, -1.0, 1.0, rng, true);
        p.bias = DTensor::uniform({3}, -1.0, 1.0, rng, true);
        p.padding = 1;
        fd_check({x, p.weight, p.bias}, [&] {
            auto y = conv2d(x, p);
            return ehdr::sum(ehdr::mul(y, y));
        });
    }
    {
        auto x = DTensor::uniform({1, 2, 5, 5}, -1.0, 1.0, rng, true);
        ConvParamsT<double> p;
        p.weight = DTensor::uniform({2, 2, 3, 3}, -1.0, 1.0, rng, true);
        p.bias = DTensor::uniform({2}, -1.0, 1.0, rng, true);
        p.padding = 1;
        auto offsets = DTensor::uniform({1, 18, 5, 5}, 0.1, 0.4, rng, true);
        auto masks = DTensor::uniform({1, 9, 5, 5}, 0.2, 0.8, rng, true);
        fd_check({x, p.weight, p.bias, offsets, masks}, [&] {
            auto y = deform_conv(x, offsets, masks, p);
            return ehdr::sum(ehdr::mul(y, y));
        });
    }
    {
        auto pred = DTensor::uniform({1, 3, 4, 4}, 0.05, 0.95, rng, true);
        auto gt = DTensor::uniform({1, 3, 4, 4}, 0.05, 0.95, rng);
        fd_check({pred}, [&] { return mu_l1_loss(pred, gt); });
    }
    std::printf("gradcheck max relative error %.3e (%s)\n", worst,
                worst < 1e-4 ? "pass" : "FAIL");
    return worst < 1e-4 ? 0 : 2;
}

int cmd_selftest(const GlobalOpts& g) {
    auto cfg = load_cfg(g);
    auto opt = scene_options(cfg);
    opt.width = opt.height = 32;
    auto sample = make_synthetic_sample(g.seed, opt);
    std::printf("selftest: synthetic scene 32x32, %zu voxel chunks per window\n",
                sample.vox_plus.size());

    auto merged = merge_hdr({sample.brackets[0], sample.brackets[1], sample.brackets[2]});
    for (auto& v : merged.pix) v = std::clamp(v, 0.0f, 1.0f);
    std::printf("selftest: naive merge psnr_mu %.2f dB\n", psnr_mu(merged, sample.gt));

    EhdrConfig mc;
    mc.base_channels = 4;
    EhdrModel model(mc, g.seed);
    TrainConfig tc;
    tc.lr = 1e-3f;
    tc.batch_size = 1;
    tc.crop = 32;
    tc.augment = false;
    tc.max_steps = 50;
    tc.seed = g.seed;
    auto result = train({sample}, model, tc);
    std::printf("selftest: trained %d steps, loss %.5f -> %.5f\n", result.steps,
                result.initial_loss, result.final_loss);

    auto input = sample_event_input(model, sample, true);
    auto pred = tensor_to_hdr(model.forward_tensor(sample.brackets, input));
    std::printf("selftest: model psnr_mu %.2f dB, ssim_mu %.4f\n", psnr_mu(pred, sample.gt),
                ssim_mu(pred, sample.gt));
    std::printf("selftest: ok\n");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"event-guided multi-bracket HDR pipeline"};
    app.require_subcommand(1);

    GlobalOpts g;
    app.add_option("--seed", g.seed, "global RNG seed");
    app.add_option("--config", g.config, "INI configuration file");
    app.add_flag("--verbose", g.verbose, "log progress to stderr");

    std::string out_dir = "out", in_path, out_path, pred_dir, gt_dir, ckpt_dir;
    int width = 64, height = 64, frames = 9, border = 10, steps = 0;
    double target_rate = 0.0;
    float mu = 5000.0f;
    std::string eval_csv;

    auto* simulate = app.add_subcommand("simulate", "simulate an event stream");
    simulate->add_option("--out", out_dir, "output directory")->required();
    simulate->add_option("--width", width);
    simulate->add_option("--height", height);
    simulate->add_option("--frames", frames);
    simulate->add_option("--target-rate", target_rate, "calibrate threshold to this rate");

    auto* brackets = app.add_subcommand("brackets", "render a bracketed capture with events");
    brackets->add_option("--out", out_dir, "output directory")->required();

    auto* merge = app.add_subcommand("merge-hdr", "triangle-weighted bracket merge");
    merge->add_option("--in", in_path, "sample directory")->required();
    merge->add_option("--out", out_path, "output PFM")->required();

    auto* tonemap = app.add_subcommand("tonemap", "mu-law tonemap a PFM to PNG");
    tonemap->add_option("--in", in_path, "input PFM")->required();
    tonemap->add_option("--out", out_path, "output PNG")->required();
    tonemap->add_option("--mu", mu, "mu-law compression factor");

    auto* train_cmd = app.add_subcommand("train", "train on synthetic data");
    train_cmd->add_option("--out", out_dir, "output directory")->required();
    train_cmd->add_option("--steps", steps, "override step count");

    auto* infer = app.add_subcommand("infer", "run a checkpoint on a sample directory");
    infer->add_option("--ckpt", ckpt_dir, "checkpoint directory")->required();
    infer->add_option("--in", in_path, "sample directory")->required();
    infer->add_option("--out", out_path, "output PFM")->required();

    auto* evaluate = app.add_subcommand("evaluate", "PSNR/SSIM report over PFM pairs");
    evaluate->add_option("--pred", pred_dir, "prediction directory")->required();
    evaluate->add_option("--gt", gt_dir, "ground-truth directory")->required();
    evaluate->add_option("--border", border, "border crop in pixels");
    evaluate->add_option("--csv", eval_csv, "write report CSV here");

    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suite");
    auto* selftest = app.add_subcommand("selftest", "end-to-end smoke test");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (simulate->parsed())
            return cmd_simulate(g, out_dir, width, height, frames, target_rate);
        if (brackets->parsed()) return cmd_brackets(g, out_dir);
        if (merge->parsed()) return cmd_merge_hdr(g, in_path, out_path);
        if (tonemap->parsed()) return cmd_tonemap(g, in_path, out_path, mu);
        if (train_cmd->parsed()) return cmd_train(g, out_dir, steps);
        if (infer->parsed()) return cmd_infer(g, ckpt_dir, in_path, out_path);
        if (evaluate->parsed()) return cmd_evaluate(g, pred_dir, gt_dir, border, eval_csv);
        if (gradcheck->parsed()) return cmd_gradcheck();
        if (selftest->parsed()) return cmd_selftest(g);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 1;
}
