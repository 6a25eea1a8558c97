#include <gtest/gtest.h>

#include <random>

#include "ehdr/deform.hpp"
#include "ehdr/model.hpp"
#include "test_util.hpp"

using namespace ehdr;
using DTensor = TensorT<double>;

namespace {

EhdrConfig tiny_config() {
    EhdrConfig cfg;
    cfg.base_channels = 4;
    return cfg;
}

LdrImage make_bracket(int w, int h, int fstop, float exposure, uint64_t t, uint32_t seed) {
    LdrImage img(w, h);
    std::mt19937 rng(seed);
    std::uniform_real_distribution<float> u(0.05f, 0.95f);
    for (auto& v : img.pix) v = u(rng);
    img.fstop = fstop;
    img.exposure_time = exposure;
    img.timestamp_us = t;
    return img;
}

std::array<LdrImage, 3> make_brackets(int w, int h, uint32_t seed) {
    return {make_bracket(w, h, -3, 1.0f, 0, seed), make_bracket(w, h, 0, 8.0f, 3000, seed + 1),
            make_bracket(w, h, 3, 64.0f, 6000, seed + 2)};
}

EventInputT<float> make_event_input(const EhdrModel& model, int w, int h, uint32_t seed,
                                    bool zero = false) {
    std::mt19937 rng(seed);
    std::uniform_real_distribution<float> u(-1.0f, 1.0f);
    EventInputT<float> input;
    for (int side = 0; side < 2; ++side) {
        auto& dst = side == 0 ? input.toward_plus : input.toward_minus;
        for (int c = 0; c < 2; ++c) {
            VoxelGrid grid(model.config.voxel_bins, w, h);
            if (!zero)
                for (auto& v : grid.data) v = u(rng);
            dst.push_back(model.voxel_input(grid));
        }
    }
    return input;
}

}  // namespace

TEST(DeformConv, ZeroOffsetsUnitMasksEqualConv) {
    std::mt19937 rng(1);
    for (int trial = 0; trial < 5; ++trial) {
        auto x = Tensor::uniform({1, 3, 7, 7}, -1.0f, 1.0f, rng);
        ConvParams p;
        p.weight = Tensor::uniform({2, 3, 3, 3}, -1.0f, 1.0f, rng);
        p.bias = Tensor::uniform({2}, -1.0f, 1.0f, rng);
        p.padding = 1;
        auto offsets = Tensor::zeros({1, 18, 7, 7});
        auto masks = Tensor::filled({1, 9, 7, 7}, 1.0f);
        auto got = deform_conv(x, offsets, masks, p);
        auto want = conv2d(x, p);
        EXPECT_LT(test_util::max_abs_diff(got, want), 1e-6);
    }
}

TEST(DeformConv, IntegerOffsetEqualsShiftedConv) {
    std::mt19937 rng(2);
    auto x = Tensor::uniform({1, 2, 6, 6}, -1.0f, 1.0f, rng);
    ConvParams p;
    p.weight = Tensor::uniform({2, 2, 3, 3}, -1.0f, 1.0f, rng);
    p.bias = Tensor::zeros({2});
    p.padding = 1;
    // every tap reads one pixel to the right: equivalent to convolving the
    // left-shifted (zero-filled) input
    auto offsets = Tensor::zeros({1, 18, 6, 6});
    for (int k = 0; k < 9; ++k)
        for (int i = 0; i < 36; ++i) offsets.data()[(size_t(2 * k)) * 36 + size_t(i)] = 1.0f;
    auto masks = Tensor::filled({1, 9, 6, 6}, 1.0f);
    auto got = deform_conv(x, offsets, masks, p);

    auto shifted = Tensor::zeros({1, 2, 6, 6});
    for (int c = 0; c < 2; ++c)
        for (int y = 0; y < 6; ++y)
            for (int xx = 0; xx < 5; ++xx)
                shifted.at(0, c, y, xx) = x.at(0, c, y, xx + 1);
    auto want = conv2d(shifted, p);
    // the leftmost output column differs: zero padding of the shifted image
    // hides x(:,0) which the deformed taps still see
    double worst = 0.0;
    for (int c = 0; c < 2; ++c)
        for (int y = 0; y < 6; ++y)
            for (int xx = 1; xx < 6; ++xx)
                worst = std::max(worst,
                                 std::abs(double(got.at(0, c, y, xx) - want.at(0, c, y, xx))));
    EXPECT_LT(worst, 1e-5);
}

TEST(DeformConv, HalfMaskHalvesResponse) {
    std::mt19937 rng(3);
    auto x = Tensor::uniform({1, 2, 5, 5}, -1.0f, 1.0f, rng);
    ConvParams p;
    p.weight = Tensor::uniform({1, 2, 3, 3}, -1.0f, 1.0f, rng);
    p.bias = Tensor::zeros({1});
    p.padding = 1;
    auto offsets = Tensor::zeros({1, 18, 5, 5});
    auto full = deform_conv(x, offsets, Tensor::filled({1, 9, 5, 5}, 1.0f), p);
    auto half = deform_conv(x, offsets, Tensor::filled({1, 9, 5, 5}, 0.5f), p);
    for (size_t i = 0; i < full.numel(); ++i)
        EXPECT_NEAR(half.data()[i], 0.5f * full.data()[i], 1e-6);
}

TEST(Gradcheck, DeformConvAllArguments) {
    std::mt19937 rng(5);
    auto x = DTensor::uniform({1, 2, 5, 5}, -1.0, 1.0, rng, true);
    ConvParamsT<double> p;
    p.weight = DTensor::uniform({2, 2, 3, 3}, -1.0, 1.0, rng, true);
    p.bias = DTensor::uniform({2}, -1.0, 1.0, rng, true);
    p.padding = 1;
    // fractional offsets away from integer sample points keep the bilinear
    // read smooth across the finite-difference step
    auto offsets = DTensor::uniform({1, 18, 5, 5}, 0.1, 0.4, rng, true);
    auto masks = DTensor::uniform({1, 9, 5, 5}, 0.2, 0.8, rng, true);
    auto loss_fn = [&] {
        auto y = deform_conv(x, offsets, masks, p);
        return ehdr::sum(ehdr::mul(y, y));
    };
    EXPECT_LT(test_util::fd_max_rel_err({x, p.weight, p.bias, offsets, masks}, loss_fn), 1e-4);
}

TEST(ConvLstm, ShapesAndGradcheck) {
    std::mt19937 rng(7);
    ConvLstmCellT<double> cell;
    cell.init(2, rng);
    std::vector<DTensor> chunks;
    for (int i = 0; i < 4; ++i) chunks.push_back(DTensor::uniform({1, 2, 6, 6}, -1.0, 1.0, rng));
    auto h = cell.integrate(chunks);
    EXPECT_EQ(h.shape(), (std::vector<int>{1, 2, 6, 6}));
    EXPECT_THROW(cell.integrate({}), TensorError);

    cell.gates.weight.set_requires_grad(true);
    cell.gates.bias.set_requires_grad(true);
    auto loss_fn = [&] {
        auto hidden = cell.integrate(chunks);
        return ehdr::sum(ehdr::mul(hidden, hidden));
    };
    EXPECT_LT(test_util::fd_max_rel_err({cell.gates.weight, cell.gates.bias}, loss_fn), 1e-4);
}

TEST(PairwiseAttention, IdenticalInputsPassThrough) {
    std::mt19937 rng(11);
    PairwiseAttentionT<float> attn;
    attn.init(3, 0.1f, 1e-6f, rng);
    auto f = Tensor::uniform({1, 3, 8, 8}, -1.0f, 1.0f, rng);
    auto out = attn.forward(f, f, f);
    // all three weights coincide, so the normalized blend returns the input
    for (size_t i = 0; i < f.numel(); ++i) EXPECT_NEAR(out.data()[i], f.data()[i], 1e-4);
}

TEST(PairwiseAttention, Gradcheck) {
    std::mt19937 rng(13);
    PairwiseAttentionT<double> attn;
    attn.init(2, 0.1, 1e-6, rng);
    attn.conv1.weight.set_requires_grad(true);
    attn.conv1.bias.set_requires_grad(true);
    attn.conv2.weight.set_requires_grad(true);
    attn.conv2.bias.set_requires_grad(true);
    auto ref = DTensor::uniform({1, 2, 5, 5}, -1.0, 1.0, rng, true);
    auto am = DTensor::uniform({1, 2, 5, 5}, -1.0, 1.0, rng);
    auto ap = DTensor::uniform({1, 2, 5, 5}, -1.0, 1.0, rng);
    auto loss_fn = [&] {
        auto out = attn.forward(ref, am, ap);
        return ehdr::sum(ehdr::mul(out, out));
    };
    EXPECT_LT(test_util::fd_max_rel_err(
                  {ref, attn.conv1.weight, attn.conv1.bias, attn.conv2.weight, attn.conv2.bias},
                  loss_fn),
              1e-4);
}

TEST(SpatialAttention, ZeroParamsGiveHalfMask) {
    std::mt19937 rng(17);
    SpatialAttentionT<float> attn;
    attn.init(2, 0.1f, rng);
    attn.visit("attn", [](const std::string&, Tensor& t) {
        std::fill(t.data().begin(), t.data().end(), 0.0f);
    });
    auto f = Tensor::uniform({1, 2, 8, 8}, -1.0f, 1.0f, rng);
    auto out = attn.forward(f);
    // pre-sigmoid maps collapse to zero -> sigmoid 0.5; residual conv is zero
    for (size_t i = 0; i < f.numel(); ++i) EXPECT_NEAR(out.data()[i], 0.5f * f.data()[i], 1e-6);
}

TEST(DeformPredictor, ZeroInitStartsAtIdentity) {
    std::mt19937 rng(19);
    DeformPredictorT<float> pred;
    pred.init(3, 9, false, 0.1f, rng);
    auto f = Tensor::uniform({1, 3, 8, 8}, -1.0f, 1.0f, rng);
    auto g = Tensor::uniform({1, 3, 8, 8}, -1.0f, 1.0f, rng);
    auto e = Tensor::uniform({1, 3, 8, 8}, -1.0f, 1.0f, rng);
    auto field = pred.predict(f, g, e, std::nullopt);
    for (float v : field.offsets.data()) EXPECT_FLOAT_EQ(v, 0.0f);
    for (float v : field.masks.data()) EXPECT_FLOAT_EQ(v, 0.5f);
    EXPECT_EQ(field.offsets.shape(), (std::vector<int>{1, 18, 8, 8}));
    EXPECT_EQ(field.masks.shape(), (std::vector<int>{1, 9, 8, 8}));
}

TEST(Encoder, PyramidShapes) {
    std::mt19937 rng(23);
    EncoderT<float> enc;
    enc.init(6, 4, 0.1f, rng);
    auto x = Tensor::uniform({1, 6, 16, 16}, -1.0f, 1.0f, rng);
    auto py = enc.forward(x);
    EXPECT_EQ(py.l1.shape(), (std::vector<int>{1, 4, 16, 16}));
    EXPECT_EQ(py.l2.shape(), (std::vector<int>{1, 4, 8, 8}));
    EXPECT_EQ(py.l3.shape(), (std::vector<int>{1, 4, 4, 4}));
}

TEST(Model, ForwardShapeAndRange) {
    EhdrModel model(tiny_config(), 1);
    auto brackets = make_brackets(16, 16, 100);
    auto events = make_event_input(model, 16, 16, 5);
    auto out = model.forward_tensor(brackets, events);
    EXPECT_EQ(out.shape(), (std::vector<int>{1, 3, 16, 16}));
    for (float v : out.data()) {
        EXPECT_GT(v, 0.0f);
        EXPECT_LT(v, 1.0f);
    }
}

TEST(Model, HandlesNonMultipleOfFourSizes) {
    EhdrModel model(tiny_config(), 1);
    auto brackets = make_brackets(18, 14, 200);
    auto events = make_event_input(model, 18, 14, 7);
    auto out = model.forward_tensor(brackets, events);
    EXPECT_EQ(out.shape(), (std::vector<int>{1, 3, 14, 18}));
}

TEST(Model, EventsChangeOutput) {
    EhdrModel model(tiny_config(), 2);
    // events reach the output only through the offset/mask emitters, which
    // start at zero by design; nudge them so the event path is live
    model.visit_params([](const std::string& name, Tensor& t) {
        if (name.find("emit") != std::string::npos)
            for (size_t i = 0; i < t.numel(); ++i)
                t.data()[i] = 0.03f * float(int(i % 5) - 2);
    });
    auto brackets = make_brackets(16, 16, 300);
    auto with = model.forward_tensor(brackets, make_event_input(model, 16, 16, 9));
    auto without = model.forward_tensor(brackets, make_event_input(model, 16, 16, 9, true));
    EXPECT_GT(test_util::max_abs_diff(with, without), 1e-6);
}

TEST(Model, NonReferenceBracketChangesOutput) {
    EhdrModel model(tiny_config(), 3);
    auto brackets = make_brackets(16, 16, 400);
    auto events = make_event_input(model, 16, 16, 11);
    auto base = model.forward_tensor(brackets, events);
    auto perturbed = brackets;
    perturbed[2].pix[40] = std::min(1.0f, perturbed[2].pix[40] + 0.3f);
    auto changed = model.forward_tensor(perturbed, events);
    EXPECT_GT(test_util::max_abs_diff(base, changed), 1e-7);
}

TEST(Model, OffsetPropagationMatters) {
    EhdrConfig cfg = tiny_config();
    EhdrModel model(cfg, 4);
    // make the emitted offsets nonzero so coarse-to-fine propagation has an
    // effect to switch off
    model.visit_params([](const std::string& name, Tensor& t) {
        if (name.find("emit") != std::string::npos)
            for (size_t i = 0; i < t.numel(); ++i)
                t.data()[i] = 0.05f * float(int(i % 7) - 3);
    });
    auto brackets = make_brackets(16, 16, 500);
    auto events = make_event_input(model, 16, 16, 13);
    auto enc_ref = model.image_encoder.forward(model.image_input(brackets[1]));
    auto enc_plus = model.image_encoder.forward(model.image_input(brackets[2]));
    std::vector<PyramidT<float>> ev;
    for (const auto& g : events.toward_plus) ev.push_back(model.event_encoder.forward(g));
    auto cascaded = model.align.forward(enc_plus, enc_ref, ev, true);
    auto flat = model.align.forward(enc_plus, enc_ref, ev, false);
    EXPECT_GT(test_util::max_abs_diff(cascaded, flat), 1e-7);
}

TEST(Model, EmptyEventStreamFallsBackToZeroGrid) {
    EhdrModel model(tiny_config(), 5);
    auto brackets = make_brackets(16, 16, 600);
    EventStream empty{16, 16, {}};
    bool warned = false;
    auto input = model.event_input(brackets, empty, 0, &warned);
    EXPECT_TRUE(warned);
    ASSERT_EQ(input.toward_plus.size(), 1u);
    for (float v : input.toward_plus[0].data()) EXPECT_FLOAT_EQ(v, 0.0f);
    auto out = model.forward_tensor(brackets, input);
    EXPECT_EQ(out.dim(2), 16);
}

TEST(Model, DeterministicInitAndForward) {
    EhdrModel a(tiny_config(), 42), b(tiny_config(), 42), c(tiny_config(), 43);
    auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
    ASSERT_EQ(pa.size(), pb.size());
    bool any_diff_seed = false;
    for (size_t i = 0; i < pa.size(); ++i) {
        EXPECT_EQ(pa[i].data(), pb[i].data());
        if (pa[i].data() != pc[i].data()) any_diff_seed = true;
    }
    EXPECT_TRUE(any_diff_seed);

    auto brackets = make_brackets(16, 16, 700);
    auto events = make_event_input(a, 16, 16, 15);
    auto oa = a.forward_tensor(brackets, events);
    auto ob = b.forward_tensor(brackets, events);
    EXPECT_EQ(oa.data(), ob.data());
}

TEST(Model, ParameterNamesUniqueAndComplete) {
    EhdrModel model(tiny_config(), 6);
    std::vector<std::string> names;
    size_t total = 0;
    model.visit_params([&](const std::string& name, Tensor& t) {
        names.push_back(name);
        total += t.numel();
    });
    std::sort(names.begin(), names.end());
    EXPECT_EQ(std::adjacent_find(names.begin(), names.end()), names.end());
    EXPECT_GT(total, 1000u);
}
