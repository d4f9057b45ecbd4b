#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "rra/backbone.hpp"
#include "rra/grad_check.hpp"

using namespace rra;

namespace {

BackboneConfig tiny_config(bool with_bn = false) {
    BackboneConfig cfg;
    cfg.in_channels = 2;
    cfg.input_hw = 8;
    cfg.stages = {{3, 3, 2}, {4, 3, 2}};
    cfg.with_batchnorm = with_bn;
    return cfg;
}

Tensor<double> probe_tensor(Shape shape, Rng& rng) {
    Tensor<double> t(std::move(shape));
    for (std::int64_t i = 0; i < t.numel(); ++i) {
        const double mag = rng.uniform(0.25, 1.25);
        t[i] = rng.coin() ? mag : -mag;
    }
    return t;
}

} // namespace

TEST_CASE("conv arithmetic: stride-2 stages halve the spatial size") {
    BackboneConfig cfg;
    cfg.input_hw = 32;
    CHECK(cfg.output_hw() == 4);
    CHECK(cfg.feature_channels() == 32);
    cfg.stages = {{8, 3, 2}};
    CHECK(cfg.output_hw() == 16);

    BackboneConfig collapse;
    collapse.input_hw = 2;
    collapse.stages = {{4, 3, 2}, {4, 3, 2}, {4, 3, 2}};
    CHECK_NOTHROW(collapse.validate()); // 2 -> 1 -> 1 -> 1 stays positive
}

TEST_CASE("identity kernel reproduces the input channel") {
    // single stage, stride 1: center-tap kernel copies channel 0
    BackboneConfig cfg;
    cfg.in_channels = 1;
    cfg.input_hw = 5;
    cfg.stages = {{1, 3, 1}};
    cfg.with_batchnorm = false;
    Rng rng(3);
    Backbone<double> net(cfg, rng);
    ParamList<double> params;
    net.collect_params(params);
    params[0].node->value.fill(0.0);
    params[0].node->value.at(0, 0, 1, 1) = 1.0; // center tap
    params[1].node->value.fill(0.0);

    Tensor<double> frames = Tensor<double>::uniform(Shape{2, 1, 5, 5}, 0.0, 1.0, rng);
    auto out = net.forward(make_constant(frames), Mode::eval);
    CHECK(out->value.shape() == Shape{2, 1, 5, 5});
    for (std::int64_t i = 0; i < frames.numel(); ++i)
        CHECK(out->value[i] == doctest::Approx(frames[i]).epsilon(1e-12));
}

TEST_CASE("all-zero input with zero biases maps to all-zero features") {
    Rng rng(5);
    Backbone<double> net(tiny_config(), rng);
    auto out = net.forward(make_constant(Tensor<double>::zeros(Shape{3, 2, 8, 8})), Mode::eval);
    for (std::int64_t i = 0; i < out->value.numel(); ++i) CHECK(out->value[i] == 0.0);
}

TEST_CASE("weight sharing: identical frames produce identical feature maps") {
    Rng rng(7);
    Backbone<double> net(tiny_config(true), rng);
    Tensor<double> one = Tensor<double>::uniform(Shape{1, 2, 8, 8}, -1.0, 1.0, rng);
    Tensor<double> two(Shape{2, 2, 8, 8});
    for (std::int64_t i = 0; i < one.numel(); ++i) {
        two[i] = one[i];
        two[one.numel() + i] = one[i];
    }
    auto out = net.forward(make_constant(two), Mode::eval);
    const std::int64_t per = out->value.numel() / 2;
    for (std::int64_t i = 0; i < per; ++i) CHECK(out->value[i] == out->value[per + i]);
}

TEST_CASE("temporal equivariance: permuting frames permutes feature blocks") {
    Rng rng(11);
    Backbone<double> net(tiny_config(true), rng);
    Tensor<double> frames = Tensor<double>::uniform(Shape{3, 2, 8, 8}, -1.0, 1.0, rng);
    auto base = net.forward(make_constant(frames), Mode::eval);

    const std::vector<std::int64_t> perm{2, 0, 1}; // frame i moves to slot perm[i]
    Tensor<double> shuffled(frames.shape());
    const std::int64_t per_in = frames.numel() / 3;
    for (std::int64_t t = 0; t < 3; ++t)
        for (std::int64_t i = 0; i < per_in; ++i)
            shuffled[perm[static_cast<std::size_t>(t)] * per_in + i] = frames[t * per_in + i];
    auto moved = net.forward(make_constant(shuffled), Mode::eval);

    const std::int64_t per_out = base->value.numel() / 3;
    for (std::int64_t t = 0; t < 3; ++t)
        for (std::int64_t i = 0; i < per_out; ++i)
            CHECK(moved->value[perm[static_cast<std::size_t>(t)] * per_out + i] ==
                  base->value[t * per_out + i]);
}

TEST_CASE("features are non-negative (final ReLU) and channels-major layout holds") {
    Rng rng(13);
    Backbone<double> net(tiny_config(true), rng);
    Tensor<double> frames = Tensor<double>::uniform(Shape{2, 2, 8, 8}, -1.0, 1.0, rng);
    auto stack = net.forward(make_constant(frames), Mode::eval);
    auto flat = images_to_feature_matrix(stack);
    const std::int64_t c = stack->value.extent(1), h = stack->value.extent(2), w = stack->value.extent(3);
    for (std::int64_t i = 0; i < flat->value.numel(); ++i) CHECK(flat->value[i] >= 0.0);
    // position p = (frame*h + row)*w + col
    for (std::int64_t t = 0; t < 2; ++t)
        for (std::int64_t j = 0; j < c; ++j)
            for (std::int64_t r = 0; r < h; ++r)
                for (std::int64_t q = 0; q < w; ++q)
                    CHECK(flat->value.at(j, (t * h + r) * w + q) == stack->value.at(t, j, r, q));
}

TEST_CASE("two-stage backbone with a linear head passes the gradient check") {
    // ReLU kinks: zero-bias random-weight stages put some pre-activation
    // entries near zero, so search for a seed with clearance first.
    BackboneConfig cfg;
    cfg.in_channels = 1;
    cfg.input_hw = 6;
    cfg.stages = {{2, 3, 2}, {3, 3, 2}};
    cfg.with_batchnorm = true;

    for (std::uint64_t seed = 3;; ++seed) {
        Rng rng(seed);
        Backbone<double> net(cfg, rng);
        auto frames = make_leaf(Tensor<double>::uniform(Shape{2, 1, 6, 6}, -1.0, 1.0, rng), true);
        const Tensor<double> probe = probe_tensor(Shape{3, 2 * 3 * 3}, rng);

        // min distance of any pre-ReLU value from zero, both stages
        double margin = 1e9;
        {
            auto x = frames;
            ParamList<double> params;
            net.collect_params(params);
            // replicate the stage pipeline to read pre-ReLU values
            auto h1 = conv2d(x, params[0].node, params[1].node, 2, 1);
            for (std::int64_t i = 0; i < h1->value.numel(); ++i)
                margin = std::min(margin, std::abs(h1->value[i]));
        }
        if (margin < 5e-3) continue;

        ParamList<double> params;
        net.collect_params(params);
        std::vector<NodePtr<double>> leaves{frames};
        for (const auto& p : params) leaves.push_back(p.node);
        auto report = grad_check<double>(
            [&] {
                net.forward(frames, Mode::train); // exercise stat updates too
                auto features = images_to_feature_matrix(net.forward(frames, Mode::train));
                return inner_const(features, probe);
            },
            leaves);
        CHECK(report.max_rel_err <= 1e-4);
        break;
    }
}

TEST_CASE("frozen flag is carried on every backbone parameter") {
    Rng rng(17);
    Backbone<double> net(tiny_config(true), rng);
    net.set_frozen(true);
    ParamList<double> params;
    net.collect_params(params);
    for (const auto& p : params) CHECK(p.frozen);
    net.set_frozen(false);
    ParamList<double> thawed;
    net.collect_params(thawed);
    for (const auto& p : thawed) CHECK_FALSE(p.frozen);
}
