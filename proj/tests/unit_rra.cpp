#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "rra/grad_check.hpp"
#include "rra/rra_block.hpp"

using namespace rra;

namespace {

FeatureDims dims_of(std::int64_t c, std::int64_t n, std::int64_t h, std::int64_t w,
                    std::int64_t batch = 1) {
    FeatureDims d;
    d.channels = c;
    d.clips = n;
    d.height = h;
    d.width = w;
    d.batch = batch;
    return d;
}

NodePtr<double> random_feature_map(const FeatureDims& d, Rng& rng, bool grad = false) {
    // post-ReLU maps are non-negative
    return make_leaf(Tensor<double>::uniform(Shape{d.channels, d.total_positions()}, 0.0, 1.0, rng), grad);
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

TEST_CASE("attention weights: zero projection gives the uniform distribution") {
    Rng rng(3);
    const auto d = dims_of(4, 2, 2, 2);
    auto xbar = random_feature_map(d, rng);
    auto w = make_constant(Tensor<double>::zeros(Shape{4}));
    auto a = attention_weights(xbar, w, d);
    for (std::int64_t i = 0; i < a->value.numel(); ++i)
        CHECK(a->value[i] == doctest::Approx(1.0 / 8.0).epsilon(1e-12));
}

TEST_CASE("attention weights: identical positions share weight") {
    const auto d = dims_of(3, 1, 2, 1);
    Tensor<double> same(Shape{3, 2});
    for (std::int64_t j = 0; j < 3; ++j) same.at(j, 0) = same.at(j, 1) = 0.3 * static_cast<double>(j + 1);
    Rng rng(5);
    auto w = make_leaf(Tensor<double>::uniform(Shape{3}, -1.0, 1.0, rng));
    auto a = attention_weights(make_constant(std::move(same)), w, d);
    CHECK(a->value[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(a->value[1] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("attention weights: single channel closed form") {
    const auto d = dims_of(1, 1, 2, 1);
    auto xbar = make_constant(Tensor<double>(Shape{1, 2}, {0.0, std::log(3.0)}));
    auto w = make_constant(Tensor<double>(Shape{1}, {1.0}));
    auto a = attention_weights(xbar, w, d);
    CHECK(a->value[0] == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(a->value[1] == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("summarize: uniform weights give the column mean, one-hot picks a column") {
    const auto d = dims_of(2, 1, 2, 1);
    auto xbar = make_constant(Tensor<double>(Shape{2, 2}, {1, 0, 0, 1}));
    auto uniform = make_constant(Tensor<double>(Shape{2}, {0.5, 0.5}));
    auto mean = summarize(xbar, uniform, d);
    CHECK(mean->value.at(0, 0) == doctest::Approx(0.5));
    CHECK(mean->value.at(1, 0) == doctest::Approx(0.5));

    auto weights = make_constant(Tensor<double>(Shape{2}, {0.25, 0.75}));
    auto mixed = summarize(xbar, weights, d);
    CHECK(mixed->value.at(0, 0) == doctest::Approx(0.25));
    CHECK(mixed->value.at(1, 0) == doctest::Approx(0.75));

    auto onehot = make_constant(Tensor<double>(Shape{2}, {0.0, 1.0}));
    auto picked = summarize(xbar, onehot, d);
    CHECK(picked->value.at(0, 0) == doctest::Approx(0.0));
    CHECK(picked->value.at(1, 0) == doctest::Approx(1.0));
}

TEST_CASE("reduction vector: zero transform, bias-only, tanh range") {
    Rng rng(7);
    auto xhat = make_constant(Tensor<double>::uniform(Shape{3, 1}, -1.0, 1.0, rng));
    auto w0 = make_constant(Tensor<double>::zeros(Shape{3, 3}));
    auto b0 = make_constant(Tensor<double>::zeros(Shape{3}));
    auto zero = reduction_vector(xhat, w0, b0);
    for (std::int64_t i = 0; i < 3; ++i) CHECK(zero->value[i] == 0.0);

    auto b1 = make_constant(Tensor<double>::full(Shape{3}, 1.0));
    auto bias_only = reduction_vector(xhat, w0, b1);
    for (std::int64_t i = 0; i < 3; ++i)
        CHECK(bias_only->value[i] == doctest::Approx(std::tanh(1.0)).epsilon(1e-12));

    for (int trial = 0; trial < 1000; ++trial) {
        Rng trial_rng(derive_seed(100, static_cast<std::uint64_t>(trial)));
        auto x = make_constant(Tensor<double>::uniform(Shape{4, 1}, -3.0, 3.0, trial_rng));
        auto w = make_constant(Tensor<double>::uniform(Shape{4, 4}, -2.0, 2.0, trial_rng));
        auto b = make_constant(Tensor<double>::uniform(Shape{4}, -2.0, 2.0, trial_rng));
        auto r = reduction_vector(x, w, b);
        for (std::int64_t i = 0; i < 4; ++i) {
            CHECK(r->value[i] > -1.0);
            CHECK(r->value[i] < 1.0);
        }
    }
}

TEST_CASE("update: zero reduction with identity normalization keeps a non-negative map") {
    Rng rng(11);
    const auto d = dims_of(3, 1, 2, 2);
    auto x = random_feature_map(d, rng);
    auto zero = make_constant(Tensor<double>::zeros(Shape{3, 1}));
    auto bn = BatchNormState<double>::make(3);
    bn.mode = Mode::eval; // identity running stats
    auto upd = update_feature_maps(x, zero, bn, d);
    for (std::int64_t i = 0; i < x->value.numel(); ++i)
        CHECK(upd.reduced->value[i] == doctest::Approx(x->value[i]).epsilon(1e-5));
    CHECK(upd.carried->value == x->value);
}

TEST_CASE("update: negative reduction entry decreases its channel exactly, everywhere") {
    Rng rng(13);
    const auto d = dims_of(2, 2, 1, 2);
    auto x = random_feature_map(d, rng);
    auto red = make_constant(Tensor<double>(Shape{2, 1}, {-0.5, 0.25}));
    auto bn = BatchNormState<double>::make(2);
    bn.mode = Mode::eval;
    auto upd = update_feature_maps(x, red, bn, d);
    for (std::int64_t p = 0; p < 4; ++p) {
        CHECK(upd.carried->value.at(0, p) == x->value.at(0, p) - 0.5);
        CHECK(upd.carried->value.at(1, p) == x->value.at(1, p) + 0.25);
    }
}

TEST_CASE("update: scalar pipeline matches a hand computation") {
    // c=2, n=1, h=w=1: one position, hand-specified eval statistics
    const auto d = dims_of(2, 1, 1, 1);
    auto x = make_constant(Tensor<double>(Shape{2, 1}, {1.0, 0.2}));
    auto red = make_constant(Tensor<double>(Shape{2, 1}, {-0.4, -0.5}));
    auto bn = BatchNormState<double>::make(2);
    bn.mode = Mode::eval;
    bn.running_mean = Tensor<double>(Shape{2}, {0.1, 0.0});
    bn.running_var = Tensor<double>(Shape{2}, {4.0, 1.0});
    bn.gamma->value = Tensor<double>(Shape{2}, {2.0, 1.0});
    bn.beta->value = Tensor<double>(Shape{2}, {0.05, 0.0});
    auto upd = update_feature_maps(x, red, bn, d);
    // channel 0: add -> 0.6; normalize -> (0.6-0.1)/sqrt(4+1e-5); affine *2+0.05; relu
    const double n0 = (0.6 - 0.1) / std::sqrt(4.0 + 1e-5) * 2.0 + 0.05;
    // channel 1: add -> -0.3; normalize -> -0.3/sqrt(1+1e-5); relu clamps to 0
    CHECK(upd.carried->value[0] == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(upd.carried->value[1] == doctest::Approx(-0.3).epsilon(1e-12));
    CHECK(upd.reduced->value[0] == doctest::Approx(n0).epsilon(1e-9));
    CHECK(upd.reduced->value[1] == 0.0);
}

TEST_CASE("run_glimpses: one glimpse equals attention plus summary") {
    Rng rng(17);
    const auto d = dims_of(4, 2, 2, 1);
    auto x = random_feature_map(d, rng);
    auto params = RraParams<double>::make(4, 1, rng);
    auto run = run_glimpses(x, params, d);
    REQUIRE(run.states.size() == 1);
    CHECK(run.states[0].reduction == nullptr);

    auto a = attention_weights(x, params.stages[0].attn_proj, d);
    auto s = summarize(x, a, d);
    for (std::int64_t i = 0; i < s->value.numel(); ++i)
        CHECK(run.states[0].summary->value[i] == doctest::Approx(s->value[i]).epsilon(1e-15));
}

TEST_CASE("run_glimpses: state count tracks the glimpse count") {
    Rng rng(19);
    const auto d = dims_of(3, 2, 2, 2);
    auto x = random_feature_map(d, rng);
    for (int k = 1; k <= 5; ++k) {
        auto params = RraParams<double>::make(3, k, rng);
        auto run = run_glimpses(x, params, d);
        CHECK(run.states.size() == static_cast<std::size_t>(k));
        CHECK(run.carried.size() == static_cast<std::size_t>(k));
        CHECK(run.reduced.size() == static_cast<std::size_t>(k));
        for (int j = 0; j + 1 < k; ++j) CHECK(run.states[static_cast<std::size_t>(j)].reduction != nullptr);
        CHECK(run.states[static_cast<std::size_t>(k - 1)].reduction == nullptr);
    }
}

TEST_CASE("run_glimpses K=2 equals manual composition of the four block ops") {
    Rng rng(23);
    const auto d = dims_of(4, 2, 2, 2);
    auto x = random_feature_map(d, rng);
    auto params = RraParams<double>::make(4, 2, rng);
    params.set_mode(Mode::train);
    auto run = run_glimpses(x, params, d);

    // manual composition with a separate but identical normalization state
    auto bn = BatchNormState<double>::make(4);
    bn.mode = Mode::train;
    bn.gamma = params.stages[0].bn.gamma;
    bn.beta = params.stages[0].bn.beta;
    auto a1 = attention_weights(x, params.stages[0].attn_proj, d);
    auto s1 = summarize(x, a1, d);
    auto r1 = reduction_vector(s1, params.stages[0].reduce_weight, params.stages[0].reduce_bias);
    auto upd = update_feature_maps(x, r1, bn, d);
    auto a2 = attention_weights(upd.reduced, params.stages[1].attn_proj, d);
    auto s2 = summarize(upd.reduced, a2, d);

    for (std::int64_t i = 0; i < s1->value.numel(); ++i) {
        CHECK(run.states[0].summary->value[i] == doctest::Approx(s1->value[i]).epsilon(1e-15));
        CHECK(run.states[1].summary->value[i] == doctest::Approx(s2->value[i]).epsilon(1e-15));
    }
    for (std::int64_t i = 0; i < a2->value.numel(); ++i)
        CHECK(run.states[1].attention->value[i] == doctest::Approx(a2->value[i]).epsilon(1e-15));
}

TEST_CASE("attention output: strictly positive weights summing to one per video") {
    Rng rng(29);
    const auto d = dims_of(5, 2, 2, 2, /*batch=*/3);
    auto x = random_feature_map(d, rng);
    auto params = RraParams<double>::make(5, 3, rng);
    params.set_mode(Mode::train);
    auto run = run_glimpses(x, params, d);
    for (const auto& state : run.states) {
        const auto& a = state.attention->value;
        for (std::int64_t b = 0; b < d.batch; ++b) {
            double sum = 0;
            for (std::int64_t i = 0; i < d.positions_per_video(); ++i) {
                const double v = a[b * d.positions_per_video() + i];
                CHECK(v > 0.0);
                CHECK(v < 1.0);
                sum += v;
            }
            CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
        }
        if (state.reduction)
            for (std::int64_t i = 0; i < state.reduction->value.numel(); ++i) {
                CHECK(state.reduction->value[i] > -1.0);
                CHECK(state.reduction->value[i] < 1.0);
            }
    }
}

TEST_CASE("joint permutation of positions leaves the summary unchanged") {
    Rng rng(31);
    const auto d = dims_of(4, 2, 2, 2);
    const std::int64_t m = d.total_positions();
    auto x = random_feature_map(d, rng);
    auto params = RraParams<double>::make(4, 1, rng);
    auto base = run_glimpses(x, params, d);

    // random permutation of the position columns
    std::vector<std::int64_t> perm(static_cast<std::size_t>(m));
    for (std::int64_t i = 0; i < m; ++i) perm[static_cast<std::size_t>(i)] = i;
    for (std::size_t i = perm.size(); i > 1; --i)
        std::swap(perm[i - 1], perm[static_cast<std::size_t>(rng.index(static_cast<std::int64_t>(i)))]);
    Tensor<double> permuted(x->value.shape());
    for (std::int64_t j = 0; j < d.channels; ++j)
        for (std::int64_t p = 0; p < m; ++p)
            permuted.at(j, perm[static_cast<std::size_t>(p)]) = x->value.at(j, p);
    auto shuffled = run_glimpses(make_constant(std::move(permuted)), params, d);

    for (std::int64_t i = 0; i < d.channels; ++i)
        CHECK(std::abs(base.states[0].summary->value[i] - shuffled.states[0].summary->value[i]) <= 1e-12);
    // attention weights permute along with the columns
    for (std::int64_t p = 0; p < m; ++p)
        CHECK(std::abs(base.states[0].attention->value[p] -
                       shuffled.states[0].attention->value[perm[static_cast<std::size_t>(p)]]) <= 1e-12);
}

TEST_CASE("channel permutation equivariance of summary and reduction") {
    Rng rng(37);
    const auto d = dims_of(4, 1, 2, 2);
    auto x = random_feature_map(d, rng);
    auto params = RraParams<double>::make(4, 2, rng);
    params.set_mode(Mode::eval);
    auto base = run_glimpses(x, params, d);

    const std::vector<std::int64_t> perm{2, 0, 3, 1};
    Tensor<double> px(x->value.shape());
    for (std::int64_t j = 0; j < 4; ++j)
        for (std::int64_t p = 0; p < d.total_positions(); ++p)
            px.at(perm[static_cast<std::size_t>(j)], p) = x->value.at(j, p);

    auto pparams = RraParams<double>::make(4, 2, rng);
    pparams.set_mode(Mode::eval);
    for (std::size_t k = 0; k < 2; ++k) {
        for (std::int64_t j = 0; j < 4; ++j) {
            pparams.stages[k].attn_proj->value[perm[static_cast<std::size_t>(j)]] =
                params.stages[k].attn_proj->value[j];
        }
        if (!params.stages[k].has_update) continue;
        for (std::int64_t r = 0; r < 4; ++r)
            for (std::int64_t c = 0; c < 4; ++c)
                pparams.stages[k].reduce_weight->value.at(perm[static_cast<std::size_t>(r)],
                                                          perm[static_cast<std::size_t>(c)]) =
                    params.stages[k].reduce_weight->value.at(r, c);
        for (std::int64_t j = 0; j < 4; ++j) {
            const auto pj = perm[static_cast<std::size_t>(j)];
            pparams.stages[k].reduce_bias->value[pj] = params.stages[k].reduce_bias->value[j];
            pparams.stages[k].bn.gamma->value[pj] = params.stages[k].bn.gamma->value[j];
            pparams.stages[k].bn.beta->value[pj] = params.stages[k].bn.beta->value[j];
            pparams.stages[k].bn.running_mean[pj] = params.stages[k].bn.running_mean[j];
            pparams.stages[k].bn.running_var[pj] = params.stages[k].bn.running_var[j];
        }
    }
    auto shuffled = run_glimpses(make_constant(std::move(px)), pparams, d);
    for (std::size_t k = 0; k < 2; ++k)
        for (std::int64_t j = 0; j < 4; ++j) {
            CHECK(shuffled.states[k].summary->value[perm[static_cast<std::size_t>(j)]] ==
                  doctest::Approx(base.states[k].summary->value[j]).epsilon(1e-12));
            if (base.states[k].reduction)
                CHECK(shuffled.states[k].reduction->value[perm[static_cast<std::size_t>(j)]] ==
                      doctest::Approx(base.states[k].reduction->value[j]).epsilon(1e-12));
        }
}

TEST_CASE("full block gradient check through two iterations, train-mode normalization") {
    // Two caveats make this check need a careful operating point. First, the
    // normalized map feeds a ReLU, and finite differences are only valid away
    // from its kink, so pick a seed whose forward pass keeps every pre-ReLU
    // entry clear of zero. Second, the batch must hold at least two videos:
    // with a single video the per-channel reduction is constant across every
    // position the statistics pool over, mean subtraction cancels it exactly,
    // and the reduction parameters get a zero gradient.
    const auto d = dims_of(4, 2, 2, 2, /*batch=*/2);
    NodePtr<double> x;
    RraParams<double> params;
    Tensor<double> probe;
    for (std::uint64_t seed = 41;; ++seed) {
        Rng rng(seed);
        x = make_leaf(Tensor<double>::uniform(Shape{4, d.total_positions()}, 0.05, 1.0, rng), true);
        params = RraParams<double>::make(4, 2, rng);
        params.set_mode(Mode::train);
        probe = probe_tensor(Shape{4, 2}, rng);
        auto bn_out = run_glimpses(x, params, d, RraVariant::no_relu); // same pipeline up to the kink
        double margin = 1e9;
        for (std::int64_t i = 0; i < bn_out.reduced[1]->value.numel(); ++i)
            margin = std::min(margin, std::abs(bn_out.reduced[1]->value[i]));
        if (margin > 2e-3) break;
        REQUIRE(seed < 140); // a kink-free draw shows up quickly
    }

    std::vector<NodePtr<double>> leaves{x};
    ParamList<double> plist;
    params.collect_params(plist);
    for (const auto& p : plist) leaves.push_back(p.node);

    auto report = grad_check<double>(
        [&] {
            auto run = run_glimpses(x, params, d);
            auto objective = add(inner_const(run.states[0].summary, probe),
                                 inner_const(run.states[1].summary, probe));
            return objective;
        },
        leaves);
    CHECK(report.max_rel_err <= 1e-4);
}

TEST_CASE("parallel glimpses: identical heads give identical summaries, no reductions") {
    Rng rng(43);
    const auto d = dims_of(4, 2, 2, 1);
    auto x = random_feature_map(d, rng);
    auto params = RraParams<double>::make(4, 3, rng);
    // force identical attention projections
    for (auto& st : params.stages) st.attn_proj->value = params.stages[0].attn_proj->value;
    auto run = parallel_glimpses(x, params, d);
    REQUIRE(run.states.size() == 3);
    for (const auto& state : run.states) {
        CHECK(state.reduction == nullptr); // no suppression vectors, structurally
        for (std::int64_t i = 0; i < 4; ++i)
            CHECK(state.summary->value[i] == run.states[0].summary->value[i]);
    }
}

TEST_CASE("parallel glimpses with K=1 equal the iterative block") {
    Rng rng(47);
    const auto d = dims_of(3, 2, 2, 2);
    auto x = random_feature_map(d, rng);
    auto params = RraParams<double>::make(3, 1, rng);
    auto iterative = run_glimpses(x, params, d);
    auto parallel = parallel_glimpses(x, params, d);
    for (std::int64_t i = 0; i < 3; ++i)
        CHECK(iterative.states[0].summary->value[i] == parallel.states[0].summary->value[i]);
}

TEST_CASE("ablations: average pooling equals attention with a zeroed projection") {
    Rng rng(53);
    const auto d = dims_of(4, 2, 2, 2);
    auto x = random_feature_map(d, rng);
    auto params = RraParams<double>::make(4, 2, rng);
    params.set_mode(Mode::eval);
    auto pooled = run_glimpses(x, params, d, RraVariant::avg_pool);

    auto zeroed = RraParams<double>::make(4, 2, rng);
    zeroed.set_mode(Mode::eval);
    for (std::size_t k = 0; k < 2; ++k) {
        zeroed.stages[k].attn_proj->value.fill(0.0);
        if (!params.stages[k].has_update) continue;
        zeroed.stages[k].reduce_weight->value = params.stages[k].reduce_weight->value;
        zeroed.stages[k].reduce_bias->value = params.stages[k].reduce_bias->value;
    }
    auto uniform = run_glimpses(x, zeroed, d, RraVariant::full);
    for (std::size_t k = 0; k < 2; ++k)
        for (std::int64_t i = 0; i < 4; ++i)
            CHECK(pooled.states[k].summary->value[i] ==
                  doctest::Approx(uniform.states[k].summary->value[i]).epsilon(1e-12));
}

TEST_CASE("ablations: linear reduction is unbounded, neg_relu only suppresses") {
    Rng rng(59);
    const auto d = dims_of(3, 1, 2, 2);
    auto x = random_feature_map(d, rng);
    auto params = RraParams<double>::make(3, 2, rng);
    params.set_mode(Mode::eval);
    // bias far outside (-1, 1) shows the missing tanh
    params.stages[0].reduce_bias->value.fill(5.0);
    auto linear = run_glimpses(x, params, d, RraVariant::no_tanh);
    bool outside = false;
    for (std::int64_t i = 0; i < 3; ++i)
        if (std::abs(linear.states[0].reduction->value[i]) >= 1.0) outside = true;
    CHECK(outside);

    auto neg = run_glimpses(x, params, d, RraVariant::neg_relu);
    for (std::int64_t i = 0; i < 3; ++i) CHECK(neg.states[0].reduction->value[i] <= 0.0);
}

TEST_CASE("ablations: spatial attention on a single frame equals the joint attention") {
    Rng rng(61);
    const auto d = dims_of(4, 1, 2, 2); // one frame
    auto x = random_feature_map(d, rng);
    auto params = RraParams<double>::make(4, 1, rng);
    auto joint = run_glimpses(x, params, d, RraVariant::full);
    auto spatial = run_glimpses(x, params, d, RraVariant::spatial_attention);
    for (std::int64_t i = 0; i < d.total_positions(); ++i)
        CHECK(joint.states[0].attention->value[i] ==
              doctest::Approx(spatial.states[0].attention->value[i]).epsilon(1e-12));
}

TEST_CASE("ablations: spatial attention weights sum to one per video over many frames") {
    Rng rng(67);
    const auto d = dims_of(3, 4, 2, 2, /*batch=*/2);
    auto x = random_feature_map(d, rng);
    auto params = RraParams<double>::make(3, 1, rng);
    auto run = run_glimpses(x, params, d, RraVariant::spatial_attention);
    const auto& a = run.states[0].attention->value;
    for (std::int64_t b = 0; b < 2; ++b) {
        double sum = 0;
        for (std::int64_t i = 0; i < d.positions_per_video(); ++i)
            sum += a[b * d.positions_per_video() + i];
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("suppression monotonicity: negative entries shrink their channel strictly") {
    Rng rng(71);
    const auto d = dims_of(3, 2, 2, 2);
    auto x = random_feature_map(d, rng);
    auto params = RraParams<double>::make(3, 2, rng);
    params.set_mode(Mode::train);
    auto run = run_glimpses(x, params, d);
    const auto& reduction = run.states[0].reduction->value;
    const auto& before = run.carried[0]->value;
    const auto& after = run.carried[1]->value;
    for (std::int64_t j = 0; j < 3; ++j)
        for (std::int64_t p = 0; p < d.total_positions(); ++p) {
            const double delta = after.at(j, p) - before.at(j, p);
            CHECK(delta == doctest::Approx(reduction[j]).epsilon(1e-12));
            if (reduction[j] < 0.0) CHECK(after.at(j, p) < before.at(j, p));
        }
}

TEST_CASE("unknown variant name is rejected") {
    CHECK_THROWS_AS(rra_variant_from("bogus"), std::invalid_argument);
    CHECK(rra_variant_from("avg_pool") == RraVariant::avg_pool);
    CHECK(rra_variant_from("spatial") == RraVariant::spatial_attention);
}
