#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "rra/grad_check.hpp"
#include "rra/heads.hpp"
#include "rra/model.hpp"
#include "support/oracles.hpp"

using namespace rra;

namespace {

// random per-glimpse score columns [classes x 1] plus matching prob nodes
struct RandomGlimpses {
    std::vector<NodePtr<double>> scores;
    std::vector<NodePtr<double>> probs;
};

RandomGlimpses random_glimpses(int k, std::int64_t classes, Rng& rng) {
    RandomGlimpses g;
    for (int i = 0; i < k; ++i) {
        auto s = make_leaf(Tensor<double>::uniform(Shape{classes, 1}, -2.0, 2.0, rng), true);
        g.scores.push_back(s);
        g.probs.push_back(softmax_cols(s));
    }
    return g;
}

std::vector<double> column(const Tensor<double>& t, std::int64_t b = 0) {
    std::vector<double> out(static_cast<std::size_t>(t.rows()));
    for (std::int64_t i = 0; i < t.rows(); ++i) out[static_cast<std::size_t>(i)] = t.at(i, b);
    return out;
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

TEST_CASE("glimpse score: zero parameters give the uniform distribution") {
    Rng rng(3);
    GlimpseHead<double> head;
    head.weight = make_constant(Tensor<double>::zeros(Shape{4, 3}));
    head.bias = make_constant(Tensor<double>::zeros(Shape{4}));
    auto xhat = make_constant(Tensor<double>::uniform(Shape{3, 1}, -1.0, 1.0, rng));
    auto out = glimpse_score(xhat, head, Mode::eval, 0.5, 1);
    for (std::int64_t i = 0; i < 4; ++i) CHECK(out.probs->value.at(i, 0) == doctest::Approx(0.25));
}

TEST_CASE("glimpse score: eval mode ignores dropout") {
    Rng rng(5);
    GlimpseHead<double> head;
    head.weight = make_constant(Tensor<double>::uniform(Shape{4, 3}, -1.0, 1.0, rng));
    head.bias = make_constant(Tensor<double>::uniform(Shape{4}, -1.0, 1.0, rng));
    auto xhat = make_constant(Tensor<double>::uniform(Shape{3, 1}, -1.0, 1.0, rng));
    auto a = glimpse_score(xhat, head, Mode::eval, 0.7, 1);
    auto b = glimpse_score(xhat, head, Mode::eval, 0.7, 999);
    CHECK(a.scores->value == b.scores->value);
}

TEST_CASE("glimpse score: two-class closed form") {
    GlimpseHead<double> head;
    head.weight = make_constant(Tensor<double>::zeros(Shape{2, 1}));
    head.bias = make_constant(Tensor<double>(Shape{2}, {0.0, std::log(3.0)}));
    auto xhat = make_constant(Tensor<double>::zeros(Shape{1, 1}));
    auto out = glimpse_score(xhat, head, Mode::eval, 0.0, 1);
    CHECK(out.probs->value.at(0, 0) == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(out.probs->value.at(1, 0) == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("concat loss: single glimpse reduces to plain cross entropy") {
    Rng rng(7);
    auto g = random_glimpses(1, 4, rng);
    Tensor<double> y = one_hot_columns<double>({2}, 4);
    auto lc = concat_loss(g.scores, y);
    const auto expected = oracles::cross_entropy(oracles::softmax(column(g.scores[0]->value)),
                                                 {0, 0, 1, 0});
    CHECK(lc->value.item() == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("concat loss: opposite scores cancel to the uniform loss") {
    Rng rng(11);
    auto s1 = make_leaf(Tensor<double>::uniform(Shape{5, 1}, -2.0, 2.0, rng));
    Tensor<double> negated(Shape{5, 1});
    for (std::int64_t i = 0; i < 5; ++i) negated[i] = -s1->value[i];
    auto s2 = make_leaf(std::move(negated));
    Tensor<double> y = one_hot_columns<double>({0}, 5);
    auto lc = concat_loss({s1, s2}, y);
    CHECK(lc->value.item() == doctest::Approx(std::log(5.0)).epsilon(1e-12));
}

TEST_CASE("concat loss matches independent recomputation for K=3") {
    Rng rng(13);
    auto g = random_glimpses(3, 4, rng);
    Tensor<double> y = one_hot_columns<double>({1}, 4);
    auto lc = concat_loss(g.scores, y);
    std::vector<double> summed(4, 0.0);
    for (const auto& s : g.scores) {
        const auto col = column(s->value);
        for (int i = 0; i < 4; ++i) summed[static_cast<std::size_t>(i)] += col[static_cast<std::size_t>(i)];
    }
    const double expected = oracles::cross_entropy(oracles::softmax(summed), {0, 1, 0, 0});
    CHECK(lc->value.item() == doctest::Approx(expected).epsilon(1e-10));
}

TEST_CASE("individual loss: perfect one-hot glimpses cost nothing, duplicates scale linearly") {
    // one-hot columns: a softmax output cannot be exactly one-hot, so feed
    // prob leaves directly
    auto perfect = make_constant(Tensor<double>(Shape{3, 1}, {0, 1, 0}));
    Tensor<double> y = one_hot_columns<double>({1}, 3);
    auto li = individual_loss<double>({perfect, perfect, perfect}, y);
    CHECK(li->value.item() == doctest::Approx(0.0).epsilon(1e-9));

    Rng rng(17);
    auto g = random_glimpses(1, 4, rng);
    Tensor<double> y4 = one_hot_columns<double>({3}, 4);
    auto one = individual_loss(g.probs, y4);
    auto four = individual_loss<double>({g.probs[0], g.probs[0], g.probs[0], g.probs[0]}, y4);
    CHECK(four->value.item() == doctest::Approx(4.0 * one->value.item()).epsilon(1e-12));
}

TEST_CASE("individual loss matches the sum of independent cross entropies for K=4") {
    Rng rng(19);
    auto g = random_glimpses(4, 5, rng);
    Tensor<double> y = one_hot_columns<double>({2}, 5);
    auto li = individual_loss(g.probs, y);
    double expected = 0;
    for (const auto& p : g.probs)
        expected += oracles::cross_entropy(column(p->value), {0, 0, 1, 0, 0});
    CHECK(li->value.item() == doctest::Approx(expected).epsilon(1e-10));
}

TEST_CASE("ensemble loss: identical glimpses, split one-hots, Jensen bound") {
    Rng rng(23);
    auto g = random_glimpses(1, 4, rng);
    Tensor<double> y = one_hot_columns<double>({0}, 4);
    auto le_same = ensemble_loss<double>({g.probs[0], g.probs[0]}, y);
    const double single = oracles::cross_entropy(column(g.probs[0]->value), {1, 0, 0, 0});
    CHECK(le_same->value.item() == doctest::Approx(single).epsilon(1e-12));

    auto first = make_constant(Tensor<double>(Shape{2, 1}, {1, 0}));
    auto second = make_constant(Tensor<double>(Shape{2, 1}, {0, 1}));
    auto le_split = ensemble_loss<double>({first, second}, one_hot_columns<double>({0}, 2));
    CHECK(le_split->value.item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    // ensemble loss never exceeds the per-glimpse average (log concavity)
    for (int trial = 0; trial < 1000; ++trial) {
        Rng trng(derive_seed(900, static_cast<std::uint64_t>(trial)));
        const int k = 2 + static_cast<int>(trng.index(3));
        const std::int64_t classes = 2 + trng.index(4);
        auto glimpses = random_glimpses(k, classes, trng);
        std::vector<int> label{static_cast<int>(trng.index(classes))};
        Tensor<double> target = one_hot_columns<double>(label, classes);
        auto le = ensemble_loss(glimpses.probs, target);
        auto li = individual_loss(glimpses.probs, target);
        CHECK(le->value.item() <= li->value.item() / static_cast<double>(k) + 1e-12);
    }
}

TEST_CASE("total loss: single and combined terms match their parts") {
    Rng rng(29);
    auto g = random_glimpses(3, 4, rng);
    Tensor<double> y = one_hot_columns<double>({1}, 4);

    LossSpec only_i;
    auto ti = total_loss(only_i, g.scores, g.probs, y);
    auto li = individual_loss(g.probs, y);
    CHECK(ti.node->value.item() == doctest::Approx(li->value.item()).epsilon(1e-12));
    CHECK(ti.breakdown.individual.has_value());
    CHECK_FALSE(ti.breakdown.concat.has_value());

    LossSpec both = LossSpec::parse("li+le");
    auto tb = total_loss(both, g.scores, g.probs, y);
    auto le = ensemble_loss(g.probs, y);
    CHECK(tb.node->value.item() ==
          doctest::Approx(li->value.item() + le->value.item()).epsilon(1e-12));

    LossSpec all = LossSpec::parse("lc+li+le");
    auto ta = total_loss(all, g.scores, g.probs, y);
    auto lc = concat_loss(g.scores, y);
    CHECK(ta.node->value.item() ==
          doctest::Approx(lc->value.item() + li->value.item() + le->value.item()).epsilon(1e-12));

    LossSpec none;
    none.use_individual = false;
    CHECK_THROWS_AS(total_loss(none, g.scores, g.probs, y), std::invalid_argument);
}

TEST_CASE("loss spec parsing") {
    CHECK(LossSpec::parse("li").str() == "li");
    CHECK(LossSpec::parse("le+li").str() == "li+le"); // canonical order
    CHECK(LossSpec::parse("LC+LI+LE").str() == "lc+li+le");
    CHECK_THROWS_AS(LossSpec::parse("bogus"), std::invalid_argument);
    CHECK_THROWS_AS(LossSpec::parse(""), std::invalid_argument);
}

TEST_CASE("duplicated scores behave like temperature-scaled logits in the concat loss") {
    Rng rng(31);
    auto g = random_glimpses(1, 5, rng);
    Tensor<double> y = one_hot_columns<double>({4}, 5);
    const int k = 3;
    std::vector<NodePtr<double>> dup(static_cast<std::size_t>(k), g.scores[0]);
    auto lc = concat_loss(dup, y);
    std::vector<double> scaled = column(g.scores[0]->value);
    for (auto& v : scaled) v *= k;
    const double expected = oracles::cross_entropy(oracles::softmax(scaled), {0, 0, 0, 0, 1});
    CHECK(lc->value.item() == doctest::Approx(expected).epsilon(1e-10));
}

TEST_CASE("gradients of every loss through the glimpse classifier") {
    Rng rng(37);
    auto xhat = make_leaf(Tensor<double>::uniform(Shape{3, 2}, -1.0, 1.0, rng), true);
    GlimpseHead<double> head;
    head.weight = make_leaf(Tensor<double>::uniform(Shape{4, 3}, -1.0, 1.0, rng), true, "w");
    head.bias = make_leaf(Tensor<double>::uniform(Shape{4}, -0.5, 0.5, rng), true, "b");
    Tensor<double> y = one_hot_columns<double>({2, 0}, 4);

    for (const char* spec_text : {"lc", "li", "le", "lc+li+le"}) {
        const LossSpec spec = LossSpec::parse(spec_text);
        auto report = grad_check<double>(
            [&] {
                auto out = glimpse_score(xhat, head, Mode::eval, 0.0, 1);
                auto out2 = glimpse_score(xhat, head, Mode::eval, 0.0, 2);
                return total_loss(spec, {out.scores, out2.scores}, {out.probs, out2.probs}, y).node;
            },
            {xhat, head.weight, head.bias});
        CAPTURE(spec_text);
        CHECK(report.max_rel_err <= 1e-6);
    }
}

TEST_CASE("predict: both modes agree for one glimpse; ensemble keeps the common distribution") {
    Rng rng(41);
    Tensor<double> s = Tensor<double>::uniform(Shape{4}, -2.0, 2.0, rng);
    auto single_e = predict<double>({s}, PredictMode::ensemble);
    auto single_c = predict<double>({s}, PredictMode::concat);
    CHECK(single_e.label == single_c.label);
    for (std::int64_t i = 0; i < 4; ++i)
        CHECK(single_e.scores[i] == doctest::Approx(single_c.scores[i]).epsilon(1e-12));

    auto twice = predict<double>({s, s}, PredictMode::ensemble);
    const auto dist = softmax_tensor(s);
    for (std::int64_t i = 0; i < 4; ++i)
        CHECK(twice.scores[i] == doctest::Approx(dist[i]).epsilon(1e-12));
}

TEST_CASE("predict: positive scaling of all scores keeps the concat argmax") {
    Rng rng(43);
    for (int trial = 0; trial < 100; ++trial) {
        Rng trng(derive_seed(4000, static_cast<std::uint64_t>(trial)));
        std::vector<Tensor<double>> scores;
        for (int k = 0; k < 3; ++k)
            scores.push_back(Tensor<double>::uniform(Shape{5}, -2.0, 2.0, trng));
        const double factor = trng.uniform(0.1, 4.0);
        std::vector<Tensor<double>> scaled = scores;
        for (auto& s : scaled)
            for (std::int64_t i = 0; i < 5; ++i) s[i] *= factor;
        CHECK(predict(scores, PredictMode::concat).label == predict(scaled, PredictMode::concat).label);
    }
}

TEST_CASE("predict: argmax ties break toward the lowest class index") {
    Tensor<double> tie(Shape{3}, {1.0, 1.0, 0.0});
    CHECK(predict<double>({tie}, PredictMode::ensemble).label == 0);
}

TEST_CASE("ensemble output is a distribution") {
    Rng rng(47);
    for (int trial = 0; trial < 200; ++trial) {
        Rng trng(derive_seed(777, static_cast<std::uint64_t>(trial)));
        std::vector<Tensor<double>> scores;
        const int k = 1 + static_cast<int>(trng.index(4));
        for (int i = 0; i < k; ++i)
            scores.push_back(Tensor<double>::uniform(Shape{6}, -3.0, 3.0, trng));
        const auto p = predict(scores, PredictMode::ensemble);
        double sum = 0;
        for (std::int64_t i = 0; i < 6; ++i) {
            CHECK(p.scores[i] >= 0.0);
            sum += p.scores[i];
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("losses are non-negative and vanish only at a correct one-hot") {
    Rng rng(53);
    for (int trial = 0; trial < 300; ++trial) {
        Rng trng(derive_seed(31337, static_cast<std::uint64_t>(trial)));
        auto g = random_glimpses(2, 3, trng);
        Tensor<double> y = one_hot_columns<double>({static_cast<int>(trng.index(3))}, 3);
        CHECK(concat_loss(g.scores, y)->value.item() >= 0.0);
        CHECK(individual_loss(g.probs, y)->value.item() > 0.0); // softmax output is never one-hot
        CHECK(ensemble_loss(g.probs, y)->value.item() > 0.0);
    }
}
