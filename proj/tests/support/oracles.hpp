#pragma once

// Independent reference implementations used as test oracles. Everything in
// here is deliberately written from the definitions, without touching the
// graph machinery it checks.

#include <cmath>
#include <cstdint>
#include <vector>

#include "rra/dataset.hpp"
#include "rra/synthetic.hpp"
#include "rra/trainer.hpp"

namespace oracles {

inline std::vector<double> softmax(const std::vector<double>& v) {
    double mx = v[0];
    for (double x : v) mx = std::max(mx, x);
    std::vector<double> out(v.size());
    double sum = 0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        out[i] = std::exp(v[i] - mx);
        sum += out[i];
    }
    for (auto& x : out) x /= sum;
    return out;
}

inline double cross_entropy(const std::vector<double>& probs, const std::vector<double>& target) {
    double loss = 0;
    for (std::size_t i = 0; i < probs.size(); ++i)
        loss -= target[i] * std::log(std::max(probs[i], 1e-12));
    return loss;
}

/// Plain-loop Adam trajectory for a single parameter vector; returns the
/// parameter values after `steps` updates with gradient function g(x).
template <class GradFn>
std::vector<double> adam_trajectory(std::vector<double> x, GradFn grad, int steps, double lr,
                                    double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
    std::vector<double> m(x.size(), 0.0), v(x.size(), 0.0);
    for (int t = 1; t <= steps; ++t) {
        const auto g = grad(x);
        for (std::size_t i = 0; i < x.size(); ++i) {
            m[i] = beta1 * m[i] + (1 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1 - beta2) * g[i] * g[i];
            const double mh = m[i] / (1 - std::pow(beta1, t));
            const double vh = v[i] / (1 - std::pow(beta2, t));
            x[i] -= lr * mh / (std::sqrt(vh) + eps);
        }
    }
    return x;
}

/// Pixel-level nearest-template classifier: scans every frame position of a
/// video against every class patch and scores classes by the negated minimum
/// sum of squared differences. Exact on noise-free data because the planted
/// patch matches its template bit-for-bit.
class TemplateMatchScorer : public rra::Scorer {
  public:
    explicit TemplateMatchScorer(const rra::SyntheticSpec& spec) : spec_(spec) {
        for (int c = 0; c < spec.num_classes; ++c) templates_.push_back(rra::class_template(spec, c));
    }

    rra::Tensor<float> score(const rra::VideoSample& video) override {
        rra::Tensor<float> scores(rra::Shape{static_cast<std::int64_t>(templates_.size())});
        for (std::size_t cls = 0; cls < templates_.size(); ++cls)
            scores[static_cast<std::int64_t>(cls)] = -static_cast<float>(min_ssd(video, templates_[cls]));
        return scores;
    }

  private:
    double min_ssd(const rra::VideoSample& video, const rra::Tensor<float>& tpl) const {
        const std::int64_t t_count = video.frame_count(), c = video.channels();
        const std::int64_t h = video.height(), w = video.width();
        const std::int64_t p = tpl.extent(1);
        double best = std::numeric_limits<double>::infinity();
        for (std::int64_t t = 0; t < t_count; ++t)
            for (std::int64_t r0 = 0; r0 + p <= h; ++r0)
                for (std::int64_t q0 = 0; q0 + p <= w; ++q0) {
                    double ssd = 0;
                    for (std::int64_t j = 0; j < c && ssd < best; ++j)
                        for (std::int64_t r = 0; r < p; ++r)
                            for (std::int64_t q = 0; q < p; ++q) {
                                const double d =
                                    static_cast<double>(
                                        video.frames[((t * c + j) * h + (r0 + r)) * w + (q0 + q)]) -
                                    static_cast<double>(tpl[(j * p + r) * p + q]);
                                ssd += d * d;
                            }
                    best = std::min(best, ssd);
                }
        return best;
    }

    rra::SyntheticSpec spec_;
    std::vector<rra::Tensor<float>> templates_;
};

} // namespace oracles
