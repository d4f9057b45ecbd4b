#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "rra/ops.hpp"
#include "rra/params.hpp"

namespace rra {

/// Per-glimpse softmax classifier parameters.
template <class S>
struct GlimpseHead {
    NodePtr<S> weight; // [classes x c]
    NodePtr<S> bias;   // [classes]
};

template <class S>
struct ClassifierParams {
    std::vector<GlimpseHead<S>> heads; // one per glimpse
    double dropout = 0.0;

    static ClassifierParams make(std::int64_t classes, std::int64_t channels, int glimpse_count,
                                 double dropout, Rng& rng) {
        if (dropout < 0.0 || dropout >= 1.0)
            throw std::invalid_argument("ClassifierParams: dropout must lie in [0, 1)");
        ClassifierParams p;
        p.dropout = dropout;
        const S bound = S(1) / std::sqrt(static_cast<S>(channels));
        for (int k = 0; k < glimpse_count; ++k) {
            const std::string prefix = "head.g" + std::to_string(k) + ".";
            GlimpseHead<S> head;
            head.weight = make_leaf(Tensor<S>::uniform(Shape{classes, channels}, -bound, bound, rng), true,
                                    prefix + "weight");
            head.bias = make_leaf(Tensor<S>::zeros(Shape{classes}), true, prefix + "bias");
            p.heads.push_back(std::move(head));
        }
        return p;
    }

    void collect_params(ParamList<S>& out) const {
        for (const auto& h : heads) {
            out.push_back({h.weight->name, h.weight, false});
            out.push_back({h.bias->name, h.bias, false});
        }
    }
};

/// Which loss terms are active and their weights.
struct LossSpec {
    bool use_concat = false;
    bool use_individual = true;
    bool use_ensemble = false;
    double weight_concat = 1.0;
    double weight_individual = 1.0;
    double weight_ensemble = 1.0;

    void validate() const {
        if (!use_concat && !use_individual && !use_ensemble)
            throw std::invalid_argument("LossSpec: at least one loss must be enabled");
    }

    std::string str() const {
        std::string s;
        auto append = [&s](const char* tok) {
            if (!s.empty()) s += '+';
            s += tok;
        };
        if (use_concat) append("lc");
        if (use_individual) append("li");
        if (use_ensemble) append("le");
        return s;
    }

    /// Parses "lc", "li+le", "lc+li+le", ... (case-insensitive, any order).
    static LossSpec parse(const std::string& text);
};

template <class S>
struct GlimpseScore {
    NodePtr<S> scores; // [classes x batch], raw
    NodePtr<S> probs;  // column softmax of scores
};

/// Classifier for one glimpse: dropout on the summary (train mode only),
/// affine map, column softmax.
template <class S>
GlimpseScore<S> glimpse_score(const NodePtr<S>& summary, const GlimpseHead<S>& head, Mode mode,
                              double dropout_p, std::uint64_t dropout_seed) {
    auto x = dropout(summary, dropout_p, mode, dropout_seed);
    auto lin = matmul(head.weight, x);
    GlimpseScore<S> out;
    out.scores = broadcast_add_channel(lin, head.bias);
    out.probs = softmax_cols(out.scores);
    return out;
}

/// Cross entropy of the softmax of summed raw scores (mean over batch
/// columns).
template <class S>
NodePtr<S> concat_loss(const std::vector<NodePtr<S>>& scores, const Tensor<S>& targets) {
    if (scores.empty()) throw std::invalid_argument("concat_loss: needs at least one glimpse");
    NodePtr<S> total = scores[0];
    for (std::size_t k = 1; k < scores.size(); ++k) total = add(total, scores[k]);
    return cross_entropy_cols_mean(softmax_cols(total), targets);
}

/// Sum over glimpses of per-glimpse cross entropies.
template <class S>
NodePtr<S> individual_loss(const std::vector<NodePtr<S>>& probs, const Tensor<S>& targets) {
    if (probs.empty()) throw std::invalid_argument("individual_loss: needs at least one glimpse");
    NodePtr<S> total = cross_entropy_cols_mean(probs[0], targets);
    for (std::size_t k = 1; k < probs.size(); ++k)
        total = add(total, cross_entropy_cols_mean(probs[k], targets));
    return total;
}

/// Cross entropy of the averaged glimpse distributions (average of
/// probabilities, not of raw scores).
template <class S>
NodePtr<S> ensemble_loss(const std::vector<NodePtr<S>>& probs, const Tensor<S>& targets) {
    if (probs.empty()) throw std::invalid_argument("ensemble_loss: needs at least one glimpse");
    NodePtr<S> sum = probs[0];
    for (std::size_t k = 1; k < probs.size(); ++k) sum = add(sum, probs[k]);
    auto mean = scale(sum, S(1) / static_cast<S>(probs.size()));
    return cross_entropy_cols_mean(mean, targets);
}

struct LossBreakdown {
    std::optional<double> concat;
    std::optional<double> individual;
    std::optional<double> ensemble;
    double total = 0.0;
};

template <class S>
struct TotalLoss {
    NodePtr<S> node;
    LossBreakdown breakdown;
};

/// Weighted sum of the enabled losses; gradients flow into every glimpse.
template <class S>
TotalLoss<S> total_loss(const LossSpec& spec, const std::vector<NodePtr<S>>& scores,
                        const std::vector<NodePtr<S>>& probs, const Tensor<S>& targets) {
    spec.validate();
    TotalLoss<S> out;
    NodePtr<S> acc;
    auto accumulate = [&acc](NodePtr<S> term, double weight) {
        auto weighted = weight == 1.0 ? term : scale(term, static_cast<S>(weight));
        acc = acc ? add(acc, weighted) : weighted;
    };
    if (spec.use_concat) {
        auto term = concat_loss(scores, targets);
        out.breakdown.concat = static_cast<double>(term->value.item());
        accumulate(term, spec.weight_concat);
    }
    if (spec.use_individual) {
        auto term = individual_loss(probs, targets);
        out.breakdown.individual = static_cast<double>(term->value.item());
        accumulate(term, spec.weight_individual);
    }
    if (spec.use_ensemble) {
        auto term = ensemble_loss(probs, targets);
        out.breakdown.ensemble = static_cast<double>(term->value.item());
        accumulate(term, spec.weight_ensemble);
    }
    out.node = acc;
    out.breakdown.total = static_cast<double>(acc->value.item());
    return out;
}

// ---------------------------------------------------------------------------
// prediction (plain tensors, no graph)
// ---------------------------------------------------------------------------

enum class PredictMode { ensemble, concat };

template <class S>
Tensor<S> softmax_tensor(const Tensor<S>& v) {
    Tensor<S> out(v.shape());
    S mx = v[0];
    for (std::int64_t i = 1; i < v.numel(); ++i) mx = std::max(mx, v[i]);
    S sum = 0;
    for (std::int64_t i = 0; i < v.numel(); ++i) {
        out[i] = std::exp(v[i] - mx);
        sum += out[i];
    }
    for (std::int64_t i = 0; i < v.numel(); ++i) out[i] /= sum;
    return out;
}

template <class S>
struct Prediction {
    Tensor<S> scores; // class distribution (ensemble) or softmax of summed scores (concat)
    int label = 0;    // argmax, lowest index on ties
};

/// Final prediction from per-glimpse raw score vectors [classes].
template <class S>
Prediction<S> predict(const std::vector<Tensor<S>>& glimpse_scores, PredictMode mode) {
    if (glimpse_scores.empty()) throw std::invalid_argument("predict: needs at least one glimpse");
    const std::int64_t classes = glimpse_scores[0].numel();
    Prediction<S> out;
    if (mode == PredictMode::concat) {
        Tensor<S> sum(glimpse_scores[0].shape());
        for (const auto& s : glimpse_scores)
            for (std::int64_t i = 0; i < classes; ++i) sum[i] += s[i];
        out.scores = softmax_tensor(sum);
    } else {
        Tensor<S> mean(glimpse_scores[0].shape());
        for (const auto& s : glimpse_scores) {
            auto p = softmax_tensor(s);
            for (std::int64_t i = 0; i < classes; ++i) mean[i] += p[i];
        }
        for (std::int64_t i = 0; i < classes; ++i) mean[i] /= static_cast<S>(glimpse_scores.size());
        out.scores = std::move(mean);
    }
    int best = 0;
    for (std::int64_t i = 1; i < classes; ++i)
        if (out.scores[i] > out.scores[best]) best = static_cast<int>(i);
    out.label = best;
    return out;
}

} // namespace rra
