#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "rra/ops.hpp"
#include "rra/params.hpp"

namespace rra {

/// The structural variants studied by the component ablations. `full` is the
/// standard block; the others replace or drop exactly one piece.
enum class RraVariant {
    full,
    avg_pool,          // uniform weights instead of learned attention
    spatial_attention, // softmax per frame, frames averaged
    no_batchnorm,
    no_relu,
    no_tanh,  // linear reduction
    neg_relu, // -ReLU(x) reduction activation
};

inline const char* rra_variant_name(RraVariant v) {
    switch (v) {
        case RraVariant::full: return "full";
        case RraVariant::avg_pool: return "avg_pool";
        case RraVariant::spatial_attention: return "spatial";
        case RraVariant::no_batchnorm: return "no_bn";
        case RraVariant::no_relu: return "no_relu";
        case RraVariant::no_tanh: return "no_tanh";
        case RraVariant::neg_relu: return "neg_relu";
    }
    return "?";
}

RraVariant rra_variant_from(const std::string& name);

/// Geometry of a feature-matrix batch: `batch` videos of `clips` frames whose
/// feature maps are height x width x channels. Columns of the [c x M] matrix
/// are grouped video-major, frame-next: position (b, t, r, q) sits at column
/// ((b*clips + t)*height + r)*width + q.
struct FeatureDims {
    std::int64_t channels = 0;
    std::int64_t clips = 0;
    std::int64_t height = 0;
    std::int64_t width = 0;
    std::int64_t batch = 1;

    std::int64_t positions_per_frame() const { return height * width; }
    std::int64_t positions_per_video() const { return clips * height * width; }
    std::int64_t total_positions() const { return batch * positions_per_video(); }
};

/// Parameters of one glimpse iteration. Every iteration owns its attention
/// projection; the reduction transform and its norm state exist only while
/// there is a following iteration to feed.
template <class S>
struct RraStage {
    NodePtr<S> attn_proj; // [c]
    bool has_update = false;
    NodePtr<S> reduce_weight; // [c x c]
    NodePtr<S> reduce_bias;   // [c]
    BatchNormState<S> bn;
};

template <class S>
struct RraParams {
    std::int64_t channels = 0;
    std::vector<RraStage<S>> stages; // one per glimpse

    int glimpses() const { return static_cast<int>(stages.size()); }

    static RraParams make(std::int64_t channels, int glimpse_count, Rng& rng) {
        if (glimpse_count < 1) throw std::invalid_argument("RraParams: glimpse count must be >= 1");
        RraParams p;
        p.channels = channels;
        const S bound = S(1) / std::sqrt(static_cast<S>(channels));
        for (int k = 0; k < glimpse_count; ++k) {
            RraStage<S> stage;
            const std::string prefix = "rra.g" + std::to_string(k) + ".";
            stage.attn_proj = make_leaf(Tensor<S>::uniform(Shape{channels}, -bound, bound, rng), true,
                                        prefix + "attn_proj");
            if (k + 1 < glimpse_count) {
                stage.has_update = true;
                stage.reduce_weight =
                    make_leaf(Tensor<S>::uniform(Shape{channels, channels}, -bound, bound, rng), true,
                              prefix + "reduce.weight");
                stage.reduce_bias =
                    make_leaf(Tensor<S>::zeros(Shape{channels}), true, prefix + "reduce.bias");
                stage.bn = BatchNormState<S>::make(channels);
            }
            p.stages.push_back(std::move(stage));
        }
        return p;
    }

    void set_mode(Mode mode, bool freeze_bn_stats = false) {
        for (auto& st : stages) {
            if (!st.has_update) continue;
            st.bn.mode = mode;
            st.bn.update_running_stats = !freeze_bn_stats;
        }
    }

    void collect_params(ParamList<S>& out) const {
        for (const auto& st : stages) {
            out.push_back({st.attn_proj->name, st.attn_proj, false});
            if (st.has_update) {
                out.push_back({st.reduce_weight->name, st.reduce_weight, false});
                out.push_back({st.reduce_bias->name, st.reduce_bias, false});
                const std::string prefix = st.attn_proj->name.substr(0, st.attn_proj->name.rfind('.') + 1);
                out.push_back({prefix + "bn.gamma", st.bn.gamma, false});
                out.push_back({prefix + "bn.beta", st.bn.beta, false});
            }
        }
    }

    void collect_state(std::vector<std::pair<std::string, Tensor<S>*>>& out) {
        for (std::size_t k = 0; k < stages.size(); ++k) {
            if (!stages[k].has_update) continue;
            const std::string prefix = "rra.g" + std::to_string(k) + ".bn.";
            out.push_back({prefix + "running_mean", &stages[k].bn.running_mean});
            out.push_back({prefix + "running_var", &stages[k].bn.running_var});
        }
    }
};

/// One glimpse: weights over all positions, the summary per video, and (when
/// an update follows) the per-channel reduction vector.
template <class S>
struct GlimpseState {
    int index = 0;
    NodePtr<S> attention; // [M], sums to 1 within each video block
    NodePtr<S> summary;   // [c x batch]
    NodePtr<S> reduction; // [c x batch], null for the final glimpse
};

template <class S>
struct GlimpseRun {
    std::vector<GlimpseState<S>> states;
    std::vector<NodePtr<S>> carried; // pre-norm maps X per iteration (carried[0] = input)
    std::vector<NodePtr<S>> reduced; // post-BN-ReLU maps feeding each iteration's attention
};

// ---------------------------------------------------------------------------
// the four block operations
// ---------------------------------------------------------------------------

/// Softmax attention over all clips*height*width positions of each video
/// jointly (one distribution per video block).
template <class S>
NodePtr<S> attention_weights(const NodePtr<S>& reduced_map, const NodePtr<S>& attn_proj,
                             const FeatureDims& dims) {
    return softmax_groups(matvec_t(reduced_map, attn_proj), dims.positions_per_video());
}

/// Attention-weighted sum of position feature vectors: [c x batch].
template <class S>
NodePtr<S> summarize(const NodePtr<S>& reduced_map, const NodePtr<S>& attention,
                     const FeatureDims& dims) {
    return group_weighted_sum(reduced_map, attention, dims.positions_per_video());
}

/// Per-channel reduction vector from a summary: act(W x + b), column-wise.
/// tanh keeps every entry strictly inside (-1, 1).
template <class S>
NodePtr<S> reduction_vector(const NodePtr<S>& summary, const NodePtr<S>& weight, const NodePtr<S>& bias,
                            Act act = Act::tanh) {
    auto lin = matmul(weight, summary);
    auto shifted = broadcast_add_channel(lin, bias);
    return activation(shifted, act);
}

template <class S>
struct FeatureUpdate {
    NodePtr<S> carried; // X + reduction, before normalization
    NodePtr<S> reduced; // after BN-ReLU (or the ablated pipeline)
};

/// Broadcasts the reduction across each video's positions, then normalizes
/// and thresholds. Returns both the pre-norm carry and the reduced map.
template <class S>
FeatureUpdate<S> update_feature_maps(const NodePtr<S>& features, const NodePtr<S>& reduction,
                                     BatchNormState<S>& bn, const FeatureDims& dims,
                                     RraVariant variant = RraVariant::full) {
    FeatureUpdate<S> out;
    out.carried = broadcast_add_groups(features, reduction, dims.positions_per_video());
    NodePtr<S> h = out.carried;
    if (variant != RraVariant::no_batchnorm) h = batchnorm_channels(h, bn);
    if (variant != RraVariant::no_relu) h = activation(h, Act::relu);
    out.reduced = h;
    return out;
}

namespace detail {

template <class S>
NodePtr<S> variant_attention(const NodePtr<S>& reduced_map, const RraStage<S>& stage,
                             const FeatureDims& dims, RraVariant variant) {
    switch (variant) {
        case RraVariant::avg_pool: {
            const std::int64_t m = dims.total_positions();
            const S u = S(1) / static_cast<S>(dims.positions_per_video());
            return make_constant(Tensor<S>::full(Shape{m}, u));
        }
        case RraVariant::spatial_attention: {
            // per-frame softmax, frames averaged: weights still sum to 1 per video
            auto per_frame = softmax_groups(matvec_t(reduced_map, stage.attn_proj),
                                            dims.positions_per_frame());
            return scale(per_frame, S(1) / static_cast<S>(dims.clips));
        }
        default: return attention_weights(reduced_map, stage.attn_proj, dims);
    }
}

inline Act reduction_act(RraVariant variant) {
    switch (variant) {
        case RraVariant::no_tanh: return Act::linear;
        case RraVariant::neg_relu: return Act::neg_relu;
        default: return Act::tanh;
    }
}

} // namespace detail

/// Iterative glimpse stack. The input map is both the first carry and the
/// first attention target; each non-final iteration appends the updated maps.
template <class S>
GlimpseRun<S> run_glimpses(const NodePtr<S>& features, RraParams<S>& params, const FeatureDims& dims,
                           RraVariant variant = RraVariant::full) {
    if (params.stages.empty()) throw std::invalid_argument("run_glimpses: no glimpse stages");
    GlimpseRun<S> run;
    run.carried.push_back(features);
    run.reduced.push_back(features);
    const int k_total = params.glimpses();
    for (int k = 0; k < k_total; ++k) {
        auto& stage = params.stages[static_cast<std::size_t>(k)];
        GlimpseState<S> state;
        state.index = k;
        state.attention = detail::variant_attention(run.reduced.back(), stage, dims, variant);
        state.summary = summarize(run.reduced.back(), state.attention, dims);
        if (stage.has_update) {
            state.reduction = reduction_vector(state.summary, stage.reduce_weight, stage.reduce_bias,
                                               detail::reduction_act(variant));
            auto update = update_feature_maps(run.carried.back(), state.reduction, stage.bn, dims, variant);
            run.carried.push_back(update.carried);
            run.reduced.push_back(update.reduced);
        }
        run.states.push_back(std::move(state));
    }
    return run;
}

/// Baseline: K independent attention heads over the unmodified input map.
/// No reduction vectors, no feature updates.
template <class S>
GlimpseRun<S> parallel_glimpses(const NodePtr<S>& features, RraParams<S>& params,
                                const FeatureDims& dims) {
    if (params.stages.empty()) throw std::invalid_argument("parallel_glimpses: no glimpse stages");
    GlimpseRun<S> run;
    run.carried.push_back(features);
    run.reduced.push_back(features);
    for (int k = 0; k < params.glimpses(); ++k) {
        auto& stage = params.stages[static_cast<std::size_t>(k)];
        GlimpseState<S> state;
        state.index = k;
        state.attention = attention_weights(features, stage.attn_proj, dims);
        state.summary = summarize(features, state.attention, dims);
        run.states.push_back(std::move(state));
    }
    return run;
}

} // namespace rra
