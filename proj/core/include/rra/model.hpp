#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "rra/backbone.hpp"
#include "rra/heads.hpp"
#include "rra/rra_block.hpp"

namespace rra {

template <class S>
struct ModelConfig {
    BackboneConfig backbone;
    std::int64_t num_classes = 10;
    int glimpses = 4;
    RraVariant variant = RraVariant::full;
    bool parallel_attention = false; // baseline: independent heads, no updates
    double dropout = 0.7;
    std::uint64_t init_seed = 1;

    void validate() const {
        backbone.validate();
        if (num_classes < 2) throw std::invalid_argument("ModelConfig: need at least two classes");
        if (glimpses < 1) throw std::invalid_argument("ModelConfig: glimpses must be >= 1");
        if (dropout < 0.0 || dropout >= 1.0)
            throw std::invalid_argument("ModelConfig: dropout must lie in [0, 1)");
    }
};

template <class S>
struct ModelOutput {
    NodePtr<S> input; // frame-stack leaf (gradients reach pixels through it)
    GlimpseRun<S> rra;
    std::vector<NodePtr<S>> scores; // per glimpse [classes x batch]
    std::vector<NodePtr<S>> probs;  // per glimpse [classes x batch]
    FeatureDims dims;
};

/// Feature extractor + iterative glimpse block + per-glimpse classifiers.
template <class S>
class Model {
  public:
    explicit Model(ModelConfig<S> config) : config_(std::move(config)) {
        config_.validate();
        Rng rng(derive_seed(config_.init_seed, fnv1a("model-init")));
        backbone_ = Backbone<S>(config_.backbone, rng);
        rra_ = RraParams<S>::make(config_.backbone.feature_channels(), config_.glimpses, rng);
        heads_ = ClassifierParams<S>::make(config_.num_classes, config_.backbone.feature_channels(),
                                           config_.glimpses, config_.dropout, rng);
    }

    /// frames: [batch*clips, in_channels, H, W], video-major frame order.
    /// `input_grad` makes the frame leaf differentiable (for saliency).
    ModelOutput<S> forward(const Tensor<S>& frames, std::int64_t clips_per_video, Mode mode,
                           std::uint64_t dropout_seed = 0, bool input_grad = false) {
        if (frames.ndim() != 4) throw std::invalid_argument("Model::forward: frames must be [N, C, H, W]");
        if (clips_per_video < 1 || frames.extent(0) % clips_per_video != 0)
            throw std::invalid_argument("Model::forward: frame count not divisible by clips_per_video");

        ModelOutput<S> out;
        out.input = make_leaf(frames, input_grad, "input");
        backbone_.set_freeze_bn_stats(freeze_bn_stats_);
        rra_.set_mode(mode, freeze_bn_stats_);

        auto feature_stack = backbone_.forward(out.input, mode);
        out.dims.channels = feature_stack->value.extent(1);
        out.dims.clips = clips_per_video;
        out.dims.height = feature_stack->value.extent(2);
        out.dims.width = feature_stack->value.extent(3);
        out.dims.batch = frames.extent(0) / clips_per_video;

        auto features = images_to_feature_matrix(feature_stack);
        out.rra = config_.parallel_attention ? parallel_glimpses(features, rra_, out.dims)
                                             : run_glimpses(features, rra_, out.dims, config_.variant);

        for (int k = 0; k < config_.glimpses; ++k) {
            auto scored = glimpse_score(out.rra.states[static_cast<std::size_t>(k)].summary,
                                        heads_.heads[static_cast<std::size_t>(k)], mode, heads_.dropout,
                                        derive_seed(dropout_seed, static_cast<std::uint64_t>(k)));
            out.scores.push_back(scored.scores);
            out.probs.push_back(scored.probs);
        }
        return out;
    }

    ParamList<S> parameters() const {
        ParamList<S> out;
        backbone_.collect_params(out);
        rra_.collect_params(out);
        heads_.collect_params(out);
        return out;
    }

    std::vector<std::pair<std::string, Tensor<S>*>> state_tensors() {
        std::vector<std::pair<std::string, Tensor<S>*>> out;
        backbone_.collect_state(out);
        rra_.collect_state(out);
        return out;
    }

    void zero_grad() {
        for (auto& p : parameters()) p.node->zero_grad();
    }

    void set_backbone_frozen(bool flag) { backbone_.set_frozen(flag); }
    bool backbone_frozen() const { return backbone_.frozen(); }
    void set_freeze_bn_stats(bool flag) { freeze_bn_stats_ = flag; }

    const ModelConfig<S>& config() const { return config_; }
    Backbone<S>& backbone() { return backbone_; }
    RraParams<S>& rra() { return rra_; }
    ClassifierParams<S>& heads() { return heads_; }

  private:
    ModelConfig<S> config_;
    Backbone<S> backbone_;
    RraParams<S> rra_;
    ClassifierParams<S> heads_;
    bool freeze_bn_stats_ = false;
};

/// One-hot [classes x batch] target matrix.
template <class S>
Tensor<S> one_hot_columns(const std::vector<int>& labels, std::int64_t classes) {
    Tensor<S> out(Shape{classes, static_cast<std::int64_t>(labels.size())});
    for (std::size_t b = 0; b < labels.size(); ++b) {
        if (labels[b] < 0 || labels[b] >= classes)
            throw std::invalid_argument("one_hot_columns: label out of range");
        out.at(labels[b], static_cast<std::int64_t>(b)) = S(1);
    }
    return out;
}

} // namespace rra
