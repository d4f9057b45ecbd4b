#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "rra/ops.hpp"
#include "rra/params.hpp"

namespace rra {

struct ConvStage {
    std::int64_t out_channels = 8;
    std::int64_t kernel = 3;
    std::int64_t stride = 2;
};

/// Small stand-in feature extractor: a stack of conv(-BN)-ReLU stages with
/// shared weights across frames, padding kernel/2.
struct BackboneConfig {
    std::int64_t in_channels = 3;
    std::int64_t input_hw = 32;
    std::vector<ConvStage> stages{{8, 3, 2}, {16, 3, 2}, {32, 3, 2}};
    bool with_batchnorm = true;

    std::int64_t feature_channels() const { return stages.back().out_channels; }

    std::int64_t output_hw() const {
        std::int64_t hw = input_hw;
        for (const auto& st : stages) hw = (hw + 2 * (st.kernel / 2) - st.kernel) / st.stride + 1;
        return hw;
    }

    void validate() const {
        if (stages.empty()) throw std::invalid_argument("backbone: needs at least one stage");
        if (in_channels < 1 || input_hw < 1) throw std::invalid_argument("backbone: bad input geometry");
        for (const auto& st : stages)
            if (st.out_channels < 1 || st.kernel < 1 || st.stride < 1)
                throw std::invalid_argument("backbone: bad stage parameters");
        if (output_hw() < 1) throw std::invalid_argument("backbone: output spatial size collapses to zero");
    }
};

template <class S>
class Backbone {
  public:
    Backbone() = default;

    Backbone(BackboneConfig config, Rng& rng) : config_(std::move(config)) {
        config_.validate();
        std::int64_t c_in = config_.in_channels;
        for (std::size_t i = 0; i < config_.stages.size(); ++i) {
            const auto& st = config_.stages[i];
            Stage stage;
            const S bound = S(1) / std::sqrt(static_cast<S>(c_in * st.kernel * st.kernel));
            stage.weight = make_leaf(
                Tensor<S>::uniform(Shape{st.out_channels, c_in, st.kernel, st.kernel}, -bound, bound, rng),
                true, "backbone.s" + std::to_string(i) + ".weight");
            stage.bias = make_leaf(Tensor<S>::zeros(Shape{st.out_channels}), true,
                                   "backbone.s" + std::to_string(i) + ".bias");
            if (config_.with_batchnorm) stage.bn = BatchNormState<S>::make(st.out_channels);
            stages_.push_back(std::move(stage));
            c_in = st.out_channels;
        }
    }

    /// frames [N, in_channels, H, W] -> features [N, c, h, w], ReLU last.
    NodePtr<S> forward(const NodePtr<S>& frames, Mode mode) {
        NodePtr<S> x = frames;
        for (std::size_t i = 0; i < stages_.size(); ++i) {
            auto& stage = stages_[i];
            const auto& cfg = config_.stages[i];
            x = conv2d(x, stage.weight, stage.bias, cfg.stride, cfg.kernel / 2);
            if (config_.with_batchnorm) {
                // BN over conv maps: pool batch and spatial positions per channel
                const std::int64_t n = x->value.extent(0), c = x->value.extent(1);
                const std::int64_t h = x->value.extent(2), w = x->value.extent(3);
                stage.bn.mode = mode;
                stage.bn.update_running_stats = !freeze_bn_stats_;
                auto flat = images_to_feature_matrix(x); // [c, n*h*w]
                auto normed = batchnorm_channels(flat, stage.bn);
                x = unflatten(normed, n, c, h, w);
            }
            x = activation(x, Act::relu);
        }
        return x;
    }

    void set_frozen(bool flag) { frozen_ = flag; }
    bool frozen() const { return frozen_; }
    void set_freeze_bn_stats(bool flag) { freeze_bn_stats_ = flag; }

    const BackboneConfig& config() const { return config_; }

    void collect_params(ParamList<S>& out) const {
        for (std::size_t i = 0; i < stages_.size(); ++i) {
            const auto& stage = stages_[i];
            out.push_back({stage.weight->name, stage.weight, frozen_});
            out.push_back({stage.bias->name, stage.bias, frozen_});
            if (config_.with_batchnorm) {
                const std::string prefix = "backbone.s" + std::to_string(i) + ".bn.";
                out.push_back({prefix + "gamma", stage.bn.gamma, frozen_});
                out.push_back({prefix + "beta", stage.bn.beta, frozen_});
            }
        }
    }

    void collect_state(std::vector<std::pair<std::string, Tensor<S>*>>& out) {
        for (std::size_t i = 0; i < stages_.size(); ++i) {
            if (!config_.with_batchnorm) continue;
            const std::string prefix = "backbone.s" + std::to_string(i) + ".bn.";
            out.push_back({prefix + "running_mean", &stages_[i].bn.running_mean});
            out.push_back({prefix + "running_var", &stages_[i].bn.running_var});
        }
    }

  private:
    struct Stage {
        NodePtr<S> weight;
        NodePtr<S> bias;
        BatchNormState<S> bn;
    };

    // inverse of images_to_feature_matrix
    static NodePtr<S> unflatten(const NodePtr<S>& flat, std::int64_t n, std::int64_t c, std::int64_t h,
                                std::int64_t w) {
        Tensor<S> out(Shape{n, c, h, w});
        for (std::int64_t ni = 0; ni < n; ++ni)
            for (std::int64_t j = 0; j < c; ++j)
                for (std::int64_t r = 0; r < h; ++r)
                    for (std::int64_t q = 0; q < w; ++q)
                        out.at(ni, j, r, q) = flat->value.at(j, (ni * h + r) * w + q);
        return make_op<S>(std::move(out), {flat}, "from_feature_matrix",
                          [flat, n, c, h, w](Node<S>& self) {
                              if (!flat->requires_grad) return;
                              auto& g = flat->grad();
                              for (std::int64_t ni = 0; ni < n; ++ni)
                                  for (std::int64_t j = 0; j < c; ++j)
                                      for (std::int64_t r = 0; r < h; ++r)
                                          for (std::int64_t q = 0; q < w; ++q)
                                              g.at(j, (ni * h + r) * w + q) += self.grad().at(ni, j, r, q);
                          });
    }

    BackboneConfig config_;
    std::vector<Stage> stages_;
    bool frozen_ = false;
    bool freeze_bn_stats_ = false;
};

} // namespace rra
