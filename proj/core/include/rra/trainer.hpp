#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "rra/augment.hpp"
#include "rra/checkpoint.hpp"
#include "rra/dataset.hpp"
#include "rra/heads.hpp"
#include "rra/model.hpp"
#include "rra/optimizer.hpp"
#include "rra/sampling.hpp"

namespace rra {

struct TrainDiverged : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct EvalProtocol {
    std::int64_t segments = 25;
    int crops = 5;
    bool flip = true;

    std::int64_t inputs_per_video() const { return segments * crops * (flip ? 2 : 1); }

    void validate() const {
        if (segments < 1) throw std::invalid_argument("EvalProtocol: segments must be >= 1");
        if (crops != 1 && crops != 5) throw std::invalid_argument("EvalProtocol: crops must be 1 or 5");
    }
};

struct TrainConfig {
    double lr = 2e-4;
    double lr_decay = 0.1;
    std::int64_t decay_every_epochs = 30;
    std::int64_t total_epochs = 10;
    std::int64_t batch_size = 32;
    std::int64_t freeze_backbone_until_epoch = 0;
    bool freeze_bn_stats = false;
    std::uint64_t seed = 1;
    LossSpec loss;
    std::int64_t train_segments = 4; // frames sampled per video while training
    EvalProtocol eval;
    std::int64_t eval_every = 1; // 0: evaluate on the final epoch only

    void validate() const {
        if (lr < 0.0) throw std::invalid_argument("TrainConfig: lr must be non-negative");
        if (!(lr_decay > 0.0 && lr_decay <= 1.0))
            throw std::invalid_argument("TrainConfig: lr_decay must lie in (0, 1]");
        if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
        if (total_epochs < 0 || train_segments < 1 || freeze_backbone_until_epoch < 0)
            throw std::invalid_argument("TrainConfig: bad epoch/segment counts");
        loss.validate();
        eval.validate();
    }
};

struct EpochMetrics {
    std::int64_t epoch = 0;
    double lr = 0.0;
    std::optional<double> loss_concat;
    std::optional<double> loss_individual;
    std::optional<double> loss_ensemble;
    double loss_total = 0.0;
    std::optional<double> eval_top1;
};

struct EvalResult {
    double top1 = 0.0;
    std::vector<double> per_class_accuracy;
    double mean_per_class = 0.0;
    std::int64_t inputs_per_video = 0; // frame variants fed to the network per video
    std::int64_t videos = 0;
};

/// Anything that can turn a video into per-class scores. Evaluation argmaxes
/// the returned vector (lowest index wins ties).
class Scorer {
  public:
    virtual ~Scorer() = default;
    virtual Tensor<float> score(const VideoSample& video) = 0;
    virtual std::int64_t inputs_per_video() const { return 0; }
};

/// Runs the model under the test protocol: middle frame of each of
/// `segments` clips, the deterministic crop/flip set per frame, raw scores
/// averaged over crop variants before the softmax, then ensemble or concat
/// prediction.
template <class S>
class ModelScorer : public Scorer {
  public:
    ModelScorer(Model<S>& model, EvalProtocol protocol, PredictMode mode = PredictMode::ensemble)
        : model_(model), protocol_(protocol), mode_(mode) {
        protocol_.validate();
    }

    Tensor<float> score(const VideoSample& video) override {
        const std::int64_t hw = model_.config().backbone.input_hw;
        const auto indices = sample_test_frames(video.frame_count(), protocol_.segments);
        const std::int64_t n = static_cast<std::int64_t>(indices.size());

        // variant-major stack: every crop/flip variant is one "video" of n frames
        std::vector<std::vector<Tensor<float>>> per_frame;
        per_frame.reserve(static_cast<std::size_t>(n));
        for (const auto idx : indices)
            per_frame.push_back(test_crop_variants(video.frame(idx), hw, protocol_.crops, protocol_.flip));
        const std::int64_t variants = static_cast<std::int64_t>(per_frame.front().size());

        Tensor<S> stack(Shape{variants * n, video.channels(), hw, hw});
        const std::int64_t per = video.channels() * hw * hw;
        for (std::int64_t v = 0; v < variants; ++v)
            for (std::int64_t t = 0; t < n; ++t) {
                const auto& f = per_frame[static_cast<std::size_t>(t)][static_cast<std::size_t>(v)];
                for (std::int64_t i = 0; i < per; ++i) stack[(v * n + t) * per + i] = static_cast<S>(f[i]);
            }

        auto out = model_.forward(stack, n, Mode::eval);
        // mean raw scores over variants, one vector per glimpse
        std::vector<Tensor<S>> mean_scores;
        mean_scores.reserve(out.scores.size());
        const std::int64_t classes = model_.config().num_classes;
        for (const auto& s : out.scores) {
            Tensor<S> m(Shape{classes});
            for (std::int64_t i = 0; i < classes; ++i) {
                S acc = 0;
                for (std::int64_t b = 0; b < variants; ++b) acc += s->value.at(i, b);
                m[i] = acc / static_cast<S>(variants);
            }
            mean_scores.push_back(std::move(m));
        }
        return rra::predict(mean_scores, mode_).scores.template astype<float>();
    }

    std::int64_t inputs_per_video() const override { return protocol_.inputs_per_video(); }

  private:
    Model<S>& model_;
    EvalProtocol protocol_;
    PredictMode mode_;
};

inline EvalResult evaluate(Scorer& scorer, const std::vector<VideoSample>& videos, int num_classes) {
    if (videos.empty()) throw std::invalid_argument("evaluate: empty dataset");
    std::vector<std::int64_t> correct(static_cast<std::size_t>(num_classes), 0);
    std::vector<std::int64_t> total(static_cast<std::size_t>(num_classes), 0);
    std::int64_t hits = 0;
    for (const auto& v : videos) {
        const auto scores = scorer.score(v);
        int best = 0;
        for (std::int64_t i = 1; i < scores.numel(); ++i)
            if (scores[i] > scores[best]) best = static_cast<int>(i);
        ++total[static_cast<std::size_t>(v.label)];
        if (best == v.label) {
            ++correct[static_cast<std::size_t>(v.label)];
            ++hits;
        }
    }
    EvalResult r;
    r.videos = static_cast<std::int64_t>(videos.size());
    r.top1 = static_cast<double>(hits) / static_cast<double>(videos.size());
    double acc_sum = 0.0;
    int seen = 0;
    for (int c = 0; c < num_classes; ++c) {
        const double acc = total[static_cast<std::size_t>(c)] == 0
                               ? 0.0
                               : static_cast<double>(correct[static_cast<std::size_t>(c)]) /
                                     static_cast<double>(total[static_cast<std::size_t>(c)]);
        r.per_class_accuracy.push_back(acc);
        if (total[static_cast<std::size_t>(c)] > 0) {
            acc_sum += acc;
            ++seen;
        }
    }
    r.mean_per_class = seen == 0 ? 0.0 : acc_sum / static_cast<double>(seen);
    r.inputs_per_video = scorer.inputs_per_video();
    return r;
}

namespace detail {

template <class S>
Tensor<S> build_train_batch(const std::vector<VideoSample>& videos, const std::vector<std::size_t>& ids,
                            const TrainConfig& cfg, std::int64_t input_hw, std::int64_t epoch,
                            std::vector<int>& labels_out) {
    const std::int64_t n = cfg.train_segments;
    const std::int64_t batch = static_cast<std::int64_t>(ids.size());
    const std::int64_t channels = videos[ids[0]].channels();
    Tensor<S> stack(Shape{batch * n, channels, input_hw, input_hw});
    const std::int64_t per = channels * input_hw * input_hw;
    labels_out.clear();
    for (std::int64_t b = 0; b < batch; ++b) {
        const auto& video = videos[ids[static_cast<std::size_t>(b)]];
        labels_out.push_back(video.label);
        const auto indices =
            sample_train_frames(video.frame_count(), video.id, n, cfg.seed, epoch);
        Rng aug_rng(derive_seed(cfg.seed, fnv1a("augment"), fnv1a(video.id),
                                static_cast<std::uint64_t>(epoch)));
        for (std::int64_t t = 0; t < n; ++t) {
            const auto frame = augment_train(video.frame(indices[static_cast<std::size_t>(t)]), input_hw,
                                             aug_rng);
            for (std::int64_t i = 0; i < per; ++i)
                stack[(b * n + t) * per + i] = static_cast<S>(frame[i]);
        }
    }
    return stack;
}

} // namespace detail

/// One optimization run. Deterministic given (config.seed, dataset): frame
/// sampling, augmentation, shuffling and dropout are all pure functions of
/// the seed and epoch. Resuming from a checkpoint at an epoch boundary
/// therefore reproduces the uninterrupted run exactly.
template <class S>
std::vector<EpochMetrics> train(Model<S>& model, Adam<S>& optimizer,
                                const std::vector<VideoSample>& train_videos,
                                const std::vector<VideoSample>& eval_videos, const TrainConfig& cfg,
                                std::int64_t start_epoch = 0,
                                const std::function<void(const EpochMetrics&)>& on_epoch = {}) {
    cfg.validate();
    if (train_videos.empty()) throw std::invalid_argument("train: empty training set");
    const std::int64_t input_hw = model.config().backbone.input_hw;
    const std::int64_t classes = model.config().num_classes;
    model.set_freeze_bn_stats(cfg.freeze_bn_stats);

    std::vector<EpochMetrics> history;
    for (std::int64_t epoch = start_epoch; epoch < cfg.total_epochs; ++epoch) {
        const double lr = lr_at(epoch, cfg.lr, cfg.lr_decay, cfg.decay_every_epochs);
        model.set_backbone_frozen(epoch < cfg.freeze_backbone_until_epoch);

        std::vector<std::size_t> order(train_videos.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng shuffle_rng(derive_seed(cfg.seed, fnv1a("shuffle"), static_cast<std::uint64_t>(epoch)));
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[static_cast<std::size_t>(shuffle_rng.index(
                                        static_cast<std::int64_t>(i)))]);

        EpochMetrics em;
        em.epoch = epoch;
        em.lr = lr;
        double sum_total = 0.0, sum_lc = 0.0, sum_li = 0.0, sum_le = 0.0;
        std::int64_t seen = 0;

        std::int64_t batch_index = 0;
        for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t hi = std::min(order.size(), at + static_cast<std::size_t>(cfg.batch_size));
            const std::vector<std::size_t> ids(order.begin() + static_cast<std::ptrdiff_t>(at),
                                               order.begin() + static_cast<std::ptrdiff_t>(hi));
            std::vector<int> labels;
            Tensor<S> stack;
            try {
                stack = detail::build_train_batch<S>(train_videos, ids, cfg, input_hw, epoch, labels);
                auto out = model.forward(stack, cfg.train_segments, Mode::train,
                                         derive_seed(cfg.seed, fnv1a("dropout"),
                                                     static_cast<std::uint64_t>(epoch),
                                                     static_cast<std::uint64_t>(batch_index)));
                const auto targets = one_hot_columns<S>(labels, classes);
                auto loss = total_loss(cfg.loss, out.scores, out.probs, targets);
                model.zero_grad();
                backward(loss.node);
                optimizer.step(model.parameters(), lr);

                const auto weight = static_cast<double>(ids.size());
                sum_total += loss.breakdown.total * weight;
                if (loss.breakdown.concat) sum_lc += *loss.breakdown.concat * weight;
                if (loss.breakdown.individual) sum_li += *loss.breakdown.individual * weight;
                if (loss.breakdown.ensemble) sum_le += *loss.breakdown.ensemble * weight;
                seen += static_cast<std::int64_t>(ids.size());
            } catch (const NonFiniteError& e) {
                throw TrainDiverged("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                                    std::to_string(batch_index) + ": " + e.what());
            }
            ++batch_index;
        }

        em.loss_total = sum_total / static_cast<double>(seen);
        if (cfg.loss.use_concat) em.loss_concat = sum_lc / static_cast<double>(seen);
        if (cfg.loss.use_individual) em.loss_individual = sum_li / static_cast<double>(seen);
        if (cfg.loss.use_ensemble) em.loss_ensemble = sum_le / static_cast<double>(seen);

        const bool last = epoch + 1 == cfg.total_epochs;
        const bool do_eval = !eval_videos.empty() &&
                             (last || (cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0));
        if (do_eval) {
            ModelScorer<S> scorer(model, cfg.eval);
            em.eval_top1 = evaluate(scorer, eval_videos, static_cast<int>(classes)).top1;
        }
        history.push_back(em);
        if (on_epoch) on_epoch(em);
    }
    return history;
}

// ---------------------------------------------------------------------------
// metrics CSV
// ---------------------------------------------------------------------------

inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

/// One row per epoch: epoch, lr, one column per enabled loss term, the
/// weighted total, and eval accuracy (blank on epochs without evaluation).
inline void write_metrics_csv(const std::filesystem::path& path, const std::vector<EpochMetrics>& history,
                              const LossSpec& loss) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write metrics CSV: " + path.string());
    os << "epoch,lr";
    if (loss.use_concat) os << ",loss_lc";
    if (loss.use_individual) os << ",loss_li";
    if (loss.use_ensemble) os << ",loss_le";
    os << ",loss_total,eval_top1\n";
    for (const auto& em : history) {
        os << em.epoch << ',' << format_double(em.lr);
        if (loss.use_concat) os << ',' << format_double(em.loss_concat.value_or(0.0));
        if (loss.use_individual) os << ',' << format_double(em.loss_individual.value_or(0.0));
        if (loss.use_ensemble) os << ',' << format_double(em.loss_ensemble.value_or(0.0));
        os << ',' << format_double(em.loss_total) << ',';
        if (em.eval_top1) os << format_double(*em.eval_top1);
        os << '\n';
    }
    if (!os) throw std::runtime_error("metrics CSV write failed: " + path.string());
}

} // namespace rra
