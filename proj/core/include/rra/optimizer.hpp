#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>

#include "rra/params.hpp"

namespace rra {

/// Adaptive-moment optimizer with bias correction. Moment state is keyed by
/// parameter name; frozen parameters are skipped entirely (no update, no
/// moment decay).
template <class S>
class Adam {
  public:
    struct Moments {
        Tensor<S> m;
        Tensor<S> v;
    };

    explicit Adam(double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-8)
        : beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {}

    void step(const ParamList<S>& params, double lr) {
        if (lr < 0.0) throw std::invalid_argument("Adam: negative learning rate");
        ++step_count_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_count_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_count_));
        for (const auto& p : params) {
            if (p.frozen) continue;
            auto& value = p.node->value;
            auto& grad = p.node->grad();
            if (!value.same_shape(grad))
                throw std::invalid_argument("Adam: grad/value shape mismatch for " + p.name);
            auto& mom = moments_for(p.name, value.shape());
            for (std::int64_t i = 0; i < value.numel(); ++i) {
                const double g = static_cast<double>(grad[i]);
                const double m = beta1_ * static_cast<double>(mom.m[i]) + (1.0 - beta1_) * g;
                const double v = beta2_ * static_cast<double>(mom.v[i]) + (1.0 - beta2_) * g * g;
                mom.m[i] = static_cast<S>(m);
                mom.v[i] = static_cast<S>(v);
                const double update = lr * (m / bc1) / (std::sqrt(v / bc2) + epsilon_);
                value[i] = static_cast<S>(static_cast<double>(value[i]) - update);
            }
        }
    }

    std::int64_t step_count() const { return step_count_; }
    void set_step_count(std::int64_t n) { step_count_ = n; }

    Moments& moments_for(const std::string& name, const Shape& shape) {
        auto it = state_.find(name);
        if (it == state_.end()) {
            Moments mom{Tensor<S>::zeros(shape), Tensor<S>::zeros(shape)};
            it = state_.emplace(name, std::move(mom)).first;
        }
        return it->second;
    }

    bool has_moments(const std::string& name) const { return state_.count(name) != 0; }
    std::map<std::string, Moments>& state() { return state_; }
    const std::map<std::string, Moments>& state() const { return state_; }

    double beta1() const { return beta1_; }
    double beta2() const { return beta2_; }
    double epsilon() const { return epsilon_; }

  private:
    double beta1_;
    double beta2_;
    double epsilon_;
    std::int64_t step_count_ = 0;
    std::map<std::string, Moments> state_;
};

/// Step-decay schedule: lr * decay^floor(epoch / every).
inline double lr_at(std::int64_t epoch, double lr, double decay, std::int64_t every) {
    if (epoch < 0) throw std::invalid_argument("lr_at: negative epoch");
    if (every < 1) return lr;
    return lr * std::pow(decay, static_cast<double>(epoch / every));
}

} // namespace rra
