#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "rra/graph.hpp"
#include "rra/mode.hpp"
#include "rra/rng.hpp"
#include "rra/tensor.hpp"

namespace rra {

enum class Act { relu, tanh, linear, neg_relu };

inline const char* act_name(Act a) {
    switch (a) {
        case Act::relu: return "relu";
        case Act::tanh: return "tanh";
        case Act::linear: return "linear";
        case Act::neg_relu: return "neg_relu";
    }
    return "?";
}

namespace detail {

[[noreturn]] inline void shape_error(const std::string& what) { throw std::invalid_argument(what); }

template <class S>
void require_rank(const Tensor<S>& t, std::int64_t rank, const char* op) {
    if (t.ndim() != rank)
        shape_error(std::string(op) + ": expected rank " + std::to_string(rank) + " tensor, got " +
                    shape_str(t.shape()));
}

} // namespace detail

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <class S>
NodePtr<S> add(const NodePtr<S>& a, const NodePtr<S>& b) {
    if (!a->value.same_shape(b->value))
        detail::shape_error("add: shape mismatch " + shape_str(a->value.shape()) + " vs " +
                            shape_str(b->value.shape()));
    Tensor<S> out(a->value.shape());
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] + b->value[i];
    return make_op<S>(std::move(out), {a, b}, "add", [a, b](Node<S>& self) {
        if (a->requires_grad) a->accumulate(self.grad());
        if (b->requires_grad) b->accumulate(self.grad());
    });
}

template <class S>
NodePtr<S> scale(const NodePtr<S>& a, S c) {
    Tensor<S> out(a->value.shape());
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = c * a->value[i];
    return make_op<S>(std::move(out), {a}, "scale", [a, c](Node<S>& self) {
        if (!a->requires_grad) return;
        auto& ga = a->grad();
        for (std::int64_t i = 0; i < ga.numel(); ++i) ga[i] += c * self.grad()[i];
    });
}

/// Elementwise activation. `linear` is the identity and returns the input
/// node itself; `neg_relu` maps x to -max(0, x).
template <class S>
NodePtr<S> activation(const NodePtr<S>& x, Act kind) {
    if (kind == Act::linear) return x;
    Tensor<S> out(x->value.shape());
    switch (kind) {
        case Act::relu:
            for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = x->value[i] > S(0) ? x->value[i] : S(0);
            break;
        case Act::tanh:
            for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = std::tanh(x->value[i]);
            break;
        case Act::neg_relu:
            for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = x->value[i] > S(0) ? -x->value[i] : S(0);
            break;
        case Act::linear: break;
    }
    return make_op<S>(std::move(out), {x}, act_name(kind), [x, kind](Node<S>& self) {
        if (!x->requires_grad) return;
        auto& gx = x->grad();
        const auto& g = self.grad();
        switch (kind) {
            case Act::relu:
                for (std::int64_t i = 0; i < gx.numel(); ++i)
                    if (x->value[i] > S(0)) gx[i] += g[i];
                break;
            case Act::tanh:
                for (std::int64_t i = 0; i < gx.numel(); ++i) {
                    const S t = self.value[i];
                    gx[i] += (S(1) - t * t) * g[i];
                }
                break;
            case Act::neg_relu:
                for (std::int64_t i = 0; i < gx.numel(); ++i)
                    if (x->value[i] > S(0)) gx[i] -= g[i];
                break;
            case Act::linear: break;
        }
    });
}

// ---------------------------------------------------------------------------
// linear algebra
// ---------------------------------------------------------------------------

template <class S>
NodePtr<S> matmul(const NodePtr<S>& a, const NodePtr<S>& b) {
    detail::require_rank(a->value, 2, "matmul");
    detail::require_rank(b->value, 2, "matmul");
    const std::int64_t m = a->value.rows(), k = a->value.cols();
    const std::int64_t k2 = b->value.rows(), p = b->value.cols();
    if (k != k2)
        detail::shape_error("matmul: inner extents differ, " + shape_str(a->value.shape()) + " * " +
                            shape_str(b->value.shape()));
    Tensor<S> out(Shape{m, p});
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t l = 0; l < k; ++l) {
            const S av = a->value.at(i, l);
            if (av == S(0)) continue;
            for (std::int64_t j = 0; j < p; ++j) out.at(i, j) += av * b->value.at(l, j);
        }
    return make_op<S>(std::move(out), {a, b}, "matmul", [a, b, m, k, p](Node<S>& self) {
        const auto& g = self.grad();
        if (a->requires_grad) { // dA = G * B^T
            auto& ga = a->grad();
            for (std::int64_t i = 0; i < m; ++i)
                for (std::int64_t l = 0; l < k; ++l) {
                    S acc = 0;
                    for (std::int64_t j = 0; j < p; ++j) acc += g.at(i, j) * b->value.at(l, j);
                    ga.at(i, l) += acc;
                }
        }
        if (b->requires_grad) { // dB = A^T * G
            auto& gb = b->grad();
            for (std::int64_t l = 0; l < k; ++l)
                for (std::int64_t i = 0; i < m; ++i) {
                    const S av = a->value.at(i, l);
                    if (av == S(0)) continue;
                    for (std::int64_t j = 0; j < p; ++j) gb.at(l, j) += av * g.at(i, j);
                }
        }
    });
}

template <class S>
NodePtr<S> transpose(const NodePtr<S>& a) {
    detail::require_rank(a->value, 2, "transpose");
    const std::int64_t m = a->value.rows(), n = a->value.cols();
    Tensor<S> out(Shape{n, m});
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j) out.at(j, i) = a->value.at(i, j);
    return make_op<S>(std::move(out), {a}, "transpose", [a, m, n](Node<S>& self) {
        if (!a->requires_grad) return;
        auto& ga = a->grad();
        for (std::int64_t i = 0; i < m; ++i)
            for (std::int64_t j = 0; j < n; ++j) ga.at(i, j) += self.grad().at(j, i);
    });
}

template <class S>
NodePtr<S> reshape(const NodePtr<S>& a, Shape shape) {
    Tensor<S> out = a->value.reshaped(std::move(shape));
    return make_op<S>(std::move(out), {a}, "reshape", [a](Node<S>& self) {
        if (!a->requires_grad) return;
        auto& ga = a->grad();
        for (std::int64_t i = 0; i < ga.numel(); ++i) ga[i] += self.grad()[i];
    });
}

/// scores = X^T w for X [c x m], w [c]; returns [m]. Equivalent to
/// matmul(transpose(X), w) without the materialized transpose.
template <class S>
NodePtr<S> matvec_t(const NodePtr<S>& x, const NodePtr<S>& w) {
    detail::require_rank(x->value, 2, "matvec_t");
    detail::require_rank(w->value, 1, "matvec_t");
    const std::int64_t c = x->value.rows(), m = x->value.cols();
    if (w->value.numel() != c)
        detail::shape_error("matvec_t: weight length " + std::to_string(w->value.numel()) +
                            " does not match channel count " + std::to_string(c));
    Tensor<S> out(Shape{m});
    for (std::int64_t j = 0; j < c; ++j) {
        const S wj = w->value[j];
        if (wj == S(0)) continue;
        for (std::int64_t p = 0; p < m; ++p) out[p] += wj * x->value.at(j, p);
    }
    return make_op<S>(std::move(out), {x, w}, "matvec_t", [x, w, c, m](Node<S>& self) {
        const auto& g = self.grad();
        if (x->requires_grad) {
            auto& gx = x->grad();
            for (std::int64_t j = 0; j < c; ++j) {
                const S wj = w->value[j];
                if (wj == S(0)) continue;
                for (std::int64_t p = 0; p < m; ++p) gx.at(j, p) += wj * g[p];
            }
        }
        if (w->requires_grad) {
            auto& gw = w->grad();
            for (std::int64_t j = 0; j < c; ++j) {
                S acc = 0;
                for (std::int64_t p = 0; p < m; ++p) acc += x->value.at(j, p) * g[p];
                gw[j] += acc;
            }
        }
    });
}

// ---------------------------------------------------------------------------
// softmax
// ---------------------------------------------------------------------------

/// Softmax over each contiguous group of `group` entries of a vector
/// (max-subtracted for stability). `softmax(v)` is the single-group case.
template <class S>
NodePtr<S> softmax_groups(const NodePtr<S>& v, std::int64_t group) {
    detail::require_rank(v->value, 1, "softmax_groups");
    const std::int64_t m = v->value.numel();
    if (group < 1 || m % group != 0)
        detail::shape_error("softmax_groups: length " + std::to_string(m) + " not divisible by group " +
                            std::to_string(group));
    Tensor<S> out(v->value.shape());
    for (std::int64_t base = 0; base < m; base += group) {
        S mx = v->value[base];
        for (std::int64_t i = 1; i < group; ++i) mx = std::max(mx, v->value[base + i]);
        S sum = 0;
        for (std::int64_t i = 0; i < group; ++i) {
            const S e = std::exp(v->value[base + i] - mx);
            out[base + i] = e;
            sum += e;
        }
        const S inv = S(1) / sum;
        for (std::int64_t i = 0; i < group; ++i) out[base + i] *= inv;
    }
    return make_op<S>(std::move(out), {v}, "softmax", [v, m, group](Node<S>& self) {
        if (!v->requires_grad) return;
        auto& gv = v->grad();
        const auto& g = self.grad();
        for (std::int64_t base = 0; base < m; base += group) {
            S dot = 0;
            for (std::int64_t i = 0; i < group; ++i) dot += g[base + i] * self.value[base + i];
            for (std::int64_t i = 0; i < group; ++i)
                gv[base + i] += self.value[base + i] * (g[base + i] - dot);
        }
    });
}

template <class S>
NodePtr<S> softmax(const NodePtr<S>& v) {
    return softmax_groups(v, v->value.numel());
}

/// Column-wise softmax of a [C x B] score matrix (one distribution per column).
template <class S>
NodePtr<S> softmax_cols(const NodePtr<S>& s) {
    detail::require_rank(s->value, 2, "softmax_cols");
    const std::int64_t rows = s->value.rows(), cols = s->value.cols();
    Tensor<S> out(s->value.shape());
    for (std::int64_t b = 0; b < cols; ++b) {
        S mx = s->value.at(0, b);
        for (std::int64_t i = 1; i < rows; ++i) mx = std::max(mx, s->value.at(i, b));
        S sum = 0;
        for (std::int64_t i = 0; i < rows; ++i) {
            const S e = std::exp(s->value.at(i, b) - mx);
            out.at(i, b) = e;
            sum += e;
        }
        const S inv = S(1) / sum;
        for (std::int64_t i = 0; i < rows; ++i) out.at(i, b) *= inv;
    }
    return make_op<S>(std::move(out), {s}, "softmax_cols", [s, rows, cols](Node<S>& self) {
        if (!s->requires_grad) return;
        auto& gs = s->grad();
        const auto& g = self.grad();
        for (std::int64_t b = 0; b < cols; ++b) {
            S dot = 0;
            for (std::int64_t i = 0; i < rows; ++i) dot += g.at(i, b) * self.value.at(i, b);
            for (std::int64_t i = 0; i < rows; ++i)
                gs.at(i, b) += self.value.at(i, b) * (g.at(i, b) - dot);
        }
    });
}

// ---------------------------------------------------------------------------
// broadcast / reduction over position groups
// ---------------------------------------------------------------------------

/// out[j, p] = x[j, p] + v[j, p/group] for x [c x m], v [c x G], m == G*group.
/// The G == 1 case is the per-channel broadcast add.
template <class S>
NodePtr<S> broadcast_add_groups(const NodePtr<S>& x, const NodePtr<S>& v, std::int64_t group) {
    detail::require_rank(x->value, 2, "broadcast_add_groups");
    detail::require_rank(v->value, 2, "broadcast_add_groups");
    const std::int64_t c = x->value.rows(), m = x->value.cols();
    const std::int64_t groups = v->value.cols();
    if (v->value.rows() != c || group < 1 || groups * group != m)
        detail::shape_error("broadcast_add_groups: x " + shape_str(x->value.shape()) + ", v " +
                            shape_str(v->value.shape()) + ", group " + std::to_string(group));
    Tensor<S> out(x->value.shape());
    for (std::int64_t j = 0; j < c; ++j)
        for (std::int64_t p = 0; p < m; ++p) out.at(j, p) = x->value.at(j, p) + v->value.at(j, p / group);
    return make_op<S>(std::move(out), {x, v}, "broadcast_add", [x, v, c, m, group](Node<S>& self) {
        const auto& g = self.grad();
        if (x->requires_grad) x->accumulate(g);
        if (v->requires_grad) {
            auto& gv = v->grad();
            for (std::int64_t j = 0; j < c; ++j)
                for (std::int64_t p = 0; p < m; ++p) gv.at(j, p / group) += g.at(j, p);
        }
    });
}

/// Replicates a length-c vector across all positions of a [c x m] map and
/// adds. Position gradients sum back into the vector.
template <class S>
NodePtr<S> broadcast_add_channel(const NodePtr<S>& x, const NodePtr<S>& v) {
    detail::require_rank(x->value, 2, "broadcast_add_channel");
    detail::require_rank(v->value, 1, "broadcast_add_channel");
    if (v->value.numel() != x->value.rows())
        detail::shape_error("broadcast_add_channel: channel counts differ");
    auto v2 = reshape(v, Shape{v->value.numel(), 1});
    return broadcast_add_groups(x, v2, x->value.cols());
}

/// out[j, g] = sum_{p in group g} x[j, p] * a[p]; x [c x m], a [m], out [c x G].
/// With a single group and a summing to one this is the attention summary.
template <class S>
NodePtr<S> group_weighted_sum(const NodePtr<S>& x, const NodePtr<S>& a, std::int64_t group) {
    detail::require_rank(x->value, 2, "group_weighted_sum");
    detail::require_rank(a->value, 1, "group_weighted_sum");
    const std::int64_t c = x->value.rows(), m = x->value.cols();
    if (a->value.numel() != m || group < 1 || m % group != 0)
        detail::shape_error("group_weighted_sum: x " + shape_str(x->value.shape()) + ", a " +
                            shape_str(a->value.shape()) + ", group " + std::to_string(group));
    const std::int64_t groups = m / group;
    Tensor<S> out(Shape{c, groups});
    for (std::int64_t j = 0; j < c; ++j)
        for (std::int64_t p = 0; p < m; ++p) out.at(j, p / group) += x->value.at(j, p) * a->value[p];
    return make_op<S>(std::move(out), {x, a}, "group_weighted_sum", [x, a, c, m, group](Node<S>& self) {
        const auto& g = self.grad();
        if (x->requires_grad) {
            auto& gx = x->grad();
            for (std::int64_t j = 0; j < c; ++j)
                for (std::int64_t p = 0; p < m; ++p) gx.at(j, p) += a->value[p] * g.at(j, p / group);
        }
        if (a->requires_grad) {
            auto& ga = a->grad();
            for (std::int64_t j = 0; j < c; ++j)
                for (std::int64_t p = 0; p < m; ++p) ga[p] += x->value.at(j, p) * g.at(j, p / group);
        }
    });
}

// ---------------------------------------------------------------------------
// batch normalization
// ---------------------------------------------------------------------------

/// Per-channel normalization state. In train mode statistics are computed
/// over all positions of the incoming map (batch and positions pooled) and
/// folded into the running estimates with weight `momentum`; eval mode uses
/// the running estimates only.
template <class S>
struct BatchNormState {
    NodePtr<S> gamma; // learnable scale [c]
    NodePtr<S> beta;  // learnable shift [c]
    Tensor<S> running_mean;
    Tensor<S> running_var;
    S momentum = S(0.1);
    S epsilon = S(1e-5);
    Mode mode = Mode::train;
    bool update_running_stats = true; // cleared by the frozen-stats toggle

    static BatchNormState make(std::int64_t channels) {
        BatchNormState st;
        st.gamma = make_leaf(Tensor<S>::full(Shape{channels}, S(1)), true);
        st.beta = make_leaf(Tensor<S>::zeros(Shape{channels}), true);
        st.running_mean = Tensor<S>::zeros(Shape{channels});
        st.running_var = Tensor<S>::full(Shape{channels}, S(1));
        return st;
    }

    std::int64_t channels() const { return running_mean.numel(); }
};

/// BatchNorm over a channels-major [c x m] map: each channel row is
/// normalized across its m positions, then scaled/shifted by gamma/beta.
template <class S>
NodePtr<S> batchnorm_channels(const NodePtr<S>& x, BatchNormState<S>& st) {
    detail::require_rank(x->value, 2, "batchnorm");
    const std::int64_t c = x->value.rows(), m = x->value.cols();
    if (st.channels() != c)
        detail::shape_error("batchnorm: state has " + std::to_string(st.channels()) + " channels, map has " +
                            std::to_string(c));
    if (st.epsilon <= S(0)) throw std::invalid_argument("batchnorm: epsilon must be positive");

    const bool train = st.mode == Mode::train;
    Tensor<S> mean(Shape{c});
    Tensor<S> inv_std(Shape{c});
    if (train) {
        const S inv_m = S(1) / static_cast<S>(m);
        for (std::int64_t j = 0; j < c; ++j) {
            S mu = 0;
            for (std::int64_t p = 0; p < m; ++p) mu += x->value.at(j, p);
            mu *= inv_m;
            S var = 0;
            for (std::int64_t p = 0; p < m; ++p) {
                const S d = x->value.at(j, p) - mu;
                var += d * d;
            }
            var *= inv_m;
            mean[j] = mu;
            inv_std[j] = S(1) / std::sqrt(var + st.epsilon);
            if (st.update_running_stats) {
                st.running_mean[j] = (S(1) - st.momentum) * st.running_mean[j] + st.momentum * mu;
                st.running_var[j] = (S(1) - st.momentum) * st.running_var[j] + st.momentum * var;
            }
        }
    } else {
        for (std::int64_t j = 0; j < c; ++j) {
            mean[j] = st.running_mean[j];
            inv_std[j] = S(1) / std::sqrt(st.running_var[j] + st.epsilon);
        }
    }

    Tensor<S> normed(x->value.shape()); // pre-affine values, reused in backward
    Tensor<S> out(x->value.shape());
    for (std::int64_t j = 0; j < c; ++j) {
        const S mu = mean[j], inv = inv_std[j];
        const S gj = st.gamma->value[j], bj = st.beta->value[j];
        for (std::int64_t p = 0; p < m; ++p) {
            const S n = (x->value.at(j, p) - mu) * inv;
            normed.at(j, p) = n;
            out.at(j, p) = gj * n + bj;
        }
    }

    auto gamma = st.gamma;
    auto beta = st.beta;
    return make_op<S>(
        std::move(out), {x, gamma, beta}, "batchnorm",
        [x, gamma, beta, c, m, train, normed = std::move(normed), inv_std = std::move(inv_std)](Node<S>& self) {
            const auto& g = self.grad();
            for (std::int64_t j = 0; j < c; ++j) {
                S sum_g = 0, sum_gn = 0;
                for (std::int64_t p = 0; p < m; ++p) {
                    sum_g += g.at(j, p);
                    sum_gn += g.at(j, p) * normed.at(j, p);
                }
                if (beta->requires_grad) beta->grad()[j] += sum_g;
                if (gamma->requires_grad) gamma->grad()[j] += sum_gn;
                if (x->requires_grad) {
                    auto& gx = x->grad();
                    const S gj = gamma->value[j], inv = inv_std[j];
                    if (train) {
                        const S inv_m = S(1) / static_cast<S>(m);
                        for (std::int64_t p = 0; p < m; ++p)
                            gx.at(j, p) += gj * inv *
                                           (g.at(j, p) - sum_g * inv_m - normed.at(j, p) * sum_gn * inv_m);
                    } else {
                        for (std::int64_t p = 0; p < m; ++p) gx.at(j, p) += gj * inv * g.at(j, p);
                    }
                }
            }
        });
}

// ---------------------------------------------------------------------------
// dropout
// ---------------------------------------------------------------------------

/// Train mode zeroes each element with probability p and scales survivors by
/// 1/(1-p); eval mode (and p == 0) is the identity. The mask is a pure
/// function of the seed.
template <class S>
NodePtr<S> dropout(const NodePtr<S>& x, double p, Mode mode, std::uint64_t seed) {
    if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropout: p must lie in [0, 1)");
    if (mode == Mode::eval || p == 0.0) return x;
    const S boost = S(1.0 / (1.0 - p));
    Rng rng(seed);
    Tensor<S> mask(x->value.shape());
    for (std::int64_t i = 0; i < mask.numel(); ++i) mask[i] = rng.real01() < p ? S(0) : boost;
    Tensor<S> out(x->value.shape());
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = x->value[i] * mask[i];
    return make_op<S>(std::move(out), {x}, "dropout", [x, mask = std::move(mask)](Node<S>& self) {
        if (!x->requires_grad) return;
        auto& gx = x->grad();
        for (std::int64_t i = 0; i < gx.numel(); ++i) gx[i] += mask[i] * self.grad()[i];
    });
}

// ---------------------------------------------------------------------------
// cross entropy
// ---------------------------------------------------------------------------

inline constexpr double kLogFloor = 1e-12; // clamp for log arguments

namespace detail {

template <class S>
void require_distribution(const S* v, std::int64_t n, const char* what) {
    S sum = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        if (v[i] < S(0)) shape_error(std::string("cross_entropy: ") + what + " has a negative entry");
        sum += v[i];
    }
    const S tol = static_cast<S>(n) * S(64) * std::numeric_limits<S>::epsilon() + S(16) * std::numeric_limits<S>::epsilon();
    if (std::abs(sum - S(1)) > tol)
        shape_error(std::string("cross_entropy: ") + what + " sums to " + std::to_string(static_cast<double>(sum)));
}

} // namespace detail

/// -sum_i y_i log(max(p_i, floor)) for a predicted distribution p and target
/// distribution y. Entries clamped by the floor get zero gradient.
template <class S>
NodePtr<S> cross_entropy(const NodePtr<S>& probs, const Tensor<S>& target) {
    detail::require_rank(probs->value, 1, "cross_entropy");
    if (!probs->value.same_shape(target)) detail::shape_error("cross_entropy: shape mismatch");
    const std::int64_t n = target.numel();
    detail::require_distribution(probs->value.data(), n, "prediction");
    detail::require_distribution(target.data(), n, "target");
    S loss = 0;
    for (std::int64_t i = 0; i < n; ++i)
        loss -= target[i] * std::log(std::max(probs->value[i], S(kLogFloor)));
    return make_op<S>(Tensor<S>::scalar(loss), {probs}, "cross_entropy", [probs, target, n](Node<S>& self) {
        if (!probs->requires_grad) return;
        const S g = self.grad()[0];
        auto& gp = probs->grad();
        for (std::int64_t i = 0; i < n; ++i) {
            if (probs->value[i] <= S(kLogFloor)) continue;
            gp[i] -= g * target[i] / probs->value[i];
        }
    });
}

/// Mean over columns of per-column cross entropies: probs and targets are
/// [C x B] with one distribution per column.
template <class S>
NodePtr<S> cross_entropy_cols_mean(const NodePtr<S>& probs, const Tensor<S>& targets) {
    detail::require_rank(probs->value, 2, "cross_entropy_cols_mean");
    if (!probs->value.same_shape(targets)) detail::shape_error("cross_entropy_cols_mean: shape mismatch");
    const std::int64_t rows = probs->value.rows(), cols = probs->value.cols();
    std::vector<S> col(static_cast<std::size_t>(rows));
    S loss = 0;
    for (std::int64_t b = 0; b < cols; ++b) {
        S sp = 0, st = 0;
        for (std::int64_t i = 0; i < rows; ++i) {
            const S p = probs->value.at(i, b), t = targets.at(i, b);
            if (p < S(0) || t < S(0)) detail::shape_error("cross_entropy: negative entry");
            sp += p;
            st += t;
            loss -= t * std::log(std::max(p, S(kLogFloor)));
        }
        const S tol = static_cast<S>(rows) * S(64) * std::numeric_limits<S>::epsilon() +
                      S(16) * std::numeric_limits<S>::epsilon();
        if (std::abs(sp - S(1)) > tol || std::abs(st - S(1)) > tol)
            detail::shape_error("cross_entropy: column is not a distribution");
    }
    loss /= static_cast<S>(cols);
    return make_op<S>(Tensor<S>::scalar(loss), {probs}, "cross_entropy_cols",
                      [probs, targets, rows, cols](Node<S>& self) {
                          if (!probs->requires_grad) return;
                          const S g = self.grad()[0] / static_cast<S>(cols);
                          auto& gp = probs->grad();
                          for (std::int64_t b = 0; b < cols; ++b)
                              for (std::int64_t i = 0; i < rows; ++i) {
                                  const S p = probs->value.at(i, b);
                                  if (p <= S(kLogFloor)) continue;
                                  gp.at(i, b) -= g * targets.at(i, b) / p;
                              }
                      });
}

// ---------------------------------------------------------------------------
// scalar reductions
// ---------------------------------------------------------------------------

template <class S>
NodePtr<S> sum_squares(const NodePtr<S>& x) {
    S acc = 0;
    for (std::int64_t i = 0; i < x->value.numel(); ++i) acc += x->value[i] * x->value[i];
    return make_op<S>(Tensor<S>::scalar(acc), {x}, "sum_squares", [x](Node<S>& self) {
        if (!x->requires_grad) return;
        const S g = self.grad()[0];
        auto& gx = x->grad();
        for (std::int64_t i = 0; i < gx.numel(); ++i) gx[i] += S(2) * x->value[i] * g;
    });
}

/// Inner product with a constant weight tensor of the same shape.
template <class S>
NodePtr<S> inner_const(const NodePtr<S>& x, Tensor<S> weights) {
    if (!x->value.same_shape(weights)) detail::shape_error("inner_const: shape mismatch");
    S acc = 0;
    for (std::int64_t i = 0; i < weights.numel(); ++i) acc += weights[i] * x->value[i];
    return make_op<S>(Tensor<S>::scalar(acc), {x}, "inner_const",
                      [x, weights = std::move(weights)](Node<S>& self) {
                          if (!x->requires_grad) return;
                          const S g = self.grad()[0];
                          auto& gx = x->grad();
                          for (std::int64_t i = 0; i < gx.numel(); ++i) gx[i] += weights[i] * g;
                      });
}

// ---------------------------------------------------------------------------
// convolution
// ---------------------------------------------------------------------------

/// Direct 2-d convolution of an image stack x [N, Cin, H, W] with weights
/// [Cout, Cin, K, K] and bias [Cout]; taps outside the zero-padded border are
/// skipped. Output is [N, Cout, Ho, Wo] with Ho = (H + 2p - K)/stride + 1.
template <class S>
NodePtr<S> conv2d(const NodePtr<S>& x, const NodePtr<S>& w, const NodePtr<S>& bias, std::int64_t stride,
                  std::int64_t pad) {
    detail::require_rank(x->value, 4, "conv2d");
    detail::require_rank(w->value, 4, "conv2d");
    if (stride < 1 || pad < 0) throw std::invalid_argument("conv2d: bad stride/padding");
    const std::int64_t n_img = x->value.extent(0), c_in = x->value.extent(1);
    const std::int64_t h = x->value.extent(2), wdt = x->value.extent(3);
    const std::int64_t c_out = w->value.extent(0), kh = w->value.extent(2), kw = w->value.extent(3);
    if (w->value.extent(1) != c_in) detail::shape_error("conv2d: channel mismatch");
    if (bias && bias->value.numel() != c_out) detail::shape_error("conv2d: bias length mismatch");
    const std::int64_t ho = (h + 2 * pad - kh) / stride + 1;
    const std::int64_t wo = (wdt + 2 * pad - kw) / stride + 1;
    if (ho < 1 || wo < 1) detail::shape_error("conv2d: non-positive output size");

    Tensor<S> out(Shape{n_img, c_out, ho, wo});
    for (std::int64_t n = 0; n < n_img; ++n)
        for (std::int64_t co = 0; co < c_out; ++co) {
            const S bv = bias ? bias->value[co] : S(0);
            for (std::int64_t r = 0; r < ho; ++r)
                for (std::int64_t q = 0; q < wo; ++q) {
                    S acc = bv;
                    const std::int64_t hi0 = r * stride - pad, wi0 = q * stride - pad;
                    for (std::int64_t ci = 0; ci < c_in; ++ci)
                        for (std::int64_t a = std::max<std::int64_t>(0, -hi0);
                             a < std::min(kh, h - hi0); ++a)
                            for (std::int64_t b = std::max<std::int64_t>(0, -wi0);
                                 b < std::min(kw, wdt - wi0); ++b)
                                acc += x->value.at(n, ci, hi0 + a, wi0 + b) * w->value.at(co, ci, a, b);
                    out.at(n, co, r, q) = acc;
                }
        }

    std::vector<NodePtr<S>> parents{x, w};
    if (bias) parents.push_back(bias);
    return make_op<S>(std::move(out), std::move(parents), "conv2d",
                      [x, w, bias, n_img, c_in, h, wdt, c_out, kh, kw, ho, wo, stride, pad](Node<S>& self) {
                          const auto& g = self.grad();
                          const bool need_x = x->requires_grad, need_w = w->requires_grad;
                          if (need_x || need_w) {
                              for (std::int64_t n = 0; n < n_img; ++n)
                                  for (std::int64_t co = 0; co < c_out; ++co)
                                      for (std::int64_t r = 0; r < ho; ++r)
                                          for (std::int64_t q = 0; q < wo; ++q) {
                                              const S go = g.at(n, co, r, q);
                                              if (go == S(0)) continue;
                                              const std::int64_t hi0 = r * stride - pad, wi0 = q * stride - pad;
                                              for (std::int64_t ci = 0; ci < c_in; ++ci)
                                                  for (std::int64_t a = std::max<std::int64_t>(0, -hi0);
                                                       a < std::min(kh, h - hi0); ++a)
                                                      for (std::int64_t b = std::max<std::int64_t>(0, -wi0);
                                                           b < std::min(kw, wdt - wi0); ++b) {
                                                          if (need_x)
                                                              x->grad().at(n, ci, hi0 + a, wi0 + b) +=
                                                                  w->value.at(co, ci, a, b) * go;
                                                          if (need_w)
                                                              w->grad().at(co, ci, a, b) +=
                                                                  x->value.at(n, ci, hi0 + a, wi0 + b) * go;
                                                      }
                                          }
                          }
                          if (bias && bias->requires_grad) {
                              auto& gb = bias->grad();
                              for (std::int64_t n = 0; n < n_img; ++n)
                                  for (std::int64_t co = 0; co < c_out; ++co) {
                                      S acc = 0;
                                      for (std::int64_t r = 0; r < ho; ++r)
                                          for (std::int64_t q = 0; q < wo; ++q) acc += g.at(n, co, r, q);
                                      gb[co] += acc;
                                  }
                          }
                      });
}

/// Rearranges a feature stack [N, c, h, w] into the channels-major position
/// matrix [c, N*h*w]; position (n, r, q) maps to column (n*h + r)*w + q.
template <class S>
NodePtr<S> images_to_feature_matrix(const NodePtr<S>& x) {
    detail::require_rank(x->value, 4, "images_to_feature_matrix");
    const std::int64_t n_img = x->value.extent(0), c = x->value.extent(1);
    const std::int64_t h = x->value.extent(2), w = x->value.extent(3);
    Tensor<S> out(Shape{c, n_img * h * w});
    for (std::int64_t n = 0; n < n_img; ++n)
        for (std::int64_t j = 0; j < c; ++j)
            for (std::int64_t r = 0; r < h; ++r)
                for (std::int64_t q = 0; q < w; ++q) out.at(j, (n * h + r) * w + q) = x->value.at(n, j, r, q);
    return make_op<S>(std::move(out), {x}, "to_feature_matrix", [x, n_img, c, h, w](Node<S>& self) {
        if (!x->requires_grad) return;
        auto& gx = x->grad();
        const auto& g = self.grad();
        for (std::int64_t n = 0; n < n_img; ++n)
            for (std::int64_t j = 0; j < c; ++j)
                for (std::int64_t r = 0; r < h; ++r)
                    for (std::int64_t q = 0; q < w; ++q) gx.at(n, j, r, q) += g.at(j, (n * h + r) * w + q);
    });
}

} // namespace rra
