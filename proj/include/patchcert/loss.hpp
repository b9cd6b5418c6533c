#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "patchcert/tensor.hpp"

namespace patchcert {

struct LossWithGrad {
    double value = 0.0;
    std::vector<double> grad;
};

/// -min(min_{c != true} d_c, M) over per-class normalized delta sums `d`
/// (entry `true_class` is ignored). The gradient reaches only the minimizing
/// class (lowest index on ties) and vanishes only strictly above M.
inline LossWithGrad margin_loss(std::span<const double> delta_sums, int true_class, double margin) {
    if (delta_sums.size() < 2) throw std::invalid_argument("margin_loss: need at least two classes");
    if (true_class < 0 || true_class >= static_cast<int>(delta_sums.size())) {
        throw std::invalid_argument("margin_loss: class out of range");
    }
    if (!(margin > 0.0 && margin <= 1.0)) {
        throw std::invalid_argument("margin_loss: margin must be in (0,1]");
    }
    int arg = -1;
    for (int c = 0; c < static_cast<int>(delta_sums.size()); ++c) {
        if (c == true_class) continue;
        if (arg < 0 || delta_sums[c] < delta_sums[arg]) arg = c;
    }
    LossWithGrad out{0.0, std::vector<double>(delta_sums.size(), 0.0)};
    if (delta_sums[arg] <= margin) {
        out.value = -delta_sums[arg];
        out.grad[arg] = -1.0;
    } else {
        out.value = -margin;
    }
    return out;
}

/// max_{c != c_max} S_c - S_{c_max} on class scores normalized to [0,1].
inline LossWithGrad one_hot_penalty(std::span<const double> scores) {
    if (scores.size() < 2) throw std::invalid_argument("one_hot_penalty: need at least two classes");
    int top = 0;
    for (int c = 1; c < static_cast<int>(scores.size()); ++c) {
        if (scores[c] > scores[top]) top = c;
    }
    int second = -1;
    for (int c = 0; c < static_cast<int>(scores.size()); ++c) {
        if (c == top) continue;
        if (second < 0 || scores[c] > scores[second]) second = c;
    }
    LossWithGrad out{scores[second] - scores[top], std::vector<double>(scores.size(), 0.0)};
    out.grad[second] = 1.0;
    out.grad[top] = -1.0;
    return out;
}

struct TotalLoss {
    double value = 0.0;
    std::vector<double> grad_delta;
    std::vector<double> grad_scores;
};

inline TotalLoss total_loss(std::span<const double> delta_sums, std::span<const double> scores,
                            int true_class, double margin, double one_hot_weight) {
    const auto m = margin_loss(delta_sums, true_class, margin);
    TotalLoss out{m.value, m.grad, std::vector<double>(scores.size(), 0.0)};
    if (one_hot_weight != 0.0) {
        const auto oh = one_hot_penalty(scores);
        out.value += one_hot_weight * oh.value;
        for (std::size_t c = 0; c < scores.size(); ++c) out.grad_scores[c] = one_hot_weight * oh.grad[c];
    }
    return out;
}

/// Linear warmup from 0 to base_lr, then half-cosine decay to 0 at total_steps.
inline double lr_schedule(long step, long total_steps, long warmup_steps, double base_lr) {
    if (warmup_steps < 0 || warmup_steps >= total_steps) {
        throw std::invalid_argument("lr_schedule: warmup " + std::to_string(warmup_steps) +
                                    " must be below total " + std::to_string(total_steps));
    }
    if (step < 0 || step > total_steps) throw std::invalid_argument("lr_schedule: step out of range");
    if (step < warmup_steps) return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
    const double t = static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - warmup_steps);
    return 0.5 * base_lr * (1.0 + std::cos(std::numbers::pi * t));
}

template <class T>
struct BatchLoss {
    double value = 0.0;          // mean over the batch
    BasicTensor<T> head_grad;    // d(mean loss) / d(head output)
};

/// Per-example delta sums and class scores from a head output, both divided by h*w.
template <class T>
void normalized_sums(const BasicTensor<T>& head, int n, int true_class, std::vector<double>& delta,
                     std::vector<double>& scores) {
    const Shape& s = head.shape();
    scores.assign(s.c, 0.0);
    const std::size_t base = head.offset(n, 0, 0, 0);
    const std::size_t cells = static_cast<std::size_t>(s.h) * s.w;
    for (std::size_t p = 0; p < cells; ++p) {
        for (int c = 0; c < s.c; ++c) scores[c] += static_cast<double>(head[base + p * s.c + c]);
    }
    for (auto& v : scores) v /= static_cast<double>(cells);
    delta.assign(s.c, 0.0);
    for (int c = 0; c < s.c; ++c) delta[c] = scores[true_class] - scores[c];
}

/// Mean total loss of a batch of head outputs, with its gradient w.r.t. the head.
template <class T>
BatchLoss<T> batch_loss(const BasicTensor<T>& head, std::span<const int> labels, double margin,
                        double one_hot_weight) {
    const Shape& s = head.shape();
    if (static_cast<int>(labels.size()) != s.n) {
        throw std::invalid_argument("batch_loss: " + std::to_string(labels.size()) +
                                    " labels for batch of " + std::to_string(s.n));
    }
    BatchLoss<T> out{0.0, BasicTensor<T>(s)};
    const double cells = static_cast<double>(s.h) * s.w;
    std::vector<double> delta;
    std::vector<double> scores;
    std::vector<double> per_class(s.c);
    for (int n = 0; n < s.n; ++n) {
        const int t = labels[n];
        if (t < 0 || t >= s.c) throw std::invalid_argument("batch_loss: label out of range");
        normalized_sums(head, n, t, delta, scores);
        const auto l = total_loss(delta, scores, t, margin, one_hot_weight);
        out.value += l.value;
        // delta_c = S_t - S_c, so d/dS_k = [k == t] * sum_c g_c - g_k + g_scores_k.
        double sum_gd = 0.0;
        for (int c = 0; c < s.c; ++c) sum_gd += l.grad_delta[c];
        for (int k = 0; k < s.c; ++k) {
            per_class[k] = ((k == t) ? sum_gd : 0.0) - l.grad_delta[k] + l.grad_scores[k];
            per_class[k] /= cells * s.n;
        }
        const std::size_t base = head.offset(n, 0, 0, 0);
        for (std::size_t p = 0; p < static_cast<std::size_t>(cells); ++p) {
            for (int k = 0; k < s.c; ++k) out.head_grad[base + p * s.c + k] = static_cast<T>(per_class[k]);
        }
    }
    out.value /= s.n;
    return out;
}

}  // namespace patchcert
