#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "patchcert/certifier.hpp"
#include "patchcert/geometry.hpp"
#include "patchcert/loss.hpp"
#include "patchcert/model.hpp"
#include "patchcert/tape.hpp"

namespace patchcert {

struct AttackConfig {
    int patch_h = 5;
    int patch_w = 5;
    int steps = 100;
    double step_size = 0.025;
    double margin = 1.0;
    std::uint64_t seed = 0;

    void validate() const {
        auto fail = [](const std::string& m) { throw std::invalid_argument("attack config: " + m); };
        if (steps < 1) fail("steps must be >= 1");
        if (!(step_size > 0.0)) fail("step size must be positive");
        if (!(margin > 0.0 && margin <= 1.0)) fail("margin must be in (0,1]");
        if (patch_h < 1 || patch_w < 1) fail("patch must be at least 1x1");
    }
};

struct AttackResult {
    PatchRegion region;
    int target = 0;
    Tensor patch;
    Tensor adversarial;
    bool success = false;  // adversarial prediction differs from the true label
    int clean_pred = 0;
    int adv_pred = 0;
    int steps_used = 0;
    std::vector<double> loss_trace;
};

/// Places `patch` (1 x h_p x w_p x C) over region `l` of `x` (1 x H x W x C).
inline Tensor apply_patch(const Tensor& x, const Tensor& patch, const PatchRegion& l) {
    const Shape& xs = x.shape();
    const Shape& ps = patch.shape();
    if (l.top < 0 || l.left < 0 || l.top + l.height > xs.h || l.left + l.width > xs.w) {
        throw std::invalid_argument("apply_patch: region outside input " + xs.str());
    }
    if (ps.n != 1 || ps.h != l.height || ps.w != l.width || ps.c != xs.c) {
        throw std::invalid_argument("apply_patch: patch " + ps.str() + " does not match region " +
                                    std::to_string(l.height) + "x" + std::to_string(l.width));
    }
    Tensor out = x;
    for (int n = 0; n < xs.n; ++n) {
        for (int y = 0; y < l.height; ++y) {
            for (int xx = 0; xx < l.width; ++xx) {
                for (int c = 0; c < xs.c; ++c) {
                    const float v = patch(0, y, xx, c);
                    if (!(v >= 0.0f && v <= 1.0f)) {
                        throw std::invalid_argument("apply_patch: patch value outside [0,1]");
                    }
                    out(n, l.top + y, l.left + xx, c) = v;
                }
            }
        }
    }
    return out;
}

template <class Acc>
struct RegionTarget {
    PatchRegion region;
    std::size_t index = 0;
    int target = 0;
    Acc outside_sum{};  // sum of delta_target outside R(region)
};

/// argmin over (l, c != true) of the delta sum outside R(l); ties go to the
/// earlier region, then the lower class index.
template <class T>
auto select_region_and_target(const BasicScoreMap<T>& s, int true_class, const RegionSet& regions,
                              const NetGeometry& net) {
    using Acc = typename score_traits<T>::accum_type;
    if (s.classes() < 2) throw std::invalid_argument("select_region_and_target: need two classes");
    if (regions.empty()) throw std::invalid_argument("select_region_and_target: empty region set");
    const IntegralImage<T> table(delta_map(s, true_class));
    RegionTarget<Acc> best;
    bool found = false;
    for (std::size_t k = 0; k < regions.size(); ++k) {
        const auto dep = dependency_region(regions[k], net);
        for (int c = 0; c < s.classes(); ++c) {
            if (c == true_class) continue;
            const Acc outside = table.total(c) - table.region_sum(c, dep);
            if (!found || outside < best.outside_sum) {
                best = {regions[k], k, c, outside};
                found = true;
            }
        }
    }
    return best;
}

namespace detail {

inline int predicted_class(const Tensor& head) {
    std::vector<double> sums(head.shape().c, 0.0);
    for (std::size_t i = 0; i < head.size(); ++i) sums[i % head.shape().c] += head[i];
    int best = 0;
    for (int c = 1; c < static_cast<int>(sums.size()); ++c) {
        if (sums[c] > sums[best]) best = c;
    }
    return best;
}

}  // namespace detail

/// Certification-guided region/target choice followed by sign-gradient ascent
/// of the margin loss on the patch pixels only. Stops early once the
/// prediction leaves the true class.
inline AttackResult pgd_patch_attack(const Parameters& params, const NetworkSpec& spec,
                                     const Tensor& x, int true_class, const AttackConfig& config) {
    config.validate();
    check_input(spec, x);
    if (x.shape().n != 1) throw std::invalid_argument("pgd_patch_attack: expects a single image");
    if (config.patch_h > spec.in_h || config.patch_w > spec.in_w) {
        throw std::invalid_argument("attack config: patch larger than input");
    }
    const NetGeometry net = spec.geometry();
    const RegionSet regions = enumerate_regions(spec.in_h, spec.in_w, config.patch_h, config.patch_w);

    AttackResult r;
    const auto clean = forward(params, spec, x);
    r.clean_pred = detail::predicted_class(clean.head);
    if (spec.head == Activation::heaviside_st) {
        const auto pick = select_region_and_target(binary_map_from_head(clean.head, 0), true_class, regions, net);
        r.region = pick.region;
        r.target = pick.target;
    } else {
        const auto pick = select_region_and_target(relaxed_map_from_head(clean.head, 0), true_class, regions, net);
        r.region = pick.region;
        r.target = pick.target;
    }

    std::mt19937_64 rng(config.seed);
    std::uniform_real_distribution<float> unit(0.0f, 1.0f);
    r.patch = Tensor(Shape{1, config.patch_h, config.patch_w, spec.in_c});
    for (auto& v : r.patch.values()) v = unit(rng);

    const Shape out_shape = clean.head.shape();
    const double cells = static_cast<double>(out_shape.h) * out_shape.w;
    std::vector<double> delta;
    std::vector<double> scores;
    for (;;) {
        r.adversarial = apply_patch(x, r.patch, r.region);
        GradTape<float> tape;
        const auto g = record_forward(tape, params, spec, r.adversarial, spec.head, false, true);
        const Tensor& head = tape.value(g.head);
        normalized_sums(head, 0, true_class, delta, scores);
        const double d = delta[r.target];
        r.loss_trace.push_back(-std::min(d, config.margin));
        r.adv_pred = detail::predicted_class(head);
        if (r.adv_pred != true_class) {
            r.success = true;
            break;
        }
        if (r.steps_used == config.steps) break;

        Tensor seed(out_shape);
        if (d < config.margin) {
            for (std::size_t p = 0; p < static_cast<std::size_t>(cells); ++p) {
                seed[p * out_shape.c + true_class] = static_cast<float>(-1.0 / cells);
                seed[p * out_shape.c + r.target] = static_cast<float>(1.0 / cells);
            }
        }
        tape.backward(g.head, seed);
        const Tensor gx = tape.grad(g.input);
        if (!gx.all_finite()) {
            throw std::runtime_error("pgd_patch_attack: non-finite gradient at step " +
                                     std::to_string(r.steps_used));
        }
        for (int y = 0; y < config.patch_h; ++y) {
            for (int xx = 0; xx < config.patch_w; ++xx) {
                for (int c = 0; c < spec.in_c; ++c) {
                    const float gv = gx(0, r.region.top + y, r.region.left + xx, c);
                    const float dir = gv > 0.0f ? 1.0f : (gv < 0.0f ? -1.0f : 0.0f);
                    float& pv = r.patch(0, y, xx, c);
                    pv = std::clamp(pv + static_cast<float>(config.step_size) * dir, 0.0f, 1.0f);
                }
            }
        }
        ++r.steps_used;
    }
    return r;
}

}  // namespace patchcert
