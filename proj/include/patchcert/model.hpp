#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "patchcert/geometry.hpp"
#include "patchcert/ops.hpp"
#include "patchcert/tape.hpp"
#include "patchcert/tensor.hpp"

namespace patchcert {

struct BlockSpec {
    int kernel = 1;
    int stride = 1;
    int width = 64;
    friend bool operator==(const BlockSpec&, const BlockSpec&) = default;
};

/// Small-receptive-field residual region scorer: a k x k stem, residual blocks
/// (k x k conv then 1 x 1 conv, identity or 1 x 1 projection skip) and a 1 x 1 head.
struct NetworkSpec {
    int in_h = 32;
    int in_w = 32;
    int in_c = 3;
    int stem_kernel = 3;
    int stem_width = 64;
    std::vector<BlockSpec> blocks;
    int classes = 10;
    Activation head = Activation::heaviside_st;

    int final_width() const { return blocks.empty() ? stem_width : blocks.back().width; }

    /// Stem, one entry per block (its k x k conv carries the stride), then the 1 x 1 head.
    NetGeometry geometry() const {
        NetGeometry g{in_h, in_w, {}};
        g.layers.push_back(LayerGeom::same(stem_kernel));
        for (const auto& b : blocks) g.layers.push_back(LayerGeom::same(b.kernel, b.stride));
        g.layers.push_back(LayerGeom::same(1));
        return g;
    }

    void validate() const {
        auto fail = [](const std::string& m) { throw std::invalid_argument("network spec: " + m); };
        if (in_h < 1 || in_w < 1 || in_c < 1) fail("input dimensions must be positive");
        if (classes < 2) fail("need at least two classes");
        if (head == Activation::relu) fail("relu is not a valid head activation");
        if (stem_kernel != 1 && stem_kernel != 3) fail("stem kernel must be 1 or 3");
        if (stem_width < 1) fail("stem width must be positive");
        int h = in_h;
        int w = in_w;
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            const auto& b = blocks[i];
            const std::string tag = "block " + std::to_string(i + 1);
            if (b.kernel != 1 && b.kernel != 3) fail(tag + " kernel must be 1 or 3");
            if (b.stride != 1 && b.stride != 2) fail(tag + " stride must be 1 or 2");
            if (b.width < 1) fail(tag + " width must be positive");
            if (h % b.stride != 0 || w % b.stride != 0) {
                fail(tag + " stride " + std::to_string(b.stride) + " does not divide " +
                     std::to_string(h) + "x" + std::to_string(w));
            }
            h /= b.stride;
            w /= b.stride;
        }
    }

    friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

/// Block kernel sizes (stem, b1..b8) for the stride-1 32x32 configurations.
inline std::vector<int> scorer_kernels(int rf) {
    switch (rf) {
        case 5: return {3, 3, 1, 1, 1, 1, 1, 1, 1};
        case 7: return {3, 3, 1, 3, 1, 1, 1, 1, 1};
        case 9: return {3, 3, 1, 3, 1, 3, 1, 1, 1};
        case 11: return {3, 3, 1, 3, 1, 3, 1, 3, 1};
        case 13: return {3, 3, 3, 3, 1, 3, 1, 3, 1};
        default: throw std::invalid_argument("no stride-1 configuration for rf " + std::to_string(rf));
    }
}

inline NetworkSpec scorer_spec(int rf, int in_h, int in_w, int in_c, int classes, int width,
                                Activation head = Activation::heaviside_st) {
    const auto k = scorer_kernels(rf);
    NetworkSpec s;
    s.in_h = in_h;
    s.in_w = in_w;
    s.in_c = in_c;
    s.stem_kernel = k[0];
    s.stem_width = width;
    for (std::size_t i = 1; i < k.size(); ++i) s.blocks.push_back({k[i], 1, width});
    s.classes = classes;
    s.head = head;
    return s;
}

/// Strided 224x224 configurations (stride 2 in blocks 1 and 3, widths 64..512).
inline NetworkSpec scorer_imagenet_spec(int rf, int classes = 1000) {
    std::vector<int> k;
    switch (rf) {
        case 17: k = {3, 3, 1, 3, 1, 3, 1, 1, 1}; break;
        case 25: k = {3, 3, 1, 3, 1, 3, 1, 3, 1}; break;
        case 29: k = {3, 3, 3, 3, 1, 3, 1, 3, 1}; break;
        default: throw std::invalid_argument("no strided configuration for rf " + std::to_string(rf));
    }
    const int widths[8] = {64, 64, 128, 128, 256, 256, 512, 512};
    NetworkSpec s;
    s.in_h = 224;
    s.in_w = 224;
    s.in_c = 3;
    s.stem_kernel = k[0];
    s.stem_width = 64;
    for (int i = 0; i < 8; ++i) s.blocks.push_back({k[i + 1], (i == 0 || i == 2) ? 2 : 1, widths[i]});
    s.classes = classes;
    return s;
}

template <class T>
struct BasicParameters {
    std::vector<std::string> names;
    std::vector<BasicTensor<T>> tensors;

    std::size_t index_of(std::string_view name) const {
        for (std::size_t i = 0; i < names.size(); ++i) {
            if (names[i] == name) return i;
        }
        throw std::out_of_range("no parameter named '" + std::string(name) + "'");
    }
    const BasicTensor<T>& get(std::string_view name) const { return tensors[index_of(name)]; }
    BasicTensor<T>& get(std::string_view name) { return tensors[index_of(name)]; }

    std::size_t element_count() const {
        std::size_t n = 0;
        for (const auto& t : tensors) n += t.size();
        return n;
    }

    bool all_finite() const {
        for (const auto& t : tensors) {
            if (!t.all_finite()) return false;
        }
        return true;
    }

    template <class U>
    BasicParameters<U> cast() const {
        BasicParameters<U> out;
        out.names = names;
        for (const auto& t : tensors) out.tensors.push_back(t.template cast<U>());
        return out;
    }

    friend bool operator==(const BasicParameters&, const BasicParameters&) = default;
};

using Parameters = BasicParameters<float>;

enum class InitKind { relu_conv, linear_conv, one, zero };

struct ParamSlot {
    std::string name;
    Shape shape;
    InitKind init;
};

/// Canonical parameter order and shapes for a spec.
inline std::vector<ParamSlot> parameter_layout(const NetworkSpec& spec) {
    spec.validate();
    std::vector<ParamSlot> out;
    auto channel = [](int c) { return Shape{1, 1, 1, c}; };
    out.push_back({"stem.conv", {spec.stem_kernel, spec.stem_kernel, spec.in_c, spec.stem_width},
                   InitKind::relu_conv});
    out.push_back({"stem.scale", channel(spec.stem_width), InitKind::one});
    out.push_back({"stem.shift", channel(spec.stem_width), InitKind::zero});
    int width = spec.stem_width;
    for (std::size_t i = 0; i < spec.blocks.size(); ++i) {
        const auto& b = spec.blocks[i];
        const std::string p = "b" + std::to_string(i + 1) + ".";
        out.push_back({p + "conv1", {b.kernel, b.kernel, width, b.width}, InitKind::relu_conv});
        out.push_back({p + "scale1", channel(b.width), InitKind::one});
        out.push_back({p + "shift1", channel(b.width), InitKind::zero});
        out.push_back({p + "conv2", {1, 1, b.width, b.width}, InitKind::relu_conv});
        // zero-init of the residual branch output: every block starts as identity
        out.push_back({p + "scale2", channel(b.width), InitKind::zero});
        out.push_back({p + "shift2", channel(b.width), InitKind::zero});
        if (b.stride != 1 || b.width != width) {
            out.push_back({p + "proj", {1, 1, width, b.width}, InitKind::linear_conv});
        }
        width = b.width;
    }
    out.push_back({"head.conv", {1, 1, width, spec.classes}, InitKind::linear_conv});
    out.push_back({"head.bias", channel(spec.classes), InitKind::zero});
    return out;
}

/// Fan-in scaled uniform initialization, deterministic in `seed`.
inline Parameters build_model(const NetworkSpec& spec, std::uint64_t seed) {
    const auto layout = parameter_layout(spec);
    std::mt19937_64 rng(seed);
    Parameters p;
    for (const auto& slot : layout) {
        Tensor t(slot.shape);
        const int fan_in = slot.shape.n * slot.shape.h * slot.shape.w;
        switch (slot.init) {
            case InitKind::relu_conv:
            case InitKind::linear_conv: {
                const double gain = slot.init == InitKind::relu_conv ? 6.0 : 3.0;
                std::uniform_real_distribution<float> u(
                    -static_cast<float>(std::sqrt(gain / fan_in)),
                    static_cast<float>(std::sqrt(gain / fan_in)));
                for (auto& v : t.values()) v = u(rng);
                break;
            }
            case InitKind::one: t.fill(1.0f); break;
            case InitKind::zero: break;
        }
        p.names.push_back(slot.name);
        p.tensors.push_back(std::move(t));
    }
    return p;
}

template <class T>
struct ModelGraph {
    using Var = typename GradTape<T>::Var;
    Var input;
    Var logits;
    Var head;
    std::vector<Var> params;  // same order as BasicParameters::tensors
};

template <class T>
void check_input(const NetworkSpec& spec, const BasicTensor<T>& x) {
    const Shape& s = x.shape();
    if (s.h != spec.in_h || s.w != spec.in_w || s.c != spec.in_c) {
        throw std::invalid_argument("forward: input " + s.str() + " does not match spec [Nx" +
                                    std::to_string(spec.in_h) + "x" + std::to_string(spec.in_w) +
                                    "x" + std::to_string(spec.in_c) + "]");
    }
    for (T v : x.values()) {
        if (!(v >= T{0} && v <= T{1})) {
            throw std::invalid_argument("forward: input value outside [0,1]");
        }
    }
}

/// Records one forward pass on `tape`. Gradients flow to parameters and/or the input as requested.
template <class T>
ModelGraph<T> record_forward(GradTape<T>& tape, const BasicParameters<T>& params,
                             const NetworkSpec& spec, const BasicTensor<T>& x, Activation mode,
                             bool param_grads, bool input_grad = false) {
    check_input(spec, x);
    const auto layout = parameter_layout(spec);
    if (layout.size() != params.tensors.size()) {
        throw std::invalid_argument("forward: parameter count " +
                                    std::to_string(params.tensors.size()) + " does not match spec (" +
                                    std::to_string(layout.size()) + ")");
    }
    ModelGraph<T> g;
    for (std::size_t i = 0; i < layout.size(); ++i) {
        if (params.tensors[i].shape() != layout[i].shape) {
            throw std::invalid_argument("forward: parameter '" + layout[i].name + "' has shape " +
                                        params.tensors[i].shape().str() + ", expected " +
                                        layout[i].shape.str());
        }
        g.params.push_back(tape.leaf(params.tensors[i], param_grads));
    }
    std::size_t next = 0;
    auto take = [&] { return g.params[next++]; };

    g.input = tape.leaf(x, input_grad);
    auto h = tape.conv2d(g.input, take(), 1, spec.stem_kernel / 2);
    {
        auto scale = take();
        auto shift = take();
        h = tape.activation(tape.channel_affine(h, scale, shift), Activation::relu);
    }
    int width = spec.stem_width;
    for (const auto& b : spec.blocks) {
        auto r = tape.conv2d(h, take(), b.stride, b.kernel / 2);
        auto s1 = take();
        auto t1 = take();
        r = tape.activation(tape.channel_affine(r, s1, t1), Activation::relu);
        r = tape.conv2d(r, take(), 1, 0);
        auto s2 = take();
        auto t2 = take();
        r = tape.channel_affine(r, s2, t2);
        auto skip = h;
        if (b.stride != 1 || b.width != width) skip = tape.conv2d(h, take(), b.stride, 0);
        h = tape.activation(tape.add(r, skip), Activation::relu);
        width = b.width;
    }
    auto logits = tape.conv2d(h, take(), 1, 0);
    g.logits = tape.bias_add(logits, take());
    g.head = tape.activation(g.logits, mode);
    return g;
}

template <class T>
struct ForwardResult {
    BasicTensor<T> logits;
    BasicTensor<T> head;
};

template <class T>
ForwardResult<T> forward(const BasicParameters<T>& params, const NetworkSpec& spec,
                         const BasicTensor<T>& x, Activation mode) {
    GradTape<T> tape;
    const auto g = record_forward(tape, params, spec, x, mode, false, false);
    return {tape.value(g.logits), tape.value(g.head)};
}

template <class T>
ForwardResult<T> forward(const BasicParameters<T>& params, const NetworkSpec& spec,
                         const BasicTensor<T>& x) {
    return forward(params, spec, x, spec.head);
}

}  // namespace patchcert
