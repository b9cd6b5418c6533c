#pragma once

#include <array>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "patchcert/ops.hpp"
#include "patchcert/tensor.hpp"

namespace patchcert {

/// Records the forward ops the region scorer needs and replays them in reverse.
///
/// Values are stored per node; gradients are allocated only for nodes that
/// (transitively) depend on a leaf created with `requires_grad`.
template <class T>
class GradTape {
public:
    using Var = std::size_t;

    Var leaf(BasicTensor<T> value, bool requires_grad = false) {
        nodes_.push_back(Node{std::move(value), {}, requires_grad});
        return nodes_.size() - 1;
    }

    const BasicTensor<T>& value(Var v) const { return nodes_.at(v).value; }

    /// Gradient accumulated by the last `backward`; zeros if the node received none.
    BasicTensor<T> grad(Var v) const {
        const Node& node = nodes_.at(v);
        return node.grad.empty() ? BasicTensor<T>(node.value.shape()) : node.grad;
    }

    bool requires_grad(Var v) const { return nodes_.at(v).requires_grad; }

    Var conv2d(Var x, Var kernel, int stride, int padding) {
        auto out = patchcert::conv2d(value(x), value(kernel), stride, padding);
        return record(OpKind::conv2d, {x, kernel, npos}, std::move(out), stride, padding);
    }

    /// Adds a per-channel bias of shape 1x1x1xC.
    Var bias_add(Var x, Var bias) {
        check_channel_param(value(x), value(bias), "bias_add");
        BasicTensor<T> out = value(x);
        const auto& b = value(bias);
        const int c = out.shape().c;
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i % c];
        return record(OpKind::bias_add, {x, bias, npos}, std::move(out));
    }

    /// y = x * scale + shift per channel.
    Var channel_affine(Var x, Var scale, Var shift) {
        check_channel_param(value(x), value(scale), "channel_affine");
        check_channel_param(value(x), value(shift), "channel_affine");
        BasicTensor<T> out = value(x);
        const auto& a = value(scale);
        const auto& b = value(shift);
        const int c = out.shape().c;
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] * a[i % c] + b[i % c];
        return record(OpKind::channel_affine, {x, scale, shift}, std::move(out));
    }

    Var add(Var a, Var b) {
        BasicTensor<T> out = value(a);
        out += value(b);
        return record(OpKind::add, {a, b, npos}, std::move(out));
    }

    Var activation(Var x, Activation mode) {
        auto out = patchcert::activation(value(x), mode);
        return record(OpKind::activation, {x, npos, npos}, std::move(out), 1, 0, mode);
    }

    /// Reverse-mode sweep from `out` seeded with `seed` (same shape as out).
    void backward(Var out, const BasicTensor<T>& seed) {
        if (seed.shape() != value(out).shape()) {
            throw std::invalid_argument("backward: seed " + seed.shape().str() + " vs output " +
                                        value(out).shape().str());
        }
        for (auto& n : nodes_) n.grad = BasicTensor<T>();
        nodes_[out].grad = seed;
        for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
            const Op& op = *it;
            if (nodes_[op.output].grad.empty()) continue;
            replay(op);
        }
    }

    std::size_t node_count() const { return nodes_.size(); }

private:
    static constexpr Var npos = static_cast<Var>(-1);

    enum class OpKind { conv2d, bias_add, channel_affine, add, activation };

    struct Node {
        BasicTensor<T> value;
        BasicTensor<T> grad;
        bool requires_grad = false;
    };

    struct Op {
        OpKind kind;
        std::array<Var, 3> inputs;
        Var output;
        int stride = 1;
        int padding = 0;
        Activation mode = Activation::relu;
    };

    static void check_channel_param(const BasicTensor<T>& x, const BasicTensor<T>& p,
                                    const char* what) {
        if (p.shape() != Shape{1, 1, 1, x.shape().c}) {
            throw std::invalid_argument(std::string(what) + ": parameter " + p.shape().str() +
                                        " does not match input " + x.shape().str());
        }
    }

    Var record(OpKind kind, std::array<Var, 3> inputs, BasicTensor<T> out, int stride = 1,
               int padding = 0, Activation mode = Activation::relu) {
        bool needs = false;
        for (Var in : inputs) {
            if (in != npos && nodes_[in].requires_grad) needs = true;
        }
        nodes_.push_back(Node{std::move(out), {}, needs});
        const Var v = nodes_.size() - 1;
        if (needs) ops_.push_back(Op{kind, inputs, v, stride, padding, mode});
        return v;
    }

    void accumulate(Var v, BasicTensor<T> g) {
        Node& n = nodes_[v];
        if (!n.requires_grad) return;
        if (n.grad.empty()) {
            n.grad = std::move(g);
        } else {
            n.grad += g;
        }
    }

    void replay(const Op& op) {
        const BasicTensor<T>& g = nodes_[op.output].grad;
        const auto [a, b, c] = op.inputs;
        switch (op.kind) {
            case OpKind::conv2d:
                if (nodes_[a].requires_grad) {
                    accumulate(a, conv2d_backward_input(g, value(b), value(a).shape(), op.stride,
                                                        op.padding));
                }
                if (nodes_[b].requires_grad) {
                    accumulate(b, conv2d_backward_kernel(g, value(a), value(b).shape(), op.stride,
                                                         op.padding));
                }
                break;
            case OpKind::bias_add: {
                accumulate(a, g);
                BasicTensor<T> gb(value(b).shape());
                const int ch = g.shape().c;
                for (std::size_t i = 0; i < g.size(); ++i) gb[i % ch] += g[i];
                accumulate(b, std::move(gb));
                break;
            }
            case OpKind::channel_affine: {
                const auto& x = value(a);
                const auto& scale = value(b);
                const int ch = g.shape().c;
                if (nodes_[a].requires_grad) {
                    BasicTensor<T> gx(x.shape());
                    for (std::size_t i = 0; i < g.size(); ++i) gx[i] = g[i] * scale[i % ch];
                    accumulate(a, std::move(gx));
                }
                BasicTensor<T> gs(scale.shape());
                BasicTensor<T> gt(scale.shape());
                for (std::size_t i = 0; i < g.size(); ++i) {
                    gs[i % ch] += g[i] * x[i];
                    gt[i % ch] += g[i];
                }
                accumulate(b, std::move(gs));
                accumulate(c, std::move(gt));
                break;
            }
            case OpKind::add:
                accumulate(a, g);
                accumulate(b, g);
                break;
            case OpKind::activation:
                accumulate(a, activation_backward(value(a), value(op.output), g, op.mode));
                break;
        }
    }

    std::vector<Node> nodes_;
    std::vector<Op> ops_;
};

}  // namespace patchcert
