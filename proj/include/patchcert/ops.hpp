#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "patchcert/tensor.hpp"

namespace patchcert {

enum class Activation { relu, heaviside_st, sigmoid, softmax_channel };

inline std::string_view to_string(Activation a) {
    switch (a) {
        case Activation::relu: return "relu";
        case Activation::heaviside_st: return "heaviside_st";
        case Activation::sigmoid: return "sigmoid";
        case Activation::softmax_channel: return "softmax_channel";
    }
    return "unknown";
}

inline Activation activation_from_string(std::string_view name) {
    if (name == "relu") return Activation::relu;
    if (name == "heaviside_st" || name == "heaviside") return Activation::heaviside_st;
    if (name == "sigmoid") return Activation::sigmoid;
    if (name == "softmax_channel" || name == "softmax") return Activation::softmax_channel;
    throw std::invalid_argument("unknown activation mode '" + std::string(name) + "'");
}

inline int conv_output_size(int in, int kernel, int stride, int padding) {
    return (in + 2 * padding - kernel) / stride + 1;
}

namespace detail {

template <class T>
using wide_t = std::conditional_t<(sizeof(T) < sizeof(double)), double, T>;

inline void check_conv(const Shape& in, const Shape& k, int stride, int padding) {
    if (stride < 1 || padding < 0) {
        throw std::invalid_argument("conv2d: stride " + std::to_string(stride) + ", padding " +
                                    std::to_string(padding));
    }
    if (k.n % 2 == 0 || k.h % 2 == 0) {
        throw std::invalid_argument("conv2d: kernel " + k.str() + " must have odd spatial size");
    }
    if (in.c != k.w) {
        throw std::invalid_argument("conv2d: input " + in.str() + " does not match kernel " +
                                    k.str() + " (input channels)");
    }
    if (in.h + 2 * padding < k.n || in.w + 2 * padding < k.h) {
        throw std::invalid_argument("conv2d: input " + in.str() + " smaller than kernel " +
                                    k.str());
    }
}

}  // namespace detail

/// Cross-correlation over NHWC input with a (kh, kw, cin, cout) kernel.
template <class T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& kernel, int stride,
                      int padding) {
    const Shape& is = input.shape();
    const Shape& ks = kernel.shape();
    detail::check_conv(is, ks, stride, padding);
    const int oh = conv_output_size(is.h, ks.n, stride, padding);
    const int ow = conv_output_size(is.w, ks.h, stride, padding);
    const int cin = is.c;
    const int cout = ks.c;
    BasicTensor<T> out(Shape{is.n, oh, ow, cout});
    using Acc = detail::wide_t<T>;
    const std::vector<Acc> kw(kernel.values().begin(), kernel.values().end());
    std::vector<Acc> o(cout);
    for (int n = 0; n < is.n; ++n) {
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                std::fill(o.begin(), o.end(), Acc{0});
                for (int ky = 0; ky < ks.n; ++ky) {
                    const int iy = oy * stride - padding + ky;
                    if (iy < 0 || iy >= is.h) continue;
                    for (int kx = 0; kx < ks.h; ++kx) {
                        const int ix = ox * stride - padding + kx;
                        if (ix < 0 || ix >= is.w) continue;
                        const T* in = &input(n, iy, ix, 0);
                        const Acc* kr = kw.data() + (static_cast<std::size_t>(ky) * ks.h + kx) * cin * cout;
                        for (int ci = 0; ci < cin; ++ci) {
                            const Acc v = in[ci];
                            if (v == Acc{0}) continue;
                            const Acc* row = kr + static_cast<std::size_t>(ci) * cout;
                            for (int co = 0; co < cout; ++co) o[co] += v * row[co];
                        }
                    }
                }
                T* dst = &out(n, oy, ox, 0);
                for (int co = 0; co < cout; ++co) dst[co] = static_cast<T>(o[co]);
            }
        }
    }
    return out;
}

/// Gradient of conv2d with respect to its input.
template <class T>
BasicTensor<T> conv2d_backward_input(const BasicTensor<T>& grad_out, const BasicTensor<T>& kernel,
                                     const Shape& input_shape, int stride, int padding) {
    const Shape& ks = kernel.shape();
    const Shape& gs = grad_out.shape();
    const int cin = input_shape.c;
    const int cout = ks.c;
    BasicTensor<T> grad_in(input_shape);
    // (kh, kw, cout, cin) copy so the inner loop runs over contiguous input channels
    std::vector<T> kt(kernel.size());
    for (int t = 0; t < ks.n * ks.h; ++t)
        for (int ci = 0; ci < cin; ++ci)
            for (int co = 0; co < cout; ++co)
                kt[(static_cast<std::size_t>(t) * cout + co) * cin + ci] =
                    kernel.values()[(static_cast<std::size_t>(t) * cin + ci) * cout + co];
    for (int n = 0; n < gs.n; ++n) {
        for (int oy = 0; oy < gs.h; ++oy) {
            for (int ox = 0; ox < gs.w; ++ox) {
                const T* g = &grad_out(n, oy, ox, 0);
                for (int ky = 0; ky < ks.n; ++ky) {
                    const int iy = oy * stride - padding + ky;
                    if (iy < 0 || iy >= input_shape.h) continue;
                    for (int kx = 0; kx < ks.h; ++kx) {
                        const int ix = ox * stride - padding + kx;
                        if (ix < 0 || ix >= input_shape.w) continue;
                        T* gi = &grad_in(n, iy, ix, 0);
                        const T* kr = kt.data() + (static_cast<std::size_t>(ky) * ks.h + kx) * cout * cin;
                        for (int co = 0; co < cout; ++co) {
                            const T gv = g[co];
                            if (gv == T{0}) continue;
                            const T* row = kr + static_cast<std::size_t>(co) * cin;
                            for (int ci = 0; ci < cin; ++ci) gi[ci] += gv * row[ci];
                        }
                    }
                }
            }
        }
    }
    return grad_in;
}

/// Gradient of conv2d with respect to its kernel.
template <class T>
BasicTensor<T> conv2d_backward_kernel(const BasicTensor<T>& grad_out, const BasicTensor<T>& input,
                                      const Shape& kernel_shape, int stride, int padding) {
    const Shape& is = input.shape();
    const Shape& gs = grad_out.shape();
    const int cin = is.c;
    const int cout = kernel_shape.c;
    BasicTensor<T> grad_k(kernel_shape);
    // two horizontally adjacent outputs per pass halve the stores into grad_k
    for (int n = 0; n < gs.n; ++n) {
        for (int oy = 0; oy < gs.h; ++oy) {
            for (int ox = 0; ox < gs.w; ox += 2) {
                const bool pair = ox + 1 < gs.w;
                const T* ga = &grad_out(n, oy, ox, 0);
                const T* gb = pair ? ga + cout : nullptr;
                for (int ky = 0; ky < kernel_shape.n; ++ky) {
                    const int iy = oy * stride - padding + ky;
                    if (iy < 0 || iy >= is.h) continue;
                    for (int kx = 0; kx < kernel_shape.h; ++kx) {
                        const int ia = ox * stride - padding + kx;
                        const int ib = ia + stride;
                        const bool va = ia >= 0 && ia < is.w;
                        const bool vb = pair && ib >= 0 && ib < is.w;
                        T* kr = &grad_k(ky, kx, 0, 0);
                        if (va && vb) {
                            const T* in_a = &input(n, iy, ia, 0);
                            const T* in_b = &input(n, iy, ib, 0);
                            for (int ci = 0; ci < cin; ++ci) {
                                const T a = in_a[ci];
                                const T b = in_b[ci];
                                if (a == T{0} && b == T{0}) continue;
                                T* row = kr + static_cast<std::size_t>(ci) * cout;
                                for (int co = 0; co < cout; ++co) row[co] += a * ga[co] + b * gb[co];
                            }
                            continue;
                        }
                        for (int side = 0; side < 2; ++side) {
                            if (!(side == 0 ? va : vb)) continue;
                            const T* in = &input(n, iy, side == 0 ? ia : ib, 0);
                            const T* g = side == 0 ? ga : gb;
                            for (int ci = 0; ci < cin; ++ci) {
                                const T v = in[ci];
                                if (v == T{0}) continue;
                                T* row = kr + static_cast<std::size_t>(ci) * cout;
                                for (int co = 0; co < cout; ++co) row[co] += v * g[co];
                            }
                        }
                    }
                }
            }
        }
    }
    return grad_k;
}

template <class T>
T logistic(T x) {
    return T{1} / (T{1} + std::exp(-x));
}

/// Heaviside step with H(0) = 1.
template <class T>
T heaviside(T x) {
    return x >= T{0} ? T{1} : T{0};
}

/// Surrogate derivative used by the straight-through Heaviside: s(x)(1 - s(x)).
template <class T>
T heaviside_st_grad(T x) {
    const T s = logistic(x);
    return s * (T{1} - s);
}

template <class T>
BasicTensor<T> activation(const BasicTensor<T>& input, Activation mode) {
    BasicTensor<T> out(input.shape());
    const std::size_t size = input.size();
    switch (mode) {
        case Activation::relu:
            for (std::size_t i = 0; i < size; ++i) out[i] = input[i] > T{0} ? input[i] : T{0};
            break;
        case Activation::heaviside_st:
            for (std::size_t i = 0; i < size; ++i) out[i] = heaviside(input[i]);
            break;
        case Activation::sigmoid:
            for (std::size_t i = 0; i < size; ++i) out[i] = logistic(input[i]);
            break;
        case Activation::softmax_channel: {
            const int c = input.shape().c;
            for (std::size_t base = 0; base < size; base += c) {
                T mx = input[base];
                for (int k = 1; k < c; ++k) mx = std::max(mx, input[base + k]);
                T sum{0};
                for (int k = 0; k < c; ++k) {
                    out[base + k] = std::exp(input[base + k] - mx);
                    sum += out[base + k];
                }
                for (int k = 0; k < c; ++k) out[base + k] /= sum;
            }
            break;
        }
    }
    return out;
}

/// Backward of `activation`, given the forward input and output.
template <class T>
BasicTensor<T> activation_backward(const BasicTensor<T>& input, const BasicTensor<T>& output,
                                   const BasicTensor<T>& grad_out, Activation mode) {
    BasicTensor<T> g(input.shape());
    const std::size_t size = input.size();
    switch (mode) {
        case Activation::relu:
            for (std::size_t i = 0; i < size; ++i) g[i] = input[i] > T{0} ? grad_out[i] : T{0};
            break;
        case Activation::heaviside_st:
            for (std::size_t i = 0; i < size; ++i) g[i] = grad_out[i] * heaviside_st_grad(input[i]);
            break;
        case Activation::sigmoid:
            for (std::size_t i = 0; i < size; ++i) g[i] = grad_out[i] * output[i] * (T{1} - output[i]);
            break;
        case Activation::softmax_channel: {
            const int c = input.shape().c;
            for (std::size_t base = 0; base < size; base += c) {
                T dot{0};
                for (int k = 0; k < c; ++k) dot += grad_out[base + k] * output[base + k];
                for (int k = 0; k < c; ++k) {
                    g[base + k] = output[base + k] * (grad_out[base + k] - dot);
                }
            }
            break;
        }
    }
    return g;
}

}  // namespace patchcert
