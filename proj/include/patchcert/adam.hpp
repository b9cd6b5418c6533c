#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "patchcert/tensor.hpp"

namespace patchcert {

struct AdamHyper {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

template <class T>
struct AdamState {
    std::vector<BasicTensor<T>> first_moment;
    std::vector<BasicTensor<T>> second_moment;
    std::int64_t step = 0;
};

template <class T>
struct ParamRef {
    std::string_view name;
    BasicTensor<T>* value;
    const BasicTensor<T>* grad;
};

class NonFiniteGradient : public std::runtime_error {
public:
    explicit NonFiniteGradient(std::string param)
        : std::runtime_error("non-finite gradient in parameter '" + param + "'"),
          param_(std::move(param)) {}
    const std::string& parameter() const { return param_; }

private:
    std::string param_;
};

/// One Adam update over all parameters. Nothing is modified if any gradient is non-finite.
template <class T>
void adam_step(std::span<const ParamRef<T>> params, AdamState<T>& state, double lr,
               const AdamHyper& hyper = {}) {
    for (const auto& p : params) {
        if (p.grad->shape() != p.value->shape()) {
            throw std::invalid_argument("adam: gradient " + p.grad->shape().str() +
                                        " vs parameter " + p.value->shape().str() + " for '" +
                                        std::string(p.name) + "'");
        }
        if (!p.grad->all_finite()) throw NonFiniteGradient(std::string(p.name));
    }
    if (state.first_moment.empty()) {
        for (const auto& p : params) {
            state.first_moment.emplace_back(p.value->shape());
            state.second_moment.emplace_back(p.value->shape());
        }
    }
    if (state.first_moment.size() != params.size()) {
        throw std::invalid_argument("adam: state tracks " +
                                    std::to_string(state.first_moment.size()) +
                                    " parameters, got " + std::to_string(params.size()));
    }
    for (std::size_t k = 0; k < params.size(); ++k) {
        if (state.first_moment[k].shape() != params[k].value->shape()) {
            throw std::invalid_argument("adam: moment shape mismatch for '" +
                                        std::string(params[k].name) + "'");
        }
    }

    state.step += 1;
    const double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.step));
    for (std::size_t k = 0; k < params.size(); ++k) {
        BasicTensor<T>& w = *params[k].value;
        const BasicTensor<T>& g = *params[k].grad;
        BasicTensor<T>& m = state.first_moment[k];
        BasicTensor<T>& v = state.second_moment[k];
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double gi = g[i];
            const double mi = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * gi;
            const double vi = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * gi * gi;
            m[i] = static_cast<T>(mi);
            v[i] = static_cast<T>(vi);
            const double update = lr * (mi / bc1) / (std::sqrt(vi / bc2) + hyper.epsilon);
            w[i] = static_cast<T>(w[i] - update);
        }
    }
}

}  // namespace patchcert
