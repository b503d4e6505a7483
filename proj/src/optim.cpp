#include "synthaug/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace synthaug {

template <typename T>
void adam_step(std::span<T> params, std::span<const T> grads, AdamState<T>& state, double lr) {
    if (params.size() != grads.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
        throw std::invalid_argument("adam_step: params, grads and state lengths differ");
    }
    if (!(lr > 0.0)) throw std::invalid_argument("adam_step: learning rate must be positive");
    for (T g : grads) {
        if (!std::isfinite(g)) throw NumericError("adam_step: non-finite gradient");
    }
    state.t += 1;
    const auto& h = state.hyper;
    const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.t));
    const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.t));
    const T b1 = static_cast<T>(h.beta1), b2 = static_cast<T>(h.beta2);
    const T step = static_cast<T>(lr / c1);
    const T inv_c2 = static_cast<T>(1.0 / c2);
    const T eps = static_cast<T>(h.eps);
    for (std::size_t i = 0; i < params.size(); ++i) {
        const T g = grads[i];
        state.m[i] = b1 * state.m[i] + (T{1} - b1) * g;
        state.v[i] = b2 * state.v[i] + (T{1} - b2) * g * g;
        params[i] -= step * state.m[i] / (std::sqrt(state.v[i] * inv_c2) + eps);
    }
}

template void adam_step<float>(std::span<float>, std::span<const float>, AdamState<float>&, double);
template void adam_step<double>(std::span<double>, std::span<const double>, AdamState<double>&, double);

Adam::Adam(std::vector<ad::Var<float>> params, double lr, AdamHyper hyper) : params_(std::move(params)), lr_(lr) {
    states_.reserve(params_.size());
    for (const auto& p : params_) states_.emplace_back(p.value().size(), hyper);
}

void Adam::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

void Adam::step() {
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& p = params_[i];
        const auto& g = p.grad_buffer();
        adam_step<float>(p.mutable_value().data(), g.data(), states_[i], lr_);
    }
}

} // namespace synthaug
