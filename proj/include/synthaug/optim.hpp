#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "synthaug/autograd.hpp"

namespace synthaug {

struct AdamHyper {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <typename T>
struct AdamState {
    std::vector<T> m;
    std::vector<T> v;
    std::int64_t t = 0;
    AdamHyper hyper;

    AdamState() = default;
    AdamState(std::size_t n, AdamHyper h) : m(n, T{0}), v(n, T{0}), hyper(h) {}
};

// One bias-corrected Adam update in place. Throws NumericError on non-finite
// gradients and std::invalid_argument on length mismatch or lr <= 0.
template <typename T>
void adam_step(std::span<T> params, std::span<const T> grads, AdamState<T>& state, double lr);

// Adam over a fixed list of parameters. A parameter that received no gradient
// since the last zero_grad() is stepped with a zero gradient.
class Adam {
public:
    Adam(std::vector<ad::Var<float>> params, double lr, AdamHyper hyper = {});

    void zero_grad();
    void step();

    double lr() const noexcept { return lr_; }
    void set_lr(double lr) noexcept { lr_ = lr; }
    const std::vector<AdamState<float>>& states() const noexcept { return states_; }

private:
    std::vector<ad::Var<float>> params_;
    std::vector<AdamState<float>> states_;
    double lr_;
};

} // namespace synthaug
