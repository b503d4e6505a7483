#pragma once

// Central finite-difference gradient oracle (f64). Independent of the reverse
// pass it checks: it only ever calls the forward function.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "synthaug/ops.hpp"
#include "synthaug/rng.hpp"

namespace gradcheck {

using synthaug::TensorD;
using VarD = synthaug::ad::Var<double>;
using ScalarFn = std::function<VarD(const std::vector<VarD>&)>;

struct Result {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
};

inline double rel_error(double analytic, double numeric, double floor) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// Compares d f / d inputs[k] analytic vs central difference for every element of every input.
inline Result check(const ScalarFn& f, const std::vector<TensorD>& inputs, double h = 1e-6, double floor = 1e-6) {
    std::vector<VarD> vars;
    for (const auto& t : inputs) vars.push_back(VarD::parameter(t));
    VarD loss = f(vars);
    synthaug::ad::backward(loss);

    Result r;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        const TensorD analytic = vars[k].grad().empty() ? TensorD(inputs[k].shape()) : vars[k].grad();
        for (std::size_t i = 0; i < inputs[k].size(); ++i) {
            auto eval = [&](double delta) {
                std::vector<VarD> probe;
                for (std::size_t j = 0; j < inputs.size(); ++j) {
                    TensorD t = inputs[j];
                    if (j == k) t[i] += delta;
                    probe.push_back(VarD::constant(std::move(t)));
                }
                return f(probe).value().item();
            };
            const double numeric = (eval(h) - eval(-h)) / (2.0 * h);
            r.max_rel_error = std::max(r.max_rel_error, rel_error(analytic[i], numeric, floor));
            ++r.checked;
        }
    }
    return r;
}

inline TensorD random_tensor(synthaug::Shape shape, synthaug::RngStream& rng, double stddev = 1.0) {
    TensorD t(std::move(shape));
    rng.fill_normal<double>(t.data(), stddev);
    return t;
}

// Projects a tensor-valued op onto a scalar with fixed random weights so every
// output element contributes a distinct gradient.
inline VarD weighted_sum(const VarD& y, std::uint64_t seed) {
    synthaug::RngStream rng(seed, 99);
    return synthaug::ad::sum(synthaug::ad::mul(y, VarD::constant(random_tensor(y.shape(), rng))));
}

} // namespace gradcheck

namespace gradcheck {

// Gradient check for persistent leaves (network parameters and inputs) that
// `loss_fn` reads internally. Values are perturbed in place and restored.
inline Result check_leaves(const std::function<VarD()>& loss_fn, const std::vector<VarD>& leaves, double h = 1e-6,
                           double floor = 1e-6) {
    for (auto leaf : leaves) leaf.node()->grad = TensorD();
    synthaug::ad::backward(loss_fn());
    Result r;
    synthaug::ad::NoGradGuard no_grad;
    for (auto leaf : leaves) {
        const TensorD analytic = leaf.grad().empty() ? TensorD(leaf.shape()) : leaf.grad();
        auto& v = leaf.node()->value;
        for (std::size_t i = 0; i < v.size(); ++i) {
            const double orig = v[i];
            v[i] = orig + h;
            const double up = loss_fn().value().item();
            v[i] = orig - h;
            const double down = loss_fn().value().item();
            v[i] = orig;
            r.max_rel_error = std::max(r.max_rel_error, rel_error(analytic[i], (up - down) / (2.0 * h), floor));
            ++r.checked;
        }
    }
    return r;
}

} // namespace gradcheck
