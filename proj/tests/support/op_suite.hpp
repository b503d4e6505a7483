#pragma once

// Finite-difference gradient cases for every primitive op, shared by the unit
// suite and the acceptance binary.

#include <string>
#include <vector>

#include "gradcheck.hpp"

namespace op_suite {

using synthaug::Shape;
using synthaug::TensorD;
using gradcheck::VarD;
namespace ad = synthaug::ad;

struct OpCase {
    std::string name;
    std::vector<Shape> shapes;
    gradcheck::ScalarFn fn;
};

// Worst relative error of `c` over `draws` random inputs.
inline double worst_case(const OpCase& c, int draws, std::uint64_t seed, double stddev = 1.0) {
    double worst = 0.0;
    synthaug::RngStream rng(seed, 0);
    for (int d = 0; d < draws; ++d) {
        std::vector<TensorD> inputs;
        for (const auto& s : c.shapes) inputs.push_back(gradcheck::random_tensor(s, rng, stddev));
        worst = std::max(worst, gradcheck::check(c.fn, inputs).max_rel_error);
    }
    return worst;
}

inline std::vector<OpCase> primitive_ops() {
    const Shape v4{4};
    auto ws = [](const VarD& y) { return gradcheck::weighted_sum(y, 7); };
    using A = std::vector<VarD>;
    static const std::vector<int> labels{1, 0};
    return {
        {"add", {v4, v4}, [=](const A& a) { return ws(ad::add(a[0], a[1])); }},
        {"sub", {v4, v4}, [=](const A& a) { return ws(ad::sub(a[0], a[1])); }},
        {"mul", {v4, v4}, [=](const A& a) { return ws(ad::mul(a[0], a[1])); }},
        {"scale", {v4}, [=](const A& a) { return ws(ad::scale(a[0], 1.7)); }},
        {"add_scalar", {v4}, [=](const A& a) { return ws(ad::add_scalar(a[0], -0.3)); }},
        {"relu", {v4}, [=](const A& a) { return ws(ad::relu(a[0])); }},
        {"leaky_relu", {v4}, [=](const A& a) { return ws(ad::leaky_relu(a[0], 0.2)); }},
        {"silu", {v4}, [=](const A& a) { return ws(ad::silu(a[0])); }},
        {"tanh", {v4}, [=](const A& a) { return ws(ad::tanh(a[0])); }},
        {"sigmoid", {v4}, [=](const A& a) { return ws(ad::sigmoid(a[0])); }},
        {"softplus", {v4}, [=](const A& a) { return ws(ad::softplus(a[0])); }},
        {"log", {v4}, [=](const A& a) { return ws(ad::log(ad::add_scalar(ad::mul(a[0], a[0]), 0.5))); }},
        {"sum", {v4}, [](const A& a) { return ad::sum(a[0]); }},
        {"mean", {v4}, [](const A& a) { return ad::mean(a[0]); }},
        {"mse", {v4, v4}, [](const A& a) { return ad::mse(a[0], a[1]); }},
        {"softmax_cross_entropy", {{2, 2}},
         [](const A& a) { return ad::softmax_cross_entropy(a[0], std::span<const int>(labels)); }},
        {"linear", {{2, 2}, {2, 2}, {2}}, [=](const A& a) { return ws(ad::linear(a[0], a[1], a[2])); }},
        {"add_channel_bias", {{1, 2, 2}, {1, 2}}, [=](const A& a) { return ws(ad::add_channel_bias(a[0], a[1])); }},
        {"concat_channels", {{2, 2}, {2, 2}}, [=](const A& a) { return ws(ad::concat(a[0], a[1], 1)); }},
        {"concat_batch", {{2, 2}, {1, 2}}, [=](const A& a) { return ws(ad::concat(a[0], a[1], 0)); }},
        {"slice_batch", {{4, 1}}, [=](const A& a) { return ws(ad::slice_batch(a[0], 1, 2)); }},
        {"flatten", {{1, 1, 2, 2}}, [=](const A& a) { return ws(ad::flatten(a[0])); }},
        {"conv2d_1x1", {{1, 1, 2, 2}, {1, 1, 1, 1}, {1}}, [=](const A& a) { return ws(ad::conv2d(a[0], a[1], a[2], 0)); }},
        {"conv2d_3x3_pad", {{1, 2, 3, 3}, {2, 2, 3, 3}, {2}},
         [=](const A& a) { return ws(ad::conv2d(a[0], a[1], a[2], 1)); }},
        {"avg_pool2", {{1, 1, 2, 2}}, [=](const A& a) { return ws(ad::avg_pool2(a[0])); }},
        {"max_pool2", {{1, 1, 2, 2}}, [=](const A& a) { return ws(ad::max_pool2(a[0])); }},
        {"upsample_nearest2", {{1, 1, 2, 2}}, [=](const A& a) { return ws(ad::upsample_nearest2(a[0])); }},
        {"batch_norm_train", {{2, 2, 1, 1}, {2}, {2}},
         [=](const A& a) {
             TensorD rm({2}), rv({2}, 1.0);
             return ws(ad::batch_norm(a[0], a[1], a[2], rm, rv, true));
         }},
        {"batch_norm_eval", {{4, 1}, {1}, {1}},
         [=](const A& a) {
             TensorD rm({1}, 0.3), rv({1}, 2.0);
             return ws(ad::batch_norm(a[0], a[1], a[2], rm, rv, false));
         }},
    };
}

} // namespace op_suite
