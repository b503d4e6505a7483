#pragma once

#include <span>
#include <vector>

#include "synthaug/autograd.hpp"
#include "synthaug/rng.hpp"

// Primitive differentiable ops. All are instantiated for float (training) and
// double (gradient checking). Shape violations throw ShapeError when the op is applied.
namespace synthaug::ad {

// Elementwise, operands of identical shape.
template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> scale(const Var<T>& a, T s);
template <typename T> Var<T> add_scalar(const Var<T>& a, T s);

// x: [N, C, ...], bias: [N, C]; adds bias[n, c] to every element of x[n, c, ...].
template <typename T> Var<T> add_channel_bias(const Var<T>& x, const Var<T>& bias);

template <typename T> Var<T> relu(const Var<T>& x);
template <typename T> Var<T> leaky_relu(const Var<T>& x, T slope = T(0.2));
template <typename T> Var<T> silu(const Var<T>& x);
template <typename T> Var<T> tanh(const Var<T>& x);
template <typename T> Var<T> sigmoid(const Var<T>& x);
template <typename T> Var<T> softplus(const Var<T>& x);
// Natural log; inputs must be positive.
template <typename T> Var<T> log(const Var<T>& x);

// x: [N, in], weight: [out, in], bias: [out] or undefined.
template <typename T> Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias);

// Stride-1 convolution with symmetric zero padding.
// x: [N, Cin, H, W], weight: [Cout, Cin, K, K], bias: [Cout] or undefined.
template <typename T> Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int padding);

template <typename T> Var<T> avg_pool2(const Var<T>& x);
template <typename T> Var<T> max_pool2(const Var<T>& x);
template <typename T> Var<T> upsample_nearest2(const Var<T>& x);

// Batch normalization over every axis except 1. In training mode batch statistics
// are used and the running buffers are updated as
// running = momentum * running + (1 - momentum) * batch.
template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, BasicTensor<T>& running_mean,
                  BasicTensor<T>& running_var, bool training, T momentum = T(0.99), T eps = T(1e-3));

// Inverted dropout; identity when !training or p == 0.
template <typename T> Var<T> dropout(const Var<T>& x, T p, bool training, RngStream& rng);

template <typename T> Var<T> reshape(const Var<T>& x, Shape shape);
template <typename T> Var<T> flatten(const Var<T>& x);
template <typename T> Var<T> concat(std::span<const Var<T>> parts, std::size_t axis);
template <typename T> Var<T> concat(const Var<T>& a, const Var<T>& b, std::size_t axis);
// Rows [start, start + count) of the leading dimension.
template <typename T> Var<T> slice_batch(const Var<T>& x, std::int64_t start, std::int64_t count);

template <typename T> Var<T> sum(const Var<T>& x);
template <typename T> Var<T> mean(const Var<T>& x);
// Mean over all elements of (a - b)^2.
template <typename T> Var<T> mse(const Var<T>& a, const Var<T>& b);
// logits: [N, C]; mean negative log-likelihood of `labels`.
template <typename T> Var<T> softmax_cross_entropy(const Var<T>& logits, std::span<const int> labels);

} // namespace synthaug::ad
