#pragma once

#include <functional>
#include <span>
#include <vector>

#include "synthaug/autograd.hpp"
#include "synthaug/rng.hpp"
#include "synthaug/tensor.hpp"

namespace synthaug {

// Per-step variances of the forward noising process. Steps are 1-based:
// beta(1) .. beta(T).
struct NoiseSchedule {
    int steps = 0;
    std::vector<double> betas;
    std::vector<double> alphas;     // 1 - beta
    std::vector<double> alpha_bars; // running product of alphas

    // Validates 0 < beta < 1 and fills alphas / alpha_bars.
    static NoiseSchedule from_betas(std::vector<double> betas);

    double beta(int t) const { return betas.at(index(t)); }
    double alpha(int t) const { return alphas.at(index(t)); }
    double alpha_bar(int t) const { return alpha_bars.at(index(t)); }

private:
    std::size_t index(int t) const;
};

enum class ScheduleKind { linear };

// Linear interpolation from beta_start (t = 1) to beta_end (t = T), both inclusive.
NoiseSchedule build_schedule(ScheduleKind kind, int steps, double beta_start, double beta_end);

// x_t = sqrt(alpha_t) x_{t-1} + sqrt(1 - alpha_t) eps
Tensor forward_step(const Tensor& x_prev, int t, const NoiseSchedule& schedule, const Tensor& eps);

// x_t = sqrt(alpha_bar_t) x_0 + sqrt(1 - alpha_bar_t) eps
Tensor forward_marginal(const Tensor& x0, int t, const NoiseSchedule& schedule, const Tensor& eps);

// Noise predictor eps_theta(x_t, t); `t` holds one step index per batch item.
using EpsModel = std::function<ad::Var<float>(const ad::Var<float>& x_t, std::span<const int> t)>;

struct DiffusionBatchSample {
    Tensor x_t;
    std::vector<int> t;
    Tensor eps;
};

// Draws t ~ U{1..T} and eps ~ N(0, I) per item of x0 ([N, ...]) and noises it with the closed-form marginal.
DiffusionBatchSample sample_training_batch(const Tensor& x0, const NoiseSchedule& schedule, RngStream& rng);

// Mean over all elements of (eps - eps_theta(x_t, t))^2; differentiable through the model.
ad::Var<float> ddpm_loss(const DiffusionBatchSample& batch, const EpsModel& model);
ad::Var<float> ddpm_loss(const Tensor& x0, const EpsModel& model, const NoiseSchedule& schedule, RngStream& rng);

// One reverse update
//   x_{t-1} = (x_t - (1 - alpha_t) / sqrt(1 - alpha_bar_t) * eps_hat) / sqrt(alpha_t) + sigma_t z
// with sigma_t = sqrt(beta_t) for t > 1 and 0 at t = 1 (z is ignored there).
Tensor reverse_step(const Tensor& x_t, const Tensor& eps_hat, int t, const NoiseSchedule& schedule, const Tensor& z);

// Runs the reverse chain from the given x_T down to x_0. Throws NumericError on
// non-finite intermediates. Output is clamped to [-1, 1] when `clamp`.
Tensor reverse_process(const EpsModel& model, const NoiseSchedule& schedule, Tensor x_T, RngStream& rng, bool clamp);

struct SampleOptions {
    bool clamp = true;
    std::int64_t chunk = 64; // items denoised together
};

// Ancestral sampling of `count` items of `item_shape`, starting from x_T ~ N(0, I).
// Returns a [count, item_shape...] tensor.
Tensor ancestral_sample(const EpsModel& model, const NoiseSchedule& schedule, std::int64_t count,
                        const Shape& item_shape, RngStream& rng, SampleOptions options = {});

} // namespace synthaug
