#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "synthaug/dataset.hpp"
#include "synthaug/errors.hpp"
#include "synthaug/nn.hpp"
#include "synthaug/optim.hpp"

namespace synthaug::pggan {

enum class LossMode { logistic, wasserstein };

std::string to_string(LossMode m);
LossMode loss_mode_from_string(const std::string& s);

struct GanConfig {
    int latent_dim = 64;
    // Per-resolution overrides of the default filter rule.
    std::map<int, int> filters_by_resolution;
    int batch_size = 4;
    LossMode loss_mode = LossMode::wasserstein;
    double gp_lambda = 10.0;
    bool non_saturating = false;
    int steps_per_stage = 1000;
    int target_resolution = 32;
    int channels = 1;
    double lr = 1e-3;
    AdamHyper adam{0.0, 0.99, 1e-8};

    // 128 filters below 64 pixels, 64 at and above, unless overridden.
    int filters_at(int resolution) const;
    int levels() const; // 4 -> 1, 8 -> 2, ...
    void validate() const;
};

struct ProgressiveStage {
    int resolution = 4;
    double fade_alpha = 1.0;
    std::int64_t steps_in_stage = 0;
};

struct LossRow {
    std::int64_t step = 0;
    int stage = 4; // output resolution during the step
    double alpha = 1.0;
    double d_loss = 0.0;
    double g_loss = 0.0;
};

struct LossTrace {
    std::vector<LossRow> rows;

    void append(const LossRow& r) { rows.push_back(r); }
    std::size_t size() const noexcept { return rows.size(); }
    void write_csv(const std::filesystem::path& path) const;
};

// Non-finite loss during training. Carries the trace up to the failing step.
class TrainingAborted : public NumericError {
public:
    TrainingAborted(const std::string& what, LossTrace trace) : NumericError(what), trace_(std::move(trace)) {}
    const LossTrace& trace() const noexcept { return trace_; }

private:
    LossTrace trace_;
};

// He constant sqrt(2 / fan_in). Throws std::invalid_argument for fan_in <= 0.
double equalized_scale(std::int64_t fan_in);

// Layer with effective weights raw_weights * sqrt(2 / fan_in), applied at forward time.
template <typename T>
ad::Var<T> equalized_forward(const ad::Var<T>& raw_weights, std::int64_t fan_in, const ad::Var<T>& input,
                             const ad::Var<T>& bias, int padding = 0) {
    const auto w = ad::scale(raw_weights, static_cast<T>(equalized_scale(fan_in)));
    if (raw_weights.shape().size() == 2) return ad::linear(input, w, bias);
    return ad::conv2d(input, w, bias, padding);
}

template <typename T>
struct EqualizedConv {
    ad::Var<T> weight;
    ad::Var<T> bias;
    int padding = 0;

    std::int64_t fan_in() const { return weight.shape()[1] * weight.shape()[2] * weight.shape()[3]; }
    ad::Var<T> operator()(const ad::Var<T>& x) const { return equalized_forward(weight, fan_in(), x, bias, padding); }
};

template <typename T>
struct EqualizedLinear {
    ad::Var<T> weight;
    ad::Var<T> bias;

    std::int64_t fan_in() const { return weight.shape()[1]; }
    ad::Var<T> operator()(const ad::Var<T>& x) const { return equalized_forward(weight, fan_in(), x, bias); }
};

// alpha * new_path + (1 - alpha) * old_path; the endpoints return one path untouched.
template <typename T>
ad::Var<T> fade_blend(const ad::Var<T>& new_path, const ad::Var<T>& old_path, double alpha) {
    if (alpha < 0.0 || alpha > 1.0) throw std::invalid_argument("fade alpha outside [0, 1]");
    if (alpha == 1.0) return new_path;
    if (alpha == 0.0) return old_path;
    return ad::add(ad::scale(new_path, static_cast<T>(alpha)), ad::scale(old_path, static_cast<T>(1.0 - alpha)));
}

class Generator {
public:
    // Raw weights are drawn N(0, 1) from `init`, biases start at zero.
    Generator(const GanConfig& cfg, RngStream& init);

    int levels() const noexcept { return static_cast<int>(blocks_.size()) + 1; }
    int resolution() const noexcept { return 4 << (levels() - 1); }
    void grow(RngStream& init);

    struct Paths {
        ad::Var<float> new_path; // [N, C, r, r]
        ad::Var<float> old_path; // previous level upsampled; undefined at 4x4
    };
    Paths forward_paths(const ad::Var<float>& z) const;
    ad::Var<float> forward(const ad::Var<float>& z, double alpha = 1.0) const;

    // `count` images at the current resolution from fresh N(0, I) latents.
    Tensor sample(std::int64_t count, RngStream& rng, double alpha = 1.0) const;

    ParamStore<float>& params() noexcept { return store_; }
    const ParamStore<float>& params() const noexcept { return store_; }
    const GanConfig& config() const noexcept { return cfg_; }

private:
    struct Block {
        EqualizedConv<float> conv1, conv2;
    };
    EqualizedConv<float> make_conv(const std::string& name, int cin, int cout, int k, RngStream& init);
    // Features at the current resolution; *prev receives the previous level's features.
    ad::Var<float> trunk(const ad::Var<float>& z, ad::Var<float>* prev) const;

    GanConfig cfg_;
    ParamStore<float> store_;
    EqualizedLinear<float> input_;
    EqualizedConv<float> base_conv_;
    std::vector<Block> blocks_;
    std::vector<EqualizedConv<float>> to_rgb_;
};

class Discriminator {
public:
    Discriminator(const GanConfig& cfg, RngStream& init);

    int levels() const noexcept { return static_cast<int>(blocks_.size()) + 1; }
    int resolution() const noexcept { return 4 << (levels() - 1); }
    void grow(RngStream& init);

    // Unbounded scores [N, 1]; logistic mode treats them as logits.
    ad::Var<float> forward(const ad::Var<float>& x, double alpha = 1.0) const;

    ParamStore<float>& params() noexcept { return store_; }
    const ParamStore<float>& params() const noexcept { return store_; }

private:
    struct Block {
        EqualizedConv<float> conv1, conv2;
    };
    EqualizedConv<float> make_conv(const std::string& name, int cin, int cout, int k, RngStream& init);
    ad::Var<float> from_rgb(int level, const ad::Var<float>& x) const;

    GanConfig cfg_;
    ParamStore<float> store_;
    std::vector<EqualizedConv<float>> from_rgb_;
    std::vector<Block> blocks_; // blocks_[k - 1] maps level k down to level k - 1
    EqualizedConv<float> final_conv_;
    EqualizedLinear<float> dense_;
    EqualizedLinear<float> out_;
};

// Adds one resolution level to both networks. Requires a finished fade
// (alpha == 1); the new stage starts at alpha = 0.
ProgressiveStage grow_stage(Generator& gen, Discriminator& disc, const ProgressiveStage& stage, RngStream& init);

// Fade alpha for step `step` (0-based) of stage `stage_index`: the first stage
// runs at 1, later stages ramp linearly from 0 over their first half.
double stage_alpha(int stage_index, std::int64_t step, std::int64_t steps_per_stage);

struct GanLosses {
    double d_loss;
    double g_loss;
};

// Reported losses. Logistic: probabilities D(.) in (0, 1), L_D = mean log D(x) +
// mean log(1 - D(G(z))) (maximized), L_G = mean log(1 - D(G(z))) or, with
// non_saturating, -mean log D(G(z)). Wasserstein: raw scores, L_D = mean(fake) -
// mean(real) + penalty, L_G = -mean(fake).
GanLosses gan_loss(std::span<const double> d_real, std::span<const double> d_fake, LossMode mode,
                   bool non_saturating = false, double penalty = 0.0);

// Same values from logits, without rounding probabilities to 0 or 1.
GanLosses gan_loss_from_logits(std::span<const double> real_logits, std::span<const double> fake_logits, LossMode mode,
                               bool non_saturating = false, double penalty = 0.0);

// Differentiable minimization objectives over raw scores [N, 1].
ad::Var<float> discriminator_objective(const ad::Var<float>& real_scores, const ad::Var<float>& fake_scores, LossMode mode);
ad::Var<float> generator_objective(const ad::Var<float>& fake_scores, LossMode mode, bool non_saturating);

using Critic = std::function<ad::Var<float>(const ad::Var<float>&)>;

struct GradientPenalty {
    double value = 0.0;            // lambda * mean_i (||grad_x D(x_i)|| - 1)^2
    std::vector<double> grad_norms; // per interpolate
    // Scalar whose parameter gradient approximates that of `value`; see gradient_penalty.
    ad::Var<float> surrogate;
};

// WGAN-GP at x_i = u_i real_i + (1 - u_i) fake_i, u_i ~ U[0, 1).
//
// The tape has no double backward, so the parameter gradient of the penalty is
// taken through a central difference along the detached unit gradient d_i:
//   d/dtheta ||g_i|| ~= d/dtheta [D(x_i + h d_i) - D(x_i - h d_i)] / (2h).
// `critic_params` are excluded from recording while the input gradient is taken.
GradientPenalty gradient_penalty(const Critic& critic, std::span<const ad::Var<float>> critic_params, const Tensor& real,
                                 const Tensor& fake, RngStream& rng, double lambda, double fd_step = 1e-2);

struct PgganResult {
    std::vector<NamedTensor> generator;
    LossTrace trace;
};

// Trains one generator/discriminator pair on same-class images [N, C, S, S]
// (S == cfg.target_resolution). One discriminator step then one generator step
// per trace row.
PgganResult train_pggan(const Tensor& images, const GanConfig& cfg, RngStream& rng);
// Dataset form: requires a single class.
PgganResult train_pggan(const LabeledDataset& class_dataset, const GanConfig& cfg, RngStream& rng);

// Generator at the target resolution restored from a checkpoint.
Generator load_generator(const GanConfig& cfg, const std::vector<NamedTensor>& entries);

} // namespace synthaug::pggan
