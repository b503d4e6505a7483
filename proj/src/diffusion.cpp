#include "synthaug/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "synthaug/ops.hpp"

namespace synthaug {

std::size_t NoiseSchedule::index(int t) const {
    if (t < 1 || t > steps) {
        throw std::out_of_range("diffusion step " + std::to_string(t) + " outside [1, " + std::to_string(steps) + "]");
    }
    return static_cast<std::size_t>(t - 1);
}

NoiseSchedule NoiseSchedule::from_betas(std::vector<double> betas) {
    if (betas.empty()) throw std::invalid_argument("noise schedule needs at least one step");
    NoiseSchedule s;
    s.steps = static_cast<int>(betas.size());
    double prod = 1.0;
    for (double b : betas) {
        if (!(b > 0.0 && b < 1.0)) throw std::invalid_argument("noise schedule beta must lie in (0, 1)");
        const double a = 1.0 - b;
        prod *= a;
        s.alphas.push_back(a);
        s.alpha_bars.push_back(prod);
    }
    s.betas = std::move(betas);
    return s;
}

NoiseSchedule build_schedule(ScheduleKind kind, int steps, double beta_start, double beta_end) {
    if (kind != ScheduleKind::linear) throw std::invalid_argument("unsupported schedule kind");
    if (steps < 1) throw std::invalid_argument("schedule needs T >= 1");
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
        throw std::invalid_argument("schedule bounds must satisfy 0 < beta_start <= beta_end < 1");
    }
    std::vector<double> betas(static_cast<std::size_t>(steps));
    for (int i = 0; i < steps; ++i) {
        const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(steps - 1);
        betas[static_cast<std::size_t>(i)] = beta_start + (beta_end - beta_start) * frac;
    }
    return NoiseSchedule::from_betas(std::move(betas));
}

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(what) + ": shape " + shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
    }
}

Tensor affine(const Tensor& x, double cx, const Tensor& e, double ce) {
    Tensor out(x.shape());
    const auto fx = static_cast<float>(cx), fe = static_cast<float>(ce);
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = fx * x[i] + fe * e[i];
    return out;
}

} // namespace

Tensor forward_step(const Tensor& x_prev, int t, const NoiseSchedule& schedule, const Tensor& eps) {
    require_same_shape(x_prev, eps, "forward_step");
    const double a = schedule.alpha(t);
    return affine(x_prev, std::sqrt(a), eps, std::sqrt(1.0 - a));
}

Tensor forward_marginal(const Tensor& x0, int t, const NoiseSchedule& schedule, const Tensor& eps) {
    require_same_shape(x0, eps, "forward_marginal");
    const double ab = schedule.alpha_bar(t);
    return affine(x0, std::sqrt(ab), eps, std::sqrt(1.0 - ab));
}

DiffusionBatchSample sample_training_batch(const Tensor& x0, const NoiseSchedule& schedule, RngStream& rng) {
    if (x0.rank() < 1) throw ShapeError("sample_training_batch: need a batch dimension");
    const std::int64_t n = x0.dim(0);
    const auto per_item = static_cast<std::size_t>(shape_numel(x0.shape()) / n);
    DiffusionBatchSample out{Tensor(x0.shape()), std::vector<int>(static_cast<std::size_t>(n)), Tensor(x0.shape())};
    for (std::int64_t i = 0; i < n; ++i) {
        out.t[static_cast<std::size_t>(i)] = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(schedule.steps)));
    }
    rng.fill_normal<float>(out.eps.data());
    for (std::int64_t i = 0; i < n; ++i) {
        const double ab = schedule.alpha_bar(out.t[static_cast<std::size_t>(i)]);
        const auto cx = static_cast<float>(std::sqrt(ab)), ce = static_cast<float>(std::sqrt(1.0 - ab));
        const std::size_t off = static_cast<std::size_t>(i) * per_item;
        for (std::size_t j = off; j < off + per_item; ++j) out.x_t[j] = cx * x0[j] + ce * out.eps[j];
    }
    return out;
}

ad::Var<float> ddpm_loss(const DiffusionBatchSample& batch, const EpsModel& model) {
    auto pred = model(ad::Var<float>::constant(batch.x_t), batch.t);
    if (pred.shape() != batch.eps.shape()) {
        throw ShapeError("ddpm_loss: model output " + shape_to_string(pred.shape()) + " for input " +
                         shape_to_string(batch.eps.shape()));
    }
    return ad::mse(pred, ad::Var<float>::constant(batch.eps));
}

ad::Var<float> ddpm_loss(const Tensor& x0, const EpsModel& model, const NoiseSchedule& schedule, RngStream& rng) {
    return ddpm_loss(sample_training_batch(x0, schedule, rng), model);
}

Tensor reverse_step(const Tensor& x_t, const Tensor& eps_hat, int t, const NoiseSchedule& schedule, const Tensor& z) {
    require_same_shape(x_t, eps_hat, "reverse_step");
    const double a = schedule.alpha(t);
    const double inv_sqrt_a = 1.0 / std::sqrt(a);
    const double eps_coef = (1.0 - a) / std::sqrt(1.0 - schedule.alpha_bar(t));
    const double sigma = t > 1 ? std::sqrt(schedule.beta(t)) : 0.0;
    if (sigma > 0.0) require_same_shape(x_t, z, "reverse_step");
    Tensor out(x_t.shape());
    for (std::size_t i = 0; i < x_t.size(); ++i) {
        double v = inv_sqrt_a * (static_cast<double>(x_t[i]) - eps_coef * static_cast<double>(eps_hat[i]));
        if (sigma > 0.0) v += sigma * static_cast<double>(z[i]);
        out[i] = static_cast<float>(v);
    }
    return out;
}

Tensor reverse_process(const EpsModel& model, const NoiseSchedule& schedule, Tensor x, RngStream& rng, bool clamp) {
    ad::NoGradGuard no_grad;
    const std::int64_t n = x.dim(0);
    for (int t = schedule.steps; t >= 1; --t) {
        const std::vector<int> ts(static_cast<std::size_t>(n), t);
        Tensor eps_hat = model(ad::Var<float>::constant(x), ts).value();
        Tensor z;
        if (t > 1) {
            z = Tensor(x.shape());
            rng.fill_normal<float>(z.data());
        }
        x = reverse_step(x, eps_hat, t, schedule, z);
        if (!x.all_finite()) throw NumericError("ancestral sampling produced non-finite values at step " + std::to_string(t));
    }
    if (clamp) {
        for (auto& v : x.storage()) v = std::clamp(v, -1.0f, 1.0f);
    }
    return x;
}

Tensor ancestral_sample(const EpsModel& model, const NoiseSchedule& schedule, std::int64_t count,
                        const Shape& item_shape, RngStream& rng, SampleOptions options) {
    if (count < 1) throw std::invalid_argument("ancestral_sample: count must be >= 1");
    const std::int64_t chunk = std::max<std::int64_t>(1, options.chunk);
    Shape full = item_shape;
    full.insert(full.begin(), count);
    Tensor out(full);
    const auto per_item = static_cast<std::size_t>(shape_numel(item_shape));
    for (std::int64_t first = 0; first < count; first += chunk) {
        const std::int64_t cnt = std::min(chunk, count - first);
        Shape s = item_shape;
        s.insert(s.begin(), cnt);
        Tensor x(s);
        rng.fill_normal<float>(x.data());
        Tensor x0 = reverse_process(model, schedule, std::move(x), rng, options.clamp);
        std::copy(x0.storage().begin(), x0.storage().end(),
                  out.storage().begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(first) * per_item));
    }
    return out;
}

} // namespace synthaug
