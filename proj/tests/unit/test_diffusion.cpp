#include "doctest.h"

#include <cmath>

#include "gradcheck.hpp"
#include "synthaug/denoiser.hpp"
#include "synthaug/diffusion.hpp"
#include "toy_ddpm.hpp"

using namespace synthaug;
using VarF = ad::Var<float>;

namespace {

struct Moments {
    double mean, var;
};

Moments moments(const Tensor& t) {
    double s = 0, ss = 0;
    for (float v : t.storage()) s += v;
    const double n = static_cast<double>(t.size());
    const double m = s / n;
    for (float v : t.storage()) ss += (v - m) * (v - m);
    return {m, ss / (n - 1)};
}

Tensor normal_tensor(Shape s, RngStream& rng) {
    Tensor t(std::move(s));
    rng.fill_normal<float>(t.data());
    return t;
}

EpsModel zero_model() {
    return [](const VarF& x, std::span<const int>) { return VarF::constant(Tensor(x.shape())); };
}

} // namespace

TEST_SUITE("diffusion") {

TEST_CASE("schedule examples") {
    auto one = build_schedule(ScheduleKind::linear, 1, 0.1, 0.1);
    CHECK(one.betas == std::vector<double>{0.1});
    CHECK(one.alphas == std::vector<double>{1.0 - 0.1});
    CHECK(one.alpha_bars == std::vector<double>{1.0 - 0.1});

    auto four = NoiseSchedule::from_betas({0.1, 0.2, 0.3, 0.4});
    const double oracle = (1.0 - 0.1) * (1.0 - 0.2) * (1.0 - 0.3) * (1.0 - 0.4);
    CHECK(four.alpha_bar(4) == oracle);
    CHECK(std::abs(four.alpha_bar(4) - 0.3024) < 1e-15);

    auto desk = build_schedule(ScheduleKind::linear, 200, 1e-4, 0.02);
    CHECK(desk.betas.front() == 1e-4);
    CHECK(desk.betas.back() == doctest::Approx(0.02).epsilon(1e-12));
    for (int t = 1; t <= 200; ++t) {
        CHECK(desk.alpha(t) == 1.0 - desk.beta(t));
        if (t > 1) {
            CHECK(desk.alpha_bar(t) == desk.alpha_bar(t - 1) * desk.alpha(t));
            CHECK(desk.alpha_bar(t) < desk.alpha_bar(t - 1));
        }
    }
    CHECK(desk.alpha_bar(200) > 0.0);

    auto long_run = build_schedule(ScheduleKind::linear, 8000, 1e-4, 0.02);
    CHECK(long_run.steps == 8000);

    CHECK_THROWS_AS(build_schedule(ScheduleKind::linear, 0, 0.1, 0.2), std::invalid_argument);
    CHECK_THROWS_AS(build_schedule(ScheduleKind::linear, 5, 0.2, 0.1), std::invalid_argument);
    CHECK_THROWS_AS(build_schedule(ScheduleKind::linear, 5, 0.0, 0.1), std::invalid_argument);
    CHECK_THROWS_AS(build_schedule(ScheduleKind::linear, 5, 0.1, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(one.alpha(2), std::out_of_range);
}

TEST_CASE("forward step examples") {
    auto s = NoiseSchedule::from_betas({0.1});
    Tensor x({3}, std::vector<float>{1, -2, 0.5f});
    auto zero_noise = forward_step(x, 1, s, Tensor({3}));
    for (std::size_t i = 0; i < 3; ++i) CHECK(zero_noise[i] == doctest::Approx(std::sqrt(0.9) * x[i]));

    auto y = forward_step(Tensor({1}, 1.0f), 1, s, Tensor({1}, 1.0f));
    CHECK(y[0] == doctest::Approx(1.26491).epsilon(1e-5));

    RngStream rng(3, 0);
    auto z = normal_tensor({20000}, rng);
    auto noised = forward_step(Tensor({20000}), 1, s, z);
    CHECK(moments(noised).var == doctest::Approx(0.1 * moments(z).var).epsilon(1e-5));

    CHECK_THROWS_AS(forward_step(x, 2, s, x), std::out_of_range);
    CHECK_THROWS_AS(forward_step(x, 1, s, Tensor({2})), ShapeError);
}

TEST_CASE("forward marginal examples") {
    auto s = NoiseSchedule::from_betas({0.1, 0.2, 0.3, 0.4});
    auto y = forward_marginal(Tensor({1}, 1.0f), 4, s, Tensor({1}));
    CHECK(y[0] == doctest::Approx(0.54991).epsilon(1e-5));

    auto desk = build_schedule(ScheduleKind::linear, 200, 1e-4, 0.02);
    auto coef = forward_marginal(Tensor({1}, 1.0f), 200, desk, Tensor({1}));
    CHECK(coef[0] == doctest::Approx(std::sqrt(desk.alpha_bar(200))));
    CHECK_THROWS_AS(forward_marginal(Tensor({1}), 0, s, Tensor({1})), std::out_of_range);
}

TEST_CASE("marginal agrees with iterated forward steps") {
    constexpr std::int64_t n = 10000;
    for (int steps : {1, 4, 10}) {
        auto s = build_schedule(ScheduleKind::linear, steps, 0.05, 0.3);
        RngStream rng(11, static_cast<std::uint64_t>(steps));
        Tensor x0({n});
        for (std::int64_t i = 0; i < n; ++i) x0[static_cast<std::size_t>(i)] = static_cast<float>(1.5 + 0.5 * rng.normal());
        Tensor chain = x0;
        for (int t = 1; t <= steps; ++t) chain = forward_step(chain, t, s, normal_tensor({n}, rng));
        auto direct = forward_marginal(x0, steps, s, normal_tensor({n}, rng));
        const auto a = moments(chain), b = moments(direct);
        const double mean_sigma = std::sqrt(a.var / n + b.var / n);
        const double var_sigma = std::sqrt(2.0 * a.var * a.var / (n - 1) + 2.0 * b.var * b.var / (n - 1));
        CHECK(std::abs(a.mean - b.mean) < 3 * mean_sigma);
        CHECK(std::abs(a.var - b.var) < 3 * var_sigma);
    }
}

TEST_CASE("forward marginal preserves unit variance") {
    constexpr std::int64_t n = 20000;
    auto s = build_schedule(ScheduleKind::linear, 10, 0.01, 0.2);
    RngStream rng(12, 0);
    for (int t : {1, 5, 10}) {
        auto xt = forward_marginal(normal_tensor({n}, rng), t, s, normal_tensor({n}, rng));
        const auto m = moments(xt);
        CHECK(std::abs(m.var - 1.0) < 3 * std::sqrt(2.0 / (n - 1)));
    }
}

TEST_CASE("ddpm loss examples") {
    auto s = build_schedule(ScheduleKind::linear, 10, 0.01, 0.2);
    RngStream rng(1, 0);
    Tensor x0({4, 3});
    auto batch = sample_training_batch(x0, s, rng);
    for (int t : batch.t) CHECK((t >= 1 && t <= 10));
    const EpsModel perfect = [&](const VarF&, std::span<const int>) { return VarF::constant(batch.eps); };
    CHECK(ddpm_loss(batch, perfect).value().item() == 0.0f);

    DiffusionBatchSample fixed{Tensor({1, 2}), {1}, Tensor({1, 2}, std::vector<float>{1, -1})};
    CHECK(ddpm_loss(fixed, zero_model()).value().item() == doctest::Approx(1.0));

    const EpsModel wrong = [](const VarF&, std::span<const int>) { return VarF::constant(Tensor({1, 3})); };
    CHECK_THROWS_AS(ddpm_loss(fixed, wrong), ShapeError);
}

TEST_CASE("ddpm loss of a frozen random model matches a Monte Carlo estimate") {
    UNetConfig cfg{8, 4, 2, 8, 1};
    UNet<float> net(cfg);
    auto init = derive_stream(77, 0);
    net.reset_parameters(init);
    const auto model = as_eps_model(net);
    auto s = build_schedule(ScheduleKind::linear, 20, 1e-3, 0.2);
    auto data_rng = derive_stream(77, 1);
    Tensor images({64, 1, 8, 8});
    for (auto& v : images.storage()) v = static_cast<float>(data_rng.uniform(-1.0, 1.0));

    auto loss_rng = derive_stream(77, 2);
    const double loss = ddpm_loss(images, model, s, loss_rng).value().item();

    // Oracle: noise by hand, call the model directly, average squared error.
    ad::NoGradGuard no_grad;
    constexpr int repeats = 120;
    double sum = 0, sum_sq = 0;
    auto oracle_rng = derive_stream(78, 0);
    for (int r = 0; r < repeats; ++r) {
        Tensor xt(images.shape()), eps(images.shape());
        std::vector<int> ts(64);
        for (int i = 0; i < 64; ++i) {
            ts[static_cast<std::size_t>(i)] = 1 + static_cast<int>(oracle_rng.below(20));
            const double ab = s.alpha_bar(ts[static_cast<std::size_t>(i)]);
            for (int j = 0; j < 64; ++j) {
                const auto k = static_cast<std::size_t>(i * 64 + j);
                eps[k] = static_cast<float>(oracle_rng.normal());
                xt[k] = static_cast<float>(std::sqrt(ab) * images[k] + std::sqrt(1 - ab) * eps[k]);
            }
        }
        const Tensor pred = net.forward(VarF::constant(xt), ts).value();
        double se = 0;
        for (std::size_t k = 0; k < pred.size(); ++k) se += (pred[k] - eps[k]) * (pred[k] - eps[k]);
        se /= static_cast<double>(pred.size());
        sum += se;
        sum_sq += se * se;
    }
    const double mc_mean = sum / repeats;
    const double mc_std = std::sqrt((sum_sq - repeats * mc_mean * mc_mean) / (repeats - 1));
    CHECK(std::abs(loss - mc_mean) <= 3 * mc_std);
}

TEST_CASE("ancestral sampling examples") {
    auto s = NoiseSchedule::from_betas({0.01});
    RngStream rng(5, 0);
    auto x0 = reverse_process(zero_model(), s, Tensor({1, 1}, 1.0f), rng, false);
    CHECK(x0[0] == doctest::Approx(1.0 / std::sqrt(0.99)).epsilon(1e-6));
    CHECK(x0[0] == doctest::Approx(1.005038).epsilon(1e-6));
    auto clamped = reverse_process(zero_model(), s, Tensor({1, 1}, 1.0f), rng, true);
    CHECK(clamped[0] == 1.0f);

    auto desk = build_schedule(ScheduleKind::linear, 5, 0.01, 0.2);
    for (std::int64_t count : {1, 3, 7}) {
        RngStream r(6, 0);
        auto out = ancestral_sample(zero_model(), desk, count, {1, 4, 4}, r, SampleOptions{true, 2});
        CHECK(out.shape() == Shape{count, 1, 4, 4});
        for (float v : out.storage()) CHECK((v >= -1.0f && v <= 1.0f));
    }
    RngStream r1(9, 1), r2(9, 1);
    CHECK(ancestral_sample(zero_model(), desk, 3, {2}, r1) == ancestral_sample(zero_model(), desk, 3, {2}, r2));

    const EpsModel exploding = [](const VarF& x, std::span<const int>) {
        return VarF::constant(Tensor(x.shape(), std::numeric_limits<float>::infinity()));
    };
    RngStream r3(1, 1);
    CHECK_THROWS_AS(ancestral_sample(exploding, desk, 1, {2}, r3), NumericError);
}

TEST_CASE("toy mixture is recovered by the MLP denoiser") {
    const auto r = toy::train_and_sample(1);
    INFO("left (" << r.left_mean_x << ", " << r.left_mean_y << ") right (" << r.right_mean_x << ", "
                  << r.right_mean_y << ") fraction " << r.right_fraction << " loss " << r.final_loss);
    CHECK(toy::recovered(r));
}

}

TEST_SUITE("denoiser") {

TEST_CASE("time embedding examples") {
    auto e0 = time_embed(0, TimeEmbedding{8});
    CHECK(e0 == std::vector<double>{0, 1, 0, 1, 0, 1, 0, 1});
    auto e1 = time_embed(1, TimeEmbedding{2});
    CHECK(e1[0] == doctest::Approx(0.84147).epsilon(1e-5));
    CHECK(e1[1] == doctest::Approx(0.54030).epsilon(1e-5));
    auto a = time_embed(1, TimeEmbedding{64}), b = time_embed(2, TimeEmbedding{64});
    double d = 0;
    for (std::size_t i = 0; i < a.size(); ++i) d += (a[i] - b[i]) * (a[i] - b[i]);
    CHECK(d > 0);
    CHECK(a.size() == 64);
    CHECK_THROWS_AS(time_embed(1, TimeEmbedding{7}), std::invalid_argument);
}

TEST_CASE("default U-Net parameter count") {
    UNetConfig cfg;
    CHECK(unet_parameter_count(cfg) == 505441);
    UNet<float> net(cfg);
    CHECK(net.params().total_count() == 505441);
    for (UNetConfig c : {UNetConfig{8, 4, 2, 8, 1}, UNetConfig{16, 8, 3, 16, 1}, UNetConfig{32, 16, 1, 32, 3}}) {
        UNet<float> n(c);
        CHECK(n.params().total_count() == unet_parameter_count(c));
    }
    CHECK_THROWS_AS(UNet<float>(UNetConfig{12, 4, 3, 8, 1}), std::invalid_argument);
}

TEST_CASE("U-Net preserves shape and depends on t") {
    UNet<float> net(UNetConfig{16, 8, 2, 16, 1});
    auto rng = derive_stream(3, 0);
    net.reset_parameters(rng);
    for (std::int64_t n : {1, 3}) {
        Tensor x({n, 1, 16, 16});
        rng.fill_normal<float>(x.data());
        std::vector<int> t(static_cast<std::size_t>(n), 5);
        auto y = net.forward(VarF::constant(x), t);
        CHECK(y.shape() == x.shape());
        std::vector<int> t2(static_cast<std::size_t>(n), 6);
        auto y2 = net.forward(VarF::constant(x), t2);
        double d = 0;
        for (std::size_t i = 0; i < y.value().size(); ++i) d += std::pow(y.value()[i] - y2.value()[i], 2);
        CHECK(d > 0);
    }
    CHECK_THROWS_AS(net.forward(VarF::constant(Tensor({1, 1, 8, 8})), std::vector<int>{1}), ShapeError);
}

TEST_CASE("U-Net full-network gradient check") {
    UNet<double> net(UNetConfig{8, 4, 2, 8, 1});
    auto rng = derive_stream(4, 0);
    net.reset_parameters(rng);
    auto x = gradcheck::VarD::parameter(gradcheck::random_tensor({1, 1, 8, 8}, rng));
    const std::vector<int> t{3};
    std::vector<gradcheck::VarD> leaves{x};
    for (const auto& p : net.params().params()) leaves.push_back(p.var);
    const auto r = gradcheck::check_leaves([&] { return gradcheck::weighted_sum(net.forward(x, t), 5); }, leaves);
    INFO("checked " << r.checked << " values");
    const double worst = r.max_rel_error;
    CHECK(worst < 1e-3);
}

}
