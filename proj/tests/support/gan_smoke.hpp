#pragma once

// Degenerate-dataset oracle: a GAN trained on copies of one image must learn
// to emit that image.

#include <algorithm>
#include <cmath>

#include "synthaug/pggan.hpp"

namespace gan_smoke {

inline synthaug::Tensor target_image(int size) {
    synthaug::Tensor img({1, 1, size, size});
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            // Diagonal ramp with a bright centre, all within (-0.8, 0.8).
            const double r = std::hypot(x - (size - 1) / 2.0, y - (size - 1) / 2.0) / size;
            img[static_cast<std::size_t>(y * size + x)] =
                static_cast<float>(0.6 * (x + y) / (2.0 * (size - 1)) - 0.3 + 0.5 * std::exp(-8.0 * r * r) - 0.2);
        }
    }
    return img;
}

inline synthaug::pggan::GanConfig smoke_config() {
    synthaug::pggan::GanConfig cfg;
    cfg.target_resolution = 8;
    cfg.steps_per_stage = 1000; // 2 stages, 2,000 steps
    cfg.latent_dim = 16;
    cfg.filters_by_resolution = {{4, 32}, {8, 32}};
    return cfg;
}

struct SmokeResult {
    double max_pixel_error = 0.0;
    std::size_t trace_rows = 0;
};

inline SmokeResult run(std::uint64_t seed) {
    const auto cfg = smoke_config();
    const auto one = target_image(cfg.target_resolution);
    std::vector<float> data;
    for (int i = 0; i < 16; ++i) data.insert(data.end(), one.storage().begin(), one.storage().end());
    synthaug::Tensor images({16, 1, cfg.target_resolution, cfg.target_resolution}, std::move(data));

    synthaug::RngStream rng(seed, 0);
    auto result = synthaug::pggan::train_pggan(images, cfg, rng);
    auto gen = synthaug::pggan::load_generator(cfg, result.generator);
    synthaug::RngStream sample_rng(seed, 1);
    const auto samples = gen.sample(256, sample_rng);

    SmokeResult out;
    out.trace_rows = result.trace.size();
    const std::size_t per = one.size();
    for (std::size_t j = 0; j < per; ++j) {
        double m = 0.0;
        for (std::int64_t i = 0; i < samples.dim(0); ++i) m += samples[static_cast<std::size_t>(i) * per + j];
        m /= static_cast<double>(samples.dim(0));
        out.max_pixel_error = std::max(out.max_pixel_error, std::abs(m - one[j]));
    }
    return out;
}

} // namespace gan_smoke
