#include "synthaug/denoiser.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace synthaug {

std::vector<double> time_embed(double t, const TimeEmbedding& cfg) {
    if (cfg.dim <= 0 || cfg.dim % 2 != 0) throw std::invalid_argument("time embedding dim must be even and positive");
    if (t < 0) throw std::invalid_argument("time embedding step must be >= 0");
    std::vector<double> emb(static_cast<std::size_t>(cfg.dim));
    for (int i = 0; i < cfg.dim / 2; ++i) {
        const double w = std::pow(cfg.base, -2.0 * i / cfg.dim);
        emb[static_cast<std::size_t>(2 * i)] = std::sin(t * w);
        emb[static_cast<std::size_t>(2 * i + 1)] = std::cos(t * w);
    }
    return emb;
}

template <typename T>
BasicTensor<T> time_embed_batch(std::span<const int> t, const TimeEmbedding& cfg) {
    BasicTensor<T> out({static_cast<std::int64_t>(t.size()), cfg.dim});
    for (std::size_t n = 0; n < t.size(); ++n) {
        const auto e = time_embed(t[n], cfg);
        for (std::size_t j = 0; j < e.size(); ++j) out[n * e.size() + j] = static_cast<T>(e[j]);
    }
    return out;
}

template BasicTensor<float> time_embed_batch<float>(std::span<const int>, const TimeEmbedding&);
template BasicTensor<double> time_embed_batch<double>(std::span<const int>, const TimeEmbedding&);

void UNetConfig::validate() const {
    if (input_size <= 0 || base_channels <= 0 || depth <= 0 || time_dim <= 0 || channels <= 0) {
        throw std::invalid_argument("U-Net config counts must be positive");
    }
    if (time_dim % 2 != 0) throw std::invalid_argument("U-Net time_dim must be even");
    if (input_size % (1 << depth) != 0) {
        throw std::invalid_argument("U-Net input_size " + std::to_string(input_size) + " not divisible by 2^depth");
    }
}

std::int64_t unet_parameter_count(const UNetConfig& cfg) {
    cfg.validate();
    const std::int64_t b = cfg.base_channels, d = cfg.time_dim, ch = cfg.channels;
    auto c = [&](int i) { return i < 0 ? b : b << i; };
    auto block = [&](std::int64_t cin, std::int64_t cout) {
        return 9 * cin * cout + cout + d * cout + cout + 9 * cout * cout + cout;
    };
    std::int64_t n = d * d + d + 9 * ch * b + b + 9 * b * ch + ch;
    for (int i = 0; i < cfg.depth; ++i) n += block(c(i - 1), c(i));
    n += block(c(cfg.depth - 1), c(cfg.depth));
    for (int i = cfg.depth - 1; i >= 0; --i) n += block(c(i + 1) + c(i), c(i));
    return n;
}

template <typename T>
typename UNet<T>::Block UNet<T>::make_block(const std::string& name, std::int64_t cin, std::int64_t cout) {
    return {Conv2dLayer<T>::create(store_, name + ".conv1", cin, cout, 3, 1),
            LinearLayer<T>::create(store_, name + ".time_proj", cfg_.time_dim, cout),
            Conv2dLayer<T>::create(store_, name + ".conv2", cout, cout, 3, 1)};
}

template <typename T>
UNet<T>::UNet(UNetConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    const std::int64_t b = cfg_.base_channels;
    auto c = [&](int i) -> std::int64_t { return i < 0 ? b : b << i; };
    time_mlp_ = LinearLayer<T>::create(store_, "time_mlp", cfg_.time_dim, cfg_.time_dim);
    stem_ = Conv2dLayer<T>::create(store_, "stem", cfg_.channels, b, 3, 1);
    for (int i = 0; i < cfg_.depth; ++i) down_.push_back(make_block("down" + std::to_string(i), c(i - 1), c(i)));
    mid_ = make_block("mid", c(cfg_.depth - 1), c(cfg_.depth));
    up_.resize(static_cast<std::size_t>(cfg_.depth));
    for (int i = cfg_.depth - 1; i >= 0; --i) {
        up_[static_cast<std::size_t>(i)] = make_block("up" + std::to_string(i), c(i + 1) + c(i), c(i));
    }
    head_ = Conv2dLayer<T>::create(store_, "head", b, cfg_.channels, 3, 1);
}

template <typename T>
void UNet<T>::reset_parameters(RngStream& rng) {
    for (const auto& e : store_.params()) {
        auto& v = e.var.node()->value;
        // Fan-in of the layer that owns the tensor: weight dims after the first, or the
        // matching weight's for a bias.
        std::int64_t fan_in = 1;
        if (v.rank() > 1) {
            for (std::size_t i = 1; i < v.rank(); ++i) fan_in *= v.dim(i);
        } else {
            const std::string weight_name = e.name.substr(0, e.name.rfind('.')) + ".weight";
            for (const auto& w : store_.params()) {
                if (w.name == weight_name) {
                    fan_in = 1;
                    for (std::size_t i = 1; i < w.var.value().rank(); ++i) fan_in *= w.var.value().dim(i);
                }
            }
        }
        init::fan_in_uniform(v, fan_in, rng);
    }
}

template <typename T>
ad::Var<T> UNet<T>::run_block(const Block& b, const ad::Var<T>& x, const ad::Var<T>& temb) const {
    auto h = ad::silu(b.conv1(x));
    h = ad::add_channel_bias(h, b.time_proj(temb));
    return ad::silu(b.conv2(h));
}

template <typename T>
ad::Var<T> UNet<T>::forward(const ad::Var<T>& x, std::span<const int> t) const {
    const Shape expected{x.shape().empty() ? 0 : x.shape()[0], cfg_.channels, cfg_.input_size, cfg_.input_size};
    if (x.shape() != expected || static_cast<std::int64_t>(t.size()) != expected[0]) {
        throw ShapeError("U-Net: input " + shape_to_string(x.shape()) + " with " + std::to_string(t.size()) +
                         " steps, expected " + shape_to_string(expected));
    }
    const auto temb_raw = ad::Var<T>::constant(time_embed_batch<T>(t, TimeEmbedding{cfg_.time_dim}));
    const auto temb = ad::silu(time_mlp_(temb_raw));

    auto h = stem_(x);
    std::vector<ad::Var<T>> skips;
    for (const auto& block : down_) {
        h = run_block(block, h, temb);
        skips.push_back(h);
        h = ad::avg_pool2(h);
    }
    h = run_block(mid_, h, temb);
    for (int i = cfg_.depth - 1; i >= 0; --i) {
        h = ad::upsample_nearest2(h);
        h = ad::concat(h, skips[static_cast<std::size_t>(i)], 1);
        h = run_block(up_[static_cast<std::size_t>(i)], h, temb);
    }
    return head_(h);
}

template <typename T>
MlpDenoiser<T>::MlpDenoiser(MlpDenoiserConfig cfg) : cfg_(cfg) {
    if (cfg_.data_dim <= 0 || cfg_.hidden <= 0 || cfg_.hidden_layers <= 0 || cfg_.time_dim <= 0 || cfg_.time_dim % 2) {
        throw std::invalid_argument("invalid MLP denoiser config");
    }
    std::int64_t in = cfg_.data_dim + cfg_.time_dim;
    for (int i = 0; i < cfg_.hidden_layers; ++i) {
        layers_.push_back(LinearLayer<T>::create(store_, "fc" + std::to_string(i), in, cfg_.hidden));
        in = cfg_.hidden;
    }
    layers_.push_back(LinearLayer<T>::create(store_, "out", in, cfg_.data_dim));
}

template <typename T>
void MlpDenoiser<T>::reset_parameters(RngStream& rng) {
    for (auto& l : layers_) {
        init::fan_in_uniform(l.weight.mutable_value(), l.fan_in(), rng);
        init::fan_in_uniform(l.bias.mutable_value(), l.fan_in(), rng);
    }
}

template <typename T>
ad::Var<T> MlpDenoiser<T>::forward(const ad::Var<T>& x, std::span<const int> t) const {
    if (x.shape().size() != 2 || x.shape()[1] != cfg_.data_dim || static_cast<std::int64_t>(t.size()) != x.shape()[0]) {
        throw ShapeError("MLP denoiser: input " + shape_to_string(x.shape()) + " with " + std::to_string(t.size()) + " steps");
    }
    auto h = ad::concat(x, ad::Var<T>::constant(time_embed_batch<T>(t, TimeEmbedding{cfg_.time_dim})), 1);
    for (std::size_t i = 0; i + 1 < layers_.size(); ++i) h = ad::silu(layers_[i](h));
    return layers_.back()(h);
}

template class UNet<float>;
template class UNet<double>;
template class MlpDenoiser<float>;
template class MlpDenoiser<double>;

} // namespace synthaug
