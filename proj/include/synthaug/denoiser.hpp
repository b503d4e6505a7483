#pragma once

#include <span>
#include <vector>

#include "synthaug/diffusion.hpp"
#include "synthaug/nn.hpp"

namespace synthaug {

// Sinusoidal step embedding: emb[2i] = sin(t w_i), emb[2i+1] = cos(t w_i), w_i = base^(-2i/dim).
struct TimeEmbedding {
    int dim = 64;
    double base = 10000.0;
};

std::vector<double> time_embed(double t, const TimeEmbedding& cfg);

template <typename T>
BasicTensor<T> time_embed_batch(std::span<const int> t, const TimeEmbedding& cfg);

struct UNetConfig {
    int input_size = 32;
    int base_channels = 32;
    int depth = 2;
    int time_dim = 64;
    int channels = 1;

    void validate() const;
};

// Parameter count of the U-Net below as a closed-form function of the config:
//   time MLP                 d*d + d
//   stem conv                9*ch*b + b
//   block(cin, cout)         9*cin*cout + cout + d*cout + cout + 9*cout*cout + cout
//   encoder i = 0..L-1       block(c_{i-1}, c_i) with c_{-1} = b, c_i = b*2^i
//   bottleneck               block(c_{L-1}, c_L)
//   decoder i = L-1..0       block(c_{i+1} + c_i, c_i)
//   head conv                9*b*ch + ch
std::int64_t unet_parameter_count(const UNetConfig& cfg);

// Noise predictor for images. Resolution levels: stem conv, then per level a
// residual-free conv block (conv-SiLU, + projected time embedding, conv-SiLU)
// followed by 2x2 average pooling; a bottleneck block; and mirrored decoder
// levels that upsample (nearest x2) and concatenate the matching encoder
// activation before their block. A final 3x3 conv maps back to `channels`.
template <typename T>
class UNet {
public:
    explicit UNet(UNetConfig cfg);
    UNet(const UNet&) = delete;
    UNet& operator=(const UNet&) = delete;

    void reset_parameters(RngStream& rng);

    // x: [N, channels, S, S]; t: N step indices. Output has the shape of x.
    ad::Var<T> forward(const ad::Var<T>& x, std::span<const int> t) const;

    const UNetConfig& config() const noexcept { return cfg_; }
    ParamStore<T>& params() noexcept { return store_; }
    const ParamStore<T>& params() const noexcept { return store_; }

private:
    struct Block {
        Conv2dLayer<T> conv1;
        LinearLayer<T> time_proj;
        Conv2dLayer<T> conv2;
    };

    Block make_block(const std::string& name, std::int64_t cin, std::int64_t cout);
    ad::Var<T> run_block(const Block& b, const ad::Var<T>& x, const ad::Var<T>& temb) const;

    UNetConfig cfg_;
    ParamStore<T> store_;
    LinearLayer<T> time_mlp_;
    Conv2dLayer<T> stem_;
    std::vector<Block> down_;
    Block mid_;
    std::vector<Block> up_; // up_[i] serves level i
    Conv2dLayer<T> head_;
};

struct MlpDenoiserConfig {
    int data_dim = 2;
    int time_dim = 32;
    int hidden = 64;
    int hidden_layers = 2;
};

// concat(x, time_embed(t)) -> [Linear-SiLU] x hidden_layers -> Linear(data_dim).
template <typename T>
class MlpDenoiser {
public:
    explicit MlpDenoiser(MlpDenoiserConfig cfg);
    MlpDenoiser(const MlpDenoiser&) = delete;
    MlpDenoiser& operator=(const MlpDenoiser&) = delete;

    void reset_parameters(RngStream& rng);
    ad::Var<T> forward(const ad::Var<T>& x, std::span<const int> t) const;

    ParamStore<T>& params() noexcept { return store_; }

private:
    MlpDenoiserConfig cfg_;
    ParamStore<T> store_;
    std::vector<LinearLayer<T>> layers_;
};

// Adapts a float network to the EpsModel signature used by the diffusion module.
template <typename Net>
EpsModel as_eps_model(const Net& net) {
    return [&net](const ad::Var<float>& x, std::span<const int> t) { return net.forward(x, t); };
}

} // namespace synthaug
