#pragma once

#include <cmath>
#include <deque>
#include <memory>
#include <string>
#include <vector>

#include "synthaug/ops.hpp"
#include "synthaug/rng.hpp"

namespace synthaug {

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

// Ordered registry of a network's named parameters and non-trainable state
// buffers. Buffer addresses are stable for the store's lifetime.
template <typename T>
class ParamStore {
public:
    struct Entry {
        std::string name;
        ad::Var<T> var;
        bool trainable;
    };

    ad::Var<T> add(const std::string& name, Shape shape) {
        check_unique(name);
        params_.push_back({name, ad::Var<T>::parameter(BasicTensor<T>(std::move(shape))), true});
        return params_.back().var;
    }

    BasicTensor<T>& add_buffer(const std::string& name, Shape shape, T fill) {
        check_unique(name);
        buffer_names_.push_back(name);
        return buffers_.emplace_back(std::move(shape), fill);
    }

    // Frozen parameters stop receiving gradients and count as non-trainable.
    void set_trainable(const std::string& name_prefix, bool trainable) {
        for (auto& e : params_) {
            if (e.name.rfind(name_prefix, 0) == 0) {
                e.trainable = trainable;
                e.var.node()->requires_grad = trainable;
            }
        }
    }

    std::vector<ad::Var<T>> trainable_params() const {
        std::vector<ad::Var<T>> out;
        for (const auto& e : params_) {
            if (e.trainable) out.push_back(e.var);
        }
        return out;
    }

    std::int64_t trainable_count() const {
        std::int64_t n = 0;
        for (const auto& e : params_) n += e.trainable ? static_cast<std::int64_t>(e.var.value().size()) : 0;
        return n;
    }

    std::int64_t non_trainable_count() const {
        std::int64_t n = 0;
        for (const auto& e : params_) n += e.trainable ? 0 : static_cast<std::int64_t>(e.var.value().size());
        for (const auto& b : buffers_) n += static_cast<std::int64_t>(b.size());
        return n;
    }

    std::int64_t total_count() const { return trainable_count() + non_trainable_count(); }

    // Parameters and buffers whose names start with `prefix`.
    std::int64_t count_with_prefix(const std::string& prefix) const {
        std::int64_t n = 0;
        for (const auto& e : params_) {
            if (e.name.rfind(prefix, 0) == 0) n += static_cast<std::int64_t>(e.var.value().size());
        }
        for (std::size_t i = 0; i < buffers_.size(); ++i) {
            if (buffer_names_[i].rfind(prefix, 0) == 0) n += static_cast<std::int64_t>(buffers_[i].size());
        }
        return n;
    }

    const std::vector<Entry>& params() const noexcept { return params_; }

    // Parameters then buffers, in registration order.
    std::vector<NamedTensor> entries() const {
        std::vector<NamedTensor> out;
        for (const auto& e : params_) out.push_back({e.name, e.var.value().template cast<float>()});
        for (std::size_t i = 0; i < buffers_.size(); ++i) out.push_back({buffer_names_[i], buffers_[i].template cast<float>()});
        return out;
    }

    // Restores entries by name. Every stored tensor whose name starts with
    // `prefix` must be present with a matching shape; others are left alone.
    void load(const std::vector<NamedTensor>& entries, const std::string& prefix = "") {
        auto find = [&](const std::string& name) -> const NamedTensor& {
            for (const auto& e : entries) {
                if (e.name == name) return e;
            }
            throw FormatError("checkpoint is missing entry '" + name + "'");
        };
        auto assign = [](BasicTensor<T>& dst, const NamedTensor& src) {
            if (dst.shape() != src.tensor.shape()) {
                throw FormatError("checkpoint entry '" + src.name + "' has shape " + shape_to_string(src.tensor.shape()) +
                                  ", expected " + shape_to_string(dst.shape()));
            }
            dst = src.tensor.template cast<T>();
        };
        auto selected = [&](const std::string& name) { return name.rfind(prefix, 0) == 0; };
        for (auto& e : params_) {
            if (selected(e.name)) assign(e.var.mutable_value(), find(e.name));
        }
        for (std::size_t i = 0; i < buffers_.size(); ++i) {
            if (selected(buffer_names_[i])) assign(buffers_[i], find(buffer_names_[i]));
        }
    }

private:
    void check_unique(const std::string& name) const {
        for (const auto& e : params_) {
            if (e.name == name) throw std::invalid_argument("duplicate parameter name '" + name + "'");
        }
        for (const auto& b : buffer_names_) {
            if (b == name) throw std::invalid_argument("duplicate buffer name '" + name + "'");
        }
    }

    std::vector<Entry> params_;
    std::vector<std::string> buffer_names_;
    std::deque<BasicTensor<T>> buffers_;
};

namespace init {

template <typename T>
void normal(BasicTensor<T>& t, RngStream& rng, double stddev) {
    rng.fill_normal<T>(t.data(), stddev);
}

// Glorot/Xavier uniform with limit sqrt(6 / (fan_in + fan_out)).
template <typename T>
void glorot_uniform(BasicTensor<T>& t, std::int64_t fan_in, std::int64_t fan_out, RngStream& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (auto& v : t.storage()) v = static_cast<T>(rng.uniform(-limit, limit));
}

// He-style uniform bound 1/sqrt(fan_in) (PyTorch's default for conv/linear).
template <typename T>
void fan_in_uniform(BasicTensor<T>& t, std::int64_t fan_in, RngStream& rng) {
    const double limit = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& v : t.storage()) v = static_cast<T>(rng.uniform(-limit, limit));
}

} // namespace init

template <typename T>
struct Conv2dLayer {
    ad::Var<T> weight; // [Cout, Cin, K, K]
    ad::Var<T> bias;   // [Cout]
    int padding = 1;

    static Conv2dLayer create(ParamStore<T>& store, const std::string& name, std::int64_t cin, std::int64_t cout,
                              int kernel, int padding) {
        return {store.add(name + ".weight", {cout, cin, kernel, kernel}), store.add(name + ".bias", {cout}), padding};
    }

    std::int64_t fan_in() const { return weight.shape()[1] * weight.shape()[2] * weight.shape()[3]; }
    std::int64_t fan_out() const { return weight.shape()[0] * weight.shape()[2] * weight.shape()[3]; }

    ad::Var<T> operator()(const ad::Var<T>& x) const { return ad::conv2d(x, weight, bias, padding); }
};

template <typename T>
struct LinearLayer {
    ad::Var<T> weight; // [out, in]
    ad::Var<T> bias;   // [out]

    static LinearLayer create(ParamStore<T>& store, const std::string& name, std::int64_t in, std::int64_t out) {
        return {store.add(name + ".weight", {out, in}), store.add(name + ".bias", {out})};
    }

    std::int64_t fan_in() const { return weight.shape()[1]; }
    std::int64_t fan_out() const { return weight.shape()[0]; }

    ad::Var<T> operator()(const ad::Var<T>& x) const { return ad::linear(x, weight, bias); }
};

template <typename T>
struct BatchNormLayer {
    ad::Var<T> gamma;
    ad::Var<T> beta;
    BasicTensor<T>* running_mean = nullptr;
    BasicTensor<T>* running_var = nullptr;
    T momentum = T(0.99);

    static BatchNormLayer create(ParamStore<T>& store, const std::string& name, std::int64_t channels) {
        BatchNormLayer l;
        l.gamma = store.add(name + ".gamma", {channels});
        l.beta = store.add(name + ".beta", {channels});
        l.running_mean = &store.add_buffer(name + ".moving_mean", {channels}, T{0});
        l.running_var = &store.add_buffer(name + ".moving_variance", {channels}, T{1});
        return l;
    }

    void reset() {
        std::fill(gamma.mutable_value().storage().begin(), gamma.mutable_value().storage().end(), T{1});
        std::fill(beta.mutable_value().storage().begin(), beta.mutable_value().storage().end(), T{0});
        std::fill(running_mean->storage().begin(), running_mean->storage().end(), T{0});
        std::fill(running_var->storage().begin(), running_var->storage().end(), T{1});
    }

    ad::Var<T> operator()(const ad::Var<T>& x, bool training) const {
        return ad::batch_norm(x, gamma, beta, *running_mean, *running_var, training, momentum);
    }
};

} // namespace synthaug
