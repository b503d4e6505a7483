#include "synthaug/classify.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <stdexcept>

#include "synthaug/optim.hpp"

namespace synthaug::classify {

namespace {

using V = ad::Var<float>;

void check_input(const V& x, int size) {
    const auto& s = x.shape();
    if (s.size() != 4 || s[1] != Classifier::input_channels || s[2] != size || s[3] != size) {
        throw ShapeError("classifier expects [N, 3, " + std::to_string(size) + ", " + std::to_string(size) + "], got " +
                         shape_to_string(s));
    }
}

std::string with_commas(std::int64_t v) {
    std::string s = std::to_string(v);
    for (int i = static_cast<int>(s.size()) - 3; i > 0; i -= 3) s.insert(static_cast<std::size_t>(i), ",");
    return s;
}

// Keras uses 0.99; at desk scale (tens of optimizer steps per run) that leaves
// the moving statistics near their initial values at evaluation time.
constexpr float kBnMomentum = 0.9f;

class CustomCnn final : public Classifier {
public:
    explicit CustomCnn(int size) : Classifier(size) {
        if (size < 8 || size % 8 != 0) throw std::invalid_argument("custom CNN input size must be a positive multiple of 8");
        const std::int64_t filters[] = {64, 128, 256};
        std::int64_t cin = input_channels, s = size;
        for (int i = 0; i < 3; ++i) {
            const auto k = std::to_string(i + 1);
            convs_[i] = Conv2dLayer<float>::create(store_, "conv2d_" + k, cin, filters[i], 3, 1);
            summary_.push_back({"conv2d_" + k, "Conv2D", {s, s, filters[i]}, 0});
            bns_[i] = BatchNormLayer<float>::create(store_, "batch_normalization_" + k, filters[i]);
            bns_[i].momentum = kBnMomentum;
            summary_.push_back({"batch_normalization_" + k, "BatchNormalization", {s, s, filters[i]}, 0});
            s /= 2;
            summary_.push_back({"max_pooling2d_" + k, "MaxPooling2D", {s, s, filters[i]}, 0});
            cin = filters[i];
        }
        const std::int64_t flat = s * s * 256;
        summary_.push_back({"flatten", "Flatten", {flat}, 0});
        dense_[0] = LinearLayer<float>::create(store_, "dense_1", flat, 256);
        summary_.push_back({"dense_1", "Dense", {256}, 0});
        summary_.push_back({"dropout_1", "Dropout", {256}, 0});
        dense_[1] = LinearLayer<float>::create(store_, "dense_2", 256, 128);
        summary_.push_back({"dense_2", "Dense", {128}, 0});
        summary_.push_back({"dropout_2", "Dropout", {128}, 0});
        dense_[2] = LinearLayer<float>::create(store_, "dense_3", 128, 2);
        summary_.push_back({"dense_3", "Dense", {2}, 0});
        for (auto& row : summary_) row.params = layer_params(row.name);
    }

    std::string name() const override { return "custom_cnn"; }

    void reset_parameters(RngStream& rng) override {
        for (auto& c : convs_) {
            init::glorot_uniform(c.weight.mutable_value(), c.fan_in(), c.fan_out(), rng);
            auto& b = c.bias.mutable_value().storage();
            std::fill(b.begin(), b.end(), 0.0f);
        }
        for (auto& bn : bns_) bn.reset();
        for (auto& d : dense_) {
            init::glorot_uniform(d.weight.mutable_value(), d.fan_in(), d.fan_out(), rng);
            auto& b = d.bias.mutable_value().storage();
            std::fill(b.begin(), b.end(), 0.0f);
        }
    }

    V features(const V& x, bool training, RngStream& rng) override {
        check_input(x, input_size_);
        V h = x;
        for (int i = 0; i < 3; ++i) h = ad::max_pool2(bns_[i](ad::relu(convs_[i](h)), training));
        h = ad::dropout(ad::relu(dense_[0](ad::flatten(h))), 0.5f, training, rng);
        return ad::dropout(ad::relu(dense_[1](h)), 0.5f, training, rng);
    }

    V head(const V& f) const override { return dense_[2](f); }

private:
    Conv2dLayer<float> convs_[3];
    BatchNormLayer<float> bns_[3];
    LinearLayer<float> dense_[3];
};

class Vgg16 final : public Classifier {
public:
    Vgg16(int size, bool freeze) : Classifier(size) {
        if (size < 32 || size % 32 != 0) throw std::invalid_argument("VGG16 input size must be a positive multiple of 32");
        const int blocks[5][2] = {{2, 64}, {2, 128}, {3, 256}, {3, 512}, {3, 512}};
        std::int64_t cin = input_channels;
        for (int b = 0; b < 5; ++b) {
            std::vector<Conv2dLayer<float>> layers;
            for (int c = 0; c < blocks[b][0]; ++c) {
                const auto n = "vgg16.block" + std::to_string(b + 1) + "_conv" + std::to_string(c + 1);
                layers.push_back(Conv2dLayer<float>::create(store_, n, cin, blocks[b][1], 3, 1));
                cin = blocks[b][1];
            }
            backbone_.push_back(std::move(layers));
        }
        const std::int64_t s = size / 32;
        summary_.push_back({"vgg16", "Functional", {s, s, 512}, 0});
        summary_.push_back({"flatten", "Flatten", {s * s * 512}, 0});
        dense_ = LinearLayer<float>::create(store_, "dense", s * s * 512, 512);
        summary_.push_back({"dense", "Dense", {512}, 0});
        summary_.push_back({"dropout", "Dropout", {512}, 0});
        out_ = LinearLayer<float>::create(store_, "dense_1", 512, 2);
        summary_.push_back({"dense_1", "Dense", {2}, 0});
        for (auto& row : summary_) row.params = layer_params(row.name);
        if (freeze) store_.set_trainable("vgg16.", false);
    }

    std::string name() const override { return "vgg16"; }

    void reset_parameters(RngStream& rng) override {
        auto reset = [&](auto& layer) {
            init::glorot_uniform(layer.weight.mutable_value(), layer.fan_in(), layer.fan_out(), rng);
            auto& b = layer.bias.mutable_value().storage();
            std::fill(b.begin(), b.end(), 0.0f);
        };
        for (auto& block : backbone_)
            for (auto& c : block) reset(c);
        reset(dense_);
        reset(out_);
    }

    V features(const V& x, bool training, RngStream& rng) override {
        check_input(x, input_size_);
        V h = x;
        for (const auto& block : backbone_) {
            for (const auto& c : block) h = ad::relu(c(h));
            h = ad::max_pool2(h);
        }
        return ad::dropout(ad::relu(dense_(ad::flatten(h))), 0.5f, training, rng);
    }

    V head(const V& f) const override { return out_(f); }

private:
    std::vector<std::vector<Conv2dLayer<float>>> backbone_;
    LinearLayer<float> dense_;
    LinearLayer<float> out_;
};

double epoch_mean(double sum, std::size_t n) { return sum / static_cast<double>(n); }

} // namespace

std::string to_string(ModelKind k) { return k == ModelKind::custom_cnn ? "custom_cnn" : "vgg16"; }

ModelKind model_kind_from_string(const std::string& s) {
    if (s == "custom_cnn") return ModelKind::custom_cnn;
    if (s == "vgg16") return ModelKind::vgg16;
    throw std::invalid_argument("unknown model '" + s + "'");
}

std::string format_summary(const std::vector<LayerSummary>& rows, std::int64_t total, std::int64_t trainable,
                           std::int64_t non_trainable) {
    std::string out;
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-44s %-22s %s\n", "Layer (type)", "Output Shape", "Param #");
    out += buf;
    for (const auto& r : rows) {
        std::string shape = "(None";
        for (auto d : r.output_shape) shape += ", " + std::to_string(d);
        shape += ")";
        std::snprintf(buf, sizeof buf, "%-44s %-22s %s\n", (r.name + " (" + r.type + ")").c_str(), shape.c_str(),
                      with_commas(r.params).c_str());
        out += buf;
    }
    out += "Total params: " + with_commas(total) + "\n";
    out += "Trainable params: " + with_commas(trainable) + "\n";
    out += "Non-trainable params: " + with_commas(non_trainable) + "\n";
    return out;
}

Tensor to_model_input(const Tensor& images, int input_size) {
    if (images.rank() != 4 || images.dim(2) != input_size || images.dim(3) != input_size ||
        (images.dim(1) != 1 && images.dim(1) != 3)) {
        throw ShapeError("classifier input must be [N, 1 or 3, " + std::to_string(input_size) + ", " +
                         std::to_string(input_size) + "], got " + shape_to_string(images.shape()));
    }
    if (images.dim(1) == 3) return images;
    const std::int64_t n = images.dim(0);
    const auto plane = static_cast<std::size_t>(input_size) * static_cast<std::size_t>(input_size);
    Tensor out({n, 3, input_size, input_size});
    for (std::int64_t i = 0; i < n; ++i) {
        const auto src = images.storage().begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(i) * plane);
        for (int c = 0; c < 3; ++c) {
            std::copy_n(src, plane, out.storage().begin() + static_cast<std::ptrdiff_t>((static_cast<std::size_t>(i) * 3 + c) * plane));
        }
    }
    return out;
}

std::vector<int> Classifier::predict(const Tensor& images, std::int64_t chunk) {
    const Tensor x = to_model_input(images, input_size_);
    ad::NoGradGuard guard;
    RngStream unused(0, 0);
    std::vector<int> out;
    for (std::int64_t start = 0; start < x.dim(0); start += chunk) {
        const auto n = std::min(chunk, x.dim(0) - start);
        const auto part = ad::slice_batch(V::constant(x), start, n);
        const auto logits = this->logits(part, false, unused).value();
        for (std::int64_t i = 0; i < n; ++i) out.push_back(logits[static_cast<std::size_t>(2 * i + 1)] > logits[static_cast<std::size_t>(2 * i)] ? 1 : 0);
    }
    return out;
}

Tensor Classifier::embed(const Tensor& images, std::int64_t chunk) {
    const Tensor x = to_model_input(images, input_size_);
    ad::NoGradGuard guard;
    RngStream unused(0, 0);
    std::vector<Tensor> parts;
    for (std::int64_t start = 0; start < x.dim(0); start += chunk) {
        const auto n = std::min(chunk, x.dim(0) - start);
        parts.push_back(features(ad::slice_batch(V::constant(x), start, n), false, unused).value());
    }
    std::vector<float> data;
    for (const auto& p : parts) data.insert(data.end(), p.storage().begin(), p.storage().end());
    return Tensor({x.dim(0), parts.front().dim(1)}, std::move(data));
}

std::unique_ptr<Classifier> build_custom_cnn(int input_size) { return std::make_unique<CustomCnn>(input_size); }

std::unique_ptr<Classifier> build_vgg16(int input_size, bool freeze_backbone) {
    return std::make_unique<Vgg16>(input_size, freeze_backbone);
}

void load_backbone(Classifier& vgg, const std::vector<NamedTensor>& entries) {
    if (vgg.name() != "vgg16") throw std::invalid_argument("backbone checkpoints apply to VGG16 only");
    vgg.params().load(entries, "vgg16.");
}

std::unique_ptr<Classifier> build_model(ModelKind kind, int input_size) {
    return kind == ModelKind::custom_cnn ? build_custom_cnn(input_size) : build_vgg16(input_size);
}

void TrainProtocol::validate() const {
    if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (!(lr > 0.0)) throw std::invalid_argument("lr must be positive");
    if (runs < 1) throw std::invalid_argument("runs must be >= 1");
    if (positive_class != 0 && positive_class != 1) throw std::invalid_argument("positive_class must be 0 or 1");
}

metrics::ClassificationMetrics average_metrics(std::span<const metrics::ClassificationMetrics> m) {
    if (m.empty()) throw std::invalid_argument("no metrics to average");
    metrics::ClassificationMetrics out;
    out.positive_class = m[0].positive_class;
    const double k = static_cast<double>(m.size());
    for (const auto& x : m) {
        out.accuracy += x.accuracy / k;
        out.precision += x.precision / k;
        out.recall += x.recall / k;
        out.f1 += x.f1 / k;
        out.macro_precision += x.macro_precision / k;
        out.macro_recall += x.macro_recall / k;
        out.macro_f1 += x.macro_f1 / k;
        out.precision_undefined = out.precision_undefined || x.precision_undefined;
        out.recall_undefined = out.recall_undefined || x.recall_undefined;
        out.f1_undefined = out.f1_undefined || x.f1_undefined;
        for (int a = 0; a < 2; ++a)
            for (int b = 0; b < 2; ++b) out.confusion[a][b] += x.confusion[a][b];
    }
    return out;
}

std::vector<RunResult> train_and_evaluate(const ModelBuilder& builder, const LabeledDataset& train,
                                          std::span<const LabeledDataset> tests, const TrainProtocol& protocol,
                                          std::uint64_t master_seed, const RunCallback& on_run) {
    protocol.validate();
    if (train.empty()) throw std::invalid_argument("empty training set");
    if (tests.empty()) throw std::invalid_argument("no test sets");
    for (const auto& t : tests) {
        if (t.empty()) throw std::invalid_argument("empty test set");
        for (const auto& id : t.ids()) {
            if (train.contains(id)) throw std::invalid_argument("record '" + id + "' is in both train and test sets");
        }
    }

    std::vector<RunResult> results;
    for (int run = 0; run < protocol.runs; ++run) {
        RngStream stream = derive_stream(master_seed, static_cast<std::uint64_t>(run));
        RngStream init_rng = stream.derive(1), shuffle_rng = stream.derive(2), dropout_rng = stream.derive(3);
        auto model = builder();
        model->reset_parameters(init_rng);
        const Tensor x = to_model_input(train.images(), model->input_size());
        std::vector<std::size_t> all(train.size());
        std::iota(all.begin(), all.end(), std::size_t{0});
        const std::vector<int> y = train.labels(all);

        Adam opt(model->params().trainable_params(), protocol.lr);
        RunResult result;
        const auto per = static_cast<std::size_t>(x.size() / x.dim(0));
        std::vector<std::size_t> order = all;
        for (int epoch = 0; epoch < protocol.epochs; ++epoch) {
            shuffle_rng.shuffle(order);
            double loss_sum = 0.0;
            for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(protocol.batch_size)) {
                const std::size_t n = std::min(static_cast<std::size_t>(protocol.batch_size), order.size() - start);
                Shape bs = x.shape();
                bs[0] = static_cast<std::int64_t>(n);
                Tensor xb(bs);
                std::vector<int> yb(n);
                for (std::size_t i = 0; i < n; ++i) {
                    const auto src = order[start + i];
                    std::copy_n(x.storage().begin() + static_cast<std::ptrdiff_t>(src * per), per,
                                xb.storage().begin() + static_cast<std::ptrdiff_t>(i * per));
                    yb[i] = y[src];
                }
                opt.zero_grad();
                auto loss = ad::softmax_cross_entropy(model->logits(V::constant(std::move(xb)), true, dropout_rng), std::span<const int>(yb));
                const double l = loss.value().item();
                if (!std::isfinite(l)) {
                    throw NumericError("non-finite classifier loss in run " + std::to_string(run) + ", epoch " +
                                       std::to_string(epoch));
                }
                ad::backward(loss);
                opt.step();
                loss_sum += l * static_cast<double>(n);
            }
            result.epoch_loss.push_back(epoch_mean(loss_sum, order.size()));
        }

        const auto train_pred = model->predict(x);
        std::size_t correct = 0;
        for (std::size_t i = 0; i < y.size(); ++i) correct += train_pred[i] == y[i];
        result.train_accuracy = static_cast<double>(correct) / static_cast<double>(y.size());

        for (const auto& t : tests) {
            std::vector<std::size_t> idx(t.size());
            std::iota(idx.begin(), idx.end(), std::size_t{0});
            const auto pred = model->predict(t.images());
            result.per_test_set.push_back(metrics::classification_metrics(pred, t.labels(idx), protocol.positive_class));
        }
        result.metrics = average_metrics(result.per_test_set);
        if (on_run) on_run(run, *model);
        results.push_back(std::move(result));
    }
    return results;
}

} // namespace synthaug::classify
