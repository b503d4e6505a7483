#include "doctest.h"

#include <chrono>

#include "synthaug/classify.hpp"

using namespace synthaug;
using namespace synthaug::classify;

namespace {

// Oracle arithmetic for Keras layer sizes.
std::int64_t conv_params(std::int64_t k, std::int64_t cin, std::int64_t cout) { return (k * k * cin + 1) * cout; }
std::int64_t dense_params(std::int64_t in, std::int64_t out) { return (in + 1) * out; }

const LayerSummary& row(const Classifier& m, const std::string& name) {
    for (const auto& r : m.summary())
        if (r.name == name) return r;
    FAIL("no layer " << name);
    throw std::logic_error("unreachable");
}

// Linearly separable: class 1 carries a bright centre square.
LabeledDataset separable(int per_class, int size, std::uint64_t seed) {
    RngStream rng(seed, 0);
    LabeledDataset ds({"class_0", "class_1"}, Provenance::train);
    for (int c = 0; c < 2; ++c)
        for (int i = 0; i < per_class; ++i) {
            Tensor t({1, size, size});
            for (int y = 0; y < size; ++y)
                for (int x = 0; x < size; ++x) {
                    const bool centre = std::abs(2 * y - size + 1) < size / 2 && std::abs(2 * x - size + 1) < size / 2;
                    t[static_cast<std::size_t>(y * size + x)] =
                        static_cast<float>(-0.5 + 0.1 * rng.normal() + (c == 1 && centre ? 0.8 : 0.0));
                }
            ds.add({"s" + std::to_string(c) + "_" + std::to_string(i) + "_" + std::to_string(seed), c, std::move(t),
                    Provenance::train});
        }
    return ds;
}

bool mostly_decreasing(const std::vector<double>& loss, std::size_t epochs) {
    int violations = 0;
    for (std::size_t i = 1; i < epochs; ++i) violations += loss[i] >= loss[i - 1];
    return violations <= 1 && loss[epochs - 1] < loss[0];
}

} // namespace

TEST_SUITE("classify") {

TEST_CASE("custom CNN at 128 matches the model summary table") {
    const auto t0 = std::chrono::steady_clock::now();
    auto m = build_custom_cnn(128);
    CHECK(row(*m, "conv2d_1").params == 1792);
    CHECK(row(*m, "batch_normalization_1").params == 256);
    CHECK(row(*m, "max_pooling2d_1").params == 0);
    CHECK(row(*m, "conv2d_2").params == 73856);
    CHECK(row(*m, "batch_normalization_2").params == 512);
    CHECK(row(*m, "conv2d_3").params == 295168);
    CHECK(row(*m, "batch_normalization_3").params == 1024);
    CHECK(row(*m, "flatten").output_shape == std::vector<std::int64_t>{65536});
    CHECK(row(*m, "dense_1").params == 16777472);
    CHECK(row(*m, "dense_2").params == 32896);
    CHECK(row(*m, "dense_3").params == 258);
    CHECK(m->params().total_count() == 17183234);
    CHECK(m->params().trainable_count() == 17182338);
    CHECK(m->params().non_trainable_count() == 896);
    CHECK(row(*m, "conv2d_1").output_shape == std::vector<std::int64_t>{128, 128, 64});
    CHECK(row(*m, "max_pooling2d_3").output_shape == std::vector<std::int64_t>{16, 16, 256});
    CHECK(m->summary().size() == 15);
    // Oracle arithmetic agrees with the table.
    CHECK(conv_params(3, 3, 64) == 1792);
    CHECK(dense_params(16 * 16 * 256, 256) == 16777472);
    CHECK(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() < 1.0);
    const auto text = format_summary(m->summary(), m->params().total_count(), m->params().trainable_count(),
                                     m->params().non_trainable_count());
    CHECK(text.find("Total params: 17,183,234") != std::string::npos);
    CHECK(text.find("dense_1 (Dense)") != std::string::npos);
}

TEST_CASE("custom CNN at 32") {
    auto m = build_custom_cnn(32);
    CHECK(row(*m, "flatten").output_shape == std::vector<std::int64_t>{4096});
    CHECK(row(*m, "dense_1").params == dense_params(4096, 256));
    CHECK(row(*m, "dense_1").params == 1048832);
    CHECK_THROWS_AS(build_custom_cnn(20), std::invalid_argument);
    CHECK_THROWS_AS(build_custom_cnn(0), std::invalid_argument);
}

TEST_CASE("VGG16 at 224 matches the model summary table") {
    auto m = build_vgg16(224, true);
    const int blocks[5][2] = {{2, 64}, {2, 128}, {3, 256}, {3, 512}, {3, 512}};
    std::int64_t backbone = 0, cin = 3;
    for (const auto& b : blocks)
        for (int i = 0; i < b[0]; ++i) {
            backbone += conv_params(3, cin, b[1]);
            cin = b[1];
        }
    CHECK(backbone == 14714688);
    CHECK(row(*m, "vgg16").params == 14714688);
    CHECK(row(*m, "vgg16").output_shape == std::vector<std::int64_t>{7, 7, 512});
    CHECK(row(*m, "flatten").output_shape == std::vector<std::int64_t>{25088});
    CHECK(row(*m, "dense").params == 12845568);
    CHECK(row(*m, "dense_1").params == 1026);
    CHECK(m->params().total_count() == 27561282);
    CHECK(m->params().trainable_count() == 12846594);
    CHECK(m->params().non_trainable_count() == 14714688);

    auto untrained = build_vgg16(224);
    CHECK(untrained->params().trainable_count() == 27561282);
}

TEST_CASE("VGG16 at 32") {
    auto m = build_vgg16(32);
    CHECK(row(*m, "vgg16").output_shape == std::vector<std::int64_t>{1, 1, 512});
    CHECK(row(*m, "dense").params == 262656);
    CHECK_THROWS_AS(build_vgg16(48), std::invalid_argument);
    RngStream rng(1, 0);
    m->reset_parameters(rng);
    RngStream drop(2, 0);
    auto out = m->logits(ad::Var<float>::constant(Tensor({2, 3, 32, 32}, 0.1f)), false, drop);
    CHECK(out.shape() == Shape{2, 2});
    CHECK_THROWS_AS(m->logits(ad::Var<float>::constant(Tensor({2, 1, 32, 32})), false, drop), ShapeError);
    CHECK(m->embed(Tensor({3, 1, 32, 32}, 0.2f)).shape() == Shape{3, 512});
}

TEST_CASE("backbone checkpoint loading") {
    auto a = build_vgg16(32);
    RngStream rng(3, 0);
    a->reset_parameters(rng);
    auto entries = a->params().entries();
    auto b = build_vgg16(32);
    load_backbone(*b, entries);
    CHECK(b->params().params()[0].var.value() == a->params().params()[0].var.value());
    // Head stays untouched.
    CHECK(b->params().params().back().var.value() == Tensor({2}));
    entries.erase(entries.begin());
    CHECK_THROWS_AS(load_backbone(*b, entries), FormatError);
    auto cnn = build_custom_cnn(16);
    CHECK_THROWS_AS(load_backbone(*cnn, a->params().entries()), std::invalid_argument);
}

TEST_CASE("grayscale inputs are replicated to three channels") {
    Tensor g({2, 1, 8, 8});
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = static_cast<float>(i);
    auto x = to_model_input(g, 8);
    CHECK(x.shape() == Shape{2, 3, 8, 8});
    CHECK(x[64] == g[0]);
    CHECK(x[128 + 5] == g[5]);
    CHECK(x[3 * 64 + 2 * 64 + 7] == g[64 + 7]);
    CHECK_THROWS_AS(to_model_input(g, 16), ShapeError);
    CHECK_THROWS_AS(to_model_input(Tensor({2, 2, 8, 8}), 8), ShapeError);
}

TEST_CASE("evaluation is deterministic and dropout only acts in training") {
    auto m = build_custom_cnn(16);
    RngStream rng(4, 0);
    m->reset_parameters(rng);
    Tensor x({4, 1, 16, 16});
    rng.fill_normal<float>(x.data());
    CHECK(m->embed(x) == m->embed(x));
    RngStream d1(5, 0), d2(6, 0);
    const auto in = ad::Var<float>::constant(to_model_input(x, 16));
    CHECK_FALSE(m->features(in, true, d1).value() == m->features(in, true, d2).value());
}

TEST_CASE("custom CNN overfits a separable toy set and its loss falls") {
    auto train = separable(4, 16, 1);
    auto test = separable(4, 16, 2);
    TrainProtocol p;
    p.epochs = 50;
    p.runs = 1;
    auto r = train_and_evaluate([] { return build_custom_cnn(16); }, train, std::span(&test, 1), p, 7);
    REQUIRE(r.size() == 1);
    CHECK(r[0].train_accuracy == 1.0);
    CHECK(r[0].epoch_loss.size() == 50);
}

// With 8 images an epoch is one dropout-perturbed batch, so the trend check
// uses a larger draw of the same toy set.
TEST_CASE("loss falls over the first five epochs for every model") {
    for (auto kind : {ModelKind::custom_cnn, ModelKind::vgg16}) {
        auto train = separable(32, 32, 20);
        auto test = separable(2, 32, 21);
        TrainProtocol p;
        p.epochs = 5;
        p.runs = 1;
        auto r = train_and_evaluate([kind] { return build_model(kind, 32); }, train, std::span(&test, 1), p, 5);
        std::string trace;
        for (double l : r[0].epoch_loss) trace += std::to_string(l) + " ";
        INFO(to_string(kind) << " losses " << trace);
        CHECK(mostly_decreasing(r[0].epoch_loss, 5));
    }
}

TEST_CASE("VGG16 overfits a separable toy set and its loss falls") {
    auto train = separable(4, 32, 3);
    auto test = separable(2, 32, 4);
    TrainProtocol p;
    p.epochs = 50;
    p.runs = 1;
    auto r = train_and_evaluate([] { return build_vgg16(32); }, train, std::span(&test, 1), p, 8);
    MESSAGE("VGG16 epoch losses " << r[0].epoch_loss[0] << " .. " << r[0].epoch_loss.back());
    CHECK(r[0].train_accuracy == 1.0);
}

TEST_CASE("train_and_evaluate contracts") {
    auto train = separable(6, 16, 10);
    std::vector<LabeledDataset> tests{separable(3, 16, 11), separable(3, 16, 12), separable(3, 16, 13)};
    TrainProtocol p;
    p.epochs = 2;
    p.runs = 5;
    p.batch_size = 4;
    int callbacks = 0;
    auto builder = [] { return build_custom_cnn(16); };
    auto a = train_and_evaluate(builder, train, tests, p, 99, [&](int, Classifier&) { ++callbacks; });
    auto b = train_and_evaluate(builder, train, tests, p, 99);
    CHECK(a.size() == 5);
    CHECK(callbacks == 5);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].per_test_set.size() == 3);
        CHECK(a[i].metrics.accuracy == b[i].metrics.accuracy);
        CHECK(a[i].metrics.f1 == b[i].metrics.f1);
        CHECK(a[i].epoch_loss == b[i].epoch_loss);
        const double mean_acc = (a[i].per_test_set[0].accuracy + a[i].per_test_set[1].accuracy + a[i].per_test_set[2].accuracy) / 3;
        CHECK(a[i].metrics.accuracy == doctest::Approx(mean_acc).epsilon(1e-12));
        CHECK(a[i].metrics.total() == 18);
    }
    // Distinct runs draw distinct initializations.
    CHECK(a[0].epoch_loss != a[1].epoch_loss);

    CHECK_THROWS_AS(train_and_evaluate(builder, train, std::span(&train, 1), p, 1), std::invalid_argument);
    CHECK_THROWS_AS(train_and_evaluate(builder, train, std::span<const LabeledDataset>(), p, 1), std::invalid_argument);
    LabeledDataset empty({"class_0", "class_1"}, Provenance::train);
    CHECK_THROWS_AS(train_and_evaluate(builder, empty, tests, p, 1), std::invalid_argument);
    p.runs = 0;
    CHECK_THROWS_AS(train_and_evaluate(builder, train, tests, p, 1), std::invalid_argument);
}

} // TEST_SUITE
