#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "synthaug/dataset.hpp"
#include "synthaug/metrics.hpp"
#include "synthaug/nn.hpp"

namespace synthaug::classify {

enum class ModelKind { custom_cnn, vgg16 };
std::string to_string(ModelKind k);
ModelKind model_kind_from_string(const std::string& s);

// One row of a Keras-style model summary. output_shape omits the batch axis and
// is channels-last, as Keras prints it.
struct LayerSummary {
    std::string name;
    std::string type;
    std::vector<std::int64_t> output_shape;
    std::int64_t params = 0;
};

std::string format_summary(const std::vector<LayerSummary>& rows, std::int64_t total, std::int64_t trainable,
                           std::int64_t non_trainable);

// Two-class image classifier over [N, 3, S, S] inputs. Parameters are
// allocated at construction (zero-filled); reset_parameters() draws an init.
class Classifier {
public:
    virtual ~Classifier() = default;

    virtual std::string name() const = 0;
    virtual void reset_parameters(RngStream& rng) = 0;
    // Penultimate activations (input of the final dense layer).
    virtual ad::Var<float> features(const ad::Var<float>& x, bool training, RngStream& dropout_rng) = 0;
    virtual ad::Var<float> head(const ad::Var<float>& features) const = 0;

    ad::Var<float> logits(const ad::Var<float>& x, bool training, RngStream& dropout_rng) {
        return head(features(x, training, dropout_rng));
    }

    int input_size() const noexcept { return input_size_; }
    static constexpr int input_channels = 3;
    Shape input_item_shape() const { return {input_channels, input_size_, input_size_}; }

    ParamStore<float>& params() noexcept { return store_; }
    const ParamStore<float>& params() const noexcept { return store_; }
    const std::vector<LayerSummary>& summary() const noexcept { return summary_; }
    std::int64_t layer_params(const std::string& layer) const { return store_.count_with_prefix(layer + "."); }

    // Evaluation-mode helpers over [N, 1 or 3, S, S] images, in chunks.
    std::vector<int> predict(const Tensor& images, std::int64_t chunk = 64);
    Tensor embed(const Tensor& images, std::int64_t chunk = 64);

protected:
    explicit Classifier(int input_size) : input_size_(input_size) {}

    ParamStore<float> store_;
    std::vector<LayerSummary> summary_;
    int input_size_;
};

// Replicates single-channel images to 3 channels; checks the spatial size.
Tensor to_model_input(const Tensor& images, int input_size);

// Three conv(3x3, relu) + batch-norm + 2x2 max-pool blocks of 64/128/256
// filters, then dense 256 and 128 (relu, dropout 0.5) and a 2-way output.
std::unique_ptr<Classifier> build_custom_cnn(int input_size);

// 13-conv VGG16 backbone (prefix "vgg16.") plus flatten, dense 512 (relu),
// dropout 0.5, dense 2. A frozen backbone counts as non-trainable.
std::unique_ptr<Classifier> build_vgg16(int input_size, bool freeze_backbone = false);

// Restores the "vgg16." entries of a checkpoint; FormatError if any are missing or mis-shaped.
void load_backbone(Classifier& vgg, const std::vector<NamedTensor>& entries);

std::unique_ptr<Classifier> build_model(ModelKind kind, int input_size);

struct TrainProtocol {
    int epochs = 20;
    int batch_size = 32;
    double lr = 1e-4;
    int runs = 5;
    int positive_class = 1;

    void validate() const;
};

struct RunResult {
    // Mean over the test sets (confusion counts are summed).
    metrics::ClassificationMetrics metrics;
    std::vector<metrics::ClassificationMetrics> per_test_set;
    std::vector<double> epoch_loss;
    double train_accuracy = 0.0;
};

using ModelBuilder = std::function<std::unique_ptr<Classifier>()>;
// Called after each run with the trained model, e.g. to checkpoint it.
using RunCallback = std::function<void(int run, Classifier& model)>;

// Run i initializes from derive_stream(master_seed, i): child 1 seeds the
// weights, child 2 the epoch shuffles and child 3 the dropout masks.
std::vector<RunResult> train_and_evaluate(const ModelBuilder& builder, const LabeledDataset& train,
                                          std::span<const LabeledDataset> tests, const TrainProtocol& protocol,
                                          std::uint64_t master_seed, const RunCallback& on_run = {});

// Averages metrics field by field; confusion counts are summed.
metrics::ClassificationMetrics average_metrics(std::span<const metrics::ClassificationMetrics> m);

} // namespace synthaug::classify
