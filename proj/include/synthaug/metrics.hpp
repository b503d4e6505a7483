#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "synthaug/tensor.hpp"

namespace synthaug::metrics {

struct GaussianStats {
    Eigen::VectorXd mu;
    Eigen::MatrixXd sigma;
    std::int64_t n = 0;
};

// FID values are only comparable under the same extractor.
enum class Extractor { pixels_8x8, expert_penultimate };
std::string to_string(Extractor e);
Extractor extractor_from_string(const std::string& s);

// Row per sample.
using FeatureFn = std::function<Eigen::MatrixXd(const Tensor& images)>;

// Block-averages [N, C, S, S] images (S a multiple of 8) to 8x8: N x 64C features.
Eigen::MatrixXd downsample_8x8(const Tensor& images);

// Mean and unbiased (n - 1) covariance of feature rows.
GaussianStats gaussian_stats(const Eigen::MatrixXd& features);

// `expert` supplies features for Extractor::expert_penultimate and is ignored otherwise.
GaussianStats feature_stats(const Tensor& images, Extractor extractor, const FeatureFn& expert = {});

// d^2 = |mu1 - mu2|^2 + Tr(S1 + S2 - 2 (S1^1/2 S2 S1^1/2)^1/2), with eigenvalues
// clamped at 0 before every square root and the result clamped at 0.
double frechet_distance(const GaussianStats& a, const GaussianStats& b);

struct ClassificationMetrics {
    double accuracy = 0, precision = 0, recall = 0, f1 = 0;
    // confusion[actual][predicted], classes 0 and 1.
    std::array<std::array<std::int64_t, 2>, 2> confusion{};
    int positive_class = 1;
    // Set when a zero denominator forced the value to 0.
    bool precision_undefined = false, recall_undefined = false, f1_undefined = false;
    // Unweighted means of the per-class values with each class taken as positive.
    double macro_precision = 0, macro_recall = 0, macro_f1 = 0;

    std::int64_t tp() const { return confusion[positive_class][positive_class]; }
    std::int64_t fn() const { return confusion[positive_class][1 - positive_class]; }
    std::int64_t fp() const { return confusion[1 - positive_class][positive_class]; }
    std::int64_t tn() const { return confusion[1 - positive_class][1 - positive_class]; }
    std::int64_t total() const { return tp() + fn() + fp() + tn(); }
};

ClassificationMetrics classification_metrics(std::span<const int> predictions, std::span<const int> labels,
                                             int positive_class);
// From raw counts, for callers that already hold a confusion matrix.
ClassificationMetrics metrics_from_confusion(std::int64_t tp, std::int64_t fp, std::int64_t fn, std::int64_t tn,
                                             int positive_class = 1);

struct RunAggregate {
    std::vector<double> values;
    double mean = 0;
    double std = 0; // sample standard deviation
};

RunAggregate run_stats(std::span<const double> values);

using Predictor = std::function<std::vector<int>(const Tensor& images)>;

// Fraction of `images` [N, ...] the expert assigns to intended_label.
double expert_agreement(const Predictor& expert, const Tensor& images, int intended_label, const Shape& expert_item_shape);

} // namespace synthaug::metrics
