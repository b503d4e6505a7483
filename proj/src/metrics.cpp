#include "synthaug/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "synthaug/errors.hpp"

namespace synthaug::metrics {

namespace {

void check_symmetric(const Eigen::MatrixXd& m, const char* which) {
    const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
    if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-6 * scale) {
        throw std::invalid_argument(std::string(which) + " covariance is not symmetric");
    }
}

// Symmetric PSD square root with negative eigenvalues clamped to 0.
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
    if (es.info() != Eigen::Success) throw NumericError("eigendecomposition failed");
    const Eigen::VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

double safe_ratio(std::int64_t num, std::int64_t den, bool& undefined) {
    undefined = den == 0;
    return undefined ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

} // namespace

std::string to_string(Extractor e) { return e == Extractor::pixels_8x8 ? "pixels-downsampled-8x8" : "expert-classifier-penultimate"; }

Extractor extractor_from_string(const std::string& s) {
    if (s == "pixels-downsampled-8x8") return Extractor::pixels_8x8;
    if (s == "expert-classifier-penultimate") return Extractor::expert_penultimate;
    throw std::invalid_argument("unknown feature extractor '" + s + "'");
}

Eigen::MatrixXd downsample_8x8(const Tensor& images) {
    if (images.rank() != 4 || images.dim(2) != images.dim(3) || images.dim(2) % 8 != 0) {
        throw ShapeError("8x8 extractor needs [N, C, S, S] with S a multiple of 8, got " + shape_to_string(images.shape()));
    }
    const std::int64_t n = images.dim(0), c = images.dim(1), s = images.dim(2), b = s / 8;
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n, c * 64);
    const double inv = 1.0 / static_cast<double>(b * b);
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t ch = 0; ch < c; ++ch)
            for (std::int64_t y = 0; y < s; ++y)
                for (std::int64_t x = 0; x < s; ++x) {
                    const auto idx = static_cast<std::size_t>(((i * c + ch) * s + y) * s + x);
                    out(i, ch * 64 + (y / b) * 8 + x / b) += images[idx] * inv;
                }
    return out;
}

GaussianStats gaussian_stats(const Eigen::MatrixXd& features) {
    if (features.rows() < 2) throw std::invalid_argument("feature statistics need at least 2 samples");
    GaussianStats st;
    st.n = features.rows();
    st.mu = features.colwise().mean().transpose();
    const Eigen::MatrixXd centered = features.rowwise() - st.mu.transpose();
    st.sigma = (centered.transpose() * centered) / static_cast<double>(st.n - 1);
    // Exact symmetry regardless of summation order.
    st.sigma = 0.5 * (st.sigma + st.sigma.transpose()).eval();
    return st;
}

GaussianStats feature_stats(const Tensor& images, Extractor extractor, const FeatureFn& expert) {
    if (images.rank() < 1 || images.dim(0) < 2) throw std::invalid_argument("feature statistics need at least 2 images");
    if (extractor == Extractor::pixels_8x8) return gaussian_stats(downsample_8x8(images));
    if (!expert) throw std::invalid_argument("expert extractor requested without an expert model");
    return gaussian_stats(expert(images));
}

double frechet_distance(const GaussianStats& a, const GaussianStats& b) {
    if (a.mu.size() != b.mu.size() || a.sigma.rows() != a.mu.size() || a.sigma.cols() != a.mu.size() ||
        b.sigma.rows() != b.mu.size() || b.sigma.cols() != b.mu.size()) {
        throw ShapeError("Frechet distance between statistics of dimension " + std::to_string(a.mu.size()) + " and " +
                         std::to_string(b.mu.size()));
    }
    check_symmetric(a.sigma, "first");
    check_symmetric(b.sigma, "second");
    const Eigen::MatrixXd s1 = psd_sqrt(a.sigma);
    Eigen::MatrixXd m = s1 * b.sigma * s1;
    m = 0.5 * (m + m.transpose()).eval();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) throw NumericError("eigendecomposition failed");
    const double tr_sqrt = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
    const double d2 = (a.mu - b.mu).squaredNorm() + a.sigma.trace() + b.sigma.trace() - 2.0 * tr_sqrt;
    return std::max(d2, 0.0);
}

ClassificationMetrics metrics_from_confusion(std::int64_t tp, std::int64_t fp, std::int64_t fn, std::int64_t tn,
                                             int positive_class) {
    if (positive_class != 0 && positive_class != 1) throw std::invalid_argument("positive class must be 0 or 1");
    if (tp < 0 || fp < 0 || fn < 0 || tn < 0) throw std::invalid_argument("negative confusion count");
    if (tp + fp + fn + tn == 0) throw std::invalid_argument("no samples");
    ClassificationMetrics m;
    m.positive_class = positive_class;
    const int p = positive_class, q = 1 - positive_class;
    m.confusion[p][p] = tp;
    m.confusion[p][q] = fn;
    m.confusion[q][p] = fp;
    m.confusion[q][q] = tn;

    m.accuracy = static_cast<double>(tp + tn) / static_cast<double>(tp + fp + fn + tn);
    m.precision = safe_ratio(tp, tp + fp, m.precision_undefined);
    m.recall = safe_ratio(tp, tp + fn, m.recall_undefined);
    m.f1_undefined = m.precision + m.recall == 0.0;
    m.f1 = m.f1_undefined ? 0.0 : 2.0 * m.precision * m.recall / (m.precision + m.recall);

    // The other class as positive swaps tp <-> tn and fp <-> fn.
    bool unused = false;
    const double prec_q = safe_ratio(tn, tn + fn, unused);
    const double rec_q = safe_ratio(tn, tn + fp, unused);
    const double f1_q = prec_q + rec_q == 0.0 ? 0.0 : 2.0 * prec_q * rec_q / (prec_q + rec_q);
    m.macro_precision = 0.5 * (m.precision + prec_q);
    m.macro_recall = 0.5 * (m.recall + rec_q);
    m.macro_f1 = 0.5 * (m.f1 + f1_q);
    return m;
}

ClassificationMetrics classification_metrics(std::span<const int> predictions, std::span<const int> labels,
                                             int positive_class) {
    if (predictions.size() != labels.size()) {
        throw std::invalid_argument("predictions (" + std::to_string(predictions.size()) + ") and labels (" +
                                    std::to_string(labels.size()) + ") differ in length");
    }
    if (labels.empty()) throw std::invalid_argument("no samples");
    std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const int y = labels[i], yhat = predictions[i];
        if ((y != 0 && y != 1) || (yhat != 0 && yhat != 1)) {
            throw std::invalid_argument("label " + std::to_string(y != 0 && y != 1 ? y : yhat) + " is not binary");
        }
        const bool actual = y == positive_class, predicted = yhat == positive_class;
        tp += actual && predicted;
        fn += actual && !predicted;
        fp += !actual && predicted;
        tn += !actual && !predicted;
    }
    return metrics_from_confusion(tp, fp, fn, tn, positive_class);
}

RunAggregate run_stats(std::span<const double> values) {
    if (values.size() < 2) throw std::invalid_argument("run statistics need at least 2 values");
    RunAggregate r;
    r.values.assign(values.begin(), values.end());
    double s = 0;
    for (double v : values) s += v;
    r.mean = s / static_cast<double>(values.size());
    double ss = 0;
    for (double v : values) ss += (v - r.mean) * (v - r.mean);
    r.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
    return r;
}

double expert_agreement(const Predictor& expert, const Tensor& images, int intended_label, const Shape& expert_item_shape) {
    if (images.rank() < 1 || images.dim(0) < 1) throw std::invalid_argument("expert agreement needs at least one image");
    const Shape item(images.shape().begin() + 1, images.shape().end());
    if (item != expert_item_shape) {
        throw ShapeError("expert expects images of shape " + shape_to_string(expert_item_shape) + ", got " +
                         shape_to_string(item));
    }
    const auto pred = expert(images);
    if (pred.size() != static_cast<std::size_t>(images.dim(0))) throw std::logic_error("expert returned the wrong count");
    const auto hits = std::count(pred.begin(), pred.end(), intended_label);
    return static_cast<double>(hits) / static_cast<double>(pred.size());
}

} // namespace synthaug::metrics
