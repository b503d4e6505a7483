#include "doctest.h"

#include <algorithm>

#include "fid_oracle.hpp"
#include "synthaug/metrics.hpp"
#include "synthaug/rng.hpp"

using namespace synthaug;
using namespace synthaug::metrics;

namespace {

GaussianStats make_stats(const std::vector<double>& mu, const Eigen::MatrixXd& sigma) {
    GaussianStats s;
    s.mu = Eigen::Map<const Eigen::VectorXd>(mu.data(), static_cast<Eigen::Index>(mu.size()));
    s.sigma = sigma;
    s.n = 100;
    return s;
}

Eigen::MatrixXd diag(const std::vector<double>& d) {
    return Eigen::Map<const Eigen::VectorXd>(d.data(), static_cast<Eigen::Index>(d.size())).asDiagonal();
}

Eigen::MatrixXd random_rotation(int n, RngStream& rng) {
    Eigen::MatrixXd a(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) a(i, j) = rng.normal();
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
    return qr.householderQ();
}

} // namespace

TEST_SUITE("metrics") {

TEST_CASE("feature statistics examples") {
    Eigen::MatrixXd same = Eigen::MatrixXd::Constant(5, 3, 0.7);
    CHECK(gaussian_stats(same).sigma.cwiseAbs().maxCoeff() == 0.0);

    Eigen::MatrixXd two(2, 1);
    two << 0, 2;
    auto s = gaussian_stats(two);
    CHECK(s.mu(0) == 1.0);
    CHECK(s.sigma(0, 0) == 2.0);
    CHECK(s.n == 2);

    RngStream rng(1, 0);
    Eigen::MatrixXd f(20, 4);
    for (int i = 0; i < 20; ++i)
        for (int j = 0; j < 4; ++j) f(i, j) = rng.normal();
    Eigen::MatrixXd g = f.colwise().reverse();
    auto a = gaussian_stats(f), b = gaussian_stats(g);
    CHECK((a.mu - b.mu).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((a.sigma - b.sigma).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(a.sigma == a.sigma.transpose());

    CHECK_THROWS_AS(gaussian_stats(Eigen::MatrixXd(1, 3)), std::invalid_argument);
    CHECK_THROWS_AS(feature_stats(Tensor({1, 1, 8, 8}), Extractor::pixels_8x8), std::invalid_argument);
    CHECK_THROWS_AS(feature_stats(Tensor({3, 1, 8, 8}), Extractor::expert_penultimate), std::invalid_argument);
}

TEST_CASE("8x8 extractor is a block average") {
    RngStream rng(2, 0);
    Tensor img({2, 1, 16, 16});
    rng.fill_normal<float>(img.data());
    auto f = downsample_8x8(img);
    CHECK(f.rows() == 2);
    CHECK(f.cols() == 64);
    for (int n = 0; n < 2; ++n)
        for (int by = 0; by < 8; ++by)
            for (int bx = 0; bx < 8; ++bx) {
                double s = 0;
                for (int dy = 0; dy < 2; ++dy)
                    for (int dx = 0; dx < 2; ++dx) s += img[static_cast<std::size_t>(n * 256 + (2 * by + dy) * 16 + 2 * bx + dx)];
                CHECK(f(n, by * 8 + bx) == doctest::Approx(s / 4).epsilon(1e-12));
            }
    CHECK_THROWS_AS(downsample_8x8(Tensor({2, 1, 12, 12})), ShapeError);
    CHECK(downsample_8x8(Tensor({2, 1, 8, 8}, 0.5f)).isApproxToConstant(0.5));
}

TEST_CASE("frechet distance worked examples") {
    RngStream rng(3, 0);
    Eigen::MatrixXd f(50, 3);
    for (int i = 0; i < 50; ++i)
        for (int j = 0; j < 3; ++j) f(i, j) = rng.normal();
    auto x = gaussian_stats(f);
    CHECK(frechet_distance(x, x) <= 1e-6);

    auto shifted = x;
    shifted.mu(0) += 1.0;
    CHECK(frechet_distance(x, shifted) == doctest::Approx(1.0).epsilon(1e-9));

    auto a = make_stats({0, 0}, diag({1, 1}));
    auto b = make_stats({0, 0}, diag({4, 1}));
    CHECK(std::abs(frechet_distance(a, b) - 1.0) <= 1e-6);

    CHECK_THROWS_AS(frechet_distance(a, make_stats({0, 0, 0}, diag({1, 1, 1}))), ShapeError);
    Eigen::MatrixXd skew(2, 2);
    skew << 1, 0.5, 0, 1;
    CHECK_THROWS_AS(frechet_distance(a, make_stats({0, 0}, skew)), std::invalid_argument);
}

TEST_CASE("frechet distance matches the diagonal closed form") {
    RngStream rng(4, 0);
    for (int trial = 0; trial < 20; ++trial) {
        const int d = 1 + static_cast<int>(rng.below(6));
        std::vector<double> m1(d), m2(d), s1(d), s2(d);
        for (int i = 0; i < d; ++i) {
            m1[i] = rng.normal();
            m2[i] = rng.normal();
            s1[i] = rng.uniform(0.01, 4.0);
            s2[i] = rng.uniform(0.01, 4.0);
        }
        const double expect = fid_oracle::diagonal(m1, s1, m2, s2);
        CHECK(std::abs(frechet_distance(make_stats(m1, diag(s1)), make_stats(m2, diag(s2))) - expect) < 1e-5);

        // Rotating both covariances by one orthogonal basis leaves the distance unchanged,
        // which exercises the full (non-diagonal) square-root path.
        const auto r = random_rotation(d, rng);
        Eigen::MatrixXd r1 = r * diag(s1) * r.transpose(), r2 = r * diag(s2) * r.transpose();
        r1 = 0.5 * (r1 + r1.transpose()).eval();
        r2 = 0.5 * (r2 + r2.transpose()).eval();
        CHECK(std::abs(frechet_distance(make_stats(m1, r1), make_stats(m2, r2)) - expect) < 1e-5);
    }
}

TEST_CASE("frechet distance is symmetric and non-negative") {
    RngStream rng(5, 0);
    for (int trial = 0; trial < 20; ++trial) {
        Eigen::MatrixXd f(30, 5), g(30, 5);
        for (int i = 0; i < 30; ++i)
            for (int j = 0; j < 5; ++j) {
                f(i, j) = rng.normal();
                g(i, j) = rng.normal() * 2 + (j == 0 ? 1 : 0);
            }
        auto a = gaussian_stats(f), b = gaussian_stats(g);
        CHECK(std::abs(frechet_distance(a, b) - frechet_distance(b, a)) < 1e-6);
        CHECK(frechet_distance(a, b) >= 0.0);
    }
    // Rank-deficient covariances still give a finite, clamped result.
    Eigen::MatrixXd low = Eigen::MatrixXd::Zero(3, 3);
    low(0, 0) = 1;
    CHECK(frechet_distance(make_stats({0, 0, 0}, low), make_stats({0, 0, 0}, low)) <= 1e-12);
}

TEST_CASE("confusion example") {
    std::vector<int> pred, label;
    auto push = [&](int n, int p, int y) {
        for (int i = 0; i < n; ++i) {
            pred.push_back(p);
            label.push_back(y);
        }
    };
    push(8, 1, 1);
    push(2, 1, 0);
    push(1, 0, 1);
    push(9, 0, 0);
    auto m = classification_metrics(pred, label, 1);
    CHECK(m.tp() == 8);
    CHECK(m.fp() == 2);
    CHECK(m.fn() == 1);
    CHECK(m.tn() == 9);
    CHECK(m.accuracy == 17.0 / 20.0);
    CHECK(m.precision == 8.0 / 10.0);
    CHECK(m.recall == 8.0 / 9.0);
    CHECK(m.f1 == doctest::Approx(16.0 / 19.0).epsilon(1e-15));
    CHECK(m.accuracy == doctest::Approx(0.85).epsilon(1e-12));
    CHECK(m.recall == doctest::Approx(0.88889).epsilon(1e-5));
    CHECK(m.f1 == doctest::Approx(0.84211).epsilon(1e-5));
    CHECK_FALSE(m.precision_undefined);
    // Class 0 as positive: precision 9/10, recall 9/11.
    CHECK(m.macro_precision == doctest::Approx((0.8 + 0.9) / 2));
    CHECK(m.macro_recall == doctest::Approx((8.0 / 9 + 9.0 / 11) / 2));
}

TEST_CASE("classification metrics degenerate cases") {
    const std::vector<int> y{0, 1, 1, 0, 1};
    auto perfect = classification_metrics(y, y, 1);
    CHECK(perfect.accuracy == 1.0);
    CHECK(perfect.precision == 1.0);
    CHECK(perfect.recall == 1.0);
    CHECK(perfect.f1 == 1.0);

    const std::vector<int> none{0, 0, 0, 0, 0};
    auto m = classification_metrics(none, y, 1);
    CHECK(m.recall == 0.0);
    CHECK_FALSE(m.recall_undefined);
    CHECK(m.precision == 0.0);
    CHECK(m.precision_undefined);
    CHECK(m.f1_undefined);

    CHECK_THROWS_AS(classification_metrics(none, std::vector<int>{0, 1}, 1), std::invalid_argument);
    CHECK_THROWS_AS(classification_metrics(std::vector<int>{2}, std::vector<int>{1}, 1), std::invalid_argument);
    CHECK_THROWS_AS(classification_metrics(std::vector<int>{1}, std::vector<int>{-1}, 1), std::invalid_argument);
}

TEST_CASE("classification metrics equal a brute-force count oracle") {
    RngStream rng(6, 0);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 1 + static_cast<std::size_t>(rng.below(60));
        std::vector<int> p(n), y(n);
        for (std::size_t i = 0; i < n; ++i) {
            p[i] = static_cast<int>(rng.below(2));
            y[i] = static_cast<int>(rng.below(2));
        }
        const int pos = static_cast<int>(rng.below(2));
        double tp = 0, fp = 0, fn = 0, tn = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (p[i] == pos && y[i] == pos) tp++;
            else if (p[i] == pos) fp++;
            else if (y[i] == pos) fn++;
            else tn++;
        }
        auto m = classification_metrics(p, y, pos);
        CHECK(m.total() == static_cast<std::int64_t>(n));
        CHECK(m.accuracy == doctest::Approx((tp + tn) / n));
        CHECK(m.precision == doctest::Approx(tp + fp > 0 ? tp / (tp + fp) : 0.0));
        CHECK(m.recall == doctest::Approx(tp + fn > 0 ? tp / (tp + fn) : 0.0));
        const double pr = tp + fp > 0 ? tp / (tp + fp) : 0.0, rc = tp + fn > 0 ? tp / (tp + fn) : 0.0;
        CHECK(m.f1 == doctest::Approx(pr + rc > 0 ? 2 * pr * rc / (pr + rc) : 0.0));
        CHECK(m.precision_undefined == (tp + fp == 0));
    }
}

TEST_CASE("run statistics") {
    const std::vector<double> v{0.90, 0.92, 0.91, 0.93, 0.89};
    auto r = run_stats(v);
    CHECK(r.mean == doctest::Approx(0.91).epsilon(1e-12));
    CHECK(std::abs(r.std - 0.01581) < 1e-5);
    CHECK(r.std == doctest::Approx(std::sqrt(0.001 / 4)).epsilon(1e-9));
    CHECK(r.values == v);
    CHECK(run_stats(std::vector<double>{0.5, 0.5, 0.5}).std == 0.0);
    auto w = v;
    std::reverse(w.begin(), w.end());
    CHECK(run_stats(w).mean == doctest::Approx(r.mean).epsilon(1e-15));
    CHECK(run_stats(w).std == doctest::Approx(r.std).epsilon(1e-12));
    CHECK_THROWS_AS(run_stats(std::vector<double>{1.0}), std::invalid_argument);
}

TEST_CASE("expert agreement") {
    Tensor images({6, 1, 4, 4});
    RngStream rng(7, 0);
    rng.fill_normal<float>(images.data());
    Predictor always = [](const Tensor& x) { return std::vector<int>(static_cast<std::size_t>(x.dim(0)), 1); };
    Predictor never = [](const Tensor& x) { return std::vector<int>(static_cast<std::size_t>(x.dim(0)), 0); };
    CHECK(expert_agreement(always, images, 1, {1, 4, 4}) == 1.0);
    CHECK(expert_agreement(never, images, 1, {1, 4, 4}) == 0.0);
    CHECK_THROWS_AS(expert_agreement(always, images, 1, {1, 8, 8}), ShapeError);
    CHECK_THROWS_AS(expert_agreement(always, Tensor({0}), 1, {}), std::invalid_argument);

    // A threshold expert scored on real class-1 images: agreement equals its recall there.
    Predictor bright = [](const Tensor& x) {
        std::vector<int> out;
        const auto per = static_cast<std::size_t>(x.size() / x.dim(0));
        for (std::int64_t i = 0; i < x.dim(0); ++i) {
            double s = 0;
            for (std::size_t j = 0; j < per; ++j) s += x[static_cast<std::size_t>(i) * per + j];
            out.push_back(s > 0 ? 1 : 0);
        }
        return out;
    };
    Tensor real({40, 1, 4, 4});
    rng.fill_normal<float>(real.data());
    for (auto& v : real.storage()) v += 0.2f;
    const auto pred = bright(real);
    const std::vector<int> labels(40, 1);
    const auto m = classification_metrics(pred, labels, 1);
    CHECK(expert_agreement(bright, real, 1, {1, 4, 4}) == m.recall);
}

} // TEST_SUITE
