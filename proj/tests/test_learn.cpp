#include <doctest.h>

#include <cmath>
#include <limits>
#include <numeric>

#include "oracles.hpp"
#include "psycode/common.hpp"
#include "psycode/learn.hpp"
#include "psycode/random.hpp"

using namespace psycode;
using namespace psycode::learn;

namespace {

Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c) {
    Matrix m(r, c);
    for (auto& v : m.data) v = rng.normal();
    return m;
}

std::vector<std::uint8_t> random_labels(Rng& rng, std::size_t n) {
    std::vector<std::uint8_t> y(n);
    for (auto& v : y) v = rng.bernoulli(0.4) ? 1 : 0;
    y[0] = 1;
    y[1] = 0;
    return y;
}

}  // namespace

TEST_CASE("anova F matches the hand computation") {
    // Groups {1,2,3} and {4,5,6}: SSB = 13.5, SSW = 4, F = 13.5 / (4 / 4).
    Matrix X = Matrix::from_rows({{1, 7}, {2, 7}, {3, 7}, {4, 7}, {5, 7}, {6, 7}});
    std::vector<std::uint8_t> y{0, 0, 0, 1, 1, 1};
    auto f = anova_f_scores(X, y);
    CHECK(f[0] == doctest::Approx(13.5));
    CHECK(f[1] == 0.0);

    Matrix sep = Matrix::from_rows({{0}, {0}, {1}, {1}});
    CHECK(std::isinf(anova_f_scores(sep, std::vector<std::uint8_t>{0, 0, 1, 1})[0]));
}

TEST_CASE("sparse and dense anova agree") {
    Rng rng(3);
    Matrix X(40, 6);
    std::vector<SparseVector> rows;
    for (std::size_t r = 0; r < X.rows; ++r) {
        for (std::size_t c = 0; c < X.cols; ++c) X(r, c) = rng.bernoulli(0.3) ? static_cast<double>(rng.below(4)) : 0.0;
        rows.push_back(SparseVector::from_dense(X.row(r)));
    }
    auto y = random_labels(rng, X.rows);
    auto dense = anova_f_scores(X, y);
    auto sparse = anova_f_scores(rows, X.cols, y);
    for (std::size_t c = 0; c < X.cols; ++c) {
        if (std::isinf(dense[c])) {
            CHECK(std::isinf(sparse[c]));
        } else {
            CHECK(sparse[c] == doctest::Approx(dense[c]).epsilon(1e-9));
        }
    }
}

TEST_CASE("anova selection keeps the top k in column order, ties to lower index") {
    std::vector<double> f{1.0, 5.0, 3.0, 5.0, 0.0};
    CHECK(anova_f_select(f, 2) == std::vector<std::size_t>{1, 3});
    CHECK(anova_f_select(f, 3) == std::vector<std::size_t>{1, 2, 3});
    std::vector<double> tied{2.0, 2.0, 2.0};
    CHECK(anova_f_select(tied, 1) == std::vector<std::size_t>{0});
    CHECK(anova_f_select(f, 10).size() == 5);
    CHECK_THROWS(anova_f_select(f, 0));
}

TEST_CASE("anova rejects single-class labels") {
    Matrix X(3, 1, 1.0);
    CHECK_THROWS_AS(anova_f_scores(X, std::vector<std::uint8_t>{1, 1, 1}), TrainingError);
}

TEST_CASE("standardizer centers and scales train columns, passes constants through") {
    Matrix X = Matrix::from_rows({{1, 5}, {3, 5}, {5, 5}});
    auto s = fit_standardizer(X);
    auto Z = s.apply(X);
    CHECK(Z(0, 0) == doctest::Approx(-std::sqrt(1.5)));
    CHECK(Z(1, 0) == doctest::Approx(0.0));
    CHECK(Z(2, 1) == 5.0);
    CHECK(s.sd[1] == 0.0);
}

TEST_CASE("balanced class weights") {
    std::vector<std::uint8_t> y{1, 0, 0, 0};
    auto w = class_weights(y, ClassWeight::balanced);
    CHECK(w[0] == doctest::Approx(4.0 / 6.0));
    CHECK(w[1] == doctest::Approx(2.0));
}

TEST_CASE("linear svm solution beats random nearby perturbations") {
    Rng rng(11);
    for (int rep = 0; rep < 5; ++rep) {
        auto X = random_matrix(rng, 30, 4);
        auto y = random_labels(rng, 30);
        LinearSvmOptions o;
        o.C = 0.5;
        auto m = train_linear_svm(X, y, o);
        auto c = per_sample_c(y, o.C, o.class_weight);
        const double at = linear_svm_objective(X, y, c, m.weights, m.bias);
        CHECK(at == doctest::Approx(m.objective));
        for (int probe = 0; probe < 100; ++probe) {
            std::vector<double> w = m.weights;
            std::vector<double> d(w.size() + 1);
            double norm = 0.0;
            for (auto& v : d) {
                v = rng.normal();
                norm += v * v;
            }
            norm = std::sqrt(norm);
            for (std::size_t k = 0; k < w.size(); ++k) w[k] += 1e-3 * d[k] / norm;
            const double b = m.bias + 1e-3 * d.back() / norm;
            CHECK(at <= linear_svm_objective(X, y, c, w, b));
        }
    }
}

TEST_CASE("linear svm separates two points") {
    Matrix X = Matrix::from_rows({{-1.0}, {1.0}});
    std::vector<std::uint8_t> y{0, 1};
    LinearSvmOptions o;
    o.C = 100.0;
    auto m = train_linear_svm(X, y, o);
    CHECK(m.weights[0] > 0.0);
    CHECK(m.decision(X.row(0)) < 0.0);
    CHECK(m.decision(X.row(1)) > 0.0);
}

TEST_CASE("linear svm: duplicated samples at half weight give the same model") {
    Rng rng(5);
    auto X = random_matrix(rng, 20, 3);
    auto y = random_labels(rng, 20);
    auto base = train_linear_svm(X, y, {});

    std::vector<std::size_t> twice;
    for (std::size_t i = 0; i < X.rows; ++i) twice.insert(twice.end(), {i, i});
    auto X2 = X.select_rows(twice);
    std::vector<std::uint8_t> y2;
    for (auto i : twice) y2.push_back(y[i]);
    std::vector<double> half(X2.rows, 0.5);
    auto dup = train_linear_svm(X2, y2, {}, half);
    for (std::size_t k = 0; k < 3; ++k) CHECK(dup.weights[k] == doctest::Approx(base.weights[k]).epsilon(1e-4));
    CHECK(dup.bias == doctest::Approx(base.bias).epsilon(1e-4));
}

TEST_CASE("linear svm: a constant zero feature gets weight 0") {
    Rng rng(8);
    auto X = random_matrix(rng, 25, 3);
    for (std::size_t r = 0; r < X.rows; ++r) X(r, 1) = 0.0;
    auto y = random_labels(rng, 25);
    auto m = train_linear_svm(X, y, {});
    CHECK(std::abs(m.weights[1]) < 1e-12);
}

TEST_CASE("SMO matches the projected-gradient dual oracle") {
    Rng rng(21);
    for (int rep = 0; rep < 10; ++rep) {
        const std::size_t n = 4 + rng.below(9);
        auto X = random_matrix(rng, n, 2);
        auto y = random_labels(rng, n);
        RbfSvmOptions o;
        o.C = 0.3 + 2.0 * rng.uniform();
        o.gamma = 0.5;
        o.tolerance = 1e-6;
        auto res = train_rbf_svm(X, y, o);

        std::vector<std::vector<double>> K(n, std::vector<double>(n));
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                double d2 = 0.0;
                for (std::size_t k = 0; k < 2; ++k) d2 += (X(i, k) - X(j, k)) * (X(i, k) - X(j, k));
                K[i][j] = std::exp(-0.5 * d2);
            }
        }
        std::vector<double> ys(n);
        for (std::size_t i = 0; i < n; ++i) ys[i] = y[i] ? 1.0 : -1.0;
        const double best = oracle::svm_dual_optimum(K, ys, res.upper, 20000);
        CHECK(res.dual_objective == doctest::Approx(best).epsilon(1e-6).scale(1.0));
        CHECK(kkt_residual(res, X, y) <= 1e-3);
    }
}

TEST_CASE("SMO solution respects the box and the equality constraint") {
    Rng rng(2);
    auto X = random_matrix(rng, 30, 3);
    auto y = random_labels(rng, 30);
    auto res = train_rbf_svm(X, y);
    double s = 0.0;
    for (std::size_t i = 0; i < X.rows; ++i) {
        CHECK(res.alpha[i] >= 0.0);
        CHECK(res.alpha[i] <= res.upper[i] + 1e-12);
        s += (y[i] ? 1.0 : -1.0) * res.alpha[i];
    }
    CHECK(std::abs(s) < 1e-9);
}

TEST_CASE("default gamma is 1 / (d var X)") {
    Matrix X = Matrix::from_rows({{0, 2}, {2, 0}});
    CHECK(default_gamma(X) == doctest::Approx(0.5));
    CHECK(default_gamma(Matrix(3, 2, 4.0)) == 1.0);
    // A constant column adds nothing.
    Rng rng(2);
    Matrix Y(40, 3);
    for (auto& v : Y.data) v = rng.normal();
    for (std::size_t r = 0; r < Y.rows; ++r) Y(r, 2) = 0.0;
    CHECK(default_gamma(Y) == default_gamma(Y.select_cols(std::vector<std::size_t>{0, 1})));
    // Zero-mean columns: matches 1 / (d * variance over all entries).
    const auto Z = fit_standardizer(Y.select_cols(std::vector<std::size_t>{0, 1})).apply(Y.select_cols(std::vector<std::size_t>{0, 1}));
    double ss = 0.0;
    for (double v : Z.data) ss += v * v;
    CHECK(default_gamma(Z) == doctest::Approx(1.0 / (2.0 * ss / static_cast<double>(Z.data.size()))).epsilon(1e-12));
}

TEST_CASE("platt scaling recovers a known sigmoid") {
    Rng rng(4);
    std::vector<double> s;
    std::vector<std::uint8_t> y;
    for (int i = 0; i < 20000; ++i) {
        const double x = rng.uniform(-4.0, 4.0);
        s.push_back(x);
        y.push_back(rng.bernoulli(1.0 / (1.0 + std::exp(-(1.5 * x - 0.5)))) ? 1 : 0);
    }
    auto p = platt_calibrate(s, y);
    CHECK(p.A == doctest::Approx(1.5).epsilon(0.05));
    CHECK(p.B == doctest::Approx(-0.5).epsilon(0.1));
    CHECK_FALSE(p.fallback);
    CHECK(p.probability(3.0) > p.probability(-3.0));
}

TEST_CASE("platt scaling falls back to the prior on one class") {
    std::vector<double> s{0.1, 0.2, 0.3};
    std::vector<std::uint8_t> y{0, 0, 0};
    auto p = platt_calibrate(s, y);
    CHECK(p.fallback);
    CHECK(p.A == 0.0);
    CHECK(p.probability(100.0) == doctest::Approx(0.2));
}

TEST_CASE("calibrated svm yields probabilities for every training row") {
    Rng rng(9);
    auto X = random_matrix(rng, 40, 3);
    std::vector<std::uint8_t> y(40);
    for (std::size_t i = 0; i < 40; ++i) {
        y[i] = X(i, 0) + 0.3 * rng.normal() > 0 ? 1 : 0;
    }
    auto cal = fit_calibrated_svm(X, y, {}, 7);
    REQUIRE(cal.training_probabilities.size() == 40);
    for (double p : cal.training_probabilities) CHECK((p >= 0.0 && p <= 1.0));
    std::vector<double> hi{2.0, 0.0, 0.0};
    std::vector<double> lo{-2.0, 0.0, 0.0};
    CHECK(cal.probability(hi) > cal.probability(lo));

    auto again = fit_calibrated_svm(X, y, {}, 7);
    CHECK(again.training_probabilities == cal.training_probabilities);
}

TEST_CASE("svm training rejects non-finite input") {
    Matrix X = Matrix::from_rows({{0.0}, {std::numeric_limits<double>::quiet_NaN()}});
    std::vector<std::uint8_t> y{0, 1};
    CHECK_THROWS_AS(train_rbf_svm(X, y), TrainingError);
    CHECK_THROWS_AS(train_linear_svm(X, y, {}), TrainingError);
}

TEST_CASE("rbf svm fits XOR") {
    Matrix X = Matrix::from_rows({{0, 0}, {1, 1}, {0, 1}, {1, 0}});
    std::vector<std::uint8_t> y{0, 0, 1, 1};
    RbfSvmOptions o;
    o.C = 10.0;
    auto res = train_rbf_svm(X, y, o);
    for (std::size_t i = 0; i < 4; ++i) CHECK((res.model.decision(X.row(i)) > 0.0) == (y[i] == 1));
}

TEST_CASE("platt on separated scores is confident on the calibration data") {
    std::vector<double> s;
    std::vector<std::uint8_t> y;
    for (int i = 0; i < 50; ++i) {
        s.push_back(1.0 + 0.1 * i);
        y.push_back(1);
        s.push_back(-1.0 - 0.1 * i);
        y.push_back(0);
    }
    auto p = platt_calibrate(s, y);
    CHECK(p.A > 0.0);
    for (std::size_t i = 0; i < s.size(); ++i) {
        const double prob = p.probability(s[i]);
        CHECK(prob > 0.0);
        CHECK(prob < 1.0);
        if (y[i]) CHECK(prob >= 0.99);
    }
}

TEST_CASE("anova scores are invariant to row permutation") {
    Rng rng(12);
    auto X = random_matrix(rng, 25, 5);
    auto y = random_labels(rng, 25);
    std::vector<std::size_t> perm(25);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    rng.shuffle(perm);
    std::vector<std::uint8_t> yp;
    for (auto i : perm) yp.push_back(y[i]);
    auto a = anova_f_scores(X, y);
    auto b = anova_f_scores(X.select_rows(perm), yp);
    for (std::size_t c = 0; c < 5; ++c) CHECK(b[c] == doctest::Approx(a[c]).epsilon(1e-12));
}

TEST_CASE("standardizer applies train statistics to held-out rows") {
    Matrix train = Matrix::from_rows({{0, 1}, {2, 3}, {4, 8}});
    Matrix test = Matrix::from_rows({{10, -1}});
    auto s = fit_standardizer(train);
    const double mu = 2.0;
    const double sd = std::sqrt(8.0 / 3.0);
    CHECK(s.apply(test)(0, 0) == doctest::Approx((10.0 - mu) / sd));
}
