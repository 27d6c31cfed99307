#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <variant>
#include <vector>

#include "psycode/matrix.hpp"
#include "psycode/metrics.hpp"
#include "psycode/sparse.hpp"
#include "psycode/state_hash.hpp"

namespace psycode::learn {

using Labels = std::span<const std::uint8_t>;

// ---------------------------------------------------------------------------
// Univariate feature selection

/// One-way ANOVA F statistic of every column between the two label groups.
/// A column with no between-group spread scores 0; one with zero
/// within-group spread but different means scores +inf.
std::vector<double> anova_f_scores(const Matrix& X, Labels y);
std::vector<double> anova_f_scores(std::span<const SparseVector> rows, std::size_t n_cols, Labels y);

/// Columns of the k highest F scores (ties to the lower column index),
/// returned in increasing column order. All columns when k >= n_cols.
std::vector<std::size_t> anova_f_select(std::span<const double> f_scores, std::size_t k);
std::vector<std::size_t> anova_f_select(const Matrix& X, Labels y, std::size_t k = 1300);

// ---------------------------------------------------------------------------
// Standardization

/// Per-column z-scoring fitted on training rows. Columns with zero spread
/// are passed through untouched.
struct Standardizer {
    std::vector<double> mean;
    std::vector<double> sd;  // population SD; 0 marks a pass-through column

    Matrix apply(const Matrix& X) const;
    void apply_in_place(std::span<double> row) const;
    void hash_into(StateHasher& h) const;
};

Standardizer fit_standardizer(const Matrix& X_train);

// ---------------------------------------------------------------------------
// SVMs

enum class ClassWeight : std::uint8_t { none, balanced };

/// Per-class multipliers of C: balanced gives n / (2 n_class).
std::array<double, 2> class_weights(Labels y, ClassWeight mode);

struct LinearSvmModel {
    std::vector<double> weights;
    double bias = 0.0;
    double C = 1.0;
    std::array<double, 2> class_weight{1.0, 1.0};  // [negative, positive]
    std::size_t iterations = 0;
    double objective = 0.0;

    double decision(std::span<const double> x) const;
    void hash_into(StateHasher& h) const;
};

struct LinearSvmOptions {
    double C = 1.0;
    ClassWeight class_weight = ClassWeight::balanced;
    std::size_t max_iterations = 5000;
    double relative_tolerance = 1e-8;
};

/// Primal objective 1/2 |w|^2 + sum_i C_i max(0, 1 - y_i (w.x_i + b))^2 with
/// y in {-1, +1} and C_i = C * class weight * sample weight.
double linear_svm_objective(const Matrix& X, Labels y, std::span<const double> per_sample_c,
                            std::span<const double> w, double b);

/// Full-batch gradient descent with backtracking line search on the primal.
LinearSvmModel train_linear_svm(const Matrix& X, Labels y, const LinearSvmOptions& options,
                                std::span<const double> sample_weight = {});

/// C_i for every row as used by train_linear_svm / train_rbf_svm.
std::vector<double> per_sample_c(Labels y, double C, ClassWeight mode, std::span<const double> sample_weight = {});

struct RbfSvmModel {
    Matrix support_vectors;
    std::vector<double> dual_coef;  // alpha_i * y_i
    double bias = 0.0;
    double gamma = 1.0;
    double C = 1.0;
    std::array<double, 2> class_weight{1.0, 1.0};

    double decision(std::span<const double> x) const;
    void hash_into(StateHasher& h) const;
};

struct RbfSvmOptions {
    double C = 1.0;
    std::optional<double> gamma;  // default_gamma(X) when unset
    ClassWeight class_weight = ClassWeight::balanced;
    double tolerance = 1e-3;
    std::size_t max_iterations = 10'000'000;
};

struct SmoResult {
    RbfSvmModel model;
    std::vector<double> alpha;  // one per training row
    std::vector<double> upper;  // C_i per training row
    double dual_objective = 0.0;  // sum alpha - 1/2 alpha' Q alpha
    double max_violation = 0.0;
    std::size_t iterations = 0;
};

/// 1 / (d * var(X)) with d * var(X) taken as the sum of per-column
/// variances; 1 when X has no spread.
double default_gamma(const Matrix& X);

/// Soft-margin dual with K(x, z) = exp(-gamma |x - z|^2) solved by SMO with
/// maximal-violating-pair selection.
SmoResult train_rbf_svm(const Matrix& X, Labels y, const RbfSvmOptions& options = {});

/// Largest per-sample KKT violation of a solution, measured on the decision
/// function over the training rows.
double kkt_residual(const SmoResult& result, const Matrix& X, Labels y);

// ---------------------------------------------------------------------------
// Probability calibration

struct PlattCalibration {
    double A = 0.0;
    double B = 0.0;
    bool fallback = false;  // constant prior probability

    double probability(double score) const;
    void hash_into(StateHasher& h) const;
};

/// Sigmoid sigma(A s + B) fitted by Newton iterations on the cross-entropy
/// with a small ridge penalty on A. Single-class input falls back to the
/// smoothed prior (A = 0) with a warning.
PlattCalibration platt_calibrate(std::span<const double> scores, Labels y);

// ---------------------------------------------------------------------------
// Wrapped classifiers

enum class SvmKind : std::uint8_t { linear, rbf };

struct SvmParams {
    SvmKind kind = SvmKind::rbf;
    double C = 1.0;
    std::optional<double> gamma;
    ClassWeight class_weight = ClassWeight::balanced;
    double tolerance = 1e-3;
};

struct SvmModel {
    std::variant<LinearSvmModel, RbfSvmModel> model;

    double decision(std::span<const double> x) const;
    std::vector<double> decisions(const Matrix& X) const;
    void hash_into(StateHasher& h) const;
};

SvmModel fit_svm(const Matrix& X, Labels y, const SvmParams& params);

/// SVM plus a sigmoid calibrated on out-of-fold decision scores from an
/// internal cross-fitting split of the training rows.
struct CalibratedSvm {
    SvmModel svm;
    PlattCalibration platt;
    /// Calibrated out-of-fold probability for each training row (in-sample
    /// where an inner fold could not be fitted).
    std::vector<double> training_probabilities;

    double probability(std::span<const double> x) const { return platt.probability(svm.decision(x)); }
    void hash_into(StateHasher& h) const;
};

/// `groups` (optional, one id per row) keeps rows of one group in the same
/// inner fold.
CalibratedSvm fit_calibrated_svm(const Matrix& X, Labels y, const SvmParams& params, std::uint64_t seed,
                                 std::span<const std::size_t> groups = {}, std::size_t inner_folds = 3);

}  // namespace psycode::learn
