#include "psycode/learn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <unordered_map>

#include "psycode/common.hpp"
#include "psycode/log.hpp"
#include "psycode/random.hpp"

namespace psycode::learn {

namespace {

void require_both_classes(Labels y, const char* what) {
    std::size_t pos = 0;
    for (auto v : y) pos += v != 0 ? 1 : 0;
    if (pos == 0 || pos == y.size()) throw TrainingError(std::string(what) + ": both classes must be present");
}

double f_statistic(double n1, double n0, double sum1, double sum0, double ssw) {
    const double n = n1 + n0;
    const double m1 = sum1 / n1;
    const double m0 = sum0 / n0;
    const double m = (sum1 + sum0) / n;
    const double ssb = n1 * (m1 - m) * (m1 - m) + n0 * (m0 - m) * (m0 - m);
    if (!(ssb > 0.0)) return 0.0;
    if (!(ssw > 0.0) || n <= 2.0) return std::numeric_limits<double>::infinity();
    return ssb / (ssw / (n - 2.0));
}

}  // namespace

std::vector<double> anova_f_scores(const Matrix& X, Labels y) {
    if (y.size() != X.rows) throw std::invalid_argument("anova: label count mismatch");
    require_both_classes(y, "anova_f_select");
    std::vector<double> sum1(X.cols, 0.0);
    std::vector<double> sum0(X.cols, 0.0);
    double n1 = 0.0;
    double n0 = 0.0;
    for (std::size_t r = 0; r < X.rows; ++r) {
        auto& s = y[r] != 0 ? sum1 : sum0;
        (y[r] != 0 ? n1 : n0) += 1.0;
        const auto row = X.row(r);
        for (std::size_t c = 0; c < X.cols; ++c) s[c] += row[c];
    }
    std::vector<double> ssw(X.cols, 0.0);
    for (std::size_t r = 0; r < X.rows; ++r) {
        const auto row = X.row(r);
        for (std::size_t c = 0; c < X.cols; ++c) {
            const double m = y[r] != 0 ? sum1[c] / n1 : sum0[c] / n0;
            ssw[c] += (row[c] - m) * (row[c] - m);
        }
    }
    std::vector<double> f(X.cols);
    for (std::size_t c = 0; c < X.cols; ++c) f[c] = f_statistic(n1, n0, sum1[c], sum0[c], ssw[c]);
    return f;
}

std::vector<double> anova_f_scores(std::span<const SparseVector> rows, std::size_t n_cols, Labels y) {
    if (y.size() != rows.size()) throw std::invalid_argument("anova: label count mismatch");
    require_both_classes(y, "anova_f_select");
    std::vector<double> sum1(n_cols, 0.0);
    std::vector<double> sum0(n_cols, 0.0);
    std::vector<double> sq1(n_cols, 0.0);
    std::vector<double> sq0(n_cols, 0.0);
    double n1 = 0.0;
    double n0 = 0.0;
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const bool pos = y[r] != 0;
        (pos ? n1 : n0) += 1.0;
        auto& s = pos ? sum1 : sum0;
        auto& q = pos ? sq1 : sq0;
        for (std::size_t k = 0; k < rows[r].nnz(); ++k) {
            const auto c = rows[r].indices[k];
            if (c >= n_cols) throw std::invalid_argument("anova: sparse index out of range");
            s[c] += rows[r].values[k];
            q[c] += rows[r].values[k] * rows[r].values[k];
        }
    }
    std::vector<double> f(n_cols);
    for (std::size_t c = 0; c < n_cols; ++c) {
        const double ssw = std::max(0.0, sq1[c] - sum1[c] * sum1[c] / n1) + std::max(0.0, sq0[c] - sum0[c] * sum0[c] / n0);
        f[c] = f_statistic(n1, n0, sum1[c], sum0[c], ssw);
    }
    return f;
}

std::vector<std::size_t> anova_f_select(std::span<const double> f_scores, std::size_t k) {
    if (k == 0) throw std::invalid_argument("anova_f_select: k must be >= 1");
    std::vector<std::size_t> order(f_scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (k < order.size()) {
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return f_scores[a] > f_scores[b]; });
        order.resize(k);
        std::sort(order.begin(), order.end());
    }
    return order;
}

std::vector<std::size_t> anova_f_select(const Matrix& X, Labels y, std::size_t k) {
    return anova_f_select(anova_f_scores(X, y), k);
}

// ---------------------------------------------------------------------------

Standardizer fit_standardizer(const Matrix& X) {
    if (X.rows < 2) throw TrainingError("standardizer needs at least two rows");
    Standardizer s;
    s.mean.assign(X.cols, 0.0);
    s.sd.assign(X.cols, 0.0);
    for (std::size_t r = 0; r < X.rows; ++r) {
        const auto row = X.row(r);
        for (std::size_t c = 0; c < X.cols; ++c) s.mean[c] += row[c];
    }
    for (auto& m : s.mean) m /= static_cast<double>(X.rows);
    for (std::size_t r = 0; r < X.rows; ++r) {
        const auto row = X.row(r);
        for (std::size_t c = 0; c < X.cols; ++c) s.sd[c] += (row[c] - s.mean[c]) * (row[c] - s.mean[c]);
    }
    for (std::size_t c = 0; c < X.cols; ++c) {
        s.sd[c] = std::sqrt(s.sd[c] / static_cast<double>(X.rows));
        // Spread at rounding level counts as constant.
        if (s.sd[c] <= 1e-12 * std::max(1.0, std::abs(s.mean[c]))) s.sd[c] = 0.0;
    }
    return s;
}

void Standardizer::apply_in_place(std::span<double> row) const {
    for (std::size_t c = 0; c < row.size(); ++c) {
        if (sd[c] != 0.0) row[c] = (row[c] - mean[c]) / sd[c];
    }
}

Matrix Standardizer::apply(const Matrix& X) const {
    if (X.cols != mean.size()) throw std::invalid_argument("standardizer: column count mismatch");
    Matrix out = X;
    for (std::size_t r = 0; r < out.rows; ++r) apply_in_place(out.row(r));
    return out;
}

void Standardizer::hash_into(StateHasher& h) const { h.str("standardizer").f64s(mean).f64s(sd); }

// ---------------------------------------------------------------------------

std::array<double, 2> class_weights(Labels y, ClassWeight mode) {
    if (mode == ClassWeight::none) return {1.0, 1.0};
    double pos = 0.0;
    for (auto v : y) pos += v != 0 ? 1.0 : 0.0;
    const double n = static_cast<double>(y.size());
    const double neg = n - pos;
    return {neg > 0.0 ? n / (2.0 * neg) : 1.0, pos > 0.0 ? n / (2.0 * pos) : 1.0};
}

std::vector<double> per_sample_c(Labels y, double C, ClassWeight mode, std::span<const double> sample_weight) {
    if (!sample_weight.empty() && sample_weight.size() != y.size()) {
        throw std::invalid_argument("sample_weight size mismatch");
    }
    const auto cw = class_weights(y, mode);
    std::vector<double> c(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
        c[i] = C * cw[y[i] != 0 ? 1 : 0] * (sample_weight.empty() ? 1.0 : sample_weight[i]);
    }
    return c;
}

double LinearSvmModel::decision(std::span<const double> x) const {
    double f = bias;
    for (std::size_t k = 0; k < weights.size(); ++k) f += weights[k] * x[k];
    return f;
}

void LinearSvmModel::hash_into(StateHasher& h) const {
    h.str("linear_svm").f64s(weights).f64(bias).f64(C).f64(class_weight[0]).f64(class_weight[1]);
}

namespace {

struct LinearEval {
    double objective = 0.0;
    std::vector<double> grad_w;
    double grad_b = 0.0;
};

// Objective and (optionally) gradient at (w, b).
LinearEval eval_linear(const Matrix& X, Labels y, std::span<const double> c, std::span<const double> w, double b,
                       bool with_grad) {
    LinearEval e;
    double reg = 0.0;
    for (double v : w) reg += v * v;
    e.objective = 0.5 * reg;
    if (with_grad) {
        e.grad_w.assign(w.begin(), w.end());
        e.grad_b = 0.0;
    }
    for (std::size_t i = 0; i < X.rows; ++i) {
        const auto row = X.row(i);
        double f = b;
        for (std::size_t k = 0; k < X.cols; ++k) f += w[k] * row[k];
        const double yi = y[i] != 0 ? 1.0 : -1.0;
        const double margin = 1.0 - yi * f;
        if (margin <= 0.0) continue;
        e.objective += c[i] * margin * margin;
        if (with_grad) {
            const double coef = -2.0 * c[i] * margin * yi;
            for (std::size_t k = 0; k < X.cols; ++k) e.grad_w[k] += coef * row[k];
            e.grad_b += coef;
        }
    }
    return e;
}

}  // namespace

double linear_svm_objective(const Matrix& X, Labels y, std::span<const double> c, std::span<const double> w,
                            double b) {
    return eval_linear(X, y, c, w, b, false).objective;
}

LinearSvmModel train_linear_svm(const Matrix& X, Labels y, const LinearSvmOptions& options,
                                std::span<const double> sample_weight) {
    if (y.size() != X.rows) throw std::invalid_argument("train_linear_svm: label count mismatch");
    require_both_classes(y, "train_linear_svm");
    for (double v : X.data) {
        if (!std::isfinite(v)) throw TrainingError("train_linear_svm: non-finite feature value");
    }
    const auto c = per_sample_c(y, options.C, options.class_weight, sample_weight);
    LinearSvmModel model;
    model.C = options.C;
    model.class_weight = class_weights(y, options.class_weight);
    model.weights.assign(X.cols, 0.0);
    model.bias = 0.0;

    LinearEval cur = eval_linear(X, y, c, model.weights, model.bias, true);
    double step = 1.0;
    std::vector<double> prev_w;
    std::vector<double> prev_gw;
    double prev_b = 0.0;
    double prev_gb = 0.0;
    std::vector<double> trial_w(X.cols);
    std::size_t it = 0;
    for (; it < options.max_iterations; ++it) {
        double gnorm2 = cur.grad_b * cur.grad_b;
        for (double g : cur.grad_w) gnorm2 += g * g;
        if (gnorm2 == 0.0) break;
        // Barzilai-Borwein guess for the first trial step.
        if (!prev_w.empty()) {
            double sy = (model.bias - prev_b) * (cur.grad_b - prev_gb);
            double ss = (model.bias - prev_b) * (model.bias - prev_b);
            for (std::size_t k = 0; k < X.cols; ++k) {
                const double s = model.weights[k] - prev_w[k];
                sy += s * (cur.grad_w[k] - prev_gw[k]);
                ss += s * s;
            }
            if (sy > 0.0 && ss > 0.0) step = ss / sy;
        }
        // Armijo backtracking.
        LinearEval next;
        double trial_b = 0.0;
        bool accepted = false;
        for (int bt = 0; bt < 60; ++bt) {
            for (std::size_t k = 0; k < X.cols; ++k) trial_w[k] = model.weights[k] - step * cur.grad_w[k];
            trial_b = model.bias - step * cur.grad_b;
            next = eval_linear(X, y, c, trial_w, trial_b, false);
            if (next.objective <= cur.objective - 1e-4 * step * gnorm2) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) break;
        prev_w = model.weights;
        prev_gw = cur.grad_w;
        prev_b = model.bias;
        prev_gb = cur.grad_b;
        model.weights = trial_w;
        model.bias = trial_b;
        const double old = cur.objective;
        cur = eval_linear(X, y, c, model.weights, model.bias, true);
        if ((old - cur.objective) <= options.relative_tolerance * std::max(std::abs(old), 1e-300)) {
            ++it;
            break;
        }
    }
    model.iterations = it;
    model.objective = cur.objective;
    for (double v : model.weights) {
        if (!std::isfinite(v)) throw TrainingError("train_linear_svm: diverged");
    }
    return model;
}

// ---------------------------------------------------------------------------

double default_gamma(const Matrix& X) {
    if (X.rows == 0 || X.cols == 0) return 1.0;
    // d * var(X) read as the sum of per-column variances. Same value as the
    // all-entries variance when column means agree (standardized data), but
    // constant columns add exactly nothing.
    const double n = static_cast<double>(X.rows);
    double total = 0.0;
    for (std::size_t c = 0; c < X.cols; ++c) {
        double mu = 0.0;
        for (std::size_t r = 0; r < X.rows; ++r) mu += X(r, c);
        mu /= n;
        double var = 0.0;
        for (std::size_t r = 0; r < X.rows; ++r) var += (X(r, c) - mu) * (X(r, c) - mu);
        total += var / n;
    }
    if (!(total > 0.0)) return 1.0;
    return 1.0 / total;
}

namespace {

double rbf(std::span<const double> a, std::span<const double> b, double gamma) {
    double d2 = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        const double d = a[k] - b[k];
        d2 += d * d;
    }
    return std::exp(-gamma * d2);
}

}  // namespace

double RbfSvmModel::decision(std::span<const double> x) const {
    double f = bias;
    for (std::size_t i = 0; i < dual_coef.size(); ++i) f += dual_coef[i] * rbf(support_vectors.row(i), x, gamma);
    return f;
}

void RbfSvmModel::hash_into(StateHasher& h) const {
    h.str("rbf_svm").u64(support_vectors.rows).u64(support_vectors.cols).f64s(support_vectors.data);
    h.f64s(dual_coef).f64(bias).f64(gamma).f64(C).f64(class_weight[0]).f64(class_weight[1]);
}

SmoResult train_rbf_svm(const Matrix& X, Labels y, const RbfSvmOptions& options) {
    if (y.size() != X.rows) throw std::invalid_argument("train_rbf_svm: label count mismatch");
    require_both_classes(y, "train_rbf_svm");
    for (double v : X.data) {
        if (!std::isfinite(v)) throw TrainingError("train_rbf_svm: non-finite feature value");
    }
    const std::size_t n = X.rows;
    const double gamma = options.gamma.value_or(default_gamma(X));
    const auto upper = per_sample_c(y, options.C, options.class_weight);
    std::vector<double> ys(n);
    for (std::size_t i = 0; i < n; ++i) ys[i] = y[i] != 0 ? 1.0 : -1.0;

    // Full kernel via squared norms and dot products.
    std::vector<double> sq(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (double v : X.row(i)) sq[i] += v * v;
    }
    std::vector<double> K(n * n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto xi = X.row(i);
        K[i * n + i] = 1.0;
        for (std::size_t j = i + 1; j < n; ++j) {
            const auto xj = X.row(j);
            double dot = 0.0;
            for (std::size_t k = 0; k < X.cols; ++k) dot += xi[k] * xj[k];
            const double d2 = std::max(0.0, sq[i] + sq[j] - 2.0 * dot);
            K[i * n + j] = K[j * n + i] = std::exp(-gamma * d2);
        }
    }
    auto Q = [&](std::size_t i, std::size_t j) { return ys[i] * ys[j] * K[i * n + j]; };

    std::vector<double> alpha(n, 0.0);
    std::vector<double> G(n, -1.0);  // gradient of 1/2 a'Qa - e'a
    constexpr double kTau = 1e-12;
    auto in_up = [&](std::size_t t) { return ys[t] > 0 ? alpha[t] < upper[t] : alpha[t] > 0.0; };
    auto in_low = [&](std::size_t t) { return ys[t] > 0 ? alpha[t] > 0.0 : alpha[t] < upper[t]; };

    SmoResult result;
    std::size_t iter = 0;
    double violation = 0.0;
    for (; iter < options.max_iterations; ++iter) {
        double gmax = -std::numeric_limits<double>::infinity();
        double gmin = std::numeric_limits<double>::infinity();
        std::size_t i = n;
        std::size_t j = n;
        for (std::size_t t = 0; t < n; ++t) {
            const double v = -ys[t] * G[t];
            if (in_up(t) && v > gmax) {
                gmax = v;
                i = t;
            }
            if (in_low(t) && v < gmin) {
                gmin = v;
                j = t;
            }
        }
        violation = (i == n || j == n) ? 0.0 : gmax - gmin;
        if (violation < options.tolerance) break;

        const double old_i = alpha[i];
        const double old_j = alpha[j];
        const double Ci = upper[i];
        const double Cj = upper[j];
        if (ys[i] != ys[j]) {
            double quad = K[i * n + i] + K[j * n + j] + 2.0 * Q(i, j);
            if (quad <= 0.0) quad = kTau;
            const double delta = (-G[i] - G[j]) / quad;
            const double diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if (diff > 0.0) {
                if (alpha[j] < 0.0) {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if (alpha[i] < 0.0) {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if (diff > Ci - Cj) {
                if (alpha[i] > Ci) {
                    alpha[i] = Ci;
                    alpha[j] = Ci - diff;
                }
            } else if (alpha[j] > Cj) {
                alpha[j] = Cj;
                alpha[i] = Cj + diff;
            }
        } else {
            double quad = K[i * n + i] + K[j * n + j] - 2.0 * Q(i, j);
            if (quad <= 0.0) quad = kTau;
            const double delta = (G[i] - G[j]) / quad;
            const double sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if (sum > Ci) {
                if (alpha[i] > Ci) {
                    alpha[i] = Ci;
                    alpha[j] = sum - Ci;
                }
            } else if (alpha[j] < 0.0) {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if (sum > Cj) {
                if (alpha[j] > Cj) {
                    alpha[j] = Cj;
                    alpha[i] = sum - Cj;
                }
            } else if (alpha[i] < 0.0) {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        const double di = alpha[i] - old_i;
        const double dj = alpha[j] - old_j;
        for (std::size_t t = 0; t < n; ++t) G[t] += Q(t, i) * di + Q(t, j) * dj;
    }
    if (iter == options.max_iterations) log_warning("SMO reached the iteration limit");

    // Offset from free variables, else midpoint of the feasible interval.
    double ub = std::numeric_limits<double>::infinity();
    double lb = -std::numeric_limits<double>::infinity();
    double free_sum = 0.0;
    std::size_t n_free = 0;
    for (std::size_t t = 0; t < n; ++t) {
        const double yg = ys[t] * G[t];
        if (alpha[t] >= upper[t]) {
            if (ys[t] < 0) {
                ub = std::min(ub, yg);
            } else {
                lb = std::max(lb, yg);
            }
        } else if (alpha[t] <= 0.0) {
            if (ys[t] > 0) {
                ub = std::min(ub, yg);
            } else {
                lb = std::max(lb, yg);
            }
        } else {
            free_sum += yg;
            ++n_free;
        }
    }
    const double rho = n_free > 0 ? free_sum / static_cast<double>(n_free) : (ub + lb) / 2.0;

    double dual = 0.0;
    for (std::size_t t = 0; t < n; ++t) dual += alpha[t] - 0.5 * alpha[t] * (G[t] + 1.0);

    RbfSvmModel& m = result.model;
    m.gamma = gamma;
    m.C = options.C;
    m.class_weight = class_weights(y, options.class_weight);
    m.bias = -rho;
    std::vector<std::size_t> sv;
    for (std::size_t t = 0; t < n; ++t) {
        if (alpha[t] > 0.0) sv.push_back(t);
    }
    m.support_vectors = X.select_rows(sv);
    for (auto t : sv) m.dual_coef.push_back(alpha[t] * ys[t]);
    result.alpha = std::move(alpha);
    result.upper = upper;
    result.dual_objective = dual;
    result.max_violation = violation;
    result.iterations = iter;
    return result;
}

double kkt_residual(const SmoResult& result, const Matrix& X, Labels y) {
    double worst = 0.0;
    for (std::size_t i = 0; i < X.rows; ++i) {
        const double yf = (y[i] != 0 ? 1.0 : -1.0) * result.model.decision(X.row(i));
        const double a = result.alpha[i];
        double r = 0.0;
        if (a <= 0.0) {
            r = std::max(0.0, 1.0 - yf);
        } else if (a >= result.upper[i]) {
            r = std::max(0.0, yf - 1.0);
        } else {
            r = std::abs(yf - 1.0);
        }
        worst = std::max(worst, r);
    }
    return worst;
}

// ---------------------------------------------------------------------------

namespace {
constexpr double kPlattRidge = 1e-3;
}

double PlattCalibration::probability(double score) const {
    const double z = A * score + B;
    double p = 0.0;
    if (z >= 0.0) {
        p = 1.0 / (1.0 + std::exp(-z));
    } else {
        const double e = std::exp(z);
        p = e / (1.0 + e);
    }
    // Keep strictly inside (0, 1) so downstream logs stay finite.
    return std::clamp(p, 1e-12, 1.0 - 1e-12);
}

void PlattCalibration::hash_into(StateHasher& h) const { h.str("platt").f64(A).f64(B).u64(fallback ? 1 : 0); }

PlattCalibration platt_calibrate(std::span<const double> scores, Labels y) {
    if (scores.size() != y.size()) throw std::invalid_argument("platt_calibrate: size mismatch");
    double prior1 = 0.0;
    for (auto v : y) prior1 += v != 0 ? 1.0 : 0.0;
    const double prior0 = static_cast<double>(y.size()) - prior1;
    PlattCalibration cal;
    if (prior1 == 0.0 || prior0 == 0.0) {
        log_warning("calibration data has a single class; using the prior probability");
        const double p = (prior1 + 1.0) / (prior1 + prior0 + 2.0);
        cal.A = 0.0;
        cal.B = std::log(p / (1.0 - p));
        cal.fallback = true;
        return cal;
    }
    // Newton iterations with backtracking on the likelihood plus a small ridge
    // on the slope (keeps separated data finite), parameterized as
    // P(y=1|s) = 1 / (1 + exp(a s + b)).
    std::vector<double> t(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) t[i] = y[i] != 0 ? 1.0 : 0.0;
    double a = 0.0;
    double b = std::log((prior0 + 1.0) / (prior1 + 1.0));
    auto objective = [&](double aa, double bb) {
        double f = 0.5 * kPlattRidge * aa * aa;
        for (std::size_t i = 0; i < t.size(); ++i) {
            const double z = scores[i] * aa + bb;
            f += z >= 0.0 ? t[i] * z + std::log1p(std::exp(-z)) : (t[i] - 1.0) * z + std::log1p(std::exp(z));
        }
        return f;
    };
    double fval = objective(a, b);
    constexpr double kSigma = 1e-12;
    for (int iter = 0; iter < 100; ++iter) {
        double h11 = kSigma + kPlattRidge;
        double h22 = kSigma;
        double h21 = 0.0;
        double g1 = kPlattRidge * a;
        double g2 = 0.0;
        for (std::size_t i = 0; i < t.size(); ++i) {
            const double z = scores[i] * a + b;
            double p = 0.0;
            double q = 0.0;
            if (z >= 0.0) {
                p = std::exp(-z) / (1.0 + std::exp(-z));
                q = 1.0 / (1.0 + std::exp(-z));
            } else {
                p = 1.0 / (1.0 + std::exp(z));
                q = std::exp(z) / (1.0 + std::exp(z));
            }
            const double d2 = p * q;
            h11 += scores[i] * scores[i] * d2;
            h22 += d2;
            h21 += scores[i] * d2;
            const double d1 = t[i] - p;
            g1 += scores[i] * d1;
            g2 += d1;
        }
        if (std::abs(g1) < 1e-5 && std::abs(g2) < 1e-5) break;
        const double det = h11 * h22 - h21 * h21;
        const double da = -(h22 * g1 - h21 * g2) / det;
        const double db = -(-h21 * g1 + h11 * g2) / det;
        const double gd = g1 * da + g2 * db;
        double step = 1.0;
        while (step >= 1e-10) {
            const double na = a + step * da;
            const double nb = b + step * db;
            const double nf = objective(na, nb);
            if (nf < fval + 1e-4 * step * gd) {
                a = na;
                b = nb;
                fval = nf;
                break;
            }
            step /= 2.0;
        }
        if (step < 1e-10) break;
    }
    cal.A = -a;
    cal.B = -b;
    return cal;
}

// ---------------------------------------------------------------------------

double SvmModel::decision(std::span<const double> x) const {
    return std::visit([&](const auto& m) { return m.decision(x); }, model);
}

std::vector<double> SvmModel::decisions(const Matrix& X) const {
    std::vector<double> out(X.rows);
    for (std::size_t r = 0; r < X.rows; ++r) out[r] = decision(X.row(r));
    return out;
}

void SvmModel::hash_into(StateHasher& h) const {
    std::visit([&](const auto& m) { m.hash_into(h); }, model);
}

SvmModel fit_svm(const Matrix& X, Labels y, const SvmParams& params) {
    if (params.kind == SvmKind::linear) {
        LinearSvmOptions o;
        o.C = params.C;
        o.class_weight = params.class_weight;
        return {train_linear_svm(X, y, o)};
    }
    RbfSvmOptions o;
    o.C = params.C;
    o.gamma = params.gamma;
    o.class_weight = params.class_weight;
    o.tolerance = params.tolerance;
    return {train_rbf_svm(X, y, o).model};
}

void CalibratedSvm::hash_into(StateHasher& h) const {
    svm.hash_into(h);
    platt.hash_into(h);
    h.f64s(training_probabilities);
}

CalibratedSvm fit_calibrated_svm(const Matrix& X, Labels y, const SvmParams& params, std::uint64_t seed,
                                 std::span<const std::size_t> groups, std::size_t inner_folds) {
    if (!groups.empty() && groups.size() != X.rows) throw std::invalid_argument("groups size mismatch");
    CalibratedSvm out;
    out.svm = fit_svm(X, y, params);

    // Inner fold of every row: shuffled groups dealt round-robin.
    std::vector<std::size_t> group_of(X.rows);
    for (std::size_t r = 0; r < X.rows; ++r) group_of[r] = groups.empty() ? r : groups[r];
    std::vector<std::size_t> distinct = group_of;
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    Rng rng(seed);
    rng.shuffle(distinct);
    std::unordered_map<std::size_t, std::size_t> fold_of_group;
    for (std::size_t k = 0; k < distinct.size(); ++k) fold_of_group[distinct[k]] = k % inner_folds;

    std::vector<double> oof(X.rows, std::numeric_limits<double>::quiet_NaN());
    for (std::size_t f = 0; f < inner_folds; ++f) {
        std::vector<std::size_t> fit_rows;
        std::vector<std::size_t> held_rows;
        for (std::size_t r = 0; r < X.rows; ++r) {
            (fold_of_group.at(group_of[r]) == f ? held_rows : fit_rows).push_back(r);
        }
        if (held_rows.empty()) continue;
        std::vector<std::uint8_t> fit_y;
        for (auto r : fit_rows) fit_y.push_back(y[r]);
        const auto pos = std::count(fit_y.begin(), fit_y.end(), std::uint8_t{1});
        if (pos == 0 || pos == static_cast<std::ptrdiff_t>(fit_y.size())) continue;
        const auto inner = fit_svm(X.select_rows(fit_rows), fit_y, params);
        for (auto r : held_rows) oof[r] = inner.decision(X.row(r));
    }
    std::vector<double> cal_scores;
    std::vector<std::uint8_t> cal_y;
    for (std::size_t r = 0; r < X.rows; ++r) {
        if (std::isnan(oof[r])) continue;
        cal_scores.push_back(oof[r]);
        cal_y.push_back(y[r]);
    }
    out.platt = platt_calibrate(cal_scores, cal_y);
    out.training_probabilities.resize(X.rows);
    for (std::size_t r = 0; r < X.rows; ++r) {
        const double s = std::isnan(oof[r]) ? out.svm.decision(X.row(r)) : oof[r];
        out.training_probabilities[r] = out.platt.probability(s);
    }
    return out;
}

}  // namespace psycode::learn
