// Brute-force reference implementations used only by the tests. They are
// written independently of the library code they check.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

namespace oracle {

// Dual soft-margin SVM by projected gradient ascent. The projection onto
// {0 <= a_i <= C_i, sum y_i a_i = 0} bisects the multiplier of the
// equality constraint.
inline std::vector<double> project_box_hyperplane(const std::vector<double>& z, const std::vector<double>& y,
                                                  const std::vector<double>& C) {
    auto at = [&](double lam, std::vector<double>& a) {
        double s = 0.0;
        for (std::size_t i = 0; i < z.size(); ++i) {
            a[i] = std::clamp(z[i] - lam * y[i], 0.0, C[i]);
            s += y[i] * a[i];
        }
        return s;
    };
    std::vector<double> a(z.size());
    double lo = -1.0;
    double hi = 1.0;
    while (at(lo, a) < 0.0) lo *= 2.0;
    while (at(hi, a) > 0.0) hi *= 2.0;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (at(mid, a) > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    at(0.5 * (lo + hi), a);
    return a;
}

inline double dual_objective(const std::vector<double>& a, const std::vector<std::vector<double>>& Q) {
    double lin = 0.0;
    double quad = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        lin += a[i];
        for (std::size_t j = 0; j < a.size(); ++j) quad += a[i] * Q[i][j] * a[j];
    }
    return lin - 0.5 * quad;
}

// Returns the maximal dual objective.
inline double svm_dual_optimum(const std::vector<std::vector<double>>& K, const std::vector<double>& y,
                               const std::vector<double>& C, int iterations = 200000) {
    const std::size_t n = y.size();
    std::vector<std::vector<double>> Q(n, std::vector<double>(n));
    double L = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            Q[i][j] = y[i] * y[j] * K[i][j];
            row += std::abs(Q[i][j]);
        }
        L = std::max(L, row);
    }
    const double step = 1.0 / L;
    std::vector<double> a(n, 0.0);
    std::vector<double> prev = a;
    std::vector<double> v = a;
    std::vector<double> z(n);
    double t = 1.0;
    // FISTA with restarts keeps this cheap while staying a plain
    // first-order method.
    double best = 0.0;
    for (int it = 0; it < iterations; ++it) {
        for (std::size_t i = 0; i < n; ++i) {
            double g = 1.0;
            for (std::size_t j = 0; j < n; ++j) g -= Q[i][j] * v[j];
            z[i] = v[i] + step * g;
        }
        prev = a;
        a = project_box_hyperplane(z, y, C);
        const double obj = dual_objective(a, Q);
        const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
        if (obj < best) {
            t = 1.0;
            v = a;
        } else {
            for (std::size_t i = 0; i < n; ++i) v[i] = a[i] + (t - 1.0) / t_next * (a[i] - prev[i]);
            t = t_next;
        }
        best = std::max(best, obj);
    }
    return best;
}

// AP by walking every cutoff of the ranking: precision at each cutoff that
// adds a positive, averaged over all positives. Scores must be distinct.
inline double exhaustive_ap(const std::vector<double>& scores, const std::vector<std::uint8_t>& labels) {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] > scores[b]; });
    const double n_pos = static_cast<double>(std::count(labels.begin(), labels.end(), std::uint8_t{1}));
    double prev_recall = 0.0;
    double ap = 0.0;
    for (std::size_t k = 1; k <= order.size(); ++k) {
        double tp = 0.0;
        for (std::size_t i = 0; i < k; ++i) tp += labels[order[i]];
        const double precision = tp / static_cast<double>(k);
        const double recall = tp / n_pos;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    return ap;
}

// Central difference of f along every coordinate of x.
template <typename F>
std::vector<double> numeric_gradient(F&& f, std::vector<double>& x, double h = 1e-5) {
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double keep = x[i];
        x[i] = keep + h;
        const double up = f();
        x[i] = keep - h;
        const double down = f();
        x[i] = keep;
        g[i] = (up - down) / (2.0 * h);
    }
    return g;
}

}  // namespace oracle
