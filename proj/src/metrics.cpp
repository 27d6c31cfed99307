#include "psycode/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace psycode {

std::optional<double> ranked_average_precision(std::span<const std::uint8_t> ranked_hits,
                                               std::size_t n_positive) {
    if (n_positive == 0) return std::nullopt;
    double ap = 0.0;
    std::size_t hits = 0;
    for (std::size_t k = 0; k < ranked_hits.size(); ++k) {
        if (ranked_hits[k] == 0) continue;
        ++hits;
        const double precision = static_cast<double>(hits) / static_cast<double>(k + 1);
        ap += precision / static_cast<double>(n_positive);
    }
    return ap;
}

std::vector<std::size_t> rank_by_score(std::span<const double> scores) {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    return order;
}

std::optional<double> average_precision(std::span<const double> scores, std::span<const std::uint8_t> labels) {
    if (scores.size() != labels.size()) throw std::invalid_argument("average_precision: size mismatch");
    const auto order = rank_by_score(scores);
    std::vector<std::uint8_t> hits(order.size());
    std::size_t positives = 0;
    for (std::size_t k = 0; k < order.size(); ++k) {
        hits[k] = labels[order[k]] != 0 ? 1 : 0;
        positives += hits[k];
    }
    return ranked_average_precision(hits, positives);
}

ClassificationMetrics classification_metrics(std::span<const double> scores,
                                             std::span<const std::uint8_t> predictions,
                                             std::span<const std::uint8_t> labels) {
    if (scores.size() != labels.size() || predictions.size() != labels.size()) {
        throw std::invalid_argument("classification_metrics: size mismatch");
    }
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t fn = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const bool p = predictions[i] != 0;
        const bool y = labels[i] != 0;
        tp += (p && y) ? 1 : 0;
        fp += (p && !y) ? 1 : 0;
        fn += (!p && y) ? 1 : 0;
    }
    ClassificationMetrics m;
    m.precision = tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
    m.recall = tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
    m.f1 = m.precision + m.recall == 0.0 ? 0.0 : 2.0 * m.precision * m.recall / (m.precision + m.recall);
    m.average_precision = average_precision(scores, labels);
    return m;
}

double mean(std::span<const double> v) {
    if (v.empty()) return 0.0;
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sample_sd(std::span<const double> v) {
    if (v.size() < 2) return 0.0;
    const double mu = mean(v);
    double ss = 0.0;
    for (double x : v) ss += (x - mu) * (x - mu);
    return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

}  // namespace psycode
