#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace psycode {

/// Rank-accumulation average precision over a ranked relevance list:
/// AP = sum_k (R_k - R_{k-1}) * P_k with R_k = hits@k / n_positive.
/// Positives never retrieved contribute zero. Absent when n_positive == 0.
std::optional<double> ranked_average_precision(std::span<const std::uint8_t> ranked_hits,
                                               std::size_t n_positive);

/// Indices ordered by descending score; equal scores keep input order.
std::vector<std::size_t> rank_by_score(std::span<const double> scores);

/// AP of continuous scores against binary labels. Absent without positives.
std::optional<double> average_precision(std::span<const double> scores, std::span<const std::uint8_t> labels);

struct ClassificationMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::optional<double> average_precision;
};

/// P, R and F1 of the positive class from hard predictions (P = 0 when
/// nothing is predicted positive, R = 0 without actual positives) plus AP
/// from the scores.
ClassificationMetrics classification_metrics(std::span<const double> scores,
                                             std::span<const std::uint8_t> predictions,
                                             std::span<const std::uint8_t> labels);

double mean(std::span<const double> v);
/// Sample standard deviation (n - 1); 0 for fewer than two values.
double sample_sd(std::span<const double> v);

}  // namespace psycode
