#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "psycode/common.hpp"
#include "psycode/corpus.hpp"
#include "psycode/table.hpp"
#include "psycode/vision_types.hpp"

namespace psycode::deteval {

inline constexpr double kDefaultIouThreshold = 0.5;

/// Intersection over union. Throws ValidationError for boxes without
/// positive width and height.
double iou(const Box& a, const Box& b);

struct RankedDetection {
    ConceptDetection detection;
    bool true_positive = false;
};

struct MatchResult {
    std::vector<RankedDetection> ranked;  // descending score, ties in input order
    std::size_t n_ground_truth = 0;
};

/// Greedy matching for one concept: detections in score order each claim the
/// unmatched same-image ground-truth box of highest IoU if it reaches the
/// threshold.
MatchResult match_detections(std::span<const ConceptDetection> detections, std::span<const ConceptBox> gt_boxes,
                             Concept label, double iou_threshold = kDefaultIouThreshold);

/// Rank-accumulation AP of a match; absent without ground truth.
std::optional<double> detection_ap(const MatchResult& match);

/// An image taking part in evaluation, with its cross-validation fold.
struct EvalImage {
    std::string image_id;
    corpus::Source source = corpus::Source::twitter;
    int fold = 0;
};

enum class Column : std::uint8_t { complete = 0, twitter = 1, tumblr = 2 };
inline constexpr std::array<Column, 3> kColumns{Column::complete, Column::twitter, Column::tumblr};
std::string_view column_name(Column c);

struct ApCell {
    std::vector<std::optional<double>> per_fold;
    std::optional<double> mean;  // over folds where defined
    std::optional<double> sd;    // sample SD over the same folds
};

struct DetectionReport {
    int n_folds = 0;
    std::array<std::array<ApCell, kNumConcepts>, 3> concepts;  // [column][concept]
    std::array<ApCell, 3> map;                                  // per-fold mAP summarized
};

/// Per-concept AP of one fold restricted to a column's source filter.
std::array<std::optional<double>, kNumConcepts> fold_concept_ap(std::span<const ConceptDetection> detections,
                                                                 std::span<const ConceptBox> gt_boxes,
                                                                 std::span<const EvalImage> images, int fold,
                                                                 Column column, double iou_threshold);

DetectionReport detection_report(std::span<const ConceptDetection> detections, std::span<const ConceptBox> gt_boxes,
                                 std::span<const EvalImage> images, int n_folds,
                                 double iou_threshold = kDefaultIouThreshold);

/// Concept rows plus an mAP row; columns Complete, Twitter, Tumblr as
/// "AP ± SD".
Table report_table(const DetectionReport& report);

}  // namespace psycode::deteval
