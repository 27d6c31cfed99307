#include "psycode/deteval.hpp"

#include <algorithm>
#include <unordered_map>

#include "psycode/metrics.hpp"

namespace psycode::deteval {

double iou(const Box& a, const Box& b) {
    if (!(a.w > 0.0 && a.h > 0.0 && b.w > 0.0 && b.h > 0.0)) {
        throw ValidationError("iou: boxes need positive width and height");
    }
    const double ix = std::max(0.0, std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x));
    const double iy = std::max(0.0, std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y));
    const double inter = ix * iy;
    const double uni = a.area() + b.area() - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

MatchResult match_detections(std::span<const ConceptDetection> detections, std::span<const ConceptBox> gt_boxes,
                             Concept label, double iou_threshold) {
    MatchResult result;
    std::unordered_map<std::string, std::vector<std::size_t>> gt_by_image;
    for (std::size_t i = 0; i < gt_boxes.size(); ++i) {
        if (gt_boxes[i].label != label) continue;
        gt_by_image[gt_boxes[i].image_id].push_back(i);
        ++result.n_ground_truth;
    }
    std::vector<std::size_t> order;
    std::vector<double> scores;
    for (std::size_t i = 0; i < detections.size(); ++i) {
        if (detections[i].label != label) continue;
        order.push_back(i);
        scores.push_back(detections[i].score);
    }
    std::vector<bool> matched(gt_boxes.size(), false);
    for (auto k : rank_by_score(scores)) {
        const auto& det = detections[order[k]];
        RankedDetection r{det, false};
        if (auto it = gt_by_image.find(det.image_id); it != gt_by_image.end()) {
            double best = -1.0;
            std::size_t best_idx = 0;
            for (auto g : it->second) {
                if (matched[g]) continue;
                const double o = iou(det.box, gt_boxes[g].box);
                if (o > best) {
                    best = o;
                    best_idx = g;
                }
            }
            if (best >= iou_threshold) {
                matched[best_idx] = true;
                r.true_positive = true;
            }
        }
        result.ranked.push_back(std::move(r));
    }
    return result;
}

std::optional<double> detection_ap(const MatchResult& match) {
    std::vector<std::uint8_t> hits;
    hits.reserve(match.ranked.size());
    for (const auto& r : match.ranked) hits.push_back(r.true_positive ? 1 : 0);
    return ranked_average_precision(hits, match.n_ground_truth);
}

std::string_view column_name(Column c) {
    switch (c) {
        case Column::complete: return "Complete";
        case Column::twitter: return "Twitter";
        case Column::tumblr: return "Tumblr";
    }
    return "Complete";
}

namespace {

bool in_column(corpus::Source s, Column c) {
    if (c == Column::complete) return true;
    return (c == Column::twitter) == (s == corpus::Source::twitter);
}

ApCell summarize(std::vector<std::optional<double>> per_fold) {
    ApCell cell;
    std::vector<double> defined;
    for (const auto& v : per_fold) {
        if (v) defined.push_back(*v);
    }
    cell.per_fold = std::move(per_fold);
    if (!defined.empty()) {
        cell.mean = mean(defined);
        cell.sd = sample_sd(defined);
    }
    return cell;
}

}  // namespace

std::array<std::optional<double>, kNumConcepts> fold_concept_ap(std::span<const ConceptDetection> detections,
                                                                 std::span<const ConceptBox> gt_boxes,
                                                                 std::span<const EvalImage> images, int fold,
                                                                 Column column, double iou_threshold) {
    std::unordered_map<std::string, const EvalImage*> selected;
    for (const auto& im : images) {
        if (im.fold == fold && in_column(im.source, column)) selected.emplace(im.image_id, &im);
    }
    std::vector<ConceptDetection> dets;
    for (const auto& d : detections) {
        if (selected.contains(d.image_id)) dets.push_back(d);
    }
    std::vector<ConceptBox> gts;
    for (const auto& g : gt_boxes) {
        if (selected.contains(g.image_id)) gts.push_back(g);
    }
    std::array<std::optional<double>, kNumConcepts> out;
    for (auto c : kAllConcepts) out[index(c)] = detection_ap(match_detections(dets, gts, c, iou_threshold));
    return out;
}

DetectionReport detection_report(std::span<const ConceptDetection> detections, std::span<const ConceptBox> gt_boxes,
                                 std::span<const EvalImage> images, int n_folds, double iou_threshold) {
    DetectionReport report;
    report.n_folds = n_folds;
    for (auto column : kColumns) {
        const auto ci = static_cast<std::size_t>(column);
        std::array<std::vector<std::optional<double>>, kNumConcepts> per_concept;
        std::vector<std::optional<double>> per_fold_map;
        for (int f = 0; f < n_folds; ++f) {
            const auto aps = fold_concept_ap(detections, gt_boxes, images, f, column, iou_threshold);
            std::vector<double> defined;
            for (std::size_t k = 0; k < kNumConcepts; ++k) {
                per_concept[k].push_back(aps[k]);
                if (aps[k]) defined.push_back(*aps[k]);
            }
            per_fold_map.push_back(defined.empty() ? std::nullopt : std::optional<double>(mean(defined)));
        }
        for (std::size_t k = 0; k < kNumConcepts; ++k) report.concepts[ci][k] = summarize(std::move(per_concept[k]));
        report.map[ci] = summarize(std::move(per_fold_map));
    }
    return report;
}

Table report_table(const DetectionReport& report) {
    Table t;
    t.header = {"Concept"};
    for (auto c : kColumns) t.header.push_back(std::string(column_name(c)) + " AP ± SD");
    auto cell = [](const ApCell& c) -> std::string {
        if (!c.mean) return "";
        return fmt_fixed(*c.mean) + " ± " + fmt_fixed(c.sd.value_or(0.0));
    };
    for (auto con : kAllConcepts) {
        std::vector<std::string> row{std::string(concept_name(con))};
        for (auto c : kColumns) row.push_back(cell(report.concepts[static_cast<std::size_t>(c)][index(con)]));
        t.rows.push_back(std::move(row));
    }
    std::vector<std::string> row{"mAP"};
    for (auto c : kColumns) row.push_back(cell(report.map[static_cast<std::size_t>(c)]));
    t.rows.push_back(std::move(row));
    return t;
}

}  // namespace psycode::deteval
