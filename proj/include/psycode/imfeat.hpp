#pragma once

#include <array>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "psycode/common.hpp"
#include "psycode/jsonl.hpp"
#include "psycode/vision_types.hpp"

namespace psycode::imfeat {

using ConceptVector = std::array<double, kNumConcepts>;

/// Per-concept count of detections scoring strictly above `threshold`.
ConceptVector concept_counts(std::span<const ConceptDetection> detections, double threshold);

/// Per-concept count of ground-truth boxes.
ConceptVector gt_concept_counts(std::span<const ConceptBox> boxes);

struct GlobalFeature {
    std::string image_id;
    std::vector<double> vector;
};

/// Precomputed global image descriptors keyed by image id. All vectors share
/// one dimension.
class GlobalFeatureTable {
public:
    GlobalFeatureTable() = default;
    explicit GlobalFeatureTable(std::vector<GlobalFeature> rows);

    std::size_t dim() const { return dim_; }
    std::size_t size() const { return rows_.size(); }

    /// Zero vector (plus a warning for a missing id) when the tweet has no
    /// image or the image has no descriptor.
    std::vector<double> lookup(const std::optional<std::string>& image_id) const;
    bool contains(const std::string& image_id) const { return rows_.contains(image_id); }

private:
    std::size_t dim_ = 0;
    std::unordered_map<std::string, std::vector<double>> rows_;
};

GlobalFeatureTable load_global(const std::string& path);

Json to_json(const GlobalFeature& g);
Json to_json(const ConceptDetection& d);
Json to_json(const ConceptBox& b);
ConceptDetection detection_from_json(const Json& j);
ConceptBox box_from_json(const Json& j);

std::vector<ConceptDetection> load_detections(const std::string& path);
std::vector<ConceptBox> load_gt_boxes(const std::string& path);

/// Records grouped by image id, preserving input order within an image.
template <typename Record>
std::unordered_map<std::string, std::vector<Record>> group_by_image(std::span<const Record> records) {
    std::unordered_map<std::string, std::vector<Record>> out;
    for (const auto& r : records) out[r.image_id].push_back(r);
    return out;
}

}  // namespace psycode::imfeat
