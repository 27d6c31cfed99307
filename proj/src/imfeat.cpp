#include "psycode/imfeat.hpp"

#include <cmath>

#include "psycode/log.hpp"

namespace psycode::imfeat {

ConceptVector concept_counts(std::span<const ConceptDetection> detections, double threshold) {
    ConceptVector out{};
    for (const auto& d : detections) {
        if (d.score > threshold) out[index(d.label)] += 1.0;
    }
    return out;
}

ConceptVector gt_concept_counts(std::span<const ConceptBox> boxes) {
    ConceptVector out{};
    for (const auto& b : boxes) out[index(b.label)] += 1.0;
    return out;
}

GlobalFeatureTable::GlobalFeatureTable(std::vector<GlobalFeature> rows) {
    for (auto& r : rows) {
        if (rows_.empty()) {
            dim_ = r.vector.size();
        } else if (r.vector.size() != dim_) {
            throw ValidationError("global feature for " + r.image_id + " has dimension " +
                                  std::to_string(r.vector.size()) + ", expected " + std::to_string(dim_));
        }
        for (double v : r.vector) {
            if (!std::isfinite(v)) throw ValidationError("non-finite global feature for " + r.image_id);
        }
        if (!rows_.emplace(r.image_id, std::move(r.vector)).second) {
            throw ValidationError("duplicate global feature for " + r.image_id);
        }
    }
}

std::vector<double> GlobalFeatureTable::lookup(const std::optional<std::string>& image_id) const {
    if (!image_id) return std::vector<double>(dim_, 0.0);
    auto it = rows_.find(*image_id);
    if (it == rows_.end()) {
        log_warning("no global feature for image " + *image_id + "; using zeros");
        return std::vector<double>(dim_, 0.0);
    }
    return it->second;
}

GlobalFeatureTable load_global(const std::string& path) {
    std::vector<GlobalFeature> rows;
    std::size_t dim = 0;
    for_each_jsonl(path, [&](const Json& j, std::size_t line) {
        GlobalFeature g{j.at("image_id").get<std::string>(), j.at("vector").get<std::vector<double>>()};
        if (rows.empty()) {
            dim = g.vector.size();
        } else if (g.vector.size() != dim) {
            throw ValidationError("inconsistent global feature dimension " + std::to_string(g.vector.size()) +
                                  " (expected " + std::to_string(dim) + ") at line " + std::to_string(line));
        }
        rows.push_back(std::move(g));
    });
    return GlobalFeatureTable(std::move(rows));
}

namespace {

Json box_json(const Box& b) { return Json::array({b.x, b.y, b.w, b.h}); }

Box parse_box(const Json& j) {
    if (!j.is_array() || j.size() != 4) throw ValidationError("box must be [x, y, w, h]");
    Box b{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
    if (!(b.w > 0.0) || !(b.h > 0.0)) throw ValidationError("box width and height must be positive");
    return b;
}

Concept parse_concept_field(const Json& j) {
    const auto name = j.get<std::string>();
    auto c = parse_concept(name);
    if (!c) throw ValidationError("unknown concept '" + name + "'");
    return *c;
}

}  // namespace

Json to_json(const GlobalFeature& g) { return Json{{"image_id", g.image_id}, {"vector", g.vector}}; }

Json to_json(const ConceptDetection& d) {
    return Json{{"image_id", d.image_id},
                {"concept", std::string(concept_name(d.label))},
                {"score", d.score},
                {"box", box_json(d.box)}};
}

Json to_json(const ConceptBox& b) {
    return Json{{"image_id", b.image_id}, {"concept", std::string(concept_name(b.label))}, {"box", box_json(b.box)}};
}

ConceptDetection detection_from_json(const Json& j) {
    ConceptDetection d;
    d.image_id = j.at("image_id").get<std::string>();
    d.label = parse_concept_field(j.at("concept"));
    d.score = j.at("score").get<double>();
    if (!(d.score >= 0.0 && d.score <= 1.0)) throw ValidationError("detection score must be in [0, 1]");
    d.box = parse_box(j.at("box"));
    return d;
}

ConceptBox box_from_json(const Json& j) {
    ConceptBox b;
    b.image_id = j.at("image_id").get<std::string>();
    b.label = parse_concept_field(j.at("concept"));
    b.box = parse_box(j.at("box"));
    return b;
}

std::vector<ConceptDetection> load_detections(const std::string& path) {
    std::vector<ConceptDetection> out;
    for_each_jsonl(path, [&](const Json& j, std::size_t) { out.push_back(detection_from_json(j)); });
    return out;
}

std::vector<ConceptBox> load_gt_boxes(const std::string& path) {
    std::vector<ConceptBox> out;
    for_each_jsonl(path, [&](const Json& j, std::size_t) { out.push_back(box_from_json(j)); });
    return out;
}

}  // namespace psycode::imfeat
