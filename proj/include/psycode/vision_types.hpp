#pragma once

#include <string>

#include "psycode/common.hpp"

namespace psycode {

/// Axis-aligned box in pixels: top-left corner plus width and height.
struct Box {
    double x = 0.0;
    double y = 0.0;
    double w = 0.0;
    double h = 0.0;

    double area() const { return w * h; }
    friend bool operator==(const Box&, const Box&) = default;
};

struct ConceptDetection {
    std::string image_id;
    Concept label = Concept::person;
    double score = 0.0;
    Box box;

    friend bool operator==(const ConceptDetection&, const ConceptDetection&) = default;
};

/// Ground-truth annotation box.
struct ConceptBox {
    std::string image_id;
    Concept label = Concept::person;
    Box box;

    friend bool operator==(const ConceptBox&, const ConceptBox&) = default;
};

}  // namespace psycode
