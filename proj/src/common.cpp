#include "psycode/common.hpp"

namespace psycode {

namespace {
constexpr std::array<std::string_view, kNumCodes> kCodeNames{"aggression", "loss", "substance_use"};
constexpr std::array<std::string_view, kNumConcepts> kConceptNames{
    "handgun", "long_gun", "joint", "marijuana", "person", "tattoo", "hand_gesture", "lean", "money"};
}  // namespace

std::string_view code_name(Code code) { return kCodeNames[index(code)]; }

std::optional<Code> parse_code(std::string_view name) {
    for (std::size_t i = 0; i < kNumCodes; ++i) {
        if (kCodeNames[i] == name) return static_cast<Code>(i);
    }
    return std::nullopt;
}

std::string_view concept_name(Concept label) { return kConceptNames[index(label)]; }

std::optional<Concept> parse_concept(std::string_view name) {
    for (std::size_t i = 0; i < kNumConcepts; ++i) {
        if (kConceptNames[i] == name) return static_cast<Concept>(i);
    }
    return std::nullopt;
}

}  // namespace psycode
