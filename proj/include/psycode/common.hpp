#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace psycode {

/// Input or configuration problem. The CLI maps it to exit code 2.
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A model could not be fitted (degenerate data, non-finite values, ...).
/// The CLI maps it to exit code 3.
class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Code : std::uint8_t { aggression = 0, loss = 1, substance_use = 2 };
inline constexpr std::size_t kNumCodes = 3;
inline constexpr std::array<Code, kNumCodes> kAllCodes{Code::aggression, Code::loss,
                                                       Code::substance_use};

std::string_view code_name(Code code);
std::optional<Code> parse_code(std::string_view name);

/// Local visual concepts. The integer order is the feature-vector layout and
/// the row order of the concept tables; never reorder.
enum class Concept : std::uint8_t {
    handgun = 0,
    long_gun,
    joint,
    marijuana,
    person,
    tattoo,
    hand_gesture,
    lean,
    money,
};
inline constexpr std::size_t kNumConcepts = 9;
inline constexpr std::array<Concept, kNumConcepts> kAllConcepts{
    Concept::handgun, Concept::long_gun, Concept::joint,        Concept::marijuana, Concept::person,
    Concept::tattoo,  Concept::hand_gesture, Concept::lean,     Concept::money};

std::string_view concept_name(Concept label);
std::optional<Concept> parse_concept(std::string_view name);

/// Per-code triple, indexed by Code.
template <typename T>
using PerCode = std::array<T, kNumCodes>;

inline constexpr std::size_t index(Code c) { return static_cast<std::size_t>(c); }
inline constexpr std::size_t index(Concept c) { return static_cast<std::size_t>(c); }

}  // namespace psycode
