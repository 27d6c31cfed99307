#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "psycode/sparse.hpp"

namespace psycode::lingfeat {

enum class TokenKind : std::uint8_t { word, emoji, mention, url, punct };

struct Token {
    std::string surface;
    TokenKind kind = TokenKind::word;

    friend bool operator==(const Token&, const Token&) = default;
};

inline constexpr std::string_view kMentionToken = "@mention";
inline constexpr std::string_view kUrlToken = "<url>";

/// Splits tweet text into tokens. Words are ASCII-lowercased, every emoji
/// (including ZWJ sequences, skin-tone modifiers, keycaps and flags) is one
/// token, @handles collapse to "@mention" and links to "<url>".
std::vector<Token> tokenize(std::string_view text);

/// Space-joined surfaces. tokenize(detokenize(tokenize(t))) == tokenize(t).
std::string detokenize(std::span<const Token> tokens);

std::vector<std::string> surfaces(std::span<const Token> tokens);

// ---------------------------------------------------------------------------
// Affect lexicon

struct DalEntry {
    std::string word;
    double pleasantness = 0.0;
    double activation = 0.0;
    double imagery = 0.0;
};

using Dal = std::unordered_map<std::string, DalEntry>;
using Phrasebook = std::unordered_map<std::string, std::vector<std::string>>;

/// CSV `word,pleasantness,activation,imagery`; an optional header row whose
/// first field is "word" is skipped.
Dal load_dal(const std::string& path);
Dal parse_dal(std::string_view csv);

/// CSV `token,translation`; translations may be several space-separated
/// words. Targets missing from `dal` (when given) are reported via `warnings`.
Phrasebook load_phrasebook(const std::string& path, const Dal* dal = nullptr,
                           std::vector<std::string>* warnings = nullptr);
Phrasebook parse_phrasebook(std::string_view csv, const Dal* dal = nullptr,
                            std::vector<std::string>* warnings = nullptr);

inline constexpr std::size_t kDalDims = 6;

/// (min, max) of pleasantness, activation and imagery over every word that
/// resolves in the DAL, directly or through the phrasebook. Layout:
/// {p_min, p_max, a_min, a_max, i_min, i_max}. All zeros if nothing resolves.
std::array<double, kDalDims> dal_vector(std::span<const Token> tokens, const Dal& dal,
                                        const Phrasebook& phrasebook);

// ---------------------------------------------------------------------------
// N-grams

enum class Channel : std::uint8_t { token = 0, pos = 1 };

struct NgramKey {
    Channel channel = Channel::token;
    int n = 1;
    std::string text;  // unit surfaces joined by a single space

    auto operator<=>(const NgramKey&) const = default;
    std::string to_string() const;
};

/// Tagged unit for the POS channel: "surface/TAG".
using PosTags = std::vector<std::pair<std::string, std::string>>;

struct VocabDocument {
    std::vector<Token> tokens;
    const PosTags* pos_tags = nullptr;  // optional, must align with tokens
};

class NgramVocab {
public:
    NgramVocab() = default;
    explicit NgramVocab(std::map<NgramKey, std::size_t> columns) : columns_(std::move(columns)) {}

    std::size_t size() const { return columns_.size(); }
    std::optional<std::size_t> find(const NgramKey& key) const;
    const std::map<NgramKey, std::size_t>& columns() const { return columns_; }
    std::vector<NgramKey> keys_in_column_order() const;

private:
    std::map<NgramKey, std::size_t> columns_;
};

/// Every n-gram (n = 1, 2) seen in at least `min_df` documents. Columns are
/// numbered in key order (channel, n, text).
NgramVocab build_vocab(std::span<const VocabDocument> docs, std::size_t min_df = 1);

/// All n-grams of one document, with multiplicity.
std::vector<NgramKey> extract_ngrams(std::span<const Token> tokens, const PosTags* pos_tags);

/// Counts of known n-grams (or 0/1 presence when `binary`); unknown n-grams
/// are dropped.
SparseVector ngram_vector(std::span<const Token> tokens, const PosTags* pos_tags,
                          const NgramVocab& vocab, bool binary = false);

/// N-gram block followed by the 6 DAL values.
struct LinguisticFeaturizer {
    NgramVocab vocab;
    const Dal* dal = nullptr;
    const Phrasebook* phrasebook = nullptr;
    bool binary_ngrams = false;

    std::size_t dim() const { return vocab.size() + kDalDims; }
    SparseVector featurize(std::span<const Token> tokens, const PosTags* pos_tags) const;
    std::vector<std::string> column_names() const;
};

}  // namespace psycode::lingfeat
