#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "psycode/common.hpp"
#include "psycode/jsonl.hpp"
#include "psycode/lingfeat.hpp"
#include "psycode/table.hpp"
#include "psycode/vision_types.hpp"

namespace psycode::corpus {

enum class Source : std::uint8_t { twitter, tumblr };
enum class AnnotatorRole : std::uint8_t { student, expert, tiebreak };
enum class LabelRule : std::uint8_t { any_positive, majority };

std::string_view source_name(Source s);
std::string_view rule_name(LabelRule r);
std::optional<LabelRule> parse_rule(std::string_view name);

struct TweetRecord {
    std::string tweet_id;
    std::string user_id;
    std::string text;
    std::optional<std::string> image_id;
    std::optional<lingfeat::PosTags> pos_tags;
    Source source = Source::twitter;

    friend bool operator==(const TweetRecord&, const TweetRecord&) = default;
};

struct CodeAnnotation {
    std::string tweet_id;
    std::string annotator_id;
    AnnotatorRole role = AnnotatorRole::student;
    PerCode<bool> flags{};

    friend bool operator==(const CodeAnnotation&, const CodeAnnotation&) = default;
};

struct CodeLabels {
    std::string tweet_id;
    PerCode<bool> labels{};
    LabelRule rule = LabelRule::any_positive;

    friend bool operator==(const CodeLabels&, const CodeLabels&) = default;
};

struct Corpus {
    std::vector<TweetRecord> tweets;
    std::vector<CodeAnnotation> annotations;
};

Json to_json(const TweetRecord& t);
Json to_json(const CodeAnnotation& a);
TweetRecord tweet_from_json(const Json& j);
CodeAnnotation annotation_from_json(const Json& j);

/// Parses both JSONL files and checks keys: tweet ids unique, (tweet,
/// annotator) pairs unique, every annotation refers to a known tweet, and
/// POS tags align with the tokenizer output.
Corpus load_corpus(const std::string& tweets_path, const std::string& annotations_path);
void save_corpus(const Corpus& corpus, const std::string& tweets_path,
                 const std::string& annotations_path);

/// Checks the cross-record invariants of an in-memory corpus.
void validate(const Corpus& corpus);

/// One CodeLabels per annotated tweet, sorted by tweet id.
std::vector<CodeLabels> derive_labels(std::span<const CodeAnnotation> annotations, LabelRule rule);

/// Labels for exactly `tweet_ids`, in that order. A tweet without annotations
/// is an error.
std::vector<CodeLabels> derive_labels(std::span<const std::string> tweet_ids,
                                      std::span<const CodeAnnotation> annotations, LabelRule rule);

struct CorpusStats {
    std::map<Source, std::size_t> tweets_per_source;
    std::map<std::string, std::size_t> tweets_per_user;
    /// [source][code] positive counts under each rule (labeled tweets only).
    std::map<Source, PerCode<std::size_t>> any_positive;
    std::map<Source, PerCode<std::size_t>> majority;
    /// Ground-truth concept instances per source (empty when no boxes given).
    std::map<Source, std::array<std::size_t, kNumConcepts>> concept_instances;
    std::size_t labeled_tweets = 0;

    PerCode<std::size_t> any_positive_total() const;
    PerCode<std::size_t> majority_total() const;
};

CorpusStats corpus_stats(std::span<const TweetRecord> tweets,
                         std::span<const CodeAnnotation> annotations,
                         std::span<const ConceptBox> gt_boxes = {});

/// Concept and code instance counts by source, with majority counts in
/// parentheses.
Table stats_table(const CorpusStats& stats);

}  // namespace psycode::corpus
