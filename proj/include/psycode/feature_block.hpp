#pragma once

#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "psycode/common.hpp"
#include "psycode/jsonl.hpp"
#include "psycode/sparse.hpp"

namespace psycode {

/// One tweet's vector in one named feature space ("linguistic", "cnn_word",
/// "cnn_char", "global", "counts@0.1", "counts@0.5", "gt_concepts").
/// Fold- or code-specific spaces carry the fold/code they were fitted for.
struct FeatureBlock {
    std::string space;
    std::string tweet_id;
    std::variant<std::vector<double>, SparseVector> values;
    std::optional<Code> code;
    std::optional<int> fold;

    std::size_t dim() const;
    std::vector<double> dense() const;
};

/// {"space","tweet_id","dim","values":[...]} for dense rows, plus
/// "indices" for sparse rows; "code" and "fold" when set.
Json to_json(const FeatureBlock& b);
FeatureBlock feature_block_from_json(const Json& j);

void save_feature_blocks(const std::string& path, const std::vector<FeatureBlock>& blocks);
std::vector<FeatureBlock> load_feature_blocks(const std::string& path);

}  // namespace psycode
