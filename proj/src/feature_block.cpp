#include "psycode/feature_block.hpp"

namespace psycode {

std::size_t FeatureBlock::dim() const {
    if (const auto* d = std::get_if<std::vector<double>>(&values)) return d->size();
    return std::get<SparseVector>(values).dim;
}

std::vector<double> FeatureBlock::dense() const {
    if (const auto* d = std::get_if<std::vector<double>>(&values)) return *d;
    return std::get<SparseVector>(values).to_dense();
}

Json to_json(const FeatureBlock& b) {
    Json j;
    j["space"] = b.space;
    j["tweet_id"] = b.tweet_id;
    j["dim"] = b.dim();
    if (const auto* d = std::get_if<std::vector<double>>(&b.values)) {
        j["values"] = *d;
    } else {
        const auto& s = std::get<SparseVector>(b.values);
        j["indices"] = s.indices;
        j["values"] = s.values;
    }
    if (b.code) j["code"] = std::string(code_name(*b.code));
    if (b.fold) j["fold"] = *b.fold;
    return j;
}

FeatureBlock feature_block_from_json(const Json& j) {
    FeatureBlock b;
    b.space = j.at("space").get<std::string>();
    b.tweet_id = j.at("tweet_id").get<std::string>();
    const auto dim = j.at("dim").get<std::size_t>();
    auto values = j.at("values").get<std::vector<double>>();
    if (j.contains("indices")) {
        SparseVector s;
        s.dim = dim;
        s.indices = j.at("indices").get<std::vector<std::uint32_t>>();
        s.values = std::move(values);
        if (s.indices.size() != s.values.size()) throw ValidationError("indices/values length mismatch");
        for (std::size_t k = 0; k < s.indices.size(); ++k) {
            if (s.indices[k] >= dim || (k > 0 && s.indices[k] <= s.indices[k - 1])) {
                throw ValidationError("sparse indices must be increasing and < dim");
            }
        }
        b.values = std::move(s);
    } else {
        if (values.size() != dim) throw ValidationError("dense values length != dim");
        b.values = std::move(values);
    }
    if (j.contains("code")) {
        auto c = parse_code(j.at("code").get<std::string>());
        if (!c) throw ValidationError("unknown code in feature block");
        b.code = *c;
    }
    if (j.contains("fold")) b.fold = j.at("fold").get<int>();
    return b;
}

void save_feature_blocks(const std::string& path, const std::vector<FeatureBlock>& blocks) {
    std::vector<Json> out;
    out.reserve(blocks.size());
    for (const auto& b : blocks) out.push_back(to_json(b));
    write_jsonl(path, out);
}

std::vector<FeatureBlock> load_feature_blocks(const std::string& path) {
    std::vector<FeatureBlock> out;
    for_each_jsonl(path, [&](const Json& j, std::size_t) { out.push_back(feature_block_from_json(j)); });
    return out;
}

}  // namespace psycode
