#include "psycode/corpus.hpp"

#include <algorithm>
#include <set>
#include <unordered_map>
#include <unordered_set>

namespace psycode::corpus {

std::string_view source_name(Source s) { return s == Source::twitter ? "twitter" : "tumblr"; }

std::string_view rule_name(LabelRule r) { return r == LabelRule::any_positive ? "any_positive" : "majority"; }

std::optional<LabelRule> parse_rule(std::string_view name) {
    if (name == "any_positive") return LabelRule::any_positive;
    if (name == "majority") return LabelRule::majority;
    return std::nullopt;
}

namespace {

std::string_view role_name(AnnotatorRole r) {
    switch (r) {
        case AnnotatorRole::student: return "student";
        case AnnotatorRole::expert: return "expert";
        case AnnotatorRole::tiebreak: return "tiebreak";
    }
    return "student";
}

AnnotatorRole parse_role(const std::string& s) {
    if (s == "student") return AnnotatorRole::student;
    if (s == "expert") return AnnotatorRole::expert;
    if (s == "tiebreak") return AnnotatorRole::tiebreak;
    throw ValidationError("unknown annotator role '" + s + "'");
}

Source parse_source(const std::string& s) {
    if (s == "twitter") return Source::twitter;
    if (s == "tumblr") return Source::tumblr;
    throw ValidationError("unknown source '" + s + "'");
}

void check_pos_alignment(const TweetRecord& t) {
    if (!t.pos_tags) return;
    const auto toks = lingfeat::tokenize(t.text);
    bool ok = toks.size() == t.pos_tags->size();
    for (std::size_t i = 0; ok && i < toks.size(); ++i) ok = toks[i].surface == (*t.pos_tags)[i].first;
    if (!ok) throw ValidationError("tweet " + t.tweet_id + ": pos_tags do not match tokenized text");
}

}  // namespace

Json to_json(const TweetRecord& t) {
    Json j;
    j["tweet_id"] = t.tweet_id;
    j["user_id"] = t.user_id;
    j["text"] = t.text;
    if (t.image_id) j["image_id"] = *t.image_id;
    if (t.pos_tags) {
        Json tags = Json::array();
        for (const auto& [tok, tag] : *t.pos_tags) tags.push_back(Json::array({tok, tag}));
        j["pos_tags"] = std::move(tags);
    }
    j["source"] = std::string(source_name(t.source));
    return j;
}

Json to_json(const CodeAnnotation& a) {
    Json j;
    j["tweet_id"] = a.tweet_id;
    j["annotator_id"] = a.annotator_id;
    j["role"] = std::string(role_name(a.role));
    for (auto c : kAllCodes) j[std::string(code_name(c))] = a.flags[index(c)];
    return j;
}

TweetRecord tweet_from_json(const Json& j) {
    TweetRecord t;
    t.tweet_id = j.at("tweet_id").get<std::string>();
    t.user_id = j.at("user_id").get<std::string>();
    t.text = j.at("text").get<std::string>();
    if (auto it = j.find("image_id"); it != j.end() && !it->is_null()) t.image_id = it->get<std::string>();
    if (auto it = j.find("pos_tags"); it != j.end() && !it->is_null()) {
        lingfeat::PosTags tags;
        for (const auto& pair : *it) {
            if (!pair.is_array() || pair.size() != 2) throw ValidationError("pos_tags entries must be [token, tag]");
            tags.emplace_back(pair[0].get<std::string>(), pair[1].get<std::string>());
        }
        t.pos_tags = std::move(tags);
    }
    t.source = parse_source(j.value("source", std::string("twitter")));
    return t;
}

CodeAnnotation annotation_from_json(const Json& j) {
    CodeAnnotation a;
    a.tweet_id = j.at("tweet_id").get<std::string>();
    a.annotator_id = j.at("annotator_id").get<std::string>();
    a.role = parse_role(j.at("role").get<std::string>());
    for (auto c : kAllCodes) a.flags[index(c)] = j.at(std::string(code_name(c))).get<bool>();
    return a;
}

void validate(const Corpus& corpus) {
    std::unordered_set<std::string> ids;
    for (const auto& t : corpus.tweets) {
        if (!ids.insert(t.tweet_id).second) throw ValidationError("duplicate tweet_id " + t.tweet_id);
        check_pos_alignment(t);
    }
    std::set<std::pair<std::string, std::string>> keys;
    std::set<std::string> dangling;
    for (const auto& a : corpus.annotations) {
        if (!ids.contains(a.tweet_id)) dangling.insert(a.tweet_id);
        if (!keys.emplace(a.tweet_id, a.annotator_id).second) {
            throw ValidationError("duplicate annotation (" + a.tweet_id + ", " + a.annotator_id + ")");
        }
    }
    if (!dangling.empty()) {
        std::string msg = "annotations reference unknown tweet_id:";
        for (const auto& id : dangling) msg += " " + id;
        throw ValidationError(msg);
    }
}

Corpus load_corpus(const std::string& tweets_path, const std::string& annotations_path) {
    Corpus corpus;
    std::unordered_set<std::string> ids;
    for_each_jsonl(tweets_path, [&](const Json& j, std::size_t) {
        auto t = tweet_from_json(j);
        if (!ids.insert(t.tweet_id).second) throw ValidationError("duplicate tweet_id " + t.tweet_id);
        check_pos_alignment(t);
        corpus.tweets.push_back(std::move(t));
    });
    std::set<std::pair<std::string, std::string>> keys;
    for_each_jsonl(annotations_path, [&](const Json& j, std::size_t) {
        auto a = annotation_from_json(j);
        if (!keys.emplace(a.tweet_id, a.annotator_id).second) {
            throw ValidationError("duplicate annotation (" + a.tweet_id + ", " + a.annotator_id + ")");
        }
        corpus.annotations.push_back(std::move(a));
    });
    validate(corpus);
    return corpus;
}

void save_corpus(const Corpus& corpus, const std::string& tweets_path,
                 const std::string& annotations_path) {
    std::vector<Json> tweets;
    tweets.reserve(corpus.tweets.size());
    for (const auto& t : corpus.tweets) tweets.push_back(to_json(t));
    write_jsonl(tweets_path, tweets);
    std::vector<Json> anns;
    anns.reserve(corpus.annotations.size());
    for (const auto& a : corpus.annotations) anns.push_back(to_json(a));
    write_jsonl(annotations_path, anns);
}

namespace {

CodeLabels apply_rule(const std::string& tweet_id, const std::vector<const CodeAnnotation*>& group,
                      LabelRule rule) {
    CodeLabels out;
    out.tweet_id = tweet_id;
    out.rule = rule;
    for (auto c : kAllCodes) {
        std::size_t positives = 0;
        for (const auto* a : group) positives += a->flags[index(c)] ? 1 : 0;
        out.labels[index(c)] =
            rule == LabelRule::any_positive ? positives > 0 : 2 * positives > group.size();
    }
    return out;
}

}  // namespace

std::vector<CodeLabels> derive_labels(std::span<const CodeAnnotation> annotations, LabelRule rule) {
    std::map<std::string, std::vector<const CodeAnnotation*>> groups;
    for (const auto& a : annotations) groups[a.tweet_id].push_back(&a);
    std::vector<CodeLabels> out;
    out.reserve(groups.size());
    for (const auto& [id, group] : groups) out.push_back(apply_rule(id, group, rule));
    return out;
}

std::vector<CodeLabels> derive_labels(std::span<const std::string> tweet_ids,
                                      std::span<const CodeAnnotation> annotations, LabelRule rule) {
    std::unordered_map<std::string, std::vector<const CodeAnnotation*>> groups;
    for (const auto& a : annotations) groups[a.tweet_id].push_back(&a);
    std::vector<CodeLabels> out;
    out.reserve(tweet_ids.size());
    for (const auto& id : tweet_ids) {
        auto it = groups.find(id);
        if (it == groups.end()) throw ValidationError("tweet " + id + " has no annotations");
        out.push_back(apply_rule(id, it->second, rule));
    }
    return out;
}

PerCode<std::size_t> CorpusStats::any_positive_total() const {
    PerCode<std::size_t> t{};
    for (const auto& [src, counts] : any_positive) {
        for (std::size_t c = 0; c < kNumCodes; ++c) t[c] += counts[c];
    }
    return t;
}

PerCode<std::size_t> CorpusStats::majority_total() const {
    PerCode<std::size_t> t{};
    for (const auto& [src, counts] : majority) {
        for (std::size_t c = 0; c < kNumCodes; ++c) t[c] += counts[c];
    }
    return t;
}

CorpusStats corpus_stats(std::span<const TweetRecord> tweets, std::span<const CodeAnnotation> annotations,
                         std::span<const ConceptBox> gt_boxes) {
    CorpusStats s;
    std::unordered_map<std::string, Source> source_of_tweet;
    std::unordered_map<std::string, Source> source_of_image;
    for (const auto& t : tweets) {
        ++s.tweets_per_source[t.source];
        ++s.tweets_per_user[t.user_id];
        source_of_tweet[t.tweet_id] = t.source;
        if (t.image_id) source_of_image[*t.image_id] = t.source;
    }
    const auto any = derive_labels(annotations, LabelRule::any_positive);
    const auto maj = derive_labels(annotations, LabelRule::majority);
    for (std::size_t i = 0; i < any.size(); ++i) {
        auto it = source_of_tweet.find(any[i].tweet_id);
        if (it == source_of_tweet.end()) continue;
        ++s.labeled_tweets;
        auto& a = s.any_positive[it->second];
        auto& m = s.majority[it->second];
        for (std::size_t c = 0; c < kNumCodes; ++c) {
            a[c] += any[i].labels[c] ? 1 : 0;
            m[c] += maj[i].labels[c] ? 1 : 0;
        }
    }
    for (const auto& b : gt_boxes) {
        auto it = source_of_image.find(b.image_id);
        const Source src = it == source_of_image.end() ? Source::twitter : it->second;
        ++s.concept_instances[src][index(b.label)];
    }
    return s;
}

Table stats_table(const CorpusStats& stats) {
    Table t;
    t.header = {"Concepts/Codes", "Twitter", "Tumblr", "Total"};
    auto get = [](const auto& m, Source s) {
        auto it = m.find(s);
        return it == m.end() ? nullptr : &it->second;
    };
    if (!stats.concept_instances.empty()) {
        for (auto c : kAllConcepts) {
            const auto* tw = get(stats.concept_instances, Source::twitter);
            const auto* tu = get(stats.concept_instances, Source::tumblr);
            const std::size_t a = tw ? (*tw)[index(c)] : 0;
            const std::size_t b = tu ? (*tu)[index(c)] : 0;
            t.rows.push_back({std::string(concept_name(c)), std::to_string(a), std::to_string(b),
                              std::to_string(a + b)});
        }
    }
    auto cell = [&](Source s, std::size_t c) -> std::string {
        const auto* a = get(stats.any_positive, s);
        const auto* m = get(stats.majority, s);
        if (a == nullptr) return "-";
        return std::to_string((*a)[c]) + " (" + std::to_string((*m)[c]) + ")";
    };
    const auto any_total = stats.any_positive_total();
    const auto maj_total = stats.majority_total();
    for (auto c : kAllCodes) {
        const auto i = index(c);
        t.rows.push_back({std::string(code_name(c)), cell(Source::twitter, i), cell(Source::tumblr, i),
                          std::to_string(any_total[i]) + " (" + std::to_string(maj_total[i]) + ")"});
    }
    auto count = [&](Source s) {
        auto it = stats.tweets_per_source.find(s);
        return it == stats.tweets_per_source.end() ? std::size_t{0} : it->second;
    };
    t.rows.push_back({"posts", std::to_string(count(Source::twitter)), std::to_string(count(Source::tumblr)),
                      std::to_string(count(Source::twitter) + count(Source::tumblr))});
    t.rows.push_back({"users", std::to_string(stats.tweets_per_user.size()), "", ""});
    return t;
}

}  // namespace psycode::corpus
