#include "psycode/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <thread>

#include <boost/math/distributions/students_t.hpp>

#include "psycode/log.hpp"
#include "psycode/metrics.hpp"
#include "psycode/random.hpp"

namespace psycode::pipeline {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
// Fold-wise differences below this are floating-point noise, not signal.
constexpr double kZeroDifference = 1e-12;

std::uint64_t code_key(Code c) { return static_cast<std::uint64_t>(index(c)); }
std::uint64_t fold_key(int f) { return static_cast<std::uint64_t>(f); }

std::optional<double> counts_threshold(std::string_view space) {
    constexpr std::string_view prefix = "counts@";
    if (!space.starts_with(prefix)) return std::nullopt;
    const std::string rest(space.substr(prefix.size()));
    try {
        std::size_t used = 0;
        const double t = std::stod(rest, &used);
        if (used != rest.size() || !(t >= 0.0 && t <= 1.0)) return std::nullopt;
        return t;
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

bool is_known_space(const std::string& s) {
    const auto& known = known_spaces();
    return std::find(known.begin(), known.end(), s) != known.end() || counts_threshold(s).has_value();
}

bool is_cnn_space(const std::string& s) { return s == kCnnWord || s == kCnnChar; }

textcnn::Level cnn_level(const std::string& s) {
    return s == kCnnWord ? textcnn::Level::word : textcnn::Level::character;
}

std::string block_key(const std::string& tweet_id, std::optional<Code> code, std::optional<int> fold) {
    std::string k = tweet_id;
    k += '|';
    if (code) k += code_name(*code);
    k += '|';
    if (fold) k += std::to_string(*fold);
    return k;
}

/// Rows of one feature space taken from precomputed FeatureBlocks.
Matrix matrix_from_blocks(const ExperimentData& data, const std::string& space, std::optional<Code> code,
                          std::optional<int> fold) {
    const auto& blocks = data.feature_blocks.at(space);
    std::unordered_map<std::string, const FeatureBlock*> by_key;
    for (const auto& b : blocks) {
        if (b.space != space) continue;
        by_key[block_key(b.tweet_id, b.code, b.fold)] = &b;
    }
    Matrix X;
    for (std::size_t r = 0; r < data.size(); ++r) {
        const auto& id = data.tweets[r].tweet_id;
        auto it = by_key.find(block_key(id, code, fold));
        if (it == by_key.end()) it = by_key.find(block_key(id, std::nullopt, std::nullopt));
        if (it == by_key.end()) {
            std::string what = "missing feature block " + space + " for tweet " + id;
            if (code) what += " (code " + std::string(code_name(*code)) + ")";
            if (fold) what += " (fold " + std::to_string(*fold) + ")";
            throw ValidationError(what);
        }
        const auto v = it->second->dense();
        if (r == 0) X = Matrix(data.size(), v.size());
        if (v.size() != X.cols) throw ValidationError("feature block " + space + ": inconsistent dimension");
        std::copy(v.begin(), v.end(), X.row(r).begin());
    }
    return X;
}

std::vector<std::uint8_t> take(std::span<const std::uint8_t> v, std::span<const std::size_t> rows) {
    std::vector<std::uint8_t> out;
    out.reserve(rows.size());
    for (auto r : rows) out.push_back(v[r]);
    return out;
}

std::vector<double> finite_only(std::span<const double> v) {
    std::vector<double> out;
    for (double x : v) {
        if (std::isfinite(x)) out.push_back(x);
    }
    return out;
}

double nan_mean(std::span<const double> v) {
    const auto f = finite_only(v);
    return f.empty() ? kNaN : mean(f);
}

double ci_half_width(std::span<const double> v) {
    const auto f = finite_only(v);
    if (f.size() < 2) return 0.0;
    return t_quantile_975(static_cast<int>(f.size()) - 1) * sample_sd(f) / std::sqrt(static_cast<double>(f.size()));
}

bool t_test_significant(std::span<const double> d) {
    std::vector<double> diffs;
    for (double x : d) {
        if (std::isfinite(x)) diffs.push_back(std::abs(x) <= kZeroDifference ? 0.0 : x);
    }
    if (diffs.size() < 2) return false;
    const double m = mean(diffs);
    const double sd = sample_sd(diffs);
    if (sd <= kZeroDifference) return std::abs(m) > kZeroDifference;
    const double t = m / (sd / std::sqrt(static_cast<double>(diffs.size())));
    return std::abs(t) > t_quantile_975(static_cast<int>(diffs.size()) - 1);
}

Json nan_to_null(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

Json vec_json(std::span<const double> v) {
    Json a = Json::array();
    for (double x : v) a.push_back(nan_to_null(x));
    return a;
}

std::vector<double> vec_from_json(const Json& j) {
    std::vector<double> out;
    for (const auto& x : j) out.push_back(x.is_null() ? kNaN : x.get<double>());
    return out;
}

double num_from_json(const Json& j) { return j.is_null() ? kNaN : j.get<double>(); }

std::string fmt_cell(double v) { return std::isfinite(v) ? fmt_fixed(v) : "-"; }

std::string resolve_path(const std::filesystem::path& base, const std::string& p) {
    const std::filesystem::path path(p);
    return path.is_absolute() ? path.string() : (base / path).lexically_normal().string();
}

learn::SvmParams rbf_params(const ExperimentConfig& config) {
    learn::SvmParams p;
    p.kind = learn::SvmKind::rbf;
    p.C = config.rbf_c;
    p.gamma = config.rbf_gamma;
    p.class_weight = learn::ClassWeight::balanced;
    return p;
}

learn::SvmParams linear_params(const ExperimentConfig& config, Code code) {
    learn::SvmParams p;
    p.kind = learn::SvmKind::linear;
    p.C = config.linguistic_c[index(code)];
    p.class_weight = learn::ClassWeight::balanced;
    return p;
}

// Inner calibration folds are shared by every model of a (code, fold), so
// fusing a single block reproduces the single-block model exactly.
std::uint64_t calibration_seed(const ExperimentConfig& config, Code code, int fold) {
    return derive_seed(config.seed, {hash_label("calibration"), code_key(code), fold_key(fold)});
}

}  // namespace

// ---------------------------------------------------------------------------
// Folds

int FoldAssignment::fold(const std::string& user_id) const {
    auto it = fold_of.find(user_id);
    if (it == fold_of.end()) throw ValidationError("user " + user_id + " has no fold");
    return it->second;
}

FoldAssignment make_folds(std::span<const UserStats> users, int k, std::uint64_t seed) {
    if (k < 2) throw ValidationError("need at least 2 folds");
    if (users.size() < static_cast<std::size_t>(k)) {
        throw ValidationError("fewer users (" + std::to_string(users.size()) + ") than folds (" +
                              std::to_string(k) + ")");
    }
    std::vector<const UserStats*> order;
    for (const auto& u : users) order.push_back(&u);
    std::sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->user_id < b->user_id; });
    for (std::size_t i = 1; i < order.size(); ++i) {
        if (order[i]->user_id == order[i - 1]->user_id) throw ValidationError("duplicate user " + order[i]->user_id);
    }
    Rng rng(seed);
    rng.shuffle(order);
    std::stable_sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->tweets > b->tweets; });

    constexpr std::size_t kStats = 1 + kNumCodes;
    auto stat = [](const UserStats& u, std::size_t s) {
        return static_cast<double>(s == 0 ? u.tweets : u.positives[s - 1]);
    };
    std::array<double, kStats> scale{};
    for (const auto& u : users) {
        for (std::size_t s = 0; s < kStats; ++s) scale[s] += stat(u, s);
    }
    for (auto& v : scale) v = std::max(v, 1.0);

    const auto K = static_cast<std::size_t>(k);
    std::vector<std::array<double, kStats>> totals(K, std::array<double, kStats>{});
    std::vector<std::size_t> members(K, 0);
    FoldAssignment out;
    out.k = k;
    out.seed = seed;
    std::size_t remaining = order.size();
    for (const auto* u : order) {
        const auto empty = static_cast<std::size_t>(std::count(members.begin(), members.end(), std::size_t{0}));
        const bool must_fill = empty > 0 && remaining <= empty;
        std::size_t best = K;
        double best_cost = std::numeric_limits<double>::infinity();
        for (std::size_t f = 0; f < K; ++f) {
            if (must_fill && members[f] != 0) continue;
            double cost = 0.0;
            for (std::size_t s = 0; s < kStats; ++s) {
                double sum = stat(*u, s);
                for (std::size_t g = 0; g < K; ++g) sum += totals[g][s];
                const double m = sum / static_cast<double>(K);
                double dev = 0.0;
                for (std::size_t g = 0; g < K; ++g) {
                    const double t = totals[g][s] + (g == f ? stat(*u, s) : 0.0);
                    dev += (t - m) * (t - m);
                }
                cost += dev / (scale[s] * scale[s]);
            }
            if (cost < best_cost) {
                best_cost = cost;
                best = f;
            }
        }
        for (std::size_t s = 0; s < kStats; ++s) totals[best][s] += stat(*u, s);
        ++members[best];
        --remaining;
        out.fold_of[u->user_id] = static_cast<int>(best);
    }
    return out;
}

Json to_json(const FoldAssignment& f) {
    Json users = Json::object();
    for (const auto& [u, fold] : f.fold_of) users[u] = fold;
    return Json{{"k", f.k}, {"seed", f.seed}, {"folds", users}};
}

FoldAssignment folds_from_json(const Json& j) {
    FoldAssignment f;
    try {
        f.k = j.at("k").get<int>();
        f.seed = j.value("seed", std::uint64_t{0});
        for (const auto& [u, v] : j.at("folds").items()) f.fold_of[u] = v.get<int>();
    } catch (const Json::exception& e) {
        throw ValidationError(std::string("folds: ") + e.what());
    }
    std::vector<int> seen(static_cast<std::size_t>(std::max(f.k, 0)), 0);
    for (const auto& [u, fold] : f.fold_of) {
        if (fold < 0 || fold >= f.k) throw ValidationError("folds: user " + u + " has fold out of range");
        ++seen[static_cast<std::size_t>(fold)];
    }
    for (int c : seen) {
        if (c == 0) throw ValidationError("folds: empty fold");
    }
    return f;
}

// ---------------------------------------------------------------------------
// Data

std::vector<std::uint8_t> ExperimentData::code_labels(Code code) const {
    std::vector<std::uint8_t> y;
    y.reserve(labels.size());
    for (const auto& l : labels) y.push_back(l[index(code)] ? 1 : 0);
    return y;
}

std::vector<UserStats> ExperimentData::user_stats() const {
    std::map<std::string, UserStats> by_user;
    for (std::size_t r = 0; r < tweets.size(); ++r) {
        auto& u = by_user[tweets[r].user_id];
        u.user_id = tweets[r].user_id;
        ++u.tweets;
        for (auto c : kAllCodes) u.positives[index(c)] += labels[r][index(c)] ? 1 : 0;
    }
    std::vector<UserStats> out;
    for (auto& [_, u] : by_user) out.push_back(std::move(u));
    return out;
}

ExperimentData ExperimentData::subset(std::span<const std::size_t> rows) const {
    ExperimentData out;
    for (auto r : rows) {
        out.tweets.push_back(tweets.at(r));
        out.labels.push_back(labels.at(r));
    }
    out.global = global;
    out.detections = detections;
    out.gt_boxes = gt_boxes;
    out.dal = dal;
    out.phrasebook = phrasebook;
    out.embeddings = embeddings;
    out.feature_blocks = feature_blocks;
    out.has_global = has_global;
    out.has_detections = has_detections;
    out.has_gt_boxes = has_gt_boxes;
    return out;
}

// ---------------------------------------------------------------------------
// Configuration

std::string_view fusion_name(Fusion f) {
    switch (f) {
        case Fusion::none: return "none";
        case Fusion::early: return "early";
        case Fusion::late: return "late";
    }
    return "none";
}

std::string_view modality_name(Modality m) {
    switch (m) {
        case Modality::baseline: return "baseline";
        case Modality::text: return "text";
        case Modality::image: return "image";
        case Modality::multimodal: return "multimodal";
    }
    return "baseline";
}

namespace {

Fusion parse_fusion(const std::string& s) {
    if (s == "none" || s == "-") return Fusion::none;
    if (s == "early") return Fusion::early;
    if (s == "late") return Fusion::late;
    throw ValidationError("unknown fusion '" + s + "'");
}

Modality parse_modality(const std::string& s) {
    if (s == "baseline") return Modality::baseline;
    if (s == "text") return Modality::text;
    if (s == "image") return Modality::image;
    if (s == "multimodal" || s == "image+text") return Modality::multimodal;
    throw ValidationError("unknown modality '" + s + "'");
}

}  // namespace

const std::vector<std::string>& known_spaces() {
    static const std::vector<std::string> spaces{kLinguistic, kCnnChar,   kCnnWord,   kGlobal,
                                                 kCounts01,   kCounts05, kGtConcepts};
    return spaces;
}

void ModelSpec::validate() const {
    if (name.empty()) throw ValidationError("model without a name");
    if (features.empty()) throw ValidationError("model " + name + ": no features");
    if (is_baseline()) {
        if (features.size() != 1 || (features[0] != kRandomBaseline && features[0] != kPositiveBaseline)) {
            throw ValidationError("model " + name + ": baseline must be random_baseline or positive_baseline");
        }
        return;
    }
    std::set<std::string> distinct(features.begin(), features.end());
    if (distinct.size() != features.size()) throw ValidationError("model " + name + ": repeated feature space");
    for (const auto& f : features) {
        if (!is_known_space(f)) throw ValidationError("model " + name + ": unknown feature space '" + f + "'");
    }
    if (fusion == Fusion::none && features.size() != 1) {
        throw ValidationError("model " + name + ": several feature spaces need a fusion mode");
    }
    if (fusion == Fusion::late && features.size() < 2) {
        throw ValidationError("model " + name + ": late fusion needs at least two feature spaces");
    }
    if (fusion != Fusion::none && distinct.contains(kGtConcepts)) {
        throw ValidationError("model " + name + ": ground-truth concepts cannot take part in fusion");
    }
    if (distinct.contains(kGtConcepts) && !out_of_competition) {
        throw ValidationError("model " + name + ": ground-truth concept model must be out of competition");
    }
}

std::vector<ModelSpec> default_roster() {
    using M = Modality;
    using F = Fusion;
    const std::vector<std::string> textual{kLinguistic, kCnnChar, kCnnWord};
    const std::vector<std::string> visual{kGlobal, kCounts01, kCounts05};
    std::vector<std::string> all = textual;
    all.insert(all.end(), visual.begin(), visual.end());
    return {
        {kRandomBaseline, "- (random baseline)", M::baseline, {kRandomBaseline}, F::none, false},
        {kPositiveBaseline, "- (positive baseline)", M::baseline, {kPositiveBaseline}, F::none, false},
        {"linguistic", "linguistic features", M::text, {kLinguistic}, F::none, false},
        {"cnn_char", "CNN-char", M::text, {kCnnChar}, F::none, false},
        {"cnn_word", "CNN-word", M::text, {kCnnWord}, F::none, false},
        {"text_early", "all textual", M::text, textual, F::early, false},
        {"text_late", "all textual", M::text, textual, F::late, false},
        {"global", "inception global", M::image, {kGlobal}, F::none, false},
        {"counts@0.1", "Faster R-CNN local (0.1)", M::image, {kCounts01}, F::none, false},
        {"counts@0.5", "Faster R-CNN local (0.5)", M::image, {kCounts05}, F::none, false},
        {"visual_early", "all visual", M::image, visual, F::early, false},
        {"visual_late", "all visual", M::image, visual, F::late, false},
        {"multimodal_early", "all textual + visual", M::multimodal, all, F::early, false},
        {"multimodal_late", "all textual + visual", M::multimodal, all, F::late, false},
        {"gt_concepts", "ground-truth local (out of competition)", M::image, {kGtConcepts}, F::none, true},
    };
}

ModelSpec roster_model(const std::string& name) {
    for (auto& m : default_roster()) {
        if (m.name == name) return m;
    }
    throw ValidationError("unknown model '" + name + "'");
}

void ExperimentConfig::validate() const {
    if (n_folds < 2) throw ValidationError("folds must be >= 2");
    if (anova_k < 1) throw ValidationError("linguistic.k must be >= 1");
    if (min_df < 1) throw ValidationError("linguistic.min_df must be >= 1");
    for (double c : linguistic_c) {
        if (!(c > 0.0)) throw ValidationError("linguistic C must be positive");
    }
    if (!(rbf_c > 0.0)) throw ValidationError("rbf.C must be positive");
    if (rbf_gamma && !(*rbf_gamma > 0.0)) throw ValidationError("rbf.gamma must be positive");
    if (calibration_folds < 2) throw ValidationError("calibration_folds must be >= 2");
    cnn_word.validate();
    cnn_char.validate();
    if (models.empty()) throw ValidationError("empty model roster");
    std::set<std::string> names;
    for (const auto& m : models) {
        m.validate();
        if (!names.insert(m.name).second) throw ValidationError("duplicate model name " + m.name);
    }
    for (const auto& [space, _] : feature_block_files) {
        if (!is_known_space(space)) throw ValidationError("feature_blocks: unknown space '" + space + "'");
    }
}

ExperimentConfig config_from_json(const Json& j, const std::filesystem::path& base_dir) {
    static const std::set<std::string> allowed{"data",  "feature_blocks", "seed",      "folds",
                                               "label_rule", "linguistic", "rbf", "calibration_folds",
                                               "cnn_word", "cnn_char", "significance", "models", "early_fusion",
                                               "synthetic", "iou_threshold"};
    if (!j.is_object()) throw ValidationError("config must be a JSON object");
    for (const auto& [key, _] : j.items()) {
        if (!allowed.contains(key)) throw ValidationError("config: unknown key '" + key + "'");
    }
    ExperimentConfig c;
    c.base_dir = base_dir;
    try {
        if (j.contains("data")) {
            const auto& d = j.at("data");
            c.tweets = d.value("tweets", c.tweets);
            c.annotations = d.value("annotations", c.annotations);
            c.global_features = d.value("global_features", c.global_features);
            c.detections = d.value("detections", c.detections);
            c.gt_boxes = d.value("gt_boxes", c.gt_boxes);
            c.dal = d.value("dal", c.dal);
            c.phrasebook = d.value("phrasebook", c.phrasebook);
            if (d.contains("embeddings")) c.embeddings = d.at("embeddings").get<std::string>();
            if (d.contains("folds")) c.folds_file = d.at("folds").get<std::string>();
        }
        if (j.contains("feature_blocks")) {
            for (const auto& [space, path] : j.at("feature_blocks").items()) {
                c.feature_block_files[space] = path.get<std::string>();
            }
        }
        c.seed = j.value("seed", c.seed);
        c.n_folds = j.value("folds", c.n_folds);
        if (j.contains("label_rule")) {
            const auto name = j.at("label_rule").get<std::string>();
            auto rule = corpus::parse_rule(name);
            if (!rule) throw ValidationError("unknown label_rule '" + name + "'");
            c.label_rule = *rule;
        }
        if (j.contains("linguistic")) {
            const auto& l = j.at("linguistic");
            c.anova_k = l.value("k", c.anova_k);
            c.min_df = l.value("min_df", c.min_df);
            c.binary_ngrams = l.value("binary_ngrams", c.binary_ngrams);
            if (l.contains("C")) {
                for (const auto& [code, v] : l.at("C").items()) {
                    auto parsed = parse_code(code);
                    if (!parsed) throw ValidationError("linguistic.C: unknown code '" + code + "'");
                    c.linguistic_c[index(*parsed)] = v.get<double>();
                }
            }
        }
        if (j.contains("rbf")) {
            const auto& r = j.at("rbf");
            c.rbf_c = r.value("C", c.rbf_c);
            if (r.contains("gamma") && !r.at("gamma").is_null()) c.rbf_gamma = r.at("gamma").get<double>();
        }
        c.calibration_folds = j.value("calibration_folds", c.calibration_folds);
        if (j.contains("early_fusion")) {
            c.early_block_weighting = j.at("early_fusion").value("block_weighting", c.early_block_weighting);
        }
        if (j.contains("cnn_word")) c.cnn_word = textcnn::config_from_json(j.at("cnn_word"), textcnn::Level::word);
        if (j.contains("cnn_char")) {
            c.cnn_char = textcnn::config_from_json(j.at("cnn_char"), textcnn::Level::character);
        }
        if (j.contains("significance")) {
            const auto s = j.at("significance").get<std::string>();
            if (s == "paired_t") c.significance = Significance::paired_t;
            else if (s == "ci_overlap") c.significance = Significance::ci_overlap;
            else throw ValidationError("unknown significance method '" + s + "'");
        }
        if (j.contains("models")) {
            c.models.clear();
            for (const auto& m : j.at("models")) {
                if (m.is_string()) {
                    c.models.push_back(roster_model(m.get<std::string>()));
                    continue;
                }
                ModelSpec spec;
                spec.name = m.at("name").get<std::string>();
                spec.label = m.value("label", spec.name);
                spec.modality = parse_modality(m.value("modality", std::string("text")));
                spec.features = m.at("features").get<std::vector<std::string>>();
                spec.fusion = parse_fusion(m.value("fusion", std::string("none")));
                spec.out_of_competition = m.value("out_of_competition", false);
                c.models.push_back(std::move(spec));
            }
        }
    } catch (const Json::exception& e) {
        throw ValidationError(std::string("config: ") + e.what());
    }
    c.validate();
    return c;
}

Json to_json(const ExperimentConfig& c) {
    Json models = Json::array();
    for (const auto& m : c.models) {
        models.push_back(Json{{"name", m.name},
                              {"label", m.label},
                              {"modality", std::string(modality_name(m.modality))},
                              {"features", m.features},
                              {"fusion", std::string(fusion_name(m.fusion))},
                              {"out_of_competition", m.out_of_competition}});
    }
    Json lin_c = Json::object();
    for (auto code : kAllCodes) lin_c[std::string(code_name(code))] = c.linguistic_c[index(code)];
    return Json{{"seed", c.seed},
                {"folds", c.n_folds},
                {"label_rule", std::string(corpus::rule_name(c.label_rule))},
                {"linguistic", {{"k", c.anova_k}, {"min_df", c.min_df}, {"binary_ngrams", c.binary_ngrams}, {"C", lin_c}}},
                {"rbf", {{"C", c.rbf_c}, {"gamma", c.rbf_gamma ? Json(*c.rbf_gamma) : Json(nullptr)}}},
                {"calibration_folds", c.calibration_folds},
                {"early_fusion", {{"block_weighting", c.early_block_weighting}}},
                {"cnn_word", textcnn::to_json(c.cnn_word)},
                {"cnn_char", textcnn::to_json(c.cnn_char)},
                {"significance", c.significance == Significance::paired_t ? "paired_t" : "ci_overlap"},
                {"models", models}};
}

ExperimentConfig load_config(const std::string& path) {
    Json j;
    try {
        j = Json::parse(read_text_file(path));
    } catch (const Json::parse_error& e) {
        throw ValidationError("config " + path + ": " + e.what());
    }
    return config_from_json(j, std::filesystem::path(path).parent_path());
}

namespace {

ExperimentData labeled_tweets(corpus::Corpus corpus, corpus::LabelRule rule) {
    std::set<std::string> annotated;
    for (const auto& a : corpus.annotations) annotated.insert(a.tweet_id);
    ExperimentData data;
    std::vector<std::string> ids;
    for (auto& t : corpus.tweets) {
        if (!annotated.contains(t.tweet_id)) continue;
        ids.push_back(t.tweet_id);
        data.tweets.push_back(std::move(t));
    }
    for (const auto& l : corpus::derive_labels(ids, corpus.annotations, rule)) data.labels.push_back(l.labels);
    if (data.tweets.empty()) throw ValidationError("no annotated tweets");
    return data;
}

}  // namespace

ExperimentData build_data(const corpus::Corpus& corpus, std::vector<imfeat::GlobalFeature> global,
                          std::span<const ConceptDetection> detections, std::span<const ConceptBox> gt_boxes,
                          corpus::LabelRule rule) {
    auto data = labeled_tweets(corpus, rule);
    data.has_global = !global.empty();
    data.global = imfeat::GlobalFeatureTable(std::move(global));
    data.has_detections = true;
    data.detections = imfeat::group_by_image<ConceptDetection>(detections);
    data.has_gt_boxes = true;
    data.gt_boxes = imfeat::group_by_image<ConceptBox>(gt_boxes);
    return data;
}

ExperimentData load_data(const ExperimentConfig& config) {
    const auto path = [&](const std::string& p) { return resolve_path(config.base_dir, p); };
    auto data = labeled_tweets(corpus::load_corpus(path(config.tweets), path(config.annotations)), config.label_rule);

    if (std::filesystem::exists(path(config.global_features))) {
        data.global = imfeat::load_global(path(config.global_features));
        data.has_global = true;
    }
    if (std::filesystem::exists(path(config.detections))) {
        const auto dets = imfeat::load_detections(path(config.detections));
        data.detections = imfeat::group_by_image<ConceptDetection>(dets);
        data.has_detections = true;
    }
    if (std::filesystem::exists(path(config.gt_boxes))) {
        const auto boxes = imfeat::load_gt_boxes(path(config.gt_boxes));
        data.gt_boxes = imfeat::group_by_image<ConceptBox>(boxes);
        data.has_gt_boxes = true;
    }
    if (std::filesystem::exists(path(config.dal))) {
        data.dal = lingfeat::load_dal(path(config.dal));
    } else {
        log_warning("no DAL at " + path(config.dal) + "; affect features will be zero");
    }
    if (std::filesystem::exists(path(config.phrasebook))) {
        std::vector<std::string> warnings;
        data.phrasebook = lingfeat::load_phrasebook(path(config.phrasebook), &data.dal, &warnings);
        for (const auto& w : warnings) log_warning(w);
    }
    if (config.embeddings) data.embeddings = textcnn::load_embeddings(path(*config.embeddings));
    for (const auto& [space, file] : config.feature_block_files) {
        data.feature_blocks[space] = load_feature_blocks(path(file));
    }
    return data;
}

// ---------------------------------------------------------------------------
// Fold-level fitting

FoldSplit fold_split(const ExperimentData& data, const FoldAssignment& folds, int fold) {
    FoldSplit s;
    s.fold = fold;
    // Rows in tweet-id order, so nothing downstream depends on input order.
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return data.tweets[a].tweet_id < data.tweets[b].tweet_id; });
    std::set<std::string> train_users;
    for (auto r : order) {
        const auto& u = data.tweets[r].user_id;
        if (folds.fold(u) == fold) {
            s.test.push_back(r);
        } else {
            s.train.push_back(r);
            train_users.insert(u);
        }
    }
    std::map<std::string, std::size_t> rank;
    for (const auto& u : train_users) rank.emplace(u, rank.size());
    for (auto r : s.train) s.train_groups.push_back(rank.at(data.tweets[r].user_id));
    return s;
}

Matrix static_features(const ExperimentData& data, const std::string& space) {
    if (data.feature_blocks.contains(space)) return matrix_from_blocks(data, space, std::nullopt, std::nullopt);
    const std::size_t n = data.size();
    if (space == kGlobal) {
        if (!data.has_global) throw ValidationError("missing feature block global: no global feature file");
        Matrix X(n, data.global.dim());
        for (std::size_t r = 0; r < n; ++r) {
            const auto v = data.global.lookup(data.tweets[r].image_id);
            std::copy(v.begin(), v.end(), X.row(r).begin());
        }
        return X;
    }
    Matrix X(n, kNumConcepts);
    if (auto t = counts_threshold(space)) {
        if (!data.has_detections) throw ValidationError("missing feature block " + space + ": no detection file");
        for (std::size_t r = 0; r < n; ++r) {
            const auto& img = data.tweets[r].image_id;
            if (!img) continue;
            auto it = data.detections.find(*img);
            if (it == data.detections.end()) continue;
            const auto v = imfeat::concept_counts(it->second, *t);
            std::copy(v.begin(), v.end(), X.row(r).begin());
        }
        return X;
    }
    if (space == kGtConcepts) {
        if (!data.has_gt_boxes) throw ValidationError("missing feature block gt_concepts: no ground-truth box file");
        for (std::size_t r = 0; r < n; ++r) {
            const auto& img = data.tweets[r].image_id;
            if (!img) continue;
            auto it = data.gt_boxes.find(*img);
            if (it == data.gt_boxes.end()) continue;
            const auto v = imfeat::gt_concept_counts(it->second);
            std::copy(v.begin(), v.end(), X.row(r).begin());
        }
        return X;
    }
    throw ValidationError("missing feature block " + space);
}

void LinguisticFold::hash_into(StateHasher& h) const {
    h.str("linguistic").u64(dim).u64(vocab.size());
    for (const auto& [key, col] : vocab.columns()) h.str(key.to_string()).u64(col);
}

LinguisticFold fit_linguistic(const ExperimentData& data, std::span<const std::size_t> train,
                              const ExperimentConfig& config) {
    LinguisticFold out;
    std::vector<std::vector<lingfeat::Token>> tokens(data.size());
    for (std::size_t r = 0; r < data.size(); ++r) tokens[r] = lingfeat::tokenize(data.tweets[r].text);
    auto pos_of = [&](std::size_t r) -> const lingfeat::PosTags* {
        const auto& p = data.tweets[r].pos_tags;
        return p ? &*p : nullptr;
    };
    std::vector<lingfeat::VocabDocument> docs;
    docs.reserve(train.size());
    for (auto r : train) docs.push_back({tokens[r], pos_of(r)});
    lingfeat::LinguisticFeaturizer featurizer;
    featurizer.vocab = lingfeat::build_vocab(docs, config.min_df);
    featurizer.dal = &data.dal;
    featurizer.phrasebook = &data.phrasebook;
    featurizer.binary_ngrams = config.binary_ngrams;
    out.dim = featurizer.dim();
    out.rows.reserve(data.size());
    for (std::size_t r = 0; r < data.size(); ++r) out.rows.push_back(featurizer.featurize(tokens[r], pos_of(r)));
    out.vocab = std::move(featurizer.vocab);
    return out;
}

SelectedLinguistic select_linguistic(const LinguisticFold& ling, std::span<const std::size_t> train,
                                     std::span<const std::uint8_t> labels, std::size_t k) {
    std::vector<SparseVector> train_rows;
    train_rows.reserve(train.size());
    for (auto r : train) train_rows.push_back(ling.rows[r]);
    const auto y = take(labels, train);
    const auto f = learn::anova_f_scores(train_rows, ling.dim, y);
    SelectedLinguistic out;
    out.columns = learn::anova_f_select(f, k);
    std::vector<std::ptrdiff_t> position(ling.dim, -1);
    for (std::size_t c = 0; c < out.columns.size(); ++c) position[out.columns[c]] = static_cast<std::ptrdiff_t>(c);
    out.matrix = Matrix(ling.rows.size(), out.columns.size());
    for (std::size_t r = 0; r < ling.rows.size(); ++r) {
        const auto& row = ling.rows[r];
        for (std::size_t i = 0; i < row.nnz(); ++i) {
            const auto p = position[row.indices[i]];
            if (p >= 0) out.matrix(r, static_cast<std::size_t>(p)) = row.values[i];
        }
    }
    return out;
}

CnnFold fit_cnn(const ExperimentData& data, std::span<const std::size_t> train, Code code, int fold,
                textcnn::Level level, const ExperimentConfig& config) {
    auto cfg = level == textcnn::Level::word ? config.cnn_word : config.cnn_char;
    const std::string space = level == textcnn::Level::word ? kCnnWord : kCnnChar;
    cfg.seed = derive_seed(config.seed, {hash_label(space), code_key(code), fold_key(fold)});
    std::vector<textcnn::TrainingExample> examples;
    examples.reserve(train.size());
    for (auto r : train) {
        examples.push_back({data.tweets[r].text, data.tweets[r].user_id, data.labels[r][index(code)]});
    }
    const textcnn::EmbeddingTable* pretrained =
        level == textcnn::Level::word && data.embeddings ? &*data.embeddings : nullptr;
    CnnFold out;
    out.model = textcnn::train_textcnn(examples, cfg, pretrained);
    out.model.info().code = std::string(code_name(code));
    out.model.info().fold = fold;
    out.features = Matrix(data.size(), out.model.feature_dim());
    for (std::size_t r = 0; r < data.size(); ++r) {
        const auto v = out.model.extract_features(data.tweets[r].text);
        std::copy(v.begin(), v.end(), out.features.row(r).begin());
    }
    return out;
}

std::vector<double> BlockModel::probabilities(const Matrix& X) const {
    std::vector<double> out(X.rows);
    std::vector<double> row(X.cols);
    for (std::size_t r = 0; r < X.rows; ++r) {
        const auto src = X.row(r);
        std::copy(src.begin(), src.end(), row.begin());
        if (standardizer) standardizer->apply_in_place(row);
        out[r] = classifier.probability(row);
    }
    return out;
}

std::vector<double> BlockModel::decisions(const Matrix& X) const {
    std::vector<double> out(X.rows);
    std::vector<double> row(X.cols);
    for (std::size_t r = 0; r < X.rows; ++r) {
        const auto src = X.row(r);
        std::copy(src.begin(), src.end(), row.begin());
        if (standardizer) standardizer->apply_in_place(row);
        out[r] = classifier.svm.decision(row);
    }
    return out;
}

void BlockModel::hash_into(StateHasher& h) const {
    h.u64(linear ? 1 : 0);
    if (standardizer) standardizer->hash_into(h);
    classifier.hash_into(h);
}

BlockModel fit_block(const Matrix& X_train, std::span<const std::uint8_t> y_train,
                     std::span<const std::size_t> groups, const learn::SvmParams& params, std::uint64_t seed,
                     std::size_t calibration_folds, bool linear) {
    BlockModel m;
    m.linear = linear;
    if (linear) {
        m.classifier = learn::fit_calibrated_svm(X_train, y_train, params, seed, groups, calibration_folds);
        return m;
    }
    m.standardizer = learn::fit_standardizer(X_train);
    m.classifier =
        learn::fit_calibrated_svm(m.standardizer->apply(X_train), y_train, params, seed, groups, calibration_folds);
    return m;
}

BlockModel fit_early_fusion(const Matrix& X_train, std::span<const std::uint8_t> y_train,
                            std::span<const std::size_t> groups, std::span<const std::size_t> block_widths,
                            bool block_weighting, const learn::SvmParams& params, std::uint64_t seed,
                            std::size_t calibration_folds) {
    if (std::accumulate(block_widths.begin(), block_widths.end(), std::size_t{0}) != X_train.cols) {
        throw std::invalid_argument("fit_early_fusion: block widths do not cover X");
    }
    BlockModel m;
    m.standardizer = learn::fit_standardizer(X_train);
    if (block_weighting && block_widths.size() >= 2) {
        std::size_t at = 0;
        for (auto w : block_widths) {
            const double scale = std::sqrt(static_cast<double>(w));
            for (std::size_t c = at; c < at + w; ++c) m.standardizer->sd[c] *= scale;
            at += w;
        }
    }
    m.classifier =
        learn::fit_calibrated_svm(m.standardizer->apply(X_train), y_train, params, seed, groups, calibration_folds);
    return m;
}

std::string FoldState::hash() const {
    StateHasher h;
    if (linguistic) linguistic->hash_into(h);
    for (const auto& [code, sel] : selected) h.str("selected").u64(code_key(code)).indices(sel.columns);
    for (const auto& [key, cnn] : cnn) {
        h.str("cnn").u64(code_key(key.first)).str(key.second);
        cnn.model.hash_into(h);
    }
    for (const auto& [key, b] : blocks) {
        h.str("block").u64(code_key(key.first)).str(key.second);
        b.hash_into(h);
    }
    for (const auto& [key, b] : fusion) {
        h.str("fusion").u64(code_key(key.first)).str(key.second);
        b.hash_into(h);
    }
    return h.hex_digest();
}

TaskRunner serial_runner() {
    return [](std::vector<std::function<void()>>& tasks) {
        for (auto& t : tasks) t();
    };
}

TaskRunner thread_runner(int jobs) {
    if (jobs <= 1) return serial_runner();
    return [jobs](std::vector<std::function<void()>>& tasks) {
        if (tasks.size() <= 1) {
            for (auto& t : tasks) t();
            return;
        }
        std::atomic<std::size_t> next{0};
        std::vector<std::exception_ptr> errors(tasks.size());
        auto worker = [&] {
            for (std::size_t i = next++; i < tasks.size(); i = next++) {
                try {
                    tasks[i]();
                } catch (...) {
                    errors[i] = std::current_exception();
                }
            }
        };
        const auto n = std::min<std::size_t>(static_cast<std::size_t>(jobs), tasks.size());
        std::vector<std::thread> pool;
        for (std::size_t i = 0; i < n; ++i) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
        // Lowest task index wins so the reported failure does not depend on timing.
        for (auto& e : errors) {
            if (e) std::rethrow_exception(e);
        }
    };
}

FoldPrediction run_baseline(const std::string& kind, std::span<const std::uint8_t> train_labels,
                            std::size_t n_test, std::uint64_t seed) {
    FoldPrediction p;
    if (kind == kPositiveBaseline) {
        p.scores.assign(n_test, 1.0);
        p.predictions.assign(n_test, 1);
        return p;
    }
    if (kind != kRandomBaseline) throw ValidationError("unknown baseline '" + kind + "'");
    if (train_labels.empty()) throw TrainingError("random baseline: no training labels");
    const double prior = static_cast<double>(std::count(train_labels.begin(), train_labels.end(), std::uint8_t{1})) /
                         static_cast<double>(train_labels.size());
    Rng rng(seed);
    p.predictions.reserve(n_test);
    for (std::size_t i = 0; i < n_test; ++i) p.predictions.push_back(rng.bernoulli(prior) ? 1 : 0);
    p.scores.reserve(n_test);
    for (std::size_t i = 0; i < n_test; ++i) p.scores.push_back(rng.uniform());
    return p;
}

FoldOutcome run_fold(const ExperimentData& data, const FoldSplit& split, const ExperimentConfig& config,
                     const TaskRunner& runner) {
    const int fold = split.fold;
    FoldOutcome out;

    // Which spaces are needed, and which need a standalone block model.
    std::set<std::string> spaces;
    std::set<std::string> block_spaces;
    for (const auto& m : config.models) {
        if (m.is_baseline()) continue;
        spaces.insert(m.features.begin(), m.features.end());
        if (m.fusion != Fusion::early) block_spaces.insert(m.features.begin(), m.features.end());
    }

    std::map<std::string, Matrix> fixed;
    for (const auto& s : spaces) {
        if (s != kLinguistic && !is_cnn_space(s)) fixed.emplace(s, static_features(data, s));
    }

    PerCode<std::vector<std::uint8_t>> labels;
    PerCode<std::vector<std::uint8_t>> train_y;
    for (auto code : kAllCodes) {
        labels[index(code)] = data.code_labels(code);
        train_y[index(code)] = take(labels[index(code)], split.train);
    }

    // Phase 1: vocabulary, CNNs.
    FoldState& state = out.state;
    std::vector<std::function<void()>> tasks;
    const bool use_ling = spaces.contains(kLinguistic);
    const bool ling_from_blocks = data.feature_blocks.contains(kLinguistic);
    if (use_ling) {
        state.linguistic.emplace();
        if (ling_from_blocks) {
            const auto M = matrix_from_blocks(data, kLinguistic, std::nullopt, fold);
            state.linguistic->dim = M.cols;
            for (std::size_t r = 0; r < M.rows; ++r) state.linguistic->rows.push_back(SparseVector::from_dense(M.row(r)));
        } else {
            tasks.push_back([&] { *state.linguistic = fit_linguistic(data, split.train, config); });
        }
    }
    std::map<std::pair<Code, std::string>, Matrix> cnn_from_blocks;
    for (const auto& s : spaces) {
        if (!is_cnn_space(s)) continue;
        for (auto code : kAllCodes) {
            if (data.feature_blocks.contains(s)) {
                cnn_from_blocks.emplace(std::pair{code, s}, matrix_from_blocks(data, s, code, fold));
                continue;
            }
            auto& slot = state.cnn[{code, s}];
            tasks.push_back([&, code, s] {
                slot = fit_cnn(data, split.train, code, fold, cnn_level(s), config);
            });
        }
    }
    runner(tasks);
    tasks.clear();

    // Phase 2: per-code selection.
    if (use_ling) {
        for (auto code : kAllCodes) {
            auto& slot = state.selected[code];
            tasks.push_back([&, code] {
                slot = select_linguistic(*state.linguistic, split.train, labels[index(code)], config.anova_k);
            });
        }
    }
    runner(tasks);
    tasks.clear();

    auto matrix = [&](Code code, const std::string& s) -> const Matrix& {
        if (s == kLinguistic) return state.selected.at(code).matrix;
        if (is_cnn_space(s)) {
            auto it = cnn_from_blocks.find({code, s});
            return it != cnn_from_blocks.end() ? it->second : state.cnn.at({code, s}).features;
        }
        return fixed.at(s);
    };

    // Phase 3: one calibrated model per (code, space) and per early-fusion model.
    std::map<std::pair<Code, std::string>, Matrix> early_inputs;
    for (auto code : kAllCodes) {
        const auto seed = calibration_seed(config, code, fold);
        const auto& y = train_y[index(code)];
        for (const auto& s : block_spaces) {
            auto& slot = state.blocks[{code, s}];
            tasks.push_back([&, code, s, seed] {
                const bool linear = s == kLinguistic;
                const auto params = linear ? linear_params(config, code) : rbf_params(config);
                slot = fit_block(matrix(code, s).select_rows(split.train), y, split.train_groups, params, seed,
                                 config.calibration_folds, linear);
            });
        }
        for (const auto& m : config.models) {
            if (m.fusion != Fusion::early) continue;
            std::vector<const Matrix*> parts;
            std::vector<std::size_t> widths;
            for (const auto& s : m.features) {
                parts.push_back(&matrix(code, s));
                widths.push_back(parts.back()->cols);
            }
            auto& X = early_inputs[{code, m.name}] = Matrix::hconcat(parts);
            auto& slot = state.fusion[{code, m.name}];
            tasks.push_back([&, seed, widths] {
                slot = fit_early_fusion(X.select_rows(split.train), y, split.train_groups, widths,
                                        config.early_block_weighting, rbf_params(config), seed,
                                        config.calibration_folds);
            });
        }
    }
    runner(tasks);
    tasks.clear();

    // Phase 4: late-fusion meta models on out-of-fold block probabilities.
    std::map<std::pair<Code, std::string>, Matrix> meta_test;
    for (auto code : kAllCodes) {
        const auto seed = calibration_seed(config, code, fold);
        for (const auto& m : config.models) {
            if (m.fusion != Fusion::late) continue;
            auto& slot = state.fusion[{code, m.name}];
            auto& test_X = meta_test[{code, m.name}] = Matrix(split.test.size(), m.features.size());
            tasks.push_back([&, code, seed] {
                Matrix train_X(split.train.size(), m.features.size());
                for (std::size_t k = 0; k < m.features.size(); ++k) {
                    const auto& block = state.blocks.at({code, m.features[k]});
                    const auto& oof = block.classifier.training_probabilities;
                    for (std::size_t r = 0; r < split.train.size(); ++r) train_X(r, k) = oof[r];
                    const auto p = block.probabilities(matrix(code, m.features[k]).select_rows(split.test));
                    for (std::size_t r = 0; r < split.test.size(); ++r) test_X(r, k) = p[r];
                }
                slot = fit_block(train_X, train_y[index(code)], split.train_groups, rbf_params(config), seed,
                                 config.calibration_folds, false);
            });
        }
    }
    runner(tasks);
    tasks.clear();

    // Predictions on the test rows.
    out.predictions.resize(config.models.size());
    for (std::size_t mi = 0; mi < config.models.size(); ++mi) {
        const auto& m = config.models[mi];
        for (auto code : kAllCodes) {
            auto& pred = out.predictions[mi][index(code)];
            if (m.is_baseline()) {
                const auto seed = derive_seed(config.seed, {hash_label(m.name), code_key(code), fold_key(fold)});
                pred = run_baseline(m.features[0], train_y[index(code)], split.test.size(), seed);
                continue;
            }
            if (split.test.empty()) continue;
            if (m.fusion == Fusion::none && m.features[0] == kLinguistic) {
                // Linear SVM: rank by margin, predict by its sign.
                pred.scores = state.blocks.at({code, kLinguistic}).decisions(matrix(code, kLinguistic).select_rows(split.test));
                for (double s : pred.scores) pred.predictions.push_back(s > 0.0 ? 1 : 0);
                continue;
            }
            if (m.fusion == Fusion::none) {
                pred.scores = state.blocks.at({code, m.features[0]}).probabilities(matrix(code, m.features[0]).select_rows(split.test));
            } else if (m.fusion == Fusion::early) {
                pred.scores = state.fusion.at({code, m.name}).probabilities(early_inputs.at({code, m.name}).select_rows(split.test));
            } else {
                pred.scores = state.fusion.at({code, m.name}).probabilities(meta_test.at({code, m.name}));
            }
            for (double s : pred.scores) pred.predictions.push_back(s > 0.5 ? 1 : 0);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Evaluation

double t_quantile_975(int df) {
    if (df < 1) throw std::invalid_argument("t quantile needs df >= 1");
    return boost::math::quantile(boost::math::students_t(static_cast<double>(df)), 0.975);
}

bool paired_significant(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw ValidationError("paired test: unequal fold counts");
    std::vector<double> d(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
    return t_test_significant(d);
}

bool one_sample_significant(std::span<const double> d) { return t_test_significant(d); }

Marks significance_marks(const std::vector<std::vector<double>>& per_fold, const std::vector<bool>& eligible,
                         Significance method) {
    if (per_fold.size() != eligible.size()) throw std::invalid_argument("significance_marks: size mismatch");
    Marks marks;
    marks.not_worse.assign(per_fold.size(), false);
    if (per_fold.empty()) return marks;
    for (const auto& v : per_fold) {
        if (v.size() != per_fold.front().size()) throw ValidationError("significance: unequal fold counts");
    }
    std::vector<double> means;
    for (const auto& v : per_fold) means.push_back(nan_mean(v));
    bool found = false;
    for (std::size_t i = 0; i < per_fold.size(); ++i) {
        if (!eligible[i] || !std::isfinite(means[i])) continue;
        if (!found || means[i] > means[marks.best]) {
            marks.best = i;
            found = true;
        }
    }
    if (!found) return marks;
    const auto& best = per_fold[marks.best];
    for (std::size_t i = 0; i < per_fold.size(); ++i) {
        if (!std::isfinite(means[i])) continue;
        if (i == marks.best || means[i] >= means[marks.best]) {
            marks.not_worse[i] = true;
            continue;
        }
        if (method == Significance::paired_t) {
            // Folds where either AP is undefined drop out of the pairing.
            std::vector<double> a, b;
            for (std::size_t f = 0; f < best.size(); ++f) {
                if (std::isfinite(per_fold[i][f]) && std::isfinite(best[f])) {
                    a.push_back(per_fold[i][f]);
                    b.push_back(best[f]);
                }
            }
            marks.not_worse[i] = !paired_significant(a, b);
        } else {
            marks.not_worse[i] = means[i] + ci_half_width(per_fold[i]) >= means[marks.best] - ci_half_width(best);
        }
    }
    return marks;
}

EvalReport run_experiment(const ExperimentData& data, const FoldAssignment& folds, const ExperimentConfig& config,
                          const TaskRunner& runner) {
    config.validate();
    EvalReport report;
    report.seed = config.seed;
    report.n_folds = folds.k;
    report.label_rule = std::string(corpus::rule_name(config.label_rule));
    report.significance = config.significance == Significance::paired_t ? "paired_t" : "ci_overlap";
    const std::size_t n_models = config.models.size();
    report.models.resize(n_models);
    for (std::size_t mi = 0; mi < n_models; ++mi) report.models[mi].spec = config.models[mi];

    PerCode<std::vector<std::uint8_t>> labels;
    for (auto code : kAllCodes) labels[index(code)] = data.code_labels(code);

    for (int f = 0; f < folds.k; ++f) {
        const auto split = fold_split(data, folds, f);
        log_info("fold " + std::to_string(f) + ": " + std::to_string(split.train.size()) + " train / " +
                 std::to_string(split.test.size()) + " test tweets");
        const auto outcome = run_fold(data, split, config, runner);
        for (std::size_t mi = 0; mi < n_models; ++mi) {
            for (auto code : kAllCodes) {
                const auto& p = outcome.predictions[mi][index(code)];
                const auto y = take(labels[index(code)], split.test);
                const auto m = classification_metrics(p.scores, p.predictions, y);
                auto& s = report.models[mi].codes[index(code)];
                s.precision.push_back(m.precision);
                s.recall.push_back(m.recall);
                s.f1.push_back(m.f1);
                s.ap.push_back(m.average_precision.value_or(kNaN));
            }
        }
    }

    for (auto& r : report.models) {
        for (auto code : kAllCodes) {
            auto& s = r.codes[index(code)];
            s.mean_precision = nan_mean(s.precision);
            s.mean_recall = nan_mean(s.recall);
            s.mean_f1 = nan_mean(s.f1);
            s.mean_ap = nan_mean(s.ap);
            s.ci_precision = ci_half_width(s.precision);
            s.ci_recall = ci_half_width(s.recall);
            s.ci_f1 = ci_half_width(s.f1);
            s.ci_ap = ci_half_width(s.ap);
        }
        r.map = 0.0;
        for (auto code : kAllCodes) r.map += r.codes[index(code)].mean_ap;
        r.map /= static_cast<double>(kNumCodes);
        r.map_folds.assign(static_cast<std::size_t>(folds.k), 0.0);
        for (std::size_t f = 0; f < r.map_folds.size(); ++f) {
            std::vector<double> aps;
            for (auto code : kAllCodes) aps.push_back(r.codes[index(code)].ap[f]);
            r.map_folds[f] = nan_mean(aps);
        }
        r.ci_map = ci_half_width(r.map_folds);
    }

    std::vector<bool> eligible;
    for (const auto& r : report.models) eligible.push_back(!r.spec.out_of_competition);
    for (auto code : kAllCodes) {
        std::vector<std::vector<double>> aps;
        for (const auto& r : report.models) aps.push_back(r.codes[index(code)].ap);
        const auto marks = significance_marks(aps, eligible, config.significance);
        for (std::size_t mi = 0; mi < n_models; ++mi) {
            auto& s = report.models[mi].codes[index(code)];
            s.best = mi == marks.best && eligible[mi];
            s.not_significantly_worse = marks.not_worse[mi];
        }
    }
    std::vector<std::vector<double>> maps;
    for (const auto& r : report.models) maps.push_back(r.map_folds);
    const auto marks = significance_marks(maps, eligible, config.significance);
    for (std::size_t mi = 0; mi < n_models; ++mi) {
        report.models[mi].map_best = mi == marks.best && eligible[mi];
        report.models[mi].map_not_significantly_worse = marks.not_worse[mi];
    }
    return report;
}

Json to_json(const EvalReport& r) {
    Json models = Json::array();
    for (const auto& m : r.models) {
        Json codes = Json::object();
        for (auto code : kAllCodes) {
            const auto& s = m.codes[index(code)];
            codes[std::string(code_name(code))] = Json{
                {"precision", vec_json(s.precision)},
                {"recall", vec_json(s.recall)},
                {"f1", vec_json(s.f1)},
                {"ap", vec_json(s.ap)},
                {"mean_precision", nan_to_null(s.mean_precision)},
                {"mean_recall", nan_to_null(s.mean_recall)},
                {"mean_f1", nan_to_null(s.mean_f1)},
                {"mean_ap", nan_to_null(s.mean_ap)},
                {"ci_precision", s.ci_precision},
                {"ci_recall", s.ci_recall},
                {"ci_f1", s.ci_f1},
                {"ci_ap", s.ci_ap},
                {"best", s.best},
                {"not_significantly_worse", s.not_significantly_worse},
            };
        }
        models.push_back(Json{{"name", m.spec.name},
                              {"label", m.spec.label},
                              {"modality", std::string(modality_name(m.spec.modality))},
                              {"features", m.spec.features},
                              {"fusion", std::string(fusion_name(m.spec.fusion))},
                              {"out_of_competition", m.spec.out_of_competition},
                              {"codes", codes},
                              {"map_folds", vec_json(m.map_folds)},
                              {"map", nan_to_null(m.map)},
                              {"ci_map", m.ci_map},
                              {"map_best", m.map_best},
                              {"map_not_significantly_worse", m.map_not_significantly_worse}});
    }
    return Json{{"seed", r.seed},
                {"folds", r.n_folds},
                {"label_rule", r.label_rule},
                {"significance", r.significance},
                {"models", models}};
}

EvalReport eval_report_from_json(const Json& j) {
    EvalReport r;
    try {
        r.seed = j.at("seed").get<std::uint64_t>();
        r.n_folds = j.at("folds").get<int>();
        r.label_rule = j.at("label_rule").get<std::string>();
        r.significance = j.at("significance").get<std::string>();
        for (const auto& m : j.at("models")) {
            ModelResult res;
            res.spec.name = m.at("name").get<std::string>();
            res.spec.label = m.at("label").get<std::string>();
            res.spec.modality = parse_modality(m.at("modality").get<std::string>());
            res.spec.features = m.at("features").get<std::vector<std::string>>();
            res.spec.fusion = parse_fusion(m.at("fusion").get<std::string>());
            res.spec.out_of_competition = m.at("out_of_competition").get<bool>();
            for (auto code : kAllCodes) {
                const auto& c = m.at("codes").at(std::string(code_name(code)));
                auto& s = res.codes[index(code)];
                s.precision = vec_from_json(c.at("precision"));
                s.recall = vec_from_json(c.at("recall"));
                s.f1 = vec_from_json(c.at("f1"));
                s.ap = vec_from_json(c.at("ap"));
                s.mean_precision = num_from_json(c.at("mean_precision"));
                s.mean_recall = num_from_json(c.at("mean_recall"));
                s.mean_f1 = num_from_json(c.at("mean_f1"));
                s.mean_ap = num_from_json(c.at("mean_ap"));
                s.ci_precision = c.at("ci_precision").get<double>();
                s.ci_recall = c.at("ci_recall").get<double>();
                s.ci_f1 = c.at("ci_f1").get<double>();
                s.ci_ap = c.at("ci_ap").get<double>();
                s.best = c.at("best").get<bool>();
                s.not_significantly_worse = c.at("not_significantly_worse").get<bool>();
            }
            res.map_folds = vec_from_json(m.at("map_folds"));
            res.map = num_from_json(m.at("map"));
            res.ci_map = m.at("ci_map").get<double>();
            res.map_best = m.at("map_best").get<bool>();
            res.map_not_significantly_worse = m.at("map_not_significantly_worse").get<bool>();
            r.models.push_back(std::move(res));
        }
    } catch (const Json::exception& e) {
        throw ValidationError(std::string("results: ") + e.what());
    }
    return r;
}

namespace {

std::string marked(double v, bool best, bool not_worse, bool markdown) {
    std::string s = fmt_cell(v);
    if (markdown) {
        if (not_worse) s = "**" + s + "**";
        if (best) s += "*";
    } else {
        if (best) s += "*";
        if (not_worse) s += "=";
    }
    return s;
}

}  // namespace

Table results_table(const EvalReport& r, bool markdown_marks) {
    Table t;
    t.header = {"Modality", "Features", "Fusion"};
    for (auto code : kAllCodes) {
        for (const char* m : {"P", "R", "F1", "AP"}) t.header.push_back(std::string(code_name(code)) + " " + m);
    }
    t.header.push_back("mAP");
    for (const auto& m : r.models) {
        std::vector<std::string> row;
        row.push_back(m.spec.is_baseline() ? "-"
                      : m.spec.modality == Modality::multimodal ? "image+text"
                                                                  : std::string(modality_name(m.spec.modality)));
        row.push_back(m.spec.label);
        row.push_back(m.spec.fusion == Fusion::none ? "-" : std::string(fusion_name(m.spec.fusion)));
        for (auto code : kAllCodes) {
            const auto& s = m.codes[index(code)];
            row.push_back(fmt_cell(s.mean_precision));
            row.push_back(fmt_cell(s.mean_recall));
            row.push_back(fmt_cell(s.mean_f1));
            row.push_back(marked(s.mean_ap, s.best, s.not_significantly_worse, markdown_marks));
        }
        row.push_back(marked(m.map, m.map_best, m.map_not_significantly_worse, markdown_marks));
        t.rows.push_back(std::move(row));
    }
    return t;
}

// ---------------------------------------------------------------------------
// Leakage audit

std::vector<AuditResult> leakage_audit(const ExperimentData& data, const FoldAssignment& folds,
                                       const ExperimentConfig& config, const TaskRunner& runner) {
    std::vector<AuditResult> out;
    for (int f = 0; f < folds.k; ++f) {
        AuditResult a;
        a.fold = f;
        const auto split = fold_split(data, folds, f);
        a.hash_full = run_fold(data, split, config, runner).state.hash();
        const auto reduced = data.subset(split.train);
        const auto reduced_split = fold_split(reduced, folds, f);
        a.hash_without_test = run_fold(reduced, reduced_split, config, runner).state.hash();
        out.push_back(std::move(a));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Sensitivity and ablation

namespace {

std::string variant_short(const std::string& v) {
    if (v == kGtConcepts) return "GT";
    if (auto t = counts_threshold(v)) return v.substr(std::string_view("counts@").size());
    return v;
}

}  // namespace

SensitivityReport sensitivity_analysis(const ExperimentData& data, const FoldAssignment& folds,
                                       const ExperimentConfig& /*config*/, const std::vector<std::string>& variants) {
    SensitivityReport report;
    std::vector<FoldSplit> splits;
    for (int f = 0; f < folds.k; ++f) splits.push_back(fold_split(data, folds, f));
    std::map<std::string, Matrix> X;
    for (const auto& v : variants) {
        const auto M = static_features(data, v);
        if (M.cols != kNumConcepts) throw ValidationError("sensitivity: " + v + " is not a concept feature");
        X.emplace(v, M);
    }
    learn::LinearSvmOptions opt;
    opt.C = 1.0;
    opt.class_weight = learn::ClassWeight::balanced;
    for (auto code : kAllCodes) {
        const auto y = data.code_labels(code);
        for (const auto& v : variants) {
            SensitivityColumn col;
            col.variant = v;
            col.code = code;
            std::vector<double> f1s, aps;
            for (const auto& s : splits) {
                const auto model = learn::train_linear_svm(X.at(v).select_rows(s.train), take(y, s.train), opt);
                for (std::size_t c = 0; c < kNumConcepts; ++c) col.coefficients[c] += model.weights[c];
                std::vector<double> scores;
                std::vector<std::uint8_t> preds;
                for (auto r : s.test) {
                    scores.push_back(model.decision(X.at(v).row(r)));
                    preds.push_back(scores.back() > 0.0 ? 1 : 0);
                }
                const auto m = classification_metrics(scores, preds, take(y, s.test));
                f1s.push_back(m.f1);
                aps.push_back(m.average_precision.value_or(kNaN));
            }
            for (auto& c : col.coefficients) c /= static_cast<double>(splits.size());
            col.f1 = nan_mean(f1s);
            col.ap = nan_mean(aps);
            report.columns.push_back(col);
        }
    }
    return report;
}

Table sensitivity_table(const SensitivityReport& r) {
    Table t;
    t.header.push_back("Concept");
    for (const auto& c : r.columns) t.header.push_back(std::string(code_name(c.code)) + " " + variant_short(c.variant));
    for (auto con : kAllConcepts) {
        std::vector<std::string> row{std::string(concept_name(con))};
        for (const auto& c : r.columns) row.push_back(fmt_fixed(c.coefficients[index(con)]));
        t.rows.push_back(std::move(row));
    }
    std::vector<std::string> f1{"F1"}, ap{"AP"};
    for (const auto& c : r.columns) {
        f1.push_back(fmt_cell(c.f1));
        ap.push_back(fmt_cell(c.ap));
    }
    t.rows.push_back(std::move(f1));
    t.rows.push_back(std::move(ap));
    return t;
}

Json to_json(const SensitivityReport& r) {
    Json cols = Json::array();
    for (const auto& c : r.columns) {
        Json coef = Json::object();
        for (auto con : kAllConcepts) coef[std::string(concept_name(con))] = c.coefficients[index(con)];
        cols.push_back(Json{{"code", std::string(code_name(c.code))},
                            {"variant", c.variant},
                            {"coefficients", coef},
                            {"f1", nan_to_null(c.f1)},
                            {"ap", nan_to_null(c.ap)}});
    }
    return Json{{"columns", cols}};
}

AblationReport ablation_study(const ExperimentData& data, const FoldAssignment& folds, const ExperimentConfig& config,
                              const TaskRunner& runner) {
    const Matrix X = static_features(data, kGtConcepts);
    std::vector<FoldSplit> splits;
    for (int f = 0; f < folds.k; ++f) splits.push_back(fold_split(data, folds, f));
    const std::size_t K = splits.size();

    // [code][fold][variant]: variant 0 is the full model, 1 + c drops concept c.
    struct Score {
        double f1 = 0.0;
        double ap = kNaN;
    };
    std::vector<std::vector<std::array<Score, kNumConcepts + 1>>> scores(
        kNumCodes, std::vector<std::array<Score, kNumConcepts + 1>>(K));
    PerCode<std::vector<std::uint8_t>> labels;
    for (auto code : kAllCodes) labels[index(code)] = data.code_labels(code);

    std::vector<std::function<void()>> tasks;
    for (auto code : kAllCodes) {
        for (std::size_t f = 0; f < K; ++f) {
            for (std::size_t v = 0; v <= kNumConcepts; ++v) {
                tasks.push_back([&, code, f, v] {
                    const auto& s = splits[f];
                    std::vector<std::size_t> cols;
                    for (std::size_t c = 0; c < kNumConcepts; ++c) {
                        if (v == 0 || c != v - 1) cols.push_back(c);
                    }
                    const Matrix Xv = X.select_cols(cols);
                    const auto& y = labels[index(code)];
                    const auto model = fit_block(Xv.select_rows(s.train), take(y, s.train), s.train_groups,
                                                 rbf_params(config), calibration_seed(config, code, s.fold),
                                                 config.calibration_folds, false);
                    const auto p = model.probabilities(Xv.select_rows(s.test));
                    std::vector<std::uint8_t> preds;
                    for (double x : p) preds.push_back(x > 0.5 ? 1 : 0);
                    const auto m = classification_metrics(p, preds, take(y, s.test));
                    scores[index(code)][f][v] = {m.f1, m.average_precision.value_or(kNaN)};
                });
            }
        }
    }
    runner(tasks);

    AblationReport report;
    for (auto code : kAllCodes) {
        const auto& sc = scores[index(code)];
        std::vector<double> full_f1, full_ap;
        for (std::size_t f = 0; f < K; ++f) {
            full_f1.push_back(sc[f][0].f1);
            full_ap.push_back(sc[f][0].ap);
        }
        report.full_f1[index(code)] = nan_mean(full_f1);
        report.full_ap[index(code)] = nan_mean(full_ap);
        for (std::size_t c = 0; c < kNumConcepts; ++c) {
            auto& cell = report.cells[index(code)][c];
            for (std::size_t f = 0; f < K; ++f) {
                cell.delta_f1.push_back(sc[f][c + 1].f1 - sc[f][0].f1);
                cell.delta_ap.push_back(sc[f][c + 1].ap - sc[f][0].ap);
            }
            cell.mean_f1 = nan_mean(cell.delta_f1);
            cell.mean_ap = nan_mean(cell.delta_ap);
            cell.significant_f1 = one_sample_significant(cell.delta_f1);
            cell.significant_ap = one_sample_significant(cell.delta_ap);
        }
    }
    return report;
}

Table ablation_table(const AblationReport& r, bool markdown_marks) {
    std::vector<Code> shown;
    for (auto code : kAllCodes) {
        bool any = false;
        for (const auto& cell : r.cells[index(code)]) any = any || cell.significant_f1 || cell.significant_ap;
        if (any) shown.push_back(code);
    }
    Table t;
    t.header.push_back("Removed concept");
    for (auto code : shown) {
        t.header.push_back(std::string(code_name(code)) + " F1");
        t.header.push_back(std::string(code_name(code)) + " AP");
    }
    // Bold marks a drop significantly below zero.
    auto cell_text = [&](double v, bool sig) {
        std::string s = fmt_cell(v);
        if (sig && v < 0.0) s = markdown_marks ? "**" + s + "**" : s + "*";
        return s;
    };
    for (auto con : kAllConcepts) {
        std::vector<std::string> row{std::string(concept_name(con))};
        for (auto code : shown) {
            const auto& cell = r.cells[index(code)][index(con)];
            row.push_back(cell_text(cell.mean_f1, cell.significant_f1));
            row.push_back(cell_text(cell.mean_ap, cell.significant_ap));
        }
        t.rows.push_back(std::move(row));
    }
    return t;
}

Json to_json(const AblationReport& r) {
    Json codes = Json::object();
    for (auto code : kAllCodes) {
        Json concepts = Json::object();
        for (auto con : kAllConcepts) {
            const auto& c = r.cells[index(code)][index(con)];
            concepts[std::string(concept_name(con))] = Json{{"delta_f1", vec_json(c.delta_f1)},
                                                            {"delta_ap", vec_json(c.delta_ap)},
                                                            {"mean_f1", nan_to_null(c.mean_f1)},
                                                            {"mean_ap", nan_to_null(c.mean_ap)},
                                                            {"significant_f1", c.significant_f1},
                                                            {"significant_ap", c.significant_ap}};
        }
        codes[std::string(code_name(code))] = Json{{"full_f1", nan_to_null(r.full_f1[index(code)])},
                                                   {"full_ap", nan_to_null(r.full_ap[index(code)])},
                                                   {"concepts", concepts}};
    }
    return Json{{"codes", codes}};
}

// ---------------------------------------------------------------------------
// Output

void write_table(const Table& csv_table, const Table& md_table, const std::filesystem::path& dir,
                 const std::string& stem) {
    std::filesystem::create_directories(dir);
    write_text_file((dir / (stem + ".csv")).string(), csv_table.to_csv());
    write_text_file((dir / (stem + ".md")).string(), md_table.to_markdown());
}

}  // namespace psycode::pipeline
