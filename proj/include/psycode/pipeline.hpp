#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "psycode/common.hpp"
#include "psycode/corpus.hpp"
#include "psycode/feature_block.hpp"
#include "psycode/imfeat.hpp"
#include "psycode/jsonl.hpp"
#include "psycode/learn.hpp"
#include "psycode/lingfeat.hpp"
#include "psycode/matrix.hpp"
#include "psycode/state_hash.hpp"
#include "psycode/table.hpp"
#include "psycode/textcnn.hpp"

namespace psycode::pipeline {

// ---------------------------------------------------------------------------
// Folds

struct UserStats {
    std::string user_id;
    std::size_t tweets = 0;
    PerCode<std::size_t> positives{};
};

struct FoldAssignment {
    std::map<std::string, int> fold_of;
    int k = 5;
    std::uint64_t seed = 0;

    int fold(const std::string& user_id) const;
};

/// Greedy balancing: users by tweet count (descending, equal counts in seeded
/// random order) go to the fold with the smallest added cost, where the cost
/// sums squared deviations of every fold's tweet and per-code positive
/// totals from their running mean, each statistic scaled by its overall
/// total. Ties go to the lowest fold index.
FoldAssignment make_folds(std::span<const UserStats> users, int k, std::uint64_t seed);

Json to_json(const FoldAssignment& f);
FoldAssignment folds_from_json(const Json& j);

// ---------------------------------------------------------------------------
// Experiment inputs

/// Labeled tweets and everything needed to featurize them, read-only once
/// built. Rows of every feature matrix follow `tweets`.
struct ExperimentData {
    std::vector<corpus::TweetRecord> tweets;
    std::vector<PerCode<bool>> labels;
    imfeat::GlobalFeatureTable global;
    std::unordered_map<std::string, std::vector<ConceptDetection>> detections;  // by image id
    std::unordered_map<std::string, std::vector<ConceptBox>> gt_boxes;          // by image id
    lingfeat::Dal dal;
    lingfeat::Phrasebook phrasebook;
    std::optional<textcnn::EmbeddingTable> embeddings;
    /// Optional precomputed blocks keyed by space name (see FeatureBlock).
    std::map<std::string, std::vector<FeatureBlock>> feature_blocks;
    bool has_global = false;
    bool has_detections = false;
    bool has_gt_boxes = false;

    std::size_t size() const { return tweets.size(); }
    std::vector<std::uint8_t> code_labels(Code code) const;
    std::vector<UserStats> user_stats() const;
    /// The same data restricted to `rows` (order kept).
    ExperimentData subset(std::span<const std::size_t> rows) const;
};

// ---------------------------------------------------------------------------
// Configuration

enum class Fusion : std::uint8_t { none, early, late };
enum class Modality : std::uint8_t { baseline, text, image, multimodal };
enum class Significance : std::uint8_t { paired_t, ci_overlap };

std::string_view fusion_name(Fusion f);
std::string_view modality_name(Modality m);

inline constexpr const char* kLinguistic = "linguistic";
inline constexpr const char* kCnnWord = "cnn_word";
inline constexpr const char* kCnnChar = "cnn_char";
inline constexpr const char* kGlobal = "global";
inline constexpr const char* kCounts01 = "counts@0.1";
inline constexpr const char* kCounts05 = "counts@0.5";
inline constexpr const char* kGtConcepts = "gt_concepts";
inline constexpr const char* kRandomBaseline = "random_baseline";
inline constexpr const char* kPositiveBaseline = "positive_baseline";

/// Feature space names the pipeline knows how to build.
const std::vector<std::string>& known_spaces();

struct ModelSpec {
    std::string name;
    std::string label;  // row label in reports
    Modality modality = Modality::text;
    std::vector<std::string> features;  // feature spaces, or a baseline name
    Fusion fusion = Fusion::none;
    bool out_of_competition = false;

    bool is_baseline() const { return modality == Modality::baseline; }
    /// Structural checks: late fusion needs >= 2 spaces, ground-truth
    /// concepts never take part in fusion, spaces are known.
    void validate() const;
};

/// Every Table-2 row plus the out-of-competition ground-truth concept model.
std::vector<ModelSpec> default_roster();
ModelSpec roster_model(const std::string& name);

struct ExperimentConfig {
    std::filesystem::path base_dir;  // data paths are relative to this
    std::string tweets = "tweets.jsonl";
    std::string annotations = "annotations.jsonl";
    std::string global_features = "global_features.jsonl";
    std::string detections = "detections.jsonl";
    std::string gt_boxes = "gt_boxes.jsonl";
    std::string dal = "dal.csv";
    std::string phrasebook = "phrasebook.csv";
    std::optional<std::string> embeddings;
    std::map<std::string, std::string> feature_block_files;
    std::optional<std::string> folds_file;  // precomputed FoldAssignment

    std::uint64_t seed = 1;
    int n_folds = 5;
    corpus::LabelRule label_rule = corpus::LabelRule::any_positive;

    std::size_t anova_k = 1300;
    std::size_t min_df = 1;
    bool binary_ngrams = false;
    PerCode<double> linguistic_c{0.01, 0.03, 0.003};
    double rbf_c = 1.0;
    std::optional<double> rbf_gamma;
    std::size_t calibration_folds = 3;
    bool early_block_weighting = true;
    textcnn::TextCnnConfig cnn_word = textcnn::TextCnnConfig::defaults(textcnn::Level::word);
    textcnn::TextCnnConfig cnn_char = textcnn::TextCnnConfig::defaults(textcnn::Level::character);
    Significance significance = Significance::paired_t;
    std::vector<ModelSpec> models = default_roster();

    void validate() const;
};

/// Parses a config object; relative paths resolve against `base_dir`.
ExperimentConfig config_from_json(const Json& j, const std::filesystem::path& base_dir);
Json to_json(const ExperimentConfig& c);
ExperimentConfig load_config(const std::string& path);

ExperimentData load_data(const ExperimentConfig& config);

/// In-memory counterpart of load_data: keeps the annotated tweets in input
/// order and derives their labels by `rule`.
ExperimentData build_data(const corpus::Corpus& corpus, std::vector<imfeat::GlobalFeature> global,
                          std::span<const ConceptDetection> detections, std::span<const ConceptBox> gt_boxes,
                          corpus::LabelRule rule);

// ---------------------------------------------------------------------------
// Fold-level fitting

/// Rows of the training and test part of one fold, each in tweet-id order.
struct FoldSplit {
    int fold = 0;
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
    /// Per training row: rank of its user among the training users. Stable
    /// under deletion of test users, which the leakage audit relies on.
    std::vector<std::size_t> train_groups;
};

FoldSplit fold_split(const ExperimentData& data, const FoldAssignment& folds, int fold);

/// Fold-independent matrices (global, counts@t, gt_concepts), one row per tweet.
Matrix static_features(const ExperimentData& data, const std::string& space);

/// Vocabulary plus full linguistic vectors of every tweet for one fold.
struct LinguisticFold {
    lingfeat::NgramVocab vocab;
    std::vector<SparseVector> rows;
    std::size_t dim = 0;

    void hash_into(StateHasher& h) const;
};

LinguisticFold fit_linguistic(const ExperimentData& data, std::span<const std::size_t> train,
                              const ExperimentConfig& config);

/// ANOVA-selected linguistic columns for one code, dense.
struct SelectedLinguistic {
    std::vector<std::size_t> columns;
    Matrix matrix;
};

SelectedLinguistic select_linguistic(const LinguisticFold& ling, std::span<const std::size_t> train,
                                     std::span<const std::uint8_t> labels, std::size_t k);

/// Text CNN trained on the training rows; hidden features for every tweet.
struct CnnFold {
    textcnn::TextCnnModel model;
    Matrix features;
};

CnnFold fit_cnn(const ExperimentData& data, std::span<const std::size_t> train, Code code, int fold,
                textcnn::Level level, const ExperimentConfig& config);

/// A calibrated classifier with its own preprocessing.
struct BlockModel {
    std::optional<learn::Standardizer> standardizer;
    learn::CalibratedSvm classifier;
    bool linear = false;

    /// Calibrated probability of every row of X.
    std::vector<double> probabilities(const Matrix& X) const;
    /// Raw decision values of every row of X.
    std::vector<double> decisions(const Matrix& X) const;
    void hash_into(StateHasher& h) const;
};

/// Standardize + RBF (or the linear SVM when `linear`), calibrated by
/// cross-fitting on users.
BlockModel fit_block(const Matrix& X_train, std::span<const std::uint8_t> y_train,
                     std::span<const std::size_t> groups, const learn::SvmParams& params, std::uint64_t seed,
                     std::size_t calibration_folds, bool linear);

/// Early fusion: z-scoring of the concatenated blocks fitted on training
/// rows. With `block_weighting` and two or more blocks, each block is also
/// scaled by 1 / sqrt(width) so every block has the same expected share of
/// the RBF distance, however many columns it has.
BlockModel fit_early_fusion(const Matrix& X_train, std::span<const std::uint8_t> y_train,
                            std::span<const std::size_t> groups, std::span<const std::size_t> block_widths,
                            bool block_weighting, const learn::SvmParams& params, std::uint64_t seed,
                            std::size_t calibration_folds);

/// Per-fold scores and hard predictions of one model on one code.
struct FoldPrediction {
    std::vector<double> scores;
    std::vector<std::uint8_t> predictions;
};

/// Everything fitted for one (fold, code) that the roster needs; also the
/// unit hashed by the leakage audit.
struct FoldState {
    std::optional<LinguisticFold> linguistic;  // shared by all codes
    std::map<Code, SelectedLinguistic> selected;
    std::map<std::pair<Code, std::string>, CnnFold> cnn;  // key: (code, space)
    std::map<std::pair<Code, std::string>, BlockModel> blocks;
    std::map<std::pair<Code, std::string>, BlockModel> fusion;  // key: (code, model name)

    std::string hash() const;
};

/// Fits and predicts every roster model on one fold. `run_task` lets the
/// caller parallelize independent pieces; it must run every submitted task
/// before returning.
using TaskRunner = std::function<void(std::vector<std::function<void()>>&)>;

TaskRunner serial_runner();
TaskRunner thread_runner(int jobs);

struct FoldOutcome {
    FoldState state;
    /// [model index][code] predictions for the fold's test rows.
    std::vector<PerCode<FoldPrediction>> predictions;
};

FoldOutcome run_fold(const ExperimentData& data, const FoldSplit& split, const ExperimentConfig& config,
                     const TaskRunner& runner);

/// Baseline predictions for `n_test` rows given training labels.
FoldPrediction run_baseline(const std::string& kind, std::span<const std::uint8_t> train_labels,
                            std::size_t n_test, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Evaluation

struct MetricSummary {
    std::vector<double> precision, recall, f1, ap;  // per fold (AP NaN when undefined)
    double mean_precision = 0, mean_recall = 0, mean_f1 = 0, mean_ap = 0;
    double ci_precision = 0, ci_recall = 0, ci_f1 = 0, ci_ap = 0;  // 95% half-widths
    bool best = false;
    bool not_significantly_worse = false;
};

struct ModelResult {
    ModelSpec spec;
    PerCode<MetricSummary> codes;
    std::vector<double> map_folds;  // per-fold mean AP over codes
    double map = 0.0;               // mean of the per-code AP means
    double ci_map = 0.0;
    bool map_best = false;
    bool map_not_significantly_worse = false;
};

struct EvalReport {
    std::uint64_t seed = 0;
    int n_folds = 0;
    std::string label_rule;
    std::string significance;
    std::vector<ModelResult> models;
};

/// Two-sided t quantile t_{0.975, df}.
double t_quantile_975(int df);

/// Paired two-sided t-test at alpha 0.05 on fold-wise differences; true when
/// the two sequences are significantly different. Zero-variance differences
/// count as significant unless they are all zero.
bool paired_significant(std::span<const double> a, std::span<const double> b);

/// One-sample two-sided t-test of mean 0 at alpha 0.05, same zero-variance rule.
bool one_sample_significant(std::span<const double> d);

/// Flags per model: best (highest mean) and not-significantly-worse than the
/// best. Models with `eligible[i] == false` are never chosen as best but are
/// still compared.
struct Marks {
    std::size_t best = 0;
    std::vector<bool> not_worse;
};
Marks significance_marks(const std::vector<std::vector<double>>& per_fold, const std::vector<bool>& eligible,
                         Significance method = Significance::paired_t);

/// Runs all folds and summarizes.
EvalReport run_experiment(const ExperimentData& data, const FoldAssignment& folds, const ExperimentConfig& config,
                          const TaskRunner& runner);

Json to_json(const EvalReport& r);
EvalReport eval_report_from_json(const Json& j);
/// Table-2 layout: P, R, F1, AP per code and mAP. "*" marks the best AP,
/// bold marks results not significantly worse than it.
Table results_table(const EvalReport& r, bool markdown_marks = true);

// ---------------------------------------------------------------------------
// Leakage audit

struct AuditResult {
    int fold = 0;
    std::string hash_full;
    std::string hash_without_test;
    bool match() const { return hash_full == hash_without_test; }
};

/// Fits fold state twice: on the full data, and on the data with the test
/// fold's tweets deleted. Any influence of test tweets changes the hash.
std::vector<AuditResult> leakage_audit(const ExperimentData& data, const FoldAssignment& folds,
                                       const ExperimentConfig& config, const TaskRunner& runner);

// ---------------------------------------------------------------------------
// Sensitivity and ablation

inline const std::vector<std::string> kSensitivityVariants{kCounts01, kCounts05, kGtConcepts};

struct SensitivityColumn {
    std::string variant;
    Code code = Code::aggression;
    std::array<double, kNumConcepts> coefficients{};  // mean over folds
    double f1 = 0.0;
    double ap = 0.0;
};

struct SensitivityReport {
    std::vector<SensitivityColumn> columns;  // code-major, variant-minor
};

/// Linear squared-hinge SVM (C = 1, balanced) on raw 9-d concept vectors per
/// fold; coefficients and F1/AP averaged over folds.
SensitivityReport sensitivity_analysis(const ExperimentData& data, const FoldAssignment& folds,
                                       const ExperimentConfig& config,
                                       const std::vector<std::string>& variants = kSensitivityVariants);
Table sensitivity_table(const SensitivityReport& r);
Json to_json(const SensitivityReport& r);

struct AblationCell {
    std::vector<double> delta_f1;  // reduced - full, per fold
    std::vector<double> delta_ap;
    double mean_f1 = 0.0;
    double mean_ap = 0.0;
    bool significant_f1 = false;
    bool significant_ap = false;
};

struct AblationReport {
    PerCode<std::array<AblationCell, kNumConcepts>> cells;
    PerCode<double> full_f1{};
    PerCode<double> full_ap{};
};

/// Ground-truth concept model (standardize + calibrated RBF) with each
/// concept removed in turn.
AblationReport ablation_study(const ExperimentData& data, const FoldAssignment& folds, const ExperimentConfig& config,
                              const TaskRunner& runner);
/// Table-4 layout; a code's columns are left out when none of its cells is
/// significant.
Table ablation_table(const AblationReport& r, bool markdown_marks = true);
Json to_json(const AblationReport& r);

// ---------------------------------------------------------------------------
// Output

/// Writes `<stem>.csv` and `<stem>.md` into `dir`.
void write_table(const Table& csv_table, const Table& md_table, const std::filesystem::path& dir,
                 const std::string& stem);

}  // namespace psycode::pipeline
