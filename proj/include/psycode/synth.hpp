#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "psycode/common.hpp"
#include "psycode/corpus.hpp"
#include "psycode/imfeat.hpp"
#include "psycode/jsonl.hpp"

namespace psycode::synth {

struct SynthConfig {
    int n_users = 100;
    int tweets_per_user_max = 20;
    PerCode<double> code_priors{0.25, 0.21, 0.20};
    double text_signal_strength = 0.6;
    double image_signal_strength = 0.6;
    int global_dim = 2048;
    std::uint64_t seed = 1;

    /// Per-code rate at which an annotator misses a latent positive.
    PerCode<double> annotator_noise{0.15, 0.05, 0.05};
    /// Per-code rate at which an annotator flags a latent negative.
    PerCode<double> false_alarm_rate{0.0, 0.0, 0.0};
    /// Which codes leave a trace in the text / in the image.
    PerCode<bool> text_codes{true, true, true};
    PerCode<bool> image_codes{true, true, true};
    /// Concepts planted into images of code-positive tweets.
    PerCode<std::vector<Concept>> concept_plants{
        std::vector<Concept>{Concept::handgun, Concept::long_gun, Concept::hand_gesture},
        std::vector<Concept>{},
        std::vector<Concept>{Concept::joint, Concept::marijuana, Concept::lean}};
    /// Background probability of each concept appearing in any image.
    std::array<double, kNumConcepts> concept_base_rates{0.04, 0.01, 0.04, 0.03, 0.7,
                                                        0.1,  0.2,  0.02, 0.06};
    int signal_dims = 8;
    double image_fraction = 1.0;
    double pos_tag_fraction = 0.5;
    /// Probability that the detector finds a ground-truth box (score in [0.5, 1)).
    double detector_recall = 0.7;
    /// Expected number of low-score false detections per image.
    double false_detections_per_image = 0.5;
    /// Extra image-only Tumblr users (unannotated posts).
    int n_tumblr_users = 0;
    int tumblr_posts_per_user = 20;
    double tumblr_detector_recall = 0.9;

    /// Throws ValidationError when out of range.
    void validate() const;
};

SynthConfig config_from_json(const Json& j);
Json to_json(const SynthConfig& c);

struct LedgerEntry {
    std::string tweet_id;
    std::string user_id;
    PerCode<bool> latent{};
    PerCode<int> positive_votes{};
    int n_annotators = 0;
    std::vector<std::string> signal_tokens;
    std::vector<Concept> planted_concepts;
};

struct SynthDataset {
    corpus::Corpus corpus;
    std::vector<imfeat::GlobalFeature> global;
    std::vector<ConceptDetection> detections;
    std::vector<ConceptBox> gt_boxes;
    std::vector<LedgerEntry> ledger;
};

SynthDataset generate(const SynthConfig& config);

/// Writes tweets.jsonl, annotations.jsonl, global_features.jsonl,
/// detections.jsonl, gt_boxes.jsonl, ledger.jsonl, dal.csv and
/// phrasebook.csv into `out_dir`.
void write_dataset(const SynthDataset& data, const std::string& out_dir);

/// Output file names, in write order.
std::vector<std::string> dataset_files();

/// Toy affect lexicon (50 words) and phrasebook shipped for tests and demos.
std::string toy_dal_csv();
std::string toy_phrasebook_csv();

/// Words and emoji the generator uses as the textual trace of a code.
const std::vector<std::string>& code_vocabulary(Code code);

}  // namespace psycode::synth
