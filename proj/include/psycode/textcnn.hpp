#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "psycode/common.hpp"
#include "psycode/jsonl.hpp"
#include "psycode/nn.hpp"
#include "psycode/state_hash.hpp"

namespace psycode::textcnn {

enum class Level : std::uint8_t { word, character };

std::string_view level_name(Level level);
std::optional<Level> parse_level(std::string_view name);

struct TextCnnConfig {
    Level level = Level::word;
    std::size_t emb_dim = 300;
    std::vector<std::size_t> filter_widths{1, 2, 3, 4, 5};
    std::size_t maps_per_width = 100;
    std::size_t hidden_dim = 100;
    double dropout = 0.5;
    double lr = 0.002;
    std::size_t max_len = 64;
    std::size_t batch_size = 32;
    std::size_t max_epochs = 50;
    std::size_t patience = 5;
    double holdout_fraction = 0.1;
    std::uint64_t seed = 1;

    /// Word level: 300-d embeddings, 64 tokens. Character level: 100-d, 280 characters.
    static TextCnnConfig defaults(Level level);
    void validate() const;
};

TextCnnConfig config_from_json(const Json& j, Level level);
Json to_json(const TextCnnConfig& c);

/// Pretrained word vectors: UTF-8 text, `token v1 ... vd` per line.
struct EmbeddingTable {
    std::size_t dim = 0;
    std::unordered_map<std::string, std::vector<double>> vectors;
};

EmbeddingTable load_embeddings(const std::string& path);

struct TrainingExample {
    std::string text;
    std::string user_id;
    bool label = false;
};

/// Token (word level) or character (character level) indices; 0 is padding,
/// 1 is unknown.
using Encoded = std::vector<std::size_t>;

struct TrainingInfo {
    std::string code;
    int fold = -1;
    std::size_t stopped_epoch = 0;
    std::size_t best_epoch = 0;
    double best_validation_loss = 0.0;
    double validation_accuracy = 0.0;
    std::size_t holdout_size = 0;
    std::vector<std::string> holdout_users;
};

class TextCnnModel {
public:
    static constexpr std::size_t kPad = 0;
    static constexpr std::size_t kUnknown = 1;

    TextCnnModel() = default;

    /// Fresh randomly-initialized model over the given unit vocabulary.
    TextCnnModel(TextCnnConfig config, std::vector<std::string> vocabulary, const EmbeddingTable* pretrained);

    const TextCnnConfig& config() const { return config_; }
    const std::vector<std::string>& vocabulary() const { return vocab_; }
    TrainingInfo& info() { return info_; }
    const TrainingInfo& info() const { return info_; }

    /// Text units for this model's level, truncated to max_len.
    std::vector<std::string> units(std::string_view text) const;
    Encoded encode(std::string_view text) const;

    std::size_t conv_output_dim() const { return config_.filter_widths.size() * config_.maps_per_width; }
    std::size_t feature_dim() const { return config_.hidden_dim; }

    /// Post-ReLU hidden activations with dropout disabled. Never touches the
    /// output layer.
    std::vector<double> extract_features(std::string_view text) const;
    std::vector<double> extract_features(const Encoded& ids) const;

    /// Softmax over the two classes.
    std::array<double, 2> class_probabilities(std::string_view text) const;
    double predict_prob(std::string_view text) const { return class_probabilities(text)[1]; }

    /// Mean cross-entropy over the batch. With `accumulate_grad`, gradients
    /// of the mean are added to the parameter gradient buffers. Dropout masks
    /// in train mode come from `dropout_seed`.
    double batch_loss(std::span<const Encoded> inputs, std::span<const std::uint8_t> labels, nn::Mode mode,
                      std::uint64_t dropout_seed, bool accumulate_grad);

    std::vector<nn::NamedParam<double>> parameters();
    void zero_grad();

    nn::Checkpoint to_checkpoint() const;
    static TextCnnModel from_checkpoint(const nn::Checkpoint& ckpt);
    void hash_into(StateHasher& h) const;

    // Parameters.
    nn::Tensor embedding;                 // [vocab x emb_dim]
    std::vector<nn::Tensor> conv_filters;  // per width [width x emb_dim x maps]
    std::vector<nn::Tensor> conv_bias;     // per width [maps]
    nn::Tensor hidden_w;                  // [hidden x conv_output_dim]
    nn::Tensor hidden_b;                  // [hidden]
    nn::Tensor out_w;                     // [2 x hidden]
    nn::Tensor out_b;                     // [2]

private:
    struct Forward;
    void forward(const Encoded& ids, nn::Mode mode, Rng* rng, Forward& f, bool want_logits) const;
    void backward(const Encoded& ids, const Forward& f, std::span<const double> grad_logits);

    TextCnnConfig config_;
    std::vector<std::string> vocab_;
    std::unordered_map<std::string, std::size_t> index_;
    TrainingInfo info_;
};

/// Trains one binary classifier for one code. A user-grouped fraction of the
/// examples is held out for early stopping on validation loss; the best
/// epoch's parameters are restored. Throws TrainingError on single-class data.
TextCnnModel train_textcnn(std::span<const TrainingExample> examples, const TextCnnConfig& config,
                           const EmbeddingTable* pretrained = nullptr);

/// Unit vocabulary of the training texts (sorted, with pad/unknown first).
std::vector<std::string> build_unit_vocabulary(std::span<const TrainingExample> examples,
                                               const TextCnnConfig& config);

}  // namespace psycode::textcnn
