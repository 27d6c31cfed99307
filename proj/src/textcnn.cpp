#include "psycode/textcnn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "psycode/lingfeat.hpp"
#include "psycode/log.hpp"

namespace psycode::textcnn {

std::string_view level_name(Level level) { return level == Level::word ? "word" : "char"; }

std::optional<Level> parse_level(std::string_view name) {
    if (name == "word") return Level::word;
    if (name == "char" || name == "character") return Level::character;
    return std::nullopt;
}

TextCnnConfig TextCnnConfig::defaults(Level level) {
    TextCnnConfig c;
    c.level = level;
    if (level == Level::character) {
        c.emb_dim = 100;
        c.max_len = 280;
    }
    return c;
}

void TextCnnConfig::validate() const {
    if (emb_dim == 0 || maps_per_width == 0 || hidden_dim == 0 || max_len == 0 || batch_size == 0 ||
        filter_widths.empty()) {
        throw ValidationError("text CNN dimensions must be positive");
    }
    for (auto w : filter_widths) {
        if (w == 0) throw ValidationError("filter widths must be positive");
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ValidationError("dropout must be in [0, 1)");
    if (!(lr > 0.0)) throw ValidationError("learning rate must be positive");
    if (!(holdout_fraction >= 0.0 && holdout_fraction < 1.0)) {
        throw ValidationError("holdout_fraction must be in [0, 1)");
    }
}

TextCnnConfig config_from_json(const Json& j, Level level) {
    TextCnnConfig c = TextCnnConfig::defaults(level);
    c.emb_dim = j.value("emb_dim", c.emb_dim);
    c.filter_widths = j.value("filter_widths", c.filter_widths);
    c.maps_per_width = j.value("maps_per_width", c.maps_per_width);
    c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
    c.dropout = j.value("dropout", c.dropout);
    c.lr = j.value("lr", c.lr);
    c.max_len = j.value("max_len", c.max_len);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.patience = j.value("patience", c.patience);
    c.holdout_fraction = j.value("holdout_fraction", c.holdout_fraction);
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
}

Json to_json(const TextCnnConfig& c) {
    return Json{{"level", std::string(level_name(c.level))},
                {"emb_dim", c.emb_dim},
                {"filter_widths", c.filter_widths},
                {"maps_per_width", c.maps_per_width},
                {"hidden_dim", c.hidden_dim},
                {"dropout", c.dropout},
                {"lr", c.lr},
                {"max_len", c.max_len},
                {"batch_size", c.batch_size},
                {"max_epochs", c.max_epochs},
                {"patience", c.patience},
                {"holdout_fraction", c.holdout_fraction},
                {"seed", c.seed}};
}

EmbeddingTable load_embeddings(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open embeddings " + path);
    EmbeddingTable table;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::istringstream ss(line);
        std::string token;
        if (!(ss >> token)) continue;
        std::vector<double> v;
        double x = 0.0;
        while (ss >> x) v.push_back(x);
        if (!ss.eof()) throw ValidationError(path + ":" + std::to_string(line_no) + ": bad number");
        if (v.empty()) continue;
        if (table.dim == 0) table.dim = v.size();
        if (v.size() != table.dim) {
            throw ValidationError(path + ":" + std::to_string(line_no) + ": expected " +
                                  std::to_string(table.dim) + " values");
        }
        table.vectors[token] = std::move(v);
    }
    return table;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> text_units(std::string_view text, const TextCnnConfig& config) {
    std::vector<std::string> out;
    if (config.level == Level::word) {
        for (auto& t : lingfeat::tokenize(text)) {
            if (out.size() == config.max_len) break;
            out.push_back(std::move(t.surface));
        }
        return out;
    }
    std::size_t i = 0;
    while (i < text.size() && out.size() < config.max_len) {
        const auto b = static_cast<unsigned char>(text[i]);
        std::size_t len = 1;
        if (b >= 0xF0) {
            len = 4;
        } else if (b >= 0xE0) {
            len = 3;
        } else if (b >= 0xC0) {
            len = 2;
        }
        len = std::min(len, text.size() - i);
        std::string unit(text.substr(i, len));
        if (len == 1 && unit[0] >= 'A' && unit[0] <= 'Z') unit[0] = static_cast<char>(unit[0] - 'A' + 'a');
        out.push_back(std::move(unit));
        i += len;
    }
    return out;
}

void glorot(nn::Tensor& t, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (auto& v : t.values) v = rng.uniform(-a, a);
}

}  // namespace

std::vector<std::string> build_unit_vocabulary(std::span<const TrainingExample> examples,
                                               const TextCnnConfig& config) {
    std::set<std::string> units;
    for (const auto& ex : examples) {
        for (auto& u : text_units(ex.text, config)) units.insert(std::move(u));
    }
    std::vector<std::string> vocab{"<pad>", "<unk>"};
    for (const auto& u : units) {
        if (u != "<pad>" && u != "<unk>") vocab.push_back(u);
    }
    return vocab;
}

TextCnnModel::TextCnnModel(TextCnnConfig config, std::vector<std::string> vocabulary,
                           const EmbeddingTable* pretrained)
    : config_(std::move(config)), vocab_(std::move(vocabulary)) {
    config_.validate();
    if (vocab_.size() < 2) throw std::invalid_argument("vocabulary must contain pad and unknown");
    for (std::size_t i = 0; i < vocab_.size(); ++i) index_.emplace(vocab_[i], i);
    Rng rng(derive_seed(config_.seed, {hash_label("init")}));
    const std::size_t E = config_.emb_dim;
    const std::size_t M = config_.maps_per_width;
    embedding = nn::Tensor({vocab_.size(), E});
    if (pretrained != nullptr && pretrained->dim != E) {
        throw ValidationError("pretrained embeddings have dimension " + std::to_string(pretrained->dim) +
                              ", model expects " + std::to_string(E));
    }
    for (std::size_t r = 1; r < vocab_.size(); ++r) {
        const std::vector<double>* init = nullptr;
        if (pretrained != nullptr) {
            if (auto it = pretrained->vectors.find(vocab_[r]); it != pretrained->vectors.end()) init = &it->second;
        }
        for (std::size_t e = 0; e < E; ++e) {
            const double random = rng.uniform(-0.25, 0.25);
            embedding.values[r * E + e] = init != nullptr ? (*init)[e] : random;
        }
    }
    for (auto w : config_.filter_widths) {
        nn::Tensor f({w, E, M});
        glorot(f, w * E, M, rng);
        conv_filters.push_back(std::move(f));
        conv_bias.emplace_back(std::vector<std::size_t>{M});
    }
    hidden_w = nn::Tensor({config_.hidden_dim, conv_output_dim()});
    glorot(hidden_w, conv_output_dim(), config_.hidden_dim, rng);
    hidden_b = nn::Tensor({config_.hidden_dim});
    out_w = nn::Tensor({2, config_.hidden_dim});
    glorot(out_w, config_.hidden_dim, 2, rng);
    out_b = nn::Tensor({2});
}

std::vector<std::string> TextCnnModel::units(std::string_view text) const { return text_units(text, config_); }

Encoded TextCnnModel::encode(std::string_view text) const {
    Encoded ids;
    for (const auto& u : units(text)) {
        auto it = index_.find(u);
        ids.push_back(it == index_.end() ? kUnknown : it->second);
    }
    return ids;
}

struct TextCnnModel::Forward {
    std::size_t seq_len = 0;
    std::vector<double> x;         // [seq_len x emb_dim], after dropout
    std::vector<double> x_mask;
    std::vector<nn::ConvPoolCache> caches;
    std::vector<double> pooled;    // after dropout
    std::vector<double> pooled_mask;
    std::vector<double> hidden;    // post-ReLU
    std::array<double, 2> logits{};
};

void TextCnnModel::forward(const Encoded& ids, nn::Mode mode, Rng* rng, Forward& f, bool want_logits) const {
    const std::size_t E = config_.emb_dim;
    const std::size_t M = config_.maps_per_width;
    const std::size_t max_width = *std::max_element(config_.filter_widths.begin(), config_.filter_widths.end());
    const std::size_t n = ids.size();
    f.seq_len = std::max(n, max_width);  // pad rows stay zero
    f.x.assign(f.seq_len * E, 0.0);
    for (std::size_t t = 0; t < n; ++t) {
        std::copy_n(embedding.values.begin() + static_cast<std::ptrdiff_t>(ids[t] * E), E,
                    f.x.begin() + static_cast<std::ptrdiff_t>(t * E));
    }
    f.x_mask.clear();
    if (mode == nn::Mode::train) f.x_mask = nn::dropout<double>(f.x, config_.dropout, mode, *rng);

    f.pooled.assign(conv_output_dim(), 0.0);
    f.caches.resize(config_.filter_widths.size());
    for (std::size_t k = 0; k < config_.filter_widths.size(); ++k) {
        const std::size_t w = config_.filter_widths[k];
        const std::size_t valid = n >= w ? n - w + 1 : 1;
        nn::conv1d_maxpool_forward<double>(f.x, f.seq_len, E, conv_filters[k].values, conv_bias[k].values, w, M,
                                           valid, std::span<double>(f.pooled).subspan(k * M, M), f.caches[k]);
    }
    f.pooled_mask.clear();
    if (mode == nn::Mode::train) f.pooled_mask = nn::dropout<double>(f.pooled, config_.dropout, mode, *rng);

    f.hidden.assign(config_.hidden_dim, 0.0);
    nn::dense_forward<double>(f.pooled, hidden_w.values, hidden_b.values, f.hidden);
    nn::relu_forward<double>(f.hidden);
    if (want_logits) nn::dense_forward<double>(f.hidden, out_w.values, out_b.values, f.logits);
}

void TextCnnModel::backward(const Encoded& ids, const Forward& f, std::span<const double> grad_logits) {
    const std::size_t E = config_.emb_dim;
    const std::size_t M = config_.maps_per_width;
    std::vector<double> d_hidden(config_.hidden_dim, 0.0);
    nn::dense_backward<double>(f.hidden, out_w.values, grad_logits, d_hidden, out_w.grad, out_b.grad);
    nn::relu_backward<double>(f.hidden, d_hidden);
    std::vector<double> d_pooled(conv_output_dim(), 0.0);
    nn::dense_backward<double>(f.pooled, hidden_w.values, d_hidden, d_pooled, hidden_w.grad, hidden_b.grad);
    nn::dropout_backward<double>(f.pooled_mask, d_pooled);
    std::vector<double> d_x(f.seq_len * E, 0.0);
    for (std::size_t k = 0; k < config_.filter_widths.size(); ++k) {
        nn::conv1d_maxpool_backward<double>(f.x, E, conv_filters[k].values, config_.filter_widths[k], M,
                                            f.caches[k], std::span<const double>(d_pooled).subspan(k * M, M),
                                            d_x, conv_filters[k].grad, conv_bias[k].grad);
    }
    nn::dropout_backward<double>(f.x_mask, d_x);
    for (std::size_t t = 0; t < ids.size(); ++t) {
        double* g = embedding.grad.data() + ids[t] * E;
        const double* d = d_x.data() + t * E;
        for (std::size_t e = 0; e < E; ++e) g[e] += d[e];
    }
}

std::vector<double> TextCnnModel::extract_features(std::string_view text) const {
    return extract_features(encode(text));
}

std::vector<double> TextCnnModel::extract_features(const Encoded& ids) const {
    Forward f;
    forward(ids, nn::Mode::eval, nullptr, f, false);
    return f.hidden;
}

std::array<double, 2> TextCnnModel::class_probabilities(std::string_view text) const {
    Forward f;
    forward(encode(text), nn::Mode::eval, nullptr, f, true);
    const auto p = nn::softmax<double>(f.logits);
    return {p[0], p[1]};
}

double TextCnnModel::batch_loss(std::span<const Encoded> inputs, std::span<const std::uint8_t> labels, nn::Mode mode,
                                std::uint64_t dropout_seed, bool accumulate_grad) {
    if (inputs.size() != labels.size() || inputs.empty()) throw std::invalid_argument("batch_loss: bad batch");
    if (accumulate_grad && !embedding.has_grad()) {
        for (auto& p : parameters()) p.tensor->enable_grad();
    }
    Rng rng(dropout_seed);
    const double scale = 1.0 / static_cast<double>(inputs.size());
    double total = 0.0;
    Forward f;
    std::array<double, 2> grad{};
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        forward(inputs[i], mode, &rng, f, true);
        total += nn::softmax_xent<double>(f.logits, labels[i] ? 1 : 0, grad);
        if (accumulate_grad) {
            grad[0] *= scale;
            grad[1] *= scale;
            backward(inputs[i], f, grad);
        }
    }
    return total * scale;
}

std::vector<nn::NamedParam<double>> TextCnnModel::parameters() {
    std::vector<nn::NamedParam<double>> p;
    p.push_back({"embedding", &embedding});
    for (std::size_t k = 0; k < conv_filters.size(); ++k) {
        const auto w = std::to_string(config_.filter_widths[k]);
        p.push_back({"conv" + w + ".filters", &conv_filters[k]});
        p.push_back({"conv" + w + ".bias", &conv_bias[k]});
    }
    p.push_back({"hidden.weight", &hidden_w});
    p.push_back({"hidden.bias", &hidden_b});
    p.push_back({"output.weight", &out_w});
    p.push_back({"output.bias", &out_b});
    return p;
}

void TextCnnModel::zero_grad() {
    for (auto& p : parameters()) {
        if (p.tensor->has_grad()) {
            p.tensor->zero_grad();
        } else {
            p.tensor->enable_grad();
        }
    }
}

nn::Checkpoint TextCnnModel::to_checkpoint() const {
    nn::Checkpoint ckpt;
    ckpt.meta["config"] = to_json(config_);
    ckpt.meta["vocabulary"] = vocab_;
    ckpt.meta["code"] = info_.code;
    ckpt.meta["fold"] = info_.fold;
    ckpt.meta["stopped_epoch"] = info_.stopped_epoch;
    ckpt.meta["best_epoch"] = info_.best_epoch;
    ckpt.meta["best_validation_loss"] = info_.best_validation_loss;
    ckpt.meta["validation_accuracy"] = info_.validation_accuracy;
    auto self = const_cast<TextCnnModel*>(this);
    for (const auto& p : self->parameters()) {
        nn::Tensor copy(p.tensor->shape);
        copy.values = p.tensor->values;
        ckpt.tensors.emplace_back(p.name, std::move(copy));
    }
    return ckpt;
}

TextCnnModel TextCnnModel::from_checkpoint(const nn::Checkpoint& ckpt) {
    const auto& meta = ckpt.meta;
    const auto level = parse_level(meta.at("config").at("level").get<std::string>());
    if (!level) throw ValidationError("checkpoint: unknown level");
    TextCnnConfig config = config_from_json(meta.at("config"), *level);
    TextCnnModel model(config, meta.at("vocabulary").get<std::vector<std::string>>(), nullptr);
    for (auto& p : model.parameters()) {
        const auto& t = ckpt.get(p.name);
        if (t.shape != p.tensor->shape) throw ValidationError("checkpoint: shape mismatch for " + p.name);
        p.tensor->values = t.values;
    }
    model.info_.code = meta.value("code", std::string());
    model.info_.fold = meta.value("fold", -1);
    model.info_.stopped_epoch = meta.value("stopped_epoch", std::size_t{0});
    model.info_.best_epoch = meta.value("best_epoch", std::size_t{0});
    model.info_.best_validation_loss = meta.value("best_validation_loss", 0.0);
    model.info_.validation_accuracy = meta.value("validation_accuracy", 0.0);
    return model;
}

void TextCnnModel::hash_into(StateHasher& h) const {
    h.str("textcnn").str(to_json(config_).dump());
    h.u64(vocab_.size());
    for (const auto& u : vocab_) h.str(u);
    auto self = const_cast<TextCnnModel*>(this);
    for (const auto& p : self->parameters()) h.str(p.name).f64s(p.tensor->values);
}

// ---------------------------------------------------------------------------

TextCnnModel train_textcnn(std::span<const TrainingExample> examples, const TextCnnConfig& config,
                           const EmbeddingTable* pretrained) {
    config.validate();
    std::size_t positives = 0;
    for (const auto& ex : examples) positives += ex.label ? 1 : 0;
    if (positives == 0 || positives == examples.size()) {
        throw TrainingError("text CNN training data must contain both classes");
    }

    // User-grouped early-stopping holdout.
    std::vector<std::string> users;
    for (const auto& ex : examples) users.push_back(ex.user_id);
    std::sort(users.begin(), users.end());
    users.erase(std::unique(users.begin(), users.end()), users.end());
    Rng split_rng(derive_seed(config.seed, {hash_label("holdout")}));
    split_rng.shuffle(users);
    const auto target = static_cast<std::size_t>(std::ceil(config.holdout_fraction * static_cast<double>(examples.size())));
    std::set<std::string> holdout_users;
    std::size_t held = 0;
    for (const auto& u : users) {
        if (held >= target || holdout_users.size() + 1 >= users.size()) break;
        holdout_users.insert(u);
        held += static_cast<std::size_t>(std::count_if(examples.begin(), examples.end(),
                                                       [&](const TrainingExample& e) { return e.user_id == u; }));
    }
    std::vector<std::size_t> fit_idx;
    std::vector<std::size_t> val_idx;
    for (std::size_t i = 0; i < examples.size(); ++i) {
        (holdout_users.contains(examples[i].user_id) ? val_idx : fit_idx).push_back(i);
    }
    std::size_t fit_pos = 0;
    for (auto i : fit_idx) fit_pos += examples[i].label ? 1 : 0;
    if (fit_pos == 0 || fit_pos == fit_idx.size()) {
        // Holdout would leave a single class to fit on; train on everything.
        fit_idx.clear();
        val_idx.clear();
        holdout_users.clear();
        for (std::size_t i = 0; i < examples.size(); ++i) fit_idx.push_back(i);
    }

    TextCnnModel model(config, build_unit_vocabulary(examples, config), pretrained);
    std::vector<Encoded> encoded;
    std::vector<std::uint8_t> labels_vec;
    encoded.reserve(examples.size());
    for (const auto& ex : examples) {
        encoded.push_back(model.encode(ex.text));
        labels_vec.push_back(ex.label ? 1 : 0);
    }
    std::vector<Encoded> val_x;
    std::vector<std::uint8_t> val_y;
    for (auto i : val_idx) {
        val_x.push_back(encoded[i]);
        val_y.push_back(labels_vec[i]);
    }
    auto val_loss = [&]() {
        if (val_x.empty()) return 0.0;
        return model.batch_loss(val_x, val_y, nn::Mode::eval, 0, false);
    };

    nn::NadamState<double> opt;
    opt.learning_rate = config.lr;
    model.zero_grad();
    Rng order_rng(derive_seed(config.seed, {hash_label("order")}));
    double best = std::numeric_limits<double>::infinity();
    std::vector<std::pair<std::string, nn::Tensor>> best_params;
    std::size_t since_best = 0;
    std::size_t epoch = 0;
    std::vector<Encoded> batch_x;
    std::vector<std::uint8_t> batch_y;
    for (epoch = 1; epoch <= config.max_epochs; ++epoch) {
        order_rng.shuffle(fit_idx);
        for (std::size_t start = 0, b = 0; start < fit_idx.size(); start += config.batch_size, ++b) {
            const std::size_t end = std::min(fit_idx.size(), start + config.batch_size);
            batch_x.clear();
            batch_y.clear();
            for (std::size_t k = start; k < end; ++k) {
                batch_x.push_back(encoded[fit_idx[k]]);
                batch_y.push_back(labels_vec[fit_idx[k]]);
            }
            model.zero_grad();
            model.batch_loss(batch_x, batch_y, nn::Mode::train,
                             derive_seed(config.seed, {hash_label("dropout"), epoch, b}), true);
            const auto params = model.parameters();
            nn::nadam_step<double>(params, opt);
            // Padding row is never trained.
            std::fill_n(model.embedding.values.begin(), config.emb_dim, 0.0);
        }
        if (val_x.empty()) continue;
        const double loss = val_loss();
        if (loss < best) {
            best = loss;
            since_best = 0;
            best_params.clear();
            for (const auto& p : model.parameters()) {
                nn::Tensor copy(p.tensor->shape);
                copy.values = p.tensor->values;
                best_params.emplace_back(p.name, std::move(copy));
            }
            model.info().best_epoch = epoch;
        } else if (++since_best >= config.patience) {
            break;
        }
    }
    model.info().stopped_epoch = std::min(epoch, config.max_epochs);
    if (!best_params.empty()) {
        auto params = model.parameters();
        for (std::size_t k = 0; k < params.size(); ++k) params[k].tensor->values = best_params[k].second.values;
        model.info().best_validation_loss = best;
    } else {
        model.info().best_epoch = model.info().stopped_epoch;
    }
    for (auto& p : model.parameters()) p.tensor->grad.clear();
    if (!val_x.empty()) {
        std::size_t correct = 0;
        for (std::size_t i = 0; i < val_x.size(); ++i) {
            const auto feats = model.extract_features(val_x[i]);
            std::array<double, 2> logits{};
            nn::dense_forward<double>(feats, model.out_w.values, model.out_b.values, logits);
            correct += ((logits[1] > logits[0]) == (val_y[i] != 0)) ? 1 : 0;
        }
        model.info().validation_accuracy = static_cast<double>(correct) / static_cast<double>(val_x.size());
    }
    model.info().holdout_size = val_x.size();
    model.info().holdout_users.assign(holdout_users.begin(), holdout_users.end());
    return model;
}

}  // namespace psycode::textcnn
