#include "psycode/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>

#include "psycode/lingfeat.hpp"
#include "psycode/random.hpp"

namespace psycode::synth {

namespace {

struct VocabWord {
    const char* word;
    const char* tag;
};

// Code-neutral filler vocabulary with coarse POS tags.
const std::vector<VocabWord>& neutral_vocab() {
    static const std::vector<VocabWord> v{
        {"i", "O"},       {"you", "O"},      {"we", "O"},       {"they", "O"},     {"it", "O"},
        {"me", "O"},      {"my", "D"},       {"the", "D"},      {"a", "D"},        {"this", "D"},
        {"that", "D"},    {"is", "V"},       {"was", "V"},      {"be", "V"},       {"got", "V"},
        {"get", "V"},     {"go", "V"},       {"going", "V"},    {"know", "V"},     {"see", "V"},
        {"want", "V"},    {"need", "V"},     {"think", "V"},    {"say", "V"},      {"said", "V"},
        {"make", "V"},    {"come", "V"},     {"take", "V"},     {"look", "V"},     {"feel", "V"},
        {"finna", "V"},   {"tryna", "V"},    {"ion", "V"},      {"day", "N"},      {"night", "N"},
        {"time", "N"},    {"people", "N"},   {"man", "N"},      {"girl", "N"},     {"school", "N"},
        {"house", "N"},   {"car", "N"},      {"game", "N"},     {"music", "N"},    {"friend", "N"},
        {"money", "N"},   {"block", "N"},    {"city", "N"},     {"phone", "N"},    {"life", "N"},
        {"world", "N"},   {"summer", "N"},   {"weekend", "N"},  {"party", "N"},    {"food", "N"},
        {"shoes", "N"},   {"song", "N"},     {"video", "N"},    {"lil", "A"},      {"good", "A"},
        {"bad", "A"},     {"new", "A"},      {"real", "A"},     {"big", "A"},      {"happy", "A"},
        {"crazy", "A"},   {"lit", "A"},      {"funny", "A"},    {"tired", "A"},    {"hungry", "A"},
        {"today", "R"},   {"now", "R"},      {"still", "R"},    {"always", "R"},   {"never", "R"},
        {"really", "R"},  {"just", "R"},     {"so", "R"},       {"too", "R"},      {"already", "R"},
        {"and", "&"},     {"but", "&"},      {"or", "&"},       {"with", "P"},     {"in", "P"},
        {"on", "P"},      {"at", "P"},       {"for", "P"},      {"to", "P"},       {"from", "P"},
        {"lol", "!"},     {"lmao", "!"},     {"yo", "!"},       {"yeah", "!"},     {"nah", "!"},
        {"chicago", "^"}, {"southside", "^"}, {"monday", "^"},  {"friday", "^"},   {"bulls", "^"},
    };
    return v;
}

const std::vector<std::string>& neutral_emoji() {
    static const std::vector<std::string> v{"😂", "🔥", "💯", "🤦‍♂️", "👀", "🙌🏾", "😎"};
    return v;
}

const PerCode<std::vector<std::string>>& code_vocabs() {
    static const PerCode<std::vector<std::string>> v{
        std::vector<std::string>{"opps", "pipe", "2017", "drill", "slide", "smoke", "🖕", "💉", "😤", "🔫"},
        std::vector<std::string>{"free", "miss", "bro", "love", "rip", "heaven", "locked", "gone", "🙏", "💔"},
        std::vector<std::string>{"smoke", "cup", "drank", "purple", "kush", "blunt", "high", "@mention",
                                 "💨", "🍃"}};
    return v;
}

std::string tag_for(const lingfeat::Token& tok) {
    using lingfeat::TokenKind;
    switch (tok.kind) {
        case TokenKind::emoji: return "E";
        case TokenKind::mention: return "@";
        case TokenKind::url: return "U";
        case TokenKind::punct: return ",";
        case TokenKind::word: break;
    }
    for (const auto& w : neutral_vocab()) {
        if (tok.surface == w.word) return w.tag;
    }
    if (!tok.surface.empty() && tok.surface[0] >= '0' && tok.surface[0] <= '9') return "$";
    return "N";
}

Box random_box(Rng& rng) {
    const double w = rng.uniform(40.0, 300.0);
    const double h = rng.uniform(40.0, 300.0);
    return {rng.uniform(0.0, 640.0 - w), rng.uniform(0.0, 480.0 - h), w, h};
}

// Small shift that keeps IoU with the original above 0.6.
Box jitter(const Box& b, Rng& rng) {
    return {b.x + rng.uniform(-0.05, 0.05) * b.w, b.y + rng.uniform(-0.05, 0.05) * b.h, b.w, b.h};
}

double round6(double v) { return std::round(v * 1e6) / 1e6; }

struct Generator {
    const SynthConfig& cfg;
    SynthDataset out;
    std::vector<std::vector<double>> directions;  // per-code sign pattern on its block

    explicit Generator(const SynthConfig& c) : cfg(c) {
        Rng rng(derive_seed(cfg.seed, {hash_label("directions")}));
        directions.resize(kNumCodes);
        for (std::size_t c2 = 0; c2 < kNumCodes; ++c2) {
            directions[c2].resize(static_cast<std::size_t>(cfg.signal_dims));
            for (auto& s : directions[c2]) s = rng.bernoulli(0.5) ? 1.0 : -1.0;
        }
    }

    std::string make_text(Rng& rng, const PerCode<bool>& latent, std::vector<std::string>& signal) {
        std::vector<std::string> words;
        const int len = rng.range(4, 12);
        const auto& vocab = neutral_vocab();
        for (int k = 0; k < len; ++k) words.emplace_back(vocab[rng.below(vocab.size())].word);
        if (rng.bernoulli(0.3)) words.push_back(neutral_emoji()[rng.below(neutral_emoji().size())]);
        for (auto c : kAllCodes) {
            const auto ci = index(c);
            if (!latent[ci] || !cfg.text_codes[ci]) continue;
            const auto& cv = code_vocabs()[ci];
            for (int slot = 0; slot < 3; ++slot) {
                if (!rng.bernoulli(cfg.text_signal_strength)) continue;
                const auto& w = cv[rng.below(cv.size())];
                signal.push_back(w);
                words.insert(words.begin() + static_cast<std::ptrdiff_t>(rng.below(words.size() + 1)), w);
            }
        }
        if (rng.bernoulli(0.2)) {
            words.insert(words.begin(), "@user" + std::to_string(rng.range(1, 999)));
        }
        if (rng.bernoulli(0.1)) words.push_back("https://t.co/" + std::to_string(rng.next_u64() % 100000));
        if (rng.bernoulli(0.2)) words.emplace_back("!");
        std::string text;
        for (std::size_t k = 0; k < words.size(); ++k) {
            if (k > 0) text.push_back(' ');
            std::string w = words[k];
            if (w == "@mention") w = "@user" + std::to_string(rng.range(1000, 1999));
            if (k == 0 && !w.empty() && w[0] >= 'a' && w[0] <= 'z' && rng.bernoulli(0.5)) {
                w[0] = static_cast<char>(w[0] - 'a' + 'A');
            }
            text += w;
        }
        return text;
    }

    void make_image(Rng& rng, const std::string& image_id, const PerCode<bool>& latent, bool tumblr,
                    LedgerEntry* ledger) {
        std::vector<ConceptBox> boxes;
        if (tumblr) {
            // Tumblr posts show one concept prominently.
            const Concept main = kAllConcepts[rng.below(kNumConcepts)];
            const int n = rng.range(1, 2);
            for (int k = 0; k < n; ++k) boxes.push_back({image_id, main, random_box(rng)});
        } else {
            for (auto c : kAllConcepts) {
                if (rng.bernoulli(cfg.concept_base_rates[index(c)])) {
                    const int n = c == Concept::person ? rng.range(1, 3) : 1;
                    for (int k = 0; k < n; ++k) boxes.push_back({image_id, c, random_box(rng)});
                }
            }
            for (auto code : kAllCodes) {
                const auto ci = index(code);
                const auto& plants = cfg.concept_plants[ci];
                if (!latent[ci] || !cfg.image_codes[ci] || plants.empty()) continue;
                if (!rng.bernoulli(cfg.image_signal_strength)) continue;
                const Concept c = plants[rng.below(plants.size())];
                boxes.push_back({image_id, c, random_box(rng)});
                if (ledger != nullptr) ledger->planted_concepts.push_back(c);
            }
        }
        const double recall = tumblr ? cfg.tumblr_detector_recall : cfg.detector_recall;
        for (const auto& b : boxes) {
            if (rng.bernoulli(recall)) {
                out.detections.push_back({image_id, b.label, round6(rng.uniform(0.5, 1.0)), jitter(b.box, rng)});
            }
        }
        // False detections: low scores at random places.
        const int max_fp = 3;
        for (int k = 0; k < max_fp; ++k) {
            if (rng.bernoulli(cfg.false_detections_per_image / max_fp)) {
                out.detections.push_back({image_id, kAllConcepts[rng.below(kNumConcepts)],
                                          round6(rng.uniform(0.0, 0.5)), random_box(rng)});
            }
        }
        out.gt_boxes.insert(out.gt_boxes.end(), boxes.begin(), boxes.end());

        imfeat::GlobalFeature g{image_id, std::vector<double>(static_cast<std::size_t>(cfg.global_dim))};
        for (auto& v : g.vector) v = rng.normal();
        for (auto code : kAllCodes) {
            const auto ci = index(code);
            if (!latent[ci] || !cfg.image_codes[ci]) continue;
            for (int k = 0; k < cfg.signal_dims; ++k) {
                const auto dim = static_cast<std::size_t>(static_cast<int>(ci) * cfg.signal_dims + k);
                if (dim < g.vector.size()) {
                    g.vector[dim] += cfg.image_signal_strength * directions[ci][static_cast<std::size_t>(k)];
                }
            }
        }
        for (auto& v : g.vector) v = round6(v);
        out.global.push_back(std::move(g));
    }

    void annotate(Rng& rng, const std::string& tweet_id, const PerCode<bool>& latent, LedgerEntry& ledger) {
        auto draw = [&](const std::string& annotator, corpus::AnnotatorRole role) {
            corpus::CodeAnnotation a{tweet_id, annotator, role, {}};
            for (auto c : kAllCodes) {
                const auto ci = index(c);
                a.flags[ci] = latent[ci] ? !rng.bernoulli(cfg.annotator_noise[ci])
                                         : rng.bernoulli(cfg.false_alarm_rate[ci]);
                ledger.positive_votes[ci] += a.flags[ci] ? 1 : 0;
            }
            ++ledger.n_annotators;
            out.corpus.annotations.push_back(a);
            return a;
        };
        const auto s1 = draw("student_1", corpus::AnnotatorRole::student);
        const auto s2 = draw("student_2", corpus::AnnotatorRole::student);
        draw("expert_1", corpus::AnnotatorRole::expert);
        draw("expert_2", corpus::AnnotatorRole::expert);
        if (s1.flags != s2.flags) draw("tiebreak_1", corpus::AnnotatorRole::tiebreak);
    }

    void run() {
        for (int u = 0; u < cfg.n_users; ++u) {
            Rng rng(derive_seed(cfg.seed, {hash_label("user"), static_cast<std::uint64_t>(u)}));
            const std::string user_id = "u" + std::to_string(u);
            const int n = rng.range(1, cfg.tweets_per_user_max);
            for (int k = 0; k < n; ++k) {
                const std::string tweet_id = user_id + "_t" + std::to_string(k);
                LedgerEntry ledger;
                ledger.tweet_id = tweet_id;
                ledger.user_id = user_id;
                for (auto c : kAllCodes) ledger.latent[index(c)] = rng.bernoulli(cfg.code_priors[index(c)]);
                corpus::TweetRecord t;
                t.tweet_id = tweet_id;
                t.user_id = user_id;
                t.text = make_text(rng, ledger.latent, ledger.signal_tokens);
                t.source = corpus::Source::twitter;
                if (rng.bernoulli(cfg.pos_tag_fraction)) {
                    lingfeat::PosTags tags;
                    for (const auto& tok : lingfeat::tokenize(t.text)) tags.emplace_back(tok.surface, tag_for(tok));
                    t.pos_tags = std::move(tags);
                }
                if (rng.bernoulli(cfg.image_fraction)) {
                    t.image_id = "img_" + tweet_id;
                    make_image(rng, *t.image_id, ledger.latent, false, &ledger);
                }
                annotate(rng, tweet_id, ledger.latent, ledger);
                out.corpus.tweets.push_back(std::move(t));
                out.ledger.push_back(std::move(ledger));
            }
        }
        for (int u = 0; u < cfg.n_tumblr_users; ++u) {
            Rng rng(derive_seed(cfg.seed, {hash_label("tumblr"), static_cast<std::uint64_t>(u)}));
            const std::string user_id = "tumblr_u" + std::to_string(u);
            for (int k = 0; k < cfg.tumblr_posts_per_user; ++k) {
                corpus::TweetRecord t;
                t.tweet_id = user_id + "_p" + std::to_string(k);
                t.user_id = user_id;
                t.source = corpus::Source::tumblr;
                t.image_id = "img_" + t.tweet_id;
                make_image(rng, *t.image_id, {}, true, nullptr);
                out.corpus.tweets.push_back(std::move(t));
            }
        }
    }
};

}  // namespace

void SynthConfig::validate() const {
    auto prob = [](double p, const char* what) {
        if (!(p >= 0.0 && p <= 1.0)) throw ValidationError(std::string(what) + " must be in [0, 1]");
    };
    if (n_users < 5) throw ValidationError("n_users must be at least 5");
    if (tweets_per_user_max < 1) throw ValidationError("tweets_per_user_max must be positive");
    for (double p : code_priors) prob(p, "code_priors");
    for (double p : annotator_noise) prob(p, "annotator_noise");
    for (double p : false_alarm_rate) prob(p, "false_alarm_rate");
    for (double p : concept_base_rates) prob(p, "concept_base_rates");
    prob(text_signal_strength, "text_signal_strength");
    prob(image_signal_strength, "image_signal_strength");
    prob(image_fraction, "image_fraction");
    prob(pos_tag_fraction, "pos_tag_fraction");
    prob(detector_recall, "detector_recall");
    prob(tumblr_detector_recall, "tumblr_detector_recall");
    if (global_dim < 1) throw ValidationError("global_dim must be positive");
    if (signal_dims < 0) throw ValidationError("signal_dims must be non-negative");
    if (false_detections_per_image < 0.0 || false_detections_per_image > 3.0) {
        throw ValidationError("false_detections_per_image must be in [0, 3]");
    }
    if (n_tumblr_users < 0 || tumblr_posts_per_user < 0) throw ValidationError("tumblr counts must be >= 0");
}

namespace {

template <typename T>
void read_per_code(const Json& j, const char* key, PerCode<T>& out) {
    if (!j.contains(key)) return;
    const auto& v = j.at(key);
    if (v.is_object()) {
        for (auto c : kAllCodes) {
            if (v.contains(std::string(code_name(c)))) out[index(c)] = v.at(std::string(code_name(c))).get<T>();
        }
        return;
    }
    const auto arr = v.get<std::vector<T>>();
    if (arr.size() != kNumCodes) throw ValidationError(std::string(key) + " needs 3 values");
    std::copy(arr.begin(), arr.end(), out.begin());
}

}  // namespace

SynthConfig config_from_json(const Json& j) {
    SynthConfig c;
    c.n_users = j.value("n_users", c.n_users);
    c.tweets_per_user_max = j.value("tweets_per_user_max", c.tweets_per_user_max);
    read_per_code(j, "code_priors", c.code_priors);
    c.text_signal_strength = j.value("text_signal_strength", c.text_signal_strength);
    c.image_signal_strength = j.value("image_signal_strength", c.image_signal_strength);
    c.global_dim = j.value("global_dim", c.global_dim);
    c.seed = j.value("seed", c.seed);
    read_per_code(j, "annotator_noise", c.annotator_noise);
    read_per_code(j, "false_alarm_rate", c.false_alarm_rate);
    read_per_code(j, "text_codes", c.text_codes);
    read_per_code(j, "image_codes", c.image_codes);
    if (j.contains("concept_plants")) {
        for (auto code : kAllCodes) c.concept_plants[index(code)].clear();
        for (const auto& [key, list] : j.at("concept_plants").items()) {
            auto code = parse_code(key);
            if (!code) throw ValidationError("concept_plants: unknown code " + key);
            for (const auto& name : list) {
                auto con = parse_concept(name.get<std::string>());
                if (!con) throw ValidationError("concept_plants: unknown concept");
                c.concept_plants[index(*code)].push_back(*con);
            }
        }
    }
    if (j.contains("concept_base_rates")) {
        for (const auto& [key, rate] : j.at("concept_base_rates").items()) {
            auto con = parse_concept(key);
            if (!con) throw ValidationError("concept_base_rates: unknown concept " + key);
            c.concept_base_rates[index(*con)] = rate.get<double>();
        }
    }
    c.signal_dims = j.value("signal_dims", c.signal_dims);
    c.image_fraction = j.value("image_fraction", c.image_fraction);
    c.pos_tag_fraction = j.value("pos_tag_fraction", c.pos_tag_fraction);
    c.detector_recall = j.value("detector_recall", c.detector_recall);
    c.false_detections_per_image = j.value("false_detections_per_image", c.false_detections_per_image);
    c.n_tumblr_users = j.value("n_tumblr_users", c.n_tumblr_users);
    c.tumblr_posts_per_user = j.value("tumblr_posts_per_user", c.tumblr_posts_per_user);
    c.tumblr_detector_recall = j.value("tumblr_detector_recall", c.tumblr_detector_recall);
    c.validate();
    return c;
}

Json to_json(const SynthConfig& c) {
    Json j;
    j["n_users"] = c.n_users;
    j["tweets_per_user_max"] = c.tweets_per_user_max;
    j["code_priors"] = c.code_priors;
    j["text_signal_strength"] = c.text_signal_strength;
    j["image_signal_strength"] = c.image_signal_strength;
    j["global_dim"] = c.global_dim;
    j["seed"] = c.seed;
    j["annotator_noise"] = c.annotator_noise;
    j["false_alarm_rate"] = c.false_alarm_rate;
    j["text_codes"] = c.text_codes;
    j["image_codes"] = c.image_codes;
    Json plants = Json::object();
    for (auto code : kAllCodes) {
        Json list = Json::array();
        for (auto con : c.concept_plants[index(code)]) list.push_back(std::string(concept_name(con)));
        plants[std::string(code_name(code))] = list;
    }
    j["concept_plants"] = plants;
    Json rates = Json::object();
    for (auto con : kAllConcepts) rates[std::string(concept_name(con))] = c.concept_base_rates[index(con)];
    j["concept_base_rates"] = rates;
    j["signal_dims"] = c.signal_dims;
    j["image_fraction"] = c.image_fraction;
    j["pos_tag_fraction"] = c.pos_tag_fraction;
    j["detector_recall"] = c.detector_recall;
    j["false_detections_per_image"] = c.false_detections_per_image;
    j["n_tumblr_users"] = c.n_tumblr_users;
    j["tumblr_posts_per_user"] = c.tumblr_posts_per_user;
    j["tumblr_detector_recall"] = c.tumblr_detector_recall;
    return j;
}

SynthDataset generate(const SynthConfig& config) {
    config.validate();
    Generator g(config);
    g.run();
    return std::move(g.out);
}

std::vector<std::string> dataset_files() {
    return {"tweets.jsonl",     "annotations.jsonl", "global_features.jsonl", "detections.jsonl",
            "gt_boxes.jsonl",   "ledger.jsonl",      "dal.csv",               "phrasebook.csv"};
}

void write_dataset(const SynthDataset& data, const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    const fs::path dir(out_dir);
    corpus::save_corpus(data.corpus, (dir / "tweets.jsonl").string(), (dir / "annotations.jsonl").string());
    std::vector<Json> rows;
    for (const auto& g : data.global) rows.push_back(imfeat::to_json(g));
    write_jsonl((dir / "global_features.jsonl").string(), rows);
    rows.clear();
    for (const auto& d : data.detections) rows.push_back(imfeat::to_json(d));
    write_jsonl((dir / "detections.jsonl").string(), rows);
    rows.clear();
    for (const auto& b : data.gt_boxes) rows.push_back(imfeat::to_json(b));
    write_jsonl((dir / "gt_boxes.jsonl").string(), rows);
    rows.clear();
    for (const auto& e : data.ledger) {
        Json j;
        j["tweet_id"] = e.tweet_id;
        j["user_id"] = e.user_id;
        Json latent;
        Json votes;
        for (auto c : kAllCodes) {
            latent[std::string(code_name(c))] = e.latent[index(c)];
            votes[std::string(code_name(c))] = e.positive_votes[index(c)];
        }
        j["latent"] = latent;
        j["positive_votes"] = votes;
        j["n_annotators"] = e.n_annotators;
        j["signal_tokens"] = e.signal_tokens;
        Json planted = Json::array();
        for (auto c : e.planted_concepts) planted.push_back(std::string(concept_name(c)));
        j["planted_concepts"] = planted;
        rows.push_back(std::move(j));
    }
    write_jsonl((dir / "ledger.jsonl").string(), rows);
    write_text_file((dir / "dal.csv").string(), toy_dal_csv());
    write_text_file((dir / "phrasebook.csv").string(), toy_phrasebook_csv());
}

const std::vector<std::string>& code_vocabulary(Code code) { return code_vocabs()[index(code)]; }

std::string toy_dal_csv() {
    return "word,pleasantness,activation,imagery\n"
           "love,3.0,2.25,2.4\n"
           "miss,1.5,1.75,1.4\n"
           "free,2.6,1.9,1.6\n"
           "brother,2.5,1.7,2.6\n"
           "friend,2.8,1.9,2.3\n"
           "happy,3.0,2.6,2.2\n"
           "sad,1.1,1.4,2.0\n"
           "heaven,2.9,1.6,2.4\n"
           "gone,1.4,1.3,1.6\n"
           "death,1.0,2.3,2.6\n"
           "pray,2.4,1.4,2.2\n"
           "smoke,1.5,1.9,2.8\n"
           "cup,2.0,1.3,3.0\n"
           "drink,2.1,1.9,2.8\n"
           "purple,2.1,1.6,2.8\n"
           "high,2.1,2.1,1.8\n"
           "enemy,1.2,2.4,1.8\n"
           "pipe,1.8,1.4,2.9\n"
           "gun,1.2,2.6,3.0\n"
           "fight,1.3,2.6,2.5\n"
           "angry,1.1,2.7,2.0\n"
           "insult,1.1,2.3,1.6\n"
           "fire,1.9,2.7,2.9\n"
           "laugh,2.9,2.5,2.4\n"
           "money,2.6,2.0,2.8\n"
           "day,2.3,1.6,2.0\n"
           "night,2.1,1.4,2.5\n"
           "time,2.0,1.6,1.4\n"
           "people,2.2,1.8,2.2\n"
           "man,2.1,1.6,2.6\n"
           "girl,2.5,1.8,2.8\n"
           "school,1.9,1.9,2.9\n"
           "house,2.3,1.4,3.0\n"
           "car,2.2,2.0,3.0\n"
           "game,2.5,2.3,2.4\n"
           "music,2.8,2.2,2.4\n"
           "good,2.7,1.7,1.6\n"
           "bad,1.3,1.9,1.4\n"
           "new,2.4,1.9,1.6\n"
           "real,2.2,1.6,1.4\n"
           "crazy,1.6,2.5,1.8\n"
           "tired,1.4,1.2,1.8\n"
           "hungry,1.6,2.0,2.0\n"
           "little,2.0,1.4,1.8\n"
           "going,2.0,2.0,1.2\n"
           "know,2.1,1.5,1.2\n"
           "feel,2.1,1.7,1.4\n"
           "party,2.8,2.6,2.6\n"
           "song,2.7,2.0,2.3\n"
           "life,2.5,2.0,1.8\n";
}

std::string toy_phrasebook_csv() {
    return "token,translation\n"
           "bro,brother\n"
           "lil,little\n"
           "opps,enemy\n"
           "drank,drink\n"
           "finna,going\n"
           "tryna,going\n"
           "lit,party fire\n"
           "rip,death\n"
           "\U0001F64F,pray\n"
           "\U0001F494,sad love\n"
           "\U0001F602,laugh\n"
           "\U0001F525,fire\n"
           "\U0001F595,insult\n"
           "\U0001F52B,gun\n"
           "\U0001F624,angry\n"
           "\U0001F4A8,smoke\n";
}

}  // namespace psycode::synth
