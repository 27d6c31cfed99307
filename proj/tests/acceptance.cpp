// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero when any criterion fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "psycode/deteval.hpp"
#include "psycode/learn.hpp"
#include "psycode/log.hpp"
#include "psycode/metrics.hpp"
#include "psycode/nn.hpp"
#include "psycode/pipeline.hpp"
#include "psycode/synth.hpp"
#include "psycode/textcnn.hpp"

using namespace psycode;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

std::vector<double> randn(Rng& rng, std::size_t n, double scale = 1.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = scale * rng.normal();
    return v;
}

double weighted(std::span<const double> out, std::span<const double> w) {
    double s = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) s += out[i] * w[i];
    return s;
}

// |a - n| / max(|a|, |n|, 1e-6) against central differences from the oracle.
double rel_error(const std::function<double()>& f, std::vector<double>& x, std::span<const double> analytic) {
    const auto numeric = oracle::numeric_gradient(f, x);
    double worst = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = std::abs(analytic[i] - numeric[i]);
        worst = std::max(worst, d / std::max({std::abs(analytic[i]), std::abs(numeric[i]), 1e-6}));
    }
    return worst;
}

pipeline::ExperimentData synthetic(const synth::SynthConfig& sc) {
    const auto ds = synth::generate(sc);
    auto data = pipeline::build_data(ds.corpus, ds.global, ds.detections, ds.gt_boxes, corpus::LabelRule::any_positive);
    data.dal = lingfeat::parse_dal(synth::toy_dal_csv());
    data.phrasebook = lingfeat::parse_phrasebook(synth::toy_phrasebook_csv(), &data.dal);
    return data;
}

textcnn::TextCnnConfig small_cnn(textcnn::Level level) {
    auto c = textcnn::TextCnnConfig::defaults(level);
    c.emb_dim = level == textcnn::Level::word ? 16 : 8;
    c.filter_widths = level == textcnn::Level::word ? std::vector<std::size_t>{1, 2, 3} : std::vector<std::size_t>{2, 3, 4};
    c.maps_per_width = 8;
    c.hidden_dim = 100;
    if (level == textcnn::Level::word) {
        c.max_epochs = 30;
        c.patience = 5;
    } else {
        c.max_len = 140;
        c.lr = 0.005;
        c.max_epochs = 60;
        c.patience = 20;
    }
    return c;
}

// ---------------------------------------------------------------------------

Outcome gradients() {
    Rng rng(101);
    double worst = 0.0;
    int shapes = 0;
    for (int rep = 0; rep < 20; ++rep, ++shapes) {
        // conv + max pool
        const std::size_t seq = 3 + rng.below(8), emb = 1 + rng.below(5);
        const std::size_t width = 1 + rng.below(std::min<std::size_t>(seq, 4)), maps = 1 + rng.below(4);
        auto x = randn(rng, seq * emb);
        auto f = randn(rng, width * emb * maps);
        auto b = randn(rng, maps, 0.1);
        auto w = randn(rng, maps);
        const std::size_t valid = 1 + rng.below(seq - width + 1);
        auto conv = [&] {
            std::vector<double> out(maps);
            nn::ConvPoolCache c;
            nn::conv1d_maxpool_forward<double>(x, seq, emb, f, b, width, maps, valid, out, c);
            return weighted(out, w);
        };
        std::vector<double> out(maps);
        nn::ConvPoolCache cache;
        nn::conv1d_maxpool_forward<double>(x, seq, emb, f, b, width, maps, valid, out, cache);
        std::vector<double> gx(x.size()), gf(f.size()), gb(b.size());
        nn::conv1d_maxpool_backward<double>(x, emb, f, width, maps, cache, w, gx, gf, gb);
        worst = std::max({worst, rel_error(conv, x, gx), rel_error(conv, f, gf), rel_error(conv, b, gb)});

        // dense into softmax cross-entropy
        const std::size_t in = 1 + rng.below(12), classes = 2 + rng.below(4);
        const std::size_t label = rng.below(classes);
        auto xin = randn(rng, in);
        auto W = randn(rng, classes * in);
        auto bias = randn(rng, classes);
        auto dense = [&] {
            std::vector<double> z(classes), g(classes);
            nn::dense_forward<double>(xin, W, bias, z);
            return nn::softmax_xent<double>(z, label, g);
        };
        std::vector<double> z(classes), gz(classes);
        nn::dense_forward<double>(xin, W, bias, z);
        nn::softmax_xent<double>(z, label, gz);
        std::vector<double> gxin(in), gW(W.size()), gbias(classes);
        nn::dense_backward<double>(xin, W, gz, gxin, gW, gbias);
        worst = std::max({worst, rel_error(dense, xin, gxin), rel_error(dense, W, gW), rel_error(dense, bias, gbias)});

        // relu and dropout with a fixed mask
        const std::size_t n = 1 + rng.below(20);
        auto v = randn(rng, n);
        auto wv = randn(rng, n);
        const std::uint64_t mask_seed = rng.next_u64();
        const double rate = 0.5 * rng.uniform();
        auto act = [&] {
            auto a = v;
            nn::relu_forward<double>(a);
            Rng r(mask_seed);
            nn::dropout<double>(a, rate, nn::Mode::train, r);
            return weighted(a, wv);
        };
        auto a = v;
        nn::relu_forward<double>(a);
        const auto post_relu = a;
        Rng r(mask_seed);
        const auto mask = nn::dropout<double>(a, rate, nn::Mode::train, r);
        auto gv = wv;
        nn::dropout_backward<double>(mask, gv);
        nn::relu_backward<double>(post_relu, gv);
        worst = std::max(worst, rel_error(act, v, gv));
    }

    // Full text-CNN loss at both levels, in train (dropout) and eval mode.
    const std::vector<textcnn::TrainingExample> ex{{"rip bro we miss you", "a", true},
                                                   {"go to school today", "b", false},
                                                   {"heaven", "c", true},
                                                   {"", "d", false}};
    for (int rep = 0; rep < 4; ++rep, ++shapes) {
        const auto level = rep % 2 == 0 ? textcnn::Level::word : textcnn::Level::character;
        auto cfg = textcnn::TextCnnConfig::defaults(level);
        cfg.emb_dim = 2 + rng.below(4);
        cfg.filter_widths = {1 + rng.below(2), 3};
        cfg.maps_per_width = 2 + rng.below(3);
        cfg.hidden_dim = 2 + rng.below(4);
        cfg.max_len = level == textcnn::Level::word ? 6 : 12;
        textcnn::TextCnnModel m(cfg, textcnn::build_unit_vocabulary(ex, cfg), nullptr);
        for (auto& p : m.parameters()) {
            for (auto& val : p.tensor->values) val += 0.05 * rng.normal();
        }
        std::fill_n(m.embedding.values.begin(), cfg.emb_dim, 0.0);
        std::vector<textcnn::Encoded> xs;
        std::vector<std::uint8_t> ys;
        for (const auto& e : ex) {
            xs.push_back(m.encode(e.text));
            ys.push_back(e.label ? 1 : 0);
        }
        for (auto mode : {nn::Mode::eval, nn::Mode::train}) {
            m.zero_grad();
            m.batch_loss(xs, ys, mode, 9, true);
            auto loss = [&] { return m.batch_loss(xs, ys, mode, 9, false); };
            for (auto& p : m.parameters()) {
                const auto analytic = p.tensor->grad;
                worst = std::max(worst, rel_error(loss, p.tensor->values, analytic));
            }
        }
    }
    return {worst < 1e-4 && shapes >= 20,
            std::to_string(shapes) + " shapes, max relative error " + fmt("%.2e", worst)};
}

Outcome smo_oracle() {
    Rng rng(202);
    double worst_gap = 0.0, worst_kkt = 0.0;
    for (int rep = 0; rep < 50; ++rep) {
        const std::size_t n = 2 + rng.below(11), d = 1 + rng.below(4);
        Matrix X(n, d);
        std::vector<std::uint8_t> y(n);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t k = 0; k < d; ++k) X(i, k) = rng.normal();
            y[i] = i < 2 ? static_cast<std::uint8_t>(i) : static_cast<std::uint8_t>(rng.bernoulli(0.5));
        }
        learn::RbfSvmOptions o;
        o.C = 0.1 + 3.0 * rng.uniform();
        o.gamma = 0.1 + 2.0 * rng.uniform();
        o.class_weight = rng.bernoulli(0.5) ? learn::ClassWeight::balanced : learn::ClassWeight::none;
        o.tolerance = 1e-6;
        const auto res = learn::train_rbf_svm(X, y, o);

        std::vector<std::vector<double>> K(n, std::vector<double>(n));
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                double d2 = 0.0;
                for (std::size_t k = 0; k < d; ++k) d2 += (X(i, k) - X(j, k)) * (X(i, k) - X(j, k));
                K[i][j] = std::exp(-*o.gamma * d2);
            }
        }
        std::vector<double> ys(n);
        for (std::size_t i = 0; i < n; ++i) ys[i] = y[i] ? 1.0 : -1.0;
        const double best = oracle::svm_dual_optimum(K, ys, res.upper, 20000);
        worst_gap = std::max(worst_gap, std::abs(res.dual_objective - best));
        worst_kkt = std::max(worst_kkt, learn::kkt_residual(res, X, y));
    }
    return {worst_gap <= 1e-4 && worst_kkt <= 1e-3,
            "50 datasets, max |dual - oracle| " + fmt("%.2e", worst_gap) + ", max KKT residual " + fmt("%.2e", worst_kkt)};
}

double oracle_iou(const Box& a, const Box& b) {
    const double w = std::max(0.0, std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x));
    const double h = std::max(0.0, std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y));
    const double inter = w * h;
    return inter / (a.w * a.h + b.w * b.h - inter);
}

// Greedy matching written out directly, then every cutoff of the ranking.
double oracle_detection_ap(std::vector<ConceptDetection> dets, const std::vector<ConceptBox>& gt, Concept c) {
    std::erase_if(dets, [&](const auto& d) { return d.label != c; });
    std::sort(dets.begin(), dets.end(), [](const auto& a, const auto& b) { return a.score > b.score; });
    std::vector<bool> used(gt.size(), false);
    std::vector<std::uint8_t> tp;
    double n_gt = 0.0;
    for (const auto& g : gt) n_gt += g.label == c ? 1.0 : 0.0;
    for (const auto& d : dets) {
        double best = -1.0;
        std::size_t at = gt.size();
        for (std::size_t j = 0; j < gt.size(); ++j) {
            if (used[j] || gt[j].label != c || gt[j].image_id != d.image_id) continue;
            const double v = oracle_iou(d.box, gt[j].box);
            if (v > best) {
                best = v;
                at = j;
            }
        }
        if (at < gt.size() && best >= 0.5) {
            used[at] = true;
            tp.push_back(1);
        } else {
            tp.push_back(0);
        }
    }
    double ap = 0.0, prev_recall = 0.0;
    for (std::size_t k = 1; k <= tp.size(); ++k) {
        double hits = 0.0;
        for (std::size_t i = 0; i < k; ++i) hits += tp[i];
        const double recall = hits / n_gt;
        ap += (recall - prev_recall) * hits / static_cast<double>(k);
        prev_recall = recall;
    }
    return ap;
}

Outcome ap_oracle() {
    Rng rng(303);
    double worst = 0.0;
    for (int rep = 0; rep < 200; ++rep) {
        const std::size_t n = 1 + rng.below(15);
        std::vector<double> s(n);
        std::vector<std::uint8_t> y(n);
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = rng.uniform();
            y[i] = rng.bernoulli(0.4) ? 1 : 0;
        }
        y[rng.below(n)] = 1;
        worst = std::max(worst, std::abs(*average_precision(s, y) - oracle::exhaustive_ap(s, y)));
    }
    for (int rep = 0; rep < 200; ++rep) {
        std::vector<ConceptBox> gt;
        std::vector<ConceptDetection> dets;
        const std::size_t n_gt = 1 + rng.below(6);
        for (std::size_t i = 0; i < n_gt; ++i) {
            const Concept c = rng.bernoulli(0.7) ? Concept::joint : Concept::money;
            gt.push_back({"img" + std::to_string(rng.below(3)), c, {rng.uniform(0, 50), rng.uniform(0, 50), 20, 20}});
        }
        const std::size_t n_det = 1 + rng.below(15);
        for (std::size_t i = 0; i < n_det; ++i) {
            const auto& g = gt[rng.below(gt.size())];
            const Box box{g.box.x + rng.uniform(-8, 8), g.box.y + rng.uniform(-8, 8), 20, 20};
            dets.push_back({rng.bernoulli(0.8) ? g.image_id : "img9", rng.bernoulli(0.8) ? g.label : Concept::lean,
                            rng.uniform(), box});
        }
        if (std::none_of(gt.begin(), gt.end(), [](const auto& g) { return g.label == Concept::joint; })) continue;
        const double lib = *deteval::detection_ap(deteval::match_detections(dets, gt, Concept::joint));
        worst = std::max(worst, std::abs(lib - oracle_detection_ap(dets, gt, Concept::joint)));
    }
    const std::vector<double> hs{0.9, 0.8, 0.1};
    const std::vector<std::uint8_t> hy{1, 0, 1};
    const double hand = *average_precision(hs, hy);
    return {worst <= 1e-10 && std::abs(hand - 5.0 / 6.0) <= 1e-12,
            "400 sets, max |AP - exhaustive| " + fmt("%.1e", worst) + ", hand case " + fmt("%.6f", hand)};
}

Outcome baselines() {
    synth::SynthConfig sc;
    sc.n_users = 100;
    sc.global_dim = 8;
    sc.seed = 404;
    const auto data = synthetic(sc);
    const auto folds = pipeline::make_folds(data.user_stats(), 5, 404);
    bool ok = true;
    double worst_p = 0.0, worst_f1 = 0.0;
    for (int f = 0; f < 5; ++f) {
        const auto split = pipeline::fold_split(data, folds, f);
        for (auto code : kAllCodes) {
            const auto all = data.code_labels(code);
            std::vector<std::uint8_t> train, test;
            for (auto i : split.train) train.push_back(all[i]);
            for (auto i : split.test) test.push_back(all[i]);
            const auto p = pipeline::run_baseline(pipeline::kPositiveBaseline, train, test.size(), 1);
            const auto m = classification_metrics(p.scores, p.predictions, test);
            const double rate = static_cast<double>(std::count(test.begin(), test.end(), 1)) / test.size();
            ok = ok && m.recall == 1.0;
            worst_p = std::max(worst_p, std::abs(m.precision - rate));

            double total = 0.0;
            for (std::uint64_t s = 0; s < 1000; ++s) {
                const auto r = pipeline::run_baseline(pipeline::kRandomBaseline, train, test.size(),
                                                      derive_seed(404, {static_cast<std::uint64_t>(f), s}));
                total += classification_metrics(r.scores, r.predictions, test).f1;
            }
            const double prior = static_cast<double>(std::count(train.begin(), train.end(), 1)) / train.size();
            worst_f1 = std::max(worst_f1, std::abs(total / 1000.0 - prior));
        }
    }
    // The prior-0.25 example: P 0.25, F1 0.40.
    std::vector<std::uint8_t> y(100);
    for (std::size_t i = 0; i < y.size(); i += 4) y[i] = 1;
    const auto p = pipeline::run_baseline(pipeline::kPositiveBaseline, y, y.size(), 1);
    const auto m = classification_metrics(p.scores, p.predictions, y);
    ok = ok && std::abs(m.precision - 0.25) <= 1e-12 && std::abs(m.f1 - 0.4) <= 1e-12;
    ok = ok && worst_p <= 1e-12 && worst_f1 <= 0.03;
    return {ok, "positive R = 1, max |P - positive rate| " + fmt("%.1e", worst_p) +
                    "; random max |mean F1 - prior| " + fmt("%.3f", worst_f1) + " (15 fold/code cells)"};
}

Outcome leakage() {
    synth::SynthConfig sc;
    sc.n_users = 52;
    sc.global_dim = 16;
    sc.seed = 505;
    const auto data = synthetic(sc);
    pipeline::ExperimentConfig config;
    config.seed = 505;
    config.cnn_word = small_cnn(textcnn::Level::word);
    config.cnn_char = small_cnn(textcnn::Level::character);
    config.cnn_word.max_epochs = config.cnn_char.max_epochs = 3;
    const auto folds = pipeline::make_folds(data.user_stats(), 5, 505);
    const auto audit = pipeline::leakage_audit(data, folds, config, pipeline::serial_runner());
    int matched = 0;
    for (const auto& a : audit) matched += a.match() ? 1 : 0;
    return {data.size() >= 500 && matched == 5 && audit.size() == 5,
            std::to_string(data.size()) + " tweets, " + std::to_string(config.models.size()) + " models, " +
                std::to_string(matched) + "/5 folds identical"};
}

Outcome fusion_gain() {
    synth::SynthConfig sc;
    sc.n_users = 105;
    sc.global_dim = 64;
    sc.seed = 2024;
    sc.text_codes = {false, true, false};
    sc.image_codes = {true, false, true};
    const auto data = synthetic(sc);
    pipeline::ExperimentConfig config;
    config.seed = 2024;
    config.cnn_word = small_cnn(textcnn::Level::word);
    config.cnn_char = small_cnn(textcnn::Level::character);
    config.models = {pipeline::roster_model("text_early"), pipeline::roster_model("visual_early"),
                     pipeline::roster_model("multimodal_early")};
    const auto folds = pipeline::make_folds(data.user_stats(), 5, 2024);
    const auto r = pipeline::run_experiment(data, folds, config, pipeline::serial_runner());
    const auto& text = r.models[0];
    const auto& image = r.models[1];
    const auto& multi = r.models[2];
    auto ap = [](const pipeline::ModelResult& m, Code c) { return m.codes[index(c)].mean_ap; };
    const bool gain = multi.map >= text.map + 0.05 && multi.map >= image.map + 0.05;
    const bool pattern = ap(text, Code::loss) > ap(image, Code::loss) &&
                         ap(image, Code::aggression) > ap(text, Code::aggression) &&
                         ap(image, Code::substance_use) > ap(text, Code::substance_use);
    std::ostringstream s;
    s << data.size() << " tweets, mAP text " << fmt("%.3f", text.map) << " image " << fmt("%.3f", image.map)
      << " multimodal " << fmt("%.3f", multi.map) << "; AP text/image: aggression " << fmt("%.2f", ap(text, Code::aggression))
      << "/" << fmt("%.2f", ap(image, Code::aggression)) << " loss " << fmt("%.2f", ap(text, Code::loss)) << "/"
      << fmt("%.2f", ap(image, Code::loss)) << " substance_use " << fmt("%.2f", ap(text, Code::substance_use)) << "/"
      << fmt("%.2f", ap(image, Code::substance_use));
    return {data.size() >= 1000 && gain && pattern, s.str()};
}

Outcome planted_concepts() {
    synth::SynthConfig sc;
    sc.n_users = 100;
    sc.global_dim = 8;
    sc.seed = 707;
    sc.concept_plants = {std::vector<Concept>{Concept::handgun}, std::vector<Concept>{},
                         std::vector<Concept>{Concept::joint}};
    const auto data = synthetic(sc);
    pipeline::ExperimentConfig config;
    config.seed = 707;
    const auto folds = pipeline::make_folds(data.user_stats(), 5, 707);
    const std::set<std::pair<Code, Concept>> planted{{Code::aggression, Concept::handgun},
                                                     {Code::substance_use, Concept::joint}};

    const auto sens = pipeline::sensitivity_analysis(data, folds, config);
    bool sens_ok = true;
    double min_planted = std::numeric_limits<double>::infinity(), max_unplanted_code = -1e300;
    for (const auto& col : sens.columns) {
        const auto top = static_cast<std::size_t>(
            std::max_element(col.coefficients.begin(), col.coefficients.end()) - col.coefficients.begin());
        if (col.code == Code::loss) {
            max_unplanted_code = std::max(max_unplanted_code, col.coefficients[top]);
        } else {
            sens_ok = sens_ok && planted.contains({col.code, kAllConcepts[top]});
            min_planted = std::min(min_planted, col.coefficients[top]);
        }
    }
    sens_ok = sens_ok && max_unplanted_code < min_planted;

    const auto abl = pipeline::ablation_study(data, folds, config, pipeline::serial_runner());
    std::set<std::pair<Code, Concept>> found;
    for (auto code : kAllCodes) {
        for (auto c : kAllConcepts) {
            const auto& cell = abl.cells[index(code)][index(c)];
            if (cell.significant_ap && cell.mean_ap < 0.0) found.insert({code, c});
        }
    }
    std::ostringstream s;
    s << "sensitivity top coefficients " << (sens_ok ? "match" : "do not match") << " (smallest planted "
      << fmt("%.2f", min_planted) << ", largest for loss " << fmt("%.2f", max_unplanted_code)
      << "); ablation significant negative dAP:";
    for (const auto& [code, c] : found) {
        s << " " << code_name(code) << "/" << concept_name(c) << " "
          << fmt("%.2f", abl.cells[index(code)][index(c)].mean_ap);
    }
    return {sens_ok && found == planted, s.str()};
}

Outcome detector() {
    const double q = 0.7;
    const int per_source = 1500;
    Rng rng(808);
    std::vector<ConceptDetection> dets;
    std::vector<ConceptBox> gt;
    std::vector<pipeline::UserStats> users;
    std::map<std::string, std::vector<std::string>> images_of;
    std::vector<std::pair<std::string, corpus::Source>> images;
    for (auto source : {corpus::Source::twitter, corpus::Source::tumblr}) {
        const std::string tag = source == corpus::Source::twitter ? "tw" : "tb";
        for (int u = 0; u < 100; ++u) users.push_back({tag + std::to_string(u), 0, {}});
        // One box per concept per image slot; images hold three boxes.
        for (int i = 0; i < per_source * static_cast<int>(kNumConcepts) / 3; ++i) {
            const std::string img = tag + "_img" + std::to_string(i);
            const std::string user = tag + std::to_string(rng.below(100));
            images.emplace_back(img, source);
            images_of[user].push_back(img);
            for (int k = 0; k < 3; ++k) {
                const Concept c = kAllConcepts[static_cast<std::size_t>(3 * i + k) % kNumConcepts];
                const Box b{100.0 * k, 0.0, 60.0, 60.0};
                gt.push_back({img, c, b});
                if (rng.bernoulli(q)) dets.push_back({img, c, rng.uniform(0.5, 1.0), {b.x + 2, b.y + 2, 60, 60}});
                if (rng.bernoulli(0.2)) dets.push_back({img, c, rng.uniform(0.0, 0.5), {b.x, 300, 40, 40}});
            }
        }
    }
    for (auto& u : users) u.tweets = images_of[u.user_id].size();
    const auto folds = pipeline::make_folds(users, 5, 808);
    std::map<std::string, int> fold_of_image;
    for (const auto& [user, imgs] : images_of) {
        for (const auto& img : imgs) fold_of_image[img] = folds.fold(user);
    }
    std::vector<deteval::EvalImage> eval;
    for (const auto& [img, source] : images) eval.push_back({img, source, fold_of_image.at(img)});
    const auto report = deteval::detection_report(dets, gt, eval, 5);

    double worst = 0.0;
    bool defined = true;
    for (auto col : deteval::kColumns) {
        for (auto c : kAllConcepts) {
            const auto& cell = report.concepts[static_cast<std::size_t>(col)][index(c)];
            defined = defined && cell.mean && cell.sd;
            if (cell.mean) worst = std::max(worst, std::abs(*cell.mean - q));
        }
    }
    const auto table = deteval::report_table(report);
    bool layout = table.header.size() == 4 && table.header[1].starts_with("Complete") &&
                  table.header[2].starts_with("Twitter") && table.header[3].starts_with("Tumblr") &&
                  table.rows.size() == kNumConcepts + 1 && table.rows.back()[0] == "mAP";
    for (const auto& row : table.rows) {
        for (std::size_t k = 1; k < row.size(); ++k) layout = layout && row[k].find("±") != std::string::npos;
    }
    return {defined && layout && worst <= 0.05,
            "q " + fmt("%.2f", q) + ", " + std::to_string(per_source) + " boxes per concept per source, max |AP - q| " +
                fmt("%.3f", worst) + ", table " + (layout ? "has" : "lacks") + " Complete/Twitter/Tumblr mean ± SD"};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

Outcome determinism() {
    const fs::path dir = fs::path(PSYCODE_ACCEPTANCE_DIR) / "determinism";
    fs::remove_all(dir);
    fs::create_directories(dir);
    {
        std::ofstream cfg(dir / "config.json");
        cfg << R"({"synthetic": {"n_users": 30, "global_dim": 16, "seed": 909, "n_tumblr_users": 5},
 "seed": 909, "linguistic": {"k": 200},
 "cnn_word": {"emb_dim": 8, "filter_widths": [1, 2], "maps_per_width": 4, "hidden_dim": 8, "max_epochs": 3},
 "cnn_char": {"emb_dim": 4, "filter_widths": [2, 3], "maps_per_width": 4, "hidden_dim": 8, "max_epochs": 3, "max_len": 80}})";
    }
    const std::string cli = PSYCODE_CLI;
    const std::string cfg = (dir / "config.json").string();
    auto run = [&](const std::string& args) {
        const std::string cmd = "\"" + cli + "\" --quiet --config \"" + cfg + "\" " + args;
        return std::system(cmd.c_str());
    };
    if (run("--out \"" + dir.string() + "\" gen-synthetic") != 0) return {false, "gen-synthetic failed"};
    for (const char* out : {"run1", "run2"}) {
        if (run("--out \"" + (dir / out).string() + "\" run-experiment") != 0) return {false, "run-experiment failed"};
    }
    std::size_t files = 0;
    bool same = true;
    for (const auto& e : fs::directory_iterator(dir / "run1")) {
        const auto other = dir / "run2" / e.path().filename();
        same = same && fs::exists(other) && slurp(e.path()) == slurp(other);
        ++files;
    }
    std::size_t files2 = 0;
    for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir / "run2")) ++files2;
    same = same && files == files2 && files > 0 && fs::exists(dir / "run1" / "results.json");
    return {same, std::to_string(files) + " report files " + (same ? "byte-identical" : "differ") + " across two CLI runs"};
}

Outcome fold_balance() {
    synth::SynthConfig sc;
    sc.n_users = 200;
    sc.global_dim = 8;
    sc.seed = 1010;
    const auto data = synthetic(sc);
    const auto folds = pipeline::make_folds(data.user_stats(), 5, 1010);
    std::map<std::string, std::set<int>> folds_of_user;
    std::vector<double> tweets(5, 0.0);
    std::vector<PerCode<double>> pos(5, PerCode<double>{});
    for (std::size_t r = 0; r < data.size(); ++r) {
        const int f = folds.fold(data.tweets[r].user_id);
        folds_of_user[data.tweets[r].user_id].insert(f);
        tweets[static_cast<std::size_t>(f)] += 1;
        for (auto c : kAllCodes) pos[static_cast<std::size_t>(f)][index(c)] += data.labels[r][index(c)] ? 1 : 0;
    }
    bool ok = std::all_of(folds_of_user.begin(), folds_of_user.end(), [](const auto& kv) { return kv.second.size() == 1; });
    const double mt = mean(tweets);
    double worst_t = 0.0, worst_p = 0.0;
    for (double t : tweets) worst_t = std::max(worst_t, std::abs(t - mt) / mt);
    for (auto c : kAllCodes) {
        double m = 0.0;
        for (const auto& p : pos) m += p[index(c)] / 5.0;
        for (const auto& p : pos) worst_p = std::max(worst_p, std::abs(p[index(c)] - m) / m);
    }
    ok = ok && worst_t <= 0.10 && worst_p <= 0.20;
    return {ok, std::to_string(folds_of_user.size()) + " users in one fold each, max tweet deviation " +
                    fmt("%.1f%%", 100 * worst_t) + ", max positive deviation " + fmt("%.1f%%", 100 * worst_p)};
}

}  // namespace

int main() {
    set_log_level(LogLevel::warning);
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"gradient correctness", gradients},
        {"SVM oracle equivalence", smo_oracle},
        {"AP oracle equivalence", ap_oracle},
        {"baseline closed forms", baselines},
        {"leakage audit", leakage},
        {"fusion gain", fusion_gain},
        {"planted sensitivity/ablation", planted_concepts},
        {"detector evaluation", detector},
        {"determinism", determinism},
        {"fold construction", fold_balance},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::printf("%s %zu %s: %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(),
                    o.detail.c_str(), secs);
        std::fflush(stdout);
        failed += o.pass ? 0 : 1;
    }
    return failed == 0 ? 0 : 1;
}
