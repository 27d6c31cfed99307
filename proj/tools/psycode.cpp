// Command-line front end: one subcommand per pipeline stage.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "psycode/corpus.hpp"
#include "psycode/deteval.hpp"
#include "psycode/log.hpp"
#include "psycode/nn.hpp"
#include "psycode/pipeline.hpp"
#include "psycode/synth.hpp"

using namespace psycode;
namespace fs = std::filesystem;

namespace {

struct Globals {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out = "out";
    int jobs = 1;
    bool quiet = false;
};

Json raw_config(const Globals& g) {
    if (g.config_path.empty()) return Json::object();
    try {
        return Json::parse(read_text_file(g.config_path));
    } catch (const Json::parse_error& e) {
        throw ValidationError("config " + g.config_path + ": " + e.what());
    }
}

pipeline::ExperimentConfig experiment_config(const Globals& g) {
    auto c = g.config_path.empty() ? pipeline::config_from_json(Json::object(), fs::current_path())
                                   : pipeline::load_config(g.config_path);
    if (g.seed) c.seed = *g.seed;
    return c;
}

pipeline::FoldAssignment folds_for(const pipeline::ExperimentConfig& c, const pipeline::ExperimentData& data) {
    if (c.folds_file) {
        const auto path = fs::path(*c.folds_file).is_absolute() ? fs::path(*c.folds_file) : c.base_dir / *c.folds_file;
        auto f = pipeline::folds_from_json(Json::parse(read_text_file(path.string())));
        for (const auto& t : data.tweets) f.fold(t.user_id);  // every user covered
        return f;
    }
    return pipeline::make_folds(data.user_stats(), c.n_folds, c.seed);
}

void write_json(const fs::path& path, const Json& j) {
    fs::create_directories(path.parent_path().empty() ? fs::path(".") : path.parent_path());
    write_text_file(path.string(), j.dump(2) + "\n");
}

std::vector<int> fold_list(const pipeline::FoldAssignment& folds, std::optional<int> only) {
    if (only) {
        if (*only < 0 || *only >= folds.k) throw ValidationError("--fold out of range");
        return {*only};
    }
    std::vector<int> all;
    for (int f = 0; f < folds.k; ++f) all.push_back(f);
    return all;
}

std::vector<Code> code_list(const std::string& only) {
    if (only.empty()) return {kAllCodes.begin(), kAllCodes.end()};
    auto c = parse_code(only);
    if (!c) throw ValidationError("unknown code '" + only + "'");
    return {*c};
}

std::vector<textcnn::Level> level_list(const std::string& only) {
    if (only.empty()) return {textcnn::Level::word, textcnn::Level::character};
    auto l = textcnn::parse_level(only);
    if (!l) throw ValidationError("unknown level '" + only + "'");
    return {*l};
}

// ---------------------------------------------------------------------------

void cmd_gen_synthetic(const Globals& g) {
    const auto j = raw_config(g);
    auto sc = j.contains("synthetic") ? synth::config_from_json(j.at("synthetic")) : synth::SynthConfig{};
    if (g.seed) sc.seed = *g.seed;
    sc.validate();
    const auto ds = synth::generate(sc);
    synth::write_dataset(ds, g.out);
    log_info("wrote " + std::to_string(ds.corpus.tweets.size()) + " tweets to " + g.out);
}

void cmd_split(const Globals& g) {
    const auto c = experiment_config(g);
    const auto data = pipeline::load_data(c);
    const auto folds = pipeline::make_folds(data.user_stats(), c.n_folds, c.seed);
    write_json(fs::path(g.out) / "folds.json", pipeline::to_json(folds));
}

void cmd_featurize_text(const Globals& g, std::optional<int> only_fold) {
    const auto c = experiment_config(g);
    const auto data = pipeline::load_data(c);
    const auto folds = folds_for(c, data);
    std::vector<FeatureBlock> blocks;
    for (int f : fold_list(folds, only_fold)) {
        const auto split = pipeline::fold_split(data, folds, f);
        const auto ling = pipeline::fit_linguistic(data, split.train, c);
        for (std::size_t r = 0; r < data.size(); ++r) {
            FeatureBlock b;
            b.space = pipeline::kLinguistic;
            b.tweet_id = data.tweets[r].tweet_id;
            b.values = ling.rows[r];
            b.fold = f;
            blocks.push_back(std::move(b));
        }
    }
    fs::create_directories(g.out);
    save_feature_blocks((fs::path(g.out) / "linguistic.jsonl").string(), blocks);
}

void cmd_train_cnn(const Globals& g, std::optional<int> only_fold, const std::string& code,
                   const std::string& level) {
    const auto c = experiment_config(g);
    const auto data = pipeline::load_data(c);
    const auto folds = folds_for(c, data);
    fs::create_directories(g.out);
    for (int f : fold_list(folds, only_fold)) {
        const auto split = pipeline::fold_split(data, folds, f);
        for (auto lv : level_list(level)) {
            for (auto cd : code_list(code)) {
                const auto fitted = pipeline::fit_cnn(data, split.train, cd, f, lv, c);
                const auto name = "cnn_" + std::string(textcnn::level_name(lv)) + "_" + std::string(code_name(cd)) +
                                  "_fold" + std::to_string(f) + ".ckpt";
                nn::save_checkpoint((fs::path(g.out) / name).string(), fitted.model.to_checkpoint());
                const auto& info = fitted.model.info();
                log_info(name + ": best epoch " + std::to_string(info.best_epoch) + ", validation loss " +
                         std::to_string(info.best_validation_loss));
            }
        }
    }
}

void cmd_extract_cnn(const Globals& g, const std::vector<std::string>& checkpoints) {
    if (checkpoints.empty()) throw ValidationError("extract-cnn needs at least one --checkpoint");
    const auto c = experiment_config(g);
    const auto data = pipeline::load_data(c);
    std::map<std::string, std::vector<FeatureBlock>> by_space;
    for (const auto& path : checkpoints) {
        const auto model = textcnn::TextCnnModel::from_checkpoint(nn::load_checkpoint(path));
        const auto space = model.config().level == textcnn::Level::word ? pipeline::kCnnWord : pipeline::kCnnChar;
        const auto code = parse_code(model.info().code);
        for (const auto& t : data.tweets) {
            FeatureBlock b;
            b.space = space;
            b.tweet_id = t.tweet_id;
            b.values = model.extract_features(t.text);
            b.code = code;
            if (model.info().fold >= 0) b.fold = model.info().fold;
            by_space[space].push_back(std::move(b));
        }
    }
    fs::create_directories(g.out);
    for (const auto& [space, blocks] : by_space) save_feature_blocks((fs::path(g.out) / (space + ".jsonl")).string(), blocks);
}

void cmd_featurize_image(const Globals& g) {
    const auto c = experiment_config(g);
    const auto data = pipeline::load_data(c);
    fs::create_directories(g.out);
    for (const std::string space : {pipeline::kGlobal, pipeline::kCounts01, pipeline::kCounts05, pipeline::kGtConcepts}) {
        Matrix X;
        try {
            X = pipeline::static_features(data, space);
        } catch (const ValidationError& e) {
            log_warning(std::string("skipping ") + space + ": " + e.what());
            continue;
        }
        std::vector<FeatureBlock> blocks;
        for (std::size_t r = 0; r < data.size(); ++r) {
            FeatureBlock b;
            b.space = space;
            b.tweet_id = data.tweets[r].tweet_id;
            b.values = std::vector<double>(X.row(r).begin(), X.row(r).end());
            blocks.push_back(std::move(b));
        }
        save_feature_blocks((fs::path(g.out) / (space + ".jsonl")).string(), blocks);
    }
}

void cmd_eval_detector(const Globals& g) {
    const auto c = experiment_config(g);
    const auto raw = raw_config(g);
    const double iou = raw.value("iou_threshold", deteval::kDefaultIouThreshold);
    const auto path = [&](const std::string& p) {
        return fs::path(p).is_absolute() ? p : (c.base_dir / p).lexically_normal().string();
    };
    const auto corpus = corpus::load_corpus(path(c.tweets), path(c.annotations));
    const auto detections = imfeat::load_detections(path(c.detections));
    const auto boxes = imfeat::load_gt_boxes(path(c.gt_boxes));

    // Folds over every user, Tumblr accounts included (they carry no codes).
    std::map<std::string, pipeline::UserStats> users;
    for (const auto& t : corpus.tweets) {
        auto& u = users[t.user_id];
        u.user_id = t.user_id;
        ++u.tweets;
    }
    std::vector<pipeline::UserStats> stats;
    for (auto& [_, u] : users) stats.push_back(u);
    const auto folds = pipeline::make_folds(stats, c.n_folds, c.seed);

    std::vector<deteval::EvalImage> images;
    for (const auto& t : corpus.tweets) {
        if (t.image_id) images.push_back({*t.image_id, t.source, folds.fold(t.user_id)});
    }
    const auto report = deteval::detection_report(detections, boxes, images, folds.k, iou);
    const auto table = deteval::report_table(report);
    pipeline::write_table(table, table, g.out, "table5");
}

void cmd_run_experiment(const Globals& g) {
    const auto c = experiment_config(g);
    const auto data = pipeline::load_data(c);
    const auto folds = folds_for(c, data);
    const auto report = pipeline::run_experiment(data, folds, c, pipeline::thread_runner(g.jobs));
    write_json(fs::path(g.out) / "results.json", pipeline::to_json(report));
    write_json(fs::path(g.out) / "folds.json", pipeline::to_json(folds));
    pipeline::write_table(pipeline::results_table(report, false), pipeline::results_table(report, true), g.out, "table2");
}

void cmd_audit(const Globals& g) {
    const auto c = experiment_config(g);
    const auto data = pipeline::load_data(c);
    const auto folds = folds_for(c, data);
    const auto audit = pipeline::leakage_audit(data, folds, c, pipeline::thread_runner(g.jobs));
    Json j = Json::array();
    bool ok = true;
    for (const auto& a : audit) {
        j.push_back({{"fold", a.fold}, {"with_test", a.hash_full}, {"without_test", a.hash_without_test}, {"match", a.match()}});
        ok = ok && a.match();
        std::cout << "fold " << a.fold << ": " << (a.match() ? "match" : "MISMATCH") << "\n";
    }
    write_json(fs::path(g.out) / "audit.json", j);
    if (!ok) throw TrainingError("leakage audit failed");
}

void cmd_sensitivity(const Globals& g) {
    const auto c = experiment_config(g);
    const auto data = pipeline::load_data(c);
    const auto folds = folds_for(c, data);
    const auto rep = pipeline::sensitivity_analysis(data, folds, c);
    write_json(fs::path(g.out) / "sensitivity.json", pipeline::to_json(rep));
    const auto t = pipeline::sensitivity_table(rep);
    pipeline::write_table(t, t, g.out, "table3");
}

void cmd_ablation(const Globals& g) {
    const auto c = experiment_config(g);
    const auto data = pipeline::load_data(c);
    const auto folds = folds_for(c, data);
    const auto rep = pipeline::ablation_study(data, folds, c, pipeline::thread_runner(g.jobs));
    write_json(fs::path(g.out) / "ablation.json", pipeline::to_json(rep));
    pipeline::write_table(pipeline::ablation_table(rep, false), pipeline::ablation_table(rep, true), g.out, "table4");
}

void cmd_report(const Globals& g, const std::string& results) {
    const auto c = experiment_config(g);
    const auto path = [&](const std::string& p) {
        return fs::path(p).is_absolute() ? p : (c.base_dir / p).lexically_normal().string();
    };
    const auto corpus = corpus::load_corpus(path(c.tweets), path(c.annotations));
    std::vector<ConceptBox> boxes;
    if (fs::exists(path(c.gt_boxes))) boxes = imfeat::load_gt_boxes(path(c.gt_boxes));
    const auto stats = corpus::corpus_stats(corpus.tweets, corpus.annotations, boxes);
    const auto t1 = corpus::stats_table(stats);
    pipeline::write_table(t1, t1, g.out, "table1");

    const auto results_path = results.empty() ? (fs::path(g.out) / "results.json").string() : results;
    if (fs::exists(results_path)) {
        const auto report = pipeline::eval_report_from_json(Json::parse(read_text_file(results_path)));
        pipeline::write_table(pipeline::results_table(report, false), pipeline::results_table(report, true), g.out,
                              "table2");
    } else {
        log_warning("no results at " + results_path + "; only table1 written");
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multimodal psychosocial code detection"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--config", g.config_path, "experiment config (JSON)");
    app.add_option("--seed", g.seed, "master seed, overrides the config");
    app.add_option("--out", g.out, "output directory")->capture_default_str();
    app.add_option("--jobs", g.jobs, "worker threads")->check(CLI::PositiveNumber)->capture_default_str();
    app.add_flag("--quiet", g.quiet, "only warnings");

    std::optional<int> fold;
    std::string code, level, results;
    std::vector<std::string> checkpoints;

    auto* gen = app.add_subcommand("gen-synthetic", "write a synthetic corpus");
    auto* split = app.add_subcommand("split", "user-grouped fold assignment");
    auto* ftext = app.add_subcommand("featurize-text", "linguistic feature blocks per fold");
    ftext->add_option("--fold", fold);
    auto* tcnn = app.add_subcommand("train-cnn", "train text CNNs and save checkpoints");
    tcnn->add_option("--fold", fold);
    tcnn->add_option("--code", code);
    tcnn->add_option("--level", level, "word or character");
    auto* xcnn = app.add_subcommand("extract-cnn", "CNN hidden-layer feature blocks");
    xcnn->add_option("--checkpoint", checkpoints)->required();
    auto* fimg = app.add_subcommand("featurize-image", "global and concept feature blocks");
    auto* det = app.add_subcommand("eval-detector", "concept detector AP (table 5)");
    auto* run = app.add_subcommand("run-experiment", "cross-validated code detection (table 2)");
    auto* audit = app.add_subcommand("audit", "check that no fitted state sees its test fold");
    auto* sens = app.add_subcommand("sensitivity", "linear concept sensitivity (table 3)");
    auto* abl = app.add_subcommand("ablation", "leave-one-concept-out ablation (table 4)");
    auto* rep = app.add_subcommand("report", "render tables 1 and 2");
    rep->add_option("--results", results, "results.json (default: <out>/results.json)");
    for (auto* sub : app.get_subcommands({})) sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }
    if (g.quiet) set_log_level(LogLevel::warning);

    try {
        if (*gen) cmd_gen_synthetic(g);
        else if (*split) cmd_split(g);
        else if (*ftext) cmd_featurize_text(g, fold);
        else if (*tcnn) cmd_train_cnn(g, fold, code, level);
        else if (*xcnn) cmd_extract_cnn(g, checkpoints);
        else if (*fimg) cmd_featurize_image(g);
        else if (*det) cmd_eval_detector(g);
        else if (*run) cmd_run_experiment(g);
        else if (*audit) cmd_audit(g);
        else if (*sens) cmd_sensitivity(g);
        else if (*abl) cmd_ablation(g);
        else if (*rep) cmd_report(g, results);
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const TrainingError& e) {
        std::cerr << "training failed: " << e.what() << "\n";
        return 3;
    } catch (const Json::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
