#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "kinverify/config.hpp"
#include "kinverify/corpus.hpp"
#include "kinverify/pipeline.hpp"
#include "kinverify/sampler.hpp"
#include "kinverify/synthetic.hpp"

namespace fs = std::filesystem;

namespace {

constexpr const char* kVersion = "kinverify 0.1.0";

struct CommonArgs {
    std::string config_path;
    std::optional<std::uint64_t> seed;
};

std::string output_dir(const kin::ConfigFile& cfg) {
    const std::string dir = cfg.get_string("output.dir", "out");
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw kin::IoError("cannot create output dir " + dir + ": " + ec.message());
    return dir;
}

std::vector<kin::HeadModel> load_models(const kin::ConfigFile& cfg,
                                        const std::string& section) {
    std::vector<std::string> paths = cfg.get_list(section + ".checkpoints");
    if (paths.empty()) paths = cfg.get_list("eval.checkpoints");
    if (paths.empty()) {
        throw kin::ValidationError("no checkpoints configured under [" + section + "]");
    }
    std::vector<kin::HeadModel> models;
    for (const std::string& p : paths) {
        kin::Checkpoint ckpt = kin::load_checkpoint(p);
        models.push_back(kin::HeadModel{std::move(ckpt.config), std::move(ckpt.params)});
    }
    return models;
}

std::vector<std::pair<std::string, std::string>> read_two_column_tsv(
    const std::string& path) {
    std::ifstream in(path);
    if (!in) throw kin::IoError("cannot read " + path);
    std::vector<std::pair<std::string, std::string>> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        const std::size_t tab = line.find('\t');
        if (tab == std::string::npos) {
            throw kin::ValidationError("MalformedRow: " + path + ":" +
                                       std::to_string(lineno) + " expects 2 tab fields");
        }
        out.emplace_back(line.substr(0, tab), line.substr(tab + 1));
    }
    return out;
}

// --- subcommands ------------------------------------------------------------

int cmd_gen_synthetic(const CommonArgs& args) {
    const kin::ConfigFile cfg = kin::ConfigFile::parse_file(args.config_path);
    const kin::SyntheticSpec spec = kin::synthetic_from_config(cfg, args.seed);
    const kin::GenSummary summary = kin::gen_synthetic(spec);
    std::cout << "generated " << summary.families << " families, " << summary.members
              << " members, " << summary.images << " images\n"
              << "root: " << summary.root_dir << "\n"
              << "manifest: " << summary.manifest_path << "\n";
    return 0;
}

int cmd_ingest(const CommonArgs& args) {
    const kin::ConfigFile cfg = kin::ConfigFile::parse_file(args.config_path);
    const kin::FamilyCorpus corpus = kin::load_corpus_from_config(cfg);

    std::size_t members = 0;
    std::size_t images = 0;
    for (const auto& [key, member] : corpus.members()) {
        ++members;
        images += member.image_ids.size();
    }
    std::cout << "families: " << corpus.family_count() << "\n"
              << "members: " << members << "\n"
              << "images: " << images << "\n"
              << "channels:";
    for (const auto& ch : corpus.channels()) {
        std::cout << ' ' << ch.name << '(' << ch.dim << ')';
    }
    std::cout << "\nmissing embeddings: " << corpus.missing_images().size() << "\n";
    return 0;
}

int cmd_split(const CommonArgs& args) {
    const kin::ConfigFile cfg = kin::ConfigFile::parse_file(args.config_path);
    const kin::FamilyCorpus corpus = kin::load_corpus_from_config(cfg);
    const int k = static_cast<int>(cfg.get_int("train.folds", 7));
    const std::uint64_t seed = args.seed.value_or(cfg.get_u64("train.seed", 0));
    const auto folds = kin::family_folds(corpus, k, seed);

    const std::string dir = output_dir(cfg);
    const std::string path = dir + "/folds.tsv";
    std::ofstream out(path, std::ios::binary);
    if (!out) throw kin::IoError("cannot write " + path);
    for (std::size_t f = 0; f < folds.size(); ++f) {
        for (const std::string& fam : folds[f]) {
            out << fam << '\t' << f << '\n';
        }
    }
    std::cout << "wrote " << path << " (" << k << " folds over "
              << corpus.family_count() << " families)\n";
    return 0;
}

int cmd_train(const CommonArgs& args) {
    const kin::ConfigFile cfg = kin::ConfigFile::parse_file(args.config_path);
    const kin::FamilyCorpus corpus = kin::load_corpus_from_config(cfg);
    const kin::ExperimentConfig exp = kin::experiment_from_config(cfg, corpus, args.seed);

    std::vector<std::string> families = corpus.family_ids();
    const long requested = cfg.get_int("train.val_families", 10);
    if (requested < 1 || static_cast<std::size_t>(requested) >= families.size()) {
        throw kin::ValidationError("train.val_families must lie in 1.." +
                                   std::to_string(families.size() - 1));
    }
    kin::Rng rng(kin::mix_seed(exp.seed, 0x7a11));
    rng.shuffle(families);
    std::vector<std::string> val(families.begin(), families.begin() + requested);
    std::vector<std::string> train(families.begin() + requested, families.end());

    const kin::FoldResult result = kin::train_fold(corpus, exp, train, val, 0);

    const std::string dir = output_dir(cfg);
    const std::string ckpt_path = dir + "/model.ckpt";
    kin::save_checkpoint(ckpt_path, result.model.config, result.model.params);

    nlohmann::json body;
    body["command"] = "train";
    body["config"] = kin::experiment_to_json(exp);
    body["val_accuracy"] = result.val_accuracy;
    body["val_pairs"] = result.val_pairs;
    body["threshold"] = result.threshold;
    body["checkpoint"] = ckpt_path;
    std::sort(val.begin(), val.end());
    body["val_families"] = val;
    kin::write_report(dir + "/report.json", body);

    std::cout << "val_accuracy: " << result.val_accuracy << "\n"
              << "checkpoint: " << ckpt_path << "\n"
              << "report: " << dir << "/report.json\n";
    return 0;
}

int cmd_cv(const CommonArgs& args) {
    const kin::ConfigFile cfg = kin::ConfigFile::parse_file(args.config_path);
    const kin::FamilyCorpus corpus = kin::load_corpus_from_config(cfg);
    const kin::ExperimentConfig exp = kin::experiment_from_config(cfg, corpus, args.seed);

    const kin::CvResult result = kin::cross_validate(corpus, exp);

    const std::string dir = output_dir(cfg);
    std::vector<std::string> ckpt_paths;
    for (const kin::FoldResult& fold : result.folds) {
        const std::string path = dir + "/fold" + std::to_string(fold.fold) + ".ckpt";
        kin::save_checkpoint(path, fold.model.config, fold.model.params);
        ckpt_paths.push_back(path);
    }

    nlohmann::json body;
    body["command"] = "cv";
    body["config"] = kin::experiment_to_json(exp);
    body["result"] = kin::cv_result_to_json(result, ckpt_paths);
    kin::write_report(dir + "/report.json", body);

    for (const kin::FoldResult& fold : result.folds) {
        std::printf("K%d: %.5f\n", fold.fold, fold.val_accuracy);
    }
    std::printf("mean: %.5f\n", result.mean_accuracy);
    std::cout << "report: " << dir << "/report.json\n";
    return 0;
}

int cmd_eval(const CommonArgs& args) {
    const kin::ConfigFile cfg = kin::ConfigFile::parse_file(args.config_path);
    const kin::FamilyCorpus corpus = kin::load_corpus_from_config(cfg);
    const kin::ExperimentConfig exp = kin::experiment_from_config(cfg, corpus, args.seed);
    const std::vector<kin::HeadModel> models = load_models(cfg, "eval");

    std::vector<kin::PairSample> pairs = kin::read_pair_list(cfg.get_string("eval.pairs"));
    if (cfg.get_bool("eval.balanced", false)) {
        std::vector<kin::PairSample> pos, neg;
        for (auto& p : pairs) (p.binary_label == 1 ? pos : neg).push_back(std::move(p));
        kin::Rng rng(kin::mix_seed(exp.seed, 0xeba1));
        if (pos.size() > neg.size()) {
            rng.shuffle(pos);
            pos.resize(neg.size());
        } else if (neg.size() > pos.size()) {
            rng.shuffle(neg);
            neg.resize(pos.size());
        }
        pairs.clear();
        pairs.insert(pairs.end(), pos.begin(), pos.end());
        pairs.insert(pairs.end(), neg.begin(), neg.end());
        std::sort(pairs.begin(), pairs.end(),
                  [](const kin::PairSample& a, const kin::PairSample& b) {
                      return std::tie(a.img_a, a.img_b) < std::tie(b.img_a, b.img_b);
                  });
    }

    const double threshold = cfg.get_double("eval.threshold", exp.threshold);
    const kin::EvalResult ev =
        kin::evaluate_verification(models, exp.fusion, corpus, pairs, threshold);

    const std::string dir = output_dir(cfg);
    std::vector<kin::PairPrediction> preds(pairs.size());
    kin::parallel_for(pairs.size(), [&](std::size_t i) {
        preds[i] = kin::PairPrediction{
            pairs[i].img_a, pairs[i].img_b,
            kin::predict_pair(models, exp.fusion, corpus, pairs[i].img_a, pairs[i].img_b)};
    });
    kin::write_pair_predictions(dir + "/predictions.csv", preds);

    nlohmann::json body;
    body["command"] = "eval";
    body["accuracy"] = ev.accuracy;
    body["pairs"] = ev.n;
    body["threshold"] = threshold;
    body["models"] = models.size();
    if (!ev.per_class_accuracy.empty()) {
        body["per_class_accuracy"] = ev.per_class_accuracy;
        body["per_class_n"] = ev.per_class_n;
    }
    kin::write_report(dir + "/report.json", body);

    std::printf("accuracy: %.5f over %zu pairs\n", ev.accuracy, ev.n);
    std::cout << "predictions: " << dir << "/predictions.csv\n";
    return 0;
}

int cmd_tri_verify(const CommonArgs& args) {
    const kin::ConfigFile cfg = kin::ConfigFile::parse_file(args.config_path);
    const kin::FamilyCorpus corpus = kin::load_corpus_from_config(cfg);
    const kin::ExperimentConfig exp = kin::experiment_from_config(cfg, corpus, args.seed);
    const std::vector<kin::HeadModel> models = load_models(cfg, "tri");

    const std::string method_name = cfg.get_string("tri.method", "sum");
    kin::TriMethod method;
    if (method_name == "sum") {
        method = kin::TriMethod::SumFCMC;
    } else if (method_name == "merge") {
        method = kin::TriMethod::MergeIndependent;
    } else {
        throw kin::ValidationError("tri.method must be 'sum' or 'merge'");
    }

    // Triples TSV: img_f \t img_m \t img_c [\t label]
    const std::string triples_path = cfg.get_string("tri.triples");
    std::ifstream in(triples_path);
    if (!in) throw kin::IoError("cannot read " + triples_path);
    std::vector<kin::TriSample> triples;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        std::vector<std::string> fields;
        std::size_t start = 0;
        while (true) {
            const std::size_t tab = line.find('\t', start);
            if (tab == std::string::npos) {
                fields.push_back(line.substr(start));
                break;
            }
            fields.push_back(line.substr(start, tab - start));
            start = tab + 1;
        }
        if (fields.size() != 3 && fields.size() != 4) {
            throw kin::ValidationError("MalformedRow: " + triples_path + ":" +
                                       std::to_string(lineno));
        }
        kin::TriSample t;
        t.img_f = fields[0];
        t.img_m = fields[1];
        t.img_c = fields[2];
        t.label = fields.size() == 4 ? std::stoi(fields[3]) : -1;
        triples.push_back(std::move(t));
    }

    std::vector<kin::TriScoreResult> scores(triples.size());
    kin::parallel_for(triples.size(), [&](std::size_t i) {
        scores[i] = kin::tri_score(models, exp.fusion, corpus, triples[i], method,
                                   exp.threshold);
    });

    const std::string dir = output_dir(cfg);
    const std::string csv_path = dir + "/tri_scores.csv";
    std::ofstream out(csv_path, std::ios::binary);
    if (!out) throw kin::IoError("cannot write " + csv_path);
    out << "F,M,C,score\n";
    char buf[32];
    for (std::size_t i = 0; i < triples.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%.9g", scores[i].score);
        out << triples[i].img_f << ',' << triples[i].img_m << ',' << triples[i].img_c
            << ',' << buf << '\n';
    }
    std::cout << "scores: " << csv_path << " (" << triples.size() << " triples)\n";
    return 0;
}

int cmd_retrieve(const CommonArgs& args) {
    const kin::ConfigFile cfg = kin::ConfigFile::parse_file(args.config_path);
    const kin::FamilyCorpus corpus = kin::load_corpus_from_config(cfg);
    const kin::ExperimentConfig exp = kin::experiment_from_config(cfg, corpus, args.seed);
    const std::vector<kin::HeadModel> models = load_models(cfg, "retrieve");

    const std::string agg_name = cfg.get_string("retrieve.agg", "mean");
    kin::ColumnAgg agg;
    if (agg_name == "mean") {
        agg = kin::ColumnAgg::Mean;
    } else if (agg_name == "max") {
        agg = kin::ColumnAgg::Max;
    } else {
        throw kin::ValidationError("retrieve.agg must be 'mean' or 'max'");
    }

    std::map<std::string, std::vector<std::string>> probes;
    for (const auto& [probe, image] :
         read_two_column_tsv(cfg.get_string("retrieve.probes"))) {
        probes[probe].push_back(image);
    }
    kin::Gallery gallery;
    for (const auto& [member, image] :
         read_two_column_tsv(cfg.get_string("retrieve.gallery"))) {
        gallery[member].push_back(image);
    }

    const std::string dir = output_dir(cfg);
    const std::string rank_path = dir + "/ranking.csv";
    std::ofstream out(rank_path, std::ios::binary);
    if (!out) throw kin::IoError("cannot write " + rank_path);
    out << "probe_id,gallery_id,score,rank\n";
    char buf[32];
    for (const auto& [probe_id, images] : probes) {
        const kin::RetrievalResult result =
            kin::retrieve(models, exp.fusion, corpus, probe_id, images, gallery, agg);
        for (const kin::RankedEntry& e : result.ranking) {
            std::snprintf(buf, sizeof(buf), "%.9g", e.score);
            out << probe_id << ',' << e.gallery_id << ',' << buf << ',' << e.rank << '\n';
        }
    }
    std::cout << "ranking: " << rank_path << " (" << probes.size() << " probes, "
              << gallery.size() << " gallery members)\n";
    return 0;
}

int cmd_ensemble(const std::vector<std::string>& inputs, const std::string& out_path) {
    std::vector<std::vector<kin::PairPrediction>> files;
    for (const std::string& path : inputs) {
        files.push_back(kin::read_pair_predictions(path));
    }
    const std::vector<kin::PairPrediction> merged = kin::ensemble_predictions(files);
    kin::write_pair_predictions(out_path, merged);
    std::cout << "wrote " << out_path << " (" << merged.size() << " rows, mean of "
              << files.size() << " files)\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"kinship verification over precomputed face embeddings"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);

    CommonArgs args;
    std::uint64_t seed_value = 0;
    bool seed_set = false;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", args.config_path, "config file path")->required();
        sub->add_option("--seed", seed_value, "override the config seed")
            ->each([&](const std::string&) { seed_set = true; });
    };

    CLI::App* gen = app.add_subcommand("gen-synthetic", "generate a synthetic corpus");
    add_common(gen);
    CLI::App* ingest = app.add_subcommand("ingest", "validate a corpus and manifest");
    add_common(ingest);
    CLI::App* split = app.add_subcommand("split", "emit family folds");
    add_common(split);
    CLI::App* train = app.add_subcommand("train", "train one experiment");
    add_common(train);
    CLI::App* cv = app.add_subcommand("cv", "k-fold cross-validation");
    add_common(cv);
    CLI::App* eval = app.add_subcommand("eval", "evaluate checkpoints on a pair list");
    add_common(eval);
    CLI::App* tri = app.add_subcommand("tri-verify", "score father-mother-child triples");
    add_common(tri);
    CLI::App* retr = app.add_subcommand("retrieve", "rank a gallery against probes");
    add_common(retr);

    CLI::App* ens = app.add_subcommand("ensemble", "average prediction CSV files");
    std::vector<std::string> ensemble_inputs;
    std::string ensemble_out = "ensemble.csv";
    ens->add_option("inputs", ensemble_inputs, "prediction CSV files")
        ->required()
        ->expected(-1);
    ens->add_option("--out", ensemble_out, "output CSV path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n\n" << app.help() << std::flush;
        return 64;
    }

    if (seed_set) args.seed = seed_value;

    try {
        if (gen->parsed()) return cmd_gen_synthetic(args);
        if (ingest->parsed()) return cmd_ingest(args);
        if (split->parsed()) return cmd_split(args);
        if (train->parsed()) return cmd_train(args);
        if (cv->parsed()) return cmd_cv(args);
        if (eval->parsed()) return cmd_eval(args);
        if (tri->parsed()) return cmd_tri_verify(args);
        if (retr->parsed()) return cmd_retrieve(args);
        if (ens->parsed()) return cmd_ensemble(ensemble_inputs, ensemble_out);
    } catch (const kin::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const kin::IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
