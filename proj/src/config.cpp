#include "kinverify/config.hpp"

#include <charconv>
#include <chrono>
#include <ctime>
#include <fstream>
#include <sstream>

namespace kin {

namespace {

std::string strip(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

} // namespace

ConfigFile ConfigFile::parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read config " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_string(ss.str(), path);
}

ConfigFile ConfigFile::parse_string(const std::string& text, const std::string& origin) {
    ConfigFile cfg;
    cfg.origin_ = origin;
    std::istringstream in(text);
    std::string line;
    std::string section;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = strip(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        if (t.front() == '[') {
            if (t.back() != ']' || t.size() < 3) {
                throw ValidationError(origin + ":" + std::to_string(lineno) +
                                      ": malformed section header");
            }
            section = strip(t.substr(1, t.size() - 2));
            continue;
        }
        const std::size_t eq = t.find('=');
        if (eq == std::string::npos) {
            throw ValidationError(origin + ":" + std::to_string(lineno) +
                                  ": expected key = value");
        }
        const std::string key = strip(t.substr(0, eq));
        const std::string value = strip(t.substr(eq + 1));
        if (key.empty()) {
            throw ValidationError(origin + ":" + std::to_string(lineno) + ": empty key");
        }
        const std::string full = section.empty() ? key : section + "." + key;
        if (!cfg.values_.emplace(full, value).second) {
            throw ValidationError(origin + ":" + std::to_string(lineno) +
                                  ": duplicate key '" + full + "'");
        }
    }
    return cfg;
}

std::string ConfigFile::get_string(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) {
        throw ValidationError(origin_ + ": missing required key '" + key + "'");
    }
    return it->second;
}

std::string ConfigFile::get_string(const std::string& key,
                                   const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
}

long ConfigFile::get_int(const std::string& key, long fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    long v = 0;
    const std::string& s = it->second;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size()) {
        throw ValidationError(origin_ + ": key '" + key + "' is not an integer: " + s);
    }
    return v;
}

double ConfigFile::get_double(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    double v = 0.0;
    const std::string& s = it->second;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size()) {
        throw ValidationError(origin_ + ": key '" + key + "' is not a number: " + s);
    }
    return v;
}

bool ConfigFile::get_bool(const std::string& key, bool fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    const std::string& s = it->second;
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    throw ValidationError(origin_ + ": key '" + key + "' is not a boolean: " + s);
}

std::uint64_t ConfigFile::get_u64(const std::string& key, std::uint64_t fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::uint64_t v = 0;
    const std::string& s = it->second;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size()) {
        throw ValidationError(origin_ + ": key '" + key + "' is not an unsigned integer: " + s);
    }
    return v;
}

std::vector<std::string> ConfigFile::get_list(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) return {};
    std::vector<std::string> out;
    const std::string& s = it->second;
    std::size_t start = 0;
    while (start <= s.size()) {
        std::size_t pos = s.find(',', start);
        const std::string item =
            strip(s.substr(start, pos == std::string::npos ? pos : pos - start));
        if (!item.empty()) out.push_back(item);
        if (pos == std::string::npos) break;
        start = pos + 1;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Config -> domain objects
// ---------------------------------------------------------------------------

CorpusSource corpus_source_from_config(const ConfigFile& cfg) {
    CorpusSource src;
    src.root = cfg.get_string("corpus.root");
    src.manifest = cfg.get_string("corpus.manifest");
    src.manifest_only = cfg.get_bool("corpus.manifest_only", false);
    return src;
}

FamilyCorpus load_corpus_from_config(const ConfigFile& cfg) {
    const CorpusSource src = corpus_source_from_config(cfg);
    return load_corpus(src.root, src.manifest, LoadOptions{src.manifest_only});
}

ExperimentConfig experiment_from_config(const ConfigFile& cfg, const FamilyCorpus& corpus,
                                        std::optional<std::uint64_t> seed_override) {
    ExperimentConfig exp;

    // [fusion]
    std::vector<std::string> channels = cfg.get_list("fusion.channels");
    if (channels.empty()) {
        for (const ChannelInfo& ch : corpus.channels()) channels.push_back(ch.name);
    }
    const std::string mode = cfg.get_string("fusion.mode", "symmetric");
    if (mode == "symmetric") {
        exp.fusion = FusionConfig::symmetric(std::move(channels));
    } else if (mode == "baseline") {
        exp.fusion = FusionConfig::baseline(std::move(channels));
    } else {
        throw ValidationError("fusion.mode must be 'baseline' or 'symmetric', got " + mode);
    }
    if (cfg.has("fusion.transforms")) {
        exp.fusion.transforms.clear();
        for (const std::string& name : cfg.get_list("fusion.transforms")) {
            exp.fusion.transforms.push_back(transform_from_name(name));
        }
    }
    if (cfg.get_bool("fusion.include_sum_sq", false)) {
        exp.fusion.transforms.push_back(Transform::SumSq);
    }
    exp.fusion.validate();

    // [head]
    exp.hidden_dims.clear();
    for (const std::string& d : cfg.get_list("head.hidden_dims")) {
        exp.hidden_dims.push_back(static_cast<int>(std::stol(d)));
    }
    if (exp.hidden_dims.empty()) exp.hidden_dims = {128, 32};
    exp.dropout_rate = cfg.get_double("head.dropout", 0.1);
    exp.use_bias = cfg.get_bool("head.use_bias", true);
    exp.metric_dim = static_cast<int>(cfg.get_int("head.metric_dim", 32));

    // [loss]
    exp.loss = loss_kind_from_name(cfg.get_string("loss.kind", "bce"));
    exp.focal.alpha = cfg.get_double("loss.alpha", 0.25);
    exp.focal.gamma = cfg.get_double("loss.gamma", 2.0);
    exp.triplet_cfg.margin = cfg.get_double("loss.margin", 0.2);
    const std::string gran = cfg.get_string("loss.granularity", "person");
    if (gran == "person") {
        exp.granularity = TripletGranularity::Person;
    } else if (gran == "blood_group") {
        exp.granularity = TripletGranularity::BloodGroup;
    } else {
        throw ValidationError("loss.granularity must be 'person' or 'blood_group'");
    }

    // [sampler]
    exp.sampler.pos_per_batch = static_cast<int>(cfg.get_int("sampler.pos_per_batch", 8));
    exp.sampler.neg_per_batch = static_cast<int>(cfg.get_int("sampler.neg_per_batch", 8));
    exp.sampler.db_oversample = cfg.get_bool("sampler.db_oversample", false);
    exp.sampler.seed = cfg.get_u64("sampler.seed", 0);

    // [train]
    exp.folds = static_cast<int>(cfg.get_int("train.folds", 7));
    exp.epochs = static_cast<int>(cfg.get_int("train.epochs", 10));
    exp.steps_per_epoch = static_cast<int>(cfg.get_int("train.steps_per_epoch", 50));
    exp.threshold = cfg.get_double("train.threshold", 0.5);
    exp.shuffle_labels = cfg.get_bool("train.shuffle_labels", false);
    exp.seed = cfg.get_u64("train.seed", 0);
    if (seed_override) exp.seed = *seed_override;

    const std::string optimizer = cfg.get_string("train.optimizer", "adam");
    if (optimizer == "adam") {
        exp.opt.kind = OptKind::Adam;
    } else if (optimizer == "sgd") {
        exp.opt.kind = OptKind::Sgd;
    } else {
        throw ValidationError("train.optimizer must be 'adam' or 'sgd', got " + optimizer);
    }
    exp.opt.lr = cfg.get_double("train.lr", 1e-3);
    exp.opt.momentum = cfg.get_double("train.momentum", 0.9);

    exp.validate(corpus);
    return exp;
}

SyntheticSpec synthetic_from_config(const ConfigFile& cfg,
                                    std::optional<std::uint64_t> seed_override) {
    SyntheticSpec spec;
    spec.n_families = static_cast<int>(cfg.get_int("synthetic.families", 60));
    spec.members_min = static_cast<int>(cfg.get_int("synthetic.members_min", 2));
    spec.members_max = static_cast<int>(cfg.get_int("synthetic.members_max", 6));
    spec.images_min = static_cast<int>(cfg.get_int("synthetic.images_min", 1));
    spec.images_max = static_cast<int>(cfg.get_int("synthetic.images_max", 3));
    spec.latent_dim = static_cast<std::size_t>(cfg.get_int("synthetic.latent_dim", 32));
    spec.kin_signal = cfg.get_double("synthetic.kin_signal", 0.9);
    spec.noise_sigma = cfg.get_double("synthetic.noise_sigma", 0.1);
    spec.seed = cfg.get_u64("synthetic.seed", 0);
    if (seed_override) spec.seed = *seed_override;
    spec.out_dir = cfg.get_string("synthetic.out");

    const std::vector<std::string> channels = cfg.get_list("synthetic.channels");
    if (!channels.empty()) {
        spec.channels.clear();
        for (const std::string& entry : channels) {
            const std::size_t colon = entry.find(':');
            if (colon == std::string::npos) {
                throw ValidationError("synthetic.channels entries must be name:dim, got " +
                                      entry);
            }
            ChannelInfo info;
            info.name = strip(entry.substr(0, colon));
            info.dim = static_cast<std::size_t>(std::stol(entry.substr(colon + 1)));
            spec.channels.push_back(std::move(info));
        }
    }
    spec.validate();
    return spec;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

nlohmann::json experiment_to_json(const ExperimentConfig& cfg) {
    nlohmann::json fusion;
    fusion["mode"] = cfg.fusion.mode == FusionMode::Symmetric ? "symmetric" : "baseline";
    fusion["channels"] = cfg.fusion.channels;
    std::vector<std::string> transforms;
    for (Transform t : cfg.fusion.transforms) transforms.push_back(transform_name(t));
    fusion["transforms"] = transforms;

    nlohmann::json head;
    head["hidden_dims"] = cfg.hidden_dims;
    head["dropout"] = cfg.dropout_rate;
    head["use_bias"] = cfg.use_bias;
    if (cfg.loss == LossKind::Triplet) head["metric_dim"] = cfg.metric_dim;

    nlohmann::json loss;
    loss["kind"] = loss_kind_name(cfg.loss);
    if (cfg.loss == LossKind::Focal) {
        loss["alpha"] = cfg.focal.alpha;
        loss["gamma"] = cfg.focal.gamma;
    }
    if (cfg.loss == LossKind::Triplet) {
        loss["margin"] = cfg.triplet_cfg.margin;
        loss["granularity"] =
            cfg.granularity == TripletGranularity::Person ? "person" : "blood_group";
    }

    nlohmann::json sampler;
    sampler["pos_per_batch"] = cfg.sampler.pos_per_batch;
    sampler["neg_per_batch"] = cfg.sampler.neg_per_batch;
    sampler["db_oversample"] = cfg.sampler.db_oversample;

    nlohmann::json train;
    train["folds"] = cfg.folds;
    train["epochs"] = cfg.epochs;
    train["steps_per_epoch"] = cfg.steps_per_epoch;
    train["threshold"] = cfg.threshold;
    train["optimizer"] = cfg.opt.kind == OptKind::Adam ? "adam" : "sgd";
    train["lr"] = cfg.opt.lr;
    if (cfg.opt.kind == OptKind::Sgd) train["momentum"] = cfg.opt.momentum;
    train["shuffle_labels"] = cfg.shuffle_labels;
    train["seed"] = cfg.seed;

    nlohmann::json out;
    out["fusion"] = fusion;
    out["head"] = head;
    out["loss"] = loss;
    out["sampler"] = sampler;
    out["train"] = train;
    return out;
}

nlohmann::json cv_result_to_json(const CvResult& result,
                                 const std::vector<std::string>& checkpoint_paths) {
    nlohmann::json folds = nlohmann::json::array();
    for (std::size_t f = 0; f < result.folds.size(); ++f) {
        nlohmann::json fold;
        fold["fold"] = result.folds[f].fold;
        fold["val_accuracy"] = result.folds[f].val_accuracy;
        fold["val_pairs"] = result.folds[f].val_pairs;
        fold["threshold"] = result.folds[f].threshold;
        fold["val_families"] = result.fold_families[f];
        if (f < checkpoint_paths.size()) fold["checkpoint"] = checkpoint_paths[f];
        folds.push_back(std::move(fold));
    }
    nlohmann::json out;
    out["folds"] = folds;
    out["mean_accuracy"] = result.mean_accuracy;
    return out;
}

void write_report(const std::string& path, const nlohmann::json& body) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write report " + path);

    const auto now = std::chrono::system_clock::now();
    const std::time_t tt = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&tt, &tm);
    char stamp[32];
    std::strftime(stamp, sizeof(stamp), "%Y-%m-%dT%H:%M:%SZ", &tm);

    out << "# kinverify report " << stamp << '\n';
    out << body.dump(2) << '\n';
    if (!out) throw IoError("failed writing report " + path);
}

} // namespace kin
