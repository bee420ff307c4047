#ifndef KINVERIFY_CONFIG_HPP
#define KINVERIFY_CONFIG_HPP

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "kinverify/pipeline.hpp"
#include "kinverify/synthetic.hpp"

namespace kin {

/// Flat key=value configuration with [section] headers and # comments.
/// Keys are addressed as "section.key".
class ConfigFile {
public:
    static ConfigFile parse_file(const std::string& path);
    static ConfigFile parse_string(const std::string& text, const std::string& origin);

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    std::string get_string(const std::string& key) const;
    std::string get_string(const std::string& key, const std::string& fallback) const;
    long get_int(const std::string& key, long fallback) const;
    double get_double(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;

    /// Comma-separated list value; empty when the key is absent.
    std::vector<std::string> get_list(const std::string& key) const;

    const std::map<std::string, std::string>& values() const { return values_; }

private:
    std::string origin_;
    std::map<std::string, std::string> values_;
};

struct CorpusSource {
    std::string root;
    std::string manifest;
    bool manifest_only = false;
};

CorpusSource corpus_source_from_config(const ConfigFile& cfg);
FamilyCorpus load_corpus_from_config(const ConfigFile& cfg);

/// Build an ExperimentConfig from [fusion]/[head]/[loss]/[sampler]/[train].
/// Fusion channels default to every corpus channel in declared order.
ExperimentConfig experiment_from_config(const ConfigFile& cfg, const FamilyCorpus& corpus,
                                        std::optional<std::uint64_t> seed_override = {});

SyntheticSpec synthetic_from_config(const ConfigFile& cfg,
                                    std::optional<std::uint64_t> seed_override = {});

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

nlohmann::json experiment_to_json(const ExperimentConfig& cfg);
nlohmann::json cv_result_to_json(const CvResult& result,
                                 const std::vector<std::string>& checkpoint_paths);

/// Write "# kinverify report <timestamp>\n" followed by the pretty-printed
/// JSON body. Everything below the header line is byte-deterministic for a
/// fixed config and seed.
void write_report(const std::string& path, const nlohmann::json& body);

} // namespace kin

#endif // KINVERIFY_CONFIG_HPP
