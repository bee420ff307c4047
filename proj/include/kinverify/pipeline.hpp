#ifndef KINVERIFY_PIPELINE_HPP
#define KINVERIFY_PIPELINE_HPP

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "kinverify/corpus.hpp"
#include "kinverify/fusion.hpp"
#include "kinverify/losses.hpp"
#include "kinverify/nethead.hpp"
#include "kinverify/sampler.hpp"

namespace kin {

// ---------------------------------------------------------------------------
// Experiment configuration
// ---------------------------------------------------------------------------

enum class LossKind { Bce, Focal, SoftmaxCe, Triplet };

const char* loss_kind_name(LossKind k);
LossKind loss_kind_from_name(const std::string& name);

/// Everything one training/evaluation run needs. The head's input dim is
/// derived from the fusion config and corpus channel dims at train time;
/// only the hidden dims are configured directly.
struct ExperimentConfig {
    FusionConfig fusion;
    std::vector<int> hidden_dims = {128, 32};
    double dropout_rate = 0.1;
    bool use_bias = true;
    int metric_dim = 32; // output dim of the Triplet metric head

    LossKind loss = LossKind::Bce;
    FocalConfig focal;
    TripletConfig triplet_cfg;
    TripletGranularity granularity = TripletGranularity::Person;

    SamplerConfig sampler;
    OptConfig opt;

    int folds = 7;
    int epochs = 10;
    int steps_per_epoch = 50;
    double threshold = 0.5;
    bool shuffle_labels = false; // decouple features from labels (control runs)
    std::uint64_t seed = 0;

    /// Resolve the full head config against the corpus channel dims.
    HeadConfig make_head_config(const FamilyCorpus& corpus, int fold_index) const;
    void validate(const FamilyCorpus& corpus) const;
};

struct HeadModel {
    HeadConfig config;
    HeadParams params;
};

struct FoldResult {
    int fold = 0;
    HeadModel model;
    double val_accuracy = 0.0;
    /// Decision threshold. 0.5-style probability threshold for classifier
    /// heads (copied from the config); calibrated on training pairs for
    /// metric heads.
    double threshold = 0.5;
    std::size_t val_pairs = 0;
};

struct CvResult {
    std::vector<FoldResult> folds;
    std::vector<std::vector<std::string>> fold_families;
    double mean_accuracy = 0.0;
};

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

/// Balanced 1:1 evaluation pairs over the given families: all blood-positive
/// pairs, matched by same-family {NA, Spouse} negatives topped up with
/// cross-family pairs drawn within the same family set. Deterministic.
std::vector<PairSample> balanced_validation_pairs(const FamilyCorpus& corpus,
                                                  const std::vector<std::string>& families,
                                                  std::uint64_t seed);

FoldResult train_fold(const FamilyCorpus& corpus, const ExperimentConfig& cfg,
                      const std::vector<std::string>& train_families,
                      const std::vector<std::string>& val_families,
                      int fold_index = 0);

CvResult cross_validate(const FamilyCorpus& corpus, const ExperimentConfig& cfg);

// ---------------------------------------------------------------------------
// Scoring
// ---------------------------------------------------------------------------

/// Kinship probability of an image pair: the arithmetic mean of the member
/// models' probabilities. Sigmoid heads contribute p, softmax heads
/// 1 - P(class 0), metric heads the similarity 1/(1 + euclidean distance).
double predict_pair(const std::vector<HeadModel>& models, const FusionConfig& fusion,
                    const FamilyCorpus& corpus, const std::string& img_a,
                    const std::string& img_b);

/// Mean class distribution over softmax models (multi-class evaluation).
std::vector<double> predict_multi(const std::vector<HeadModel>& models,
                                  const FusionConfig& fusion, const FamilyCorpus& corpus,
                                  const std::string& img_a, const std::string& img_b);

struct EvalResult {
    double accuracy = 0.0;
    std::size_t n = 0;
    // Argmax accuracy by generation class, softmax ensembles only.
    std::vector<double> per_class_accuracy;
    std::vector<std::size_t> per_class_n;
};

EvalResult evaluate_verification(const std::vector<HeadModel>& models,
                                 const FusionConfig& fusion, const FamilyCorpus& corpus,
                                 const std::vector<PairSample>& pairs, double threshold);

enum class TriMethod { SumFCMC, MergeIndependent };

struct TriScoreResult {
    double score = 0.0; // FC+MC in [0,2] for SumFCMC; 0/1 for MergeIndependent
    bool decision = false;
    double p_fc = 0.0;
    double p_mc = 0.0;
};

TriScoreResult tri_score(const std::vector<HeadModel>& models, const FusionConfig& fusion,
                         const FamilyCorpus& corpus, const TriSample& tri,
                         TriMethod method, double threshold);

enum class ColumnAgg { Mean, Max };

/// Probe-image x gallery-member probability matrix plus the aggregated
/// per-member score row.
struct ScoreMatrix {
    std::string probe_id;
    std::vector<std::string> rows; // probe image ids
    std::vector<std::string> cols; // gallery member ids
    std::vector<double> cells;     // row-major, rows.size() x cols.size()
    std::vector<double> final_row;

    double at(std::size_t r, std::size_t c) const { return cells[r * cols.size() + c]; }
};

struct RankedEntry {
    std::string gallery_id;
    double score = 0.0;
    int rank = 0; // 1-based
};

struct RetrievalResult {
    ScoreMatrix matrix;
    std::vector<RankedEntry> ranking; // descending score, ties by ascending id
};

using Gallery = std::map<std::string, std::vector<std::string>>; // member -> images

/// Score one probe (a set of images) against the gallery. A member's cell
/// score is the mean over that member's images; final_row aggregates each
/// column by mean or max.
RetrievalResult retrieve(const std::vector<HeadModel>& models, const FusionConfig& fusion,
                         const FamilyCorpus& corpus, const std::string& probe_id,
                         const std::vector<std::string>& probe_images,
                         const Gallery& gallery, ColumnAgg agg);

// ---------------------------------------------------------------------------
// Prediction files
// ---------------------------------------------------------------------------

struct PairPrediction {
    std::string img_a;
    std::string img_b;
    double prob = 0.0;
};

/// CSV with header img_a,img_b,prob.
void write_pair_predictions(const std::string& path,
                            const std::vector<PairPrediction>& preds);
std::vector<PairPrediction> read_pair_predictions(const std::string& path);

/// Row-wise mean of several prediction files over identical pair sets.
std::vector<PairPrediction> ensemble_predictions(
    const std::vector<std::vector<PairPrediction>>& files);

// ---------------------------------------------------------------------------
// Parallel scoring
// ---------------------------------------------------------------------------

/// Worker count for scoring: KINVERIFY_THREADS when set, else the hardware
/// concurrency. Training never parallelizes.
unsigned scoring_threads();

/// Run fn(i) for i in [0, n) over scoring_threads() workers. fn must only
/// write to per-index slots.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

} // namespace kin

#endif // KINVERIFY_PIPELINE_HPP
