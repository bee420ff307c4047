#ifndef KINVERIFY_SAMPLER_HPP
#define KINVERIFY_SAMPLER_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "kinverify/corpus.hpp"
#include "kinverify/rng.hpp"

namespace kin {

// ---------------------------------------------------------------------------
// Sample types
// ---------------------------------------------------------------------------

/// One labeled image pair. Images are stored with the lexicographically
/// smaller id first so exported datasets are canonical.
struct PairSample {
    std::string img_a;
    std::string img_b;
    int binary_label = 0; // 1 iff is_blood(rid)
    int multi_label = 0;  // generation class, see multi_class_of
    Rid rid;

    bool operator==(const PairSample&) const = default;
};

/// One (father image, mother image, child image) unit for tri-subject
/// verification. label=1 iff the child is blood-related to both parents.
struct TriSample {
    std::string img_f;
    std::string img_m;
    std::string img_c;
    int label = 0;
};

struct SamplerConfig {
    int pos_per_batch = 8;
    int neg_per_batch = 8;
    bool db_oversample = false; // 2x selection weight for RIDs {3,6,7,8}
    std::uint64_t seed = 0;
};

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// Map a relationship code to its generation class:
/// {1,4} -> 1 (cross one generation), {2} -> 2 (same generation),
/// {3,6,7,8} -> 3 (two or more generations apart), all others -> 0.
constexpr int multi_class_of(int rid_code) {
    switch (rid_code) {
        case kRidChild:
        case kRidParent:
            return 1;
        case kRidSibling:
            return 2;
        case kRidGrandchild:
        case kRidGrandparent:
        case kRidGreatGrandchild:
        case kRidGreatGrandparent:
            return 3;
        default:
            return 0;
    }
}

constexpr int multi_class_of(Rid rid) { return multi_class_of(rid.code); }

/// True iff the code is in the distant-generation oversampling set {3,6,7,8}.
constexpr bool is_distant_blood(int rid_code) {
    return rid_code == kRidGrandchild || rid_code == kRidGrandparent ||
           rid_code == kRidGreatGrandchild || rid_code == kRidGreatGrandparent;
}

/// All cross-member image pairs within each listed family, labeled by
/// pair_label. Order is deterministic: family, then mid pair, then image ids.
std::vector<PairSample> enumerate_pairs(const FamilyCorpus& corpus,
                                        const std::vector<std::string>& families);

/// Batch sampler with the configured pos/neg counts. Positives come from the
/// within-family blood pairs; negatives are drawn half from cross-family
/// image pairs and half from same-family pairs with RID in {NA, Spouse}.
/// RID 9 (TBD) pairs are excluded from every pool. Sampling is with
/// replacement; db_oversample doubles the draw weight of RIDs {3,6,7,8}.
class PairSampler {
public:
    PairSampler(const FamilyCorpus& corpus, std::vector<std::string> families,
                SamplerConfig config);

    std::vector<PairSample> next_batch(Rng& rng) const;

    std::size_t positive_pool_size() const { return positives_.size(); }
    std::size_t same_family_negative_pool_size() const { return negatives_.size(); }

private:
    PairSample draw_negative(Rng& rng) const;

    const FamilyCorpus& corpus_;
    std::vector<std::string> families_;
    SamplerConfig config_;
    std::vector<PairSample> positives_;
    std::vector<double> positive_cumweight_;
    std::vector<PairSample> negatives_; // same-family {NA, Spouse}
    // Flat image list per family for cross-family draws.
    std::vector<std::vector<std::string>> family_images_;
};

struct TripleConfig {
    int negatives_per_positive = 1;
    std::uint64_t seed = 0;
};

/// Positive triples for every child with an identifiable father (male,
/// spouse-linked to the mother) over all image combinations; negatives swap
/// in a child image from a different family, uniformly at random.
std::vector<TriSample> enumerate_triples(const FamilyCorpus& corpus,
                                         const std::vector<std::string>& families,
                                         const TripleConfig& config = {});

// ---------------------------------------------------------------------------
// Metric-learning triplet sampling
// ---------------------------------------------------------------------------

/// Class granularity for triplet sampling: one class per person, or one
/// class per blood-connected component within a family.
enum class TripletGranularity { Person, BloodGroup };

struct ImageTriplet {
    std::string anchor;
    std::string positive;
    std::string negative;
};

/// Sampler for (anchor, positive, negative) image triplets where anchor and
/// positive share a class and the negative does not.
class TripletSampler {
public:
    TripletSampler(const FamilyCorpus& corpus, const std::vector<std::string>& families,
                   TripletGranularity granularity);

    bool viable() const { return !rich_classes_.empty() && classes_.size() >= 2; }
    ImageTriplet next(Rng& rng) const;

private:
    std::vector<std::vector<std::string>> classes_; // images per class
    std::vector<std::size_t> rich_classes_;         // classes with >= 2 images
};

// ---------------------------------------------------------------------------
// Pair list files
// ---------------------------------------------------------------------------

/// TSV lines: img_a \t img_b \t binary \t multi \t rid
void write_pair_list(const std::string& path, const std::vector<PairSample>& pairs);
std::vector<PairSample> read_pair_list(const std::string& path);

} // namespace kin

#endif // KINVERIFY_SAMPLER_HPP
