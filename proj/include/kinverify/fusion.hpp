#ifndef KINVERIFY_FUSION_HPP
#define KINVERIFY_FUSION_HPP

#include <span>
#include <string>
#include <vector>

#include "kinverify/corpus.hpp"

namespace kin {

// ---------------------------------------------------------------------------
// Elementwise pair transforms
// ---------------------------------------------------------------------------

/// Elementwise transforms of a pair of embeddings (a, b). Square roots use
/// the signed convention s(x) = sign(x) * sqrt(|x|), which is odd, so
/// SqrtSum stays symmetric and SqrtDiff antisymmetric on arbitrary inputs.
enum class Transform {
    DiffSq,   // (a - b)^2, symmetric
    Prod,     // a * b, symmetric
    Sum,      // a + b, symmetric
    Diff,     // a - b, antisymmetric
    SqDiff,   // a^2 - b^2, antisymmetric
    SqrtSum,  // s(a) + s(b), symmetric
    SqrtDiff, // s(a) - s(b), antisymmetric
    SumSq,    // (a + b)^2, symmetric; optional extra, in no default set
};

const char* transform_name(Transform t);
Transform transform_from_name(const std::string& name);
bool transform_is_symmetric(Transform t);

/// Apply one transform to equal-length vectors.
std::vector<double> apply_transform(Transform t, std::span<const double> a,
                                    std::span<const double> b);

// ---------------------------------------------------------------------------
// Fusion configuration
// ---------------------------------------------------------------------------

enum class FusionMode { Baseline, Symmetric };

/// Transform set applied per channel, concatenated in declared order.
/// Symmetric mode rejects any order-sensitive transform, which makes the
/// fused vector (and everything downstream) invariant to swapping the pair.
struct FusionConfig {
    FusionMode mode = FusionMode::Baseline;
    std::vector<std::string> channels;
    std::vector<Transform> transforms;

    /// The full baseline set: sq_diff, diff_sq, prod, sum, diff, sqrt_sum,
    /// sqrt_diff per channel.
    static FusionConfig baseline(std::vector<std::string> channels);

    /// The order-invariant set: diff_sq, prod, sum, sqrt_sum per channel.
    static FusionConfig symmetric(std::vector<std::string> channels);

    /// Throws ValidationError when a Symmetric config carries an
    /// antisymmetric transform, or when channels/transforms are empty.
    void validate() const;

    /// Total fused length for the given channel dimensions.
    std::size_t fused_dim(const std::vector<ChannelInfo>& channels_info) const;
};

struct FusedSlice {
    Transform transform;
    std::string channel;
    std::size_t offset = 0;
    std::size_t length = 0;
};

struct FusedVector {
    std::vector<double> values;
    std::vector<FusedSlice> layout;
};

struct ChannelPair {
    std::span<const double> a;
    std::span<const double> b;
};

/// Concatenate every transform of every channel, channels outermost, in the
/// declared order. pairs must parallel cfg.channels.
FusedVector fuse(const FusionConfig& cfg, const std::vector<ChannelPair>& pairs);

/// Gather both images' channel embeddings from the corpus and fuse.
FusedVector fuse_images(const FusionConfig& cfg, const FamilyCorpus& corpus,
                        const std::string& img_a, const std::string& img_b);

} // namespace kin

#endif // KINVERIFY_FUSION_HPP
