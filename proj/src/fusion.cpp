#include "kinverify/fusion.hpp"

#include <cmath>

namespace kin {

namespace {

inline double signed_sqrt(double x) {
    return x < 0.0 ? -std::sqrt(-x) : std::sqrt(x);
}

} // namespace

const char* transform_name(Transform t) {
    switch (t) {
        case Transform::DiffSq: return "diff_sq";
        case Transform::Prod: return "prod";
        case Transform::Sum: return "sum";
        case Transform::Diff: return "diff";
        case Transform::SqDiff: return "sq_diff";
        case Transform::SqrtSum: return "sqrt_sum";
        case Transform::SqrtDiff: return "sqrt_diff";
        case Transform::SumSq: return "sum_sq";
    }
    return "?";
}

Transform transform_from_name(const std::string& name) {
    if (name == "diff_sq") return Transform::DiffSq;
    if (name == "prod") return Transform::Prod;
    if (name == "sum") return Transform::Sum;
    if (name == "diff") return Transform::Diff;
    if (name == "sq_diff") return Transform::SqDiff;
    if (name == "sqrt_sum") return Transform::SqrtSum;
    if (name == "sqrt_diff") return Transform::SqrtDiff;
    if (name == "sum_sq") return Transform::SumSq;
    throw ValidationError("unknown transform '" + name + "'");
}

bool transform_is_symmetric(Transform t) {
    switch (t) {
        case Transform::DiffSq:
        case Transform::Prod:
        case Transform::Sum:
        case Transform::SqrtSum:
        case Transform::SumSq:
            return true;
        case Transform::Diff:
        case Transform::SqDiff:
        case Transform::SqrtDiff:
            return false;
    }
    return false;
}

std::vector<double> apply_transform(Transform t, std::span<const double> a,
                                    std::span<const double> b) {
    if (a.size() != b.size()) {
        throw ValidationError("DimMismatch: transform inputs of length " +
                              std::to_string(a.size()) + " and " +
                              std::to_string(b.size()));
    }
    std::vector<double> out(a.size());
    switch (t) {
        case Transform::DiffSq:
            for (std::size_t i = 0; i < a.size(); ++i) {
                const double d = a[i] - b[i];
                out[i] = d * d;
            }
            break;
        case Transform::Prod:
            for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
            break;
        case Transform::Sum:
            for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
            break;
        case Transform::Diff:
            for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
            break;
        case Transform::SqDiff:
            for (std::size_t i = 0; i < a.size(); ++i)
                out[i] = a[i] * a[i] - b[i] * b[i];
            break;
        case Transform::SqrtSum:
            for (std::size_t i = 0; i < a.size(); ++i)
                out[i] = signed_sqrt(a[i]) + signed_sqrt(b[i]);
            break;
        case Transform::SqrtDiff:
            for (std::size_t i = 0; i < a.size(); ++i)
                out[i] = signed_sqrt(a[i]) - signed_sqrt(b[i]);
            break;
        case Transform::SumSq:
            for (std::size_t i = 0; i < a.size(); ++i) {
                const double s = a[i] + b[i];
                out[i] = s * s;
            }
            break;
    }
    return out;
}

FusionConfig FusionConfig::baseline(std::vector<std::string> channels) {
    FusionConfig cfg;
    cfg.mode = FusionMode::Baseline;
    cfg.channels = std::move(channels);
    cfg.transforms = {Transform::SqDiff,  Transform::DiffSq, Transform::Prod,
                      Transform::Sum,     Transform::Diff,   Transform::SqrtSum,
                      Transform::SqrtDiff};
    return cfg;
}

FusionConfig FusionConfig::symmetric(std::vector<std::string> channels) {
    FusionConfig cfg;
    cfg.mode = FusionMode::Symmetric;
    cfg.channels = std::move(channels);
    cfg.transforms = {Transform::DiffSq, Transform::Prod, Transform::Sum,
                      Transform::SqrtSum};
    return cfg;
}

void FusionConfig::validate() const {
    if (channels.empty()) throw ValidationError("FusionConfig: no channels");
    if (transforms.empty()) throw ValidationError("FusionConfig: no transforms");
    if (mode == FusionMode::Symmetric) {
        for (Transform t : transforms) {
            if (!transform_is_symmetric(t)) {
                throw ValidationError(std::string("FusionConfig: transform '") +
                                      transform_name(t) +
                                      "' is order-sensitive and not allowed in "
                                      "symmetric mode");
            }
        }
    }
}

std::size_t FusionConfig::fused_dim(const std::vector<ChannelInfo>& channels_info) const {
    std::size_t total = 0;
    for (const std::string& name : channels) {
        bool found = false;
        for (const ChannelInfo& info : channels_info) {
            if (info.name == name) {
                total += transforms.size() * info.dim;
                found = true;
                break;
            }
        }
        if (!found) throw ValidationError("MissingChannel: " + name);
    }
    return total;
}

FusedVector fuse(const FusionConfig& cfg, const std::vector<ChannelPair>& pairs) {
    cfg.validate();
    if (pairs.size() != cfg.channels.size()) {
        throw ValidationError("MissingChannel: expected " +
                              std::to_string(cfg.channels.size()) +
                              " channel pairs, got " + std::to_string(pairs.size()));
    }

    FusedVector out;
    for (std::size_t c = 0; c < pairs.size(); ++c) {
        for (Transform t : cfg.transforms) {
            std::vector<double> piece = apply_transform(t, pairs[c].a, pairs[c].b);
            out.layout.push_back(
                FusedSlice{t, cfg.channels[c], out.values.size(), piece.size()});
            out.values.insert(out.values.end(), piece.begin(), piece.end());
        }
    }
    return out;
}

FusedVector fuse_images(const FusionConfig& cfg, const FamilyCorpus& corpus,
                        const std::string& img_a, const std::string& img_b) {
    std::vector<ChannelPair> pairs;
    pairs.reserve(cfg.channels.size());
    for (const std::string& ch : cfg.channels) {
        pairs.push_back({corpus.embedding(img_a, ch), corpus.embedding(img_b, ch)});
    }
    return fuse(cfg, pairs);
}

} // namespace kin
