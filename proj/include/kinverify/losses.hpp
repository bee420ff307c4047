#ifndef KINVERIFY_LOSSES_HPP
#define KINVERIFY_LOSSES_HPP

#include <span>
#include <vector>

#include "kinverify/error.hpp"

namespace kin {

/// Probabilities are clamped to [kProbEps, 1 - kProbEps] before taking logs,
/// which caps the per-sample loss at about 27.6.
constexpr double kProbEps = 1e-12;

struct FocalConfig {
    double alpha = 0.25;
    double gamma = 2.0;
};

struct TripletConfig {
    double margin = 0.2;
};

struct ScalarLoss {
    double loss = 0.0;
    double dp = 0.0; // dLoss/dp at the clamped probability
};

/// Binary cross-entropy: L = -[y ln p + (1-y) ln(1-p)].
ScalarLoss bce(double p, int y);

/// Focal loss: y=1 -> -alpha (1-p)^gamma ln p;
///             y=0 -> -(1-alpha) p^gamma ln(1-p).
ScalarLoss focal(double p, int y, const FocalConfig& cfg);

struct SoftmaxCeLoss {
    double loss = 0.0;
    std::vector<double> dlogits; // softmax(logits) - one_hot(y)
};

/// Cross-entropy over softmax of the logits, numerically stable.
SoftmaxCeLoss softmax_ce(std::span<const double> logits, int y);

struct TripletLoss {
    double loss = 0.0;
    std::vector<double> d_anchor;
    std::vector<double> d_positive;
    std::vector<double> d_negative;
};

/// Squared-distance triplet hinge:
/// L = max(0, |a-p|^2 - |a-n|^2 + margin), subgradient 0 at the hinge.
TripletLoss triplet(std::span<const double> anchor, std::span<const double> positive,
                    std::span<const double> negative, const TripletConfig& cfg);

} // namespace kin

#endif // KINVERIFY_LOSSES_HPP
