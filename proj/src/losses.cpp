#include "kinverify/losses.hpp"

#include <algorithm>
#include <cmath>

namespace kin {

namespace {

double clamp_prob(double p) {
    return std::min(std::max(p, kProbEps), 1.0 - kProbEps);
}

void check_label(int y) {
    if (y != 0 && y != 1) {
        throw ValidationError("loss: binary label must be 0 or 1");
    }
}

} // namespace

ScalarLoss bce(double p, int y) {
    check_label(y);
    const double q = clamp_prob(p);
    ScalarLoss out;
    if (y == 1) {
        out.loss = -std::log(q);
        out.dp = -1.0 / q;
    } else {
        out.loss = -std::log(1.0 - q);
        out.dp = 1.0 / (1.0 - q);
    }
    return out;
}

ScalarLoss focal(double p, int y, const FocalConfig& cfg) {
    check_label(y);
    if (cfg.alpha <= 0.0 || cfg.alpha >= 1.0) {
        throw ValidationError("FocalConfig: alpha must lie in (0,1)");
    }
    if (cfg.gamma < 0.0) {
        throw ValidationError("FocalConfig: gamma must be >= 0");
    }
    const double q = clamp_prob(p);
    ScalarLoss out;
    if (y == 1) {
        const double mod = std::pow(1.0 - q, cfg.gamma);
        out.loss = -cfg.alpha * mod * std::log(q);
        // d/dq [ -a (1-q)^g ln q ] = a g (1-q)^(g-1) ln q - a (1-q)^g / q
        const double dmod = cfg.gamma > 0.0
                                ? cfg.gamma * std::pow(1.0 - q, cfg.gamma - 1.0)
                                : 0.0;
        out.dp = cfg.alpha * (dmod * std::log(q) - mod / q);
    } else {
        const double mod = std::pow(q, cfg.gamma);
        out.loss = -(1.0 - cfg.alpha) * mod * std::log(1.0 - q);
        // d/dq [ -(1-a) q^g ln(1-q) ] = -(1-a) [ g q^(g-1) ln(1-q) - q^g/(1-q) ]
        const double dmod =
            cfg.gamma > 0.0 ? cfg.gamma * std::pow(q, cfg.gamma - 1.0) : 0.0;
        out.dp = -(1.0 - cfg.alpha) * (dmod * std::log(1.0 - q) - mod / (1.0 - q));
    }
    return out;
}

SoftmaxCeLoss softmax_ce(std::span<const double> logits, int y) {
    if (logits.size() < 2) {
        throw ValidationError("softmax_ce: needs at least 2 logits");
    }
    if (y < 0 || static_cast<std::size_t>(y) >= logits.size()) {
        throw ValidationError("IndexOutOfRange: class " + std::to_string(y) + " of " +
                              std::to_string(logits.size()));
    }
    const double zmax = *std::max_element(logits.begin(), logits.end());
    double denom = 0.0;
    std::vector<double> probs(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) {
        probs[i] = std::exp(logits[i] - zmax);
        denom += probs[i];
    }
    for (double& p : probs) p /= denom;

    SoftmaxCeLoss out;
    out.loss = -std::log(std::max(probs[static_cast<std::size_t>(y)], kProbEps));
    out.dlogits = std::move(probs);
    out.dlogits[static_cast<std::size_t>(y)] -= 1.0;
    return out;
}

TripletLoss triplet(std::span<const double> anchor, std::span<const double> positive,
                    std::span<const double> negative, const TripletConfig& cfg) {
    if (anchor.size() != positive.size() || anchor.size() != negative.size()) {
        throw ValidationError("DimMismatch: triplet inputs");
    }
    if (!(cfg.margin > 0.0) || !std::isfinite(cfg.margin)) {
        throw ValidationError("TripletConfig: margin must be finite and > 0");
    }

    double dist_ap = 0.0;
    double dist_an = 0.0;
    for (std::size_t i = 0; i < anchor.size(); ++i) {
        const double dp = anchor[i] - positive[i];
        const double dn = anchor[i] - negative[i];
        dist_ap += dp * dp;
        dist_an += dn * dn;
    }

    TripletLoss out;
    const double hinge = dist_ap - dist_an + cfg.margin;
    out.d_anchor.assign(anchor.size(), 0.0);
    out.d_positive.assign(anchor.size(), 0.0);
    out.d_negative.assign(anchor.size(), 0.0);
    if (hinge <= 0.0) {
        out.loss = 0.0;
        return out;
    }
    out.loss = hinge;
    for (std::size_t i = 0; i < anchor.size(); ++i) {
        out.d_anchor[i] = 2.0 * (negative[i] - positive[i]);
        out.d_positive[i] = -2.0 * (anchor[i] - positive[i]);
        out.d_negative[i] = 2.0 * (anchor[i] - negative[i]);
    }
    return out;
}

} // namespace kin
