#ifndef KINVERIFY_NETHEAD_HPP
#define KINVERIFY_NETHEAD_HPP

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "kinverify/error.hpp"
#include "kinverify/rng.hpp"

namespace kin {

/// Row-major dense matrix of 64-bit floats.
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<double> a;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), a(static_cast<std::size_t>(r) * c) {}

    double& at(int r, int c) { return a[static_cast<std::size_t>(r) * cols + c]; }
    double at(int r, int c) const { return a[static_cast<std::size_t>(r) * cols + c]; }
};

enum class HeadOutput {
    SigmoidBinary, // single logit, probability via sigmoid
    Softmax,       // K logits, probabilities via softmax
    Linear,        // raw output; used by the metric-learning head
};

struct HeadConfig {
    std::vector<int> layer_dims; // input, hidden..., output
    double dropout_rate = 0.1;
    bool use_bias = true;
    HeadOutput output = HeadOutput::SigmoidBinary;
    std::uint64_t seed = 0;

    int input_dim() const { return layer_dims.front(); }
    int output_dim() const { return layer_dims.back(); }
    std::size_t layer_count() const { return layer_dims.size() - 1; }

    void validate() const;
};

/// Per-layer weights and optional biases. Also reused as the gradient
/// container, which is shaped identically.
struct HeadParams {
    struct Layer {
        Mat w;                 // out x in
        std::vector<double> b; // empty when bias is disabled
    };
    std::vector<Layer> layers;

    /// Seeded init: weights uniform in +-1/sqrt(fan_in), biases zero.
    static HeadParams init(const HeadConfig& cfg);
    static HeadParams zeros_like(const HeadParams& other);

    std::size_t parameter_count() const;
    void add_scaled(const HeadParams& other, double scale);
    void scale(double factor);
};

using HeadGrads = HeadParams;

/// Activations recorded by a train-mode forward, consumed by backward.
struct ForwardCache {
    std::vector<std::vector<double>> inputs;  // input vector of each layer
    std::vector<std::vector<double>> preacts; // affine outputs z of each layer
    std::vector<std::vector<double>> masks;   // dropout masks over hidden layers
    bool train_mode = false;
    std::vector<int> dims; // layer_dims echo, checked by backward
};

/// Affine layers with ReLU between hidden layers; inverted dropout on hidden
/// activations in train mode only. Returns the raw logits.
std::vector<double> forward(const HeadParams& params, const HeadConfig& cfg,
                            std::span<const double> x, bool train_mode,
                            Rng* rng = nullptr, ForwardCache* cache = nullptr);

/// Eval-mode probabilities: sigmoid scalar, softmax distribution (with
/// max-subtraction), or the raw vector for Linear heads.
std::vector<double> predict_prob(const HeadParams& params, const HeadConfig& cfg,
                                 std::span<const double> x);

/// Backpropagate dLoss/dLogits through a cached train-mode forward.
HeadGrads backward(const ForwardCache& cache, const HeadParams& params,
                   const HeadConfig& cfg, std::span<const double> dlogits);

// ---------------------------------------------------------------------------
// Optimizers
// ---------------------------------------------------------------------------

enum class OptKind { Sgd, Adam };

struct OptConfig {
    OptKind kind = OptKind::Adam;
    double lr = 1e-3;
    double momentum = 0.9;  // SGD
    double beta1 = 0.9;     // Adam
    double beta2 = 0.999;
    double eps = 1e-8;
};

class OptState {
public:
    OptState(OptConfig cfg, const HeadParams& params);

    void step(HeadParams& params, const HeadGrads& grads);

    const OptConfig& config() const { return cfg_; }
    long steps_taken() const { return t_; }

private:
    OptConfig cfg_;
    long t_ = 0;
    HeadParams m_; // momentum / first moment
    HeadParams v_; // second moment (Adam)
};

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

/// Versioned checkpoint: a text header (magic line, config key-value lines,
/// a "params <count>" line) followed by the parameters as little-endian
/// 64-bit floats in layer order, weights row-major before biases.
void save_checkpoint(const std::string& path, const HeadConfig& cfg,
                     const HeadParams& params);

struct Checkpoint {
    HeadConfig config;
    HeadParams params;
};

Checkpoint load_checkpoint(const std::string& path);

} // namespace kin

#endif // KINVERIFY_NETHEAD_HPP
