#include "kinverify/nethead.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace kin {

void HeadConfig::validate() const {
    if (layer_dims.size() < 2) {
        throw ValidationError("HeadConfig: needs at least input and output dims");
    }
    for (int d : layer_dims) {
        if (d < 1) throw ValidationError("HeadConfig: non-positive layer dim");
    }
    if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
        throw ValidationError("HeadConfig: dropout_rate must lie in [0,1)");
    }
    if (output == HeadOutput::SigmoidBinary && output_dim() != 1) {
        throw ValidationError("HeadConfig: sigmoid output requires output dim 1");
    }
    if (output == HeadOutput::Softmax && output_dim() < 2) {
        throw ValidationError("HeadConfig: softmax output requires >= 2 classes");
    }
}

HeadParams HeadParams::init(const HeadConfig& cfg) {
    cfg.validate();
    Rng rng(mix_seed(cfg.seed, 0x4ead));
    HeadParams params;
    for (std::size_t l = 0; l + 1 < cfg.layer_dims.size(); ++l) {
        const int in = cfg.layer_dims[l];
        const int out = cfg.layer_dims[l + 1];
        Layer layer;
        layer.w = Mat(out, in);
        const double bound = 1.0 / std::sqrt(static_cast<double>(in));
        for (double& w : layer.w.a) w = rng.uniform(-bound, bound);
        if (cfg.use_bias) layer.b.assign(static_cast<std::size_t>(out), 0.0);
        params.layers.push_back(std::move(layer));
    }
    return params;
}

HeadParams HeadParams::zeros_like(const HeadParams& other) {
    HeadParams out;
    for (const Layer& l : other.layers) {
        Layer z;
        z.w = Mat(l.w.rows, l.w.cols);
        z.b.assign(l.b.size(), 0.0);
        out.layers.push_back(std::move(z));
    }
    return out;
}

std::size_t HeadParams::parameter_count() const {
    std::size_t n = 0;
    for (const Layer& l : layers) n += l.w.a.size() + l.b.size();
    return n;
}

void HeadParams::add_scaled(const HeadParams& other, double scale) {
    for (std::size_t l = 0; l < layers.size(); ++l) {
        for (std::size_t i = 0; i < layers[l].w.a.size(); ++i) {
            layers[l].w.a[i] += scale * other.layers[l].w.a[i];
        }
        for (std::size_t i = 0; i < layers[l].b.size(); ++i) {
            layers[l].b[i] += scale * other.layers[l].b[i];
        }
    }
}

void HeadParams::scale(double factor) {
    for (Layer& l : layers) {
        for (double& w : l.w.a) w *= factor;
        for (double& b : l.b) b *= factor;
    }
}

namespace {

void check_shapes(const HeadParams& params, const HeadConfig& cfg) {
    if (params.layers.size() != cfg.layer_count()) {
        throw ValidationError("ShapeMismatch: params hold " +
                              std::to_string(params.layers.size()) + " layers, config " +
                              std::to_string(cfg.layer_count()));
    }
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        const auto& layer = params.layers[l];
        if (layer.w.cols != cfg.layer_dims[l] || layer.w.rows != cfg.layer_dims[l + 1]) {
            throw ValidationError("ShapeMismatch: layer " + std::to_string(l));
        }
        if (cfg.use_bias && layer.b.size() != static_cast<std::size_t>(layer.w.rows)) {
            throw ValidationError("ShapeMismatch: bias of layer " + std::to_string(l));
        }
    }
}

std::vector<double> affine(const HeadParams::Layer& layer,
                           std::span<const double> x) {
    std::vector<double> z(static_cast<std::size_t>(layer.w.rows));
    for (int r = 0; r < layer.w.rows; ++r) {
        double acc = layer.b.empty() ? 0.0 : layer.b[static_cast<std::size_t>(r)];
        const double* wrow = layer.w.a.data() + static_cast<std::size_t>(r) * layer.w.cols;
        for (int c = 0; c < layer.w.cols; ++c) acc += wrow[c] * x[static_cast<std::size_t>(c)];
        z[static_cast<std::size_t>(r)] = acc;
    }
    return z;
}

} // namespace

std::vector<double> forward(const HeadParams& params, const HeadConfig& cfg,
                            std::span<const double> x, bool train_mode, Rng* rng,
                            ForwardCache* cache) {
    check_shapes(params, cfg);
    if (x.size() != static_cast<std::size_t>(cfg.input_dim())) {
        throw ValidationError("ShapeMismatch: input of length " +
                              std::to_string(x.size()) + ", head expects " +
                              std::to_string(cfg.input_dim()));
    }
    const bool dropout_active = train_mode && cfg.dropout_rate > 0.0;
    if (dropout_active && rng == nullptr) {
        throw ValidationError("forward: train-mode dropout needs an rng");
    }

    if (cache) {
        *cache = ForwardCache{};
        cache->train_mode = train_mode;
        cache->dims = cfg.layer_dims;
    }

    std::vector<double> h(x.begin(), x.end());
    const std::size_t n_layers = params.layers.size();
    for (std::size_t l = 0; l < n_layers; ++l) {
        if (cache) cache->inputs.push_back(h);
        std::vector<double> z = affine(params.layers[l], h);
        if (cache) cache->preacts.push_back(z);

        if (l + 1 == n_layers) {
            h = std::move(z); // output layer, no activation
            break;
        }
        for (double& v : z) v = v > 0.0 ? v : 0.0; // ReLU
        if (dropout_active) {
            const double keep = 1.0 - cfg.dropout_rate;
            std::vector<double> mask(z.size());
            for (std::size_t i = 0; i < z.size(); ++i) {
                mask[i] = rng->uniform() < keep ? 1.0 / keep : 0.0;
                z[i] *= mask[i];
            }
            if (cache) cache->masks.push_back(std::move(mask));
        } else if (cache) {
            cache->masks.emplace_back(); // empty mask = identity
        }
        h = std::move(z);
    }
    return h;
}

std::vector<double> predict_prob(const HeadParams& params, const HeadConfig& cfg,
                                 std::span<const double> x) {
    std::vector<double> logits = forward(params, cfg, x, /*train_mode=*/false);
    switch (cfg.output) {
        case HeadOutput::SigmoidBinary: {
            const double z = logits[0];
            // Stable sigmoid for both signs.
            const double p = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z))
                                      : std::exp(z) / (1.0 + std::exp(z));
            return {p};
        }
        case HeadOutput::Softmax: {
            const double zmax = *std::max_element(logits.begin(), logits.end());
            double denom = 0.0;
            for (double& z : logits) {
                z = std::exp(z - zmax);
                denom += z;
            }
            for (double& z : logits) z /= denom;
            return logits;
        }
        case HeadOutput::Linear:
            return logits;
    }
    return logits;
}

HeadGrads backward(const ForwardCache& cache, const HeadParams& params,
                   const HeadConfig& cfg, std::span<const double> dlogits) {
    check_shapes(params, cfg);
    if (!cache.train_mode || cache.dims != cfg.layer_dims ||
        cache.inputs.size() != params.layers.size()) {
        throw ValidationError("StaleCache: backward needs the cache of a train-mode "
                              "forward through the same head");
    }
    if (dlogits.size() != static_cast<std::size_t>(cfg.output_dim())) {
        throw ValidationError("ShapeMismatch: upstream gradient length");
    }

    HeadGrads grads = HeadParams::zeros_like(params);
    std::vector<double> dz(dlogits.begin(), dlogits.end());

    for (std::size_t li = params.layers.size(); li-- > 0;) {
        const auto& layer = params.layers[li];
        const auto& input = cache.inputs[li];
        auto& glayer = grads.layers[li];

        for (int r = 0; r < layer.w.rows; ++r) {
            const double g = dz[static_cast<std::size_t>(r)];
            double* grow = glayer.w.a.data() + static_cast<std::size_t>(r) * layer.w.cols;
            for (int c = 0; c < layer.w.cols; ++c) grow[c] = g * input[static_cast<std::size_t>(c)];
            if (!glayer.b.empty()) glayer.b[static_cast<std::size_t>(r)] = g;
        }
        if (li == 0) break;

        // dinput = W^T dz, then through dropout mask and ReLU of layer li-1.
        std::vector<double> dinput(static_cast<std::size_t>(layer.w.cols), 0.0);
        for (int r = 0; r < layer.w.rows; ++r) {
            const double g = dz[static_cast<std::size_t>(r)];
            const double* wrow = layer.w.a.data() + static_cast<std::size_t>(r) * layer.w.cols;
            for (int c = 0; c < layer.w.cols; ++c) dinput[static_cast<std::size_t>(c)] += wrow[c] * g;
        }
        const auto& mask = cache.masks[li - 1];
        if (!mask.empty()) {
            for (std::size_t i = 0; i < dinput.size(); ++i) dinput[i] *= mask[i];
        }
        const auto& z = cache.preacts[li - 1];
        for (std::size_t i = 0; i < dinput.size(); ++i) {
            if (z[i] <= 0.0) dinput[i] = 0.0;
        }
        dz = std::move(dinput);
    }
    return grads;
}

// ---------------------------------------------------------------------------
// Optimizers
// ---------------------------------------------------------------------------

OptState::OptState(OptConfig cfg, const HeadParams& params)
    : cfg_(cfg),
      m_(HeadParams::zeros_like(params)),
      v_(HeadParams::zeros_like(params)) {}

void OptState::step(HeadParams& params, const HeadGrads& grads) {
    if (params.layers.size() != m_.layers.size()) {
        throw ValidationError("ShapeMismatch: optimizer state does not match params");
    }
    ++t_;
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        auto& p = params.layers[l];
        const auto& g = grads.layers[l];
        if (g.w.a.size() != p.w.a.size() || g.b.size() != p.b.size()) {
            throw ValidationError("ShapeMismatch: gradient of layer " + std::to_string(l));
        }
        auto update = [&](double* pv, const double* gv, double* mv, double* vv,
                          std::size_t n) {
            if (cfg_.kind == OptKind::Sgd) {
                for (std::size_t i = 0; i < n; ++i) {
                    mv[i] = cfg_.momentum * mv[i] + gv[i];
                    pv[i] -= cfg_.lr * mv[i];
                }
            } else {
                const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
                const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
                for (std::size_t i = 0; i < n; ++i) {
                    mv[i] = cfg_.beta1 * mv[i] + (1.0 - cfg_.beta1) * gv[i];
                    vv[i] = cfg_.beta2 * vv[i] + (1.0 - cfg_.beta2) * gv[i] * gv[i];
                    const double mhat = mv[i] / bc1;
                    const double vhat = vv[i] / bc2;
                    pv[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
                }
            }
        };
        update(p.w.a.data(), g.w.a.data(), m_.layers[l].w.a.data(),
               v_.layers[l].w.a.data(), p.w.a.size());
        if (!p.b.empty()) {
            update(p.b.data(), g.b.data(), m_.layers[l].b.data(),
                   v_.layers[l].b.data(), p.b.size());
        }
    }
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

constexpr const char* kMagic = "KINHEAD";
constexpr int kVersion = 1;

void write_le_double(std::ostream& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(buf), 8);
}

double read_le_double(std::istream& in) {
    unsigned char buf[8];
    in.read(reinterpret_cast<char*>(buf), 8);
    if (!in) throw IoError("checkpoint truncated");
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    double v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
}

const char* output_name(HeadOutput o) {
    switch (o) {
        case HeadOutput::SigmoidBinary: return "sigmoid";
        case HeadOutput::Softmax: return "softmax";
        case HeadOutput::Linear: return "linear";
    }
    return "?";
}

HeadOutput output_from_name(const std::string& s) {
    if (s == "sigmoid") return HeadOutput::SigmoidBinary;
    if (s == "softmax") return HeadOutput::Softmax;
    if (s == "linear") return HeadOutput::Linear;
    throw ValidationError("checkpoint: unknown output kind '" + s + "'");
}

} // namespace

void save_checkpoint(const std::string& path, const HeadConfig& cfg,
                     const HeadParams& params) {
    cfg.validate();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint " + path);

    out << kMagic << ' ' << kVersion << '\n';
    out << "layer_dims ";
    for (std::size_t i = 0; i < cfg.layer_dims.size(); ++i) {
        if (i) out << ',';
        out << cfg.layer_dims[i];
    }
    out << '\n';
    out << "dropout " << cfg.dropout_rate << '\n';
    out << "use_bias " << (cfg.use_bias ? 1 : 0) << '\n';
    out << "output " << output_name(cfg.output) << '\n';
    out << "seed " << cfg.seed << '\n';
    out << "params " << params.parameter_count() << '\n';

    for (const auto& layer : params.layers) {
        for (double v : layer.w.a) write_le_double(out, v);
        for (double v : layer.b) write_le_double(out, v);
    }
    if (!out) throw IoError("failed writing checkpoint " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read checkpoint " + path);

    std::string line;
    if (!std::getline(in, line)) throw IoError("checkpoint truncated: " + path);
    {
        std::istringstream head(line);
        std::string magic;
        int version = 0;
        head >> magic >> version;
        if (magic != kMagic) {
            throw ValidationError("checkpoint: bad magic in " + path);
        }
        if (version != kVersion) {
            throw ValidationError("checkpoint: unsupported version " +
                                  std::to_string(version) + " in " + path);
        }
    }

    HeadConfig cfg;
    cfg.layer_dims.clear();
    std::size_t declared_params = 0;
    while (std::getline(in, line)) {
        std::istringstream row(line);
        std::string key;
        row >> key;
        if (key == "layer_dims") {
            std::string dims;
            row >> dims;
            std::size_t start = 0;
            cfg.layer_dims.clear();
            while (start <= dims.size()) {
                std::size_t pos = dims.find(',', start);
                const std::string tok =
                    dims.substr(start, pos == std::string::npos ? pos : pos - start);
                int v = 0;
                auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
                if (ec != std::errc{} || p != tok.data() + tok.size()) {
                    throw ValidationError("checkpoint: bad layer_dims in " + path);
                }
                cfg.layer_dims.push_back(v);
                if (pos == std::string::npos) break;
                start = pos + 1;
            }
        } else if (key == "dropout") {
            row >> cfg.dropout_rate;
        } else if (key == "use_bias") {
            int v = 0;
            row >> v;
            cfg.use_bias = v != 0;
        } else if (key == "output") {
            std::string name;
            row >> name;
            cfg.output = output_from_name(name);
        } else if (key == "seed") {
            row >> cfg.seed;
        } else if (key == "params") {
            row >> declared_params;
            break;
        } else {
            throw ValidationError("checkpoint: unknown header key '" + key + "' in " +
                                  path);
        }
    }
    cfg.validate();

    Checkpoint ckpt;
    ckpt.config = cfg;
    for (std::size_t l = 0; l + 1 < cfg.layer_dims.size(); ++l) {
        HeadParams::Layer layer;
        layer.w = Mat(cfg.layer_dims[l + 1], cfg.layer_dims[l]);
        for (double& v : layer.w.a) v = read_le_double(in);
        if (cfg.use_bias) {
            layer.b.resize(static_cast<std::size_t>(cfg.layer_dims[l + 1]));
            for (double& v : layer.b) v = read_le_double(in);
        }
        ckpt.params.layers.push_back(std::move(layer));
    }
    if (ckpt.params.parameter_count() != declared_params) {
        throw ValidationError("checkpoint: parameter count mismatch in " + path);
    }
    return ckpt;
}

} // namespace kin
