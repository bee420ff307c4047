#include "kinverify/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <mutex>
#include <set>
#include <thread>
#include <tuple>

namespace kin {

const char* loss_kind_name(LossKind k) {
    switch (k) {
        case LossKind::Bce: return "bce";
        case LossKind::Focal: return "focal";
        case LossKind::SoftmaxCe: return "softmax_ce";
        case LossKind::Triplet: return "triplet";
    }
    return "?";
}

LossKind loss_kind_from_name(const std::string& name) {
    if (name == "bce") return LossKind::Bce;
    if (name == "focal") return LossKind::Focal;
    if (name == "softmax_ce") return LossKind::SoftmaxCe;
    if (name == "triplet") return LossKind::Triplet;
    throw ValidationError("unknown loss kind '" + name + "'");
}

// ---------------------------------------------------------------------------
// Config resolution
// ---------------------------------------------------------------------------

namespace {

std::size_t channel_dim_sum(const FusionConfig& fusion, const FamilyCorpus& corpus) {
    std::size_t total = 0;
    for (const std::string& name : fusion.channels) {
        bool found = false;
        for (const ChannelInfo& info : corpus.channels()) {
            if (info.name == name) {
                total += info.dim;
                found = true;
                break;
            }
        }
        if (!found) throw ValidationError("MissingChannel: " + name);
    }
    return total;
}

constexpr int kMultiClassCount = 4;

} // namespace

HeadConfig ExperimentConfig::make_head_config(const FamilyCorpus& corpus,
                                              int fold_index) const {
    HeadConfig head;
    std::size_t in;
    int out;
    if (loss == LossKind::Triplet) {
        in = channel_dim_sum(fusion, corpus);
        out = metric_dim;
        head.output = HeadOutput::Linear;
    } else {
        in = fusion.fused_dim(corpus.channels());
        if (loss == LossKind::SoftmaxCe) {
            out = kMultiClassCount;
            head.output = HeadOutput::Softmax;
        } else {
            out = 1;
            head.output = HeadOutput::SigmoidBinary;
        }
    }
    head.layer_dims.push_back(static_cast<int>(in));
    for (int h : hidden_dims) head.layer_dims.push_back(h);
    head.layer_dims.push_back(out);
    head.dropout_rate = dropout_rate;
    head.use_bias = use_bias;
    head.seed = mix_seed(seed, 0x9e40 + static_cast<std::uint64_t>(fold_index));
    head.validate();
    return head;
}

void ExperimentConfig::validate(const FamilyCorpus& corpus) const {
    fusion.validate();
    (void)fusion.fused_dim(corpus.channels()); // throws on missing channel
    if (epochs < 0) throw ValidationError("ExperimentConfig: epochs must be >= 0");
    if (steps_per_epoch < 1) {
        throw ValidationError("ExperimentConfig: steps_per_epoch must be >= 1");
    }
    if (threshold <= 0.0 || threshold >= 1.0) {
        throw ValidationError("ExperimentConfig: threshold must lie in (0,1)");
    }
    if (sampler.pos_per_batch < 1 || sampler.neg_per_batch < 1) {
        throw ValidationError("ExperimentConfig: batch counts must be >= 1");
    }
    if (loss == LossKind::Triplet && metric_dim < 1) {
        throw ValidationError("ExperimentConfig: metric_dim must be >= 1");
    }
}

// ---------------------------------------------------------------------------
// Validation pairs
// ---------------------------------------------------------------------------

std::vector<PairSample> balanced_validation_pairs(const FamilyCorpus& corpus,
                                                  const std::vector<std::string>& families,
                                                  std::uint64_t seed) {
    std::vector<PairSample> all = enumerate_pairs(corpus, families);
    std::vector<PairSample> pos;
    std::vector<PairSample> neg;
    for (PairSample& s : all) {
        if (s.binary_label == 1) {
            pos.push_back(std::move(s));
        } else if (s.rid.code == kRidNa || s.rid.code == kRidSpouse) {
            neg.push_back(std::move(s));
        }
    }

    Rng rng(mix_seed(seed, 0xba1a));

    // Top up negatives with cross-family pairs inside the same family set.
    std::vector<std::string> sorted = families;
    std::sort(sorted.begin(), sorted.end());
    std::vector<std::pair<std::string, std::vector<std::string>>> fam_images;
    for (const std::string& fam : sorted) {
        std::vector<std::string> images;
        for (const Member* m : corpus.family_members(fam)) {
            images.insert(images.end(), m->image_ids.begin(), m->image_ids.end());
        }
        if (!images.empty()) fam_images.emplace_back(fam, std::move(images));
    }

    if (fam_images.size() >= 2) {
        std::set<std::pair<std::string, std::string>> seen;
        for (const PairSample& s : neg) seen.insert({s.img_a, s.img_b});
        std::size_t attempts = 0;
        const std::size_t max_attempts = pos.size() * 50 + 1000;
        while (neg.size() < pos.size() && attempts++ < max_attempts) {
            const std::size_t fa = rng.uniform_index(fam_images.size());
            const std::size_t fb = rng.uniform_index(fam_images.size());
            if (fa == fb) continue;
            const auto& ia = fam_images[fa].second;
            const auto& ib = fam_images[fb].second;
            const std::string& x = ia[rng.uniform_index(ia.size())];
            const std::string& y = ib[rng.uniform_index(ib.size())];
            const std::string& a = x <= y ? x : y;
            const std::string& b = x <= y ? y : x;
            if (!seen.insert({a, b}).second) continue;
            PairSample s;
            s.img_a = a;
            s.img_b = b;
            s.binary_label = 0;
            s.multi_label = 0;
            s.rid = Rid(kRidNa);
            neg.push_back(std::move(s));
        }
    }

    if (neg.size() > pos.size()) {
        rng.shuffle(neg);
        neg.resize(pos.size());
    } else if (pos.size() > neg.size() && !neg.empty()) {
        rng.shuffle(pos);
        pos.resize(neg.size());
    }

    std::vector<PairSample> out;
    out.reserve(pos.size() + neg.size());
    out.insert(out.end(), pos.begin(), pos.end());
    out.insert(out.end(), neg.begin(), neg.end());
    // Canonical order so downstream reports are stable.
    std::sort(out.begin(), out.end(), [](const PairSample& a, const PairSample& b) {
        return std::tie(a.img_a, a.img_b) < std::tie(b.img_a, b.img_b);
    });
    return out;
}

// ---------------------------------------------------------------------------
// Training internals
// ---------------------------------------------------------------------------

namespace {

double stable_sigmoid(double z) {
    return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

std::vector<double> single_image_input(const FusionConfig& fusion,
                                       const FamilyCorpus& corpus,
                                       const std::string& image_id) {
    std::vector<double> out;
    for (const std::string& ch : fusion.channels) {
        const auto v = corpus.embedding(image_id, ch);
        out.insert(out.end(), v.begin(), v.end());
    }
    return out;
}

double euclidean(std::span<const double> a, std::span<const double> b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return std::sqrt(acc);
}

double model_pair_probability(const HeadModel& model, const FusionConfig& fusion,
                              const FamilyCorpus& corpus, const std::string& img_a,
                              const std::string& img_b) {
    if (model.config.output == HeadOutput::Linear) {
        const std::vector<double> ea =
            predict_prob(model.params, model.config, single_image_input(fusion, corpus, img_a));
        const std::vector<double> eb =
            predict_prob(model.params, model.config, single_image_input(fusion, corpus, img_b));
        return 1.0 / (1.0 + euclidean(ea, eb));
    }
    const FusedVector fused = fuse_images(fusion, corpus, img_a, img_b);
    const std::vector<double> probs = predict_prob(model.params, model.config, fused.values);
    if (model.config.output == HeadOutput::Softmax) return 1.0 - probs[0];
    return probs[0];
}

/// Pick the score threshold maximizing accuracy over labeled scores.
double calibrate_threshold(std::vector<std::pair<double, int>> scored) {
    if (scored.empty()) return 0.5;
    std::sort(scored.begin(), scored.end());
    const std::size_t n = scored.size();
    std::size_t total_pos = 0;
    for (const auto& [s, y] : scored) total_pos += static_cast<std::size_t>(y);

    // Sweep cut points: predict positive for score >= t. Start below the
    // smallest score (all predicted positive).
    double best_t = scored.front().first - 1e-9;
    std::size_t best_correct = total_pos;
    std::size_t pos_below = 0, neg_below = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (scored[i].second == 1) ++pos_below;
        else ++neg_below;
        const double cut = i + 1 < n
                               ? 0.5 * (scored[i].first + scored[i + 1].first)
                               : scored[i].first + 1e-9;
        const std::size_t correct = neg_below + (total_pos - pos_below);
        if (correct > best_correct) {
            best_correct = correct;
            best_t = cut;
        }
    }
    return best_t;
}

FoldResult train_metric_fold(const FamilyCorpus& corpus, const ExperimentConfig& cfg,
                             const std::vector<std::string>& train_families,
                             const std::vector<std::string>& val_families,
                             int fold_index) {
    const HeadConfig head_cfg = cfg.make_head_config(corpus, fold_index);
    HeadParams params = HeadParams::init(head_cfg);
    OptState opt(cfg.opt, params);

    TripletSampler sampler(corpus, train_families, cfg.granularity);
    if (!sampler.viable()) {
        throw ValidationError("ExhaustedPool: no triplet classes in training families");
    }
    Rng sample_rng(mix_seed(cfg.seed ^ cfg.sampler.seed,
                            0x7110 + static_cast<std::uint64_t>(fold_index)));
    Rng dropout_rng(mix_seed(cfg.seed, 0xd801 + static_cast<std::uint64_t>(fold_index)));

    const int batch = cfg.sampler.pos_per_batch + cfg.sampler.neg_per_batch;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (int step = 0; step < cfg.steps_per_epoch; ++step) {
            HeadGrads acc = HeadParams::zeros_like(params);
            for (int s = 0; s < batch; ++s) {
                const ImageTriplet t = sampler.next(sample_rng);
                ForwardCache ca, cp, cn;
                const std::vector<double> ea =
                    forward(params, head_cfg, single_image_input(cfg.fusion, corpus, t.anchor),
                            true, &dropout_rng, &ca);
                const std::vector<double> ep =
                    forward(params, head_cfg, single_image_input(cfg.fusion, corpus, t.positive),
                            true, &dropout_rng, &cp);
                const std::vector<double> en =
                    forward(params, head_cfg, single_image_input(cfg.fusion, corpus, t.negative),
                            true, &dropout_rng, &cn);
                const TripletLoss tl = triplet(ea, ep, en, cfg.triplet_cfg);
                if (tl.loss > 0.0) {
                    const double w = 1.0 / batch;
                    acc.add_scaled(backward(ca, params, head_cfg, tl.d_anchor), w);
                    acc.add_scaled(backward(cp, params, head_cfg, tl.d_positive), w);
                    acc.add_scaled(backward(cn, params, head_cfg, tl.d_negative), w);
                }
            }
            opt.step(params, acc);
        }
    }

    FoldResult result;
    result.fold = fold_index;
    result.model = HeadModel{head_cfg, std::move(params)};

    // Calibrate the similarity threshold on training pairs, then evaluate.
    const std::vector<PairSample> train_pairs = balanced_validation_pairs(
        corpus, train_families, mix_seed(cfg.seed, 0xca10 + static_cast<std::uint64_t>(fold_index)));
    std::vector<std::pair<double, int>> scored;
    const std::size_t cap = 2000;
    for (std::size_t i = 0; i < train_pairs.size() && i < cap; ++i) {
        const PairSample& p = train_pairs[i];
        scored.emplace_back(model_pair_probability(result.model, cfg.fusion, corpus,
                                                   p.img_a, p.img_b),
                            p.binary_label);
    }
    result.threshold = calibrate_threshold(std::move(scored));

    const std::vector<PairSample> val_pairs = balanced_validation_pairs(
        corpus, val_families, mix_seed(cfg.seed, 0xba10 + static_cast<std::uint64_t>(fold_index)));
    const EvalResult ev = evaluate_verification({result.model}, cfg.fusion, corpus,
                                                val_pairs, result.threshold);
    result.val_accuracy = ev.accuracy;
    result.val_pairs = ev.n;
    return result;
}

} // namespace

FoldResult train_fold(const FamilyCorpus& corpus, const ExperimentConfig& cfg,
                      const std::vector<std::string>& train_families,
                      const std::vector<std::string>& val_families, int fold_index) {
    cfg.validate(corpus);
    if (cfg.loss == LossKind::Triplet) {
        return train_metric_fold(corpus, cfg, train_families, val_families, fold_index);
    }

    const HeadConfig head_cfg = cfg.make_head_config(corpus, fold_index);
    HeadParams params = HeadParams::init(head_cfg);
    OptState opt(cfg.opt, params);

    SamplerConfig sampler_cfg = cfg.sampler;
    PairSampler sampler(corpus, train_families, sampler_cfg);
    Rng sample_rng(mix_seed(cfg.seed ^ cfg.sampler.seed,
                            0x5a17 + static_cast<std::uint64_t>(fold_index)));
    Rng dropout_rng(mix_seed(cfg.seed, 0xd800 + static_cast<std::uint64_t>(fold_index)));
    Rng shuffle_rng(mix_seed(cfg.seed, 0x5bf1 + static_cast<std::uint64_t>(fold_index)));

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (int step = 0; step < cfg.steps_per_epoch; ++step) {
            std::vector<PairSample> batch = sampler.next_batch(sample_rng);
            if (cfg.shuffle_labels) {
                // Decouple features from labels: permute the label columns
                // across the batch.
                std::vector<std::size_t> perm(batch.size());
                for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
                shuffle_rng.shuffle(perm);
                std::vector<std::pair<int, int>> labels(batch.size());
                for (std::size_t i = 0; i < batch.size(); ++i) {
                    labels[i] = {batch[i].binary_label, batch[i].multi_label};
                }
                for (std::size_t i = 0; i < batch.size(); ++i) {
                    batch[i].binary_label = labels[perm[i]].first;
                    batch[i].multi_label = labels[perm[i]].second;
                }
            }

            HeadGrads acc = HeadParams::zeros_like(params);
            const double inv_batch = 1.0 / static_cast<double>(batch.size());
            for (const PairSample& sample : batch) {
                const FusedVector fused =
                    fuse_images(cfg.fusion, corpus, sample.img_a, sample.img_b);
                ForwardCache cache;
                const std::vector<double> logits =
                    forward(params, head_cfg, fused.values, true, &dropout_rng, &cache);

                std::vector<double> dlogits;
                if (cfg.loss == LossKind::SoftmaxCe) {
                    SoftmaxCeLoss r = softmax_ce(logits, sample.multi_label);
                    dlogits = std::move(r.dlogits);
                } else {
                    const double p = stable_sigmoid(logits[0]);
                    const ScalarLoss sl = cfg.loss == LossKind::Bce
                                              ? bce(p, sample.binary_label)
                                              : focal(p, sample.binary_label, cfg.focal);
                    dlogits = {sl.dp * p * (1.0 - p)};
                }
                acc.add_scaled(backward(cache, params, head_cfg, dlogits), inv_batch);
            }
            opt.step(params, acc);
        }
    }

    FoldResult result;
    result.fold = fold_index;
    result.model = HeadModel{head_cfg, std::move(params)};
    result.threshold = cfg.threshold;

    const std::vector<PairSample> val_pairs = balanced_validation_pairs(
        corpus, val_families, mix_seed(cfg.seed, 0xba10 + static_cast<std::uint64_t>(fold_index)));
    const EvalResult ev = evaluate_verification({result.model}, cfg.fusion, corpus,
                                                val_pairs, cfg.threshold);
    result.val_accuracy = ev.accuracy;
    result.val_pairs = ev.n;
    return result;
}

CvResult cross_validate(const FamilyCorpus& corpus, const ExperimentConfig& cfg) {
    cfg.validate(corpus);
    CvResult out;
    out.fold_families = family_folds(corpus, cfg.folds, mix_seed(cfg.seed, 0xf01d));

    double sum = 0.0;
    for (int f = 0; f < cfg.folds; ++f) {
        std::vector<std::string> train;
        for (int g = 0; g < cfg.folds; ++g) {
            if (g == f) continue;
            train.insert(train.end(), out.fold_families[static_cast<std::size_t>(g)].begin(),
                         out.fold_families[static_cast<std::size_t>(g)].end());
        }
        FoldResult r = train_fold(corpus, cfg, train,
                                  out.fold_families[static_cast<std::size_t>(f)], f);
        sum += r.val_accuracy;
        out.folds.push_back(std::move(r));
    }
    out.mean_accuracy = sum / static_cast<double>(cfg.folds);
    return out;
}

// ---------------------------------------------------------------------------
// Scoring
// ---------------------------------------------------------------------------

double predict_pair(const std::vector<HeadModel>& models, const FusionConfig& fusion,
                    const FamilyCorpus& corpus, const std::string& img_a,
                    const std::string& img_b) {
    if (models.empty()) throw ValidationError("predict_pair: no models");
    double sum = 0.0;
    for (const HeadModel& model : models) {
        sum += model_pair_probability(model, fusion, corpus, img_a, img_b);
    }
    return sum / static_cast<double>(models.size());
}

std::vector<double> predict_multi(const std::vector<HeadModel>& models,
                                  const FusionConfig& fusion, const FamilyCorpus& corpus,
                                  const std::string& img_a, const std::string& img_b) {
    if (models.empty()) throw ValidationError("predict_multi: no models");
    std::vector<double> mean;
    for (const HeadModel& model : models) {
        if (model.config.output != HeadOutput::Softmax) {
            throw ValidationError("predict_multi: every model must be a softmax head");
        }
        const FusedVector fused = fuse_images(fusion, corpus, img_a, img_b);
        const std::vector<double> probs =
            predict_prob(model.params, model.config, fused.values);
        if (mean.empty()) mean.assign(probs.size(), 0.0);
        if (mean.size() != probs.size()) {
            throw ValidationError("DimMismatch: softmax heads of different class counts");
        }
        for (std::size_t i = 0; i < probs.size(); ++i) mean[i] += probs[i];
    }
    for (double& v : mean) v /= static_cast<double>(models.size());
    return mean;
}

EvalResult evaluate_verification(const std::vector<HeadModel>& models,
                                 const FusionConfig& fusion, const FamilyCorpus& corpus,
                                 const std::vector<PairSample>& pairs, double threshold) {
    EvalResult out;
    out.n = pairs.size();
    if (pairs.empty()) return out;

    const bool all_softmax =
        std::all_of(models.begin(), models.end(), [](const HeadModel& m) {
            return m.config.output == HeadOutput::Softmax;
        });

    std::vector<char> correct(pairs.size(), 0);
    std::vector<int> class_pred(pairs.size(), -1);
    parallel_for(pairs.size(), [&](std::size_t i) {
        const PairSample& s = pairs[i];
        const double p = predict_pair(models, fusion, corpus, s.img_a, s.img_b);
        const int decision = p >= threshold ? 1 : 0;
        correct[i] = decision == s.binary_label ? 1 : 0;
        if (all_softmax) {
            const std::vector<double> dist =
                predict_multi(models, fusion, corpus, s.img_a, s.img_b);
            class_pred[i] = static_cast<int>(
                std::max_element(dist.begin(), dist.end()) - dist.begin());
        }
    });

    std::size_t hits = 0;
    for (char c : correct) hits += static_cast<std::size_t>(c);
    out.accuracy = static_cast<double>(hits) / static_cast<double>(pairs.size());

    if (all_softmax) {
        out.per_class_accuracy.assign(kMultiClassCount, 0.0);
        out.per_class_n.assign(kMultiClassCount, 0);
        std::vector<std::size_t> class_hits(kMultiClassCount, 0);
        for (std::size_t i = 0; i < pairs.size(); ++i) {
            const int y = pairs[i].multi_label;
            ++out.per_class_n[static_cast<std::size_t>(y)];
            if (class_pred[i] == y) ++class_hits[static_cast<std::size_t>(y)];
        }
        for (int c = 0; c < kMultiClassCount; ++c) {
            if (out.per_class_n[static_cast<std::size_t>(c)] > 0) {
                out.per_class_accuracy[static_cast<std::size_t>(c)] =
                    static_cast<double>(class_hits[static_cast<std::size_t>(c)]) /
                    static_cast<double>(out.per_class_n[static_cast<std::size_t>(c)]);
            }
        }
    }
    return out;
}

TriScoreResult tri_score(const std::vector<HeadModel>& models, const FusionConfig& fusion,
                         const FamilyCorpus& corpus, const TriSample& tri,
                         TriMethod method, double threshold) {
    TriScoreResult out;
    out.p_fc = predict_pair(models, fusion, corpus, tri.img_f, tri.img_c);
    out.p_mc = predict_pair(models, fusion, corpus, tri.img_m, tri.img_c);
    if (method == TriMethod::SumFCMC) {
        out.score = out.p_fc + out.p_mc;
        out.decision = out.score >= 2.0 * threshold;
    } else {
        out.decision = out.p_fc >= threshold && out.p_mc >= threshold;
        out.score = out.decision ? 1.0 : 0.0;
    }
    return out;
}

RetrievalResult retrieve(const std::vector<HeadModel>& models, const FusionConfig& fusion,
                         const FamilyCorpus& corpus, const std::string& probe_id,
                         const std::vector<std::string>& probe_images,
                         const Gallery& gallery, ColumnAgg agg) {
    if (gallery.empty()) throw ValidationError("EmptyGallery: retrieval needs a gallery");
    if (probe_images.empty()) {
        throw ValidationError("retrieve: probe " + probe_id + " has no images");
    }

    RetrievalResult out;
    out.matrix.probe_id = probe_id;
    out.matrix.rows = probe_images;
    for (const auto& [member, images] : gallery) {
        if (images.empty()) {
            throw ValidationError("EmptyGallery: member " + member + " has no images");
        }
        out.matrix.cols.push_back(member);
    }

    const std::size_t n_rows = out.matrix.rows.size();
    const std::size_t n_cols = out.matrix.cols.size();
    out.matrix.cells.assign(n_rows * n_cols, 0.0);

    std::vector<const std::vector<std::string>*> col_images;
    col_images.reserve(n_cols);
    for (const std::string& member : out.matrix.cols) {
        col_images.push_back(&gallery.at(member));
    }

    parallel_for(n_rows * n_cols, [&](std::size_t idx) {
        const std::size_t r = idx / n_cols;
        const std::size_t c = idx % n_cols;
        const std::vector<std::string>& images = *col_images[c];
        double sum = 0.0;
        for (const std::string& img : images) {
            sum += predict_pair(models, fusion, corpus, out.matrix.rows[r], img);
        }
        out.matrix.cells[idx] = sum / static_cast<double>(images.size());
    });

    out.matrix.final_row.assign(n_cols, 0.0);
    for (std::size_t c = 0; c < n_cols; ++c) {
        if (agg == ColumnAgg::Mean) {
            double sum = 0.0;
            for (std::size_t r = 0; r < n_rows; ++r) sum += out.matrix.at(r, c);
            out.matrix.final_row[c] = sum / static_cast<double>(n_rows);
        } else {
            double best = out.matrix.at(0, c);
            for (std::size_t r = 1; r < n_rows; ++r) {
                best = std::max(best, out.matrix.at(r, c));
            }
            out.matrix.final_row[c] = best;
        }
    }

    std::vector<std::size_t> order(n_cols);
    for (std::size_t i = 0; i < n_cols; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (out.matrix.final_row[a] != out.matrix.final_row[b]) {
            return out.matrix.final_row[a] > out.matrix.final_row[b];
        }
        return out.matrix.cols[a] < out.matrix.cols[b];
    });
    for (std::size_t i = 0; i < n_cols; ++i) {
        out.ranking.push_back(RankedEntry{out.matrix.cols[order[i]],
                                          out.matrix.final_row[order[i]],
                                          static_cast<int>(i) + 1});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Prediction files
// ---------------------------------------------------------------------------

void write_pair_predictions(const std::string& path,
                            const std::vector<PairPrediction>& preds) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write predictions " + path);
    out << "img_a,img_b,prob\n";
    char buf[32];
    for (const PairPrediction& p : preds) {
        std::snprintf(buf, sizeof(buf), "%.9g", p.prob);
        out << p.img_a << ',' << p.img_b << ',' << buf << '\n';
    }
}

std::vector<PairPrediction> read_pair_predictions(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read predictions " + path);
    std::string line;
    if (!std::getline(in, line)) {
        throw ValidationError("MalformedRow: empty predictions file " + path);
    }
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "img_a,img_b,prob") {
        throw ValidationError("MalformedRow: bad header in " + path);
    }
    std::vector<PairPrediction> out;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const std::size_t c1 = line.find(',');
        const std::size_t c2 = c1 == std::string::npos ? std::string::npos
                                                       : line.find(',', c1 + 1);
        if (c2 == std::string::npos) {
            throw ValidationError("MalformedRow: " + path + ":" + std::to_string(lineno));
        }
        PairPrediction p;
        p.img_a = line.substr(0, c1);
        p.img_b = line.substr(c1 + 1, c2 - c1 - 1);
        const std::string prob = line.substr(c2 + 1);
        auto [ptr, ec] = std::from_chars(prob.data(), prob.data() + prob.size(), p.prob);
        if (ec != std::errc{} || ptr != prob.data() + prob.size()) {
            throw ValidationError("MalformedRow: bad probability in " + path + ":" +
                                  std::to_string(lineno));
        }
        out.push_back(std::move(p));
    }
    return out;
}

std::vector<PairPrediction> ensemble_predictions(
    const std::vector<std::vector<PairPrediction>>& files) {
    if (files.empty()) throw ValidationError("ensemble: no prediction files");
    const std::size_t n = files.front().size();
    for (const auto& f : files) {
        if (f.size() != n) {
            throw ValidationError("ensemble: prediction files differ in length");
        }
    }
    std::vector<PairPrediction> out = files.front();
    for (std::size_t i = 0; i < n; ++i) {
        double sum = 0.0;
        for (const auto& f : files) {
            if (f[i].img_a != out[i].img_a || f[i].img_b != out[i].img_b) {
                throw ValidationError("ensemble: pair mismatch at row " +
                                      std::to_string(i + 1));
            }
            sum += f[i].prob;
        }
        out[i].prob = sum / static_cast<double>(files.size());
    }
    return out;
}

// ---------------------------------------------------------------------------
// Parallel scoring
// ---------------------------------------------------------------------------

unsigned scoring_threads() {
    if (const char* env = std::getenv("KINVERIFY_THREADS")) {
        int v = 0;
        auto [p, ec] = std::from_chars(env, env + std::strlen(env), v);
        if (ec == std::errc{} && p == env + std::strlen(env) && v >= 1) {
            return static_cast<unsigned>(v);
        }
    }
    const unsigned hc = std::thread::hardware_concurrency();
    return hc > 0 ? hc : 1;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
    if (n == 0) return;
    const unsigned threads = std::min<unsigned>(scoring_threads(),
                                                static_cast<unsigned>(n));
    if (threads <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }

    std::mutex err_mutex;
    std::exception_ptr first_error;
    std::vector<std::thread> workers;
    const std::size_t chunk = (n + threads - 1) / threads;
    for (unsigned t = 0; t < threads; ++t) {
        const std::size_t lo = static_cast<std::size_t>(t) * chunk;
        const std::size_t hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        workers.emplace_back([&, lo, hi] {
            try {
                for (std::size_t i = lo; i < hi; ++i) fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(err_mutex);
                if (!first_error) first_error = std::current_exception();
            }
        });
    }
    for (auto& w : workers) w.join();
    if (first_error) std::rethrow_exception(first_error);
}

} // namespace kin
