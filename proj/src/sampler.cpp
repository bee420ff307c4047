#include "kinverify/sampler.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>

namespace kin {

namespace {

PairSample make_sample(const std::string& img_x, const std::string& img_y,
                       const FamilyCorpus& corpus) {
    // Canonical order: lexicographically smaller image id first. The rid is
    // read from the cell directed (owner of first, owner of second).
    const std::string& a = img_x <= img_y ? img_x : img_y;
    const std::string& b = img_x <= img_y ? img_y : img_x;
    const auto ka = corpus.owner_of(a);
    const auto kb = corpus.owner_of(b);
    if (!ka || !kb) {
        throw ValidationError("UnknownMember: image without owner in pair (" + a +
                              ", " + b + ")");
    }
    const PairLabelResult lab = pair_label(corpus, *ka, *kb);
    PairSample s;
    s.img_a = a;
    s.img_b = b;
    s.rid = lab.rid;
    s.binary_label = lab.label == PairLabel::Positive ? 1 : 0;
    s.multi_label = multi_class_of(lab.rid);
    return s;
}

} // namespace

std::vector<PairSample> enumerate_pairs(const FamilyCorpus& corpus,
                                        const std::vector<std::string>& families) {
    std::vector<std::string> sorted = families;
    std::sort(sorted.begin(), sorted.end());

    std::vector<PairSample> out;
    for (const std::string& fam : sorted) {
        const auto members = corpus.family_members(fam);
        for (std::size_t i = 0; i < members.size(); ++i) {
            for (std::size_t j = i + 1; j < members.size(); ++j) {
                for (const std::string& img_a : members[i]->image_ids) {
                    for (const std::string& img_b : members[j]->image_ids) {
                        out.push_back(make_sample(img_a, img_b, corpus));
                    }
                }
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// PairSampler
// ---------------------------------------------------------------------------

PairSampler::PairSampler(const FamilyCorpus& corpus, std::vector<std::string> families,
                         SamplerConfig config)
    : corpus_(corpus), families_(std::move(families)), config_(config) {
    if (config_.pos_per_batch < 1 || config_.neg_per_batch < 1) {
        throw ValidationError("SamplerConfig: batch counts must be >= 1");
    }
    std::sort(families_.begin(), families_.end());

    for (const PairSample& s : enumerate_pairs(corpus_, families_)) {
        if (s.binary_label == 1) {
            positives_.push_back(s);
        } else if (s.rid.code == kRidNa || s.rid.code == kRidSpouse) {
            // TBD (9) pairs carry uncertain ground truth and never enter a pool.
            negatives_.push_back(s);
        }
    }

    positive_cumweight_.reserve(positives_.size());
    double acc = 0.0;
    for (const PairSample& s : positives_) {
        const double w =
            config_.db_oversample && is_distant_blood(s.rid.code) ? 2.0 : 1.0;
        acc += w;
        positive_cumweight_.push_back(acc);
    }

    for (const std::string& fam : families_) {
        std::vector<std::string> images;
        for (const Member* m : corpus_.family_members(fam)) {
            images.insert(images.end(), m->image_ids.begin(), m->image_ids.end());
        }
        family_images_.push_back(std::move(images));
    }
}

PairSample PairSampler::draw_negative(Rng& rng) const {
    // 50/50 between cross-family pairs and the same-family {NA, Spouse} pool;
    // either source alone when the other is unavailable.
    std::size_t nonempty_families = 0;
    for (const auto& imgs : family_images_) nonempty_families += imgs.empty() ? 0 : 1;
    const bool cross_possible = nonempty_families >= 2;
    const bool same_possible = !negatives_.empty();
    if (!cross_possible && !same_possible) {
        throw ValidationError("ExhaustedPool: no negative pairs available");
    }

    bool use_cross = cross_possible;
    if (cross_possible && same_possible) use_cross = rng.uniform() < 0.5;

    if (!use_cross) {
        return negatives_[rng.uniform_index(negatives_.size())];
    }

    while (true) {
        const std::size_t fa = rng.uniform_index(family_images_.size());
        const std::size_t fb = rng.uniform_index(family_images_.size());
        if (fa == fb) continue;
        if (family_images_[fa].empty() || family_images_[fb].empty()) continue;
        const std::string& img_a =
            family_images_[fa][rng.uniform_index(family_images_[fa].size())];
        const std::string& img_b =
            family_images_[fb][rng.uniform_index(family_images_[fb].size())];
        return make_sample(img_a, img_b, corpus_);
    }
}

std::vector<PairSample> PairSampler::next_batch(Rng& rng) const {
    if (positives_.empty()) {
        throw ValidationError("ExhaustedPool: no positive pairs available");
    }
    std::vector<PairSample> batch;
    batch.reserve(static_cast<std::size_t>(config_.pos_per_batch + config_.neg_per_batch));

    const double total_weight = positive_cumweight_.back();
    for (int i = 0; i < config_.pos_per_batch; ++i) {
        const double u = rng.uniform() * total_weight;
        const auto it = std::upper_bound(positive_cumweight_.begin(),
                                         positive_cumweight_.end(), u);
        const std::size_t idx = std::min<std::size_t>(
            static_cast<std::size_t>(it - positive_cumweight_.begin()),
            positives_.size() - 1);
        batch.push_back(positives_[idx]);
    }
    for (int i = 0; i < config_.neg_per_batch; ++i) {
        batch.push_back(draw_negative(rng));
    }
    return batch;
}

// ---------------------------------------------------------------------------
// enumerate_triples
// ---------------------------------------------------------------------------

namespace {

bool is_parent_of(const RelationshipMatrix& matrix, int parent_mid, int child_mid) {
    return matrix.at(parent_mid, child_mid).code == kRidParent ||
           matrix.at(child_mid, parent_mid).code == kRidChild;
}

bool is_spouse_pair(const RelationshipMatrix& matrix, int a, int b) {
    return matrix.at(a, b).code == kRidSpouse || matrix.at(b, a).code == kRidSpouse;
}

} // namespace

std::vector<TriSample> enumerate_triples(const FamilyCorpus& corpus,
                                         const std::vector<std::string>& families,
                                         const TripleConfig& config) {
    std::vector<std::string> sorted = families;
    std::sort(sorted.begin(), sorted.end());

    std::vector<TriSample> positives;
    for (const std::string& fam : sorted) {
        const auto members = corpus.family_members(fam);
        const RelationshipMatrix& matrix = corpus.matrix(fam);

        for (const Member* child : members) {
            std::vector<const Member*> fathers;
            std::vector<const Member*> mothers;
            for (const Member* p : members) {
                if (p->mid == child->mid) continue;
                if (!is_parent_of(matrix, p->mid, child->mid)) continue;
                if (p->gender == Gender::Male) fathers.push_back(p);
                if (p->gender == Gender::Female) mothers.push_back(p);
            }
            for (const Member* f : fathers) {
                for (const Member* m : mothers) {
                    if (!is_spouse_pair(matrix, f->mid, m->mid)) continue;
                    for (const auto& fi : f->image_ids) {
                        for (const auto& mi : m->image_ids) {
                            for (const auto& ci : child->image_ids) {
                                positives.push_back(TriSample{fi, mi, ci, 1});
                            }
                        }
                    }
                }
            }
        }
    }

    // Negatives: keep the parent images, swap in a child image from another
    // family.
    std::vector<std::pair<std::string, std::string>> foreign_images; // (family, image)
    for (const std::string& fam : sorted) {
        for (const Member* m : corpus.family_members(fam)) {
            for (const auto& img : m->image_ids) foreign_images.emplace_back(fam, img);
        }
    }

    std::vector<TriSample> out = positives;
    if (!positives.empty() && config.negatives_per_positive > 0) {
        Rng rng(mix_seed(config.seed, 0x731));
        for (const TriSample& pos : positives) {
            const auto parent_family = corpus.owner_of(pos.img_f)->family_id;
            for (int k = 0; k < config.negatives_per_positive; ++k) {
                // Rejection-sample an image outside the parents' family.
                while (true) {
                    const auto& [fam, img] =
                        foreign_images[rng.uniform_index(foreign_images.size())];
                    if (fam == parent_family) continue;
                    out.push_back(TriSample{pos.img_f, pos.img_m, img, 0});
                    break;
                }
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// TripletSampler
// ---------------------------------------------------------------------------

TripletSampler::TripletSampler(const FamilyCorpus& corpus,
                               const std::vector<std::string>& families,
                               TripletGranularity granularity) {
    std::vector<std::string> sorted = families;
    std::sort(sorted.begin(), sorted.end());

    for (const std::string& fam : sorted) {
        const auto members = corpus.family_members(fam);
        if (granularity == TripletGranularity::Person) {
            for (const Member* m : members) {
                if (!m->image_ids.empty()) classes_.push_back(m->image_ids);
            }
            continue;
        }

        // Blood groups: union-find over blood-related members of the family.
        const RelationshipMatrix& matrix = corpus.matrix(fam);
        std::vector<int> parent(members.size());
        for (std::size_t i = 0; i < members.size(); ++i) parent[i] = static_cast<int>(i);
        std::function<int(int)> find = [&](int x) {
            while (parent[static_cast<std::size_t>(x)] != x)
                x = parent[static_cast<std::size_t>(x)] =
                    parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(x)])];
            return x;
        };
        for (std::size_t i = 0; i < members.size(); ++i) {
            for (std::size_t j = i + 1; j < members.size(); ++j) {
                if (is_blood(matrix.at(members[i]->mid, members[j]->mid)) ||
                    is_blood(matrix.at(members[j]->mid, members[i]->mid))) {
                    parent[static_cast<std::size_t>(find(static_cast<int>(i)))] =
                        find(static_cast<int>(j));
                }
            }
        }
        std::map<int, std::vector<std::string>> groups;
        for (std::size_t i = 0; i < members.size(); ++i) {
            auto& imgs = groups[find(static_cast<int>(i))];
            imgs.insert(imgs.end(), members[i]->image_ids.begin(),
                        members[i]->image_ids.end());
        }
        for (auto& [root, imgs] : groups) {
            if (!imgs.empty()) classes_.push_back(std::move(imgs));
        }
    }

    for (std::size_t c = 0; c < classes_.size(); ++c) {
        if (classes_[c].size() >= 2) rich_classes_.push_back(c);
    }
}

ImageTriplet TripletSampler::next(Rng& rng) const {
    if (!viable()) {
        throw ValidationError("ExhaustedPool: triplet sampling needs a class with >=2 "
                              "images and a second class");
    }
    const std::size_t c = rich_classes_[rng.uniform_index(rich_classes_.size())];
    const auto& imgs = classes_[c];
    const std::size_t ia = rng.uniform_index(imgs.size());
    std::size_t ip = rng.uniform_index(imgs.size() - 1);
    if (ip >= ia) ++ip;

    std::size_t cn;
    do {
        cn = rng.uniform_index(classes_.size());
    } while (cn == c);
    const auto& neg_imgs = classes_[cn];
    const std::string& neg = neg_imgs[rng.uniform_index(neg_imgs.size())];
    return ImageTriplet{imgs[ia], imgs[ip], neg};
}

// ---------------------------------------------------------------------------
// Pair list files
// ---------------------------------------------------------------------------

void write_pair_list(const std::string& path, const std::vector<PairSample>& pairs) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write pair list " + path);
    for (const PairSample& s : pairs) {
        out << s.img_a << '\t' << s.img_b << '\t' << s.binary_label << '\t'
            << s.multi_label << '\t' << s.rid.code << '\n';
    }
}

std::vector<PairSample> read_pair_list(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read pair list " + path);
    std::vector<PairSample> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::size_t start = 0;
        while (true) {
            std::size_t pos = line.find('\t', start);
            if (pos == std::string::npos) {
                fields.push_back(line.substr(start));
                break;
            }
            fields.push_back(line.substr(start, pos - start));
            start = pos + 1;
        }
        if (fields.size() != 5) {
            throw ValidationError("MalformedRow: " + path + ":" + std::to_string(lineno) +
                                  " expects 5 tab fields");
        }
        auto to_int = [&](const std::string& s) {
            int v = 0;
            auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
            if (ec != std::errc{} || p != s.data() + s.size()) {
                throw ValidationError("MalformedRow: bad integer '" + s + "' in " + path +
                                      ":" + std::to_string(lineno));
            }
            return v;
        };
        PairSample s;
        s.img_a = fields[0];
        s.img_b = fields[1];
        s.binary_label = to_int(fields[2]);
        s.multi_label = to_int(fields[3]);
        s.rid = Rid(to_int(fields[4]));
        out.push_back(std::move(s));
    }
    return out;
}

} // namespace kin
