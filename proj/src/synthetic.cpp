#include "kinverify/synthetic.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "kinverify/rng.hpp"

namespace fs = std::filesystem;

namespace kin {

void SyntheticSpec::validate() const {
    if (n_families < 1) throw ValidationError("SyntheticSpec: n_families must be >= 1");
    if (members_min < 1 || members_max < members_min) {
        throw ValidationError("SyntheticSpec: bad members range");
    }
    if (images_min < 1 || images_max < images_min) {
        throw ValidationError("SyntheticSpec: bad images range");
    }
    if (channels.empty()) throw ValidationError("SyntheticSpec: no channels");
    for (const auto& ch : channels) {
        if (ch.dim < 1) throw ValidationError("SyntheticSpec: channel dim must be >= 1");
    }
    if (latent_dim < 2) throw ValidationError("SyntheticSpec: latent_dim must be >= 2");
    if (kin_signal < 0.0 || kin_signal > 1.0) {
        throw ValidationError("SyntheticSpec: kin_signal must lie in [0,1]");
    }
    if (noise_sigma < 0.0) throw ValidationError("SyntheticSpec: noise_sigma must be >= 0");
    if (out_dir.empty()) throw ValidationError("SyntheticSpec: out_dir required");
}

namespace {

enum class Role { Founder, Father, Mother, Child, Grandfather, Grandmother, GreatGrandfather };

struct TreeMember {
    Role role;
    Gender gender;
};

/// Role layout for a family of m members. Children always exist when m >= 2;
/// grandparents (father's side) join at m >= 5, a great-grandfather at m >= 7.
std::vector<TreeMember> build_tree(int m) {
    std::vector<TreeMember> tree;
    if (m == 1) {
        tree.push_back({Role::Founder, Gender::Female});
        return tree;
    }
    if (m == 2) {
        tree.push_back({Role::Mother, Gender::Female});
        tree.push_back({Role::Child, Gender::Male});
        return tree;
    }
    const int reserved_gp = m >= 5 ? 2 : 0;
    const int reserved_ggf = m >= 7 ? 1 : 0;
    const int n_children = m - 2 - reserved_gp - reserved_ggf;

    tree.push_back({Role::Father, Gender::Male});
    tree.push_back({Role::Mother, Gender::Female});
    for (int c = 0; c < n_children; ++c) {
        tree.push_back({Role::Child, c % 2 == 0 ? Gender::Female : Gender::Male});
    }
    if (reserved_ggf) tree.push_back({Role::GreatGrandfather, Gender::Male});
    if (reserved_gp) {
        tree.push_back({Role::Grandfather, Gender::Male});
        tree.push_back({Role::Grandmother, Gender::Female});
    }
    return tree;
}

int find_role(const std::vector<TreeMember>& tree, Role role) {
    for (std::size_t i = 0; i < tree.size(); ++i) {
        if (tree[i].role == role) return static_cast<int>(i) + 1; // 1-based mid
    }
    return 0;
}

RelationshipMatrix build_matrix(const std::string& family_id,
                                const std::vector<TreeMember>& tree) {
    const int n = static_cast<int>(tree.size());
    RelationshipMatrix matrix(family_id, n);

    const int father = find_role(tree, Role::Father);
    const int mother = find_role(tree, Role::Mother);
    const int gf = find_role(tree, Role::Grandfather);
    const int gm = find_role(tree, Role::Grandmother);
    const int ggf = find_role(tree, Role::GreatGrandfather);

    auto link = [&](int a, int b, int code_ab, int code_ba) {
        if (a == 0 || b == 0) return;
        matrix.set(a, b, Rid(code_ab));
        matrix.set(b, a, Rid(code_ba));
    };

    link(father, mother, kRidSpouse, kRidSpouse);
    link(gf, gm, kRidSpouse, kRidSpouse);
    link(gf, father, kRidParent, kRidChild);
    link(gm, father, kRidParent, kRidChild);
    link(ggf, gf, kRidParent, kRidChild);
    link(ggf, father, kRidGrandparent, kRidGrandchild);

    std::vector<int> children;
    for (std::size_t i = 0; i < tree.size(); ++i) {
        if (tree[i].role == Role::Child) children.push_back(static_cast<int>(i) + 1);
    }
    for (std::size_t a = 0; a < children.size(); ++a) {
        link(father, children[a], kRidParent, kRidChild);
        link(mother, children[a], kRidParent, kRidChild);
        link(gf, children[a], kRidGrandparent, kRidGrandchild);
        link(gm, children[a], kRidGrandparent, kRidGrandchild);
        link(ggf, children[a], kRidGreatGrandparent, kRidGreatGrandchild);
        for (std::size_t b = a + 1; b < children.size(); ++b) {
            link(children[a], children[b], kRidSibling, kRidSibling);
        }
    }
    return matrix;
}

std::vector<double> random_unit(Rng& rng, std::size_t dim) {
    std::vector<double> v(dim);
    double norm2 = 0.0;
    for (double& x : v) {
        x = rng.normal();
        norm2 += x * x;
    }
    const double inv = 1.0 / std::sqrt(std::max(norm2, 1e-300));
    for (double& x : v) x *= inv;
    return v;
}

std::vector<double> normalize(std::vector<double> v) {
    double norm2 = 0.0;
    for (double x : v) norm2 += x * x;
    const double inv = 1.0 / std::sqrt(std::max(norm2, 1e-300));
    for (double& x : v) x *= inv;
    return v;
}

/// latent = normalize(ks * blend + sqrt(1-ks^2) * eps) with unit blend/eps.
std::vector<double> inherit(const std::vector<double>& blend, double kin_signal,
                            Rng& rng) {
    const std::vector<double> eps = random_unit(rng, blend.size());
    const double noise_scale = std::sqrt(std::max(0.0, 1.0 - kin_signal * kin_signal));
    std::vector<double> latent(blend.size());
    for (std::size_t i = 0; i < blend.size(); ++i) {
        latent[i] = kin_signal * blend[i] + noise_scale * eps[i];
    }
    return normalize(std::move(latent));
}

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

} // namespace

GenSummary gen_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    const fs::path root(spec.out_dir);
    std::error_code ec;
    fs::create_directories(root, ec);
    if (ec) throw IoError("cannot create " + root.string() + ": " + ec.message());
    fs::create_directories(root / "embeddings", ec);
    if (ec) throw IoError("cannot create embeddings dir: " + ec.message());

    // Channel projections from the latent space, fixed per corpus.
    struct Proj {
        std::size_t rows = 0, cols = 0;
        std::vector<double> a;
    };
    std::vector<Proj> proj;
    for (std::size_t c = 0; c < spec.channels.size(); ++c) {
        Rng prng(mix_seed(spec.seed, 0xc4a0 + c));
        Proj p{spec.channels[c].dim, spec.latent_dim, {}};
        p.a.resize(p.rows * p.cols);
        const double scale = 1.0 / std::sqrt(static_cast<double>(spec.latent_dim));
        for (double& x : p.a) x = prng.normal() * scale;
        proj.push_back(std::move(p));
    }

    std::vector<std::ofstream> tsv;
    std::vector<std::string> tsv_rel;
    for (const auto& ch : spec.channels) {
        const std::string rel = "embeddings/" + ch.name + ".tsv";
        tsv_rel.push_back(rel);
        tsv.emplace_back(root / rel, std::ios::binary);
        if (!tsv.back()) throw IoError("cannot write " + (root / rel).string());
    }

    GenSummary summary;
    summary.root_dir = root.string();

    for (int f = 0; f < spec.n_families; ++f) {
        Rng rng(mix_seed(spec.seed, 0xfa0000 + static_cast<std::uint64_t>(f)));

        char fam_buf[16];
        std::snprintf(fam_buf, sizeof(fam_buf), "F%04d", f + 1);
        const std::string family_id = fam_buf;

        const int m = spec.members_min +
                      static_cast<int>(rng.uniform_index(static_cast<std::size_t>(
                          spec.members_max - spec.members_min + 1)));
        const std::vector<TreeMember> tree = build_tree(m);
        const RelationshipMatrix matrix = build_matrix(family_id, tree);

        // Latents. Ordering matters: ancestors first so blends exist.
        const std::vector<double> genome = random_unit(rng, spec.latent_dim);
        std::vector<std::vector<double>> latent(tree.size());

        const int father = find_role(tree, Role::Father);
        const int mother = find_role(tree, Role::Mother);
        const int gf = find_role(tree, Role::Grandfather);
        const int gm = find_role(tree, Role::Grandmother);
        const int ggf = find_role(tree, Role::GreatGrandfather);

        auto set_latent = [&](int mid, std::vector<double> v) {
            latent[static_cast<std::size_t>(mid - 1)] = std::move(v);
        };
        auto blend_of = [&](std::initializer_list<int> mids) {
            std::vector<double> sum(spec.latent_dim, 0.0);
            for (int mid : mids) {
                const auto& v = latent[static_cast<std::size_t>(mid - 1)];
                for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += v[i];
            }
            return normalize(std::move(sum));
        };

        // Lineage root inherits the family genome; married-in members are
        // independent draws.
        if (ggf) {
            set_latent(ggf, inherit(genome, spec.kin_signal, rng));
            if (gm) set_latent(gm, random_unit(rng, spec.latent_dim));
            set_latent(gf, inherit(blend_of({ggf}), spec.kin_signal, rng));
        } else if (gf) {
            set_latent(gf, inherit(genome, spec.kin_signal, rng));
            set_latent(gm, random_unit(rng, spec.latent_dim));
        }
        if (father) {
            if (gf && gm) {
                set_latent(father, inherit(blend_of({gf, gm}), spec.kin_signal, rng));
            } else {
                set_latent(father, inherit(genome, spec.kin_signal, rng));
            }
        }
        if (mother) {
            if (father) {
                set_latent(mother, random_unit(rng, spec.latent_dim));
            } else {
                set_latent(mother, inherit(genome, spec.kin_signal, rng)); // m == 2
            }
        }
        for (std::size_t i = 0; i < tree.size(); ++i) {
            const int mid = static_cast<int>(i) + 1;
            if (tree[i].role == Role::Child) {
                if (father && mother) {
                    set_latent(mid, inherit(blend_of({father, mother}), spec.kin_signal, rng));
                } else {
                    set_latent(mid, inherit(blend_of({mother}), spec.kin_signal, rng));
                }
            } else if (tree[i].role == Role::Founder) {
                set_latent(mid, inherit(genome, spec.kin_signal, rng));
            }
        }

        // mid.csv
        std::vector<Member> members;
        for (std::size_t i = 0; i < tree.size(); ++i) {
            Member mem;
            mem.family_id = family_id;
            mem.mid = static_cast<int>(i) + 1;
            mem.name = "Name" + std::to_string(mem.mid);
            mem.gender = tree[i].gender;
            members.push_back(std::move(mem));
        }
        fs::create_directories(root / family_id, ec);
        if (ec) throw IoError("cannot create family dir: " + ec.message());
        {
            std::ofstream mid_csv(root / family_id / "mid.csv", std::ios::binary);
            if (!mid_csv) throw IoError("cannot write mid.csv for " + family_id);
            mid_csv << serialize_mid_csv(matrix, members);
        }

        // Per-image embeddings.
        int photo = 0;
        for (std::size_t i = 0; i < tree.size(); ++i) {
            const int n_images =
                spec.images_min + static_cast<int>(rng.uniform_index(static_cast<std::size_t>(
                                      spec.images_max - spec.images_min + 1)));
            for (int img = 0; img < n_images; ++img) {
                char photo_buf[32];
                std::snprintf(photo_buf, sizeof(photo_buf), "P%04d_face0.jpg", photo++);
                const std::string image_id =
                    family_id + "/MID" + std::to_string(i + 1) + "/" + photo_buf;

                for (std::size_t c = 0; c < spec.channels.size(); ++c) {
                    const Proj& p = proj[c];
                    std::vector<double> y(p.rows, 0.0);
                    const auto& lat = latent[i];
                    for (std::size_t r = 0; r < p.rows; ++r) {
                        const double* row = p.a.data() + r * p.cols;
                        double acc = 0.0;
                        for (std::size_t k = 0; k < p.cols; ++k) acc += row[k] * lat[k];
                        y[r] = acc;
                    }
                    if (spec.noise_sigma > 0.0) {
                        const std::vector<double> noise = random_unit(rng, p.rows);
                        for (std::size_t r = 0; r < p.rows; ++r) {
                            y[r] += spec.noise_sigma * noise[r];
                        }
                    }
                    auto& out = tsv[c];
                    out << image_id << '\t' << spec.channels[c].name << '\t';
                    for (std::size_t r = 0; r < y.size(); ++r) {
                        if (r) out << ',';
                        out << format_double(y[r]);
                    }
                    out << '\n';
                }
                ++summary.images;
            }
            ++summary.members;
        }
        ++summary.families;
    }

    for (auto& out : tsv) {
        if (!out) throw IoError("failed writing embedding TSV");
        out.close();
    }

    const fs::path manifest = root / "manifest.txt";
    {
        std::ofstream mf(manifest, std::ios::binary);
        if (!mf) throw IoError("cannot write manifest " + manifest.string());
        for (const std::string& rel : tsv_rel) mf << rel << '\n';
    }
    summary.manifest_path = manifest.string();
    return summary;
}

} // namespace kin
