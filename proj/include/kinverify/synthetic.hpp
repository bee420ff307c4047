#ifndef KINVERIFY_SYNTHETIC_HPP
#define KINVERIFY_SYNTHETIC_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "kinverify/corpus.hpp"

namespace kin {

/// Spec for a generated stand-in corpus. Families get a latent genome;
/// members inherit kin_signal of their parents' blend plus noise, so the
/// embedding geometry carries a controllable kinship signal.
struct SyntheticSpec {
    int n_families = 60;
    int members_min = 2;
    int members_max = 6;
    int images_min = 1;
    int images_max = 3;
    std::vector<ChannelInfo> channels = {{"facenet", 64}, {"vggface", 128}};
    std::size_t latent_dim = 32;
    double kin_signal = 0.9;  // fraction of a member's latent inherited
    double noise_sigma = 0.1; // per-image perturbation
    std::uint64_t seed = 0;
    std::string out_dir;

    void validate() const;
};

struct GenSummary {
    int families = 0;
    int members = 0;
    int images = 0;
    std::string root_dir;
    std::string manifest_path;
};

/// Write family directories with mid.csv files, per-channel embedding TSVs,
/// and a manifest. No image files are written; the corpus loads with
/// LoadOptions{.manifest_only = true}.
///
/// Generated trees follow the dataset conventions: parents are spouse-linked
/// (5/5), parent-child cells are 4/1, siblings 2/2, grandparents 6/3, and
/// great-grandparents 8/7 when the family is large enough. Married-in
/// members (mothers, grandmothers) carry independent latents so spouse pairs
/// stay hard negatives.
GenSummary gen_synthetic(const SyntheticSpec& spec);

} // namespace kin

#endif // KINVERIFY_SYNTHETIC_HPP
