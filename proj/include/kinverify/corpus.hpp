#ifndef KINVERIFY_CORPUS_HPP
#define KINVERIFY_CORPUS_HPP

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "kinverify/error.hpp"

namespace kin {

// ---------------------------------------------------------------------------
// Relationship id taxonomy
// ---------------------------------------------------------------------------

/// Relationship id code between two family members. Valid codes are 0..9:
/// 1 Child, 2 Sibling, 3 Grandchild, 4 Parent, 5 Spouse, 6 Grandparent,
/// 7 Great Grandchild, 8 Great Grandparent, 9 TBD, 0 NA.
struct Rid {
    int code = 0;

    Rid() = default;
    explicit Rid(int c) : code(c) {
        if (c < 0 || c > 9) {
            throw ValidationError("InvalidRid: code " + std::to_string(c) +
                                  " outside 0..9");
        }
    }

    bool operator==(const Rid&) const = default;
};

constexpr int kRidNa = 0;
constexpr int kRidChild = 1;
constexpr int kRidSibling = 2;
constexpr int kRidGrandchild = 3;
constexpr int kRidParent = 4;
constexpr int kRidSpouse = 5;
constexpr int kRidGrandparent = 6;
constexpr int kRidGreatGrandchild = 7;
constexpr int kRidGreatGrandparent = 8;
constexpr int kRidTbd = 9;

/// True iff the code denotes a blood relation: {1,2,3,4,6,7,8}.
constexpr bool is_blood(int code) {
    switch (code) {
        case kRidChild:
        case kRidSibling:
        case kRidGrandchild:
        case kRidParent:
        case kRidGrandparent:
        case kRidGreatGrandchild:
        case kRidGreatGrandparent:
            return true;
        default:
            return false;
    }
}

inline bool is_blood(Rid rid) { return is_blood(rid.code); }

/// Human-readable label of a relationship code.
const char* rid_label(int code);

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

enum class Gender { Female, Male, Unknown };

Gender parse_gender(const std::string& text);
const char* gender_label(Gender g);

/// A person inside a family. Identified by (family_id, mid).
struct Member {
    std::string family_id;
    int mid = 0;
    std::string name;
    Gender gender = Gender::Unknown;
    std::vector<std::string> image_ids; // sorted, usable for sampling
};

/// n x n matrix of relationship codes, addressed by 1-based member ids.
/// Cell (i, j) holds the row member's relationship to the column member;
/// the matrix may be asymmetric (complementary codes such as Parent/Child).
class RelationshipMatrix {
public:
    RelationshipMatrix() = default;
    RelationshipMatrix(std::string family_id, int n)
        : family_id_(std::move(family_id)), n_(n), cells_(static_cast<std::size_t>(n) * n) {}

    const std::string& family_id() const { return family_id_; }
    int size() const { return n_; }

    Rid at(int row_mid, int col_mid) const {
        check_index(row_mid);
        check_index(col_mid);
        return cells_[static_cast<std::size_t>(row_mid - 1) * n_ + (col_mid - 1)];
    }

    void set(int row_mid, int col_mid, Rid rid) {
        check_index(row_mid);
        check_index(col_mid);
        cells_[static_cast<std::size_t>(row_mid - 1) * n_ + (col_mid - 1)] = rid;
    }

private:
    void check_index(int mid) const {
        if (mid < 1 || mid > n_) {
            throw ValidationError("UnknownMember: mid " + std::to_string(mid) +
                                  " outside 1.." + std::to_string(n_) +
                                  " in family " + family_id_);
        }
    }

    std::string family_id_;
    int n_ = 0;
    std::vector<Rid> cells_;
};

/// One image's feature vector under one named encoder channel.
struct EmbeddingRecord {
    std::string image_id;
    std::string channel;
    std::vector<double> vector;
};

struct ChannelInfo {
    std::string name;
    std::size_t dim = 0;
};

struct MemberKey {
    std::string family_id;
    int mid = 0;
    auto operator<=>(const MemberKey&) const = default;
};

/// Immutable after load; safe for concurrent read access.
class FamilyCorpus {
public:
    const std::map<MemberKey, Member>& members() const { return members_; }
    const std::map<std::string, RelationshipMatrix>& matrices() const { return matrices_; }
    const std::vector<ChannelInfo>& channels() const { return channels_; }

    /// Image ids of member images that lacked one or more channel embeddings
    /// and were excluded from sampling.
    const std::vector<std::string>& missing_images() const { return missing_; }

    bool has_member(const MemberKey& key) const { return members_.count(key) > 0; }
    const Member& member(const MemberKey& key) const;
    const RelationshipMatrix& matrix(const std::string& family_id) const;

    std::vector<std::string> family_ids() const;
    std::size_t family_count() const { return matrices_.size(); }

    bool has_embedding(const std::string& image_id, const std::string& channel) const;
    std::span<const double> embedding(const std::string& image_id,
                                      const std::string& channel) const;

    /// Members of one family in mid order.
    std::vector<const Member*> family_members(const std::string& family_id) const;

    /// Owner of an image id, if the image belongs to a loaded member.
    std::optional<MemberKey> owner_of(const std::string& image_id) const;

    // Mutation is confined to loading; see load_corpus / gen_synthetic.
    void add_member(Member m);
    void add_matrix(RelationshipMatrix m);
    void add_embedding(EmbeddingRecord rec);
    void set_channels(std::vector<ChannelInfo> channels) { channels_ = std::move(channels); }
    void add_missing(std::string image_id) { missing_.push_back(std::move(image_id)); }

    /// Drop member images that lack an embedding for any declared channel,
    /// recording them in missing_images(). Called at the end of loading.
    void prune_unembedded_images();

private:
    std::map<MemberKey, Member> members_;
    std::map<std::string, RelationshipMatrix> matrices_;
    std::map<std::pair<std::string, std::string>, std::vector<double>> embeddings_;
    std::map<std::string, MemberKey> image_owner_;
    std::vector<ChannelInfo> channels_;
    std::vector<std::string> missing_;
};

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

struct ParsedFamily {
    RelationshipMatrix matrix;
    std::vector<Member> members; // in mid order, image_ids left empty
    std::vector<std::string> warnings;
};

/// Parse one mid.csv. Header must read "MID,1,..,n,Name,Gender"; unknown
/// trailing columns are ignored with a warning. Unparseable genders map to
/// Gender::Unknown.
ParsedFamily parse_mid_csv(const std::string& text, const std::string& family_id);

/// Inverse of parse_mid_csv for well-formed families (round-trip identity).
std::string serialize_mid_csv(const RelationshipMatrix& matrix,
                              const std::vector<Member>& members);

struct LoadOptions {
    /// When set, member image lists come from the embedding manifest
    /// (image ids shaped like F0300/MID1/xxx.jpg) instead of scanning for
    /// image files. Synthetic corpora are manifest-only.
    bool manifest_only = false;
};

/// Load a FIW-style directory tree plus an embedding manifest into a corpus.
/// Files under unrelated_and_nonfaces are never attached to members.
FamilyCorpus load_corpus(const std::string& root_dir,
                         const std::string& embedding_manifest,
                         const LoadOptions& options = {});

/// Partition family ids into k folds whose sizes differ by at most one.
/// Deterministic for a fixed seed.
std::vector<std::vector<std::string>> family_folds(const FamilyCorpus& corpus, int k,
                                                   std::uint64_t seed);

enum class PairLabel { Negative = 0, Positive = 1 };

struct PairLabelResult {
    PairLabel label = PairLabel::Negative;
    Rid rid;
};

/// Label a member pair. Same family: the (a,b)-directed matrix cell decides
/// via is_blood. Different families: Negative with RID 0.
PairLabelResult pair_label(const FamilyCorpus& corpus, const MemberKey& a,
                           const MemberKey& b);

} // namespace kin

#endif // KINVERIFY_CORPUS_HPP
