#include "kinverify/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "kinverify/rng.hpp"

namespace fs = std::filesystem;

namespace kin {

namespace {

std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        std::size_t pos = line.find(sep, start);
        if (pos == std::string::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return out;
}

std::string strip(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::optional<int> parse_int(const std::string& s) {
    const std::string t = strip(s);
    int value = 0;
    auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
    if (ec != std::errc{} || ptr != t.data() + t.size()) return std::nullopt;
    return value;
}

} // namespace

const char* rid_label(int code) {
    switch (code) {
        case kRidNa: return "NA";
        case kRidChild: return "Child";
        case kRidSibling: return "Sibling";
        case kRidGrandchild: return "Grandchild";
        case kRidParent: return "Parent";
        case kRidSpouse: return "Spouse";
        case kRidGrandparent: return "Grandparent";
        case kRidGreatGrandchild: return "Great Grandchild";
        case kRidGreatGrandparent: return "Great Grandparent";
        case kRidTbd: return "TBD";
        default: return "Invalid";
    }
}

Gender parse_gender(const std::string& text) {
    std::string t = strip(text);
    std::transform(t.begin(), t.end(), t.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (t == "female" || t == "f") return Gender::Female;
    if (t == "male" || t == "m") return Gender::Male;
    return Gender::Unknown;
}

const char* gender_label(Gender g) {
    switch (g) {
        case Gender::Female: return "Female";
        case Gender::Male: return "Male";
        default: return "Unknown";
    }
}

// ---------------------------------------------------------------------------
// FamilyCorpus
// ---------------------------------------------------------------------------

const Member& FamilyCorpus::member(const MemberKey& key) const {
    auto it = members_.find(key);
    if (it == members_.end()) {
        throw ValidationError("UnknownMember: " + key.family_id + "/MID" +
                              std::to_string(key.mid));
    }
    return it->second;
}

const RelationshipMatrix& FamilyCorpus::matrix(const std::string& family_id) const {
    auto it = matrices_.find(family_id);
    if (it == matrices_.end()) {
        throw ValidationError("UnknownFamily: " + family_id);
    }
    return it->second;
}

std::vector<std::string> FamilyCorpus::family_ids() const {
    std::vector<std::string> out;
    out.reserve(matrices_.size());
    for (const auto& [id, m] : matrices_) out.push_back(id);
    return out;
}

bool FamilyCorpus::has_embedding(const std::string& image_id,
                                 const std::string& channel) const {
    return embeddings_.count({image_id, channel}) > 0;
}

std::span<const double> FamilyCorpus::embedding(const std::string& image_id,
                                                const std::string& channel) const {
    auto it = embeddings_.find({image_id, channel});
    if (it == embeddings_.end()) {
        throw ValidationError("MissingEmbedding: " + image_id + " channel " + channel);
    }
    return it->second;
}

std::vector<const Member*> FamilyCorpus::family_members(const std::string& family_id) const {
    std::vector<const Member*> out;
    auto it = members_.lower_bound(MemberKey{family_id, 0});
    for (; it != members_.end() && it->first.family_id == family_id; ++it) {
        out.push_back(&it->second);
    }
    return out;
}

std::optional<MemberKey> FamilyCorpus::owner_of(const std::string& image_id) const {
    auto it = image_owner_.find(image_id);
    if (it == image_owner_.end()) return std::nullopt;
    return it->second;
}

void FamilyCorpus::add_member(Member m) {
    MemberKey key{m.family_id, m.mid};
    std::sort(m.image_ids.begin(), m.image_ids.end());
    for (const auto& img : m.image_ids) image_owner_[img] = key;
    members_[key] = std::move(m);
}

void FamilyCorpus::add_matrix(RelationshipMatrix m) {
    matrices_[m.family_id()] = std::move(m);
}

void FamilyCorpus::add_embedding(EmbeddingRecord rec) {
    for (double v : rec.vector) {
        if (!std::isfinite(v)) {
            throw ValidationError("NonFiniteEmbedding: " + rec.image_id +
                                  " channel " + rec.channel);
        }
    }
    embeddings_[{std::move(rec.image_id), std::move(rec.channel)}] = std::move(rec.vector);
}

void FamilyCorpus::prune_unembedded_images() {
    for (auto& [key, member] : members_) {
        std::vector<std::string> kept;
        kept.reserve(member.image_ids.size());
        for (const auto& img : member.image_ids) {
            bool complete = true;
            for (const auto& ch : channels_) {
                if (!has_embedding(img, ch.name)) {
                    complete = false;
                    break;
                }
            }
            if (complete) {
                kept.push_back(img);
            } else {
                missing_.push_back(img);
                image_owner_.erase(img);
            }
        }
        member.image_ids = std::move(kept);
    }
}

// ---------------------------------------------------------------------------
// parse_mid_csv / serialize_mid_csv
// ---------------------------------------------------------------------------

ParsedFamily parse_mid_csv(const std::string& text, const std::string& family_id) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) {
        throw ValidationError("MalformedRow: empty mid.csv for family " + family_id);
    }

    const std::vector<std::string> header = split(strip(line), ',');
    if (header.size() < 4 || strip(header[0]) != "MID") {
        throw ValidationError("MalformedRow: bad mid.csv header for family " + family_id);
    }

    // Count the numeric columns between MID and Name.
    int n = 0;
    std::size_t col = 1;
    while (col < header.size()) {
        auto v = parse_int(header[col]);
        if (!v) break;
        if (*v != n + 1) {
            throw ValidationError("MalformedRow: header column " + header[col] +
                                  " out of order in family " + family_id);
        }
        ++n;
        ++col;
    }
    if (n == 0) {
        throw ValidationError("MalformedRow: no matrix columns in header of family " +
                              family_id);
    }
    if (col >= header.size() || strip(header[col]) != "Name" ||
        col + 1 >= header.size() || strip(header[col + 1]) != "Gender") {
        throw ValidationError("MalformedRow: header must end Name,Gender in family " +
                              family_id);
    }

    ParsedFamily out;
    out.matrix = RelationshipMatrix(family_id, n);
    if (header.size() > col + 2) {
        out.warnings.push_back("family " + family_id + ": ignoring " +
                               std::to_string(header.size() - col - 2) +
                               " unknown trailing header column(s)");
    }

    const std::size_t expected_cols = static_cast<std::size_t>(n) + 3;
    std::vector<Member> members(static_cast<std::size_t>(n));
    std::vector<bool> seen(static_cast<std::size_t>(n), false);

    while (std::getline(in, line)) {
        const std::string row = strip(line);
        if (row.empty()) continue;
        const std::vector<std::string> cells = split(row, ',');
        if (cells.size() < expected_cols) {
            throw ValidationError("MalformedRow: expected at least " +
                                  std::to_string(expected_cols) + " columns, got " +
                                  std::to_string(cells.size()) + " in family " +
                                  family_id);
        }

        const auto mid = parse_int(cells[0]);
        if (!mid || *mid < 1 || *mid > n) {
            throw ValidationError("MalformedRow: bad MID '" + cells[0] +
                                  "' in family " + family_id);
        }
        if (seen[static_cast<std::size_t>(*mid - 1)]) {
            throw ValidationError("DuplicateMid: MID " + std::to_string(*mid) +
                                  " repeated in family " + family_id);
        }
        seen[static_cast<std::size_t>(*mid - 1)] = true;

        for (int j = 1; j <= n; ++j) {
            const auto code = parse_int(cells[static_cast<std::size_t>(j)]);
            if (!code || *code < 0 || *code > 9) {
                throw ValidationError("InvalidRid: cell '" +
                                      cells[static_cast<std::size_t>(j)] + "' at (" +
                                      std::to_string(*mid) + "," + std::to_string(j) +
                                      ") in family " + family_id);
            }
            out.matrix.set(*mid, j, Rid(*code));
        }

        Member& m = members[static_cast<std::size_t>(*mid - 1)];
        m.family_id = family_id;
        m.mid = *mid;
        m.name = strip(cells[static_cast<std::size_t>(n) + 1]);
        m.gender = parse_gender(cells[static_cast<std::size_t>(n) + 2]);
    }

    for (int i = 0; i < n; ++i) {
        if (!seen[static_cast<std::size_t>(i)]) {
            throw ValidationError("MalformedRow: missing row for MID " +
                                  std::to_string(i + 1) + " in family " + family_id);
        }
    }

    out.members = std::move(members);
    return out;
}

std::string serialize_mid_csv(const RelationshipMatrix& matrix,
                              const std::vector<Member>& members) {
    const int n = matrix.size();
    std::ostringstream out;
    out << "MID";
    for (int j = 1; j <= n; ++j) out << ',' << j;
    out << ",Name,Gender\n";
    for (const Member& m : members) {
        out << m.mid;
        for (int j = 1; j <= n; ++j) out << ',' << matrix.at(m.mid, j).code;
        out << ',' << m.name << ',' << gender_label(m.gender) << '\n';
    }
    return out.str();
}

// ---------------------------------------------------------------------------
// load_corpus
// ---------------------------------------------------------------------------

namespace {

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

bool is_image_file(const fs::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return ext == ".jpg" || ext == ".jpeg" || ext == ".png";
}

/// Split an image id shaped like "F0300/MID1/P0319_face0.jpg" into its
/// family id and mid. Returns nullopt for ids of any other shape.
std::optional<MemberKey> member_of_image_id(const std::string& image_id) {
    const std::size_t s1 = image_id.find('/');
    if (s1 == std::string::npos) return std::nullopt;
    const std::size_t s2 = image_id.find('/', s1 + 1);
    if (s2 == std::string::npos) return std::nullopt;
    const std::string family = image_id.substr(0, s1);
    const std::string middir = image_id.substr(s1 + 1, s2 - s1 - 1);
    if (middir.size() < 4 || middir.compare(0, 3, "MID") != 0) return std::nullopt;
    const auto mid = parse_int(middir.substr(3));
    if (!mid || *mid < 1) return std::nullopt;
    return MemberKey{family, *mid};
}

void load_embedding_tsv(const fs::path& tsv_path, FamilyCorpus& corpus,
                        std::vector<ChannelInfo>& channels,
                        std::set<std::string>& image_ids) {
    std::ifstream in(tsv_path);
    if (!in) throw IoError("cannot read embedding file " + tsv_path.string());

    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;

        const std::size_t t1 = line.find('\t');
        const std::size_t t2 = t1 == std::string::npos ? std::string::npos
                                                       : line.find('\t', t1 + 1);
        if (t2 == std::string::npos) {
            throw ValidationError("MalformedRow: " + tsv_path.string() + ":" +
                                  std::to_string(lineno) + " expects 3 tab fields");
        }
        EmbeddingRecord rec;
        rec.image_id = line.substr(0, t1);
        rec.channel = line.substr(t1 + 1, t2 - t1 - 1);

        const char* p = line.data() + t2 + 1;
        const char* end = line.data() + line.size();
        while (p < end) {
            double v = 0.0;
            auto [next, ec] = std::from_chars(p, end, v);
            if (ec != std::errc{}) {
                throw ValidationError("MalformedRow: bad float in " + tsv_path.string() +
                                      ":" + std::to_string(lineno));
            }
            rec.vector.push_back(v);
            p = next;
            if (p < end) {
                if (*p != ',') {
                    throw ValidationError("MalformedRow: expected ',' in " +
                                          tsv_path.string() + ":" +
                                          std::to_string(lineno));
                }
                ++p;
            }
        }
        if (rec.vector.empty()) {
            throw ValidationError("MalformedRow: empty vector in " + tsv_path.string() +
                                  ":" + std::to_string(lineno));
        }

        auto it = std::find_if(channels.begin(), channels.end(),
                               [&](const ChannelInfo& c) { return c.name == rec.channel; });
        if (it == channels.end()) {
            channels.push_back({rec.channel, rec.vector.size()});
        } else if (it->dim != rec.vector.size()) {
            throw ValidationError("DimensionMismatch: channel " + rec.channel +
                                  " has dim " + std::to_string(it->dim) + " but " +
                                  rec.image_id + " carries " +
                                  std::to_string(rec.vector.size()));
        }
        image_ids.insert(rec.image_id);
        corpus.add_embedding(std::move(rec));
    }
}

} // namespace

FamilyCorpus load_corpus(const std::string& root_dir,
                         const std::string& embedding_manifest,
                         const LoadOptions& options) {
    const fs::path root(root_dir);
    if (!fs::exists(root) || !fs::is_directory(root)) {
        throw IoError("corpus root is not a directory: " + root_dir);
    }

    FamilyCorpus corpus;

    // Families: every directory holding a mid.csv.
    std::vector<fs::path> family_dirs;
    for (const auto& entry : fs::directory_iterator(root)) {
        if (entry.is_directory()) family_dirs.push_back(entry.path());
    }
    std::sort(family_dirs.begin(), family_dirs.end());

    std::map<MemberKey, std::vector<std::string>> images_by_member;

    for (const fs::path& dir : family_dirs) {
        const std::string family_id = dir.filename().string();
        if (family_id == "embeddings") continue; // conventional sibling of family dirs
        const fs::path mid_csv = dir / "mid.csv";
        if (!fs::exists(mid_csv)) {
            throw ValidationError("MissingMidCsv: " + mid_csv.string());
        }
        ParsedFamily fam = parse_mid_csv(read_file(mid_csv), family_id);
        corpus.add_matrix(std::move(fam.matrix));

        if (!options.manifest_only) {
            for (const auto& sub : fs::directory_iterator(dir)) {
                if (!sub.is_directory()) continue;
                const std::string name = sub.path().filename().string();
                if (name == "unrelated_and_nonfaces") continue;
                if (name.compare(0, 3, "MID") != 0) continue;
                const auto mid = parse_int(name.substr(3));
                if (!mid) continue;
                for (const auto& file : fs::directory_iterator(sub.path())) {
                    if (!file.is_regular_file() || !is_image_file(file.path())) continue;
                    images_by_member[{family_id, *mid}].push_back(
                        family_id + "/" + name + "/" + file.path().filename().string());
                }
            }
        }

        for (Member& m : fam.members) {
            corpus.add_member(std::move(m));
        }
    }

    // Embeddings from the manifest.
    const fs::path manifest(embedding_manifest);
    std::ifstream mf(manifest);
    if (!mf) throw IoError("cannot read manifest " + embedding_manifest);
    std::vector<ChannelInfo> channels;
    std::set<std::string> embedded_images;
    std::string line;
    while (std::getline(mf, line)) {
        const std::string entry = [&] {
            std::string s = line;
            if (!s.empty() && s.back() == '\r') s.pop_back();
            return s;
        }();
        if (entry.empty() || entry[0] == '#') continue;
        fs::path tsv(entry);
        if (tsv.is_relative()) tsv = manifest.parent_path() / tsv;
        load_embedding_tsv(tsv, corpus, channels, embedded_images);
    }
    corpus.set_channels(channels);

    // Attach image lists to members.
    if (options.manifest_only) {
        std::map<MemberKey, std::vector<std::string>> grouped;
        for (const std::string& image_id : embedded_images) {
            if (image_id.find("unrelated_and_nonfaces") != std::string::npos) continue;
            const auto key = member_of_image_id(image_id);
            if (key && corpus.has_member(*key)) grouped[*key].push_back(image_id);
        }
        for (auto& [key, imgs] : grouped) {
            Member m = corpus.member(key);
            m.image_ids = std::move(imgs);
            corpus.add_member(std::move(m));
        }
    } else {
        for (auto& [key, imgs] : images_by_member) {
            if (!corpus.has_member(key)) {
                throw ValidationError("UnknownMember: images found for " + key.family_id +
                                      "/MID" + std::to_string(key.mid) +
                                      " absent from mid.csv");
            }
            Member m = corpus.member(key);
            m.image_ids = imgs;
            corpus.add_member(std::move(m));
        }
    }

    corpus.prune_unembedded_images();
    return corpus;
}

// ---------------------------------------------------------------------------
// family_folds / pair_label
// ---------------------------------------------------------------------------

std::vector<std::vector<std::string>> family_folds(const FamilyCorpus& corpus, int k,
                                                   std::uint64_t seed) {
    if (k < 2) throw ValidationError("family_folds: k must be >= 2");
    std::vector<std::string> families = corpus.family_ids();
    if (families.empty()) throw ValidationError("family_folds: empty corpus");
    if (static_cast<std::size_t>(k) > families.size()) {
        throw ValidationError("KTooLarge: k=" + std::to_string(k) + " exceeds " +
                              std::to_string(families.size()) + " families");
    }

    Rng rng(mix_seed(seed, 0xf01d5));
    rng.shuffle(families);

    const std::size_t n = families.size();
    const std::size_t base = n / static_cast<std::size_t>(k);
    const std::size_t extra = n % static_cast<std::size_t>(k);

    std::vector<std::vector<std::string>> folds(static_cast<std::size_t>(k));
    std::size_t pos = 0;
    for (std::size_t f = 0; f < static_cast<std::size_t>(k); ++f) {
        const std::size_t take = base + (f < extra ? 1 : 0);
        folds[f].assign(families.begin() + static_cast<std::ptrdiff_t>(pos),
                        families.begin() + static_cast<std::ptrdiff_t>(pos + take));
        std::sort(folds[f].begin(), folds[f].end());
        pos += take;
    }
    return folds;
}

PairLabelResult pair_label(const FamilyCorpus& corpus, const MemberKey& a,
                           const MemberKey& b) {
    const Member& ma = corpus.member(a);
    const Member& mb = corpus.member(b);
    if (ma.family_id != mb.family_id) {
        return {PairLabel::Negative, Rid(kRidNa)};
    }
    const Rid rid = corpus.matrix(ma.family_id).at(a.mid, b.mid);
    return {is_blood(rid) ? PairLabel::Positive : PairLabel::Negative, rid};
}

} // namespace kin
