#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <map>
#include <set>

#include "kinverify/sampler.hpp"
#include "test_util.hpp"

using namespace kin;

namespace {

/// Two families whose only positive pairs carry RID 4 (A-B) and RID 6 (C-D),
/// one image each, plus a second family so cross-family negatives exist.
FamilyCorpus equal_rid_corpus() {
    kintest::CorpusBuilder builder({{"c", 4}});
    builder.family("F0001",
                   "MID,1,2,3,4,Name,Gender\n"
                   "1,0,4,0,0,A,Male\n"   // 1 parent of 2
                   "2,1,0,0,0,B,Male\n"
                   "3,0,0,0,6,C,Male\n"   // 3 grandparent of 4
                   "4,0,0,3,0,D,Male\n",
                   {{1, 1}, {2, 1}, {3, 1}, {4, 1}});
    builder.family("F0002", "MID,1,Name,Gender\n1,0,E,Female\n", {{1, 1}});
    return builder.build();
}

} // namespace

TEST_CASE("multi_class_of reproduces the generation-class mapping") {
    const std::map<int, int> expected{{0, 0}, {1, 1}, {2, 2}, {3, 3}, {4, 1},
                                      {5, 0}, {6, 3}, {7, 3}, {8, 3}, {9, 0}};
    for (const auto& [rid, cls] : expected) {
        CHECK(multi_class_of(rid) == cls);
    }
}

TEST_CASE("enumerate_pairs walks cross-member image combinations") {
    kintest::CorpusBuilder builder({{"c", 4}});
    builder.family("F0300", kintest::parent_child_csv(), {{1, 2}, {2, 1}});
    const FamilyCorpus corpus = builder.build();

    const auto pairs = enumerate_pairs(corpus, {"F0300"});
    CHECK(pairs.size() == 2); // 2 images x 1 image
    for (const PairSample& p : pairs) {
        CHECK(p.binary_label == 1);
        CHECK(p.img_a < p.img_b); // canonical order
        CHECK(p.img_a != p.img_b);
    }
}

TEST_CASE("enumerate_pairs of a one-member family is empty") {
    kintest::CorpusBuilder builder({{"c", 4}});
    builder.family("F0001", "MID,1,Name,Gender\n1,0,A,Male\n", {{1, 3}});
    const FamilyCorpus corpus = builder.build();
    CHECK(enumerate_pairs(corpus, {"F0001"}).empty());
}

TEST_CASE("enumerate_pairs count matches the brute-force oracle") {
    // Members hold (2, 1, 1) images; cross-member products are 2+2+1 = 5.
    kintest::CorpusBuilder builder({{"c", 4}});
    builder.family("F0001", kintest::family_of_three_csv(), {{1, 2}, {2, 1}, {3, 1}});
    const FamilyCorpus corpus = builder.build();

    const auto pairs = enumerate_pairs(corpus, {"F0001"});
    CHECK(pairs.size() == 5);

    // Independent oracle: enumerate the same universe directly.
    std::set<std::pair<std::string, std::string>> expected;
    const auto members = corpus.family_members("F0001");
    for (std::size_t i = 0; i < members.size(); ++i) {
        for (std::size_t j = i + 1; j < members.size(); ++j) {
            for (const auto& a : members[i]->image_ids) {
                for (const auto& b : members[j]->image_ids) {
                    expected.insert({std::min(a, b), std::max(a, b)});
                }
            }
        }
    }
    std::set<std::pair<std::string, std::string>> got;
    for (const PairSample& p : pairs) got.insert({p.img_a, p.img_b});
    CHECK(got == expected);
}

TEST_CASE("emitted binary labels always agree with the blood set") {
    kintest::CorpusBuilder builder({{"c", 4}});
    builder.family("F0300", kintest::family_of_three_csv(), {{1, 2}, {2, 2}, {3, 2}});
    builder.family("F0400", kintest::parent_child_csv(), {{1, 1}, {2, 2}});
    const FamilyCorpus corpus = builder.build();
    for (const PairSample& p : enumerate_pairs(corpus, corpus.family_ids())) {
        CHECK(p.binary_label == (is_blood(p.rid) ? 1 : 0));
        CHECK(p.multi_label == multi_class_of(p.rid));
    }
}

TEST_CASE("batches contain exactly the configured counts") {
    kintest::CorpusBuilder builder({{"c", 4}});
    builder.family("F0300", kintest::family_of_three_csv(), {{1, 2}, {2, 2}, {3, 2}});
    builder.family("F0400", kintest::parent_child_csv(), {{1, 2}, {2, 2}});
    const FamilyCorpus corpus = builder.build();

    SUBCASE("baseline eight and eight") {
        SamplerConfig cfg;
        cfg.pos_per_batch = 8;
        cfg.neg_per_batch = 8;
        PairSampler sampler(corpus, corpus.family_ids(), cfg);
        Rng rng(3);
        const auto batch = sampler.next_batch(rng);
        REQUIRE(batch.size() == 16);
        for (int i = 0; i < 8; ++i) CHECK(batch[static_cast<std::size_t>(i)].binary_label == 1);
        for (int i = 8; i < 16; ++i) CHECK(batch[static_cast<std::size_t>(i)].binary_label == 0);
    }

    SUBCASE("one-to-two ratio") {
        SamplerConfig cfg;
        cfg.pos_per_batch = 8;
        cfg.neg_per_batch = 16;
        PairSampler sampler(corpus, corpus.family_ids(), cfg);
        Rng rng(4);
        const auto batch = sampler.next_batch(rng);
        REQUIRE(batch.size() == 24);
        int positives = 0;
        for (const PairSample& p : batch) positives += p.binary_label;
        CHECK(positives == 8);
    }
}

TEST_CASE("no batch ever pairs an image with itself") {
    kintest::CorpusBuilder builder({{"c", 4}});
    builder.family("F0300", kintest::family_of_three_csv(), {{1, 2}, {2, 2}, {3, 2}});
    builder.family("F0400", kintest::parent_child_csv(), {{1, 2}, {2, 2}});
    const FamilyCorpus corpus = builder.build();
    PairSampler sampler(corpus, corpus.family_ids(), SamplerConfig{});
    Rng rng(5);
    for (int b = 0; b < 200; ++b) {
        for (const PairSample& p : sampler.next_batch(rng)) {
            CHECK(p.img_a != p.img_b);
        }
    }
}

TEST_CASE("negatives re-label as non-blood and never carry TBD") {
    kintest::CorpusBuilder builder({{"c", 4}});
    // Family with a TBD (9) cell between members 1 and 2 plus a spouse pair.
    builder.family("F0500",
                   "MID,1,2,3,Name,Gender\n"
                   "1,0,9,5,A,Male\n"
                   "2,9,0,0,B,Female\n"
                   "3,5,0,0,C,Female\n",
                   {{1, 1}, {2, 1}, {3, 1}});
    builder.family("F0600", kintest::parent_child_csv(), {{1, 1}, {2, 1}});
    const FamilyCorpus corpus = builder.build();

    PairSampler sampler(corpus, corpus.family_ids(), SamplerConfig{});
    Rng rng(7);
    for (int b = 0; b < 300; ++b) {
        for (const PairSample& p : sampler.next_batch(rng)) {
            if (p.binary_label == 1) continue;
            CHECK(!is_blood(p.rid));
            CHECK(p.rid.code != kRidTbd);
            // Re-derive the label through the corpus.
            const auto ka = corpus.owner_of(p.img_a);
            const auto kb = corpus.owner_of(p.img_b);
            REQUIRE(ka.has_value());
            REQUIRE(kb.has_value());
            CHECK(pair_label(corpus, *ka, *kb).label == PairLabel::Negative);
        }
    }
}

TEST_CASE("sampling streams are deterministic per seed") {
    kintest::CorpusBuilder builder({{"c", 4}});
    builder.family("F0300", kintest::family_of_three_csv(), {{1, 2}, {2, 2}, {3, 2}});
    builder.family("F0400", kintest::parent_child_csv(), {{1, 2}, {2, 2}});
    const FamilyCorpus corpus = builder.build();
    PairSampler sampler(corpus, corpus.family_ids(), SamplerConfig{});

    Rng rng_a(42), rng_b(42), rng_c(43);
    bool all_equal = true;
    bool any_difference_from_c = false;
    for (int b = 0; b < 10; ++b) {
        const auto batch_a = sampler.next_batch(rng_a);
        const auto batch_b = sampler.next_batch(rng_b);
        const auto batch_c = sampler.next_batch(rng_c);
        if (!(batch_a == batch_b)) all_equal = false;
        if (!(batch_a == batch_c)) any_difference_from_c = true;
    }
    CHECK(all_equal);
    CHECK(any_difference_from_c);
}

TEST_CASE("db oversampling doubles the draw weight of distant generations") {
    const FamilyCorpus corpus = equal_rid_corpus();
    SamplerConfig cfg;
    cfg.pos_per_batch = 8;
    cfg.neg_per_batch = 8;
    cfg.db_oversample = true;
    PairSampler sampler(corpus, corpus.family_ids(), cfg);
    CHECK(sampler.positive_pool_size() == 2);

    Rng rng(11);
    std::map<int, long> counts;
    const int batches = 12500; // 1e5 positive draws
    for (int b = 0; b < batches; ++b) {
        for (const PairSample& p : sampler.next_batch(rng)) {
            if (p.binary_label == 1) ++counts[p.rid.code];
        }
    }
    const double ratio = static_cast<double>(counts[kRidGrandparent]) /
                         static_cast<double>(counts[kRidParent]);
    CHECK(ratio > 1.9);
    CHECK(ratio < 2.1);

    // Without the flag the two pairs draw evenly.
    cfg.db_oversample = false;
    PairSampler flat(corpus, corpus.family_ids(), cfg);
    Rng rng2(12);
    std::map<int, long> flat_counts;
    for (int b = 0; b < batches; ++b) {
        for (const PairSample& p : flat.next_batch(rng2)) {
            if (p.binary_label == 1) ++flat_counts[p.rid.code];
        }
    }
    const double flat_ratio = static_cast<double>(flat_counts[kRidGrandparent]) /
                              static_cast<double>(flat_counts[kRidParent]);
    CHECK(flat_ratio > 0.95);
    CHECK(flat_ratio < 1.05);
}

TEST_CASE("samplers with no usable pool raise ExhaustedPool") {
    kintest::CorpusBuilder builder({{"c", 4}});
    // Spouses only: no positive pair exists.
    builder.family("F0001",
                   "MID,1,2,Name,Gender\n1,0,5,A,Male\n2,5,0,B,Female\n",
                   {{1, 1}, {2, 1}});
    const FamilyCorpus corpus = builder.build();
    PairSampler sampler(corpus, corpus.family_ids(), SamplerConfig{});
    Rng rng(13);
    CHECK_THROWS_WITH_AS((void)sampler.next_batch(rng), doctest::Contains("ExhaustedPool"),
                         ValidationError);
}

TEST_CASE("enumerate_triples emits one positive per image combination") {
    kintest::CorpusBuilder builder({{"c", 4}});
    builder.family("F0300", kintest::family_of_three_csv(), {{1, 1}, {2, 1}, {3, 2}});
    builder.family("F0400", kintest::parent_child_csv(), {{1, 1}, {2, 1}});
    const FamilyCorpus corpus = builder.build();

    TripleConfig cfg;
    cfg.negatives_per_positive = 0;
    const auto triples = enumerate_triples(corpus, {"F0300", "F0400"}, cfg);
    CHECK(triples.size() == 2); // father(1) x mother(1) x child(2)
    for (const TriSample& t : triples) {
        CHECK(t.label == 1);
        CHECK(corpus.owner_of(t.img_f)->mid == 1);
        CHECK(corpus.owner_of(t.img_m)->mid == 2);
        CHECK(corpus.owner_of(t.img_c)->mid == 3);
    }
}

TEST_CASE("families without a spouse-linked parent pair yield no triples") {
    kintest::CorpusBuilder builder({{"c", 4}});
    // Parent and child only: no (father, mother) pair.
    builder.family("F0400", kintest::parent_child_csv(), {{1, 1}, {2, 1}});
    const FamilyCorpus corpus = builder.build();
    CHECK(enumerate_triples(corpus, {"F0400"}).empty());
}

TEST_CASE("negative triples always swap in a child from another family") {
    kintest::CorpusBuilder builder({{"c", 4}});
    builder.family("F0300", kintest::family_of_three_csv(), {{1, 1}, {2, 1}, {3, 2}});
    builder.family("F0400", kintest::parent_child_csv(), {{1, 2}, {2, 2}});
    const FamilyCorpus corpus = builder.build();

    TripleConfig cfg;
    cfg.negatives_per_positive = 3;
    cfg.seed = 17;
    const auto triples = enumerate_triples(corpus, corpus.family_ids(), cfg);
    std::size_t positives = 0, negatives = 0;
    for (const TriSample& t : triples) {
        if (t.label == 1) {
            ++positives;
            continue;
        }
        ++negatives;
        const auto parent_family = corpus.owner_of(t.img_f)->family_id;
        const auto child_family = corpus.owner_of(t.img_c)->family_id;
        CHECK(parent_family != child_family);
    }
    CHECK(positives == 2);
    CHECK(negatives == 6);

    // Deterministic for a fixed seed.
    const auto again = enumerate_triples(corpus, corpus.family_ids(), cfg);
    REQUIRE(again.size() == triples.size());
    for (std::size_t i = 0; i < triples.size(); ++i) {
        CHECK(again[i].img_c == triples[i].img_c);
    }
}

TEST_CASE("pair lists round-trip through the TSV format") {
    kintest::CorpusBuilder builder({{"c", 4}});
    builder.family("F0300", kintest::family_of_three_csv(), {{1, 2}, {2, 1}, {3, 2}});
    const FamilyCorpus corpus = builder.build();
    const auto pairs = enumerate_pairs(corpus, {"F0300"});

    kintest::TempDir tmp("pairs");
    const std::string path = tmp.str() + "/pairs.tsv";
    write_pair_list(path, pairs);
    const auto loaded = read_pair_list(path);
    CHECK(loaded == pairs);
}

TEST_CASE("training pairs never leak validation families") {
    kintest::CorpusBuilder builder({{"c", 4}});
    for (int f = 0; f < 8; ++f) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "F%04d", f + 1);
        builder.family(buf, kintest::family_of_three_csv(), {{1, 1}, {2, 1}, {3, 1}});
    }
    const FamilyCorpus corpus = builder.build();
    const auto folds = family_folds(corpus, 4, 23);

    for (std::size_t held_out = 0; held_out < folds.size(); ++held_out) {
        std::set<std::string> val_families(folds[held_out].begin(),
                                           folds[held_out].end());
        std::vector<std::string> train;
        for (std::size_t g = 0; g < folds.size(); ++g) {
            if (g != held_out) train.insert(train.end(), folds[g].begin(), folds[g].end());
        }
        PairSampler sampler(corpus, train, SamplerConfig{});
        Rng rng(held_out + 100);
        for (int b = 0; b < 50; ++b) {
            for (const PairSample& p : sampler.next_batch(rng)) {
                CHECK(val_families.count(corpus.owner_of(p.img_a)->family_id) == 0);
                CHECK(val_families.count(corpus.owner_of(p.img_b)->family_id) == 0);
            }
        }
    }
}

TEST_CASE("triplet sampler respects class granularity") {
    kintest::CorpusBuilder builder({{"c", 4}});
    builder.family("F0300", kintest::family_of_three_csv(), {{1, 2}, {2, 2}, {3, 2}});
    builder.family("F0400", kintest::parent_child_csv(), {{1, 2}, {2, 2}});
    const FamilyCorpus corpus = builder.build();

    SUBCASE("person level treats each member as a class") {
        TripletSampler sampler(corpus, corpus.family_ids(), TripletGranularity::Person);
        REQUIRE(sampler.viable());
        Rng rng(31);
        for (int i = 0; i < 200; ++i) {
            const ImageTriplet t = sampler.next(rng);
            const auto a = corpus.owner_of(t.anchor);
            const auto p = corpus.owner_of(t.positive);
            const auto n = corpus.owner_of(t.negative);
            CHECK(*a == *p);
            CHECK(t.anchor != t.positive);
            CHECK(!(*a == *n));
        }
    }

    SUBCASE("blood group level keeps blood relatives together") {
        TripletSampler sampler(corpus, corpus.family_ids(),
                               TripletGranularity::BloodGroup);
        REQUIRE(sampler.viable());
        Rng rng(37);
        for (int i = 0; i < 200; ++i) {
            const ImageTriplet t = sampler.next(rng);
            const auto a = corpus.owner_of(t.anchor);
            const auto n = corpus.owner_of(t.negative);
            // Both families here are single blood components, so the
            // negative always comes from the other family.
            CHECK(a->family_id != n->family_id);
        }
    }
}
