#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>

#include "manydg/data.hpp"
#include "manydg/rng.hpp"

using namespace manydg;

namespace {

void write_bytes(const std::string& path, const std::vector<unsigned char>& bytes) {
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
}

void push_u32(std::vector<unsigned char>& v, std::uint32_t x) {
    v.push_back(static_cast<unsigned char>(x >> 24));
    v.push_back(static_cast<unsigned char>(x >> 16));
    v.push_back(static_cast<unsigned char>(x >> 8));
    v.push_back(static_cast<unsigned char>(x));
}

// small dataset with explicit domains
DomainDataset toy_dataset(const std::vector<std::pair<int, int>>& label_domain) {
    DomainDataset ds;
    ds.height = 2;
    ds.width = 2;
    ds.num_classes = 10;
    for (auto [label, domain] : label_domain) {
        Sample s;
        s.pixels = {0.1, 0.2, 0.3, 0.4};
        s.label = VoteLabel(label);
        s.domain = domain;
        ds.samples.push_back(s);
    }
    return ds;
}

}  // namespace

TEST_CASE("idx files round-trip hand-built bytes") {
    std::vector<unsigned char> img;
    push_u32(img, 2051);
    push_u32(img, 2);   // images
    push_u32(img, 3);   // height
    push_u32(img, 3);   // width
    for (int i = 0; i < 18; ++i) img.push_back(static_cast<unsigned char>(i * 10));
    write_bytes("idx_imgs_test", img);

    std::vector<unsigned char> lab;
    push_u32(lab, 2049);
    push_u32(lab, 2);
    lab.push_back(7);
    lab.push_back(2);
    write_bytes("idx_labels_test", lab);

    DomainDataset ds = load_idx("idx_imgs_test", "idx_labels_test");
    CHECK(ds.samples.size() == 2);
    CHECK(ds.height == 3);
    CHECK(ds.width == 3);
    CHECK(ds.samples[0].label.primary_class() == 7);
    CHECK(ds.samples[1].label.primary_class() == 2);
    for (int i = 0; i < 9; ++i) {
        CHECK(ds.samples[0].pixels[i] == doctest::Approx(i * 10 / 255.0).epsilon(1e-15));
    }

    // write and re-read through our own writer
    save_idx(ds, "idx_imgs_test2", "idx_labels_test2");
    DomainDataset ds2 = load_idx("idx_imgs_test2", "idx_labels_test2");
    CHECK(ds2.samples.size() == 2);
    for (int i = 0; i < 9; ++i) {
        CHECK(ds2.samples[1].pixels[i] == doctest::Approx(ds.samples[1].pixels[i]).epsilon(1e-12));
    }

    ds.samples[0].domain = 4;
    ds.samples[1].domain = 9;
    save_domain_sidecar(ds, "idx_domains_test");
    DomainDataset ds3 = ds2;
    load_domain_sidecar(ds3, "idx_domains_test");
    CHECK(ds3.samples[0].domain == 4);
    CHECK(ds3.samples[1].domain == 9);

    for (const char* f : {"idx_imgs_test", "idx_labels_test", "idx_imgs_test2",
                          "idx_labels_test2", "idx_domains_test"}) {
        std::remove(f);
    }
}

TEST_CASE("idx rejects malformed files") {
    std::vector<unsigned char> bad;
    push_u32(bad, 9999);
    push_u32(bad, 1);
    push_u32(bad, 2);
    push_u32(bad, 2);
    for (int i = 0; i < 4; ++i) bad.push_back(0);
    write_bytes("idx_bad_magic", bad);

    std::vector<unsigned char> lab;
    push_u32(lab, 2049);
    push_u32(lab, 1);
    lab.push_back(0);
    write_bytes("idx_ok_labels", lab);
    CHECK_THROWS_AS(load_idx("idx_bad_magic", "idx_ok_labels"), std::runtime_error);

    // 3 images vs 2 labels
    std::vector<unsigned char> img;
    push_u32(img, 2051);
    push_u32(img, 3);
    push_u32(img, 2);
    push_u32(img, 2);
    for (int i = 0; i < 12; ++i) img.push_back(1);
    write_bytes("idx_three_imgs", img);
    std::vector<unsigned char> two;
    push_u32(two, 2049);
    push_u32(two, 2);
    two.push_back(0);
    two.push_back(1);
    write_bytes("idx_two_labels", two);
    CHECK_THROWS_AS(load_idx("idx_three_imgs", "idx_two_labels"), std::runtime_error);

    // truncated pixel payload
    std::vector<unsigned char> trunc;
    push_u32(trunc, 2051);
    push_u32(trunc, 1);
    push_u32(trunc, 2);
    push_u32(trunc, 2);
    trunc.push_back(0);
    write_bytes("idx_truncated", trunc);
    std::vector<unsigned char> one;
    push_u32(one, 2049);
    push_u32(one, 1);
    one.push_back(0);
    write_bytes("idx_one_label", one);
    CHECK_THROWS_AS(load_idx("idx_truncated", "idx_one_label"), std::runtime_error);

    CHECK_THROWS_AS(load_idx("no_such_file_xyz", "idx_one_label"), std::runtime_error);

    for (const char* f : {"idx_bad_magic", "idx_ok_labels", "idx_three_imgs", "idx_two_labels",
                          "idx_truncated", "idx_one_label"}) {
        std::remove(f);
    }
}

TEST_CASE("noise bank is bounded, seeded, and sized") {
    NoiseBank bank = make_noise_bank(16, 16, 32, 0.5, 99);
    CHECK(bank.size() == 32);
    for (const auto& wave : bank.waves) {
        CHECK(wave.size() == 16 * 16);
        for (double v : wave) {
            CHECK(v <= 1.0);
            CHECK(v >= -1.0);
        }
    }
    NoiseBank again = make_noise_bank(16, 16, 32, 0.5, 99);
    CHECK(bank.waves == again.waves);
    NoiseBank other = make_noise_bank(16, 16, 32, 0.5, 100);
    CHECK(bank.waves != other.waves);
    CHECK_THROWS_AS(make_noise_bank(16, 16, 0, 0.5, 1), std::invalid_argument);
    CHECK_THROWS_AS(make_noise_bank(16, 16, 4, 0.0, 1), std::invalid_argument);
}

TEST_CASE("synthetic digits are deterministic and in range") {
    DataBundle a = make_synthetic_digits(200, 50, 16, 16, 5);
    DataBundle b = make_synthetic_digits(200, 50, 16, 16, 5);
    CHECK(a.train.samples.size() == 200);
    CHECK(a.test.samples.size() == 50);
    CHECK(a.train.num_classes == 10);
    CHECK(a.train.samples[17].pixels == b.train.samples[17].pixels);
    std::map<int, int> counts;
    for (const Sample& s : a.train.samples) {
        counts[s.label.primary_class()]++;
        for (double p : s.pixels) {
            CHECK(p >= 0.0);
            CHECK(p <= 1.0);
        }
    }
    for (int k = 0; k < 10; ++k) CHECK(counts[k] == 20);
}

TEST_CASE("stepped scenarios pin per-label shift fractions") {
    // 2000 samples per label on both splits
    DataBundle clean = make_synthetic_digits(20000, 20000, 16, 16, 7);
    NoiseBank bank = make_noise_bank(16, 16, 32, 0.5, 7);

    auto shifted_fraction = [](const DomainDataset& ds, int label) {
        int total = 0, shifted = 0;
        for (const Sample& s : ds.samples) {
            if (s.label.primary_class() != label) continue;
            ++total;
            shifted += s.domain != 0;
        }
        return static_cast<double>(shifted) / total;
    };

    DataBundle stepped = apply_scenario(clean, ShiftScenario::stepped, bank, 33);
    CHECK(shifted_fraction(stepped.train, 0) == 0.0);
    CHECK(shifted_fraction(stepped.test, 0) == 0.0);
    for (int k = 0; k < 10; ++k) {
        CHECK(std::fabs(shifted_fraction(stepped.train, k) - 0.1 * k) <= 0.03);
        CHECK(std::fabs(shifted_fraction(stepped.test, k) - 0.1 * k) <= 0.03);
    }

    DataBundle opp = apply_scenario(clean, ShiftScenario::opposite_stepped, bank, 33);
    CHECK(std::fabs(shifted_fraction(opp.test, 0) - 0.9) <= 0.03);
    for (int k = 0; k < 10; ++k) {
        CHECK(std::fabs(shifted_fraction(opp.train, k) - 0.1 * k) <= 0.03);
        CHECK(std::fabs(shifted_fraction(opp.test, k) - 0.1 * (9 - k)) <= 0.03);
    }

    for (ShiftScenario s : {ShiftScenario::all_shift, ShiftScenario::train_only,
                            ShiftScenario::test_only, ShiftScenario::half_all}) {
        DataBundle out = apply_scenario(clean, s, bank, 3);
        double train_frac = 0, test_frac = 0;
        for (const Sample& smp : out.train.samples) train_frac += smp.domain != 0;
        for (const Sample& smp : out.test.samples) test_frac += smp.domain != 0;
        train_frac /= out.train.samples.size();
        test_frac /= out.test.samples.size();
        if (s == ShiftScenario::all_shift) {
            CHECK(train_frac == 1.0);
            CHECK(test_frac == 1.0);
        } else if (s == ShiftScenario::train_only) {
            CHECK(train_frac == 1.0);
            CHECK(test_frac == 0.0);
        } else if (s == ShiftScenario::test_only) {
            CHECK(train_frac == 0.0);
            CHECK(test_frac == 1.0);
        } else {
            CHECK(std::fabs(train_frac - 0.5) <= 0.03);
            CHECK(std::fabs(test_frac - 0.5) <= 0.03);
        }
    }
}

TEST_CASE("apply_scenario is deterministic, clips pixels, and keeps unshifted bits") {
    DataBundle clean = make_synthetic_digits(500, 100, 16, 16, 11);
    NoiseBank bank = make_noise_bank(16, 16, 8, 0.5, 11);

    DataBundle a = apply_scenario(clean, ShiftScenario::half_all, bank, 13);
    DataBundle b = apply_scenario(clean, ShiftScenario::half_all, bank, 13);
    for (std::size_t i = 0; i < a.train.samples.size(); ++i) {
        CHECK(a.train.samples[i].pixels == b.train.samples[i].pixels);
        CHECK(a.train.samples[i].domain == b.train.samples[i].domain);
        if (a.train.samples[i].domain == 0) {
            CHECK(a.train.samples[i].pixels == clean.train.samples[i].pixels);
        }
        for (double p : a.train.samples[i].pixels) {
            CHECK(p >= 0.0);
            CHECK(p <= 1.0);
        }
    }

    // scenario-range mismatch: stepped needs 10 classes
    DataBundle narrow = clean;
    narrow.train.num_classes = 4;
    CHECK_THROWS_AS(apply_scenario(narrow, ShiftScenario::stepped, bank, 1),
                    std::invalid_argument);
}

TEST_CASE("double loader matches the fold procedure") {
    // one domain [a,b,c,d]: halves give pairs (a,c),(b,d) up to the shuffle
    DomainDataset ds = toy_dataset({{0, 5}, {1, 5}, {2, 5}, {3, 5}});
    EpochPairing p = build_double_loader(ds, 2, 42);
    CHECK(p.num_pairs() == 2);
    std::set<std::size_t> seen(p.a.begin(), p.a.end());
    seen.insert(p.b.begin(), p.b.end());
    CHECK(seen.size() == 4);  // exact coverage, no duplicates
    for (std::size_t i = 0; i < p.num_pairs(); ++i) {
        CHECK(ds.samples[p.a[i]].domain == ds.samples[p.b[i]].domain);
        CHECK(p.a[i] != p.b[i]);
    }
}

TEST_CASE("double loader pairing, coverage, and odd-count rule") {
    // domains of sizes 4, 5, 1, 2
    std::vector<std::pair<int, int>> spec;
    for (int i = 0; i < 4; ++i) spec.push_back({i % 10, 1});
    for (int i = 0; i < 5; ++i) spec.push_back({i % 10, 2});
    spec.push_back({0, 3});
    for (int i = 0; i < 2; ++i) spec.push_back({i, 4});
    DomainDataset ds = toy_dataset(spec);

    EpochPairing p = build_double_loader(ds, 3, 7);
    // pairs: 2 + 3 + 1 + 1
    CHECK(p.num_pairs() == 7);
    CHECK(p.num_batches() == 3);

    std::map<std::size_t, int> occurrences;
    for (std::size_t i = 0; i < p.num_pairs(); ++i) {
        CHECK(ds.samples[p.a[i]].domain == ds.samples[p.b[i]].domain);
        occurrences[p.a[i]]++;
        occurrences[p.b[i]]++;
    }
    // every sample appears; only odd-domain partners may appear twice
    CHECK(occurrences.size() == ds.samples.size());
    int doubled = 0;
    for (auto [idx, count] : occurrences) {
        CHECK(count <= 2);
        doubled += count == 2;
    }
    // domain 2 (odd) contributes one duplicated partner; domain 3 (singleton)
    // pairs with itself which also counts twice
    CHECK(doubled == 2);

    auto [first, last] = p.batch_range(2);
    CHECK(last - first == 1);  // 7 pairs in batches of 3
    CHECK_THROWS_AS(p.batch_range(3), std::invalid_argument);
}

TEST_CASE("double loader varies pairings across epochs") {
    // 50 domains x 8 samples
    std::vector<std::pair<int, int>> spec;
    for (int d = 0; d < 50; ++d) {
        for (int i = 0; i < 8; ++i) spec.push_back({i % 10, d});
    }
    DomainDataset ds = toy_dataset(spec);

    std::set<std::vector<std::size_t>> seen_orders;
    std::set<std::set<std::pair<std::size_t, std::size_t>>> seen_matchings;
    for (std::uint64_t epoch = 0; epoch < 100; ++epoch) {
        EpochPairing p = build_double_loader(ds, 16, mix_seed(12345, epoch));
        CHECK(p.num_pairs() == 200);
        std::set<std::pair<std::size_t, std::size_t>> matching;
        for (std::size_t i = 0; i < p.num_pairs(); ++i) {
            CHECK(ds.samples[p.a[i]].domain == ds.samples[p.b[i]].domain);
            auto key = std::minmax(p.a[i], p.b[i]);
            matching.insert({key.first, key.second});
        }
        seen_matchings.insert(std::move(matching));
        seen_orders.insert(p.a);
    }
    CHECK(seen_orders.size() == 100);     // orders differ across epochs
    CHECK(seen_matchings.size() == 100);  // and so do the pairings themselves
}

TEST_CASE("limit_domains keeps a seeded subset") {
    std::vector<std::pair<int, int>> spec;
    for (int d = 0; d < 20; ++d)
        for (int i = 0; i < 3; ++i) spec.push_back({i, d});
    DomainDataset ds = toy_dataset(spec);

    CHECK(limit_domains(ds, 20, 1).samples.size() == ds.samples.size());

    DomainDataset cut = limit_domains(ds, 7, 1);
    CHECK(cut.distinct_domains().size() == 7);
    CHECK(cut.samples.size() == 21);

    DomainDataset cut2 = limit_domains(ds, 7, 1);
    CHECK(cut.distinct_domains() == cut2.distinct_domains());
    CHECK_THROWS_AS(limit_domains(ds, 21, 1), std::invalid_argument);
}

TEST_CASE("continual schedule adds domains in id order with replay") {
    std::vector<std::pair<int, int>> spec;
    for (int d = 0; d < 30; ++d)
        for (int i = 0; i < 6; ++i) spec.push_back({i, d});
    DomainDataset ds = toy_dataset(spec);

    std::vector<DomainDataset> schedule = continual_splits(ds, 4, 2, 10, 4, 3);
    CHECK(schedule.size() == 11);
    CHECK(schedule[0].samples.size() == 24);  // 4 pretrain domains x 6

    // step s trains on 2 new domains (12 samples) + 4 replay per seen domain
    for (std::size_t s = 1; s <= 10; ++s) {
        std::size_t seen = 4 + (s - 1) * 2;
        CHECK(schedule[s].samples.size() == 12 + 4 * seen);

        std::set<int> new_domains;
        std::map<int, int> replay_counts;
        for (const Sample& smp : schedule[s].samples) {
            if (smp.domain >= static_cast<int>(4 + (s - 1) * 2) &&
                smp.domain < static_cast<int>(4 + s * 2)) {
                new_domains.insert(smp.domain);
            } else {
                replay_counts[smp.domain]++;
            }
        }
        CHECK(new_domains.size() == 2);
        CHECK(replay_counts.size() == seen);
        for (auto [d, c] : replay_counts) CHECK(c == 4);
    }

    CHECK_THROWS_AS(continual_splits(ds, 4, 3, 10, 4, 3), std::invalid_argument);
}

TEST_CASE("validation split holds out whole domains") {
    std::vector<std::pair<int, int>> spec;
    for (int d = 0; d < 10; ++d)
        for (int i = 0; i < 4; ++i) spec.push_back({i, d});
    DataBundle bundle;
    bundle.train = toy_dataset(spec);
    bundle.test = toy_dataset({{0, 0}});
    bundle.test.tag = Split::test;

    DataBundle split = split_validation(bundle, 0.1, 5);
    CHECK(split.val.samples.size() == 4);
    CHECK(split.train.samples.size() == 36);
    std::set<int> val_domains;
    for (const Sample& s : split.val.samples) val_domains.insert(s.domain);
    CHECK(val_domains.size() == 1);
    for (const Sample& s : split.train.samples) CHECK(!val_domains.count(s.domain));

    // single-domain fallback splits samples instead
    DataBundle mono;
    mono.train = toy_dataset({{0, 0}, {1, 0}, {2, 0}, {3, 0}, {4, 0}, {5, 0}, {6, 0}, {7, 0},
                              {8, 0}, {9, 0}});
    mono.test = bundle.test;
    DataBundle msplit = split_validation(mono, 0.1, 5);
    CHECK(msplit.val.samples.size() == 1);
    CHECK(msplit.train.samples.size() == 9);
}
