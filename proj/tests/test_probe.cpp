#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "manydg/model.hpp"
#include "manydg/probe.hpp"
#include "manydg/rng.hpp"

using namespace manydg;

namespace {

std::vector<double> random_vec(std::size_t d, Rng& rng) {
    std::vector<double> v(d);
    for (auto& x : v) x = rng.uniform(-1.0, 1.0);
    return v;
}

// labels live in dims 0..1 of v, domains in dims 2..3; v_perp and v_par carry
// the respective halves
EmbeddingDump structured_dump(std::size_t n, Rng& rng) {
    EmbeddingDump dump;
    dump.dim = 4;
    for (std::size_t i = 0; i < n; ++i) {
        EmbeddingRow row;
        row.id = static_cast<int>(i);
        row.label = static_cast<int>(i % 2);
        row.domain = static_cast<int>((i / 2) % 3);
        row.split = Split::train;
        const double lx = row.label == 0 ? -1.0 : 1.0;
        const double dx = static_cast<double>(row.domain) - 1.0;
        row.v = {lx + 0.1 * rng.normal(), -lx + 0.1 * rng.normal(), dx + 0.1 * rng.normal(),
                 -dx + 0.1 * rng.normal()};
        row.v_perp = {row.v[0], row.v[1], 0.0, 0.0};
        row.v_par = {0.0, 0.0, row.v[2], row.v[3]};
        row.z = row.v_par;
        dump.rows.push_back(std::move(row));
    }
    return dump;
}

}  // namespace

TEST_CASE("linear probe separates a separable toy and is deterministic") {
    Rng rng(6);
    std::vector<std::vector<double>> xs;
    std::vector<int> ys;
    for (int i = 0; i < 40; ++i) {
        double c = i % 2 == 0 ? 1.5 : -1.5;
        xs.push_back({c + rng.uniform(-0.3, 0.3), -c + rng.uniform(-0.3, 0.3)});
        ys.push_back(i % 2);
    }
    ProbeConfig config;
    auto w = fit_linear_probe(xs, ys, config);
    CHECK(w.size() == 2);
    CHECK(w[0].size() == 2);

    // weights-only scoring on std-normalized inputs reaches 100% train accuracy
    double sd0 = 0, sd1 = 0, m0 = 0, m1 = 0;
    for (auto& x : xs) {
        m0 += x[0];
        m1 += x[1];
    }
    m0 /= xs.size();
    m1 /= xs.size();
    for (auto& x : xs) {
        sd0 += (x[0] - m0) * (x[0] - m0);
        sd1 += (x[1] - m1) * (x[1] - m1);
    }
    sd0 = std::sqrt(sd0 / xs.size());
    sd1 = std::sqrt(sd1 / xs.size());
    int correct = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        double s0 = w[0][0] * xs[i][0] / sd0 + w[0][1] * xs[i][1] / sd1;
        double s1 = w[1][0] * xs[i][0] / sd0 + w[1][1] * xs[i][1] / sd1;
        correct += (s1 > s0 ? 1 : 0) == ys[i];
    }
    CHECK(correct == 40);

    auto w2 = fit_linear_probe(xs, ys, config);
    CHECK(w == w2);

    CHECK_THROWS_AS(fit_linear_probe(xs, std::vector<int>(40, 1), config), std::invalid_argument);
}

TEST_CASE("constant dimensions get zero probe weight") {
    Rng rng(8);
    std::vector<std::vector<double>> xs;
    std::vector<int> ys;
    for (int i = 0; i < 30; ++i) {
        double c = i % 2 == 0 ? 1.0 : -1.0;
        xs.push_back({c + rng.uniform(-0.2, 0.2), 3.14, rng.uniform(-1.0, 1.0)});
        ys.push_back(i % 2);
    }
    ProbeConfig config;
    auto w = fit_linear_probe(xs, ys, config);
    for (const auto& row : w) CHECK(row[1] == 0.0);
}

TEST_CASE("weight cosine report separates label and domain subspaces") {
    Rng rng(10);
    EmbeddingDump dump = structured_dump(600, rng);
    ProbeConfig config;
    ProbeReport report = weight_cosine_report(dump, config);

    // v_perp carries exactly the label dims of v: near-perfect weight overlap
    CHECK(report.labels_v_vs_vperp > 0.9);
    // v_par carries exactly the domain dims of v
    CHECK(report.domains_v_vs_vpar > 0.9);
    // label weights and domain weights live in disjoint dims of v
    CHECK(std::fabs(report.labels_vs_domains) < 0.2);
    // v_par holds no label information
    CHECK(report.labels_v_vs_vpar < 0.5);

    // identical embedding spaces give identical probes: similarity exactly 1
    EmbeddingDump same = dump;
    for (auto& row : same.rows) {
        row.v_perp = row.v;
        row.v_par = row.v;
    }
    ProbeReport r2 = weight_cosine_report(same, config);
    CHECK(r2.labels_v_vs_vperp == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r2.domains_v_vs_vpar == doctest::Approx(1.0).epsilon(1e-12));

    // fewer than 2 domains cannot produce the domain rows
    EmbeddingDump mono = dump;
    for (auto& row : mono.rows) row.domain = 0;
    CHECK_THROWS_AS(weight_cosine_report(mono, config), std::invalid_argument);
}

TEST_CASE("z similarity on constructed cases") {
    {
        // all z identical -> (1, 1)
        EmbeddingDump dump;
        dump.dim = 3;
        for (int i = 0; i < 12; ++i) {
            EmbeddingRow row;
            row.id = i;
            row.domain = i % 3;
            row.z = {0.5, -0.25, 1.0};
            row.v = row.v_par = row.v_perp = row.z;
            dump.rows.push_back(row);
        }
        auto [within, cross] = z_similarity(dump);
        CHECK(within == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(cross == doctest::Approx(1.0).epsilon(1e-12));
    }
    {
        // per-domain constant, mutually orthogonal z -> (1, 0)
        EmbeddingDump dump;
        dump.dim = 3;
        for (int i = 0; i < 12; ++i) {
            EmbeddingRow row;
            row.id = i;
            row.domain = i % 3;
            row.z = {0.0, 0.0, 0.0};
            row.z[static_cast<std::size_t>(row.domain)] = 2.0;
            row.v = row.v_par = row.v_perp = row.z;
            dump.rows.push_back(row);
        }
        auto [within, cross] = z_similarity(dump);
        CHECK(within == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(cross == doctest::Approx(0.0).epsilon(1e-12));
    }
    {
        // subsampled path stays deterministic
        Rng rng(14);
        EmbeddingDump dump = structured_dump(800, rng);
        auto a = z_similarity(dump, 500, 3);
        auto b = z_similarity(dump, 500, 3);
        CHECK(a == b);
        CHECK(a.first >= a.second);
    }
}

TEST_CASE("norm scatter satisfies the orthogonal decomposition") {
    Rng rng(15);
    EmbeddingDump dump;
    dump.dim = 6;
    for (int i = 0; i < 50; ++i) {
        EmbeddingRow row;
        row.id = i;
        row.domain = i % 4;
        row.split = i % 5 == 0 ? Split::test : Split::train;
        row.v = random_vec(6, rng);
        row.z = random_vec(6, rng);
        ProjectionResult p = orthogonal_project(Tensor({6}, row.v), Tensor({6}, row.z));
        row.v_par = p.v_par.values();
        row.v_perp = p.v_perp.values();
        dump.rows.push_back(row);
    }
    std::vector<NormRow> rows = norm_scatter(dump);
    CHECK(rows.size() == dump.rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        CHECK(rows[i].par_norm >= 0.0);
        CHECK(rows[i].perp_norm >= 0.0);
        double vsq = 0;
        for (double x : dump.rows[i].v) vsq += x * x;
        double sum = rows[i].par_norm * rows[i].par_norm + rows[i].perp_norm * rows[i].perp_norm;
        CHECK(std::fabs(sum - vsq) <= 1e-6 * std::max(1.0, vsq));
    }
}

TEST_CASE("embedding dumps round-trip and re-save byte-identically") {
    Rng rng(16);
    EmbeddingDump dump = structured_dump(20, rng);
    dump.rows[3].split = Split::test;
    dump.rows[5].split = Split::val;

    save_dump("probe_dump_test.csv", dump);
    EmbeddingDump loaded = load_dump("probe_dump_test.csv");
    CHECK(loaded.dim == dump.dim);
    CHECK(loaded.rows.size() == dump.rows.size());
    for (std::size_t i = 0; i < dump.rows.size(); ++i) {
        CHECK(loaded.rows[i].id == dump.rows[i].id);
        CHECK(loaded.rows[i].domain == dump.rows[i].domain);
        CHECK(loaded.rows[i].label == dump.rows[i].label);
        CHECK(loaded.rows[i].split == dump.rows[i].split);
        CHECK(loaded.rows[i].v == dump.rows[i].v);
        CHECK(loaded.rows[i].z == dump.rows[i].z);
        CHECK(loaded.rows[i].v_par == dump.rows[i].v_par);
        CHECK(loaded.rows[i].v_perp == dump.rows[i].v_perp);
    }

    save_dump("probe_dump_test2.csv", loaded);
    std::ifstream f1("probe_dump_test.csv"), f2("probe_dump_test2.csv");
    std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(s1 == s2);
    std::remove("probe_dump_test.csv");
    std::remove("probe_dump_test2.csv");
}
