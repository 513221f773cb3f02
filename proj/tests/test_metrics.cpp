#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "manydg/metrics.hpp"
#include "manydg/rng.hpp"

using namespace manydg;

namespace {

// Independent oracle: recomputes every metric straight from the prediction
// list, never touching ConfusionMatrix.
struct Oracle {
    double acc = 0, kappa = 0, f1 = 0;
};

Oracle brute_force(const std::vector<std::pair<int, int>>& pairs, int k) {
    Oracle o;
    const double n = static_cast<double>(pairs.size());
    int agree = 0;
    for (auto [t, p] : pairs) agree += t == p;
    o.acc = agree / n;

    double pe = 0;
    for (int c = 0; c < k; ++c) {
        double truth_c = 0, pred_c = 0;
        for (auto [t, p] : pairs) {
            truth_c += t == c;
            pred_c += p == c;
        }
        pe += (truth_c / n) * (pred_c / n);
    }
    o.kappa = pe >= 1.0 ? 0.0 : (o.acc - pe) / (1.0 - pe);

    double f1_sum = 0;
    for (int c = 0; c < k; ++c) {
        double tp = 0, fp = 0, fn = 0;
        for (auto [t, p] : pairs) {
            if (t == c && p == c) tp += 1;
            if (t != c && p == c) fp += 1;
            if (t == c && p != c) fn += 1;
        }
        double prec = tp + fp > 0 ? tp / (tp + fp) : 0;
        double rec = tp + fn > 0 ? tp / (tp + fn) : 0;
        f1_sum += prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0;
    }
    o.f1 = f1_sum / k;
    return o;
}

}  // namespace

TEST_CASE("metric hand values") {
    {
        ConfusionMatrix cm(3);
        cm.add(0, 0, 10);
        cm.add(1, 1, 5);
        cm.add(2, 2, 7);
        CHECK(accuracy(cm) == 1.0);
        CHECK(cohens_kappa(cm) == doctest::Approx(1.0).epsilon(1e-15));
        CHECK(macro_f1(cm) == doctest::Approx(1.0).epsilon(1e-15));
    }
    {
        // chance-level agreement
        ConfusionMatrix cm(2);
        cm.add(0, 0, 25);
        cm.add(0, 1, 25);
        cm.add(1, 0, 25);
        cm.add(1, 1, 25);
        CHECK(cohens_kappa(cm) == doctest::Approx(0.0).epsilon(1e-15));
    }
    {
        ConfusionMatrix cm(2);
        cm.add(0, 0, 40);
        cm.add(0, 1, 10);
        cm.add(1, 0, 20);
        cm.add(1, 1, 30);
        CHECK(accuracy(cm) == doctest::Approx(0.7).epsilon(1e-15));
        CHECK(cohens_kappa(cm) == doctest::Approx(0.4).epsilon(1e-13));
        CHECK(macro_f1(cm) == doctest::Approx(23.0 / 33.0).epsilon(1e-13));
    }
    {
        // degenerate single observed class: p_e = 1 -> kappa defined as 0
        ConfusionMatrix cm(2);
        cm.add(0, 0, 9);
        CHECK(cohens_kappa(cm) == 0.0);
        // absent class contributes F1 = 0
        CHECK(macro_f1(cm) == doctest::Approx(0.5).epsilon(1e-15));
    }
    ConfusionMatrix cm(2);
    CHECK_THROWS_AS(accuracy(cm), std::invalid_argument);
    CHECK_THROWS_AS(cm.add(2, 0), std::invalid_argument);
}

TEST_CASE("metrics agree with brute force on 1000 random confusion matrices") {
    Rng rng(2024);
    for (int trial = 0; trial < 1000; ++trial) {
        const int k = 2 + static_cast<int>(rng.uniform_index(6));
        const int n = 1 + static_cast<int>(rng.uniform_index(300));
        std::vector<std::pair<int, int>> pairs;
        ConfusionMatrix cm(static_cast<std::size_t>(k));
        for (int i = 0; i < n; ++i) {
            // skew some trials so rare classes and empty columns show up
            int t = static_cast<int>(rng.uniform_index(static_cast<std::size_t>(k)));
            int p = rng.bernoulli(0.4) ? t : static_cast<int>(rng.uniform_index(k));
            pairs.push_back({t, p});
            cm.add(t, p);
        }
        Oracle o = brute_force(pairs, k);
        CHECK(accuracy(cm) == o.acc);
        CHECK(std::fabs(cohens_kappa(cm) - o.kappa) <= 1e-12);
        CHECK(std::fabs(macro_f1(cm) - o.f1) <= 1e-12);
    }
}

TEST_CASE("majority vote and valid sets") {
    {
        auto [cls, valid] = majority_vote({8, 0, 5, 3, 2, 1});
        CHECK(cls == 0);
        CHECK(valid == std::vector<int>{0, 2});
    }
    {
        auto [cls, valid] = majority_vote({0, 0, 1, 0});
        CHECK(cls == 2);
        CHECK(valid == std::vector<int>{2});
    }
    {
        // tie breaks to the lowest index
        auto [cls, valid] = majority_vote({5, 5, 0});
        CHECK(cls == 0);
        CHECK(valid == std::vector<int>{0, 1});
    }
    CHECK_THROWS_AS(majority_vote({0, 0, 0}), std::invalid_argument);
    CHECK_THROWS_AS(majority_vote({}), std::invalid_argument);
}
