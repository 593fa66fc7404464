#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "candida/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

using namespace candida;

namespace {

// Independent O(n^2) concordance AUC plus confusion-matrix recount.
MetricsReport oracle(const std::vector<double>& scores, const std::vector<int>& labels,
                     double thr = 0.5) {
    MetricsReport m;
    double conc = 0;
    int64_t pairs = 0;
    for (size_t i = 0; i < scores.size(); ++i)
        for (size_t j = 0; j < scores.size(); ++j) {
            if (labels[i] != 1 || labels[j] != 0) continue;
            ++pairs;
            if (scores[i] > scores[j])
                conc += 1;
            else if (scores[i] == scores[j])
                conc += 0.5;
        }
    m.auc = conc / static_cast<double>(pairs);
    double tp = 0, tn = 0, fp = 0, fn = 0;
    for (size_t i = 0; i < scores.size(); ++i) {
        bool pred = scores[i] > thr;
        if (labels[i] == 1)
            (pred ? tp : fn) += 1;
        else
            (pred ? fp : tn) += 1;
    }
    m.acc = (tp + tn) / static_cast<double>(scores.size());
    m.sen = tp + fn > 0 ? tp / (tp + fn) : 0;
    m.spe = tn + fp > 0 ? tn / (tn + fp) : 0;
    double prec = tp + fp > 0 ? tp / (tp + fp) : 0;
    m.f1 = prec + m.sen > 0 ? 2 * prec * m.sen / (prec + m.sen) : 0;
    return m;
}

}  // namespace

TEST_CASE("perfect separation") {
    auto m = evaluate({0.9, 0.1}, {1, 0});
    CHECK(m.auc == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(m.acc == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(m.sen == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(m.spe == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(m.f1 == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("all-tied scores give AUC one half") {
    auto m = evaluate({0.4, 0.4, 0.4, 0.4}, {1, 0, 1, 0});
    CHECK(m.auc == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("pairwise concordance example") {
    auto m = evaluate({0.8, 0.4, 0.6, 0.2}, {1, 1, 0, 0});
    CHECK(m.auc == doctest::Approx(0.75).epsilon(1e-15));
}

TEST_CASE("evaluate errors") {
    CHECK_THROWS_AS(evaluate({0.5}, {1, 0}), std::invalid_argument);
    CHECK_THROWS_AS(evaluate({}, {}), std::invalid_argument);
    CHECK_THROWS_AS(evaluate({0.5, 0.6}, {1, 2}), std::invalid_argument);
    CHECK_THROWS_AS(evaluate({0.5, 0.6}, {1, 1}), std::invalid_argument);  // single class
}

TEST_CASE("evaluate matches the brute-force oracle on 1000 instances") {
    std::mt19937 rng(77);
    std::uniform_real_distribution<double> u(0, 1);
    std::uniform_int_distribution<int> quant(0, 12);
    for (int trial = 0; trial < 1000; ++trial) {
        int n = 2 + static_cast<int>(rng() % 30);
        std::vector<double> scores;
        std::vector<int> labels;
        int pos = 0;
        for (int i = 0; i < n; ++i) {
            scores.push_back(quant(rng) / 12.0);  // induces ties
            int l = rng() % 2;
            pos += l;
            labels.push_back(l);
        }
        if (pos == 0) labels[0] = 1;
        if (pos == n) labels[0] = 0;
        auto got = evaluate(scores, labels);
        auto want = oracle(scores, labels);
        CHECK(std::abs(got.auc - want.auc) < 1e-12);
        CHECK(std::abs(got.acc - want.acc) < 1e-12);
        CHECK(std::abs(got.sen - want.sen) < 1e-12);
        CHECK(std::abs(got.spe - want.spe) < 1e-12);
        CHECK(std::abs(got.f1 - want.f1) < 1e-12);
    }
}

TEST_CASE("mean and std") {
    auto ms = mean_std({1, 2, 3, 4});
    CHECK(ms.mean == doctest::Approx(2.5).epsilon(1e-15));
    CHECK(ms.stddev == doctest::Approx(std::sqrt(5.0 / 4.0)).epsilon(1e-12));
    CHECK(mean_std({7}).stddev == 0.0);
}

TEST_CASE("folds form a stratified 3:1:1 partition") {
    std::vector<int> labels;
    for (int i = 0; i < 100; ++i) labels.push_back(i < 50 ? 1 : 0);
    auto folds = make_folds(labels, 5, 123);
    REQUIRE(folds.size() == 5);

    std::set<int> all_test;
    for (const auto& f : folds) {
        CHECK(f.train.size() == 60);
        CHECK(f.val.size() == 20);
        CHECK(f.test.size() == 20);
        std::set<int> seen;
        for (const auto* part : {&f.train, &f.val, &f.test})
            for (int id : *part) {
                CHECK(id >= 0);
                CHECK(id < 100);
                CHECK(seen.insert(id).second);  // pairwise disjoint
            }
        CHECK(seen.size() == 100);  // union covers everything

        int pos_test = 0;
        for (int id : f.test) pos_test += labels[static_cast<size_t>(id)];
        CHECK(pos_test >= 9);  // stratified: 10 +/- 1 positives
        CHECK(pos_test <= 11);

        for (int id : f.test) CHECK(all_test.insert(id).second);  // no test leakage
    }
    CHECK(all_test.size() == 100);  // test chunks partition the pool
}

TEST_CASE("folds are deterministic in the seed") {
    std::vector<int> labels(40);
    for (size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % 2);
    auto a = make_folds(labels, 5, 9);
    auto b = make_folds(labels, 5, 9);
    auto c = make_folds(labels, 5, 10);
    REQUIRE(a.size() == b.size());
    bool same = true, differs = false;
    for (size_t f = 0; f < a.size(); ++f) {
        same &= a[f].train == b[f].train && a[f].val == b[f].val && a[f].test == b[f].test;
        differs |= a[f].test != c[f].test;
    }
    CHECK(same);
    CHECK(differs);
}

TEST_CASE("make_folds rejects too few ids") {
    CHECK_THROWS_AS(make_folds({1, 0, 1}, 5, 0), std::invalid_argument);
}
