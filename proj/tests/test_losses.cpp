#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "candida/attention.hpp"
#include "candida/losses.hpp"
#include "gradcheck.hpp"

#include <cmath>
#include <random>

using namespace candida;
using candida::testing::gradcheck;

TEST_CASE("triplet hand-computed values") {
    CHECK(triplet_value<double>({1, 1}, {1, 1}, {1, 3}, 1.0) ==
          doctest::Approx(0.0).epsilon(1e-15));  // d_pos 0, d_neg 2, margin 1
    CHECK(triplet_value<double>({0.5, 0.5}, {0.5, 0.5}, {0.5, 0.5}, 1.0) ==
          doctest::Approx(1.0).epsilon(1e-9));  // total collapse -> margin
    CHECK(triplet_value<double>({0, 0}, {3, 0}, {0, 1}, 1.0) ==
          doctest::Approx(3.0).epsilon(1e-9));  // max(3 - 1 + 1, 0)
    CHECK_THROWS_AS(triplet_value<double>({0, 0}, {1, 1, 1}, {0, 1}, 1.0),
                    std::invalid_argument);
    CHECK_THROWS_AS(triplet_value<double>({0, 0}, {1, 1}, {0, 1}, -0.5),
                    std::invalid_argument);
}

TEST_CASE("triplet is nonnegative") {
    std::mt19937 rng(1);
    std::uniform_real_distribution<double> u(-2, 2);
    for (int t = 0; t < 100; ++t) {
        std::vector<double> a(4), p(4), n(4);
        for (int i = 0; i < 4; ++i) {
            a[i] = u(rng);
            p[i] = u(rng);
            n[i] = u(rng);
        }
        CHECK(triplet_value<double>(a, p, n, 1.0) >= 0.0);
    }
}

TEST_CASE("attention mining is the identity on valid scores") {
    auto am = [](double s) {
        return attention_mining(constant(Tensor<double>::scalar(s)))->value[0];
    };
    CHECK(am(0.0) == 0.0);
    CHECK(am(1.0) == 1.0);
    CHECK(am(0.4) == 0.4);
    CHECK_THROWS_AS(attention_mining(constant(Tensor<double>::scalar(1.5))),
                    std::invalid_argument);
    CHECK_THROWS_AS(attention_mining(constant(Tensor<double>::scalar(-0.1))),
                    std::invalid_argument);
}

TEST_CASE("focus equals the brute-force mean") {
    CHECK(focus(constant(Tensor<double>::full({3, 3}, 0.25)))->value[0] ==
          doctest::Approx(0.25).epsilon(1e-15));
    CHECK(focus(constant(Tensor<double>({2, 2}, {0.0, 1.0, 1.0, 0.0})))->value[0] ==
          doctest::Approx(0.5).epsilon(1e-15));
    std::mt19937 rng(2);
    std::uniform_real_distribution<double> u(0, 1);
    Tensor<double> m({8, 8});
    double sum = 0;
    for (auto& v : m.data) {
        v = u(rng);
        sum += v;
    }
    CHECK(focus(constant(m))->value[0] == doctest::Approx(sum / 64.0).epsilon(1e-12));
    CHECK_THROWS_AS(focus(constant(Tensor<double>({0, 4}))), std::invalid_argument);
}

TEST_CASE("cross entropy closed form") {
    auto ce = [](double a, double b, int label) {
        return cross_entropy(constant(Tensor<double>({1, 2}, {a, b})), {label})->value[0];
    };
    CHECK(ce(0, 0, 0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(ce(0, 0, 1) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(ce(0, 0, 1) == doctest::Approx(0.693147).epsilon(1e-6));
    // perfect prediction approaches zero
    CHECK(ce(-20, 20, 1) < 1e-8);
    CHECK_THROWS_AS(
        cross_entropy(constant(Tensor<double>({1, 2}, {0.0, 0.0})), {2}),
        std::invalid_argument);
    CHECK_THROWS_AS(
        cross_entropy(constant(Tensor<double>({1, 2}, {0.0, 0.0})), {0, 1}),
        std::invalid_argument);
}

TEST_CASE("total loss bundle identities") {
    auto tri = constant(Tensor<double>::scalar(0.2));
    auto am = constant(Tensor<double>::scalar(0.1));
    auto fo = constant(Tensor<double>::scalar(0.3));
    auto logits = constant(Tensor<double>({1, 2}, {0.0, 0.0}));
    auto tl = total_loss(logits, {1}, tri, am, fo, 0.1);
    auto b = tl.values(0.1);
    CHECK(b.l_cl == (0.2 + 0.1) + 0.3);                 // exact sum
    CHECK(b.total == b.l_ce + 0.1 * b.l_cl);            // exact combination
    CHECK(b.l_ce == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(b.total == doctest::Approx(std::log(2.0) + 0.06).epsilon(1e-12));
    CHECK(b.l_tri >= 0);
    CHECK(b.l_am >= 0);
    CHECK(b.l_focus >= 0);
    CHECK(b.l_cl >= 0);
}

TEST_CASE("example arithmetic: l_cl 0.6 at alpha 0.1 adds 0.06") {
    auto tl = total_loss(constant(Tensor<double>({1, 2}, {3.0, 1.0})), {0},
                         constant(Tensor<double>::scalar(0.2)),
                         constant(Tensor<double>::scalar(0.1)),
                         constant(Tensor<double>::scalar(0.3)), 0.1);
    auto b = tl.values(0.1);
    CHECK(b.l_cl == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(b.total - b.l_ce == doctest::Approx(0.06).epsilon(1e-12));
}

TEST_CASE("closed loop: identity augmentation with zero mask") {
    // F_aug == F_orig and I_masked == I bitwise, so the triplet collapses to
    // its margin and the masked branch repeats the original.
    Tensor<double> img = Tensor<double>::full({3, 4, 4}, 0.7);
    auto masked = apply_mask(img, constant(Tensor<double>({4, 4})));
    CHECK(masked->value.data == img.data);
    std::vector<double> f = {0.3, -0.5, 0.8};
    CHECK(triplet_value<double>(f, f, f, 1.0) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(triplet_value<double>(f, f, f, 0.25) == doctest::Approx(0.25).epsilon(1e-9));
}

TEST_CASE("composed objective gradients match finite differences") {
    // Tiny stand-in model: shared linear encoder over three image views,
    // attention mask from the same weights, full Eq.-style composition.
    ParamStore<double> ps(3);
    Linear<double> enc(ps, "enc", 6, 4);
    Linear<double> fc(ps, "fc", 4, 2);
    // Keep the embedding norm at order one; a near-zero norm makes the
    // normalized triplet too stiff for finite differences to resolve.
    enc.b->value.data = {0.5, -0.4, 0.7, 0.3};
    fc.b->value.data = {0.1, -0.2};
    std::mt19937 rng(4);
    std::uniform_real_distribution<double> u(0.1, 0.9);
    Tensor<double> x_orig({1, 6}), x_aug({1, 6});
    for (int i = 0; i < 6; ++i) {
        x_orig.at(0, i) = u(rng);
        x_aug.at(0, i) = u(rng);
    }
    auto build = [&]() {
        auto f_aug_row = enc.forward(constant(x_aug));
        auto logits_aug = fc.forward(f_aug_row);
        // mask over the input derived from the augmented logits
        auto m = normalize_mask(reshape(slice_cols(logits_aug, 1, 1), {1, 1}));
        Tensor<double> ones({1, 6});
        std::fill(ones.data.begin(), ones.data.end(), 1.0);
        auto m_full = matmul(reshape(m, {1, 1}), constant(ones));  // broadcast [1,6]
        auto masked = mul(constant(x_orig), sub(constant(ones), m_full));
        auto f_orig = reshape(enc.forward(constant(x_orig)), {4});
        auto f_masked = reshape(enc.forward(masked), {4});
        auto f_aug = reshape(f_aug_row, {4});
        auto norm = [](const Var<double>& v) { return div_by(v, l2_norm(v)); };
        auto l_tri = triplet(norm(f_aug), norm(f_orig), norm(f_masked), 1.0);
        auto l_am = attention_mining(candida_score_var(fc.forward(enc.forward(masked))));
        auto l_focus = focus(m_full);
        auto tl = total_loss(logits_aug, {1}, l_tri, l_am, l_focus, 0.1);
        return tl.total;
    };
    std::vector<Var<double>> params;
    for (auto& [name, p] : ps.params) params.push_back(p);
    auto res = gradcheck(build, params);
    CHECK(res.checked == 6 * 4 + 4 + 4 * 2 + 2);
    CHECK(res.max_rel_err < 1e-4);
}
