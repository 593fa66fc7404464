#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "candida/nn.hpp"
#include "candida/optim.hpp"
#include "gradcheck.hpp"

#include <random>

using namespace candida;
using candida::testing::gradcheck;

namespace {

Tensor<double> random_tensor(std::vector<int> shape, std::mt19937& rng, double scale = 1.0) {
    Tensor<double> t(std::move(shape));
    std::normal_distribution<double> d(0.0, scale);
    for (auto& x : t.data) x = d(rng);
    return t;
}

}  // namespace

TEST_CASE("elementwise ops match finite differences") {
    std::mt19937 rng(1);
    auto a = parameter(random_tensor({3, 4}, rng));
    auto b = parameter(random_tensor({3, 4}, rng));
    auto build = [&] {
        auto x = mul(add(a, b), sub(a, scale(b, 0.5)));
        x = add(sigmoid(x), relu(x));
        return mean_all(x);
    };
    auto r = gradcheck(build, {a, b});
    CHECK(r.max_rel_err < 1e-6);
}

TEST_CASE("matmul / transpose / slicing match finite differences") {
    std::mt19937 rng(2);
    auto a = parameter(random_tensor({4, 3}, rng));
    auto b = parameter(random_tensor({3, 5}, rng));
    auto bias = parameter(random_tensor({5}, rng));
    auto build = [&] {
        auto y = add_rowvec(matmul(a, b), bias);
        auto top = slice_rows(y, 0, 2);
        auto cols = slice_cols(y, 1, 3);
        auto z = concat_cols<double>({top, slice_rows(cols, 0, 2)});
        return sum_all(mul(z, z));
    };
    auto r = gradcheck(build, {a, b, bias});
    CHECK(r.max_rel_err < 1e-6);
}

TEST_CASE("softmax and log-softmax rows match finite differences") {
    std::mt19937 rng(3);
    auto a = parameter(random_tensor({3, 6}, rng));
    auto w = random_tensor({3, 6}, rng);
    auto build1 = [&] { return weighted_sum(softmax_rows(a), w); };
    CHECK(gradcheck(build1, {a}).max_rel_err < 1e-6);
    auto build2 = [&] { return weighted_sum(log_softmax_rows(a), w); };
    CHECK(gradcheck(build2, {a}).max_rel_err < 1e-6);
    // rows of softmax sum to 1
    auto s = softmax_rows(a);
    for (int i = 0; i < 3; ++i) {
        double sum = 0;
        for (int j = 0; j < 6; ++j) sum += s->value.at(i, j);
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("layer norm and group norm match finite differences") {
    std::mt19937 rng(4);
    auto x = parameter(random_tensor({3, 8}, rng));
    auto g = parameter(random_tensor({8}, rng, 0.5));
    auto b = parameter(random_tensor({8}, rng, 0.5));
    auto build = [&] { return mean_all(mul(layer_norm_rows(x, g, b), layer_norm_rows(x, g, b))); };
    CHECK(gradcheck(build, {x, g, b}).max_rel_err < 1e-5);

    auto xc = parameter(random_tensor({4, 3, 3}, rng));
    auto gc = parameter(random_tensor({4}, rng, 0.5));
    auto bc = parameter(random_tensor({4}, rng, 0.5));
    auto build2 = [&] {
        auto y = group_norm(xc, gc, bc, 2);
        return sum_all(mul(y, sigmoid(y)));
    };
    CHECK(gradcheck(build2, {xc, gc, bc}).max_rel_err < 1e-5);
}

TEST_CASE("conv2d matches finite differences and a direct-convolution oracle") {
    std::mt19937 rng(5);
    auto x = parameter(random_tensor({2, 5, 5}, rng));
    auto w = parameter(random_tensor({3, 2, 3, 3}, rng));
    auto b = parameter(random_tensor({3}, rng));
    auto build = [&] { return mean_all(mul(conv2d(x, w, b, 2, 1), conv2d(x, w, b, 2, 1))); };
    CHECK(gradcheck(build, {x, w, b}).max_rel_err < 1e-5);

    // independent nested-loop convolution
    auto y = conv2d(x, w, b, 2, 1);
    int ho = y->value.dim(1), wo = y->value.dim(2);
    for (int co = 0; co < 3; ++co)
        for (int oi = 0; oi < ho; ++oi)
            for (int oj = 0; oj < wo; ++oj) {
                double acc = b->value[co];
                for (int ci = 0; ci < 2; ++ci)
                    for (int ki = 0; ki < 3; ++ki)
                        for (int kj = 0; kj < 3; ++kj) {
                            int ii = oi * 2 + ki - 1, jj = oj * 2 + kj - 1;
                            if (ii < 0 || ii >= 5 || jj < 0 || jj >= 5) continue;
                            acc += x->value.at(ci, ii, jj) *
                                   w->value.data[((co * 2 + ci) * 3 + ki) * 3 + kj];
                        }
                CHECK(y->value.at(co, oi, oj) == doctest::Approx(acc).epsilon(1e-10));
            }
}

TEST_CASE("bilinear upsample is linear with matching gradients") {
    std::mt19937 rng(6);
    auto x = parameter(random_tensor({3, 4}, rng));
    auto w = random_tensor({7, 9}, rng);
    auto build = [&] { return weighted_sum(bilinear_upsample(x, 7, 9), w); };
    CHECK(gradcheck(build, {x}).max_rel_err < 1e-6);
}

TEST_CASE("scalar-variable scaling ops match finite differences") {
    std::mt19937 rng(7);
    auto x = parameter(random_tensor({4}, rng));
    auto s = parameter(Tensor<double>({1}, {1.7}));
    auto build = [&] { return sum_all(mul(scale_by(x, s), div_by(x, s))); };
    CHECK(gradcheck(build, {x, s}).max_rel_err < 1e-6);
    auto build2 = [&] { return l2_norm(x); };
    CHECK(gradcheck(build2, {x}).max_rel_err < 1e-6);
}

TEST_CASE("attention block gradients via mha composition") {
    ParamStore<double> ps(11);
    MultiHeadAttention<double> mha(ps, "mha", 8, 2);
    std::mt19937 rng(8);
    auto xq = parameter(random_tensor({4, 8}, rng, 0.5));
    auto xkv = parameter(random_tensor({3, 8}, rng, 0.5));
    std::vector<Var<double>> params{xq, xkv};
    for (auto& [k, p] : ps.params) params.push_back(p);
    auto build = [&] { return mean_all(mul(mha.forward(xq, xkv), mha.forward(xq, xkv))); };
    CHECK(gradcheck(build, params).max_rel_err < 1e-5);
}

TEST_CASE("Adam leaves frozen parameters untouched") {
    ParamStore<float> ps(3);
    auto a = ps.create("a", {4}, 1.0f);
    auto b = ps.create("b", {4}, 1.0f);
    b->trainable = false;
    auto before_a = a->value.data;
    auto before_b = b->value.data;
    Adam<float> opt(ps, 1e-2f);
    for (int step = 0; step < 100; ++step) {
        opt.zero_grad();
        backward(sum_all(mul(add(a, b), add(a, b))));
        opt.step();
    }
    CHECK(b->value.data == before_b);
    CHECK(a->value.data != before_a);
}
