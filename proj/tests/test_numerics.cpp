#include <catch_amalgamated.hpp>

#include "bttr/gradcheck.hpp"
#include "bttr/ops.hpp"
#include "bttr/tensor.hpp"

using namespace bttr;

namespace {

// direct 6-nested-loop convolution reference, independent of the im2col path
std::vector<real> conv_reference(const std::vector<real>& x, int c, int h, int w, const std::vector<real>& k,
                                 int cout, int kh, int kw, int stride, int pad, int oh, int ow) {
    std::vector<real> out(static_cast<std::size_t>(cout) * oh * ow, 0);
    for (int co = 0; co < cout; ++co)
        for (int oi = 0; oi < oh; ++oi)
            for (int oj = 0; oj < ow; ++oj) {
                real acc = 0;
                for (int ci = 0; ci < c; ++ci)
                    for (int ki = 0; ki < kh; ++ki)
                        for (int kj = 0; kj < kw; ++kj) {
                            int ii = oi * stride - pad + ki;
                            int jj = oj * stride - pad + kj;
                            if (ii < 0 || ii >= h || jj < 0 || jj >= w) continue;
                            acc += x[(static_cast<std::size_t>(ci) * h + ii) * w + jj] *
                                   k[((static_cast<std::size_t>(co) * c + ci) * kh + ki) * kw + kj];
                        }
                out[(static_cast<std::size_t>(co) * oh + oi) * ow + oj] = acc;
            }
    return out;
}

}  // namespace

TEST_CASE("matmul basics") {
    Tensor eye = Tensor::from_values({2, 2}, {1, 0, 0, 1});
    Tensor prod = matmul(eye, eye);
    CHECK(prod.values() == std::vector<real>{1, 0, 0, 1});

    Tensor a = Tensor::from_values({2, 2}, {1, 2, 3, 4});
    Tensor b = Tensor::from_values({2, 1}, {1, 1});
    Tensor c = matmul(a, b);
    CHECK(c.values() == std::vector<real>{3, 7});

    CHECK_THROWS_AS(matmul(a, Tensor::zeros({3, 2})), DimensionError);
}

TEST_CASE("matmul gradient of sum(output) w.r.t. a is ones * b^T") {
    RngState rng(7);
    Tensor a = rand_uniform(rng, {3, 4}, -1, 1, true);
    Tensor b = rand_uniform(rng, {4, 2}, -1, 1, true);
    Tensor loss = sum(matmul(a, b));
    backward(loss);
    // d sum(ab) / da = ones(3,2) * b^T
    for (int i = 0; i < 3; ++i)
        for (int k = 0; k < 4; ++k) {
            real expect = 0;
            for (int j = 0; j < 2; ++j) expect += b.values()[static_cast<std::size_t>(k) * 2 + j];
            CHECK(a.grad()[static_cast<std::size_t>(i) * 4 + k] == Catch::Approx(expect).margin(1e-12));
        }
}

TEST_CASE("softmax semantics") {
    Tensor u = softmax(Tensor::from_values({3}, {0, 0, 0}));
    for (real v : u.values()) CHECK(v == Catch::Approx(1.0 / 3).margin(1e-12));

    Tensor big = softmax(Tensor::from_values({2}, {1000, 1000}));
    CHECK(big.values()[0] == Catch::Approx(0.5));
    CHECK(std::isfinite(big.values()[0]));

    Tensor masked = softmax(Tensor::from_values({2}, {0, kNegInf}));
    CHECK(masked.values()[0] == 1.0);
    CHECK(masked.values()[1] == 0.0);

    Tensor all_masked = softmax(Tensor::from_values({3}, {kNegInf, kNegInf, kNegInf}));
    for (real v : all_masked.values()) CHECK(v == 0.0);
}

TEST_CASE("softmax rows sum to one and stay in [0,1]") {
    RngState rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        int n = 1 + static_cast<int>(rng.uniform_int(8));
        Tensor x = rand_uniform(rng, {4, n}, -30, 30);
        Tensor y = softmax(x);
        for (int r = 0; r < 4; ++r) {
            real s = 0;
            for (int j = 0; j < n; ++j) {
                real v = y.values()[static_cast<std::size_t>(r) * n + j];
                CHECK(v >= 0.0);
                CHECK(v <= 1.0);
                s += v;
            }
            CHECK(s == Catch::Approx(1.0).margin(1e-6));
        }
    }
}

TEST_CASE("conv2d identity and counting kernels") {
    Tensor x = Tensor::from_values({1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    Tensor k1 = Tensor::from_values({1, 1, 1, 1}, {1});
    Tensor y = conv2d(x, k1, 1, 0);
    CHECK(y.values() == x.values());

    Tensor ones_in = Tensor::ones({1, 4, 4});
    Tensor k3 = Tensor::ones({1, 1, 3, 3});
    Tensor y2 = conv2d(ones_in, k3, 1, 0);
    REQUIRE(y2.shape() == Shape{1, 2, 2});
    for (real v : y2.values()) CHECK(v == 9.0);

    CHECK_THROWS_AS(conv2d(Tensor::ones({1, 2, 2}), Tensor::ones({1, 1, 5, 5}), 1, 0), DimensionError);
}

TEST_CASE("conv2d matches nested-loop reference on random inputs") {
    RngState rng(23);
    for (int trial = 0; trial < 10; ++trial) {
        Tensor x = rand_uniform(rng, {2, 5, 5}, -1, 1);
        Tensor w = rand_uniform(rng, {3, 2, 3, 3}, -1, 1);
        int stride = 1 + static_cast<int>(rng.uniform_int(2));
        int pad = static_cast<int>(rng.uniform_int(2));
        Tensor y = conv2d(x, w, stride, pad);
        int oh = (5 + 2 * pad - 3) / stride + 1;
        int ow = oh;
        auto ref = conv_reference(x.values(), 2, 5, 5, w.values(), 3, 3, 3, stride, pad, oh, ow);
        REQUIRE(y.values().size() == ref.size());
        for (std::size_t i = 0; i < ref.size(); ++i)
            CHECK(y.values()[i] == Catch::Approx(ref[i]).margin(1e-10));
    }
}

TEST_CASE("elementwise op semantics") {
    Tensor r = relu(Tensor::from_values({3}, {-1, 0, 2}));
    CHECK(r.values() == std::vector<real>{0, 0, 2});

    Tensor ce = cross_entropy(Tensor::from_values({2}, {0, 0}), 0);
    CHECK(ce.item() == Catch::Approx(std::log(2.0)).margin(1e-12));
    CHECK_THROWS_AS(cross_entropy(Tensor::from_values({2}, {0, 0}), 5), ContractError);

    RngState rng(3);
    Tensor x = rand_uniform(rng, {4, 8}, -2, 2);
    Tensor y = layernorm(x, Tensor::ones({8}), Tensor::zeros({8}), 0.0);
    for (int row = 0; row < 4; ++row) {
        real m = 0, v = 0;
        for (int j = 0; j < 8; ++j) m += y.values()[static_cast<std::size_t>(row) * 8 + j];
        m /= 8;
        for (int j = 0; j < 8; ++j) {
            real d = y.values()[static_cast<std::size_t>(row) * 8 + j] - m;
            v += d * d;
        }
        v /= 8;
        CHECK(m == Catch::Approx(0.0).margin(1e-9));
        CHECK(v == Catch::Approx(1.0).margin(1e-9));
    }
}

TEST_CASE("dropout is identity at p=0 and rescales by 1/(1-p)") {
    RngState rng(5);
    Tensor x = rand_uniform(rng, {10}, -1, 1, true);
    Tensor mask = make_dropout_mask(rng, {10}, 0.5);
    Tensor y = dropout(x, mask, 0.5);
    for (int i = 0; i < 10; ++i) {
        real expect = mask.values()[static_cast<std::size_t>(i)] == 0 ? 0 : 2 * x.values()[static_cast<std::size_t>(i)];
        CHECK(y.values()[static_cast<std::size_t>(i)] == Catch::Approx(expect));
    }
    Tensor same = dropout(x, mask, 0.0);
    CHECK(same.values() == x.values());
}

TEST_CASE("backward basics") {
    RngState rng(9);
    Tensor x = rand_uniform(rng, {5}, -1, 1, true);
    backward(sum(x));
    for (real g : x.grad()) CHECK(g == 1.0);

    Tensor y = rand_uniform(rng, {5}, -1, 1, true);
    backward(sum(mul(y, y)));
    for (int i = 0; i < 5; ++i)
        CHECK(y.grad()[static_cast<std::size_t>(i)] == Catch::Approx(2 * y.values()[static_cast<std::size_t>(i)]));

    CHECK_THROWS_AS(backward(rand_uniform(rng, {3}, 0, 1, true)), ContractError);
}

TEST_CASE("backward accumulates through shared subexpressions") {
    Tensor x = Tensor::from_values({2}, {3, 4}, true);
    Tensor s = scale(x, 2);         // shared
    Tensor loss = sum(add(s, s));   // d/dx = 4
    backward(loss);
    CHECK(x.grad() == std::vector<real>{4, 4});

    // a second backward without zeroing doubles the grads
    Tensor loss2 = sum(add(scale(x, 2), scale(x, 2)));
    backward(loss2);
    CHECK(x.grad() == std::vector<real>{8, 8});
}

TEST_CASE("gradcheck: matmul and softmax+cross_entropy graphs") {
    RngState rng(31);
    Tensor a = rand_uniform(rng, {3, 4}, -1, 1, true);
    Tensor b = rand_uniform(rng, {4, 2}, -1, 1, true);
    auto rep = gradcheck([&] { return sum(mul(matmul(a, b), matmul(a, b))); },
                         {{"a", a}, {"b", b}});
    INFO("worst " << rep.worst_param << " err " << rep.max_rel_err);
    CHECK(rep.ok);

    Tensor logits = rand_uniform(rng, {4, 6}, -2, 2, true);
    auto rep2 = gradcheck([&] { return sum(cross_entropy_rows(logits, {1, 0, 5, 3})); }, {{"logits", logits}});
    CHECK(rep2.ok);

    Tensor sm_in = rand_uniform(rng, {3, 5}, -2, 2, true);
    auto rep3 = gradcheck([&] { return sum(mul(softmax(sm_in), softmax(sm_in))); }, {{"x", sm_in}});
    CHECK(rep3.ok);
}

TEST_CASE("gradcheck resamples a relu kink at zero") {
    RngState rng(1);
    int calls = 0;
    auto sample = [&calls](RngState& r) {
        ++calls;
        // first sample sits exactly on the kink; later samples are clean
        Tensor x = calls == 1 ? Tensor::zeros({4}, true) : rand_uniform(r, {4}, 0.5, 1.5, true);
        return std::vector<NamedParam>{{"x", x}};
    };
    auto build = [](std::vector<NamedParam>& p) { return sum(relu(p[0].tensor)); };
    auto rep = gradcheck_resample(sample, build, rng);
    CHECK(rep.ok);
    CHECK(rep.resamples >= 1);
}

TEST_CASE("gradcheck over every differentiable op, 20 seeds") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        RngState rng(1000 + seed);
        Tensor a = rand_uniform(rng, {2, 3}, -1, 1, true);
        Tensor b = rand_uniform(rng, {2, 3}, -1, 1, true);
        Tensor m2 = rand_uniform(rng, {3, 2}, -1, 1, true);
        Tensor img = rand_uniform(rng, {2, 2, 4, 4}, -1, 1, true);
        Tensor ker = rand_uniform(rng, {3, 2, 3, 3}, -1, 1, true);
        Tensor gamma = rand_uniform(rng, {2}, 0.5, 1.5, true);
        Tensor beta = rand_uniform(rng, {2}, -0.5, 0.5, true);
        Tensor table = rand_uniform(rng, {5, 3}, -1, 1, true);
        Tensor lg = rand_uniform(rng, {3}, 0.5, 1.5, true);
        Tensor lb = rand_uniform(rng, {3}, -0.5, 0.5, true);
        Tensor bias = rand_uniform(rng, {3}, -1, 1, true);

        std::vector<std::pair<std::string, std::function<Tensor()>>> graphs = {
            {"add", [&] { return sum(mul(add(a, b), add(a, b))); }},
            {"mul", [&] { return sum(mul(a, b)); }},
            {"scale", [&] { return sum(scale(a, 1.7)); }},
            {"add_bias", [&] { return sum(mul(add_bias(a, bias), add_bias(a, bias))); }},
            {"matmul", [&] { return sum(mul(matmul(a, m2), matmul(a, m2))); }},
            {"transpose", [&] { return sum(mul(transpose(a), transpose(a))); }},
            {"rows", [&] { return sum(mul(rows(a, 1, 1), rows(a, 1, 1))); }},
            {"concat", [&] { return sum(mul(concat({a, b}, 1), concat({a, b}, 1))); }},
            {"softmax", [&] { return sum(mul(softmax(a), softmax(a))); }},
            {"cross_entropy", [&] { return sum(cross_entropy_rows(a, {0, 2})); }},
            {"embedding", [&] { return sum(mul(embedding_lookup(table, {0, 2, 4}), embedding_lookup(table, {0, 2, 4}))); }},
            {"layernorm", [&] { return sum(mul(layernorm(a, lg, lb), layernorm(a, lg, lb))); }},
            {"conv2d", [&] { return sum(mul(conv2d(img, ker, 1, 1), conv2d(img, ker, 1, 1))); }},
            {"avgpool", [&] { return sum(mul(avgpool2d(img), avgpool2d(img))); }},
            {"batchnorm", [&] { return sum(mul(batchnorm_train(img, gamma, beta, nullptr, nullptr),
                                               batchnorm_train(img, gamma, beta, nullptr, nullptr))); }},
            {"image_to_rows", [&] { return sum(mul(image_to_rows(img, 1), image_to_rows(img, 1))); }},
        };

        std::vector<NamedParam> params = {{"a", a},      {"b", b},    {"m2", m2},      {"img", img},
                                          {"ker", ker},  {"gamma", gamma}, {"beta", beta}, {"table", table},
                                          {"lg", lg},    {"lb", lb},  {"bias", bias}};
        for (auto& [name, fn] : graphs) {
            auto rep = gradcheck(fn, params);
            INFO("op " << name << " seed " << seed << " worst " << rep.worst_param << " err " << rep.max_rel_err);
            CHECK(rep.ok);
        }
    }
}

TEST_CASE("rng reproducibility") {
    RngState a(42), b(42);
    for (int i = 0; i < 1000; ++i) REQUIRE(a.next_u64() == b.next_u64());

    RngState r1(7), r2(7);
    Tensor t1 = init_linear(r1, {16, 16}, 16);
    Tensor t2 = init_linear(r2, {16, 16}, 16);
    CHECK(t1.values() == t2.values());

    RngState r3(8);
    Tensor t3 = init_linear(r3, {16, 16}, 16);
    CHECK(t1.values() != t3.values());
}
