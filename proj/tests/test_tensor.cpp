#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "moai/tensor.hpp"
#include "oracles.hpp"

using namespace moai;

namespace {

Tensor from_mat(const oracle::Mat& m) {
    std::vector<double> flat;
    for (const auto& row : m)
        for (double v : row) flat.push_back(v);
    return Tensor::from_data({static_cast<int>(m.size()), static_cast<int>(m[0].size())}, flat);
}

oracle::Mat to_mat(const Tensor& t) {
    oracle::Mat m(t.rows(), std::vector<double>(t.cols()));
    for (int i = 0; i < t.rows(); ++i)
        for (int j = 0; j < t.cols(); ++j) m[i][j] = t.at(i, j);
    return m;
}

oracle::Mat random_mat(int r, int c, Rng& rng, double s = 1.0) {
    oracle::Mat m(r, std::vector<double>(c));
    for (auto& row : m)
        for (auto& v : row) v = rng.normal(0.0, s);
    return m;
}

}  // namespace

TEST_CASE("matmul identity, hand case, zero") {
    Tensor eye = Tensor::from_data({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    Rng rng(7);
    Tensor x = Tensor::randn({3, 5}, rng, 1.0);
    Tensor y = matmul(eye, x);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 5; ++j) CHECK(y.at(i, j) == x.at(i, j));

    Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
    Tensor b = Tensor::from_data({2, 1}, {1, 1});
    Tensor c = matmul(a, b);
    CHECK(c.at(0, 0) == 3.0);
    CHECK(c.at(1, 0) == 7.0);

    Tensor z = Tensor::zeros({2, 2});
    Tensor zc = matmul(z, a);
    for (double v : zc.value()) CHECK(v == 0.0);
}

TEST_CASE("matmul shape error and oracle match") {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({2, 3});
    CHECK_THROWS_AS(matmul(a, b), ShapeError);

    Rng rng(11);
    auto am = random_mat(4, 6, rng);
    auto bm = random_mat(6, 3, rng);
    auto cm = oracle::matmul(am, bm);
    Tensor c = matmul(from_mat(am), from_mat(bm));
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 3; ++j) CHECK(c.at(i, j) == doctest::Approx(cm[i][j]).epsilon(1e-12));
}

TEST_CASE("softmax examples") {
    Tensor x = Tensor::from_data({1, 3}, {0, 0, 0});
    Tensor s = softmax(x, 1);
    for (int j = 0; j < 3; ++j) CHECK(s.at(0, j) == doctest::Approx(1.0 / 3).epsilon(1e-12));

    Tensor x2 = Tensor::from_data({1, 3}, {std::log(2.0), 0, 0});
    Tensor s2 = softmax(x2, 1);
    CHECK(s2.at(0, 0) == doctest::Approx(0.5).epsilon(1e-9));
    CHECK(s2.at(0, 1) == doctest::Approx(0.25).epsilon(1e-9));
    CHECK(s2.at(0, 2) == doctest::Approx(0.25).epsilon(1e-9));

    Tensor x3 = Tensor::from_data({1, 2}, {1000, 0});
    Tensor s3 = softmax(x3, 1);
    CHECK(std::isfinite(s3.at(0, 0)));
    CHECK(s3.at(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(s3.at(0, 1) < 1e-300);

    CHECK_THROWS_AS(softmax(Tensor::zeros({3, 0}), 1), ShapeError);
}

TEST_CASE("softmax rows sum to 1 for large-magnitude inputs") {
    Rng rng(3);
    for (int seed = 0; seed < 25; ++seed) {
        Tensor x = Tensor::randn({4, 6}, rng, 1e3);
        Tensor s = softmax(x, 1);
        for (int i = 0; i < 4; ++i) {
            double sum = 0.0;
            for (int j = 0; j < 6; ++j) {
                CHECK(s.at(i, j) >= 0.0);
                sum += s.at(i, j);
            }
            CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
        }
        Tensor s0 = softmax(x, 0);
        for (int j = 0; j < 6; ++j) {
            double sum = 0.0;
            for (int i = 0; i < 4; ++i) sum += s0.at(i, j);
            CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
        }
    }
}

TEST_CASE("layer_norm examples") {
    Tensor g = Tensor::full({4}, 1.0);
    Tensor b = Tensor::zeros({4});
    Tensor x = Tensor::full({1, 4}, 3.25);
    Tensor y = layer_norm(x, g, b);
    for (int j = 0; j < 4; ++j) CHECK(std::abs(y.at(0, j)) < 1e-9);

    Tensor g2 = Tensor::full({2}, 1.0);
    Tensor b2 = Tensor::zeros({2});
    Tensor x2 = Tensor::from_data({1, 2}, {1, -1});
    Tensor y2 = layer_norm(x2, g2, b2);
    CHECK(y2.at(0, 0) == doctest::Approx(1.0).epsilon(1e-4));
    CHECK(y2.at(0, 1) == doctest::Approx(-1.0).epsilon(1e-4));

    Tensor bias = Tensor::from_data({2}, {0.5, -2.0});
    Tensor y3 = layer_norm(Tensor::zeros({1, 2}), g2, bias);
    CHECK(y3.at(0, 0) == doctest::Approx(0.5).epsilon(1e-9));
    CHECK(y3.at(0, 1) == doctest::Approx(-2.0).epsilon(1e-9));

    CHECK_THROWS_AS(layer_norm(Tensor::zeros({1, 1}), Tensor::full({1}, 1.0), Tensor::zeros({1})),
                    ShapeError);
}

TEST_CASE("gelu values") {
    Tensor x = Tensor::from_data({1, 3}, {0.0, 10.0, 1.0});
    Tensor y = gelu(x);
    CHECK(y.at(0, 0) == 0.0);
    CHECK(y.at(0, 1) == doctest::Approx(10.0).epsilon(1e-9));
    // x * Phi(x) at x=1, from the erf formula in double precision
    CHECK(y.at(0, 2) == doctest::Approx(0.8413447460685429).epsilon(1e-12));
    CHECK(y.at(0, 2) == doctest::Approx(oracle::gelu(1.0)).epsilon(1e-15));
}

TEST_CASE("attention degenerate cases") {
    Rng rng(5);
    // single key: every query position receives v
    auto q = random_mat(4, 6, rng);
    auto k = random_mat(1, 6, rng);
    auto v = random_mat(1, 6, rng);
    Tensor out = multi_head_attention(from_mat(q), from_mat(k), from_mat(v), 2, false);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 6; ++j) CHECK(out.at(i, j) == doctest::Approx(v[0][j]).epsilon(1e-12));

    // zero queries -> uniform logits -> mean of values
    auto k2 = random_mat(5, 6, rng);
    auto v2 = random_mat(5, 6, rng);
    Tensor out2 = multi_head_attention(Tensor::zeros({3, 6}), from_mat(k2), from_mat(v2), 3, false);
    for (int j = 0; j < 6; ++j) {
        double mean = 0.0;
        for (int i = 0; i < 5; ++i) mean += v2[i][j];
        mean /= 5;
        for (int i = 0; i < 3; ++i) CHECK(out2.at(i, j) == doctest::Approx(mean).epsilon(1e-10));
    }

    CHECK_THROWS_AS(multi_head_attention(Tensor::zeros({2, 6}), Tensor::zeros({2, 6}),
                                         Tensor::zeros({2, 6}), 4, false),
                    ConfigError);
}

TEST_CASE("attention matches loop oracle") {
    Rng rng(13);
    for (int trial = 0; trial < 10; ++trial) {
        auto q = random_mat(3, 4, rng);
        auto k = random_mat(3, 4, rng);
        auto v = random_mat(3, 4, rng);
        for (bool causal : {false, true}) {
            Tensor out = multi_head_attention(from_mat(q), from_mat(k), from_mat(v), 2, causal);
            auto ref = oracle::attention(q, k, v, 2, causal);
            for (int i = 0; i < 3; ++i)
                for (int j = 0; j < 4; ++j)
                    CHECK(std::abs(out.at(i, j) - ref[i][j]) < 1e-10);
        }
    }
}

TEST_CASE("causal attention ignores future positions") {
    Rng rng(17);
    auto q = random_mat(5, 4, rng);
    auto k = random_mat(5, 4, rng);
    auto v = random_mat(5, 4, rng);
    Tensor base = multi_head_attention(from_mat(q), from_mat(k), from_mat(v), 2, true);
    for (int t = 0; t < 5; ++t) {
        auto k2 = k;
        auto v2 = v;
        auto q2 = q;
        for (int p = t + 1; p < 5; ++p) {
            for (int e = 0; e < 4; ++e) {
                k2[p][e] += 3.7;
                v2[p][e] -= 1.9;
                q2[p][e] *= -2.0;
            }
        }
        Tensor alt = multi_head_attention(from_mat(q2), from_mat(k2), from_mat(v2), 2, true);
        for (int i = 0; i <= t; ++i)
            for (int e = 0; e < 4; ++e) CHECK(alt.at(i, e) == base.at(i, e));
    }
}

TEST_CASE("backward on sum(W x) matches finite differences") {
    Rng rng(23);
    Tensor w = Tensor::randn({3, 4}, rng, 1.0, true);
    Tensor x = Tensor::randn({4, 2}, rng, 1.0);
    auto loss_fn = [&]() { return sum_all(matmul(w, x)); };
    Rng probe(1);
    auto report = grad_check(loss_fn, {{"w", w}}, 1e-5, 0, probe);
    CHECK(report.max_rel_error < 1e-7);
}

TEST_CASE("frozen parameters receive no gradient") {
    Rng rng(29);
    Tensor w = Tensor::randn({3, 3}, rng, 1.0, true);
    Tensor frozen = Tensor::randn({3, 3}, rng, 1.0, false);
    Tensor loss = sum_all(matmul(w, frozen));
    backward(loss);
    CHECK(w.has_grad());
    CHECK_FALSE(frozen.has_grad());
}

TEST_CASE("constant loss yields zero gradients; accumulation is additive") {
    Tensor w = Tensor::full({2, 2}, 1.5, true);
    Tensor c = Tensor::scalar(4.0);
    backward(c);  // no path to w
    CHECK_FALSE(w.has_grad());

    Tensor loss = sum_all(w);
    backward(loss);
    CHECK(w.grad()[0] == 1.0);
    Tensor loss2 = sum_all(w);
    backward(loss2);
    CHECK(w.grad()[0] == 2.0);  // accumulates until zeroed
    w.zero_grad();
    CHECK(w.grad()[0] == 0.0);

    CHECK_THROWS_AS(backward(Tensor::zeros({2, 2})), UsageError);
}

TEST_CASE("grad_check on quadratic and linear losses") {
    Rng rng(31);
    Tensor w = Tensor::randn({4, 4}, rng, 1.0, true);
    auto quad = [&]() { return sum_all(matmul(w, w)); };
    Rng probe(2);
    CHECK(grad_check(quad, {{"w", w}}, 1e-5, 0, probe).max_rel_error < 1e-7);

    Tensor a = Tensor::randn({4, 4}, rng, 1.0);
    auto lin = [&]() { return sum_all(matmul(a, w)); };
    CHECK(grad_check(lin, {{"w", w}}, 1e-5, 0, probe).max_rel_error < 1e-8);
}

TEST_CASE("all differentiable ops pass finite-difference checks over 20 seeds") {
    for (uint64_t seed = 1; seed <= 20; ++seed) {
        Rng rng(seed);
        Tensor x = Tensor::randn({3, 6}, rng, 1.0, true);
        Tensor w = Tensor::randn({6, 4}, rng, 0.7, true);
        Tensor g = Tensor::randn({6}, rng, 0.5, true);
        Tensor b = Tensor::randn({6}, rng, 0.5, true);
        Tensor roww = Tensor::randn({3}, rng, 1.0, true);
        Tensor q = Tensor::randn({3, 6}, rng, 1.0, true);

        auto loss_fn = [&]() {
            Tensor h = layer_norm(x, g, b);
            h = gelu(h);
            Tensor att = multi_head_attention(q, h, h, 2, true);
            Tensor sm = softmax(add(att, x), 1);
            Tensor scaled = mul_rowscale(sm, roww);
            Tensor joined = concat_cols({slice_cols(scaled, 0, 3), slice_cols(scaled, 3, 6)});
            Tensor out = matmul(add_rowvec(joined, b), w);
            Tensor pieces = concat_rows({slice_rows(out, 0, 2), slice_rows(out, 2, 3)});
            std::vector<int> targets{1, 3, 0};
            std::vector<uint8_t> mask{1, 0, 1};
            Tensor ce = masked_cross_entropy(scale(pieces, 1.7), targets, mask);
            return add(ce, scale(sum_all(matmul_nt(out, w)), 0.01));
        };
        Rng probe(seed * 7 + 1);
        auto report = grad_check(loss_fn,
                                 {{"x", x}, {"w", w}, {"g", g}, {"b", b}, {"roww", roww}, {"q", q}},
                                 1e-5, 0, probe);
        CHECK(report.max_rel_error < 1e-4);
    }
}

TEST_CASE("embedding lookup and gradient scatter") {
    Tensor table = Tensor::from_data({4, 2}, {0, 1, 10, 11, 20, 21, 30, 31}, true);
    Tensor rows = embedding_rows(table, {2, 0, 2});
    CHECK(rows.at(0, 0) == 20.0);
    CHECK(rows.at(1, 1) == 1.0);
    Tensor loss = sum_all(rows);
    backward(loss);
    CHECK(table.grad()[2 * 2] == 2.0);  // row 2 hit twice
    CHECK(table.grad()[0] == 1.0);
    CHECK(table.grad()[3 * 2] == 0.0);
    CHECK_THROWS_AS(embedding_rows(table, {4}), IndexError);
}

TEST_CASE("top_k_filter semantics") {
    Tensor w = Tensor::from_data({1, 3}, {0.5, 0.3, 0.2});
    Tensor k3 = top_k_filter(w, 3);
    CHECK(k3.node().get() == w.node().get());  // identity, bit-equal

    Tensor k1 = top_k_filter(w, 1);
    CHECK(k1.at(0, 0) == 1.0);
    CHECK(k1.at(0, 1) == 0.0);
    CHECK(k1.at(0, 2) == 0.0);

    Tensor k2 = top_k_filter(w, 2);
    CHECK(k2.at(0, 0) == doctest::Approx(0.625).epsilon(1e-12));
    CHECK(k2.at(0, 1) == doctest::Approx(0.375).epsilon(1e-12));
    CHECK(k2.at(0, 2) == 0.0);

    // idempotent for fixed k
    Tensor k2b = top_k_filter(k2, 2);
    for (int j = 0; j < 3; ++j) CHECK(k2b.at(0, j) == doctest::Approx(k2.at(0, j)).epsilon(1e-15));

    // ties resolved toward the lower column index
    Tensor tie = top_k_filter(Tensor::from_data({1, 3}, {0.4, 0.4, 0.2}), 1);
    CHECK(tie.at(0, 0) == 1.0);

    CHECK_THROWS_AS(top_k_filter(w, 0), ConfigError);
    CHECK_THROWS_AS(top_k_filter(w, 4), ConfigError);
}

TEST_CASE("masked cross entropy") {
    // uniform logits over vocab 4 -> ln 4 per token
    Tensor logits = Tensor::zeros({3, 4});
    Tensor l = masked_cross_entropy(logits, {0, 1, 2}, {1, 1, 1});
    CHECK(l.item() == doctest::Approx(std::log(4.0)).epsilon(1e-12));

    // near-one-hot logits on targets -> ~0
    Tensor sharp = Tensor::from_data({2, 3}, {100, 0, 0, 0, 100, 0});
    CHECK(masked_cross_entropy(sharp, {0, 1}, {1, 1}).item() < 1e-6);

    // excluded positions are irrelevant
    Tensor mixed = Tensor::from_data({2, 3}, {100, 0, 0, -50, 999, 3});
    CHECK(masked_cross_entropy(mixed, {0, 0}, {1, 0}).item() ==
          doctest::Approx(masked_cross_entropy(sharp, {0, 2}, {1, 0}).item()).epsilon(1e-12));

    CHECK_THROWS_AS(masked_cross_entropy(logits, {0, 1, 2}, {0, 0, 0}), UsageError);
}

TEST_CASE("operations are deterministic") {
    Rng rng(41);
    auto a = random_mat(5, 5, rng);
    auto b = random_mat(5, 5, rng);
    Tensor c1 = matmul(from_mat(a), from_mat(b));
    Tensor c2 = matmul(from_mat(a), from_mat(b));
    CHECK(c1.value() == c2.value());
    Tensor s1 = softmax(from_mat(a), 1);
    Tensor s2 = softmax(from_mat(a), 1);
    CHECK(s1.value() == s2.value());
}

TEST_CASE("non-finite values are an error state") {
    Tensor bad = Tensor::from_data({1, 2}, {1.0, HUGE_VAL});
    CHECK_THROWS_AS(bad.assert_finite("test"), CorruptionError);
    Tensor ok = Tensor::from_data({1, 2}, {1.0, 2.0});
    CHECK_NOTHROW(ok.assert_finite("test"));
}

TEST_CASE("no-grad mode skips graph construction") {
    Tensor w = Tensor::full({2, 2}, 2.0, true);
    {
        NoGradGuard ng;
        Tensor y = matmul(w, w);
        CHECK_FALSE(y.requires_grad());
    }
    Tensor y = matmul(w, w);
    CHECK(y.requires_grad());
}
