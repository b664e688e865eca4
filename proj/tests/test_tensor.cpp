#include <catch2/catch_amalgamated.hpp>

#include "oracles.hpp"
#include "vbn/rng.hpp"
#include "vbn/tensor.hpp"

using namespace vbn;

TEST_CASE("matmul identity and zero cases") {
    Tensor eye({2, 2}, {1, 0, 0, 1});
    Tensor a({2, 2}, {1, 2, 3, 4});
    Tensor out = matmul(eye, a);
    for (size_t i = 0; i < 4; ++i) CHECK(out.at(i) == a.at(i));

    Tensor z({2, 3});
    Rng rng(7);
    Tensor b = oracle::random_tensor({3, 4}, rng);
    Tensor zz = matmul(z, b);
    for (size_t i = 0; i < zz.numel(); ++i) CHECK(zz.at(i) == 0.0f);
}

TEST_CASE("matmul 2x2 hand value") {
    Tensor a({2, 2}, {1, 2, 3, 4});
    Tensor b({2, 2}, {5, 6, 7, 8});
    Tensor c = matmul(a, b);
    CHECK(c(0, 0) == 19.0f);
    CHECK(c(0, 1) == 22.0f);
    CHECK(c(1, 0) == 43.0f);
    CHECK(c(1, 1) == 50.0f);
    // agrees with the naive triple loop on the same input
    Tensor ref = oracle::naive_matmul(a, b);
    CHECK(oracle::max_abs_diff(c, ref) == 0.0);
}

TEST_CASE("matmul shape mismatch names both shapes") {
    Tensor a({2, 3});
    Tensor b({4, 2});
    try {
        matmul(a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[2x3]") != std::string::npos);
        CHECK(msg.find("[4x2]") != std::string::npos);
    }
}

TEST_CASE("matmul associativity on random small tensors") {
    Rng rng(123);
    for (int trial = 0; trial < 20; ++trial) {
        const size_t m = 1 + rng.next_index(5), k = 1 + rng.next_index(5), n = 1 + rng.next_index(5),
                     q = 1 + rng.next_index(5);
        Tensor a = oracle::random_tensor({m, k}, rng);
        Tensor b = oracle::random_tensor({k, n}, rng);
        Tensor c = oracle::random_tensor({n, q}, rng);
        Tensor left = matmul(matmul(a, b), c);
        Tensor right = matmul(a, matmul(b, c));
        CHECK(oracle::rel_error(left, right) < 1e-4);
    }
}

TEST_CASE("matmul_nt and matmul_tn agree with explicit transposes") {
    Rng rng(5);
    Tensor a = oracle::random_tensor({3, 4}, rng);
    Tensor b = oracle::random_tensor({5, 4}, rng);
    Tensor bt({4, 5});
    for (size_t i = 0; i < 5; ++i)
        for (size_t j = 0; j < 4; ++j) bt(j, i) = b(i, j);
    CHECK(oracle::max_abs_diff(matmul_nt(a, b), oracle::naive_matmul(a, bt)) < 1e-6);

    Tensor c = oracle::random_tensor({4, 3}, rng);
    Tensor d = oracle::random_tensor({4, 6}, rng);
    Tensor ct({3, 4});
    for (size_t i = 0; i < 4; ++i)
        for (size_t j = 0; j < 3; ++j) ct(j, i) = c(i, j);
    CHECK(oracle::max_abs_diff(matmul_tn(c, d), oracle::naive_matmul(ct, d)) < 1e-6);
}

TEST_CASE("im2col single window equals flattened input") {
    Tensor x({1, 2, 2}, {1, 2, 3, 4});
    Tensor cols = im2col(x, 2, 2, 1, 0);
    REQUIRE(cols.shape() == std::vector<size_t>{4, 1});
    for (size_t i = 0; i < 4; ++i) CHECK(cols.at(i) == x.at(i));
}

TEST_CASE("im2col of zero input is zero") {
    Tensor x({2, 4, 4});
    Tensor cols = im2col(x, 3, 3, 1, 1);
    for (size_t i = 0; i < cols.numel(); ++i) CHECK(cols.at(i) == 0.0f);
}

TEST_CASE("im2col padded column layout") {
    // 1x3x3 ramp, 3x3 kernel, pad 1: nine columns, one per output position.
    Tensor x({1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    Tensor cols = im2col(x, 3, 3, 1, 1);
    REQUIRE(cols.shape() == std::vector<size_t>{9, 9});
    // column 0 covers input rows/cols [-1..1]: 5 padding zeros at the top-left border
    size_t zeros = 0;
    for (size_t r = 0; r < 9; ++r) {
        if (cols(r, 0) == 0.0f) ++zeros;
    }
    CHECK(zeros == 5);
    // index arithmetic: kernel cell (u=1,v=1) of column 0 is input (0,0)
    CHECK(cols(4, 0) == 1.0f);
    // center column (output position (1,1)) sees the whole image
    for (size_t r = 0; r < 9; ++r) CHECK(cols(r, 4) == static_cast<float>(r + 1));
}

TEST_CASE("im2col rejects non-integral output extents") {
    Tensor x({1, 5, 5});
    CHECK_THROWS_AS(im2col(x, 2, 2, 2, 0), ConfigError);
}

TEST_CASE("im2col + matmul equals direct convolution over random shapes") {
    Rng rng(99);
    int done = 0;
    while (done < 40) {
        const size_t c = 1 + rng.next_index(5), h = 3 + rng.next_index(6), w = 3 + rng.next_index(6);
        const size_t kh = 1 + rng.next_index(3), kw = 1 + rng.next_index(3);
        const size_t s = 1 + rng.next_index(2), p = rng.next_index(2);
        if (h + 2 * p < kh || w + 2 * p < kw) continue;
        if ((h + 2 * p - kh) % s != 0 || (w + 2 * p - kw) % s != 0) continue;
        const size_t oc = 1 + rng.next_index(4);
        const size_t out_h = (h + 2 * p - kh) / s + 1;
        const size_t out_w = (w + 2 * p - kw) / s + 1;

        Tensor x = oracle::random_tensor({1, c, h, w}, rng);
        Tensor weight = oracle::random_tensor({oc, c, kh, kw}, rng);
        Tensor bias = oracle::random_tensor({oc}, rng);

        Tensor xi = x.reshaped({c, h, w});
        Tensor cols = im2col(xi, kh, kw, s, p);
        Tensor w_mat = weight.reshaped({oc, c * kh * kw});
        Tensor y_mat = matmul(w_mat, cols);
        Tensor y({1, oc, out_h, out_w});
        for (size_t o = 0; o < oc; ++o)
            for (size_t t = 0; t < out_h * out_w; ++t) y.at(o * out_h * out_w + t) = y_mat.at(o * out_h * out_w + t) + bias.at(o);

        Tensor ref = oracle::direct_conv2d(x, weight, bias, s, p, p, out_h, out_w);
        CHECK(oracle::rel_error(y, ref) < 1e-5);
        ++done;
    }
}

TEST_CASE("reduce sum, max, mean") {
    Tensor ones = Tensor::full({2, 3}, 1.0f);
    Tensor s = reduce(ones, Reduce::Sum);
    REQUIRE(s.numel() == 1);
    CHECK(s.at(0) == 6.0f);

    Tensor m({2}, {-1.0f, -5.0f});
    CHECK(reduce(m, Reduce::Max).at(0) == -1.0f);

    Tensor v({4}, {1, 2, 3, 4});
    CHECK(reduce(v, Reduce::Mean).at(0) == 2.5f);
}

TEST_CASE("reduce over a single axis") {
    Tensor x({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor rows = reduce(x, Reduce::Sum, {1});
    REQUIRE(rows.shape() == std::vector<size_t>{2});
    CHECK(rows.at(0) == 6.0f);
    CHECK(rows.at(1) == 15.0f);
    Tensor cols = reduce(x, Reduce::Max, {0});
    REQUIRE(cols.shape() == std::vector<size_t>{3});
    CHECK(cols.at(0) == 4.0f);
    CHECK(cols.at(2) == 6.0f);
}

TEST_CASE("reduce rejects bad axes") {
    Tensor x({2, 2});
    CHECK_THROWS_AS(reduce(x, Reduce::Sum, {5}), DomainError);
}

TEST_CASE("tensor shape validation") {
    CHECK_THROWS_AS(Tensor({2, 0, 3}), ShapeError);
    CHECK_THROWS_AS(Tensor({2, 2}, {1.0f}), ShapeError);
    Tensor s = Tensor::scalar(3.0f);
    CHECK(s.numel() == 1);
    CHECK(s.rank() == 0);
}

TEST_CASE("rng reproducibility: same seed, same stream") {
    Rng a(42), b(42);
    for (int i = 0; i < 10000; ++i) REQUIRE(a.next_u64() == b.next_u64());
    Rng c(42), d(43);
    bool all_equal = true;
    for (int i = 0; i < 16; ++i) all_equal &= (c.next_u64() == d.next_u64());
    CHECK_FALSE(all_equal);
}

TEST_CASE("rng uniform and normal are deterministic per seed") {
    Rng a(7), b(7);
    for (int i = 0; i < 1000; ++i) {
        REQUIRE(a.next_float() == b.next_float());
    }
    Rng c(7), d(7);
    for (int i = 0; i < 1000; ++i) REQUIRE(c.normal() == d.normal());
}

TEST_CASE("rng child streams differ from parent and from each other") {
    Rng root(1);
    Rng c0 = root.child(0);
    Rng c1 = root.child(1);
    CHECK(c0.next_u64() != c1.next_u64());
    Rng c0_again = root.child(0);
    Rng c0_ref = root.child(0);
    for (int i = 0; i < 100; ++i) REQUIRE(c0_again.next_u64() == c0_ref.next_u64());
}

TEST_CASE("rng floats land in [0,1) and normals look centered") {
    Rng rng(11);
    double acc = 0.0;
    for (int i = 0; i < 20000; ++i) {
        const float f = rng.next_float();
        REQUIRE(f >= 0.0f);
        REQUIRE(f < 1.0f);
        acc += f;
    }
    CHECK(std::abs(acc / 20000.0 - 0.5) < 0.01);

    double nacc = 0.0, nsq = 0.0;
    for (int i = 0; i < 20000; ++i) {
        const float z = rng.normal();
        nacc += z;
        nsq += static_cast<double>(z) * z;
    }
    CHECK(std::abs(nacc / 20000.0) < 0.03);
    CHECK(std::abs(nsq / 20000.0 - 1.0) < 0.05);
}
