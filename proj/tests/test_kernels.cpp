#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <numeric>
#include <vector>

#include "distill/kernels.hpp"
#include "distill/rng.hpp"

using namespace distill;

namespace {

MatrixF32 make(std::size_t rows, std::size_t cols, std::initializer_list<float> vals) {
    MatrixF32 m(rows, cols);
    std::copy(vals.begin(), vals.end(), m.data.begin());
    return m;
}

MatrixF32 random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
    MatrixF32 m(rows, cols);
    SplitMix64 rng(seed);
    for (float& v : m.data) v = rng.next_signed_unit();
    return m;
}

bool bitwise_equal(const MatrixF32& a, const MatrixF32& b) {
    return a.same_shape(b) &&
           std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(float)) == 0;
}

std::vector<std::int64_t> iota_positions(std::size_t len, std::int64_t start = 0) {
    std::vector<std::int64_t> p(len);
    std::iota(p.begin(), p.end(), start);
    return p;
}

} // namespace

TEST_CASE("matmul matches a hand computation") {
    const MatrixF32 a = make(2, 2, {1, 2, 3, 4});
    const MatrixF32 b = make(2, 2, {5, 6, 7, 8});
    const MatrixF32 c = matmul(a, b);
    CHECK(c.at(0, 0) == 19.0f);
    CHECK(c.at(0, 1) == 22.0f);
    CHECK(c.at(1, 0) == 43.0f);
    CHECK(c.at(1, 1) == 50.0f);

    // b^T path: a (2x2) times b^T where b is 2x2 -> a * b^T
    const MatrixF32 ct = matmul(a, b, /*transpose_b=*/true);
    CHECK(ct.at(0, 0) == 1 * 5 + 2 * 6);
    CHECK(ct.at(0, 1) == 1 * 7 + 2 * 8);
    CHECK(ct.at(1, 0) == 3 * 5 + 4 * 6);
    CHECK(ct.at(1, 1) == 3 * 7 + 4 * 8);
}

TEST_CASE("matmul rejects mismatched shapes") {
    const MatrixF32 a(2, 3);
    const MatrixF32 b(4, 5);
    CHECK_THROWS_AS(matmul(a, b), std::invalid_argument);
    CHECK_THROWS_AS(matmul(a, b, true), std::invalid_argument);
}

TEST_CASE("parallel matmul is bitwise equal to the serial reference") {
    const MatrixF32 a = random_matrix(33, 17, 1);
    const MatrixF32 b = random_matrix(17, 29, 2);
    const MatrixF32 bt = random_matrix(29, 17, 3);
    CHECK(bitwise_equal(matmul(a, b), reference::matmul_serial(a, b)));
    CHECK(bitwise_equal(matmul(a, bt, true), reference::matmul_serial(a, bt, true)));
}

TEST_CASE("matmul output does not depend on the thread count") {
    const MatrixF32 a = random_matrix(40, 23, 4);
    const MatrixF32 b = random_matrix(23, 31, 5);
    const int before = kernel_threads();
    set_kernel_threads(1);
    const MatrixF32 one = matmul(a, b);
    set_kernel_threads(4);
    const MatrixF32 four = matmul(a, b);
    set_kernel_threads(before);
    CHECK(bitwise_equal(one, four));
}

TEST_CASE("softmax of known logits") {
    // softmax(ln 1, ln 2, ln 3) = (1, 2, 3) / 6
    std::vector<float> row{std::log(1.0f), std::log(2.0f), std::log(3.0f)};
    softmax_inplace(row);
    CHECK(row[0] == doctest::Approx(1.0 / 6).epsilon(1e-6));
    CHECK(row[1] == doctest::Approx(2.0 / 6).epsilon(1e-6));
    CHECK(row[2] == doctest::Approx(3.0 / 6).epsilon(1e-6));
}

TEST_CASE("softmax handles extreme logits without overflow") {
    std::vector<float> row{1000.0f, 1000.0f, -1000.0f};
    softmax_inplace(row);
    CHECK(row[0] == doctest::Approx(0.5).epsilon(1e-6));
    CHECK(row[1] == doctest::Approx(0.5).epsilon(1e-6));
    CHECK(row[2] == doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("row softmax sums to one") {
    const MatrixF32 a = random_matrix(7, 11, 6);
    const MatrixF32 s = softmax_rows(a);
    for (std::size_t i = 0; i < s.rows; ++i) {
        double sum = 0;
        for (std::size_t j = 0; j < s.cols; ++j) sum += s.at(i, j);
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-5));
    }
}

TEST_CASE("causal row softmax zeroes masked entries and renormalizes") {
    const MatrixF32 a = random_matrix(3, 3, 7);
    const auto pos = iota_positions(3);
    const MatrixF32 s = softmax_rows(a, pos, pos);
    CHECK(s.at(0, 1) == 0.0f);
    CHECK(s.at(0, 2) == 0.0f);
    CHECK(s.at(1, 2) == 0.0f);
    CHECK(s.at(0, 0) == 1.0f);
    CHECK(s.at(1, 0) + s.at(1, 1) == doctest::Approx(1.0).epsilon(1e-6));

    // A query placed before every key has an empty context.
    const std::vector<std::int64_t> early{-5, 1, 2};
    CHECK_THROWS_AS(softmax_rows(a, early, pos), std::invalid_argument);
}

TEST_CASE("rmsnorm matches the formula and rejects bad input") {
    const std::vector<float> x{3.0f, 4.0f};
    const std::vector<float> gain{2.0f, 0.5f};
    const float eps = 1e-5f;
    const auto y = rmsnorm(x, gain, eps);
    const double denom = std::sqrt((9.0 + 16.0) / 2.0 + eps);
    CHECK(y[0] == doctest::Approx(2.0 * 3.0 / denom).epsilon(1e-6));
    CHECK(y[1] == doctest::Approx(0.5 * 4.0 / denom).epsilon(1e-6));

    CHECK_THROWS_AS(rmsnorm(x, std::vector<float>{1.0f}, eps), std::invalid_argument);
    CHECK_THROWS_AS(rmsnorm(x, gain, 0.0f), std::invalid_argument);
}

TEST_CASE("rotary map rotates each pair by its own angle") {
    // head_dim 4: pair 0 turns by pos, pair 1 by pos * theta^(-1/2).
    const float theta = 10000.0f;
    MatrixF32 x(1, 4);
    x.at(0, 0) = 1.0f; // pair 0 = (1, 0)
    x.at(0, 2) = 1.0f; // pair 1 = (1, 0)
    const std::vector<std::int64_t> pos{2};
    const MatrixF32 y = rope_apply(x, pos, theta);
    CHECK(y.at(0, 0) == doctest::Approx(std::cos(2.0)).epsilon(1e-6));
    CHECK(y.at(0, 1) == doctest::Approx(std::sin(2.0)).epsilon(1e-6));
    const double slow = 2.0 * std::pow(10000.0, -0.5);
    CHECK(y.at(0, 2) == doctest::Approx(std::cos(slow)).epsilon(1e-6));
    CHECK(y.at(0, 3) == doctest::Approx(std::sin(slow)).epsilon(1e-6));
}

TEST_CASE("rotary map at position zero is the identity and preserves norms") {
    MatrixF32 x = random_matrix(4, 8, 8);
    const MatrixF32 y0 = rope_apply(x, std::vector<std::int64_t>{0, 0, 0, 0}, 10000.0f);
    CHECK(bitwise_equal(x, y0));

    const MatrixF32 y = rope_apply(x, iota_positions(4, 100), 10000.0f);
    for (std::size_t i = 0; i < x.rows; ++i) {
        double nx = 0, ny = 0;
        for (std::size_t j = 0; j < x.cols; ++j) {
            nx += double(x.at(i, j)) * x.at(i, j);
            ny += double(y.at(i, j)) * y.at(i, j);
        }
        CHECK(ny == doctest::Approx(nx).epsilon(1e-5));
    }
}

TEST_CASE("top-k keeps the largest scores, ties to the smaller index") {
    const std::vector<float> scores{5.0f, 1.0f, 5.0f, 0.0f};
    CHECK(top_k_indices(scores, 2) == std::vector<std::size_t>{0, 2});
    CHECK(top_k_indices(scores, 3) == std::vector<std::size_t>{0, 1, 2});
    CHECK(top_k_indices(scores, 4) == std::vector<std::size_t>{0, 1, 2, 3});
    // Selecting nothing is always an upstream bug, same as over-selecting.
    CHECK_THROWS_AS(top_k_indices(scores, 0), std::invalid_argument);
    CHECK_THROWS_AS(top_k_indices(scores, 5), std::invalid_argument);
}

TEST_CASE("top-k agrees with a sort-based oracle on random data") {
    SplitMix64 rng(42);
    std::vector<float> scores(1000);
    // Coarse quantization forces plenty of ties.
    for (float& s : scores) s = static_cast<float>(rng.next_below(32));
    for (std::size_t k : {1u, 7u, 500u, 999u, 1000u}) {
        // Oracle: stable sort by (-score, index), take k, re-sort ascending.
        std::vector<std::size_t> order(scores.size());
        std::iota(order.begin(), order.end(), 0u);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            if (scores[a] != scores[b]) return scores[a] > scores[b];
            return a < b;
        });
        std::vector<std::size_t> expected(order.begin(), order.begin() + k);
        std::sort(expected.begin(), expected.end());
        CHECK(top_k_indices(scores, k) == expected);
    }
}

TEST_CASE("causal prefix length is a binary search over positions") {
    const std::vector<std::int64_t> keys{0, 2, 4};
    CHECK(causal_prefix_len(keys, -1) == 0);
    CHECK(causal_prefix_len(keys, 0) == 1);
    CHECK(causal_prefix_len(keys, 3) == 2);
    CHECK(causal_prefix_len(keys, 4) == 3);
    CHECK(causal_prefix_len(keys, 99) == 3);
}

TEST_CASE("attention with a single visible key returns that value row") {
    const MatrixF32 q = random_matrix(1, 8, 9);
    const MatrixF32 k = random_matrix(1, 8, 10);
    const MatrixF32 v = random_matrix(1, 8, 11);
    const std::vector<std::int64_t> pos{0};
    const MatrixF32 out = causal_attention_head(q, k, v, pos, pos, 0.35f);
    for (std::size_t j = 0; j < 8; ++j) CHECK(out.at(0, j) == doctest::Approx(v.at(0, j)));
}

TEST_CASE("attention with equal scores averages the visible values") {
    // Zero queries make every score 0, so weights are uniform over the prefix.
    const MatrixF32 q(3, 4);
    const MatrixF32 k = random_matrix(3, 4, 12);
    MatrixF32 v(3, 4);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 4; ++j) v.at(i, j) = static_cast<float>(i + 1);
    const auto pos = iota_positions(3);
    const MatrixF32 out = causal_attention_head(q, k, v, pos, pos, 0.5f);
    CHECK(out.at(0, 0) == doctest::Approx(1.0));         // sees value 1
    CHECK(out.at(1, 0) == doctest::Approx(1.5));         // mean of 1, 2
    CHECK(out.at(2, 0) == doctest::Approx(2.0));         // mean of 1, 2, 3
}

TEST_CASE("attention honors the causal mask under decode-style positions") {
    // One query row placed at position 5 sees only keys at positions <= 5.
    const MatrixF32 q = random_matrix(1, 4, 13);
    const MatrixF32 k = random_matrix(4, 4, 14);
    MatrixF32 v(4, 4);
    v.at(3, 0) = 100.0f; // the masked row; must not leak into the output
    const std::vector<std::int64_t> qpos{5};
    const std::vector<std::int64_t> kpos{0, 2, 5, 7};
    const MatrixF32 full = causal_attention_head(q, k, v, qpos, kpos, 0.5f);

    MatrixF32 ktrim(3, 4);
    MatrixF32 vtrim(3, 4);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 4; ++j) {
            ktrim.at(i, j) = k.at(i, j);
            vtrim.at(i, j) = v.at(i, j);
        }
    const std::vector<std::int64_t> kpos3{0, 2, 5};
    const MatrixF32 trimmed = causal_attention_head(q, ktrim, vtrim, qpos, kpos3, 0.5f);
    CHECK(bitwise_equal(full, trimmed));
}

TEST_CASE("parallel attention is bitwise equal to the serial reference") {
    const std::size_t len = 65, d = 16;
    const MatrixF32 q = random_matrix(len, d, 15);
    const MatrixF32 k = random_matrix(len, d, 16);
    const MatrixF32 v = random_matrix(len, d, 17);
    const auto pos = iota_positions(len);
    const float scale = 1.0f / std::sqrt(static_cast<float>(d));
    const MatrixF32 par = causal_attention_head(q, k, v, pos, pos, scale);
    const MatrixF32 ser = reference::causal_attention_head_serial(q, k, v, pos, pos, scale);
    CHECK(bitwise_equal(par, ser));
}

TEST_CASE("thread count setting round-trips") {
    const int before = kernel_threads();
    set_kernel_threads(3);
    CHECK(kernel_threads() == 3);
    set_kernel_threads(before);
}
