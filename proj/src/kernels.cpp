#include "distill/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace distill {

namespace {

int g_threads =
#ifdef _OPENMP
    0; // 0 = use the OpenMP default
#else
    1;
#endif

int effective_threads() {
#ifdef _OPENMP
    return g_threads > 0 ? g_threads : omp_get_max_threads();
#else
    return 1;
#endif
}

[[noreturn]] void shape_error(const std::string& op, const MatrixF32& a, const MatrixF32& b) {
    throw std::invalid_argument(op + ": shape mismatch, a is " + std::to_string(a.rows) + "x" +
                                std::to_string(a.cols) + ", b is " + std::to_string(b.rows) +
                                "x" + std::to_string(b.cols));
}

// Inner product over the shared dimension, always left to right. Every
// matmul element and every attention score goes through here so the
// accumulation order is the same in serial and parallel builds.
float dot(const float* a, const float* b, std::size_t n) {
    float acc = 0.0f;
    for (std::size_t i = 0; i < n; ++i) {
        acc += a[i] * b[i];
    }
    return acc;
}

float dot_strided(const float* a, const float* b, std::size_t n, std::size_t stride_b) {
    float acc = 0.0f;
    for (std::size_t i = 0; i < n; ++i) {
        acc += a[i] * b[i * stride_b];
    }
    return acc;
}

void matmul_rows(const MatrixF32& a, const MatrixF32& b, bool transpose_b, MatrixF32& out,
                 std::int64_t row_begin, std::int64_t row_end) {
    const std::size_t shared = a.cols;
    for (std::int64_t i = row_begin; i < row_end; ++i) {
        const float* arow = a.data.data() + static_cast<std::size_t>(i) * shared;
        float* orow = out.data.data() + static_cast<std::size_t>(i) * out.cols;
        if (transpose_b) {
            for (std::size_t j = 0; j < out.cols; ++j) {
                orow[j] = dot(arow, b.data.data() + j * shared, shared);
            }
        } else {
            for (std::size_t j = 0; j < out.cols; ++j) {
                orow[j] = dot_strided(arow, b.data.data() + j, shared, b.cols);
            }
        }
    }
}

void check_matmul_shapes(const MatrixF32& a, const MatrixF32& b, bool transpose_b) {
    const std::size_t b_inner = transpose_b ? b.cols : b.rows;
    if (a.cols != b_inner) {
        shape_error(transpose_b ? "matmul(transpose_b)" : "matmul", a, b);
    }
}

// Prefix lengths for every query row; throws on an empty context so the
// parallel loop below never has to.
std::vector<std::size_t> attended_counts(std::span<const std::int64_t> query_positions,
                                         std::span<const std::int64_t> key_positions) {
    std::vector<std::size_t> counts(query_positions.size());
    for (std::size_t i = 0; i < query_positions.size(); ++i) {
        counts[i] = causal_prefix_len(key_positions, query_positions[i]);
        if (counts[i] == 0) {
            throw std::invalid_argument("causal_attention_head: query at position " +
                                        std::to_string(query_positions[i]) +
                                        " attends to no keys (empty context)");
        }
    }
    return counts;
}

void attention_row(const MatrixF32& queries, const MatrixF32& keys, const MatrixF32& values,
                   float scale, std::size_t attended, std::size_t row, MatrixF32& out,
                   std::vector<float>& scratch) {
    const std::size_t dim = queries.cols;
    const float* q = queries.data.data() + row * dim;

    scratch.resize(attended);
    for (std::size_t j = 0; j < attended; ++j) {
        scratch[j] = dot(q, keys.data.data() + j * dim, dim) * scale;
    }
    softmax_inplace(scratch);

    float* o = out.data.data() + row * dim;
    std::fill(o, o + dim, 0.0f);
    for (std::size_t j = 0; j < attended; ++j) {
        const float w = scratch[j];
        const float* v = values.data.data() + j * dim;
        for (std::size_t c = 0; c < dim; ++c) {
            o[c] += w * v[c];
        }
    }
}

} // namespace

void set_kernel_threads(int n) {
    g_threads = n < 0 ? 0 : n;
}

int kernel_threads() {
    return effective_threads();
}

MatrixF32 matmul(const MatrixF32& a, const MatrixF32& b, bool transpose_b) {
    check_matmul_shapes(a, b, transpose_b);
    MatrixF32 out(a.rows, transpose_b ? b.rows : b.cols);
#ifdef _OPENMP
    const std::int64_t n_rows = static_cast<std::int64_t>(a.rows);
    const bool parallel = effective_threads() > 1 && a.rows * out.cols >= 4096;
#pragma omp parallel for schedule(static) num_threads(effective_threads()) if (parallel)
    for (std::int64_t i = 0; i < n_rows; ++i) {
        matmul_rows(a, b, transpose_b, out, i, i + 1);
    }
#else
    matmul_rows(a, b, transpose_b, out, 0, static_cast<std::int64_t>(a.rows));
#endif
    return out;
}

void softmax_inplace(std::span<float> row) {
    if (row.empty()) {
        throw std::invalid_argument("softmax: empty row");
    }
    float max_val = row[0];
    for (float v : row) {
        max_val = std::max(max_val, v);
    }
    float sum = 0.0f;
    for (float& v : row) {
        v = std::exp(v - max_val);
        sum += v;
    }
    for (float& v : row) {
        v /= sum;
    }
}

MatrixF32 softmax_rows(const MatrixF32& a) {
    MatrixF32 out = a;
    for (std::size_t i = 0; i < out.rows; ++i) {
        softmax_inplace(out.row(i));
    }
    return out;
}

MatrixF32 softmax_rows(const MatrixF32& a,
                       std::span<const std::int64_t> query_positions,
                       std::span<const std::int64_t> key_positions) {
    if (query_positions.size() != a.rows || key_positions.size() != a.cols) {
        throw std::invalid_argument("softmax_rows: mask positions do not match matrix shape");
    }
    MatrixF32 out(a.rows, a.cols);
    std::vector<float> live;
    for (std::size_t i = 0; i < a.rows; ++i) {
        live.clear();
        for (std::size_t j = 0; j < a.cols; ++j) {
            if (key_positions[j] <= query_positions[i]) {
                live.push_back(a.at(i, j));
            }
        }
        if (live.empty()) {
            throw std::invalid_argument("softmax_rows: row " + std::to_string(i) +
                                        " is fully masked (empty attention context)");
        }
        softmax_inplace(live);
        std::size_t next = 0;
        for (std::size_t j = 0; j < a.cols; ++j) {
            out.at(i, j) = key_positions[j] <= query_positions[i] ? live[next++] : 0.0f;
        }
    }
    return out;
}

std::vector<float> rmsnorm(std::span<const float> x, std::span<const float> gain, float eps) {
    if (x.size() != gain.size()) {
        throw std::invalid_argument("rmsnorm: length mismatch, x has " +
                                    std::to_string(x.size()) + ", gain has " +
                                    std::to_string(gain.size()));
    }
    if (!(eps > 0.0f)) {
        throw std::invalid_argument("rmsnorm: eps must be > 0");
    }
    float ss = 0.0f;
    for (float v : x) {
        ss += v * v;
    }
    const float inv = 1.0f / std::sqrt(ss / static_cast<float>(x.size()) + eps);
    std::vector<float> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] = x[i] * inv * gain[i];
    }
    return out;
}

MatrixF32 rope_apply(const MatrixF32& per_head,
                     std::span<const std::int64_t> positions,
                     float theta) {
    const std::size_t dim = per_head.cols;
    if (dim % 2 != 0) {
        throw std::invalid_argument("rope_apply: head_dim must be even, got " +
                                    std::to_string(dim));
    }
    if (positions.size() != per_head.rows) {
        throw std::invalid_argument("rope_apply: positions length " +
                                    std::to_string(positions.size()) + " != rows " +
                                    std::to_string(per_head.rows));
    }
    MatrixF32 out(per_head.rows, dim);
    for (std::size_t r = 0; r < per_head.rows; ++r) {
        const double pos = static_cast<double>(positions[r]);
        const float* src = per_head.data.data() + r * dim;
        float* dst = out.data.data() + r * dim;
        for (std::size_t pair = 0; pair * 2 < dim; ++pair) {
            const double freq = std::pow(static_cast<double>(theta),
                                         -2.0 * static_cast<double>(pair) /
                                             static_cast<double>(dim));
            const double angle = pos * freq;
            const float c = static_cast<float>(std::cos(angle));
            const float s = static_cast<float>(std::sin(angle));
            const float x0 = src[pair * 2];
            const float x1 = src[pair * 2 + 1];
            dst[pair * 2] = x0 * c - x1 * s;
            dst[pair * 2 + 1] = x0 * s + x1 * c;
        }
    }
    return out;
}

std::vector<std::size_t> top_k_indices(std::span<const float> scores, std::size_t k) {
    if (k < 1 || k > scores.size()) {
        throw std::invalid_argument("top_k_indices: k=" + std::to_string(k) +
                                    " out of range for " + std::to_string(scores.size()) +
                                    " scores");
    }
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k),
                      order.end(), [&](std::size_t lhs, std::size_t rhs) {
                          if (scores[lhs] != scores[rhs]) {
                              return scores[lhs] > scores[rhs];
                          }
                          return lhs < rhs; // tie: smaller index wins
                      });
    order.resize(k);
    std::sort(order.begin(), order.end());
    return order;
}

std::size_t causal_prefix_len(std::span<const std::int64_t> key_positions,
                              std::int64_t query_position) {
    const auto it = std::upper_bound(key_positions.begin(), key_positions.end(), query_position);
    return static_cast<std::size_t>(it - key_positions.begin());
}

MatrixF32 causal_attention_head(const MatrixF32& queries,
                                const MatrixF32& keys,
                                const MatrixF32& values,
                                std::span<const std::int64_t> query_positions,
                                std::span<const std::int64_t> key_positions,
                                float scale) {
    if (queries.cols != keys.cols || !keys.same_shape(values)) {
        shape_error("causal_attention_head", queries, keys);
    }
    if (query_positions.size() != queries.rows || key_positions.size() != keys.rows) {
        throw std::invalid_argument("causal_attention_head: position lengths do not match");
    }
    const std::vector<std::size_t> attended = attended_counts(query_positions, key_positions);
    MatrixF32 out(queries.rows, queries.cols);
#ifdef _OPENMP
    const std::int64_t n_rows = static_cast<std::int64_t>(queries.rows);
    const bool parallel = effective_threads() > 1 && queries.rows > 1;
#pragma omp parallel num_threads(effective_threads()) if (parallel)
    {
        std::vector<float> scratch;
#pragma omp for schedule(static)
        for (std::int64_t i = 0; i < n_rows; ++i) {
            attention_row(queries, keys, values, scale, attended[static_cast<std::size_t>(i)],
                          static_cast<std::size_t>(i), out, scratch);
        }
    }
#else
    std::vector<float> scratch;
    for (std::size_t i = 0; i < queries.rows; ++i) {
        attention_row(queries, keys, values, scale, attended[i], i, out, scratch);
    }
#endif
    return out;
}

namespace reference {

MatrixF32 matmul_serial(const MatrixF32& a, const MatrixF32& b, bool transpose_b) {
    check_matmul_shapes(a, b, transpose_b);
    MatrixF32 out(a.rows, transpose_b ? b.rows : b.cols);
    matmul_rows(a, b, transpose_b, out, 0, static_cast<std::int64_t>(a.rows));
    return out;
}

MatrixF32 causal_attention_head_serial(const MatrixF32& queries,
                                       const MatrixF32& keys,
                                       const MatrixF32& values,
                                       std::span<const std::int64_t> query_positions,
                                       std::span<const std::int64_t> key_positions,
                                       float scale) {
    if (queries.cols != keys.cols || !keys.same_shape(values)) {
        shape_error("causal_attention_head_serial", queries, keys);
    }
    if (query_positions.size() != queries.rows || key_positions.size() != keys.rows) {
        throw std::invalid_argument("causal_attention_head_serial: position lengths do not match");
    }
    const std::vector<std::size_t> attended = attended_counts(query_positions, key_positions);
    MatrixF32 out(queries.rows, queries.cols);
    std::vector<float> scratch;
    for (std::size_t i = 0; i < queries.rows; ++i) {
        attention_row(queries, keys, values, scale, attended[i], i, out, scratch);
    }
    return out;
}

} // namespace reference

} // namespace distill
