#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace distill {

// Dense row-major matrix of 32-bit floats. All kernels in this project keep
// entries finite; anything that could produce NaN/Inf is rejected up front.
struct MatrixF32 {
    std::size_t rows{0};
    std::size_t cols{0};
    std::vector<float> data; // rows * cols, row-major

    MatrixF32() = default;
    MatrixF32(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0f) {}

    float& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    float at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    std::span<float> row(std::size_t r) { return {data.data() + r * cols, cols}; }
    std::span<const float> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

    bool same_shape(const MatrixF32& other) const {
        return rows == other.rows && cols == other.cols;
    }

    static MatrixF32 identity(std::size_t n) {
        MatrixF32 m(n, n);
        for (std::size_t i = 0; i < n; ++i) {
            m.at(i, i) = 1.0f;
        }
        return m;
    }
};

} // namespace distill
