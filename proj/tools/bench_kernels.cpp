// Compares the parallel kernels against their serial references: wall time,
// speedup, and a bitwise equality check (the parallel versions keep the same
// per-element accumulation order, so outputs must match exactly).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <string>
#include <vector>

#include "distill/kernels.hpp"
#include "distill/rng.hpp"

namespace {

using distill::MatrixF32;

MatrixF32 random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
    MatrixF32 m(rows, cols);
    distill::SplitMix64 rng(seed);
    for (float& v : m.data) v = rng.next_signed_unit();
    return m;
}

template <typename F>
double best_ms(F&& f, int reps) {
    double best = 1e300;
    for (int i = 0; i < reps; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        f();
        const auto t1 = std::chrono::steady_clock::now();
        best = std::min(best, std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    return best;
}

bool bitwise_equal(const MatrixF32& a, const MatrixF32& b) {
    return a.same_shape(b) &&
           std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(float)) == 0;
}

int g_failures = 0;

void report(const char* name, double macs, double serial_ms, double parallel_ms, bool equal) {
    std::printf("%-28s serial %8.2f ms  parallel %8.2f ms  speedup %5.2fx  %7.2f GMAC/s  %s\n",
                name, serial_ms, parallel_ms, serial_ms / parallel_ms,
                macs / (parallel_ms * 1e6), equal ? "bitwise-equal" : "MISMATCH");
    if (!equal) ++g_failures;
}

void bench_matmul(std::size_t n, int reps) {
    const MatrixF32 a = random_matrix(n, n, 1);
    const MatrixF32 b = random_matrix(n, n, 2);
    MatrixF32 serial, parallel;
    const double serial_ms =
        best_ms([&] { serial = distill::reference::matmul_serial(a, b); }, reps);
    const double parallel_ms = best_ms([&] { parallel = distill::matmul(a, b); }, reps);
    const std::string name = "matmul " + std::to_string(n) + "^3";
    report(name.c_str(), double(n) * n * n, serial_ms, parallel_ms,
           bitwise_equal(serial, parallel));
}

void bench_attention(std::size_t len, std::size_t head_dim, int reps) {
    const MatrixF32 q = random_matrix(len, head_dim, 3);
    const MatrixF32 k = random_matrix(len, head_dim, 4);
    const MatrixF32 v = random_matrix(len, head_dim, 5);
    std::vector<std::int64_t> pos(len);
    for (std::size_t i = 0; i < len; ++i) pos[i] = static_cast<std::int64_t>(i);
    const float scale = 1.0f / std::sqrt(static_cast<float>(head_dim));

    MatrixF32 serial, parallel;
    const double serial_ms = best_ms(
        [&] { serial = distill::reference::causal_attention_head_serial(q, k, v, pos, pos, scale); },
        reps);
    const double parallel_ms =
        best_ms([&] { parallel = distill::causal_attention_head(q, k, v, pos, pos, scale); }, reps);
    // score + value MACs over the causal prefix
    const double macs = double(len) * (len + 1) / 2 * head_dim * 2;
    const std::string name =
        "attention len=" + std::to_string(len) + " d=" + std::to_string(head_dim);
    report(name.c_str(), macs, serial_ms, parallel_ms, bitwise_equal(serial, parallel));
}

} // namespace

int main(int argc, char** argv) {
    int threads = 0;
    if (argc > 1) threads = std::atoi(argv[1]);
    if (threads > 0) distill::set_kernel_threads(threads);
    std::printf("kernel threads: %d\n", distill::kernel_threads());

    const int reps = 3;
    bench_matmul(256, reps);
    bench_matmul(512, reps);
    bench_attention(1024, 64, reps);
    bench_attention(2048, 64, reps);
    return g_failures == 0 ? 0 : 1;
}
