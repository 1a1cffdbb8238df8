#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "kmdx/kernels.hpp"

// Serial reference vs OpenMP kernels across the matrix sizes the attention
// stacks actually produce (joint sequences x embed widths).

namespace {

std::vector<double> random_mat(int rows, int cols, unsigned seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    std::vector<double> m(static_cast<size_t>(rows) * cols);
    for (double& v : m) v = dist(rng);
    return m;
}

void BM_matmul_serial(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    auto a = random_mat(n, n, 1), b = random_mat(n, n, 2);
    std::vector<double> c(static_cast<size_t>(n) * n);
    for (auto _ : state) {
        kmdx::kernels::matmul_serial(a.data(), b.data(), c.data(), n, n, n,
                                     false, false);
        benchmark::DoNotOptimize(c.data());
    }
    state.SetItemsProcessed(state.iterations() * 2LL * n * n * n);
}

void BM_matmul_omp(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    auto a = random_mat(n, n, 1), b = random_mat(n, n, 2);
    std::vector<double> c(static_cast<size_t>(n) * n);
    for (auto _ : state) {
        kmdx::kernels::matmul(a.data(), b.data(), c.data(), n, n, n, false,
                              false);
        benchmark::DoNotOptimize(c.data());
    }
    state.SetItemsProcessed(state.iterations() * 2LL * n * n * n);
}

void BM_softmax_serial(benchmark::State& state) {
    const int rows = static_cast<int>(state.range(0));
    const int cols = 128;
    auto x = random_mat(rows, cols, 3);
    std::vector<double> y(x.size());
    for (auto _ : state) {
        kmdx::kernels::softmax_rows_serial(x.data(), y.data(), rows, cols);
        benchmark::DoNotOptimize(y.data());
    }
}

void BM_softmax_omp(benchmark::State& state) {
    const int rows = static_cast<int>(state.range(0));
    const int cols = 128;
    auto x = random_mat(rows, cols, 3);
    std::vector<double> y(x.size());
    for (auto _ : state) {
        kmdx::kernels::softmax_rows(x.data(), y.data(), rows, cols);
        benchmark::DoNotOptimize(y.data());
    }
}

void BM_layer_norm_serial(benchmark::State& state) {
    const int rows = static_cast<int>(state.range(0));
    const int cols = 128;
    auto x = random_mat(rows, cols, 4);
    std::vector<double> gain(cols, 1.0), bias(cols, 0.0), y(x.size()),
        mean(rows), inv_std(rows);
    for (auto _ : state) {
        kmdx::kernels::layer_norm_rows_serial(x.data(), gain.data(),
                                              bias.data(), y.data(),
                                              mean.data(), inv_std.data(),
                                              rows, cols, 1e-5);
        benchmark::DoNotOptimize(y.data());
    }
}

void BM_layer_norm_omp(benchmark::State& state) {
    const int rows = static_cast<int>(state.range(0));
    const int cols = 128;
    auto x = random_mat(rows, cols, 4);
    std::vector<double> gain(cols, 1.0), bias(cols, 0.0), y(x.size()),
        mean(rows), inv_std(rows);
    for (auto _ : state) {
        kmdx::kernels::layer_norm_rows(x.data(), gain.data(), bias.data(),
                                       y.data(), mean.data(), inv_std.data(),
                                       rows, cols, 1e-5);
        benchmark::DoNotOptimize(y.data());
    }
}

}  // namespace

BENCHMARK(BM_matmul_serial)->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(BM_matmul_omp)->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(BM_softmax_serial)->Arg(256)->Arg(4096);
BENCHMARK(BM_softmax_omp)->Arg(256)->Arg(4096);
BENCHMARK(BM_layer_norm_serial)->Arg(256)->Arg(4096);
BENCHMARK(BM_layer_norm_omp)->Arg(256)->Arg(4096);

BENCHMARK_MAIN();
