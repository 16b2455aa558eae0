// Serial vs OpenMP timings for each kernel at the shapes training and prep use.
// Usage: bench_kernels [--reps N]

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#include "fmow/kernels.hpp"
#include "fmow/rng.hpp"

using namespace fmow;
using namespace fmow::kernels;

namespace {

std::vector<double> random_doubles(std::size_t n, SplitMix64& rng) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.uniform(-1.0, 1.0);
    return v;
}

// Best of `reps` wall-clock runs, in milliseconds.
double best_ms(int reps, const std::function<void()>& fn) {
    double best = 1e300;
    for (int r = 0; r < reps; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        fn();
        best = std::min(best, std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
    }
    return best;
}

template <typename T>
bool same_bits(const std::vector<T>& a, const std::vector<T>& b) {
    return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(T)) == 0;
}

bool all_identical = true;

void row(const char* name, double serial_ms, double parallel_ms, bool identical) {
    std::printf("%-26s %10.3f %10.3f %8.2fx  %s\n", name, serial_ms, parallel_ms, serial_ms / parallel_ms,
                identical ? "identical" : "DIFFERENT");
    all_identical = all_identical && identical;
}

}  // namespace

int main(int argc, char** argv) {
    int reps = 5;
    for (int i = 1; i + 1 < argc; ++i)
        if (std::string(argv[i]) == "--reps") reps = std::max(1, std::atoi(argv[i + 1]));

    std::printf("threads %d, best of %d\n", parallel::max_threads(), reps);
    std::printf("%-26s %10s %10s %9s\n", "kernel", "serial ms", "omp ms", "speedup");
    SplitMix64 rng(1);

    // hidden layer of a 256-sample batch, then the output layer
    for (const DenseShape shape : {DenseShape{256, 90, 1024}, DenseShape{256, 1024, 63}}) {
        const auto wt = random_doubles(shape.n_in * shape.n_out, rng);
        const auto bias = random_doubles(shape.n_out, rng);
        const auto in = random_doubles(shape.batch * shape.n_in, rng);
        const auto delta = random_doubles(shape.batch * shape.n_out, rng);
        std::vector<double> out_s(shape.batch * shape.n_out), out_p(out_s.size());
        std::vector<double> gw_s(shape.n_in * shape.n_out), gw_p(gw_s.size()), gb_s(shape.n_out), gb_p(shape.n_out);
        std::vector<double> gin_s(shape.batch * shape.n_in), gin_p(gin_s.size());
        char name[64];

        std::snprintf(name, sizeof name, "dense_forward %zux%zu", shape.n_in, shape.n_out);
        const double f_s = best_ms(reps, [&] { serial::dense_forward(shape, wt, bias, in, out_s); });
        const double f_p = best_ms(reps, [&] { parallel::dense_forward(shape, wt, bias, in, out_p); });
        row(name, f_s, f_p, same_bits(out_s, out_p));

        std::snprintf(name, sizeof name, "dense_weight_grad %zux%zu", shape.n_in, shape.n_out);
        const double w_s = best_ms(reps, [&] { serial::dense_weight_grad(shape, delta, in, gw_s, gb_s); });
        const double w_p = best_ms(reps, [&] { parallel::dense_weight_grad(shape, delta, in, gw_p, gb_p); });
        row(name, w_s, w_p, same_bits(gw_s, gw_p) && same_bits(gb_s, gb_p));

        std::snprintf(name, sizeof name, "dense_input_grad %zux%zu", shape.n_in, shape.n_out);
        const double i_s = best_ms(reps, [&] { serial::dense_input_grad(shape, wt, delta, gin_s); });
        const double i_p = best_ms(reps, [&] { parallel::dense_input_grad(shape, wt, delta, gin_p); });
        row(name, i_s, i_p, same_bits(gin_s, gin_p));
    }

    {
        const ResizeShape shape{1200, 900, 224, 224, 3};
        std::vector<float> in(shape.in_w * shape.in_h * shape.bands);
        for (float& x : in) x = static_cast<float>(rng.uniform());
        std::vector<float> out_s(shape.out_w * shape.out_h * shape.bands), out_p(out_s.size());
        const double s = best_ms(reps, [&] { serial::resize_bilinear(shape, in, out_s); });
        const double p = best_ms(reps, [&] { parallel::resize_bilinear(shape, in, out_p); });
        row("resize_bilinear 1200x900", s, p, same_bits(out_s, out_p));
    }

    {
        std::vector<int> truth(2'000'000), predicted(truth.size());
        for (std::size_t i = 0; i < truth.size(); ++i) {
            truth[i] = static_cast<int>(rng.below(63));
            predicted[i] = static_cast<int>(rng.below(63));
        }
        std::vector<std::int64_t> c_s(63 * 63), c_p(63 * 63);
        const double s = best_ms(reps, [&] {
            std::fill(c_s.begin(), c_s.end(), 0);
            serial::confusion_accumulate(63, truth, predicted, c_s);
        });
        const double p = best_ms(reps, [&] {
            std::fill(c_p.begin(), c_p.end(), 0);
            parallel::confusion_accumulate(63, truth, predicted, c_p);
        });
        row("confusion 2M pairs", s, p, same_bits(c_s, c_p));
    }
    return all_identical ? 0 : 1;
}
