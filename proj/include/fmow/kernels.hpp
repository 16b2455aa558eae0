#pragma once

// Data-parallel inner loops. Every kernel exists twice: `serial` is the
// reference and `parallel` is the OpenMP version. Each output element is
// accumulated in the same order in both, so results agree bit for bit
// regardless of thread count.
//
// Matrix layout is row-major throughout. Batched activations are
// sample-major: row s holds the features of sample s.

#include <cstddef>
#include <cstdint>
#include <span>

namespace fmow::kernels {

enum class Backend { serial, parallel };

struct DenseShape {
    std::size_t batch;
    std::size_t n_in;
    std::size_t n_out;
};

struct ResizeShape {
    std::size_t in_w, in_h, out_w, out_h, bands;
};

#define FMOW_KERNEL_DECLS                                                                                         \
    /* out[s][o] = b[o] + sum_i in[s][i] * wt[i][o]; wt is the transposed (n_in x n_out) weight matrix. */        \
    void dense_forward(DenseShape shape, std::span<const double> wt, std::span<const double> bias,                \
                       std::span<const double> in, std::span<double> out);                                        \
    /* gw[o][i] = sum_s delta[s][o] * in[s][i]; gb[o] = sum_s delta[s][o]. Overwrites gw and gb. */              \
    void dense_weight_grad(DenseShape shape, std::span<const double> delta, std::span<const double> in,           \
                           std::span<double> gw, std::span<double> gb);                                           \
    /* gin[s][i] = sum_o delta[s][o] * w[o][i]; w is (n_out x n_in). Overwrites gin. */                          \
    void dense_input_grad(DenseShape shape, std::span<const double> w, std::span<const double> delta,             \
                          std::span<double> gin);                                                                 \
    /* Bilinear resize, half-pixel centers, band-interleaved-by-pixel samples. */                                \
    void resize_bilinear(ResizeShape shape, std::span<const float> in, std::span<float> out);                     \
    /* counts[t * n + p] += 1 for every (t, p) pair. */                                                           \
    void confusion_accumulate(std::size_t n_classes, std::span<const int> truth, std::span<const int> predicted, \
                              std::span<std::int64_t> counts);

namespace serial {
FMOW_KERNEL_DECLS
}  // namespace serial

namespace parallel {
FMOW_KERNEL_DECLS
/// Worker count OpenMP will use (1 when built without OpenMP).
int max_threads();
}  // namespace parallel

#undef FMOW_KERNEL_DECLS

}  // namespace fmow::kernels
