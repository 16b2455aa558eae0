#include <algorithm>
#include <cmath>

#include "fmow/kernels.hpp"

namespace fmow::kernels::serial {

void dense_forward(DenseShape sh, std::span<const double> wt, std::span<const double> bias,
                   std::span<const double> in, std::span<double> out) {
    for (std::size_t s = 0; s < sh.batch; ++s) {
        double* o = out.data() + s * sh.n_out;
        const double* x = in.data() + s * sh.n_in;
        std::copy(bias.begin(), bias.begin() + static_cast<std::ptrdiff_t>(sh.n_out), o);
        for (std::size_t i = 0; i < sh.n_in; ++i) {
            const double xi = x[i];
            if (xi == 0.0) continue;
            const double* w = wt.data() + i * sh.n_out;
            for (std::size_t k = 0; k < sh.n_out; ++k) o[k] += xi * w[k];
        }
    }
}

void dense_weight_grad(DenseShape sh, std::span<const double> delta, std::span<const double> in,
                       std::span<double> gw, std::span<double> gb) {
    for (std::size_t o = 0; o < sh.n_out; ++o) {
        double* g = gw.data() + o * sh.n_in;
        std::fill(g, g + sh.n_in, 0.0);
        double bsum = 0.0;
        for (std::size_t s = 0; s < sh.batch; ++s) {
            const double d = delta[s * sh.n_out + o];
            bsum += d;
            if (d == 0.0) continue;
            const double* x = in.data() + s * sh.n_in;
            for (std::size_t i = 0; i < sh.n_in; ++i) g[i] += d * x[i];
        }
        gb[o] = bsum;
    }
}

void dense_input_grad(DenseShape sh, std::span<const double> w, std::span<const double> delta,
                      std::span<double> gin) {
    for (std::size_t s = 0; s < sh.batch; ++s) {
        double* g = gin.data() + s * sh.n_in;
        std::fill(g, g + sh.n_in, 0.0);
        const double* d = delta.data() + s * sh.n_out;
        for (std::size_t o = 0; o < sh.n_out; ++o) {
            const double dv = d[o];
            if (dv == 0.0) continue;
            const double* wr = w.data() + o * sh.n_in;
            for (std::size_t i = 0; i < sh.n_in; ++i) g[i] += dv * wr[i];
        }
    }
}

void resize_bilinear(ResizeShape sh, std::span<const float> in, std::span<float> out) {
    const double sx = static_cast<double>(sh.in_w) / static_cast<double>(sh.out_w);
    const double sy = static_cast<double>(sh.in_h) / static_cast<double>(sh.out_h);
    for (std::size_t oy = 0; oy < sh.out_h; ++oy) {
        const double fy_src = std::clamp((oy + 0.5) * sy - 0.5, 0.0, static_cast<double>(sh.in_h - 1));
        const auto y0 = static_cast<std::size_t>(fy_src);
        const std::size_t y1 = std::min(y0 + 1, sh.in_h - 1);
        const double fy = fy_src - static_cast<double>(y0);
        for (std::size_t ox = 0; ox < sh.out_w; ++ox) {
            const double fx_src = std::clamp((ox + 0.5) * sx - 0.5, 0.0, static_cast<double>(sh.in_w - 1));
            const auto x0 = static_cast<std::size_t>(fx_src);
            const std::size_t x1 = std::min(x0 + 1, sh.in_w - 1);
            const double fx = fx_src - static_cast<double>(x0);
            for (std::size_t b = 0; b < sh.bands; ++b) {
                const double p00 = in[(y0 * sh.in_w + x0) * sh.bands + b];
                const double p01 = in[(y0 * sh.in_w + x1) * sh.bands + b];
                const double p10 = in[(y1 * sh.in_w + x0) * sh.bands + b];
                const double p11 = in[(y1 * sh.in_w + x1) * sh.bands + b];
                const double top = (1.0 - fx) * p00 + fx * p01;
                const double bot = (1.0 - fx) * p10 + fx * p11;
                out[(oy * sh.out_w + ox) * sh.bands + b] = static_cast<float>((1.0 - fy) * top + fy * bot);
            }
        }
    }
}

void confusion_accumulate(std::size_t n, std::span<const int> truth, std::span<const int> predicted,
                          std::span<std::int64_t> counts) {
    for (std::size_t k = 0; k < truth.size(); ++k) {
        counts[static_cast<std::size_t>(truth[k]) * n + static_cast<std::size_t>(predicted[k])] += 1;
    }
}

}  // namespace fmow::kernels::serial
