#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

namespace vpbench::img {

/// Normalized 1-D Gaussian taps with radius ceil(3*sigma).
inline std::vector<double> gaussian_kernel(double sigma) {
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> taps(2 * radius + 1);
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        const double w = std::exp(-0.5 * (i * i) / (sigma * sigma));
        taps[i + radius] = w;
        sum += w;
    }
    for (double& w : taps) w /= sum;
    return taps;
}

/// Separable Gaussian blur of an H x W x C frame with clamp-to-edge sampling.
inline void gaussian_blur(const float* in, float* out, std::size_t h, std::size_t w,
                          std::size_t c, double sigma) {
    if (sigma <= 1e-12) {
        std::copy(in, in + h * w * c, out);
        return;
    }
    const std::vector<double> taps = gaussian_kernel(sigma);
    const int radius = static_cast<int>(taps.size() / 2);
    std::vector<float> tmp(h * w * c);

    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            for (std::size_t ch = 0; ch < c; ++ch) {
                double acc = 0.0;
                for (int k = -radius; k <= radius; ++k) {
                    const long xx = std::clamp<long>(static_cast<long>(x) + k, 0,
                                                     static_cast<long>(w) - 1);
                    acc += taps[k + radius] *
                           in[(y * w + static_cast<std::size_t>(xx)) * c + ch];
                }
                tmp[(y * w + x) * c + ch] = static_cast<float>(acc);
            }
        }
    }
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            for (std::size_t ch = 0; ch < c; ++ch) {
                double acc = 0.0;
                for (int k = -radius; k <= radius; ++k) {
                    const long yy = std::clamp<long>(static_cast<long>(y) + k, 0,
                                                     static_cast<long>(h) - 1);
                    acc += taps[k + radius] *
                           tmp[(static_cast<std::size_t>(yy) * w + x) * c + ch];
                }
                out[(y * w + x) * c + ch] = static_cast<float>(acc);
            }
        }
    }
}

/// Translate a frame by (dx, dy) pixels with bilinear sampling and
/// clamp-to-edge padding: out(x, y) = in(x - dx, y - dy).
inline void bilinear_shift(const float* in, float* out, std::size_t h, std::size_t w,
                           std::size_t c, double dx, double dy) {
    for (std::size_t y = 0; y < h; ++y) {
        const double sy = std::clamp(static_cast<double>(y) - dy, 0.0,
                                     static_cast<double>(h) - 1.0);
        const std::size_t y0 = static_cast<std::size_t>(sy);
        const std::size_t y1 = std::min(y0 + 1, h - 1);
        const double fy = sy - static_cast<double>(y0);
        for (std::size_t x = 0; x < w; ++x) {
            const double sx = std::clamp(static_cast<double>(x) - dx, 0.0,
                                         static_cast<double>(w) - 1.0);
            const std::size_t x0 = static_cast<std::size_t>(sx);
            const std::size_t x1 = std::min(x0 + 1, w - 1);
            const double fx = sx - static_cast<double>(x0);
            for (std::size_t ch = 0; ch < c; ++ch) {
                const double v00 = in[(y0 * w + x0) * c + ch];
                const double v01 = in[(y0 * w + x1) * c + ch];
                const double v10 = in[(y1 * w + x0) * c + ch];
                const double v11 = in[(y1 * w + x1) * c + ch];
                const double top = v00 + fx * (v01 - v00);
                const double bot = v10 + fx * (v11 - v10);
                const double v = top + fy * (bot - top);
                out[(y * w + x) * c + ch] = static_cast<float>(std::clamp(v, 0.0, 1.0));
            }
        }
    }
}

}  // namespace vpbench::img
