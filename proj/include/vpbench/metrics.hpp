#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "vpbench/video.hpp"

namespace vpbench::metrics {

inline constexpr double kPsnrCapDb = 100.0;  // reported for (near-)identical inputs

/// 10*log10(1/MSE) over [0,1] intensities, capped at kPsnrCapDb.
double psnr(std::span<const float> a, std::span<const float> b);
double psnr(const FrameView& a, const FrameView& b);
double psnr(const Video& a, const Video& b);

struct SsimConfig {
    std::size_t window = 8;  // sliding window side
    std::size_t stride = 1;
    double dynamic_range = 1.0;
    double c1() const { return (0.01 * dynamic_range) * (0.01 * dynamic_range); }
    double c2() const { return (0.03 * dynamic_range) * (0.03 * dynamic_range); }
};

/// Mean of the SSIM index map over uniform 8x8 windows. Color frames are
/// first converted to luma (0.299 R + 0.587 G + 0.114 B).
double ssim(const FrameView& a, const FrameView& b, const SsimConfig& config = {});
/// Per-video score: mean over frames.
double ssim(const Video& a, const Video& b, const SsimConfig& config = {});

inline constexpr std::size_t kFeatureGrid = 8;   // spatial downsample target
inline constexpr std::size_t kFeatureDims = 576; // 3 blocks of 3*8*8

/// Hand-crafted per-video descriptor: per channel and 8x8 cell, the temporal
/// mean, temporal std, and mean absolute frame difference of block-averaged
/// intensities, concatenated as [means | stds | absdiffs].
std::vector<double> video_feature(const Video& v);

/// Sample mean and unbiased covariance of a feature set.
struct GaussianMoments {
    std::size_t dim = 0;
    std::size_t count = 0;
    std::vector<double> mean;  // dim
    std::vector<double> cov;   // dim x dim, row-major, symmetric
};

GaussianMoments estimate_moments(const std::vector<std::vector<double>>& features);

/// Frechet distance between Gaussians:
/// |mu_p - mu_q|^2 + tr(Sp + Sq - 2 (Sp^1/2 Sq Sp^1/2)^1/2).
/// Eigenvalues are clamped at zero before square roots.
double frechet_distance(const GaussianMoments& p, const GaussianMoments& q);

/// Frechet distance between feature distributions of real and predicted
/// videos. Real videos longer than the common prediction length contribute
/// only their trailing frames (the context prefix is discarded). Batch size
/// only shapes the feature-extraction loop; the result is batch-invariant.
double fvd_lite(const std::vector<const Video*>& real,
                const std::vector<const Video*>& predicted,
                std::size_t batch_size = 32);

}  // namespace vpbench::metrics
