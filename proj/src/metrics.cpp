#include "vpbench/metrics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <iostream>

#include "vpbench/error.hpp"

namespace vpbench::metrics {

namespace {

using Eigen::Index;

std::vector<double> to_luma(const FrameView& f) {
    std::vector<double> out(f.height * f.width);
    if (f.channels == 1) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = f.data[i];
        return out;
    }
    if (f.channels != 3)
        throw ShapeError("ssim: frames must have 1 or 3 channels");
    for (std::size_t i = 0; i < out.size(); ++i) {
        const float* px = f.data + i * 3;
        out[i] = 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
    }
    return out;
}

Eigen::MatrixXd to_eigen_sym(const std::vector<double>& values, std::size_t dim) {
    Eigen::MatrixXd m(static_cast<Index>(dim), static_cast<Index>(dim));
    for (std::size_t r = 0; r < dim; ++r)
        for (std::size_t c = 0; c < dim; ++c)
            m(static_cast<Index>(r), static_cast<Index>(c)) = values[r * dim + c];
    return 0.5 * (m + m.transpose());
}

/// PSD square root via symmetric eigendecomposition, eigenvalues clamped at 0.
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m);
    if (eig.info() != Eigen::Success)
        throw Error("frechet_distance: eigendecomposition did not converge");
    Eigen::VectorXd values = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return eig.eigenvectors() * values.asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace

double psnr(std::span<const float> a, std::span<const float> b) {
    if (a.size() != b.size() || a.empty())
        throw ShapeError("psnr: inputs must be non-empty and of equal size");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        acc += d * d;
    }
    const double mse = acc / static_cast<double>(a.size());
    if (mse <= 0.0) return kPsnrCapDb;
    return std::min(kPsnrCapDb, 10.0 * std::log10(1.0 / mse));
}

double psnr(const FrameView& a, const FrameView& b) {
    if (a.height != b.height || a.width != b.width || a.channels != b.channels)
        throw ShapeError("psnr: frame shape mismatch");
    return psnr(std::span<const float>(a.data, a.size()),
                std::span<const float>(b.data, b.size()));
}

double psnr(const Video& a, const Video& b) {
    if (!a.same_geometry(b)) throw ShapeError("psnr: video shape mismatch");
    return psnr(std::span<const float>(a.data), std::span<const float>(b.data));
}

double ssim(const FrameView& a, const FrameView& b, const SsimConfig& config) {
    if (a.height != b.height || a.width != b.width || a.channels != b.channels)
        throw ShapeError("ssim: frame shape mismatch");
    const std::size_t win = config.window;
    if (a.height < win || a.width < win)
        throw ShapeError("ssim: frame smaller than the " + std::to_string(win) +
                         "x" + std::to_string(win) + " window");
    const std::vector<double> ga = to_luma(a);
    const std::vector<double> gb = to_luma(b);
    const double c1 = config.c1(), c2 = config.c2();
    const double inv_n = 1.0 / static_cast<double>(win * win);

    double index_sum = 0.0;
    std::size_t index_count = 0;
    for (std::size_t y0 = 0; y0 + win <= a.height; y0 += config.stride) {
        for (std::size_t x0 = 0; x0 + win <= a.width; x0 += config.stride) {
            double sa = 0.0, sb = 0.0, saa = 0.0, sbb = 0.0, sab = 0.0;
            for (std::size_t y = y0; y < y0 + win; ++y) {
                const double* ra = ga.data() + y * a.width + x0;
                const double* rb = gb.data() + y * a.width + x0;
                for (std::size_t x = 0; x < win; ++x) {
                    sa += ra[x];
                    sb += rb[x];
                    saa += ra[x] * ra[x];
                    sbb += rb[x] * rb[x];
                    sab += ra[x] * rb[x];
                }
            }
            const double mu_a = sa * inv_n, mu_b = sb * inv_n;
            const double var_a = saa * inv_n - mu_a * mu_a;
            const double var_b = sbb * inv_n - mu_b * mu_b;
            const double cov = sab * inv_n - mu_a * mu_b;
            const double num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2);
            const double den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2);
            index_sum += num / den;
            ++index_count;
        }
    }
    return index_sum / static_cast<double>(index_count);
}

double ssim(const Video& a, const Video& b, const SsimConfig& config) {
    if (!a.same_geometry(b)) throw ShapeError("ssim: video shape mismatch");
    double acc = 0.0;
    for (std::size_t t = 0; t < a.frames; ++t)
        acc += ssim(FrameView(a, t), FrameView(b, t), config);
    return acc / static_cast<double>(a.frames);
}

std::vector<double> video_feature(const Video& v) {
    if (v.frames < 2) throw ShapeError("video_feature: needs at least 2 frames");
    if (v.channels != 3) throw ShapeError("video_feature: expects 3 channels");
    if (v.height % kFeatureGrid != 0 || v.width % kFeatureGrid != 0)
        throw ShapeError("video_feature: frame size must be divisible by 8");
    const std::size_t by = v.height / kFeatureGrid;
    const std::size_t bx = v.width / kFeatureGrid;
    const std::size_t cells = kFeatureGrid * kFeatureGrid;
    const double inv_block = 1.0 / static_cast<double>(by * bx);

    // blocks[t][c*cells + cell]
    std::vector<std::vector<double>> blocks(v.frames,
                                            std::vector<double>(3 * cells, 0.0));
    for (std::size_t t = 0; t < v.frames; ++t) {
        const float* frame = v.frame(t);
        for (std::size_t y = 0; y < v.height; ++y) {
            const std::size_t cy = y / by;
            for (std::size_t x = 0; x < v.width; ++x) {
                const std::size_t cell = cy * kFeatureGrid + x / bx;
                const float* px = frame + (y * v.width + x) * 3;
                for (std::size_t c = 0; c < 3; ++c)
                    blocks[t][c * cells + cell] += px[c];
            }
        }
        for (double& b : blocks[t]) b *= inv_block;
    }

    const std::size_t group = 3 * cells;  // 192
    std::vector<double> out(kFeatureDims, 0.0);
    const double inv_t = 1.0 / static_cast<double>(v.frames);
    const double inv_dt = 1.0 / static_cast<double>(v.frames - 1);
    for (std::size_t k = 0; k < group; ++k) {
        double mean = 0.0;
        for (std::size_t t = 0; t < v.frames; ++t) mean += blocks[t][k];
        mean *= inv_t;
        double var = 0.0;
        for (std::size_t t = 0; t < v.frames; ++t) {
            const double d = blocks[t][k] - mean;
            var += d * d;
        }
        double absdiff = 0.0;
        for (std::size_t t = 0; t + 1 < v.frames; ++t)
            absdiff += std::abs(blocks[t + 1][k] - blocks[t][k]);
        out[k] = mean;
        out[group + k] = std::sqrt(var * inv_t);
        out[2 * group + k] = absdiff * inv_dt;
    }
    return out;
}

GaussianMoments estimate_moments(const std::vector<std::vector<double>>& features) {
    if (features.empty()) throw DegenerateInputError("estimate_moments: no features");
    const std::size_t dim = features.front().size();
    for (const auto& f : features)
        if (f.size() != dim)
            throw ShapeError("estimate_moments: inconsistent feature dimensionality");

    GaussianMoments m;
    m.dim = dim;
    m.count = features.size();
    m.mean.assign(dim, 0.0);
    for (const auto& f : features)
        for (std::size_t i = 0; i < dim; ++i) m.mean[i] += f[i];
    for (double& v : m.mean) v /= static_cast<double>(m.count);

    m.cov.assign(dim * dim, 0.0);
    if (m.count < 2) return m;  // covariance left at zero for a single sample
    std::vector<double> centered(dim);
    for (const auto& f : features) {
        for (std::size_t i = 0; i < dim; ++i) centered[i] = f[i] - m.mean[i];
        for (std::size_t r = 0; r < dim; ++r) {
            const double cr = centered[r];
            double* row = m.cov.data() + r * dim;
            for (std::size_t c = r; c < dim; ++c) row[c] += cr * centered[c];
        }
    }
    const double inv = 1.0 / static_cast<double>(m.count - 1);
    for (std::size_t r = 0; r < dim; ++r)
        for (std::size_t c = r; c < dim; ++c) {
            const double v = m.cov[r * dim + c] * inv;
            m.cov[r * dim + c] = v;
            m.cov[c * dim + r] = v;
        }
    return m;
}

double frechet_distance(const GaussianMoments& p, const GaussianMoments& q) {
    if (p.dim != q.dim || p.dim == 0)
        throw ShapeError("frechet_distance: dimensionality mismatch");
    const std::size_t dim = p.dim;

    double mean_term = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
        const double d = p.mean[i] - q.mean[i];
        mean_term += d * d;
    }

    const Eigen::MatrixXd sp = to_eigen_sym(p.cov, dim);
    const Eigen::MatrixXd sq = to_eigen_sym(q.cov, dim);
    const Eigen::MatrixXd sp_half = psd_sqrt(sp);
    // tr((Sp^1/2 Sq Sp^1/2)^1/2): symmetrized product keeps the solver stable.
    Eigen::MatrixXd inner = sp_half * sq * sp_half;
    inner = 0.5 * (inner + inner.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(inner);
    if (eig.info() != Eigen::Success)
        throw Error("frechet_distance: eigendecomposition did not converge");
    const double trace_sqrt = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();

    const double value = mean_term + sp.trace() + sq.trace() - 2.0 * trace_sqrt;
    return std::max(0.0, value);
}

double fvd_lite(const std::vector<const Video*>& real,
                const std::vector<const Video*>& predicted,
                std::size_t batch_size) {
    if (real.size() < 2 || predicted.size() < 2)
        throw DegenerateInputError("fvd_lite: needs at least 2 videos on each side");
    if (batch_size == 0) batch_size = 1;

    std::size_t pred_len = predicted.front()->frames;
    for (const Video* v : predicted) pred_len = std::min(pred_len, v->frames);

    auto featurize = [&](const std::vector<const Video*>& videos) {
        std::vector<std::vector<double>> features;
        features.reserve(videos.size());
        for (std::size_t start = 0; start < videos.size(); start += batch_size) {
            const std::size_t end = std::min(videos.size(), start + batch_size);
            for (std::size_t i = start; i < end; ++i) {
                const Video* v = videos[i];
                if (v->frames > pred_len) {
                    // Context frames at the head are discarded so real and
                    // predicted clips cover the same steps.
                    features.push_back(video_feature(v->slice(v->frames - pred_len, pred_len)));
                } else {
                    features.push_back(video_feature(*v));
                }
            }
        }
        return features;
    };

    const auto real_features = featurize(real);
    const auto pred_features = featurize(predicted);
    if (real_features.size() < 2 * kFeatureDims || pred_features.size() < 2 * kFeatureDims)
        std::cerr << "[vpbench] fvd_lite: fewer than " << 2 * kFeatureDims
                  << " videos per side; covariance estimate is low-rank\n";
    return frechet_distance(estimate_moments(real_features),
                            estimate_moments(pred_features));
}

}  // namespace vpbench::metrics
