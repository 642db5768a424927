// Copyright Contributors to the gavatar project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "gavatar/error.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace gav {

/// Interleaved RGB image stored as doubles in [0,1].
struct Image {
    int width = 0, height = 0;
    std::vector<double> data;

    Image() = default;
    Image(int w, int h, double fill = 0.0)
        : width(w), height(h), data(3 * static_cast<std::size_t>(w) * static_cast<std::size_t>(h), fill) {}

    std::size_t pixel_count() const { return static_cast<std::size_t>(width) * static_cast<std::size_t>(height); }
    double& at(int x, int y, int c) { return data[3 * (static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)) + static_cast<std::size_t>(c)]; }
    double at(int x, int y, int c) const { return data[3 * (static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)) + static_cast<std::size_t>(c)]; }

    bool operator==(const Image&) const = default;
};

inline void require_same_shape(std::size_t a, std::size_t b) {
    if (a != b) fail(ErrorCode::ShapeMismatch, "image sizes differ: " + std::to_string(a) + " vs " + std::to_string(b) + " values");
}

/// mean |pred − gt|; grad (if given) receives d/dpred.
inline double l1_loss(std::span<const double> pred, std::span<const double> gt, std::span<double> grad = {}, double scale = 1.0) {
    require_same_shape(pred.size(), gt.size());
    if (pred.empty()) return 0.0;
    const double inv = 1.0 / static_cast<double>(pred.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - gt[i];
        sum += std::abs(d);
        if (!grad.empty()) grad[i] += scale * inv * (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0));
    }
    return sum * inv;
}

inline double mse(std::span<const double> a, std::span<const double> b) {
    require_same_shape(a.size(), b.size());
    if (a.empty()) return 0.0;
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) sum += (a[i] - b[i]) * (a[i] - b[i]);
    return sum / static_cast<double>(a.size());
}

/// 10·log10(1/MSE); +inf when MSE < 1e-12.
inline double psnr(std::span<const double> a, std::span<const double> b) {
    const double m = mse(a, b);
    if (m < 1e-12) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / m);
}

inline std::string format_psnr(double db) {
    if (std::isinf(db)) return "inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", db);
    return buf;
}

inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

/// Normalized separable Gaussian window of the given size.
inline std::vector<double> gaussian_window(int size, double sigma) {
    std::vector<double> w(static_cast<std::size_t>(size) * static_cast<std::size_t>(size));
    const double c = 0.5 * (size - 1);
    double total = 0.0;
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const double v = std::exp(-((x - c) * (x - c) + (y - c) * (y - c)) / (2.0 * sigma * sigma));
            w[static_cast<std::size_t>(y * size + x)] = v;
            total += v;
        }
    for (double& v : w) v /= total;
    return w;
}

namespace detail {

/// SSIM of one window; optionally accumulates d/dx scaled by `scale` into gx.
/// Samples are addressed through idx so virtual patches need no copy.
inline double ssim_window(std::span<const double> x, std::span<const double> y, std::span<const std::size_t> idx,
                          std::span<const double> w, double* gx_base = nullptr, double scale = 0.0) {
    double mx = 0, my = 0;
    for (std::size_t k = 0; k < idx.size(); ++k) {
        mx += w[k] * x[idx[k]];
        my += w[k] * y[idx[k]];
    }
    double sxx = 0, syy = 0, sxy = 0;
    for (std::size_t k = 0; k < idx.size(); ++k) {
        const double dx = x[idx[k]] - mx, dy = y[idx[k]] - my;
        sxx += w[k] * dx * dx;
        syy += w[k] * dy * dy;
        sxy += w[k] * dx * dy;
    }
    const double a1 = 2 * mx * my + kSsimC1, a2 = 2 * sxy + kSsimC2;
    const double b1 = mx * mx + my * my + kSsimC1, b2 = sxx + syy + kSsimC2;
    const double s = a1 * a2 / (b1 * b2);
    if (gx_base) {
        for (std::size_t k = 0; k < idx.size(); ++k) {
            const double dx = x[idx[k]] - mx, dy = y[idx[k]] - my;
            const double d = s * (2 * my * w[k] / a1 + 2 * w[k] * dy / a2 - 2 * mx * w[k] / b1 - 2 * w[k] * dx / b2);
            gx_base[idx[k]] += scale * d;
        }
    }
    return s;
}

} // namespace detail

/// Mean SSIM over valid windows of an 11×11 Gaussian (σ = 1.5), averaged
/// over channels. Images smaller than the window use one window of the
/// largest fitting size.
inline double ssim(std::span<const double> a, std::span<const double> b, int width, int height, int window = 11,
                   double sigma = 1.5) {
    require_same_shape(a.size(), b.size());
    require_same_shape(a.size(), 3 * static_cast<std::size_t>(width) * static_cast<std::size_t>(height));
    const int win = std::min({window, width, height});
    const auto w = gaussian_window(win, sigma);
    std::vector<std::size_t> idx(w.size());
    double total = 0.0;
    std::size_t n = 0;
    for (int c = 0; c < 3; ++c)
        for (int y0 = 0; y0 + win <= height; ++y0)
            for (int x0 = 0; x0 + win <= width; ++x0) {
                for (int y = 0; y < win; ++y)
                    for (int x = 0; x < win; ++x)
                        idx[static_cast<std::size_t>(y * win + x)] =
                            3 * (static_cast<std::size_t>(y0 + y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x0 + x)) + static_cast<std::size_t>(c);
                total += detail::ssim_window(a, b, idx, w);
                ++n;
            }
    return total / static_cast<double>(n);
}

inline double ssim(const Image& a, const Image& b) {
    if (a.width != b.width || a.height != b.height) fail(ErrorCode::ShapeMismatch, "image sizes differ");
    return ssim(a.data, b.data, a.width, a.height);
}

struct S3imConfig {
    int samples = 4096;      // K
    int repeats = 10;        // M
    int patch = 64;          // virtual patch side, patch² = K
    int kernel = 4;
    int stride = 4;
    double sigma = 1.5;
};

/// Stochastic structural similarity loss: 1 − mean SSIM over M virtual
/// patches assembled from randomly sampled pixels. grad receives
/// scale·d/dpred when non-empty.
inline double s3im_loss(std::span<const double> pred, std::span<const double> gt, std::uint64_t seed,
                        const S3imConfig& cfg = {}, std::span<double> grad = {}, double scale = 1.0) {
    require_same_shape(pred.size(), gt.size());
    const std::size_t pixels = pred.size() / 3;
    if (pixels == 0) return 0.0;
    if (cfg.patch * cfg.patch != cfg.samples) fail(ErrorCode::InvalidArgument, "S3IM patch side must satisfy patch² = samples");
    const auto w = gaussian_window(cfg.kernel, cfg.sigma);
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> perm(pixels);
    std::vector<std::size_t> picks(static_cast<std::size_t>(cfg.samples));
    std::vector<std::size_t> idx(w.size());
    const int windows = (cfg.patch - cfg.kernel) / cfg.stride + 1;
    const double per_window = 1.0 / (3.0 * windows * windows * cfg.repeats);
    double total = 0.0;
    for (int m = 0; m < cfg.repeats; ++m) {
        if (static_cast<std::size_t>(cfg.samples) <= pixels) {
            std::iota(perm.begin(), perm.end(), std::size_t{0});
            // Partial Fisher-Yates: the first K entries form a uniform sample without replacement.
            for (std::size_t i = 0; i < picks.size(); ++i) {
                std::uniform_int_distribution<std::size_t> d(i, pixels - 1);
                std::swap(perm[i], perm[d(rng)]);
                picks[i] = perm[i];
            }
        } else {
            std::uniform_int_distribution<std::size_t> d(0, pixels - 1);
            for (auto& p : picks) p = d(rng);
        }
        for (int c = 0; c < 3; ++c)
            for (int wy = 0; wy < windows; ++wy)
                for (int wx = 0; wx < windows; ++wx) {
                    for (int y = 0; y < cfg.kernel; ++y)
                        for (int x = 0; x < cfg.kernel; ++x) {
                            const std::size_t v = static_cast<std::size_t>((wy * cfg.stride + y) * cfg.patch + wx * cfg.stride + x);
                            idx[static_cast<std::size_t>(y * cfg.kernel + x)] = 3 * picks[v] + static_cast<std::size_t>(c);
                        }
                    total += detail::ssim_window(pred, gt, idx, w, grad.empty() ? nullptr : grad.data(), -scale * per_window);
                }
    }
    return 1.0 - total * per_window;
}

struct LossWeights {
    double l1 = 0.8;
    double s3im = 0.2;
};

struct LossResult {
    double total = 0.0, l1 = 0.0, s3im = 0.0;
    std::vector<double> grad;
};

/// λ1·L1 + λ2·S3IM with its gradient w.r.t. pred.
inline LossResult loss_total(std::span<const double> pred, std::span<const double> gt, const LossWeights& lw,
                             std::uint64_t seed, const S3imConfig& s3 = {}) {
    require_same_shape(pred.size(), gt.size());
    LossResult r;
    r.grad.assign(pred.size(), 0.0);
    r.l1 = l1_loss(pred, gt, r.grad, lw.l1);
    r.s3im = lw.s3im != 0.0 ? s3im_loss(pred, gt, seed, s3, r.grad, lw.s3im) : 0.0;
    r.total = lw.l1 * r.l1 + lw.s3im * r.s3im;
    return r;
}

} // namespace gav
