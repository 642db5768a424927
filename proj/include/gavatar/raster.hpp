// Copyright Contributors to the gavatar project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "gavatar/camera.hpp"
#include "gavatar/error.hpp"
#include "gavatar/geom.hpp"
#include "gavatar/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

namespace gav {

inline constexpr double kDilation = 0.3;
inline constexpr double kCutoffMahalanobis2 = 9.0;
inline constexpr double kMaxAlpha = 0.99;
inline constexpr double kMinTransmittance = 1e-4;
inline constexpr int kTileSize = 16;

/// Symmetric 2×2 matrix [[a, b], [b, c]].
struct Sym2 {
    double a = 0.0, b = 0.0, c = 0.0;

    double det() const { return a * c - b * b; }
    Sym2 inverse() const {
        const double d = det();
        return {c / d, -b / d, a / d};
    }
};

struct Splat2D {
    double mean_x = 0.0, mean_y = 0.0;  // pixels
    Sym2 cov;                           // dilated screen covariance, pixels²
    Sym2 conic;                         // cov⁻¹
    double depth = 0.0;                 // camera-space z
    double extent_x = 0.0, extent_y = 0.0;  // 3σ half widths of the bounding box
    Vec3 color{};
    double alpha = 0.0;  // activated opacity
    int id = -1;         // index of the source Gaussian
};

/// Perspective projection of a 3D Gaussian. Returns nothing when culled.
inline std::optional<Splat2D> project(const Vec3& mu, const Mat3& sigma, const Camera& cam) {
    const Vec3 p = cam.to_camera(mu);
    if (!(p.z > cam.near) || !(p.z <= cam.far)) return std::nullopt;
    const double iz = 1.0 / p.z, iz2 = iz * iz;
    // T = J W, with J the 2×3 perspective Jacobian.
    const double j00 = cam.fx * iz, j02 = -cam.fx * p.x * iz2, j11 = cam.fy * iz, j12 = -cam.fy * p.y * iz2;
    const Mat3& w = cam.rotation;
    Vec3 t0, t1;
    for (int k = 0; k < 3; ++k) {
        t0[k] = j00 * w(0, k) + j02 * w(2, k);
        t1[k] = j11 * w(1, k) + j12 * w(2, k);
    }
    const Vec3 s0 = sigma * t0, s1 = sigma * t1;
    Splat2D s;
    s.cov = {dot(t0, s0) + kDilation, dot(t0, s1), dot(t1, s1) + kDilation};
    if (!(s.cov.det() > 0.0)) return std::nullopt;
    s.conic = s.cov.inverse();
    s.mean_x = cam.fx * p.x * iz + cam.cx;
    s.mean_y = cam.fy * p.y * iz + cam.cy;
    s.depth = p.z;
    s.extent_x = 3.0 * std::sqrt(s.cov.a);
    s.extent_y = 3.0 * std::sqrt(s.cov.c);
    if (s.mean_x + s.extent_x < 0.0 || s.mean_x - s.extent_x > cam.width || s.mean_y + s.extent_y < 0.0 ||
        s.mean_y - s.extent_y > cam.height)
        return std::nullopt;
    return s;
}

struct ProjectionGrad {
    Vec3 d_mean;
    Mat3 d_cov;
};

/// Reverse of project() for gradients on the screen mean and conic. The conic
/// gradient uses (a, b, c) coordinates where b is the shared off-diagonal.
inline ProjectionGrad project_backward(const Vec3& mu, const Mat3& sigma, const Camera& cam, double g_mean_x,
                                       double g_mean_y, const Sym2& g_conic) {
    const Vec3 p = cam.to_camera(mu);
    const double iz = 1.0 / p.z, iz2 = iz * iz, iz3 = iz2 * iz;
    const double j00 = cam.fx * iz, j02 = -cam.fx * p.x * iz2, j11 = cam.fy * iz, j12 = -cam.fy * p.y * iz2;
    const Mat3& w = cam.rotation;
    Vec3 t0, t1;
    for (int k = 0; k < 3; ++k) {
        t0[k] = j00 * w(0, k) + j02 * w(2, k);
        t1[k] = j11 * w(1, k) + j12 * w(2, k);
    }
    const Vec3 s0 = sigma * t0, s1 = sigma * t1;
    const Sym2 cov{dot(t0, s0) + kDilation, dot(t0, s1), dot(t1, s1) + kDilation};
    const Sym2 q = cov.inverse();
    // dL/dcov = -Q G Q with G the symmetric form of the conic gradient.
    const double ga = g_conic.a, gb = 0.5 * g_conic.b, gc = g_conic.c;
    const double m00 = q.a * ga + q.b * gb, m01 = q.a * gb + q.b * gc;
    const double m10 = q.b * ga + q.c * gb, m11 = q.b * gb + q.c * gc;
    const double d00 = -(m00 * q.a + m01 * q.b);
    const double d01 = -(m00 * q.b + m01 * q.c);
    const double d11 = -(m10 * q.b + m11 * q.c);

    ProjectionGrad out;
    // Σ' = T Σ Tᵀ  ⇒  dΣ = Tᵀ dΣ' T, dT = 2 dΣ' T Σ.
    out.d_cov = outer(t0, t0) * d00 + (outer(t0, t1) + outer(t1, t0)) * d01 + outer(t1, t1) * d11;
    const Vec3 dt0 = (s0 * d00 + s1 * d01) * 2.0;
    const Vec3 dt1 = (s0 * d01 + s1 * d11) * 2.0;
    // dJ = dT Wᵀ.
    double dj00 = 0, dj02 = 0, dj11 = 0, dj12 = 0;
    for (int k = 0; k < 3; ++k) {
        dj00 += dt0[k] * w(0, k);
        dj02 += dt0[k] * w(2, k);
        dj11 += dt1[k] * w(1, k);
        dj12 += dt1[k] * w(2, k);
    }
    Vec3 dp;
    dp.x = -dj02 * cam.fx * iz2 + g_mean_x * cam.fx * iz;
    dp.y = -dj12 * cam.fy * iz2 + g_mean_y * cam.fy * iz;
    dp.z = -dj00 * cam.fx * iz2 + dj02 * 2.0 * cam.fx * p.x * iz3 - dj11 * cam.fy * iz2 + dj12 * 2.0 * cam.fy * p.y * iz3 -
           g_mean_x * cam.fx * p.x * iz2 - g_mean_y * cam.fy * p.y * iz2;
    out.d_mean = w.transposed() * dp;
    return out;
}

/// Linear RGB, transmittance, and per-pixel composited splat count.
struct Framebuffer {
    int width = 0, height = 0;
    std::vector<double> color;  // 3 per pixel, row-major
    std::vector<double> transmittance;
    std::vector<int> count;

    Framebuffer() = default;
    Framebuffer(int w, int h) : width(w), height(h), color(3 * pixels(w, h), 0.0), transmittance(pixels(w, h), 1.0),
                                count(pixels(w, h), 0) {}

    static std::size_t pixels(int w, int h) { return static_cast<std::size_t>(w) * static_cast<std::size_t>(h); }
    std::size_t pixel_count() const { return pixels(width, height); }
    std::size_t index(int x, int y) const { return static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x); }
    Vec3 pixel(int x, int y) const {
        const std::size_t i = 3 * index(x, y);
        return {color[i], color[i + 1], color[i + 2]};
    }
    void set_pixel(int x, int y, const Vec3& c) {
        const std::size_t i = 3 * index(x, y);
        color[i] = c.x;
        color[i + 1] = c.y;
        color[i + 2] = c.z;
    }
};

inline double max_abs_diff(const Framebuffer& a, const Framebuffer& b) {
    if (a.width != b.width || a.height != b.height) fail(ErrorCode::ShapeMismatch, "framebuffer sizes differ");
    double m = 0.0;
    for (std::size_t i = 0; i < a.color.size(); ++i) m = std::max(m, std::abs(a.color[i] - b.color[i]));
    return m;
}

/// Depth-ascending order; ties broken by position in the input.
inline std::vector<int> depth_order(std::span<const Splat2D> splats) {
    std::vector<int> order(splats.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        const auto& sa = splats[static_cast<std::size_t>(a)];
        const auto& sb = splats[static_cast<std::size_t>(b)];
        if (sa.depth != sb.depth) return sa.depth < sb.depth;
        if (sa.id != sb.id) return sa.id < sb.id;
        return a < b;
    });
    return order;
}

namespace detail {

struct Footprint {
    double d2, dx, dy;
};

inline Footprint footprint(const Splat2D& s, double px, double py) {
    const double dx = px - s.mean_x, dy = py - s.mean_y;
    return {s.conic.a * dx * dx + 2.0 * s.conic.b * dx * dy + s.conic.c * dy * dy, dx, dy};
}

inline double splat_alpha(const Splat2D& s, double d2) { return std::min(kMaxAlpha, s.alpha * std::exp(-0.5 * d2)); }

/// Front-to-back compositing of one pixel over ids (already depth sorted).
template <typename Ids>
void composite_pixel(std::span<const Splat2D> splats, const Ids& ids, double px, double py, const Vec3& background,
                     Framebuffer& fb, std::size_t pixel) {
    double t = 1.0;
    Vec3 c{};
    int n = 0;
    for (int id : ids) {
        const Splat2D& s = splats[static_cast<std::size_t>(id)];
        const Footprint f = footprint(s, px, py);
        if (!(f.d2 <= kCutoffMahalanobis2)) continue;
        const double alpha = splat_alpha(s, f.d2);
        c += s.color * (t * alpha);
        t *= 1.0 - alpha;
        ++n;
        if (t < kMinTransmittance) break;
    }
    c += background * t;
    fb.color[3 * pixel] = c.x;
    fb.color[3 * pixel + 1] = c.y;
    fb.color[3 * pixel + 2] = c.z;
    fb.transmittance[pixel] = t;
    fb.count[pixel] = n;
}

} // namespace detail

/// Brute-force oracle: every pixel visits every splat in depth order.
inline Framebuffer rasterize_reference(std::span<const Splat2D> splats, int width, int height, const Vec3& background) {
    Framebuffer fb(width, height);
    const auto order = depth_order(splats);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
            detail::composite_pixel(splats, order, x + 0.5, y + 0.5, background, fb, fb.index(x, y));
    return fb;
}

/// Per-tile splat lists over one global depth order.
struct TileBins {
    int tiles_x = 0, tiles_y = 0;
    std::vector<std::size_t> offsets;  // tiles + 1
    std::vector<int> ids;

    std::span<const int> tile(std::size_t t) const { return std::span<const int>(ids).subspan(offsets[t], offsets[t + 1] - offsets[t]); }
    std::size_t tile_count() const { return static_cast<std::size_t>(tiles_x) * static_cast<std::size_t>(tiles_y); }
};

/// Inclusive pixel range whose centers lie within a splat's 3σ box.
struct PixelRect {
    int x0, x1, y0, y1;
    bool empty() const { return x0 > x1 || y0 > y1; }
};

inline PixelRect splat_pixel_rect(const Splat2D& s, int width, int height) {
    // Slightly widened so rounding never drops a pixel the cutoff test would accept.
    const double ex = s.extent_x * (1.0 + 1e-9) + 1e-9, ey = s.extent_y * (1.0 + 1e-9) + 1e-9;
    PixelRect r;
    r.x0 = static_cast<int>(std::max(0.0, std::ceil(s.mean_x - ex - 0.5)));
    r.x1 = static_cast<int>(std::min(width - 1.0, std::floor(s.mean_x + ex - 0.5)));
    r.y0 = static_cast<int>(std::max(0.0, std::ceil(s.mean_y - ey - 0.5)));
    r.y1 = static_cast<int>(std::min(height - 1.0, std::floor(s.mean_y + ey - 0.5)));
    return r;
}

inline TileBins bin_splats(std::span<const Splat2D> splats, std::span<const int> order, int width, int height) {
    TileBins bins;
    bins.tiles_x = (width + kTileSize - 1) / kTileSize;
    bins.tiles_y = (height + kTileSize - 1) / kTileSize;
    const std::size_t tiles = bins.tile_count();
    std::vector<PixelRect> rects(splats.size());
    std::vector<std::size_t> counts(tiles + 1, 0);
    for (int id : order) {
        const PixelRect r = splat_pixel_rect(splats[static_cast<std::size_t>(id)], width, height);
        rects[static_cast<std::size_t>(id)] = r;
        if (r.empty()) continue;
        for (int ty = r.y0 / kTileSize; ty <= r.y1 / kTileSize; ++ty)
            for (int tx = r.x0 / kTileSize; tx <= r.x1 / kTileSize; ++tx)
                ++counts[static_cast<std::size_t>(ty * bins.tiles_x + tx) + 1];
    }
    for (std::size_t t = 0; t < tiles; ++t) counts[t + 1] += counts[t];
    bins.offsets = counts;
    bins.ids.resize(counts[tiles]);
    std::vector<std::size_t> fill(counts.begin(), counts.end() - 1);
    for (int id : order) {
        const PixelRect& r = rects[static_cast<std::size_t>(id)];
        if (r.empty()) continue;
        for (int ty = r.y0 / kTileSize; ty <= r.y1 / kTileSize; ++ty)
            for (int tx = r.x0 / kTileSize; tx <= r.x1 / kTileSize; ++tx)
                bins.ids[fill[static_cast<std::size_t>(ty * bins.tiles_x + tx)]++] = id;
    }
    return bins;
}

struct RasterCache {
    bool valid = false;
    int width = 0, height = 0;
    Vec3 background{};
    TileBins bins;
};

/// Tiled rasterizer with the same output contract as rasterize_reference.
inline Framebuffer rasterize_tiled(std::span<const Splat2D> splats, int width, int height, const Vec3& background,
                                   RasterCache* cache = nullptr, int threads = 0) {
    Framebuffer fb(width, height);
    const auto order = depth_order(splats);
    TileBins bins = bin_splats(splats, order, width, height);
    parallel_for(bins.tile_count(), [&](std::size_t t) {
        const int tx = static_cast<int>(t % static_cast<std::size_t>(bins.tiles_x));
        const int ty = static_cast<int>(t / static_cast<std::size_t>(bins.tiles_x));
        const auto ids = bins.tile(t);
        const int x_end = std::min(width, (tx + 1) * kTileSize), y_end = std::min(height, (ty + 1) * kTileSize);
        for (int y = ty * kTileSize; y < y_end; ++y)
            for (int x = tx * kTileSize; x < x_end; ++x)
                detail::composite_pixel(splats, ids, x + 0.5, y + 0.5, background, fb, fb.index(x, y));
    }, threads);
    if (cache) {
        cache->valid = true;
        cache->width = width;
        cache->height = height;
        cache->background = background;
        cache->bins = std::move(bins);
    }
    return fb;
}

struct SplatGrad {
    double mean_x = 0.0, mean_y = 0.0;
    Sym2 conic;  // gradient w.r.t. (a, b, c) with b the shared off-diagonal
    double alpha = 0.0;
    Vec3 color{};
};

/// Reverse of compositing. grad_color holds dL/dC, 3 values per pixel.
/// Gradients are gathered per tile and reduced in tile order.
inline std::vector<SplatGrad> rasterize_backward(std::span<const Splat2D> splats, const RasterCache& cache,
                                                 std::span<const double> grad_color, int threads = 0) {
    if (!cache.valid) fail(ErrorCode::NoCachedForward, "rasterize_backward called without a cached forward pass");
    const std::size_t pixels = Framebuffer::pixels(cache.width, cache.height);
    if (grad_color.size() != 3 * pixels) fail(ErrorCode::ShapeMismatch, "color gradient does not match the framebuffer");
    const TileBins& bins = cache.bins;
    std::vector<SplatGrad> slots(bins.ids.size());

    struct Step {
        std::size_t slot;
        double alpha, t, g, dx, dy;
        bool clamped;
    };

    parallel_for(bins.tile_count(), [&](std::size_t t) {
        const int tx = static_cast<int>(t % static_cast<std::size_t>(bins.tiles_x));
        const int ty = static_cast<int>(t / static_cast<std::size_t>(bins.tiles_x));
        const auto ids = bins.tile(t);
        const std::size_t base = bins.offsets[t];
        const int x_end = std::min(cache.width, (tx + 1) * kTileSize), y_end = std::min(cache.height, (ty + 1) * kTileSize);
        std::vector<Step> steps;
        for (int y = ty * kTileSize; y < y_end; ++y) {
            for (int x = tx * kTileSize; x < x_end; ++x) {
                const std::size_t pix = static_cast<std::size_t>(y) * static_cast<std::size_t>(cache.width) + static_cast<std::size_t>(x);
                const Vec3 gc{grad_color[3 * pix], grad_color[3 * pix + 1], grad_color[3 * pix + 2]};
                if (gc.x == 0.0 && gc.y == 0.0 && gc.z == 0.0) continue;
                steps.clear();
                double trans = 1.0;
                for (std::size_t k = 0; k < ids.size(); ++k) {
                    const Splat2D& s = splats[static_cast<std::size_t>(ids[k])];
                    const auto f = detail::footprint(s, x + 0.5, y + 0.5);
                    if (!(f.d2 <= kCutoffMahalanobis2)) continue;
                    const double g = std::exp(-0.5 * f.d2);
                    const double raw = s.alpha * g;
                    const double alpha = std::min(kMaxAlpha, raw);
                    steps.push_back({base + k, alpha, trans, g, f.dx, f.dy, raw > kMaxAlpha});
                    trans *= 1.0 - alpha;
                    if (trans < kMinTransmittance) break;
                }
                Vec3 behind = cache.background;
                for (std::size_t k = steps.size(); k-- > 0;) {
                    const Step& st = steps[k];
                    const Splat2D& s = splats[static_cast<std::size_t>(ids[st.slot - base])];
                    SplatGrad& out = slots[st.slot];
                    out.color += gc * (st.alpha * st.t);
                    const double d_alpha = st.t * dot(gc, s.color - behind);
                    behind = s.color * st.alpha + behind * (1.0 - st.alpha);
                    if (st.clamped) continue;
                    out.alpha += d_alpha * st.g;
                    const double d_d2 = d_alpha * -0.5 * st.alpha;
                    out.conic.a += d_d2 * st.dx * st.dx;
                    out.conic.b += d_d2 * 2.0 * st.dx * st.dy;
                    out.conic.c += d_d2 * st.dy * st.dy;
                    const auto& q = s.conic;
                    out.mean_x += d_d2 * -2.0 * (q.a * st.dx + q.b * st.dy);
                    out.mean_y += d_d2 * -2.0 * (q.b * st.dx + q.c * st.dy);
                }
            }
        }
    }, threads);

    std::vector<SplatGrad> grads(splats.size());
    for (std::size_t s = 0; s < bins.ids.size(); ++s) {
        SplatGrad& dst = grads[static_cast<std::size_t>(bins.ids[s])];
        const SplatGrad& src = slots[s];
        dst.mean_x += src.mean_x;
        dst.mean_y += src.mean_y;
        dst.conic.a += src.conic.a;
        dst.conic.b += src.conic.b;
        dst.conic.c += src.conic.c;
        dst.alpha += src.alpha;
        dst.color += src.color;
    }
    return grads;
}

} // namespace gav
