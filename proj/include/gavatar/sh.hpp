// Copyright Contributors to the gavatar project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "gavatar/geom.hpp"

#include <array>

namespace gav {

/// Real spherical harmonics up to band 3, in the ordering and sign convention
/// used by the common Gaussian-splatting implementations.
namespace sh {

inline constexpr int kMaxDegree = 3;
inline constexpr int kMaxCoeffs = 16;

inline constexpr double C0 = 0.28209479177387814;
inline constexpr double C1 = 0.4886025119029199;
inline constexpr std::array<double, 5> C2 = {1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
                                             -1.0925484305920792, 0.5462742152960396};
inline constexpr std::array<double, 7> C3 = {-0.5900435899266435, 2.890611442640554,  -0.4570457994644658,
                                             0.3731763325901154,  -0.4570457994644658, 1.445305721320277,
                                             -0.5900435899266435};

constexpr int coeff_count(int degree) { return (degree + 1) * (degree + 1); }

/// Basis values Y_k(d) for k < coeff_count(degree); higher entries are zero.
inline std::array<double, kMaxCoeffs> basis(const Vec3& d, int degree) {
    std::array<double, kMaxCoeffs> y{};
    const double x = d.x, yy_ = d.y, z = d.z;
    y[0] = C0;
    if (degree < 1) return y;
    y[1] = -C1 * yy_;
    y[2] = C1 * z;
    y[3] = -C1 * x;
    if (degree < 2) return y;
    const double xx = x * x, yy = yy_ * yy_, zz = z * z;
    const double xy = x * yy_, yz = yy_ * z, xz = x * z;
    y[4] = C2[0] * xy;
    y[5] = C2[1] * yz;
    y[6] = C2[2] * (2.0 * zz - xx - yy);
    y[7] = C2[3] * xz;
    y[8] = C2[4] * (xx - yy);
    if (degree < 3) return y;
    y[9] = C3[0] * yy_ * (3.0 * xx - yy);
    y[10] = C3[1] * xy * z;
    y[11] = C3[2] * yy_ * (4.0 * zz - xx - yy);
    y[12] = C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
    y[13] = C3[4] * x * (4.0 * zz - xx - yy);
    y[14] = C3[5] * z * (xx - yy);
    y[15] = C3[6] * x * (xx - 3.0 * yy);
    return y;
}

/// Gradients of each basis polynomial with respect to the direction components.
inline std::array<Vec3, kMaxCoeffs> basis_gradient(const Vec3& d, int degree) {
    std::array<Vec3, kMaxCoeffs> g{};
    const double x = d.x, y = d.y, z = d.z;
    if (degree < 1) return g;
    g[1] = {0.0, -C1, 0.0};
    g[2] = {0.0, 0.0, C1};
    g[3] = {-C1, 0.0, 0.0};
    if (degree < 2) return g;
    const double xx = x * x, yy = y * y, zz = z * z;
    g[4] = Vec3{y, x, 0.0} * C2[0];
    g[5] = Vec3{0.0, z, y} * C2[1];
    g[6] = Vec3{-2.0 * x, -2.0 * y, 4.0 * z} * C2[2];
    g[7] = Vec3{z, 0.0, x} * C2[3];
    g[8] = Vec3{2.0 * x, -2.0 * y, 0.0} * C2[4];
    if (degree < 3) return g;
    g[9] = Vec3{6.0 * x * y, 3.0 * xx - 3.0 * yy, 0.0} * C3[0];
    g[10] = Vec3{y * z, x * z, x * y} * C3[1];
    g[11] = Vec3{-2.0 * x * y, 4.0 * zz - xx - 3.0 * yy, 8.0 * y * z} * C3[2];
    g[12] = Vec3{-6.0 * x * z, -6.0 * y * z, 6.0 * zz - 3.0 * xx - 3.0 * yy} * C3[3];
    g[13] = Vec3{4.0 * zz - 3.0 * xx - yy, -2.0 * x * y, 8.0 * x * z} * C3[4];
    g[14] = Vec3{2.0 * x * z, -2.0 * y * z, xx - yy} * C3[5];
    g[15] = Vec3{3.0 * xx - 3.0 * yy, -6.0 * x * y, 0.0} * C3[6];
    return g;
}

/// DC coefficient reproducing a flat color under the +0.5 offset convention.
constexpr double dc_from_color(double c) { return (c - 0.5) / C0; }
constexpr double color_from_dc(double dc) { return dc * C0 + 0.5; }

} // namespace sh

/// Per-band RGB coefficients. Entries above the active degree stay zero.
struct SHCoeffs {
    std::array<Vec3, sh::kMaxCoeffs> coeffs{};
    int degree = 0;

    static SHCoeffs flat(const Vec3& rgb, int degree = 0) {
        SHCoeffs c;
        c.degree = degree;
        c.coeffs[0] = {sh::dc_from_color(rgb.x), sh::dc_from_color(rgb.y), sh::dc_from_color(rgb.z)};
        return c;
    }
};

/// Color evaluated before the [0,1] clamp, plus the per-channel clamp mask.
/// A channel sitting on a clamp bound (within rounding) still passes gradient,
/// so flat white or black colors can move off the bound.
struct ShColor {
    Vec3 unclamped;
    Vec3 rgb;
    std::array<bool, 3> active{};
};

inline ShColor sh_eval_detailed(const std::array<Vec3, sh::kMaxCoeffs>& coeffs, int degree, const Vec3& dir) {
    const auto y = sh::basis(dir, degree);
    Vec3 acc{};
    const int n = sh::coeff_count(degree);
    for (int k = 0; k < n; ++k) acc += coeffs[static_cast<std::size_t>(k)] * y[static_cast<std::size_t>(k)];
    ShColor out;
    out.unclamped = acc + Vec3{0.5, 0.5, 0.5};
    for (int c = 0; c < 3; ++c) {
        const double v = out.unclamped[c];
        out.active[static_cast<std::size_t>(c)] = v >= -1e-9 && v <= 1.0 + 1e-9;
        out.rgb[c] = std::clamp(v, 0.0, 1.0);
    }
    return out;
}

inline Vec3 sh_eval(const SHCoeffs& c, const Vec3& dir) { return sh_eval_detailed(c.coeffs, c.degree, dir).rgb; }

/// Inverse-rotates a view direction so a rotated SH lobe can be queried in its
/// own frame.
inline Vec3 sh_rotate_dir(const Mat3& r, const Vec3& d) { return r.transposed() * d; }

} // namespace gav
