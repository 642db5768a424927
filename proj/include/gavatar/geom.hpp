// Copyright Contributors to the gavatar project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "gavatar/error.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <ostream>

namespace gav {

struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;

    constexpr double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }
    constexpr double& operator[](int i) { return i == 0 ? x : (i == 1 ? y : z); }

    constexpr Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    constexpr Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    constexpr Vec3 operator-() const { return {-x, -y, -z}; }
    constexpr Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    constexpr Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
    constexpr Vec3& operator+=(const Vec3& o) {
        x += o.x;
        y += o.y;
        z += o.z;
        return *this;
    }
    constexpr Vec3& operator-=(const Vec3& o) {
        x -= o.x;
        y -= o.y;
        z -= o.z;
        return *this;
    }
    constexpr Vec3& operator*=(double s) {
        x *= s;
        y *= s;
        z *= s;
        return *this;
    }
    constexpr bool operator==(const Vec3&) const = default;
};

constexpr Vec3 operator*(double s, const Vec3& v) { return v * s; }
constexpr double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
constexpr Vec3 cross(const Vec3& a, const Vec3& b) {
    return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm(const Vec3& v) { return std::sqrt(dot(v, v)); }
constexpr double squared_norm(const Vec3& v) { return dot(v, v); }
inline Vec3 normalized(const Vec3& v) { return v / norm(v); }
inline bool is_finite(const Vec3& v) { return std::isfinite(v.x) && std::isfinite(v.y) && std::isfinite(v.z); }

inline std::ostream& operator<<(std::ostream& os, const Vec3& v) {
    return os << '(' << v.x << ", " << v.y << ", " << v.z << ')';
}

/// Row-major 3x3 matrix.
struct Mat3 {
    std::array<double, 9> m{};

    constexpr double operator()(int r, int c) const { return m[static_cast<std::size_t>(r * 3 + c)]; }
    constexpr double& operator()(int r, int c) { return m[static_cast<std::size_t>(r * 3 + c)]; }

    static constexpr Mat3 identity() { return Mat3{{1, 0, 0, 0, 1, 0, 0, 0, 1}}; }
    static constexpr Mat3 zero() { return Mat3{}; }
    static constexpr Mat3 diagonal(const Vec3& d) { return Mat3{{d.x, 0, 0, 0, d.y, 0, 0, 0, d.z}}; }
    static constexpr Mat3 from_columns(const Vec3& a, const Vec3& b, const Vec3& c) {
        return Mat3{{a.x, b.x, c.x, a.y, b.y, c.y, a.z, b.z, c.z}};
    }
    static constexpr Mat3 from_rows(const Vec3& a, const Vec3& b, const Vec3& c) {
        return Mat3{{a.x, a.y, a.z, b.x, b.y, b.z, c.x, c.y, c.z}};
    }

    constexpr Vec3 column(int c) const { return {(*this)(0, c), (*this)(1, c), (*this)(2, c)}; }
    constexpr Vec3 row(int r) const { return {(*this)(r, 0), (*this)(r, 1), (*this)(r, 2)}; }

    constexpr Mat3 transposed() const {
        Mat3 t;
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) t(r, c) = (*this)(c, r);
        return t;
    }

    constexpr Mat3 operator*(const Mat3& o) const {
        Mat3 out;
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) {
                double s = 0.0;
                for (int k = 0; k < 3; ++k) s += (*this)(r, k) * o(k, c);
                out(r, c) = s;
            }
        return out;
    }
    constexpr Vec3 operator*(const Vec3& v) const {
        return {m[0] * v.x + m[1] * v.y + m[2] * v.z, m[3] * v.x + m[4] * v.y + m[5] * v.z,
                m[6] * v.x + m[7] * v.y + m[8] * v.z};
    }
    constexpr Mat3 operator*(double s) const {
        Mat3 out = *this;
        for (auto& e : out.m) e *= s;
        return out;
    }
    constexpr Mat3 operator+(const Mat3& o) const {
        Mat3 out;
        for (std::size_t i = 0; i < 9; ++i) out.m[i] = m[i] + o.m[i];
        return out;
    }
    constexpr Mat3 operator-(const Mat3& o) const {
        Mat3 out;
        for (std::size_t i = 0; i < 9; ++i) out.m[i] = m[i] - o.m[i];
        return out;
    }
    constexpr Mat3& operator+=(const Mat3& o) {
        for (std::size_t i = 0; i < 9; ++i) m[i] += o.m[i];
        return *this;
    }

    constexpr double determinant() const {
        const auto& a = *this;
        return a(0, 0) * (a(1, 1) * a(2, 2) - a(1, 2) * a(2, 1)) -
               a(0, 1) * (a(1, 0) * a(2, 2) - a(1, 2) * a(2, 0)) +
               a(0, 2) * (a(1, 0) * a(2, 1) - a(1, 1) * a(2, 0));
    }

    /// Adjugate-based inverse; the caller checks the determinant first.
    constexpr Mat3 inverse() const {
        const auto& a = *this;
        const double inv_det = 1.0 / determinant();
        Mat3 out;
        out(0, 0) = (a(1, 1) * a(2, 2) - a(1, 2) * a(2, 1)) * inv_det;
        out(0, 1) = (a(0, 2) * a(2, 1) - a(0, 1) * a(2, 2)) * inv_det;
        out(0, 2) = (a(0, 1) * a(1, 2) - a(0, 2) * a(1, 1)) * inv_det;
        out(1, 0) = (a(1, 2) * a(2, 0) - a(1, 0) * a(2, 2)) * inv_det;
        out(1, 1) = (a(0, 0) * a(2, 2) - a(0, 2) * a(2, 0)) * inv_det;
        out(1, 2) = (a(0, 2) * a(1, 0) - a(0, 0) * a(1, 2)) * inv_det;
        out(2, 0) = (a(1, 0) * a(2, 1) - a(1, 1) * a(2, 0)) * inv_det;
        out(2, 1) = (a(0, 1) * a(2, 0) - a(0, 0) * a(2, 1)) * inv_det;
        out(2, 2) = (a(0, 0) * a(1, 1) - a(0, 1) * a(1, 0)) * inv_det;
        return out;
    }

    constexpr bool operator==(const Mat3&) const = default;
};

inline double max_abs_diff(const Mat3& a, const Mat3& b) {
    double d = 0.0;
    for (std::size_t i = 0; i < 9; ++i) d = std::max(d, std::abs(a.m[i] - b.m[i]));
    return d;
}

/// Outer product a b^T.
constexpr Mat3 outer(const Vec3& a, const Vec3& b) {
    return Mat3{{a.x * b.x, a.x * b.y, a.x * b.z, a.y * b.x, a.y * b.y, a.y * b.z, a.z * b.x, a.z * b.y,
                 a.z * b.z}};
}

/// Largest entry of |R^T R - I| and |det R - 1|, the two rotation defects.
inline double rotation_defect(const Mat3& r) {
    return std::max(max_abs_diff(r.transposed() * r, Mat3::identity()), std::abs(r.determinant() - 1.0));
}

inline bool is_rotation(const Mat3& r, double tol = 1e-6) { return rotation_defect(r) <= tol; }

/// Hamilton quaternion, w + xi + yj + zk.
struct Quat {
    double w = 1.0, x = 0.0, y = 0.0, z = 0.0;

    static constexpr Quat identity() { return {1.0, 0.0, 0.0, 0.0}; }

    constexpr double operator[](int i) const { return i == 0 ? w : (i == 1 ? x : (i == 2 ? y : z)); }
    constexpr double& operator[](int i) { return i == 0 ? w : (i == 1 ? x : (i == 2 ? y : z)); }

    constexpr Quat conjugate() const { return {w, -x, -y, -z}; }
    constexpr double squared_norm() const { return w * w + x * x + y * y + z * z; }
    double norm() const { return std::sqrt(squared_norm()); }
    Quat normalized() const {
        const double n = norm();
        return {w / n, x / n, y / n, z / n};
    }
    constexpr Quat operator-() const { return {-w, -x, -y, -z}; }
    constexpr Quat operator+(const Quat& o) const { return {w + o.w, x + o.x, y + o.y, z + o.z}; }
    constexpr Quat operator*(double s) const { return {w * s, x * s, y * s, z * s}; }
    constexpr bool operator==(const Quat&) const = default;
};

inline std::ostream& operator<<(std::ostream& os, const Quat& q) {
    return os << '(' << q.w << ", " << q.x << ", " << q.y << ", " << q.z << ')';
}

constexpr double dot(const Quat& a, const Quat& b) { return a.w * b.w + a.x * b.x + a.y * b.y + a.z * b.z; }

/// Raw Hamilton product without renormalization.
constexpr Quat hamilton(const Quat& a, const Quat& b) {
    return {a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z, a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x, a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w};
}

/// Rotation a after b, renormalized.
inline Quat quat_multiply(const Quat& a, const Quat& b) { return hamilton(a, b).normalized(); }

/// Adjoints of the raw product: with p = a (x) b and g = dL/dp,
/// dL/da = g (x) conj(b) and dL/db = conj(a) (x) g.
struct QuatProductGrad {
    Quat da, db;
};
constexpr QuatProductGrad hamilton_backward(const Quat& a, const Quat& b, const Quat& g) {
    return {hamilton(g, b.conjugate()), hamilton(a.conjugate(), g)};
}

/// Gradient through q / |q|.
inline Quat normalize_backward(const Quat& raw, const Quat& g) {
    const double n = raw.norm();
    const Quat u = raw * (1.0 / n);
    const double proj = dot(u, g);
    return (g + u * (-proj)) * (1.0 / n);
}

inline Vec3 normalize_backward(const Vec3& raw, const Vec3& g) {
    const double n = norm(raw);
    const Vec3 u = raw / n;
    return (g - u * dot(u, g)) / n;
}

inline Mat3 quat_to_rotmat(const Quat& q) {
    const double w = q.w, x = q.x, y = q.y, z = q.z;
    return Mat3{{1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y),
                 2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x),
                 2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)}};
}

/// Gradient of L w.r.t. the components of q given dL/dR, differentiating the
/// unit-quaternion polynomial map above.
inline Quat quat_to_rotmat_backward(const Quat& q, const Mat3& g) {
    const double w = q.w, x = q.x, y = q.y, z = q.z;
    Quat d{0, 0, 0, 0};
    d.w = 2.0 * (z * (g(1, 0) - g(0, 1)) + y * (g(0, 2) - g(2, 0)) + x * (g(2, 1) - g(1, 2)));
    d.x = 2.0 * (y * (g(1, 0) + g(0, 1)) + z * (g(2, 0) + g(0, 2)) + w * (g(2, 1) - g(1, 2))) -
          4.0 * x * (g(2, 2) + g(1, 1));
    d.y = 2.0 * (x * (g(1, 0) + g(0, 1)) + w * (g(0, 2) - g(2, 0)) + z * (g(2, 1) + g(1, 2))) -
          4.0 * y * (g(2, 2) + g(0, 0));
    d.z = 2.0 * (w * (g(1, 0) - g(0, 1)) + x * (g(2, 0) + g(0, 2)) + y * (g(2, 1) + g(1, 2))) -
          4.0 * z * (g(1, 1) + g(0, 0));
    return d;
}

/// Shepperd's method, canonicalized to w >= 0.
inline Quat rotmat_to_quat(const Mat3& r) {
    if (!is_rotation(r, 1e-6)) fail(ErrorCode::NotARotation, "matrix is not a proper rotation");
    const double tr = r(0, 0) + r(1, 1) + r(2, 2);
    Quat q;
    if (tr >= r(0, 0) && tr >= r(1, 1) && tr >= r(2, 2)) {
        const double s = 2.0 * std::sqrt(1.0 + tr);
        q = {0.25 * s, (r(2, 1) - r(1, 2)) / s, (r(0, 2) - r(2, 0)) / s, (r(1, 0) - r(0, 1)) / s};
    } else if (r(0, 0) >= r(1, 1) && r(0, 0) >= r(2, 2)) {
        const double s = 2.0 * std::sqrt(1.0 + r(0, 0) - r(1, 1) - r(2, 2));
        q = {(r(2, 1) - r(1, 2)) / s, 0.25 * s, (r(0, 1) + r(1, 0)) / s, (r(0, 2) + r(2, 0)) / s};
    } else if (r(1, 1) >= r(2, 2)) {
        const double s = 2.0 * std::sqrt(1.0 + r(1, 1) - r(0, 0) - r(2, 2));
        q = {(r(0, 2) - r(2, 0)) / s, (r(0, 1) + r(1, 0)) / s, 0.25 * s, (r(1, 2) + r(2, 1)) / s};
    } else {
        const double s = 2.0 * std::sqrt(1.0 + r(2, 2) - r(0, 0) - r(1, 1));
        q = {(r(1, 0) - r(0, 1)) / s, (r(0, 2) + r(2, 0)) / s, (r(1, 2) + r(2, 1)) / s, 0.25 * s};
    }
    q = q.normalized();
    if (q.w < 0.0) q = -q;
    return q;
}

inline Quat quat_from_axis_angle(const Vec3& axis, double angle) {
    const Vec3 u = normalized(axis);
    const double s = std::sin(0.5 * angle);
    return {std::cos(0.5 * angle), u.x * s, u.y * s, u.z * s};
}

/// Rodrigues map from an axis-angle vector (direction = axis, length = radians).
inline Mat3 axis_angle_to_rotmat(const Vec3& aa) {
    const double theta = norm(aa);
    const Mat3 k{{0, -aa.z, aa.y, aa.z, 0, -aa.x, -aa.y, aa.x, 0}};
    double a, b;
    if (theta < 1e-8) {
        a = 1.0 - theta * theta / 6.0;
        b = 0.5 - theta * theta / 24.0;
    } else {
        a = std::sin(theta) / theta;
        b = (1.0 - std::cos(theta)) / (theta * theta);
    }
    return Mat3::identity() + k * a + (k * k) * b;
}

inline Vec3 rotmat_to_axis_angle(const Mat3& r) {
    const Quat q = rotmat_to_quat(r);
    const double sin_half = std::sqrt(q.x * q.x + q.y * q.y + q.z * q.z);
    if (sin_half < 1e-12) return {};
    const double angle = 2.0 * std::atan2(sin_half, q.w);
    return Vec3{q.x, q.y, q.z} * (angle / sin_half);
}

/// Geodesic angle of a rotation in radians, in [0, pi].
inline double rotation_angle(const Mat3& r) {
    const Quat q = rotmat_to_quat(r);
    const double sin_half = std::sqrt(q.x * q.x + q.y * q.y + q.z * q.z);
    return 2.0 * std::atan2(sin_half, std::abs(q.w));
}

inline Mat3 rot_x(double a) {
    const double c = std::cos(a), s = std::sin(a);
    return Mat3{{1, 0, 0, 0, c, -s, 0, s, c}};
}
inline Mat3 rot_y(double a) {
    const double c = std::cos(a), s = std::sin(a);
    return Mat3{{c, 0, s, 0, 1, 0, -s, 0, c}};
}
inline Mat3 rot_z(double a) {
    const double c = std::cos(a), s = std::sin(a);
    return Mat3{{c, -s, 0, s, c, 0, 0, 0, 1}};
}

constexpr double deg_to_rad(double d) { return d * std::numbers::pi / 180.0; }
constexpr double rad_to_deg(double r) { return r * 180.0 / std::numbers::pi; }

/// Rigid transform p -> R p + t.
struct RigidTransform {
    Mat3 rotation = Mat3::identity();
    Vec3 translation{};

    static RigidTransform identity() { return {}; }

    Vec3 apply(const Vec3& p) const { return rotation * p + translation; }

    /// this after other.
    RigidTransform compose(const RigidTransform& other) const {
        return {rotation * other.rotation, rotation * other.translation + translation};
    }

    RigidTransform inverse() const {
        const Mat3 rt = rotation.transposed();
        return {rt, -(rt * translation)};
    }
};

} // namespace gav
