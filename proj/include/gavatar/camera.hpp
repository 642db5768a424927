// Copyright Contributors to the gavatar project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "gavatar/error.hpp"
#include "gavatar/geom.hpp"

#include <cmath>
#include <string>
#include <tuple>
#include <utility>

namespace gav {

/// Pinhole camera. Extrinsics map world to camera space (x right, y down,
/// z forward): p = R_c·μ + T_c.
struct Camera {
    double fx = 100.0, fy = 100.0, cx = 32.0, cy = 32.0;
    Mat3 rotation = Mat3::identity();
    Vec3 translation{};
    int width = 64, height = 64;
    double near = 0.01, far = 100.0;

    Vec3 center() const { return -(rotation.transposed() * translation); }
    Vec3 to_camera(const Vec3& world) const { return rotation * world + translation; }

    bool operator==(const Camera&) const = default;
};

inline void validate_camera(const Camera& c) {
    if (!(c.fx > 0.0 && c.fy > 0.0)) fail(ErrorCode::InvalidArgument, "focal lengths must be positive");
    if (!(c.near > 0.0 && c.near < c.far)) fail(ErrorCode::InvalidArgument, "camera requires 0 < near < far");
    if (c.width <= 0 || c.height <= 0) fail(ErrorCode::InvalidArgument, "image size must be positive");
    if (!is_rotation(c.rotation)) fail(ErrorCode::NotARotation, "camera rotation is not a proper rotation");
}

/// Square-pixel intrinsics from a vertical field of view, principal point at the image center.
inline Camera camera_from_fov(int width, int height, double fov_y_deg) {
    Camera c;
    c.width = width;
    c.height = height;
    c.fy = 0.5 * height / std::tan(0.5 * deg_to_rad(fov_y_deg));
    c.fx = c.fy;
    c.cx = 0.5 * width;
    c.cy = 0.5 * height;
    return c;
}

/// Points the camera from eye toward target with +y as world up.
inline void look_at(Camera& c, const Vec3& eye, const Vec3& target, const Vec3& up = {0, 1, 0}) {
    const Vec3 f = target - eye;
    if (norm(f) < 1e-12) fail(ErrorCode::InvalidArgument, "look_at eye and target coincide");
    const Vec3 z = normalized(f);
    Vec3 x = cross(z, up);
    if (norm(x) < 1e-9) x = cross(z, Vec3{0, 0, 1});
    x = normalized(x);
    const Vec3 y = cross(z, x);
    c.rotation = Mat3::from_rows(x, y, z);
    c.translation = -(c.rotation * eye);
}

struct Orbit {
    double azimuth_deg = 0.0;
    double elevation_deg = 0.0;
    double radius = 3.0;
    Vec3 target{};
};

/// Eye on a sphere around target; azimuth turns about +y starting from +z.
inline Vec3 orbit_eye(const Orbit& o) {
    const double az = deg_to_rad(o.azimuth_deg), el = deg_to_rad(o.elevation_deg);
    return o.target + o.radius * Vec3{std::cos(el) * std::sin(az), std::sin(el), std::cos(el) * std::cos(az)};
}

inline void apply_orbit(Camera& c, const Orbit& o) {
    if (!(o.radius > 0.0) || !std::isfinite(o.radius)) fail(ErrorCode::InvalidArgument, "orbit radius must be positive");
    if (!(std::abs(o.elevation_deg) < 90.0)) fail(ErrorCode::InvalidArgument, "orbit elevation must lie in (-90, 90)");
    look_at(c, orbit_eye(o), o.target);
}

/// Folds a global body transform into the camera: R_c' = R_c R_s, T_c' = R_c T_s + T_c.
inline std::pair<Mat3, Vec3> augment_camera(const Mat3& rs, const Vec3& ts, const Mat3& rc, const Vec3& tc) {
    return {rc * rs, rc * ts + tc};
}

inline Camera augment_camera(const Camera& cam, const RigidTransform& global) {
    Camera out = cam;
    std::tie(out.rotation, out.translation) = augment_camera(global.rotation, global.translation, cam.rotation, cam.translation);
    return out;
}

} // namespace gav
