// Copyright Contributors to the gavatar project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "gavatar/body.hpp"
#include "gavatar/error.hpp"
#include "gavatar/geom.hpp"
#include "gavatar/parallel.hpp"
#include "gavatar/sh.hpp"
#include "gavatar/spatial_grid.hpp"

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace gav {

inline constexpr double kScaleFloor = 1e-7;
inline constexpr double kInitScaleFloor = 1e-4;
inline constexpr double kInitScaleFallback = 0.01;
inline constexpr double kInitOpacity = 0.1;

inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }

using SHArray = std::array<Vec3, sh::kMaxCoeffs>;

/// Canonical Gaussian avatar, stored as parallel arrays.
///
/// Scales are raw lengths in meters; opacity is stored as a logit. A Gaussian
/// with an unbound Binding is static: animation leaves it in place.
struct GaussianCloud {
    std::vector<Vec3> positions;
    std::vector<Quat> rotations;
    std::vector<Vec3> scales;
    std::vector<double> opacity_logits;
    std::vector<SHArray> sh;
    std::vector<Binding> bindings;
    /// Cached skinning weight rows, joint_count entries per Gaussian (zeros when static).
    std::vector<double> weights;
    int joint_count = 0;
    int sh_degree = 0;

    std::size_t size() const { return positions.size(); }
    bool empty() const { return positions.empty(); }

    double opacity(std::size_t i) const { return sigmoid(opacity_logits[i]); }
    SHCoeffs sh_coeffs(std::size_t i) const { return {sh[i], sh_degree}; }

    std::span<const double> weight_row(std::size_t i) const {
        return std::span<const double>(weights).subspan(i * static_cast<std::size_t>(joint_count),
                                                        static_cast<std::size_t>(joint_count));
    }

    void reserve(std::size_t n) {
        positions.reserve(n);
        rotations.reserve(n);
        scales.reserve(n);
        opacity_logits.reserve(n);
        sh.reserve(n);
        bindings.reserve(n);
        weights.reserve(n * static_cast<std::size_t>(joint_count));
    }

    /// Appends Gaussian i of src. Joint counts must agree unless src is all static.
    void append_from(const GaussianCloud& src, std::size_t i) {
        positions.push_back(src.positions[i]);
        rotations.push_back(src.rotations[i]);
        scales.push_back(src.scales[i]);
        opacity_logits.push_back(src.opacity_logits[i]);
        sh.push_back(src.sh[i]);
        bindings.push_back(src.bindings[i]);
        if (src.joint_count == joint_count) {
            const auto row = src.weight_row(i);
            weights.insert(weights.end(), row.begin(), row.end());
        } else {
            weights.resize(weights.size() + static_cast<std::size_t>(joint_count), 0.0);
        }
    }

    /// Keeps the Gaussians whose mask entry is true, preserving order.
    void filter(const std::vector<bool>& keep) {
        GaussianCloud out;
        out.joint_count = joint_count;
        out.sh_degree = sh_degree;
        for (std::size_t i = 0; i < size(); ++i)
            if (keep[i]) out.append_from(*this, i);
        *this = std::move(out);
    }
};

inline void validate_cloud(const GaussianCloud& c, const SkinnedBody* body = nullptr) {
    const std::size_t n = c.size();
    if (c.rotations.size() != n || c.scales.size() != n || c.opacity_logits.size() != n || c.sh.size() != n ||
        c.bindings.size() != n || c.weights.size() != n * static_cast<std::size_t>(c.joint_count))
        fail(ErrorCode::ShapeMismatch, "gaussian cloud arrays have inconsistent lengths");
    if (c.sh_degree < 0 || c.sh_degree > sh::kMaxDegree)
        fail(ErrorCode::ValidationError, "sh degree " + std::to_string(c.sh_degree) + " out of range");
    for (std::size_t i = 0; i < n; ++i) {
        const Vec3 s = c.scales[i];
        if (!(s.x >= kScaleFloor && s.y >= kScaleFloor && s.z >= kScaleFloor))
            fail(ErrorCode::ValidationError, "gaussian " + std::to_string(i) + " has a scale below the floor");
        if (!std::isfinite(c.opacity_logits[i]) || !is_finite(c.positions[i]))
            fail(ErrorCode::ValidationError, "gaussian " + std::to_string(i) + " is not finite");
        if (std::abs(c.rotations[i].norm() - 1.0) > 1e-6)
            fail(ErrorCode::ValidationError, "gaussian " + std::to_string(i) + " rotation is not unit");
        if (body && c.bindings[i].bound()) {
            if (c.bindings[i].vertex >= body->vertex_count() || c.bindings[i].facet < 0 ||
                c.bindings[i].facet >= body->face_count())
                fail(ErrorCode::ValidationError, "gaussian " + std::to_string(i) + " binding out of range");
        }
    }
    if (body && c.joint_count != body->joint_count() && n > 0)
        fail(ErrorCode::JointCountMismatch, "cloud has " + std::to_string(c.joint_count) + " joints, body has " +
                                                std::to_string(body->joint_count()));
}

struct ColoredPointCloud {
    std::vector<Vec3> positions;
    std::vector<Vec3> colors;
    /// Optional: empty, or joint_count entries per point.
    std::vector<double> weights;
    int joint_count = 0;

    std::size_t size() const { return positions.size(); }
    bool has_weights() const { return !weights.empty(); }
};

inline void validate_points(const ColoredPointCloud& pc) {
    if (pc.colors.size() != pc.positions.size())
        fail(ErrorCode::ShapeMismatch, "point cloud has " + std::to_string(pc.positions.size()) + " positions and " +
                                           std::to_string(pc.colors.size()) + " colors");
    if (pc.has_weights() && pc.weights.size() != pc.size() * static_cast<std::size_t>(pc.joint_count))
        fail(ErrorCode::ShapeMismatch, "point cloud weight rows do not match its size");
    for (std::size_t i = 0; i < pc.size(); ++i) {
        if (!is_finite(pc.positions[i])) fail(ErrorCode::ValidationError, "point " + std::to_string(i) + " is not finite");
        const Vec3 c = pc.colors[i];
        if (!(c.x >= 0 && c.x <= 1 && c.y >= 0 && c.y <= 1 && c.z >= 0 && c.z <= 1))
            fail(ErrorCode::ValidationError, "point " + std::to_string(i) + " color outside [0,1]");
    }
}

/// Σ = R S Sᵀ Rᵀ for a unit quaternion and positive scales.
inline Mat3 covariance(const Quat& r, const Vec3& s) {
    const Mat3 m = quat_to_rotmat(r) * Mat3::diagonal(s);
    return m * m.transposed();
}

struct CovarianceGrad {
    Quat d_rotation;
    Vec3 d_scale;
};

/// Reverse of covariance() for an upstream gradient dL/dΣ (any 3×3).
inline CovarianceGrad covariance_backward(const Quat& r, const Vec3& s, const Mat3& g) {
    const Mat3 rot = quat_to_rotmat(r);
    const Mat3 m = rot * Mat3::diagonal(s);
    const Mat3 dm = (g + g.transposed()) * m;
    Mat3 drot;
    Vec3 ds{};
    for (int row = 0; row < 3; ++row) {
        for (int k = 0; k < 3; ++k) {
            drot(row, k) = dm(row, k) * s[k];
            ds[k] += dm(row, k) * rot(row, k);
        }
    }
    return {quat_to_rotmat_backward(r, drot), ds};
}

inline std::vector<Mat3> covariances(const GaussianCloud& c) {
    std::vector<Mat3> out(c.size());
    for (std::size_t i = 0; i < c.size(); ++i) out[i] = covariance(c.rotations[i], c.scales[i]);
    return out;
}

/// Mean distance to the (up to) three nearest other points.
inline std::vector<double> neighbor_scales(std::span<const Vec3> points) {
    std::vector<double> out(points.size(), kInitScaleFallback);
    if (points.size() < 2) return out;
    Vec3 lo = points[0], hi = points[0];
    for (const auto& p : points) {
        lo = {std::min(lo.x, p.x), std::min(lo.y, p.y), std::min(lo.z, p.z)};
        hi = {std::max(hi.x, p.x), std::max(hi.y, p.y), std::max(hi.z, p.z)};
    }
    const Vec3 ext = hi - lo;
    // Roughly a few points per occupied cell for surface-like clouds.
    const double area = std::max({ext.x * ext.y, ext.y * ext.z, ext.x * ext.z, 1e-12});
    const double cell = std::max(std::sqrt(area / static_cast<double>(points.size())) * 2.0, 1e-6);
    const SpatialGrid grid(points, cell);
    parallel_for(points.size(), [&](std::size_t i) {
        const auto nn = grid.k_nearest(points[i], 3, static_cast<int>(i));
        double sum = 0.0;
        for (const auto& n : nn) sum += std::sqrt(n.dist2);
        out[i] = std::max(sum / static_cast<double>(nn.size()), kInitScaleFloor);
    });
    return out;
}

/// Attaches bindings and cached weight rows for a cloud in canonical space.
inline void bind_cloud(GaussianCloud& cloud, const SkinnedBody& body) {
    cloud.bindings = bind_nearest(cloud.positions, body);
    cloud.joint_count = body.joint_count();
    cloud.weights.assign(cloud.size() * static_cast<std::size_t>(cloud.joint_count), 0.0);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const auto row = body.weight_row(cloud.bindings[i].vertex);
        std::copy(row.begin(), row.end(), cloud.weights.begin() + static_cast<std::ptrdiff_t>(i * row.size()));
    }
}

/// One isotropic Gaussian per canonical point, bound to the body when given.
inline GaussianCloud init_from_points(const ColoredPointCloud& pc, const SkinnedBody* body, int sh_degree = 0) {
    if (pc.size() == 0) fail(ErrorCode::EmptyCloud, "cannot initialize from an empty point cloud");
    validate_points(pc);
    GaussianCloud cloud;
    cloud.sh_degree = sh_degree;
    const std::size_t n = pc.size();
    cloud.positions = pc.positions;
    cloud.rotations.assign(n, Quat::identity());
    cloud.opacity_logits.assign(n, logit(kInitOpacity));
    cloud.sh.resize(n);
    const auto scale = neighbor_scales(pc.positions);
    cloud.scales.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        cloud.scales[i] = {scale[i], scale[i], scale[i]};
        cloud.sh[i] = SHCoeffs::flat(pc.colors[i], sh::kMaxDegree).coeffs;
    }
    if (body) {
        bind_cloud(cloud, *body);
    } else {
        cloud.bindings.assign(n, Binding{});
    }
    return cloud;
}

inline GaussianCloud init_from_points(const ColoredPointCloud& pc, const SkinnedBody& body, int sh_degree = 0) {
    return init_from_points(pc, &body, sh_degree);
}

/// One white Gaussian per canonical template vertex.
inline GaussianCloud init_from_vertices(const SkinnedBody& body, int sh_degree = 0) {
    ColoredPointCloud pc;
    pc.positions = body.vertices;
    pc.colors.assign(body.vertices.size(), Vec3{1, 1, 1});
    return init_from_points(pc, &body, sh_degree);
}

struct PosedPart {
    ColoredPointCloud points;
    Pose pose;
};

/// Canonicalizes every posed part through inverse skinning and concatenates them.
inline ColoredPointCloud fuse_parts(std::span<const PosedPart> parts, const SkinnedBody& body) {
    ColoredPointCloud out;
    out.joint_count = body.joint_count();
    const auto n_joints = static_cast<std::size_t>(body.joint_count());
    for (std::size_t p = 0; p < parts.size(); ++p) {
        const auto& part = parts[p];
        validate_points(part.points);
        const auto g = forward_kinematics(body, part.pose);
        std::vector<double> weights;
        if (part.points.has_weights()) {
            if (part.points.joint_count != body.joint_count())
                fail(ErrorCode::JointCountMismatch, "part " + std::to_string(p) + " weight rows have " +
                                                        std::to_string(part.points.joint_count) + " joints");
            weights = part.points.weights;
        } else {
            const auto posed = posed_vertices(body, part.pose);
            const SpatialGrid grid(posed, mean_edge_length(body));
            weights.resize(part.points.size() * n_joints);
            parallel_for(part.points.size(), [&](std::size_t i) {
                const auto row = body.weight_row(grid.nearest(part.points.positions[i]).index);
                std::copy(row.begin(), row.end(), weights.begin() + static_cast<std::ptrdiff_t>(i * n_joints));
            });
        }
        std::vector<Vec3> canonical;
        try {
            canonical = inverse_lbs(part.points.positions, weights, g);
        } catch (const Error& e) {
            if (e.code() == ErrorCode::SingularBlend) fail(e.code(), "part " + std::to_string(p) + ": " + e.detail());
            throw;
        }
        out.positions.insert(out.positions.end(), canonical.begin(), canonical.end());
        out.colors.insert(out.colors.end(), part.points.colors.begin(), part.points.colors.end());
        out.weights.insert(out.weights.end(), weights.begin(), weights.end());
    }
    return out;
}

/// Concatenation; each source keeps its own bindings.
inline GaussianCloud merge_clouds(const GaussianCloud& a, const GaussianCloud& b) {
    if (a.empty()) return b;
    if (b.empty()) return a;
    if (a.sh_degree != b.sh_degree)
        fail(ErrorCode::DegreeMismatch, "cannot merge clouds of sh degree " + std::to_string(a.sh_degree) + " and " +
                                            std::to_string(b.sh_degree));
    GaussianCloud out;
    out.sh_degree = a.sh_degree;
    out.joint_count = std::max(a.joint_count, b.joint_count);
    out.reserve(a.size() + b.size());
    for (const GaussianCloud* src : {&a, &b}) {
        for (std::size_t i = 0; i < src->size(); ++i) {
            if (src->joint_count != out.joint_count && src->bindings[i].bound())
                fail(ErrorCode::JointCountMismatch, "bound gaussians from bodies with different joint counts");
            out.append_from(*src, i);
        }
    }
    return out;
}

} // namespace gav
