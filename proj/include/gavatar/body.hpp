// Copyright Contributors to the gavatar project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "gavatar/error.hpp"
#include "gavatar/geom.hpp"
#include "gavatar/parallel.hpp"
#include "gavatar/spatial_grid.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace gav {

using Face = std::array<std::uint32_t, 3>;

/// Template mesh with a joint tree and per-vertex blend weights. Weights are
/// stored row-major, one row of joint_count() entries per vertex. The optional
/// shape basis holds shape_count() offsets per vertex (index v * B + b).
struct SkinnedBody {
    std::vector<Vec3> vertices;
    std::vector<Face> faces;
    std::vector<double> weights;
    std::vector<Vec3> joints;
    std::vector<int> parents;
    std::vector<std::string> joint_names;
    int shape_count = 0;
    std::vector<Vec3> shape_basis;

    int vertex_count() const { return static_cast<int>(vertices.size()); }
    int face_count() const { return static_cast<int>(faces.size()); }
    int joint_count() const { return static_cast<int>(joints.size()); }

    std::span<const double> weight_row(int v) const {
        const auto n = static_cast<std::size_t>(joint_count());
        return std::span<const double>(weights).subspan(static_cast<std::size_t>(v) * n, n);
    }
};

/// Joint indices ordered so every parent precedes its children.
inline std::vector<int> topological_order(std::span<const int> parents) {
    const int n = static_cast<int>(parents.size());
    std::vector<std::vector<int>> children(static_cast<std::size_t>(n));
    int root = -1;
    for (int j = 0; j < n; ++j) {
        const int p = parents[static_cast<std::size_t>(j)];
        if (p < 0) {
            if (root >= 0) fail(ErrorCode::ValidationError, "joint tree has more than one root");
            root = j;
        } else if (p >= n) {
            fail(ErrorCode::ValidationError, "joint " + std::to_string(j) + " has out-of-range parent");
        } else {
            children[static_cast<std::size_t>(p)].push_back(j);
        }
    }
    if (root < 0) fail(ErrorCode::ValidationError, "joint tree has no root");
    std::vector<int> order;
    order.reserve(static_cast<std::size_t>(n));
    order.push_back(root);
    for (std::size_t i = 0; i < order.size(); ++i)
        for (int c : children[static_cast<std::size_t>(order[i])]) order.push_back(c);
    if (static_cast<int>(order.size()) != n) fail(ErrorCode::ValidationError, "joint parent graph contains a cycle");
    return order;
}

inline double triangle_area(const Vec3& a, const Vec3& b, const Vec3& c) { return 0.5 * norm(cross(b - a, c - a)); }

/// Throws ValidationError naming the first violated invariant.
inline void validate_body(const SkinnedBody& body) {
    const int v_count = body.vertex_count();
    const int n = body.joint_count();
    if (v_count == 0) fail(ErrorCode::ValidationError, "body has no vertices");
    if (n == 0) fail(ErrorCode::ValidationError, "body has no joints");
    if (static_cast<int>(body.parents.size()) != n)
        fail(ErrorCode::ValidationError, "parent table has " + std::to_string(body.parents.size()) + " entries, expected " +
                                             std::to_string(n));
    if (body.weights.size() != static_cast<std::size_t>(v_count) * static_cast<std::size_t>(n))
        fail(ErrorCode::ValidationError, "weight table has the wrong size");
    if (body.parents[0] != -1) fail(ErrorCode::ValidationError, "joint 0 must be the root (parent -1)");
    (void)topological_order(body.parents);
    for (int v = 0; v < v_count; ++v) {
        const auto& p = body.vertices[static_cast<std::size_t>(v)];
        if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z))
            fail(ErrorCode::ValidationError, "vertex " + std::to_string(v) + " is not finite");
        double sum = 0.0;
        for (double w : body.weight_row(v)) {
            if (!(w >= 0.0)) fail(ErrorCode::ValidationError, "weight row " + std::to_string(v) + " has a negative entry");
            sum += w;
        }
        if (std::abs(sum - 1.0) > 1e-6) {
            std::ostringstream os;
            os << "weight row " << v << " sums to " << sum;
            fail(ErrorCode::ValidationError, os.str());
        }
    }
    for (int f = 0; f < body.face_count(); ++f) {
        const auto& face = body.faces[static_cast<std::size_t>(f)];
        for (auto idx : face)
            if (idx >= static_cast<std::uint32_t>(v_count))
                fail(ErrorCode::ValidationError, "face " + std::to_string(f) + " indexes a missing vertex");
        if (triangle_area(body.vertices[face[0]], body.vertices[face[1]], body.vertices[face[2]]) < 1e-12)
            fail(ErrorCode::ValidationError, "face " + std::to_string(f) + " is degenerate");
    }
    if (body.shape_count < 0 ||
        body.shape_basis.size() != static_cast<std::size_t>(v_count) * static_cast<std::size_t>(body.shape_count))
        fail(ErrorCode::ValidationError, "shape basis has the wrong size");
    if (!body.joint_names.empty() && static_cast<int>(body.joint_names.size()) != n)
        fail(ErrorCode::ValidationError, "joint name table has the wrong size");
}

/// Per-joint axis-angle rotations about each joint's rest position, plus the
/// global root transform applied after the kinematic chain.
struct Pose {
    std::vector<Vec3> joint_rotations;
    Mat3 root_rotation = Mat3::identity();
    Vec3 root_translation{};
    std::vector<double> shape;

    static Pose rest(int joint_count) {
        Pose p;
        p.joint_rotations.assign(static_cast<std::size_t>(joint_count), Vec3{});
        return p;
    }

    int joint_count() const { return static_cast<int>(joint_rotations.size()); }

    /// The same articulation with the global transform removed.
    Pose body_frame() const {
        Pose p = *this;
        p.root_rotation = Mat3::identity();
        p.root_translation = {};
        return p;
    }

    RigidTransform global() const { return {root_rotation, root_translation}; }

    /// Flattened network input: all joint axis-angles, then the shape coefficients.
    std::vector<double> feature_vector(int shape_dims) const {
        std::vector<double> out;
        out.reserve(joint_rotations.size() * 3 + static_cast<std::size_t>(shape_dims));
        for (const auto& r : joint_rotations) {
            out.push_back(r.x);
            out.push_back(r.y);
            out.push_back(r.z);
        }
        for (int b = 0; b < shape_dims; ++b)
            out.push_back(b < static_cast<int>(shape.size()) ? shape[static_cast<std::size_t>(b)] : 0.0);
        return out;
    }
};

inline void validate_pose(const Pose& pose) {
    for (std::size_t j = 0; j < pose.joint_rotations.size(); ++j) {
        const auto& r = pose.joint_rotations[j];
        if (!std::isfinite(r.x) || !std::isfinite(r.y) || !std::isfinite(r.z))
            fail(ErrorCode::InvalidArgument, "joint " + std::to_string(j) + " rotation is not finite");
        if (norm(r) >= 2.0 * std::numbers::pi)
            fail(ErrorCode::InvalidArgument, "joint " + std::to_string(j) + " rotation magnitude exceeds 2 pi");
    }
    if (!is_rotation(pose.root_rotation, 1e-6)) fail(ErrorCode::NotARotation, "root rotation is not a proper rotation");
    const auto& t = pose.root_translation;
    if (!std::isfinite(t.x) || !std::isfinite(t.y) || !std::isfinite(t.z))
        fail(ErrorCode::InvalidArgument, "root translation is not finite");
    for (double b : pose.shape)
        if (!std::isfinite(b)) fail(ErrorCode::InvalidArgument, "shape coefficient is not finite");
}

/// One canonical-to-posed rigid transform per joint.
using BoneTransforms = std::vector<RigidTransform>;

/// Composes joint transforms root to leaf. With apply_global the pose's root
/// rotation/translation is applied after the chain; otherwise it is withheld.
inline BoneTransforms forward_kinematics(const SkinnedBody& body, const Pose& pose, bool apply_global = true) {
    const int n = body.joint_count();
    if (pose.joint_count() != n)
        fail(ErrorCode::JointCountMismatch,
             "pose has " + std::to_string(pose.joint_count()) + " joints, body has " + std::to_string(n));
    BoneTransforms chain(static_cast<std::size_t>(n));
    for (int j : topological_order(body.parents)) {
        const auto ju = static_cast<std::size_t>(j);
        const Mat3 r = axis_angle_to_rotmat(pose.joint_rotations[ju]);
        const Vec3& pivot = body.joints[ju];
        const RigidTransform local{r, pivot - r * pivot};
        const int parent = body.parents[ju];
        chain[ju] = parent < 0 ? local : chain[static_cast<std::size_t>(parent)].compose(local);
    }
    if (apply_global) {
        const RigidTransform g = pose.global();
        for (auto& t : chain) t = g.compose(t);
    }
    return chain;
}

/// Weight-blended affine map x -> A x + b; A is generally not a rotation.
struct BlendedTransform {
    Mat3 linear = Mat3::zero();
    Vec3 offset{};

    Vec3 apply(const Vec3& p) const { return linear * p + offset; }
};

inline BlendedTransform blend(std::span<const double> weights, const BoneTransforms& g) {
    if (weights.size() != g.size()) fail(ErrorCode::ShapeMismatch, "weight row length differs from joint count");
    BlendedTransform out;
    for (std::size_t j = 0; j < g.size(); ++j) {
        const double w = weights[j];
        if (w == 0.0) continue;
        out.linear += g[j].rotation * w;
        out.offset += g[j].translation * w;
    }
    return out;
}

/// Forward skinning: each point becomes sum_i w_i (G_i point).
inline std::vector<Vec3> lbs_deform(std::span<const Vec3> points, std::span<const double> weights, const BoneTransforms& g) {
    const std::size_t n = g.size();
    if (weights.size() != points.size() * n) fail(ErrorCode::ShapeMismatch, "weights must be points x joints");
    std::vector<Vec3> out(points.size());
    parallel_for(points.size(), [&](std::size_t i) { out[i] = blend(weights.subspan(i * n, n), g).apply(points[i]); });
    return out;
}

/// Inverse skinning: applies the inverse of the blended transform per point.
inline std::vector<Vec3> inverse_lbs(std::span<const Vec3> points, std::span<const double> weights, const BoneTransforms& g) {
    const std::size_t n = g.size();
    if (weights.size() != points.size() * n) fail(ErrorCode::ShapeMismatch, "weights must be points x joints");
    std::vector<Vec3> out(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) {
        const BlendedTransform b = blend(weights.subspan(i * n, n), g);
        const double det = b.linear.determinant();
        if (!(std::abs(det) >= 1e-12))
            fail(ErrorCode::SingularBlend, "blended transform of point " + std::to_string(i) + " is singular");
        out[i] = b.linear.inverse() * (points[i] - b.offset);
    }
    return out;
}

/// Template vertices with the shape offsets applied.
inline std::vector<Vec3> shaped_vertices(const SkinnedBody& body, std::span<const double> shape) {
    std::vector<Vec3> v = body.vertices;
    const int b_count = std::min<int>(body.shape_count, static_cast<int>(shape.size()));
    if (b_count == 0) return v;
    for (std::size_t i = 0; i < v.size(); ++i)
        for (int b = 0; b < b_count; ++b)
            v[i] += body.shape_basis[i * static_cast<std::size_t>(body.shape_count) + static_cast<std::size_t>(b)] *
                    shape[static_cast<std::size_t>(b)];
    return v;
}

inline std::vector<Vec3> posed_vertices(const SkinnedBody& body, const Pose& pose, bool apply_global = true) {
    const auto g = forward_kinematics(body, pose, apply_global);
    return lbs_deform(shaped_vertices(body, pose.shape), body.weights, g);
}

/// Orthonormal facet frame stored column-wise as (a, b, c): a along AB, b the
/// unit normal AB x AC, c = a x b.
using FacetBasis = Mat3;

inline FacetBasis facet_basis(std::span<const Vec3> vertices, const Face& face, int face_index = -1) {
    const Vec3& a = vertices[face[0]];
    const Vec3 ab = vertices[face[1]] - a;
    const Vec3 ac = vertices[face[2]] - a;
    const Vec3 n = cross(ab, ac);
    const double n_len = norm(n);
    if (!(0.5 * n_len >= 1e-12)) fail(ErrorCode::DegenerateFacet, "facet " + std::to_string(face_index) + " has zero area");
    const Vec3 e1 = ab / norm(ab);
    const Vec3 e2 = n / n_len;
    const Vec3 e3 = cross(e1, e2);
    return Mat3::from_columns(e1, e2, e3);
}

inline std::vector<FacetBasis> facet_bases(const SkinnedBody& body, std::span<const Vec3> vertices) {
    std::vector<FacetBasis> out(body.faces.size());
    for (std::size_t f = 0; f < body.faces.size(); ++f) out[f] = facet_basis(vertices, body.faces[f], static_cast<int>(f));
    return out;
}

/// Per-facet rotation carrying the canonical frame onto the observed frame:
/// R_f = E_ob E_can^T.
inline std::vector<Mat3> facet_rotations(std::span<const FacetBasis> canonical, std::span<const FacetBasis> observed) {
    if (canonical.size() != observed.size()) fail(ErrorCode::ShapeMismatch, "facet basis counts differ");
    std::vector<Mat3> out(canonical.size());
    for (std::size_t f = 0; f < canonical.size(); ++f) out[f] = observed[f] * canonical[f].transposed();
    return out;
}

inline std::vector<Mat3> facet_rotations(const SkinnedBody& body, const Pose& pose_can, const Pose& pose_ob) {
    const auto can = facet_bases(body, posed_vertices(body, pose_can));
    const auto ob = facet_bases(body, posed_vertices(body, pose_ob));
    return facet_rotations(can, ob);
}

inline std::vector<Vec3> facet_centroids(const SkinnedBody& body, std::span<const Vec3> vertices) {
    std::vector<Vec3> out(body.faces.size());
    for (std::size_t f = 0; f < body.faces.size(); ++f) {
        const auto& face = body.faces[f];
        out[f] = (vertices[face[0]] + vertices[face[1]] + vertices[face[2]]) / 3.0;
    }
    return out;
}

inline double mean_edge_length(const SkinnedBody& body) {
    double sum = 0.0;
    std::size_t count = 0;
    for (const auto& face : body.faces)
        for (int e = 0; e < 3; ++e) {
            sum += norm(body.vertices[face[static_cast<std::size_t>(e)]] - body.vertices[face[static_cast<std::size_t>((e + 1) % 3)]]);
            ++count;
        }
    return count ? sum / static_cast<double>(count) : 1.0;
}

/// Nearest template vertex and nearest facet centroid (canonical space).
struct Binding {
    int vertex = -1;
    int facet = -1;

    bool bound() const { return vertex >= 0; }
    bool operator==(const Binding&) const = default;
};

/// Spatial index over the canonical template, reused across binding queries.
class BodyIndex {
public:
    explicit BodyIndex(const SkinnedBody& body) {
        const double cell = mean_edge_length(body);
        vertex_grid_ = SpatialGrid(body.vertices, cell);
        centroid_grid_ = SpatialGrid(facet_centroids(body, body.vertices), cell);
    }

    Binding bind(const Vec3& p) const {
        Binding b;
        b.vertex = vertex_grid_.nearest(p).index;
        b.facet = centroid_grid_.nearest(p).index;
        return b;
    }

private:
    SpatialGrid vertex_grid_;
    SpatialGrid centroid_grid_;
};

inline std::vector<Binding> bind_nearest(std::span<const Vec3> points, const SkinnedBody& body) {
    const BodyIndex index(body);
    std::vector<Binding> out(points.size());
    parallel_for(points.size(), [&](std::size_t i) { out[i] = index.bind(points[i]); });
    return out;
}

} // namespace gav
