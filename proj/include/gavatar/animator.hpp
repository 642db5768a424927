// Copyright Contributors to the gavatar project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "gavatar/body.hpp"
#include "gavatar/gaussians.hpp"
#include "gavatar/refine_net.hpp"

#include <atomic>
#include <span>
#include <vector>

namespace gav {

/// Gaussians after skinning but before refinement.
///
/// The articulated part is kept in the body frame (before the global root
/// transform) so residuals can be applied there; world-space accessors apply
/// the root transform. Static Gaussians are untouched by either.
struct RigidlyPosedCloud {
    std::vector<Vec3> local_positions;
    std::vector<Quat> local_rotations;
    std::vector<Mat3> local_facet_rotations;
    std::vector<bool> animated;
    Mat3 root_rotation = Mat3::identity();
    Quat root_quat = Quat::identity();
    Vec3 root_translation{};

    std::size_t size() const { return local_positions.size(); }

    Vec3 position(std::size_t i) const {
        return animated[i] ? root_rotation * local_positions[i] + root_translation : local_positions[i];
    }
    Quat rotation(std::size_t i) const { return animated[i] ? hamilton(root_quat, local_rotations[i]) : local_rotations[i]; }
    /// Per-Gaussian rigid rotation R_i in world space.
    Mat3 facet_rotation(std::size_t i) const {
        return animated[i] ? root_rotation * local_facet_rotations[i] : local_facet_rotations[i];
    }
};

/// Per-facet body-frame rotations between the shaped rest pose and the pose.
inline std::vector<Mat3> local_facet_rotations(const SkinnedBody& body, const Pose& pose) {
    Pose rest = Pose::rest(body.joint_count());
    rest.shape = pose.shape;
    return facet_rotations(body, rest, pose.body_frame());
}

inline RigidlyPosedCloud animate_rigid(const GaussianCloud& cloud, const SkinnedBody& body, const Pose& pose) {
    const std::size_t n = cloud.size();
    RigidlyPosedCloud out;
    out.local_positions.resize(n);
    out.local_rotations.resize(n);
    out.local_facet_rotations.assign(n, Mat3::identity());
    out.animated.assign(n, false);
    out.root_rotation = pose.root_rotation;
    out.root_quat = rotmat_to_quat(pose.root_rotation);
    out.root_translation = pose.root_translation;

    bool any_bound = false;
    for (const auto& b : cloud.bindings) any_bound = any_bound || b.bound();
    BoneTransforms g;
    std::vector<Mat3> facets;
    if (any_bound) {
        if (cloud.joint_count != body.joint_count())
            fail(ErrorCode::JointCountMismatch, "cloud is bound to " + std::to_string(cloud.joint_count) +
                                                    " joints, body has " + std::to_string(body.joint_count()));
        g = forward_kinematics(body, pose, false);
        facets = local_facet_rotations(body, pose);
    }
    parallel_for(n, [&](std::size_t i) {
        const Binding& b = cloud.bindings[i];
        if (!b.bound()) {
            out.local_positions[i] = cloud.positions[i];
            out.local_rotations[i] = cloud.rotations[i];
            return;
        }
        if (b.facet < 0 || b.facet >= body.face_count())
            fail(ErrorCode::ValidationError, "gaussian " + std::to_string(i) + " has no facet binding");
        out.animated[i] = true;
        out.local_positions[i] = blend(cloud.weight_row(i), g).apply(cloud.positions[i]);
        const Mat3& rf = facets[static_cast<std::size_t>(b.facet)];
        out.local_facet_rotations[i] = rf;
        out.local_rotations[i] = hamilton(rotmat_to_quat(rf), cloud.rotations[i]);
    });
    return out;
}

/// Render-ready Gaussians in world space.
struct PosedGaussians {
    std::vector<Vec3> positions;
    std::vector<Quat> rotations;
    std::vector<Vec3> scales;
    std::vector<Mat3> facet_rotations;  // R_i
    std::vector<Quat> delta_rotations;  // Δr (identity for static or unrefined Gaussians)
    std::vector<bool> scale_clamped;    // per axis flags packed as 3 entries per Gaussian
    int floor_clamps = 0;

    std::size_t size() const { return positions.size(); }
};

inline std::atomic<long long>& scale_floor_warning_count() {
    static std::atomic<long long> count{0};
    return count;
}

/// x'' = x' + Δx, r'' = Δr ⊗ r', s'' = max(s + Δs, floor), with residuals
/// applied in the body frame. Pass null residuals for pure rigid animation.
inline PosedGaussians apply_refinement(const RigidlyPosedCloud& rigid, std::span<const Vec3> scales,
                                       const Residuals* res) {
    const std::size_t n = rigid.size();
    PosedGaussians out;
    out.positions.resize(n);
    out.rotations.resize(n);
    out.scales.resize(n);
    out.facet_rotations.resize(n);
    out.delta_rotations.assign(n, Quat::identity());
    out.scale_clamped.assign(3 * n, false);
    for (std::size_t i = 0; i < n; ++i) {
        out.facet_rotations[i] = rigid.facet_rotation(i);
        const bool refine = res && rigid.animated[i];
        if (!refine) {
            out.positions[i] = rigid.position(i);
            out.rotations[i] = rigid.rotation(i);
            out.scales[i] = scales[i];
            continue;
        }
        const Vec3 xl = rigid.local_positions[i] + res->dx[i];
        out.positions[i] = rigid.root_rotation * xl + rigid.root_translation;
        out.delta_rotations[i] = res->dr[i];
        out.rotations[i] = hamilton(rigid.root_quat, hamilton(res->dr[i], rigid.local_rotations[i]));
        Vec3 s = scales[i] + res->ds[i];
        for (int k = 0; k < 3; ++k) {
            if (!(s[k] >= kScaleFloor)) {
                s[k] = kScaleFloor;
                out.scale_clamped[3 * i + static_cast<std::size_t>(k)] = true;
                ++out.floor_clamps;
            }
        }
        out.scales[i] = s;
    }
    if (out.floor_clamps > 0) scale_floor_warning_count() += out.floor_clamps;
    return out;
}

inline PosedGaussians apply_refinement(const RigidlyPosedCloud& rigid, std::span<const Vec3> scales, const Residuals& res) {
    return apply_refinement(rigid, scales, &res);
}

/// d'' = M(Δr)ᵀ R_iᵀ normalize(x'' − P_c).
inline Vec3 effective_view_dir(const Vec3& x, const Vec3& camera_center, const Mat3& r_i, const Quat& dr) {
    const Vec3 v = x - camera_center;
    const double len = norm(v);
    if (len < 1e-9) fail(ErrorCode::ZeroDirection, "gaussian coincides with the camera center");
    return quat_to_rotmat(dr).transposed() * (r_i.transposed() * (v / len));
}

/// The refinement net's pose input for a pose under a given net.
inline std::vector<double> net_pose_input(const RefinementNet& net, const Pose& pose, int joint_count) {
    const int shape_dims = net.config().pose_input_dim - 3 * joint_count;
    if (shape_dims < 0)
        fail(ErrorCode::JointCountMismatch, "net pose input of " + std::to_string(net.config().pose_input_dim) +
                                                " entries cannot hold " + std::to_string(joint_count) + " joints");
    return pose.feature_vector(shape_dims);
}

} // namespace gav
