// Copyright Contributors to the gavatar project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "gavatar/animator.hpp"
#include "gavatar/camera.hpp"
#include "gavatar/gaussians.hpp"
#include "gavatar/raster.hpp"
#include "gavatar/refine_net.hpp"
#include "gavatar/sh.hpp"

#include <optional>
#include <span>
#include <vector>

namespace gav {

struct RenderOptions {
    int threads = 0;
    bool reference = false;  // brute-force rasterizer instead of the tiled one
};

/// Everything the backward pass needs from one forward render.
struct RenderCache {
    bool valid = false;
    Camera camera;
    int sh_degree = 0;
    RigidlyPosedCloud rigid;
    PosedGaussians posed;
    std::vector<Mat3> blend_linear;      // A_i of the skinning blend per Gaussian
    std::vector<Quat> facet_quats;       // quaternion of the local facet rotation
    std::vector<Mat3> covariances;
    std::vector<int> splat_of;           // Gaussian -> splat index or -1
    std::vector<Splat2D> splats;
    std::vector<Vec3> view_dirs;         // per splat
    std::vector<std::array<bool, 3>> color_active;  // per splat
    bool refined = false;
    NetCache net_cache;
    RasterCache raster;
};

/// Canonical cloud → posed Gaussians → splats → framebuffer.
inline Framebuffer render(const GaussianCloud& cloud, const SkinnedBody& body, const Pose& pose, const RefinementNet* net,
                          double time, const Camera& cam, const Vec3& background, RenderCache* cache = nullptr,
                          const RenderOptions& opt = {}) {
    RenderCache local;
    RenderCache& c = cache ? *cache : local;
    c = RenderCache{};
    c.camera = cam;
    c.sh_degree = cloud.sh_degree;
    c.rigid = animate_rigid(cloud, body, pose);
    const std::size_t n = cloud.size();

    bool any_animated = false;
    for (std::size_t i = 0; i < n; ++i) any_animated = any_animated || c.rigid.animated[i];
    std::optional<Residuals> res;
    if (net && any_animated) {
        res = refine_forward(*net, cloud.positions, time, net_pose_input(*net, pose, body.joint_count()),
                             cache ? &c.net_cache : nullptr);
        c.refined = true;
    }
    c.posed = apply_refinement(c.rigid, cloud.scales, res ? &*res : nullptr);

    if (cache) {
        c.blend_linear.assign(n, Mat3::identity());
        c.facet_quats.assign(n, Quat::identity());
        if (any_animated) {
            const auto g = forward_kinematics(body, pose, false);
            for (std::size_t i = 0; i < n; ++i) {
                if (!c.rigid.animated[i]) continue;
                c.blend_linear[i] = blend(cloud.weight_row(i), g).linear;
                c.facet_quats[i] = rotmat_to_quat(c.rigid.local_facet_rotations[i]);
            }
        }
    }

    const Vec3 center = cam.center();
    c.covariances.resize(n);
    c.splat_of.assign(n, -1);
    std::vector<std::optional<Splat2D>> projected(n);
    std::vector<Vec3> dirs(n);
    std::vector<ShColor> colors(n);
    parallel_for(n, [&](std::size_t i) {
        c.covariances[i] = covariance(c.posed.rotations[i].normalized(), c.posed.scales[i]);
        auto s = project(c.posed.positions[i], c.covariances[i], cam);
        if (!s) return;
        dirs[i] = effective_view_dir(c.posed.positions[i], center, c.posed.facet_rotations[i], c.posed.delta_rotations[i]);
        colors[i] = sh_eval_detailed(cloud.sh[i], cloud.sh_degree, dirs[i]);
        s->color = colors[i].rgb;
        s->alpha = cloud.opacity(i);
        s->id = static_cast<int>(i);
        projected[i] = s;
    }, opt.threads);
    for (std::size_t i = 0; i < n; ++i) {
        if (!projected[i]) continue;
        c.splat_of[i] = static_cast<int>(c.splats.size());
        c.splats.push_back(*projected[i]);
        c.view_dirs.push_back(dirs[i]);
        c.color_active.push_back(colors[i].active);
    }
    Framebuffer fb = opt.reference ? rasterize_reference(c.splats, cam.width, cam.height, background)
                                   : rasterize_tiled(c.splats, cam.width, cam.height, background, &c.raster, opt.threads);
    if (opt.reference && cache) {
        // The backward pass walks the tiled bins; they are rebuilt here to match.
        rasterize_tiled(c.splats, cam.width, cam.height, background, &c.raster, opt.threads);
    }
    c.valid = cache != nullptr;
    return fb;
}

/// Gradients with respect to the stored cloud parameters and the net.
struct CloudGrad {
    std::vector<Vec3> positions;
    std::vector<Quat> rotations;  // raw stored quaternions
    std::vector<Vec3> scales;     // raw lengths
    std::vector<double> opacity_logits;
    std::vector<SHArray> sh;
    std::vector<double> screen_grad;  // |dL/d(screen mean)| per Gaussian
    std::optional<RefinementNet> net;

    explicit CloudGrad(std::size_t n = 0)
        : positions(n), rotations(n, Quat{0, 0, 0, 0}), scales(n), opacity_logits(n, 0.0), sh(n), screen_grad(n, 0.0) {}
};

inline CloudGrad render_backward(const GaussianCloud& cloud, const RefinementNet* net, const RenderCache& c,
                                 std::span<const double> grad_color, const RenderOptions& opt = {}) {
    if (!c.valid) fail(ErrorCode::NoCachedForward, "render_backward called without a cached forward pass");
    const std::size_t n = cloud.size();
    if (c.splat_of.size() != n) fail(ErrorCode::ShapeMismatch, "cloud changed since the cached forward pass");
    const auto sg = rasterize_backward(c.splats, c.raster, grad_color, opt.threads);
    CloudGrad out(n);
    const Camera& cam = c.camera;
    const Vec3 center = cam.center();
    const int n_coeffs = sh::coeff_count(c.sh_degree);

    // Gradients on the posed (world) attributes and on Δr.
    std::vector<Vec3> d_pos(n), d_scale(n);
    std::vector<Quat> d_rot(n, Quat{0, 0, 0, 0}), d_dr(n, Quat{0, 0, 0, 0});
    parallel_for(n, [&](std::size_t i) {
        const int si = c.splat_of[i];
        if (si < 0) return;
        const Splat2D& s = c.splats[static_cast<std::size_t>(si)];
        const SplatGrad& g = sg[static_cast<std::size_t>(si)];
        const double o = s.alpha;
        out.opacity_logits[i] = g.alpha * o * (1.0 - o);
        out.screen_grad[i] = std::sqrt(g.mean_x * g.mean_x + g.mean_y * g.mean_y);

        // Color through the clamp and the SH basis.
        const auto& active = c.color_active[static_cast<std::size_t>(si)];
        const Vec3 gc{active[0] ? g.color.x : 0.0, active[1] ? g.color.y : 0.0, active[2] ? g.color.z : 0.0};
        const Vec3& dir = c.view_dirs[static_cast<std::size_t>(si)];
        const auto basis = sh::basis(dir, c.sh_degree);
        const auto basis_grad = sh::basis_gradient(dir, c.sh_degree);
        Vec3 d_dir{};
        for (int k = 0; k < n_coeffs; ++k) {
            const auto ku = static_cast<std::size_t>(k);
            out.sh[i][ku] = gc * basis[ku];
            d_dir += basis_grad[ku] * dot(cloud.sh[i][ku], gc);
        }

        // d'' = M(Δr)ᵀ R_iᵀ normalize(x'' − P_c).
        const Mat3& ri = c.posed.facet_rotations[i];
        const Quat& dr = c.posed.delta_rotations[i];
        const Mat3 m = quat_to_rotmat(dr);
        const Vec3 ray = c.posed.positions[i] - center;
        const Vec3 v = ri.transposed() * (ray / norm(ray));
        d_dr[i] = quat_to_rotmat_backward(dr, outer(v, d_dir));
        const Vec3 dv = m * d_dir;
        Vec3 dx = normalize_backward(ray, ri * dv);

        const auto pg = project_backward(c.posed.positions[i], c.covariances[i], cam, g.mean_x, g.mean_y, g.conic);
        dx += pg.d_mean;
        const Quat r_raw = c.posed.rotations[i];
        const auto cg = covariance_backward(r_raw.normalized(), c.posed.scales[i], pg.d_cov);
        d_pos[i] = dx;
        d_rot[i] = normalize_backward(r_raw, cg.d_rotation);
        d_scale[i] = cg.d_scale;
    }, opt.threads);

    // Back through refinement and skinning.
    std::vector<Vec3> g_dx(n), g_ds(n);
    std::vector<Quat> g_dr(n, Quat{0, 0, 0, 0});
    const auto& rig = c.rigid;
    for (std::size_t i = 0; i < n; ++i) {
        if (!rig.animated[i]) {
            out.positions[i] = d_pos[i];
            out.rotations[i] = d_rot[i];
            out.scales[i] = d_scale[i];
            continue;
        }
        const Vec3 d_local = rig.root_rotation.transposed() * d_pos[i];
        out.positions[i] = c.blend_linear[i].transposed() * d_local;
        // r'' = q_s ⊗ (Δr ⊗ (q_f ⊗ r)).
        const Quat& dr = c.posed.delta_rotations[i];
        const Quat a = rig.local_rotations[i];
        const Quat b = hamilton(dr, a);
        const Quat db = hamilton_backward(rig.root_quat, b, d_rot[i]).db;
        const auto ab = hamilton_backward(dr, a, db);
        out.rotations[i] = hamilton_backward(c.facet_quats[i], cloud.rotations[i], ab.db).db;
        Vec3 ds = d_scale[i];
        for (int k = 0; k < 3; ++k)
            if (c.posed.scale_clamped[3 * i + static_cast<std::size_t>(k)]) ds[k] = 0.0;
        out.scales[i] = ds;
        if (c.refined) {
            g_dx[i] = d_local;
            g_ds[i] = ds;
            g_dr[i] = ab.da + d_dr[i];
        }
    }
    if (c.refined && net) {
        NetGradients ng = make_net_gradients(*net);
        refine_backward(*net, c.net_cache, g_dx, g_dr, g_ds, ng);
        for (std::size_t i = 0; i < n; ++i) out.positions[i] += ng.d_positions[i];
        out.net = std::move(ng.params);
    }
    return out;
}

} // namespace gav
