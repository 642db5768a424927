// Copyright Contributors to the gavatar project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "gavatar/checkpoint.hpp"
#include "gavatar/dataset.hpp"
#include "gavatar/frame_select.hpp"

#include <cstdio>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>
#include <vector>

namespace gav {

enum class PoseScript {
    Static,      // rest pose throughout
    ElbowSwing,  // joint 1 bends about z: 0 → swing → 0 over the sequence
    ElbowRamp,   // joint 1 bends about z linearly from 0 to swing
    Turntable,   // constant pose, root yaw 0 → 360° over the sequence
};

inline PoseScript parse_pose_script(const std::string& s) {
    if (s == "static") return PoseScript::Static;
    if (s == "elbow-swing") return PoseScript::ElbowSwing;
    if (s == "elbow-ramp") return PoseScript::ElbowRamp;
    if (s == "turntable") return PoseScript::Turntable;
    fail(ErrorCode::InvalidArgument, "unknown pose script '" + s + "' (static, elbow-swing, elbow-ramp, turntable)");
}

struct SyntheticSpec {
    int rings = 20, segments = 25, joints = 2;  // tube body
    int frames = 60;
    int width = 64, height = 64;
    double fov_y_deg = 40.0;
    bool orbit_camera = true;  // camera circles the subject; otherwise fixed at azimuth_start
    double radius = 2.2;
    double elevation_deg = 10.0;
    double azimuth_start_deg = 0.0, azimuth_end_deg = 360.0;  // end is exclusive
    Vec3 target{0.0, 0.5, 0.0};
    PoseScript script = PoseScript::ElbowSwing;
    double swing_deg = 45.0;
    Vec3 background{};
    double mask_coverage = 0.01;  // pixels with 1 − T above this are foreground
    double jitter = 0.0;          // normal offset of the true Gaussians from the template
    std::uint64_t seed = 7;
};

struct SyntheticData {
    SkinnedBody body;
    Checkpoint truth;
    std::map<std::string, Camera> cameras;
    std::vector<TrainSample> samples;  // quantized exactly as written to disk
    std::vector<bool> holdout;
    Vec3 background{};
};

/// Area-weighted vertex normals.
inline std::vector<Vec3> vertex_normals(const SkinnedBody& body) {
    std::vector<Vec3> n(body.vertices.size(), Vec3{});
    for (const auto& f : body.faces) {
        const Vec3& a = body.vertices[f[0]];
        const Vec3 fn = cross(body.vertices[f[1]] - a, body.vertices[f[2]] - a);
        for (auto v : f) n[v] += fn;
    }
    for (auto& v : n) {
        const double len = norm(v);
        v = len > 1e-12 ? v / len : Vec3{0, 1, 0};
    }
    return n;
}

/// Known ground-truth avatar: one flat, opaque, colored Gaussian per body vertex.
inline GaussianCloud synthetic_avatar(const SkinnedBody& body, double jitter = 0.0, std::uint64_t seed = 7) {
    GaussianCloud c = init_from_vertices(body, 0);
    const auto normals = vertex_normals(body);
    const double spacing = mean_edge_length(body);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, 1.0);
    for (std::size_t i = 0; i < c.size(); ++i) {
        const Vec3 n = normals[i];
        const Vec3 helper = std::abs(n.y) < 0.9 ? Vec3{0, 1, 0} : Vec3{1, 0, 0};
        const Vec3 t = normalized(cross(helper, n));
        const Vec3 b = cross(n, t);
        Mat3 r;
        for (int k = 0; k < 3; ++k) {
            r(k, 0) = t[k];
            r(k, 1) = b[k];
            r(k, 2) = n[k];
        }
        c.rotations[i] = rotmat_to_quat(r);
        c.scales[i] = {0.45 * spacing, 0.55 * spacing, 0.08 * spacing};
        c.opacity_logits[i] = logit(0.9);
        const Vec3 p = body.vertices[i];
        const double phi = std::atan2(p.z, p.x);
        const Vec3 rgb{0.5 + 0.4 * std::sin(9.0 * p.y + phi), 0.5 + 0.35 * std::cos(3.0 * phi - 4.0 * p.y),
                       0.5 + 0.4 * std::sin(2.0 * phi + 13.0 * p.y + 1.0)};
        for (int k = 0; k < 3; ++k) c.sh[i][0][k] = sh::dc_from_color(rgb[k]);
        if (jitter > 0.0) c.positions[i] += n * (jitter * nd(rng));
    }
    bind_cloud(c, body);
    return c;
}

inline Pose synthetic_pose(const SyntheticSpec& spec, int joints, int f) {
    Pose p = Pose::rest(joints);
    const double u = spec.frames > 1 ? static_cast<double>(f) / (spec.frames - 1) : 0.0;
    const double swing = deg_to_rad(spec.swing_deg);
    switch (spec.script) {
    case PoseScript::Static: break;
    case PoseScript::ElbowSwing:
        if (joints > 1) p.joint_rotations[1] = {0, 0, swing * 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * f / spec.frames))};
        break;
    case PoseScript::ElbowRamp:
        if (joints > 1) p.joint_rotations[1] = {0, 0, swing * u};
        break;
    case PoseScript::Turntable:
        p.root_rotation = rot_y(2.0 * std::numbers::pi * f / spec.frames);
        break;
    }
    return p;
}

/// Renders a dataset from the synthetic avatar with the engine's own renderer.
inline SyntheticData make_synthetic(const SyntheticSpec& spec) {
    if (spec.frames < 1) fail(ErrorCode::InvalidArgument, "synthetic dataset needs at least one frame");
    SyntheticData d;
    d.body = make_tube_body(spec.rings, spec.segments, spec.joints);
    d.background = spec.background;
    d.truth.cloud = synthetic_avatar(d.body, spec.jitter, spec.seed);
    NetConfig nc;
    nc.pose_input_dim = 3 * d.body.joint_count();
    d.truth.net = RefinementNet(nc);
    const RefinementNet* net = nullptr;  // zero-initialized heads: the truth is purely rigid
    for (int f = 0; f < spec.frames; ++f) {
        const double az = spec.orbit_camera ? spec.azimuth_start_deg + (spec.azimuth_end_deg - spec.azimuth_start_deg) * f / spec.frames
                                            : spec.azimuth_start_deg;
        Camera cam = camera_from_fov(spec.width, spec.height, spec.fov_y_deg);
        apply_orbit(cam, {az, spec.elevation_deg, spec.radius, spec.target});
        const std::string id = spec.orbit_camera ? "cam" + std::to_string(f) : "cam0";
        d.cameras[id] = cam;
        TrainSample s;
        s.frame = f;
        s.total_frames = spec.frames;
        s.camera = cam;
        s.pose = synthetic_pose(spec, d.body.joint_count(), f);
        const Framebuffer fb = render(d.truth.cloud, d.body, s.pose, net, s.time(), cam, spec.background);
        s.mask.resize(fb.pixel_count());
        for (std::size_t p = 0; p < fb.pixel_count(); ++p) s.mask[p] = 1.0 - fb.transmittance[p] > spec.mask_coverage ? 1 : 0;
        Image img(spec.width, spec.height);
        img.data = fb.color;
        apply_mask(img.data, s.mask, spec.background);
        s.image = dequantize(quantize(img));
        d.samples.push_back(std::move(s));
        d.holdout.push_back(default_holdout(f));
    }
    return d;
}

/// The camera id used by frame f of a synthetic dataset.
inline std::string synthetic_camera_id(const SyntheticData& d, std::size_t f) {
    return d.cameras.size() == 1 ? d.cameras.begin()->first : "cam" + std::to_string(f);
}

/// Writes body.gavb, truth.gavc, images/, masks/ and manifest.json under dir.
inline std::filesystem::path write_synthetic(const SyntheticData& d, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir / "images");
    fs::create_directories(dir / "masks");
    save_body(d.body, dir / "body.gavb");
    save_checkpoint(d.truth, dir / "truth.gavc");
    std::vector<ManifestFrame> frames;
    for (std::size_t f = 0; f < d.samples.size(); ++f) {
        const auto& s = d.samples[f];
        char name[32];
        std::snprintf(name, sizeof name, "%04d.png", s.frame);
        write_png(s.image, dir / "images" / name);
        Image8 m{s.image.width, s.image.height, 1, std::vector<std::uint8_t>(s.mask.size())};
        for (std::size_t p = 0; p < s.mask.size(); ++p) m.data[p] = s.mask[p] ? 255 : 0;
        write_png(m, dir / "masks" / name);
        frames.push_back({s.frame, std::string("images/") + name, std::string("masks/") + name, synthetic_camera_id(d, f), s.pose,
                          d.holdout[f]});
    }
    const auto j = manifest_json("body.gavb", d.cameras, frames, d.background, static_cast<int>(d.samples.size()));
    const auto path = dir / "manifest.json";
    write_file_atomic(path, j.dump(2) + "\n");
    return path;
}

/// Root rotations and body-frame joint positions for select_frames.
struct SelectionInputs {
    std::vector<Mat3> rotations;
    std::vector<std::vector<Vec3>> joints;
    std::vector<Vec3> canonical;
};

inline SelectionInputs selection_inputs(const SkinnedBody& body, std::span<const Pose> poses) {
    SelectionInputs in;
    in.canonical = body.joints;
    for (const auto& p : poses) {
        in.rotations.push_back(p.root_rotation);
        const auto g = forward_kinematics(body, p, false);
        std::vector<Vec3> j(body.joints.size());
        for (std::size_t k = 0; k < j.size(); ++k) j[k] = g[k].apply(body.joints[k]);
        in.joints.push_back(std::move(j));
    }
    return in;
}

} // namespace gav
