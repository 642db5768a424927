// Copyright Contributors to the gavatar project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "gavatar/body_io.hpp"
#include "gavatar/image_io.hpp"
#include "gavatar/trainer.hpp"

#include "json.hpp"

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace gav {

inline constexpr int kManifestVersion = 1;

/// Frames whose index is 5 mod 10 are held out unless the manifest says otherwise.
inline bool default_holdout(int frame_index) { return frame_index % 10 == 5; }

struct DatasetFrame {
    int index = 0;
    std::filesystem::path image;  // resolved against the manifest directory
    std::filesystem::path mask;   // empty when the frame has no mask
    std::string camera;
    Pose pose;
    bool holdout = false;
};

/// Manifest plus body; images load on demand through sample().
struct Dataset {
    std::filesystem::path root;
    std::filesystem::path body_path;
    SkinnedBody body;
    std::map<std::string, Camera> cameras;
    std::vector<DatasetFrame> frames;
    Vec3 background{};
    int total_frames = 0;

    std::size_t size() const { return frames.size(); }

    /// Loads frame i: reads image and mask, validates them against the
    /// camera and replaces masked-out pixels by the background.
    TrainSample sample(std::size_t i) const {
        const DatasetFrame& f = frames.at(i);
        const Camera& cam = cameras.at(f.camera);
        TrainSample s;
        s.frame = f.index;
        s.total_frames = total_frames;
        s.camera = cam;
        s.pose = f.pose;
        if (!std::filesystem::exists(f.image)) fail(ErrorCode::MissingFile, f.image.string());
        s.image = read_image(f.image);
        if (s.image.width != cam.width || s.image.height != cam.height)
            fail(ErrorCode::ShapeMismatch, f.image.string() + " is " + std::to_string(s.image.width) + "x" +
                                               std::to_string(s.image.height) + ", camera '" + f.camera + "' expects " +
                                               std::to_string(cam.width) + "x" + std::to_string(cam.height));
        if (!f.mask.empty()) {
            if (!std::filesystem::exists(f.mask)) fail(ErrorCode::MissingFile, f.mask.string());
            Image8 m = read_png(f.mask);
            if (m.channels != 1) fail(ErrorCode::ValidationError, f.mask.string() + ": mask must be single-channel");
            if (m.width != cam.width || m.height != cam.height)
                fail(ErrorCode::ShapeMismatch, f.mask.string() + ": mask size does not match camera '" + f.camera + "'");
            s.mask.resize(m.data.size());
            for (std::size_t p = 0; p < m.data.size(); ++p) {
                if (m.data[p] != 0 && m.data[p] != 255)
                    fail(ErrorCode::ValidationError, f.mask.string() + ": mask is not binary at pixel " + std::to_string(p));
                s.mask[p] = m.data[p] ? 1 : 0;
            }
            apply_mask(s.image.data, s.mask, background);
        }
        return s;
    }

    std::vector<std::size_t> indices(bool holdout) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < frames.size(); ++i)
            if (frames[i].holdout == holdout) out.push_back(i);
        return out;
    }

    std::vector<TrainSample> samples(bool holdout) const {
        std::vector<TrainSample> out;
        for (std::size_t i : indices(holdout)) out.push_back(sample(i));
        return out;
    }

    std::vector<TrainSample> all_samples() const {
        std::vector<TrainSample> out;
        for (std::size_t i = 0; i < frames.size(); ++i) out.push_back(sample(i));
        return out;
    }
};

namespace detail {

using nlohmann::json;

inline Vec3 json_vec3(const json& j, const std::string& what) {
    if (!j.is_array() || j.size() != 3) fail(ErrorCode::ValidationError, what + " must be an array of 3 numbers");
    Vec3 v{};
    for (int k = 0; k < 3; ++k) {
        if (!j[static_cast<std::size_t>(k)].is_number()) fail(ErrorCode::ValidationError, what + " must be an array of 3 numbers");
        v[k] = j[static_cast<std::size_t>(k)].get<double>();
    }
    return v;
}

inline json to_json(const Vec3& v) { return json::array({v.x, v.y, v.z}); }

inline json camera_to_json(const std::string& id, const Camera& c) {
    json rot = json::array();
    for (int r = 0; r < 3; ++r) rot.push_back(json::array({c.rotation(r, 0), c.rotation(r, 1), c.rotation(r, 2)}));
    return {{"id", id},      {"width", c.width}, {"height", c.height}, {"fx", c.fx},   {"fy", c.fy},
            {"cx", c.cx},    {"cy", c.cy},       {"rotation", rot},    {"translation", to_json(c.translation)},
            {"near", c.near}, {"far", c.far}};
}

inline Camera camera_from_json(const json& j, const std::string& what) {
    Camera c;
    auto num = [&](const char* key) {
        if (!j.contains(key) || !j[key].is_number()) fail(ErrorCode::ValidationError, what + ": missing number '" + key + "'");
        return j[key].get<double>();
    };
    auto integer = [&](const char* key) {
        if (!j.contains(key) || !j[key].is_number_integer()) fail(ErrorCode::ValidationError, what + ": missing integer '" + key + "'");
        return j[key].get<int>();
    };
    c.width = integer("width");
    c.height = integer("height");
    c.fx = num("fx");
    c.fy = num("fy");
    c.cx = num("cx");
    c.cy = num("cy");
    if (j.contains("near")) c.near = num("near");
    if (j.contains("far")) c.far = num("far");
    if (!j.contains("rotation") || !j["rotation"].is_array() || j["rotation"].size() != 3)
        fail(ErrorCode::ValidationError, what + ": rotation must be a 3x3 array");
    for (int r = 0; r < 3; ++r) {
        const Vec3 row = json_vec3(j["rotation"][static_cast<std::size_t>(r)], what + " rotation row");
        for (int k = 0; k < 3; ++k) c.rotation(r, k) = row[k];
    }
    if (!j.contains("translation")) fail(ErrorCode::ValidationError, what + ": missing translation");
    c.translation = json_vec3(j["translation"], what + " translation");
    if (c.width <= 0 || c.height <= 0) fail(ErrorCode::ValidationError, what + ": image size must be positive");
    if (!(c.fx > 0 && c.fy > 0)) fail(ErrorCode::ValidationError, what + ": focal lengths must be positive");
    if (!(c.near > 0 && c.near < c.far)) fail(ErrorCode::ValidationError, what + ": requires 0 < near < far");
    if (!is_rotation(c.rotation, 1e-6)) fail(ErrorCode::NotARotation, what + ": rotation is not a proper rotation");
    return c;
}

} // namespace detail

inline nlohmann::json pose_to_json(const Pose& p) {
    nlohmann::json jr = nlohmann::json::array();
    for (const auto& r : p.joint_rotations) jr.push_back(detail::to_json(r));
    nlohmann::json j{{"joint_rotations", jr},
                     {"root_rotation", detail::to_json(rotmat_to_axis_angle(p.root_rotation))},
                     {"root_translation", detail::to_json(p.root_translation)}};
    if (!p.shape.empty()) j["shape"] = p.shape;
    return j;
}

inline Pose pose_from_json(const nlohmann::json& j, const std::string& what) {
    if (!j.is_object() || !j.contains("joint_rotations") || !j["joint_rotations"].is_array())
        fail(ErrorCode::ValidationError, what + ": pose needs a joint_rotations array");
    Pose p;
    for (const auto& r : j["joint_rotations"]) p.joint_rotations.push_back(detail::json_vec3(r, what + " joint rotation"));
    if (j.contains("root_rotation")) p.root_rotation = axis_angle_to_rotmat(detail::json_vec3(j["root_rotation"], what + " root_rotation"));
    if (j.contains("root_translation")) p.root_translation = detail::json_vec3(j["root_translation"], what + " root_translation");
    if (j.contains("shape")) {
        if (!j["shape"].is_array()) fail(ErrorCode::ValidationError, what + ": shape must be an array");
        for (const auto& b : j["shape"]) {
            if (!b.is_number()) fail(ErrorCode::ValidationError, what + ": shape must hold numbers");
            p.shape.push_back(b.get<double>());
        }
    }
    return p;
}

/// Manifest JSON (paths relative to the manifest directory).
struct ManifestFrame {
    int index = 0;
    std::string image, mask, camera;
    Pose pose;
    bool holdout = false;
};

inline nlohmann::json manifest_json(const std::string& body_file, const std::map<std::string, Camera>& cameras,
                                    const std::vector<ManifestFrame>& frames, const Vec3& background, int total_frames) {
    nlohmann::json cams = nlohmann::json::array();
    for (const auto& [id, c] : cameras) cams.push_back(detail::camera_to_json(id, c));
    nlohmann::json fr = nlohmann::json::array();
    for (const auto& f : frames) {
        nlohmann::json j{{"index", f.index}, {"image", f.image}, {"camera", f.camera}, {"pose", pose_to_json(f.pose)},
                         {"split", f.holdout ? "test" : "train"}};
        if (!f.mask.empty()) j["mask"] = f.mask;
        fr.push_back(j);
    }
    return {{"version", kManifestVersion}, {"body", body_file}, {"background", detail::to_json(background)},
            {"frame_count", total_frames}, {"cameras", cams}, {"frames", fr}};
}

/// Parses and validates a manifest. Every referenced file must exist; image
/// headers are checked against their camera without decoding pixels.
inline Dataset load_dataset(const std::filesystem::path& manifest_path) {
    using nlohmann::json;
    if (!std::filesystem::exists(manifest_path)) fail(ErrorCode::MissingFile, manifest_path.string());
    json j;
    {
        std::ifstream in(manifest_path);
        try {
            j = json::parse(in);
        } catch (const json::exception& e) {
            fail(ErrorCode::ParseError, manifest_path.string() + ": " + e.what());
        }
    }
    const std::string where = manifest_path.string();
    if (!j.is_object()) fail(ErrorCode::ValidationError, where + ": manifest must be a JSON object");
    if (!j.contains("version") || !j["version"].is_number_integer())
        fail(ErrorCode::SchemaVersionMismatch, where + ": missing integer 'version'");
    if (j["version"].get<int>() != kManifestVersion)
        fail(ErrorCode::SchemaVersionMismatch, where + ": manifest version " + std::to_string(j["version"].get<int>()) +
                                                   ", expected " + std::to_string(kManifestVersion));
    Dataset ds;
    ds.root = manifest_path.parent_path();
    auto resolve = [&](const std::string& rel) { return (ds.root / rel).lexically_normal(); };
    if (!j.contains("body") || !j["body"].is_string()) fail(ErrorCode::ValidationError, where + ": missing 'body' path");
    ds.body_path = resolve(j["body"].get<std::string>());
    if (!std::filesystem::exists(ds.body_path)) fail(ErrorCode::MissingFile, ds.body_path.string());
    ds.body = load_body(ds.body_path);
    if (j.contains("background")) {
        ds.background = detail::json_vec3(j["background"], "background");
        for (int k = 0; k < 3; ++k)
            if (!(ds.background[k] >= 0.0 && ds.background[k] <= 1.0))
                fail(ErrorCode::ValidationError, where + ": background must lie in [0, 1]");
    }
    if (!j.contains("cameras") || !j["cameras"].is_array() || j["cameras"].empty())
        fail(ErrorCode::ValidationError, where + ": at least one camera is required");
    for (const auto& cj : j["cameras"]) {
        if (!cj.contains("id") || !cj["id"].is_string()) fail(ErrorCode::ValidationError, where + ": camera without string 'id'");
        const std::string id = cj["id"].get<std::string>();
        if (ds.cameras.count(id)) fail(ErrorCode::ValidationError, where + ": duplicate camera id '" + id + "'");
        ds.cameras[id] = detail::camera_from_json(cj, "camera '" + id + "'");
    }
    if (!j.contains("frames") || !j["frames"].is_array()) fail(ErrorCode::ValidationError, where + ": missing 'frames' array");
    std::set<int> seen;
    int max_index = -1;
    for (std::size_t k = 0; k < j["frames"].size(); ++k) {
        const auto& fj = j["frames"][k];
        const std::string what = "frame " + std::to_string(k);
        if (!fj.is_object() || !fj.contains("index") || !fj["index"].is_number_integer())
            fail(ErrorCode::ValidationError, where + ": " + what + " lacks an integer 'index'");
        DatasetFrame f;
        f.index = fj["index"].get<int>();
        if (f.index < 0) fail(ErrorCode::ValidationError, where + ": " + what + " has a negative index");
        if (!seen.insert(f.index).second)
            fail(ErrorCode::ValidationError, where + ": frame index " + std::to_string(f.index) + " appears twice");
        max_index = std::max(max_index, f.index);
        if (!fj.contains("image") || !fj["image"].is_string()) fail(ErrorCode::ValidationError, where + ": " + what + " lacks 'image'");
        f.image = resolve(fj["image"].get<std::string>());
        if (!std::filesystem::exists(f.image)) fail(ErrorCode::MissingFile, f.image.string());
        if (fj.contains("mask")) {
            if (!fj["mask"].is_string()) fail(ErrorCode::ValidationError, where + ": " + what + " mask must be a path");
            f.mask = resolve(fj["mask"].get<std::string>());
            if (!std::filesystem::exists(f.mask)) fail(ErrorCode::MissingFile, f.mask.string());
        }
        if (!fj.contains("camera") || !fj["camera"].is_string()) fail(ErrorCode::ValidationError, where + ": " + what + " lacks 'camera'");
        f.camera = fj["camera"].get<std::string>();
        const auto cam = ds.cameras.find(f.camera);
        if (cam == ds.cameras.end())
            fail(ErrorCode::ValidationError, where + ": " + what + " references unknown camera '" + f.camera + "'");
        if (!fj.contains("pose")) fail(ErrorCode::ValidationError, where + ": " + what + " lacks 'pose'");
        f.pose = pose_from_json(fj["pose"], what);
        if (f.pose.joint_count() != ds.body.joint_count())
            fail(ErrorCode::JointCountMismatch, where + ": " + what + " pose has " + std::to_string(f.pose.joint_count()) +
                                                    " joints, body has " + std::to_string(ds.body.joint_count()));
        if (static_cast<int>(f.pose.shape.size()) > ds.body.shape_count)
            fail(ErrorCode::ValidationError, where + ": " + what + " has more shape coefficients than the body");
        f.holdout = default_holdout(f.index);
        if (fj.contains("split")) {
            const std::string split = fj["split"].is_string() ? fj["split"].get<std::string>() : "";
            if (split != "train" && split != "test")
                fail(ErrorCode::ValidationError, where + ": " + what + " split must be \"train\" or \"test\"");
            f.holdout = split == "test";
        }
        if (f.image.extension() == ".png") {
            const Image8 h = read_png(f.image, true);
            if (h.width != cam->second.width || h.height != cam->second.height)
                fail(ErrorCode::ShapeMismatch, f.image.string() + " does not match the size of camera '" + f.camera + "'");
        }
        ds.frames.push_back(std::move(f));
    }
    ds.total_frames = max_index + 1;
    if (j.contains("frame_count")) {
        if (!j["frame_count"].is_number_integer() || j["frame_count"].get<int>() <= max_index)
            fail(ErrorCode::ValidationError, where + ": frame_count must exceed every frame index");
        ds.total_frames = j["frame_count"].get<int>();
    }
    return ds;
}

} // namespace gav
