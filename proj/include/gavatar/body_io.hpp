// Copyright Contributors to the gavatar project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "gavatar/binary.hpp"
#include "gavatar/body.hpp"

#include "json.hpp"

#include <filesystem>
#include <algorithm>
#include <map>
#include <numbers>
#include <string>

namespace gav {

// Body container, little-endian:
//   "GAVB\0" | u32 version | u32 section count |
//   per section: 4-byte tag | u64 payload bytes | payload
// Sections: VERT (f64 V*3), FACE (u32 F*3), WGHT (f64 V*N), JOIN (f64 N*3),
// PRNT (i32 N), NAME (N length-prefixed strings, optional),
// SHAP (u32 B then f64 V*B*3, optional).
inline constexpr std::string_view kBodyMagic{"GAVB\0", 5};
inline constexpr std::uint32_t kBodyVersion = 1;

namespace detail {

inline void put_section(ByteWriter& out, std::string_view tag, const ByteWriter& payload) {
    out.put_raw(tag);
    out.put<std::uint64_t>(payload.bytes().size());
    out.put_bytes(payload.bytes());
}

inline void put_vec3s(ByteWriter& w, std::span<const Vec3> vs) {
    for (const auto& v : vs) {
        w.put(v.x);
        w.put(v.y);
        w.put(v.z);
    }
}

inline std::vector<Vec3> get_vec3s(ByteReader& r, std::size_t n) {
    if (r.remaining() / 24 < n) fail(ErrorCode::ParseError, "section too short");
    std::vector<Vec3> out(n);
    for (auto& v : out) {
        v.x = r.get<double>();
        v.y = r.get<double>();
        v.z = r.get<double>();
    }
    return out;
}

} // namespace detail

inline std::vector<unsigned char> encode_body(const SkinnedBody& body) {
    ByteWriter out;
    out.put_raw(kBodyMagic);
    out.put<std::uint32_t>(kBodyVersion);
    const bool has_names = !body.joint_names.empty();
    const bool has_shape = body.shape_count > 0;
    out.put<std::uint32_t>(5u + (has_names ? 1u : 0u) + (has_shape ? 1u : 0u));

    ByteWriter vert;
    detail::put_vec3s(vert, body.vertices);
    detail::put_section(out, "VERT", vert);

    ByteWriter face;
    for (const auto& f : body.faces)
        for (auto i : f) face.put<std::uint32_t>(i);
    detail::put_section(out, "FACE", face);

    ByteWriter wght;
    for (double w : body.weights) wght.put(w);
    detail::put_section(out, "WGHT", wght);

    ByteWriter join;
    detail::put_vec3s(join, body.joints);
    detail::put_section(out, "JOIN", join);

    ByteWriter prnt;
    for (int p : body.parents) prnt.put<std::int32_t>(p);
    detail::put_section(out, "PRNT", prnt);

    if (has_names) {
        ByteWriter names;
        for (const auto& n : body.joint_names) names.put_string(n);
        detail::put_section(out, "NAME", names);
    }
    if (has_shape) {
        ByteWriter shap;
        shap.put<std::uint32_t>(static_cast<std::uint32_t>(body.shape_count));
        detail::put_vec3s(shap, body.shape_basis);
        detail::put_section(out, "SHAP", shap);
    }
    return std::move(out.bytes());
}

inline SkinnedBody decode_body(std::span<const unsigned char> bytes) {
    ByteReader in(bytes);
    if (in.get_raw(kBodyMagic.size()) != kBodyMagic) fail(ErrorCode::ParseError, "not a GAVB body container");
    const auto version = in.get<std::uint32_t>();
    if (version != kBodyVersion)
        fail(ErrorCode::VersionMismatch, "body container version " + std::to_string(version) + " is not supported");
    const auto count = in.get<std::uint32_t>();
    std::map<std::string, std::span<const unsigned char>> sections;
    for (std::uint32_t s = 0; s < count; ++s) {
        std::string tag = in.get_raw(4);
        const auto len = in.get<std::uint64_t>();
        if (len > in.remaining()) fail(ErrorCode::ParseError, "section " + tag + " overruns the file");
        sections[tag] = in.get_bytes(static_cast<std::size_t>(len));
    }
    auto require = [&](const char* tag) {
        auto it = sections.find(tag);
        if (it == sections.end()) fail(ErrorCode::ParseError, std::string("missing section ") + tag);
        return ByteReader(it->second);
    };

    SkinnedBody body;
    {
        auto r = require("VERT");
        if (r.remaining() % 24) fail(ErrorCode::ParseError, "VERT size is not a multiple of 24");
        body.vertices = detail::get_vec3s(r, r.remaining() / 24);
    }
    {
        auto r = require("JOIN");
        if (r.remaining() % 24) fail(ErrorCode::ParseError, "JOIN size is not a multiple of 24");
        body.joints = detail::get_vec3s(r, r.remaining() / 24);
    }
    const std::size_t v = body.vertices.size(), n = body.joints.size();
    {
        auto r = require("FACE");
        if (r.remaining() % 12) fail(ErrorCode::ParseError, "FACE size is not a multiple of 12");
        body.faces.resize(r.remaining() / 12);
        for (auto& f : body.faces)
            for (auto& i : f) i = r.get<std::uint32_t>();
    }
    {
        auto r = require("WGHT");
        if (r.remaining() != v * n * 8) fail(ErrorCode::ParseError, "WGHT size does not match V x N");
        body.weights.resize(v * n);
        for (auto& w : body.weights) w = r.get<double>();
    }
    {
        auto r = require("PRNT");
        if (r.remaining() != n * 4) fail(ErrorCode::ParseError, "PRNT size does not match N");
        body.parents.resize(n);
        for (auto& p : body.parents) p = r.get<std::int32_t>();
    }
    if (auto it = sections.find("NAME"); it != sections.end()) {
        ByteReader r(it->second);
        for (std::size_t j = 0; j < n; ++j) body.joint_names.push_back(r.get_string());
    }
    if (auto it = sections.find("SHAP"); it != sections.end()) {
        ByteReader r(it->second);
        body.shape_count = static_cast<int>(r.get<std::uint32_t>());
        body.shape_basis = detail::get_vec3s(r, v * static_cast<std::size_t>(body.shape_count));
    }
    return body;
}

inline nlohmann::json body_to_json(const SkinnedBody& body) {
    using nlohmann::json;
    auto vecs = [](std::span<const Vec3> vs) {
        json a = json::array();
        for (const auto& v : vs) a.push_back({v.x, v.y, v.z});
        return a;
    };
    json j;
    j["format"] = "gavatar-body";
    j["version"] = kBodyVersion;
    j["vertices"] = vecs(body.vertices);
    j["faces"] = json::array();
    for (const auto& f : body.faces) j["faces"].push_back({f[0], f[1], f[2]});
    j["weights"] = json::array();
    for (int i = 0; i < body.vertex_count(); ++i) {
        const auto row = body.weight_row(i);
        j["weights"].push_back(std::vector<double>(row.begin(), row.end()));
    }
    j["joints"] = vecs(body.joints);
    j["parents"] = body.parents;
    if (!body.joint_names.empty()) j["joint_names"] = body.joint_names;
    if (body.shape_count > 0) {
        j["shape_count"] = body.shape_count;
        j["shape_basis"] = vecs(body.shape_basis);
    }
    return j;
}

inline SkinnedBody body_from_json(const nlohmann::json& j) {
    try {
        if (j.value("format", std::string{}) != "gavatar-body") fail(ErrorCode::ParseError, "format must be gavatar-body");
        if (j.value("version", 0u) != kBodyVersion) fail(ErrorCode::VersionMismatch, "unsupported body JSON version");
        auto vecs = [](const nlohmann::json& a) {
            std::vector<Vec3> out;
            for (const auto& e : a) {
                if (e.size() != 3) fail(ErrorCode::ParseError, "expected a 3-vector");
                out.push_back({e[0].get<double>(), e[1].get<double>(), e[2].get<double>()});
            }
            return out;
        };
        SkinnedBody body;
        body.vertices = vecs(j.at("vertices"));
        body.joints = vecs(j.at("joints"));
        for (const auto& f : j.at("faces")) {
            if (f.size() != 3) fail(ErrorCode::ParseError, "faces must be index triples");
            body.faces.push_back({f[0].get<std::uint32_t>(), f[1].get<std::uint32_t>(), f[2].get<std::uint32_t>()});
        }
        for (const auto& row : j.at("weights")) {
            if (row.size() != body.joints.size()) fail(ErrorCode::ParseError, "weight row length differs from joint count");
            for (const auto& w : row) body.weights.push_back(w.get<double>());
        }
        body.parents = j.at("parents").get<std::vector<int>>();
        if (j.contains("joint_names")) body.joint_names = j["joint_names"].get<std::vector<std::string>>();
        if (j.contains("shape_basis")) {
            body.shape_count = j.at("shape_count").get<int>();
            body.shape_basis = vecs(j["shape_basis"]);
        }
        return body;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::ParseError, e.what());
    }
}

/// Loads a GAVB container or its JSON variant, then validates the invariants.
inline SkinnedBody load_body(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) fail(ErrorCode::MissingFile, path.string());
    const auto bytes = read_file_bytes(path);
    SkinnedBody body;
    if (bytes.size() >= kBodyMagic.size() && std::equal(kBodyMagic.begin(), kBodyMagic.end(), bytes.begin())) {
        body = decode_body(bytes);
    } else {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(bytes.begin(), bytes.end());
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorCode::ParseError, path.string() + ": " + e.what());
        }
        body = body_from_json(j);
    }
    validate_body(body);
    return body;
}

inline void save_body(const SkinnedBody& body, const std::filesystem::path& path) {
    if (path.extension() == ".json") {
        write_file_atomic(path, body_to_json(body).dump());
    } else {
        write_file_atomic(path, encode_body(body));
    }
}

/// Closed tube along +y: `rings` vertex rings plus two pole vertices, split
/// into `joints` chained bones of equal length. V = rings*segments + 2 and
/// F = 2*rings*segments. Blend weights are a piecewise-linear partition of
/// unity over bone centres.
inline SkinnedBody make_tube_body(int rings, int segments, int joints, double length = 1.0, double radius = 0.15) {
    if (rings < 2 || segments < 3 || joints < 1) fail(ErrorCode::InvalidArgument, "tube needs rings>=2, segments>=3, joints>=1");
    SkinnedBody body;
    const double bone = length / joints;
    for (int j = 0; j < joints; ++j) {
        body.joints.push_back({0.0, j * bone, 0.0});
        body.parents.push_back(j - 1);
        body.joint_names.push_back("joint_" + std::to_string(j));
    }
    auto add_vertex = [&](const Vec3& p) {
        body.vertices.push_back(p);
        const double s = std::clamp(p.y / bone, 0.0, static_cast<double>(joints));
        std::vector<double> w(static_cast<std::size_t>(joints), 0.0);
        const double c = s - 0.5;
        if (c <= 0.0) {
            w[0] = 1.0;
        } else if (c >= joints - 1) {
            w[static_cast<std::size_t>(joints - 1)] = 1.0;
        } else {
            const int k = static_cast<int>(std::floor(c));
            const double t = c - k;
            w[static_cast<std::size_t>(k)] = 1.0 - t;
            w[static_cast<std::size_t>(k + 1)] += t;
        }
        body.weights.insert(body.weights.end(), w.begin(), w.end());
    };
    const double margin = length / (rings + 1);
    for (int r = 0; r < rings; ++r) {
        const double y = margin * (r + 1);
        // Gentle waist so the silhouette is not a pure cylinder.
        const double rad = radius * (1.0 - 0.15 * std::sin(std::numbers::pi * y / length));
        for (int s = 0; s < segments; ++s) {
            const double phi = 2.0 * std::numbers::pi * s / segments;
            add_vertex({rad * std::cos(phi), y, rad * std::sin(phi)});
        }
    }
    const auto bottom = static_cast<std::uint32_t>(body.vertices.size());
    add_vertex({0.0, 0.0, 0.0});
    const auto top = static_cast<std::uint32_t>(body.vertices.size());
    add_vertex({0.0, length, 0.0});
    auto idx = [&](int r, int s) { return static_cast<std::uint32_t>(r * segments + (s % segments)); };
    for (int r = 0; r + 1 < rings; ++r)
        for (int s = 0; s < segments; ++s) {
            body.faces.push_back({idx(r, s), idx(r + 1, s), idx(r, s + 1)});
            body.faces.push_back({idx(r, s + 1), idx(r + 1, s), idx(r + 1, s + 1)});
        }
    for (int s = 0; s < segments; ++s) {
        body.faces.push_back({bottom, idx(0, s), idx(0, s + 1)});
        body.faces.push_back({top, idx(rings - 1, s + 1), idx(rings - 1, s)});
    }
    return body;
}

/// 128-vertex, 2-joint test body.
inline SkinnedBody make_fixture_body() { return make_tube_body(9, 14, 2); }

/// Body with the vertex/face/joint counts of the common parametric human model.
inline SkinnedBody make_smpl_sized_body() { return make_tube_body(287, 24, 24, 1.7, 0.18); }

} // namespace gav
