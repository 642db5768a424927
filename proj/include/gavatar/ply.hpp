// Copyright Contributors to the gavatar project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "gavatar/binary.hpp"
#include "gavatar/gaussians.hpp"

#include <charconv>
#include <cmath>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace gav {

// PLY support covers `ascii` and `binary_little_endian` files whose first
// element is `vertex` with float x, y, z and uchar red, green, blue.
// Optional float properties w0..w{N-1} carry skinning weights. Other
// properties and trailing elements are skipped.

enum class PlyFormat { Ascii, BinaryLittleEndian };

namespace detail {

enum class PlyType { I8, U8, I16, U16, I32, U32, F32, F64 };

inline std::optional<PlyType> ply_type(const std::string& s) {
    if (s == "char" || s == "int8") return PlyType::I8;
    if (s == "uchar" || s == "uint8") return PlyType::U8;
    if (s == "short" || s == "int16") return PlyType::I16;
    if (s == "ushort" || s == "uint16") return PlyType::U16;
    if (s == "int" || s == "int32") return PlyType::I32;
    if (s == "uint" || s == "uint32") return PlyType::U32;
    if (s == "float" || s == "float32") return PlyType::F32;
    if (s == "double" || s == "float64") return PlyType::F64;
    return std::nullopt;
}

inline std::size_t ply_size(PlyType t) {
    switch (t) {
    case PlyType::I8: case PlyType::U8: return 1;
    case PlyType::I16: case PlyType::U16: return 2;
    case PlyType::I32: case PlyType::U32: case PlyType::F32: return 4;
    case PlyType::F64: return 8;
    }
    return 0;
}

inline double ply_read_binary(ByteReader& r, PlyType t) {
    switch (t) {
    case PlyType::I8: return r.get<std::int8_t>();
    case PlyType::U8: return r.get<std::uint8_t>();
    case PlyType::I16: return r.get<std::int16_t>();
    case PlyType::U16: return r.get<std::uint16_t>();
    case PlyType::I32: return r.get<std::int32_t>();
    case PlyType::U32: return r.get<std::uint32_t>();
    case PlyType::F32: return r.get<float>();
    case PlyType::F64: return r.get<double>();
    }
    return 0;
}

struct PlyProperty {
    std::string name;
    PlyType type{};
    bool is_list = false;
    PlyType count_type{};
};

struct PlyElement {
    std::string name;
    std::size_t count = 0;
    std::vector<PlyProperty> props;
};

} // namespace detail

inline std::uint8_t color_to_byte(double c) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(c, 0.0, 1.0) * 255.0));
}

inline std::vector<unsigned char> encode_ply(const ColoredPointCloud& pc, PlyFormat fmt = PlyFormat::BinaryLittleEndian) {
    validate_points(pc);
    const int jc = pc.has_weights() ? pc.joint_count : 0;
    std::ostringstream h;
    h << "ply\nformat " << (fmt == PlyFormat::Ascii ? "ascii" : "binary_little_endian") << " 1.0\n";
    h << "comment gavatar colored point cloud\n";
    h << "element vertex " << pc.size() << "\n";
    h << "property float x\nproperty float y\nproperty float z\n";
    h << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
    for (int j = 0; j < jc; ++j) h << "property float w" << j << "\n";
    h << "end_header\n";
    ByteWriter out;
    out.put_raw(h.str());
    if (fmt == PlyFormat::Ascii) {
        std::string body;
        char buf[64];
        for (std::size_t i = 0; i < pc.size(); ++i) {
            for (int k = 0; k < 3; ++k) {
                // Shortest text that parses back to the same float.
                const auto res = std::to_chars(buf, buf + sizeof buf, static_cast<float>(pc.positions[i][k]));
                body.append(buf, res.ptr);
                body += ' ';
            }
            for (int k = 0; k < 3; ++k) {
                body += std::to_string(color_to_byte(pc.colors[i][k]));
                body += (k < 2 || jc > 0) ? ' ' : '\n';
            }
            for (int j = 0; j < jc; ++j) {
                const auto res = std::to_chars(buf, buf + sizeof buf,
                                               static_cast<float>(pc.weights[i * static_cast<std::size_t>(jc) + static_cast<std::size_t>(j)]));
                body.append(buf, res.ptr);
                body += j + 1 < jc ? ' ' : '\n';
            }
        }
        out.put_raw(body);
    } else {
        for (std::size_t i = 0; i < pc.size(); ++i) {
            for (int k = 0; k < 3; ++k) out.put(static_cast<float>(pc.positions[i][k]));
            for (int k = 0; k < 3; ++k) out.put(color_to_byte(pc.colors[i][k]));
            for (int j = 0; j < jc; ++j)
                out.put(static_cast<float>(pc.weights[i * static_cast<std::size_t>(jc) + static_cast<std::size_t>(j)]));
        }
    }
    return std::move(out.bytes());
}

inline ColoredPointCloud decode_ply(std::span<const unsigned char> bytes) {
    using namespace detail;
    // Header: lines up to and including "end_header".
    std::size_t pos = 0;
    std::vector<std::string> lines;
    for (;;) {
        const auto nl = std::find(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end(), '\n');
        if (nl == bytes.end()) fail(ErrorCode::ParseError, "PLY header is not terminated by end_header");
        std::string line(bytes.begin() + static_cast<std::ptrdiff_t>(pos), nl);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        pos = static_cast<std::size_t>(nl - bytes.begin()) + 1;
        lines.push_back(line);
        if (line == "end_header") break;
        if (lines.size() > 10000) fail(ErrorCode::ParseError, "PLY header too long");
    }
    if (lines.empty() || lines[0] != "ply") fail(ErrorCode::ParseError, "missing PLY magic");
    std::optional<PlyFormat> fmt;
    std::vector<PlyElement> elements;
    for (std::size_t l = 1; l + 1 < lines.size(); ++l) {
        std::istringstream ls(lines[l]);
        std::string word;
        ls >> word;
        if (word == "format") {
            std::string f, ver;
            ls >> f >> ver;
            if (f == "ascii") fmt = PlyFormat::Ascii;
            else if (f == "binary_little_endian") fmt = PlyFormat::BinaryLittleEndian;
            else fail(ErrorCode::UnsupportedPlyVariant, "PLY format '" + f + "' is not supported");
        } else if (word == "element") {
            PlyElement e;
            long long count = -1;
            ls >> e.name >> count;
            if (count < 0) fail(ErrorCode::ParseError, "bad element line: " + lines[l]);
            e.count = static_cast<std::size_t>(count);
            elements.push_back(e);
        } else if (word == "property") {
            if (elements.empty()) fail(ErrorCode::ParseError, "property before any element");
            PlyProperty p;
            std::string t;
            ls >> t;
            if (t == "list") {
                std::string ct, it;
                ls >> ct >> it >> p.name;
                const auto c = ply_type(ct), v = ply_type(it);
                if (!c || !v) fail(ErrorCode::ParseError, "unknown list property type in: " + lines[l]);
                p.is_list = true;
                p.count_type = *c;
                p.type = *v;
            } else {
                const auto v = ply_type(t);
                if (!v) fail(ErrorCode::ParseError, "unknown property type '" + t + "'");
                p.type = *v;
                ls >> p.name;
            }
            elements.back().props.push_back(p);
        } else if (word == "comment" || word == "obj_info" || word.empty()) {
            continue;
        } else {
            fail(ErrorCode::ParseError, "unexpected PLY header line: " + lines[l]);
        }
    }
    if (!fmt) fail(ErrorCode::ParseError, "PLY header has no format line");
    if (elements.empty() || elements[0].name != "vertex") fail(ErrorCode::ParseError, "first PLY element must be vertex");
    const PlyElement& ve = elements[0];
    std::array<int, 6> slot{-1, -1, -1, -1, -1, -1};
    const std::array<const char*, 6> names{"x", "y", "z", "red", "green", "blue"};
    std::vector<int> weight_slot;
    for (std::size_t p = 0; p < ve.props.size(); ++p) {
        for (int k = 0; k < 6; ++k)
            if (ve.props[p].name == names[static_cast<std::size_t>(k)]) slot[static_cast<std::size_t>(k)] = static_cast<int>(p);
        const auto& n = ve.props[p].name;
        if (n.size() > 1 && n[0] == 'w' && std::all_of(n.begin() + 1, n.end(), ::isdigit)) {
            const int j = std::stoi(n.substr(1));
            if (j >= static_cast<int>(weight_slot.size())) weight_slot.resize(static_cast<std::size_t>(j) + 1, -1);
            weight_slot[static_cast<std::size_t>(j)] = static_cast<int>(p);
        }
    }
    for (int k = 0; k < 6; ++k)
        if (slot[static_cast<std::size_t>(k)] < 0)
            fail(ErrorCode::ParseError, std::string("PLY vertex element lacks property ") + names[static_cast<std::size_t>(k)]);
    for (int s : weight_slot)
        if (s < 0) fail(ErrorCode::ParseError, "PLY weight properties w0..wN are not contiguous");
    for (const auto& p : ve.props)
        if (p.is_list) fail(ErrorCode::ParseError, "list properties on vertices are not supported");

    ColoredPointCloud pc;
    const std::size_t n = ve.count;
    const std::size_t np = ve.props.size();
    pc.joint_count = static_cast<int>(weight_slot.size());
    pc.positions.resize(n);
    pc.colors.resize(n);
    if (pc.joint_count > 0) pc.weights.resize(n * weight_slot.size());
    std::vector<double> row(np);
    auto store = [&](std::size_t i) {
        for (int k = 0; k < 3; ++k) pc.positions[i][k] = row[static_cast<std::size_t>(slot[static_cast<std::size_t>(k)])];
        for (int k = 0; k < 3; ++k) {
            const double c = row[static_cast<std::size_t>(slot[static_cast<std::size_t>(3 + k)])];
            const PlyType t = ve.props[static_cast<std::size_t>(slot[static_cast<std::size_t>(3 + k)])].type;
            pc.colors[i][k] = (t == PlyType::F32 || t == PlyType::F64) ? c : c / 255.0;
        }
        for (std::size_t j = 0; j < weight_slot.size(); ++j)
            pc.weights[i * weight_slot.size() + j] = row[static_cast<std::size_t>(weight_slot[j])];
    };
    const auto payload = bytes.subspan(pos);
    if (*fmt == PlyFormat::BinaryLittleEndian) {
        std::size_t stride = 0;
        for (const auto& p : ve.props) stride += ply_size(p.type);
        if (payload.size() / std::max<std::size_t>(stride, 1) < n)
            fail(ErrorCode::ParseError, "PLY vertex data is truncated");
        ByteReader r(payload);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t p = 0; p < np; ++p) row[p] = ply_read_binary(r, ve.props[p].type);
            store(i);
        }
    } else {
        const char* cur = reinterpret_cast<const char*>(payload.data());
        const char* end = cur + payload.size();
        auto next_number = [&](double& v) {
            while (cur < end && std::isspace(static_cast<unsigned char>(*cur))) ++cur;
            if (cur == end) fail(ErrorCode::ParseError, "PLY vertex data is truncated");
            const auto res = std::from_chars(cur, end, v);
            if (res.ec != std::errc()) fail(ErrorCode::ParseError, "bad number in PLY vertex data");
            cur = res.ptr;
        };
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t p = 0; p < np; ++p) {
                if (ve.props[p].type == PlyType::F32) {
                    // Parse as float so text written from f32 round-trips exactly.
                    while (cur < end && std::isspace(static_cast<unsigned char>(*cur))) ++cur;
                    float f = 0;
                    const auto res = std::from_chars(cur, end, f);
                    if (res.ec != std::errc()) fail(ErrorCode::ParseError, "bad number in PLY vertex data");
                    cur = res.ptr;
                    row[p] = f;
                } else {
                    next_number(row[p]);
                }
            }
            store(i);
        }
    }
    for (std::size_t i = 0; i < n; ++i)
        if (!is_finite(pc.positions[i])) fail(ErrorCode::ParseError, "PLY vertex " + std::to_string(i) + " is not finite");
    return pc;
}

inline ColoredPointCloud read_ply(const std::filesystem::path& path) {
    try {
        return decode_ply(read_file_bytes(path));
    } catch (const Error& e) {
        if (e.code() == ErrorCode::MissingFile) throw;
        fail(e.code(), path.string() + ": " + e.detail());
    }
}

inline void write_ply(const ColoredPointCloud& pc, const std::filesystem::path& path, PlyFormat fmt = PlyFormat::BinaryLittleEndian) {
    write_file_atomic(path, encode_ply(pc, fmt));
}

} // namespace gav
