// Copyright Contributors to the gavatar project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "gavatar/binary.hpp"
#include "gavatar/trainer.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace gav {

// Checkpoint container, little-endian:
//   "GAVC\0" | u32 version | u32 section count |
//   per section: 4-byte tag | u64 payload bytes | u32 CRC-32 of payload | payload
// Sections, in this order:
//   META  i64 iteration, u32 gaussians, i32 sh_degree, i32 joint_count
//   GPOS  f64 n*3        GROT  f64 n*4 (w,x,y,z)   GSCL  f64 n*3
//   GOPA  f64 n (logits) GSHC  f64 n*16*3          GBND  i32 n*2 (vertex, facet)
//   GWGT  per Gaussian: u8 nonzero count, then (u16 joint, f64 weight) pairs
//   NCFG  u8 present, then i32 pose_input, pose_feature, hidden, layers, pe_frequencies; u64 seed
//   NETW  f64 tensors in RefinementNet::for_each_tensor order
//   TCFG  length-prefixed config text      RNGS  length-prefixed engine state
inline constexpr std::string_view kCheckpointMagic{"GAVC\0", 5};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_crc_section(ByteWriter& out, std::string_view tag, const ByteWriter& payload) {
    out.put_raw(tag);
    out.put<std::uint64_t>(payload.bytes().size());
    out.put<std::uint32_t>(crc32_of(payload.bytes()));
    out.put_bytes(payload.bytes());
}

} // namespace detail

inline std::vector<unsigned char> encode_checkpoint(const Checkpoint& ck) {
    const GaussianCloud& c = ck.cloud;
    validate_cloud(c);
    if (c.joint_count > 65535) fail(ErrorCode::InvalidArgument, "too many joints for the checkpoint format");
    const std::size_t n = c.size();
    ByteWriter out;
    out.put_raw(kCheckpointMagic);
    out.put<std::uint32_t>(kCheckpointVersion);
    out.put<std::uint32_t>(12);

    ByteWriter meta;
    meta.put<std::int64_t>(ck.iteration);
    meta.put<std::uint32_t>(static_cast<std::uint32_t>(n));
    meta.put<std::int32_t>(c.sh_degree);
    meta.put<std::int32_t>(c.joint_count);
    detail::put_crc_section(out, "META", meta);

    ByteWriter pos, rot, scl, opa, shc, bnd, wgt;
    for (std::size_t i = 0; i < n; ++i) {
        for (int k = 0; k < 3; ++k) pos.put(c.positions[i][k]);
        for (int k = 0; k < 4; ++k) rot.put(c.rotations[i][k]);
        for (int k = 0; k < 3; ++k) scl.put(c.scales[i][k]);
        opa.put(c.opacity_logits[i]);
        for (const auto& coeff : c.sh[i])
            for (int k = 0; k < 3; ++k) shc.put(coeff[k]);
        bnd.put<std::int32_t>(c.bindings[i].vertex);
        bnd.put<std::int32_t>(c.bindings[i].facet);
        const auto row = c.weight_row(i);
        const auto nz = std::count_if(row.begin(), row.end(), [](double w) { return w != 0.0; });
        if (nz > 255) fail(ErrorCode::InvalidArgument, "gaussian " + std::to_string(i) + " has more than 255 nonzero weights");
        wgt.put(static_cast<std::uint8_t>(nz));
        for (std::size_t j = 0; j < row.size(); ++j)
            if (row[j] != 0.0) {
                wgt.put<std::uint16_t>(static_cast<std::uint16_t>(j));
                wgt.put(row[j]);
            }
    }
    detail::put_crc_section(out, "GPOS", pos);
    detail::put_crc_section(out, "GROT", rot);
    detail::put_crc_section(out, "GSCL", scl);
    detail::put_crc_section(out, "GOPA", opa);
    detail::put_crc_section(out, "GSHC", shc);
    detail::put_crc_section(out, "GBND", bnd);
    detail::put_crc_section(out, "GWGT", wgt);

    ByteWriter ncfg, netw;
    const bool present = ck.net.parameter_count() > 0;
    ncfg.put<std::uint8_t>(present ? 1 : 0);
    const NetConfig& nc = ck.net.config();
    for (int v : {nc.pose_input_dim, nc.pose_feature_dim, nc.hidden, nc.layers, nc.pe_frequencies}) ncfg.put<std::int32_t>(v);
    ncfg.put<std::uint64_t>(nc.seed);
    if (present)
        ck.net.for_each_tensor([&](std::span<const double> t) {
            for (double v : t) netw.put(v);
        });
    detail::put_crc_section(out, "NCFG", ncfg);
    detail::put_crc_section(out, "NETW", netw);

    ByteWriter tcfg, rngs;
    tcfg.put_string(to_config_text(ck.config));
    rngs.put_string(ck.rng_state);
    detail::put_crc_section(out, "TCFG", tcfg);
    detail::put_crc_section(out, "RNGS", rngs);
    return std::move(out.bytes());
}

inline Checkpoint decode_checkpoint(std::span<const unsigned char> bytes) {
    if (bytes.size() < kCheckpointMagic.size() ||
        !std::equal(kCheckpointMagic.begin(), kCheckpointMagic.end(), bytes.begin()))
        fail(ErrorCode::ParseError, "not a GAVC checkpoint");
    ByteReader in(bytes.subspan(kCheckpointMagic.size()), ErrorCode::CorruptSection);
    const auto version = in.get<std::uint32_t>();
    if (version != kCheckpointVersion)
        fail(ErrorCode::VersionMismatch, "checkpoint version " + std::to_string(version) + ", expected " +
                                             std::to_string(kCheckpointVersion));
    const auto count = in.get<std::uint32_t>();
    std::map<std::string, std::span<const unsigned char>> sec;
    for (std::uint32_t s = 0; s < count; ++s) {
        if (in.remaining() < 16) fail(ErrorCode::CorruptSection, "section table truncated at entry " + std::to_string(s));
        const std::string tag = in.get_raw(4);
        const auto len = in.get<std::uint64_t>();
        const auto crc = in.get<std::uint32_t>();
        if (len > in.remaining()) fail(ErrorCode::CorruptSection, "section " + tag + " is truncated");
        const auto payload = in.get_bytes(static_cast<std::size_t>(len));
        if (crc32_of(payload) != crc) fail(ErrorCode::CorruptSection, "section " + tag + " fails its CRC check");
        sec[tag] = payload;
    }
    auto reader = [&](const char* tag) {
        const auto it = sec.find(tag);
        if (it == sec.end()) fail(ErrorCode::CorruptSection, std::string("missing section ") + tag);
        return ByteReader(it->second, ErrorCode::CorruptSection);
    };
    auto expect_size = [](ByteReader& r, std::size_t bytes_needed, const char* tag) {
        if (r.remaining() != bytes_needed) fail(ErrorCode::CorruptSection, std::string("section ") + tag + " has the wrong size");
    };

    Checkpoint ck;
    GaussianCloud& c = ck.cloud;
    auto meta = reader("META");
    ck.iteration = meta.get<std::int64_t>();
    const std::size_t n = meta.get<std::uint32_t>();
    c.sh_degree = meta.get<std::int32_t>();
    c.joint_count = meta.get<std::int32_t>();
    if (c.joint_count < 0 || c.sh_degree < 0 || c.sh_degree > sh::kMaxDegree)
        fail(ErrorCode::CorruptSection, "META holds an invalid header");

    auto pos = reader("GPOS");
    expect_size(pos, n * 24, "GPOS");
    auto rot = reader("GROT");
    expect_size(rot, n * 32, "GROT");
    auto scl = reader("GSCL");
    expect_size(scl, n * 24, "GSCL");
    auto opa = reader("GOPA");
    expect_size(opa, n * 8, "GOPA");
    auto shc = reader("GSHC");
    expect_size(shc, n * 384, "GSHC");
    auto bnd = reader("GBND");
    expect_size(bnd, n * 8, "GBND");
    auto wgt = reader("GWGT");
    c.positions.resize(n);
    c.rotations.resize(n);
    c.scales.resize(n);
    c.opacity_logits.resize(n);
    c.sh.resize(n);
    c.bindings.resize(n);
    c.weights.assign(n * static_cast<std::size_t>(c.joint_count), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (int k = 0; k < 3; ++k) c.positions[i][k] = pos.get<double>();
        for (int k = 0; k < 4; ++k) c.rotations[i][k] = rot.get<double>();
        for (int k = 0; k < 3; ++k) c.scales[i][k] = scl.get<double>();
        c.opacity_logits[i] = opa.get<double>();
        for (auto& coeff : c.sh[i])
            for (int k = 0; k < 3; ++k) coeff[k] = shc.get<double>();
        c.bindings[i].vertex = bnd.get<std::int32_t>();
        c.bindings[i].facet = bnd.get<std::int32_t>();
        const auto nz = wgt.get<std::uint8_t>();
        for (int e = 0; e < nz; ++e) {
            const auto j = wgt.get<std::uint16_t>();
            if (j >= c.joint_count) fail(ErrorCode::CorruptSection, "GWGT joint index out of range");
            c.weights[i * static_cast<std::size_t>(c.joint_count) + j] = wgt.get<double>();
        }
    }
    if (wgt.remaining() != 0) fail(ErrorCode::CorruptSection, "section GWGT has trailing bytes");

    auto ncfg = reader("NCFG");
    const bool present = ncfg.get<std::uint8_t>() != 0;
    NetConfig nc;
    nc.pose_input_dim = ncfg.get<std::int32_t>();
    nc.pose_feature_dim = ncfg.get<std::int32_t>();
    nc.hidden = ncfg.get<std::int32_t>();
    nc.layers = ncfg.get<std::int32_t>();
    nc.pe_frequencies = ncfg.get<std::int32_t>();
    nc.seed = ncfg.get<std::uint64_t>();
    auto netw = reader("NETW");
    if (present) {
        if (nc.pose_input_dim < 0 || nc.pose_input_dim > 4096 || nc.pose_feature_dim < 0 || nc.pose_feature_dim > 4096 ||
            nc.hidden < 1 || nc.hidden > 4096 || nc.layers < 1 || nc.layers > 64 || nc.pe_frequencies < 0 || nc.pe_frequencies > 32)
            fail(ErrorCode::CorruptSection, "NCFG holds an invalid net shape");
        ck.net = RefinementNet(nc);
        expect_size(netw, ck.net.parameter_count() * 8, "NETW");
        ck.net.for_each_tensor([&](std::span<double> t) {
            for (double& v : t) v = netw.get<double>();
        });
    } else {
        NetAccess::config(ck.net) = nc;
    }

    auto tcfg = reader("TCFG");
    apply_config_text(ck.config, tcfg.get_string());
    auto rngs = reader("RNGS");
    ck.rng_state = rngs.get_string();
    validate_cloud(c);
    return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
    write_file_atomic(path, encode_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    try {
        return decode_checkpoint(bytes);
    } catch (const Error& e) {
        fail(e.code(), path.string() + ": " + e.detail());
    }
}

} // namespace gav
