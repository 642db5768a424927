// Copyright Contributors to the gavatar project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "gavatar/error.hpp"
#include "gavatar/geom.hpp"

#include <array>
#include <cstdio>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace gav {

struct FrameSelection {
    std::array<int, 4> indices{};
    double d_min = 0.0;
    /// Angles in degrees for the pairs (0,1) (0,2) (0,3) (1,2) (1,3) (2,3).
    std::array<double, 6> pairwise_deg{};
};

struct FrameSelectConfig {
    double chain_min_deg = 80.0;
    double chain_max_deg = 100.0;
    double cross_min_deg = 80.0;
};

/// Geodesic angle in degrees between two frame orientations.
inline double relative_angle_deg(const Mat3& a, const Mat3& b) { return rad_to_deg(rotation_angle(a.transposed() * b)); }

/// Mean Euclidean distance between posed and canonical joint positions.
inline double pose_distance(std::span<const Vec3> joints, std::span<const Vec3> canonical) {
    if (joints.size() != canonical.size())
        fail(ErrorCode::JointCountMismatch, "frame has " + std::to_string(joints.size()) + " joints, canonical has " +
                                                std::to_string(canonical.size()));
    if (joints.empty()) return 0.0;
    double sum = 0.0;
    for (std::size_t j = 0; j < joints.size(); ++j) sum += norm(joints[j] - canonical[j]);
    return sum / static_cast<double>(joints.size());
}

/// Picks four frames whose orientations are roughly 90° apart and whose poses
/// are closest to the canonical pose.
///
/// Chained pairs (i,j), (j,k), (k,l) must lie within [80°, 100°]; the pairs
/// (i,k), (i,l), (j,l) must exceed 80°. Ties keep the lexicographically first
/// quadruple.
inline FrameSelection select_frames(std::span<const Mat3> rotations, std::span<const std::vector<Vec3>> joints,
                                    std::span<const Vec3> canonical_joints, const FrameSelectConfig& cfg = {}) {
    const int t = static_cast<int>(rotations.size());
    if (joints.size() != rotations.size())
        fail(ErrorCode::ShapeMismatch, std::to_string(rotations.size()) + " rotations but " + std::to_string(joints.size()) +
                                           " joint sets");
    std::vector<double> dist(static_cast<std::size_t>(t));
    for (int i = 0; i < t; ++i) dist[static_cast<std::size_t>(i)] = pose_distance(joints[static_cast<std::size_t>(i)], canonical_joints);

    std::vector<double> delta(static_cast<std::size_t>(t) * static_cast<std::size_t>(t), 0.0);
    auto at = [&](int i, int j) -> double& { return delta[static_cast<std::size_t>(i) * static_cast<std::size_t>(t) + static_cast<std::size_t>(j)]; };
    double max_angle = 0.0;
    for (int i = 0; i < t; ++i) {
        for (int j = i + 1; j < t; ++j) {
            const double a = relative_angle_deg(rotations[static_cast<std::size_t>(i)], rotations[static_cast<std::size_t>(j)]);
            at(i, j) = at(j, i) = a;
            max_angle = std::max(max_angle, a);
        }
    }
    std::vector<std::vector<int>> chain(static_cast<std::size_t>(t));
    for (int i = 0; i < t; ++i)
        for (int j = i + 1; j < t; ++j)
            if (at(i, j) >= cfg.chain_min_deg && at(i, j) <= cfg.chain_max_deg) chain[static_cast<std::size_t>(i)].push_back(j);

    double best = std::numeric_limits<double>::infinity();
    std::array<int, 4> best_idx{-1, -1, -1, -1};
    for (int i = 0; i < t; ++i) {
        const double di = dist[static_cast<std::size_t>(i)];
        if (di >= best) continue;
        for (int j : chain[static_cast<std::size_t>(i)]) {
            const double dij = di + dist[static_cast<std::size_t>(j)];
            if (dij >= best) continue;
            for (int k : chain[static_cast<std::size_t>(j)]) {
                if (!(at(i, k) > cfg.cross_min_deg)) continue;
                const double dijk = dij + dist[static_cast<std::size_t>(k)];
                if (dijk >= best) continue;
                for (int l : chain[static_cast<std::size_t>(k)]) {
                    if (!(at(i, l) > cfg.cross_min_deg) || !(at(j, l) > cfg.cross_min_deg)) continue;
                    const double total = dijk + dist[static_cast<std::size_t>(l)];
                    if (total < best) {
                        best = total;
                        best_idx = {i, j, k, l};
                    }
                }
            }
        }
    }
    if (best_idx[0] < 0) {
        char buf[128];
        std::snprintf(buf, sizeof buf, "no valid frame quadruple among %d frames (max pairwise angle %.2f deg)", t, max_angle);
        fail(ErrorCode::NoValidQuadruple, buf);
    }
    FrameSelection out;
    out.indices = best_idx;
    out.d_min = best;
    int p = 0;
    for (int a = 0; a < 4; ++a)
        for (int b = a + 1; b < 4; ++b) out.pairwise_deg[static_cast<std::size_t>(p++)] = at(best_idx[static_cast<std::size_t>(a)], best_idx[static_cast<std::size_t>(b)]);
    return out;
}

} // namespace gav
