// Copyright Contributors to the gavatar project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "gavatar/geom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <utility>
#include <vector>

namespace gav {

struct Neighbor {
    double dist2 = std::numeric_limits<double>::infinity();
    int index = -1;

    bool operator<(const Neighbor& o) const { return dist2 < o.dist2 || (dist2 == o.dist2 && index < o.index); }
};

/// Uniform hash grid over a fixed point set. Queries are exact: results match
/// an exhaustive scan, ties resolved toward the lowest index.
class SpatialGrid {
public:
    SpatialGrid() = default;

    SpatialGrid(std::span<const Vec3> points, double cell_size) : points_(points.begin(), points.end()) {
        if (points_.empty()) return;
        Vec3 lo = points_[0], hi = points_[0];
        for (const auto& p : points_) {
            lo = {std::min(lo.x, p.x), std::min(lo.y, p.y), std::min(lo.z, p.z)};
            hi = {std::max(hi.x, p.x), std::max(hi.y, p.y), std::max(hi.z, p.z)};
        }
        const double extent = std::max({hi.x - lo.x, hi.y - lo.y, hi.z - lo.z, 1e-9});
        cell_ = cell_size > 0.0 && std::isfinite(cell_size) ? cell_size : extent;
        // Keep the cell table proportional to the point count.
        const double max_cells = 8.0 * static_cast<double>(points_.size()) + 64.0;
        for (;;) {
            for (int a = 0; a < 3; ++a) dims_[a] = static_cast<std::int64_t>(std::floor((hi[a] - lo[a]) / cell_)) + 1;
            if (static_cast<double>(dims_[0]) * static_cast<double>(dims_[1]) * static_cast<double>(dims_[2]) <= max_cells)
                break;
            cell_ *= 1.5;
        }
        origin_ = lo;
        const std::size_t cells = static_cast<std::size_t>(dims_[0] * dims_[1] * dims_[2]);
        cell_start_.assign(cells + 1, 0);
        std::vector<std::size_t> cell_of(points_.size());
        for (std::size_t i = 0; i < points_.size(); ++i) {
            const auto c = cell_coord(points_[i]);
            cell_of[i] = flat(c[0], c[1], c[2]);
            ++cell_start_[cell_of[i] + 1];
        }
        for (std::size_t c = 0; c < cells; ++c) cell_start_[c + 1] += cell_start_[c];
        entries_.resize(points_.size());
        std::vector<std::size_t> fill(cell_start_.begin(), cell_start_.end() - 1);
        for (std::size_t i = 0; i < points_.size(); ++i) entries_[fill[cell_of[i]]++] = static_cast<int>(i);
    }

    std::size_t size() const { return points_.size(); }
    double cell_size() const { return cell_; }

    /// Nearest point to q, or a Neighbor with index -1 for an empty grid.
    Neighbor nearest(const Vec3& q) const {
        Neighbor best;
        search(q, [&](int idx, double d2) {
            const Neighbor cand{d2, idx};
            if (cand < best) best = cand;
        }, [&](double bound2) { return best.index >= 0 && best.dist2 <= bound2; });
        return best;
    }

    /// k nearest points sorted by (distance, index), optionally skipping one index.
    std::vector<Neighbor> k_nearest(const Vec3& q, int k, int skip = -1) const {
        std::vector<Neighbor> best;
        if (k <= 0) return best;
        best.reserve(static_cast<std::size_t>(k) + 1);
        search(q, [&](int idx, double d2) {
            if (idx == skip) return;
            const Neighbor cand{d2, idx};
            if (static_cast<int>(best.size()) == k && !(cand < best.back())) return;
            best.insert(std::upper_bound(best.begin(), best.end(), cand), cand);
            if (static_cast<int>(best.size()) > k) best.pop_back();
        }, [&](double bound2) { return static_cast<int>(best.size()) == k && best.back().dist2 <= bound2; });
        return best;
    }

private:
    std::array<std::int64_t, 3> cell_coord(const Vec3& p) const {
        std::array<std::int64_t, 3> c{};
        for (int a = 0; a < 3; ++a) {
            const double f = std::floor((p[a] - origin_[a]) / cell_);
            c[a] = static_cast<std::int64_t>(std::clamp(f, -1e15, 1e15));
        }
        return c;
    }

    std::array<std::int64_t, 3> clamp_coord(std::array<std::int64_t, 3> c) const {
        for (int a = 0; a < 3; ++a) c[a] = std::clamp<std::int64_t>(c[a], 0, dims_[a] - 1);
        return c;
    }

    std::size_t flat(std::int64_t x, std::int64_t y, std::int64_t z) const {
        return static_cast<std::size_t>((z * dims_[1] + y) * dims_[0] + x);
    }

    void visit_cell(std::int64_t x, std::int64_t y, std::int64_t z, const Vec3& q, auto& on_point) const {
        const std::size_t c = flat(x, y, z);
        for (std::size_t e = cell_start_[c]; e < cell_start_[c + 1]; ++e) {
            const int idx = entries_[e];
            on_point(idx, squared_norm(points_[static_cast<std::size_t>(idx)] - q));
        }
    }

    // Visits Chebyshev shells of cells around q. After shell r every unvisited
    // point is farther than r * cell from q, which is what done(bound2) tests against.
    template <typename OnPoint, typename Done>
    void search(const Vec3& q, OnPoint&& on_point, Done&& done) const {
        if (points_.empty()) return;
        const auto cq = cell_coord(q);
        const auto cc = clamp_coord(cq);
        std::int64_t r_start = 0, r_end = 0;
        for (int a = 0; a < 3; ++a) {
            r_start = std::max(r_start, std::abs(cq[a] - cc[a]));
            r_end = std::max({r_end, std::abs(cq[a]), std::abs(cq[a] - (dims_[a] - 1))});
        }
        for (std::int64_t r = r_start; r <= r_end; ++r) {
            const std::int64_t x0 = std::max<std::int64_t>(cq[0] - r, 0), x1 = std::min(cq[0] + r, dims_[0] - 1);
            const std::int64_t y0 = std::max<std::int64_t>(cq[1] - r, 0), y1 = std::min(cq[1] + r, dims_[1] - 1);
            for (std::int64_t y = y0; y <= y1; ++y) {
                for (std::int64_t x = x0; x <= x1; ++x) {
                    const bool on_side = std::abs(x - cq[0]) == r || std::abs(y - cq[1]) == r;
                    if (on_side) {
                        const std::int64_t z0 = std::max<std::int64_t>(cq[2] - r, 0);
                        const std::int64_t z1 = std::min(cq[2] + r, dims_[2] - 1);
                        for (std::int64_t z = z0; z <= z1; ++z) visit_cell(x, y, z, q, on_point);
                    } else {
                        if (cq[2] - r >= 0 && cq[2] - r < dims_[2]) visit_cell(x, y, cq[2] - r, q, on_point);
                        if (r > 0 && cq[2] + r >= 0 && cq[2] + r < dims_[2]) visit_cell(x, y, cq[2] + r, q, on_point);
                    }
                }
            }
            const double bound = static_cast<double>(r) * cell_;
            if (done(bound * bound)) return;
        }
    }

    std::vector<Vec3> points_;
    Vec3 origin_{};
    double cell_ = 1.0;
    std::array<std::int64_t, 3> dims_{1, 1, 1};
    std::vector<std::size_t> cell_start_;
    std::vector<int> entries_;
};

} // namespace gav
