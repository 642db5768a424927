// Copyright Contributors to the gavatar project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "gavatar/geom.hpp"

#include <cmath>
#include <random>

namespace gav::testing {

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    double uniform(double lo = 0.0, double hi = 1.0) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
    double normal() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }
    int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(engine_); }

    Vec3 vec3(double lo = -1.0, double hi = 1.0) { return {uniform(lo, hi), uniform(lo, hi), uniform(lo, hi)}; }

    Vec3 unit_vec3() {
        for (;;) {
            const Vec3 v{normal(), normal(), normal()};
            const double n = norm(v);
            if (n > 1e-6) return v / n;
        }
    }

    Quat unit_quat() {
        for (;;) {
            const Quat q{normal(), normal(), normal(), normal()};
            if (q.norm() > 1e-6) return q.normalized();
        }
    }

    Mat3 rotation() { return quat_to_rotmat(unit_quat()); }

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
};

inline double max_abs(const Vec3& a, const Vec3& b) {
    return std::max({std::abs(a.x - b.x), std::abs(a.y - b.y), std::abs(a.z - b.z)});
}

inline double quat_sign_distance(const Quat& a, const Quat& b) {
    const double plus = std::max({std::abs(a.w - b.w), std::abs(a.x - b.x), std::abs(a.y - b.y), std::abs(a.z - b.z)});
    const double minus = std::max({std::abs(a.w + b.w), std::abs(a.x + b.x), std::abs(a.y + b.y), std::abs(a.z + b.z)});
    return std::min(plus, minus);
}

/// |a - b| relative to the larger magnitude, with a floor for near-zero values.
inline double rel_error(double analytic, double numeric, double floor = 1e-6) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

} // namespace gav::testing
