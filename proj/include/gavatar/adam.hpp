// Copyright Contributors to the gavatar project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "gavatar/error.hpp"

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace gav {

/// Moments for one parameter group. The step counter is shared by every
/// entry of the group.
struct AdamState {
    std::vector<double> m, v;
    std::int64_t step = 0;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    void resize(std::size_t n) {
        m.resize(n, 0.0);
        v.resize(n, 0.0);
    }
    void reset_moments() {
        std::fill(m.begin(), m.end(), 0.0);
        std::fill(v.begin(), v.end(), 0.0);
    }
    bool operator==(const AdamState&) const = default;
};

/// Bias-corrected Adam update in place.
inline void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, double lr,
                      std::string_view group = "params") {
    if (params.size() != grads.size())
        fail(ErrorCode::ShapeMismatch, std::string(group) + ": " + std::to_string(params.size()) + " params vs " +
                                           std::to_string(grads.size()) + " gradients");
    for (std::size_t i = 0; i < grads.size(); ++i)
        if (!std::isfinite(grads[i]))
            fail(ErrorCode::NonFiniteGradient, "group '" + std::string(group) + "' entry " + std::to_string(i));
    state.resize(params.size());
    ++state.step;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grads[i];
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grads[i] * grads[i];
        if (lr == 0.0) continue;
        const double mh = state.m[i] / bc1, vh = state.v[i] / bc2;
        params[i] -= lr * mh / (std::sqrt(vh) + state.eps);
    }
}

} // namespace gav
