// Copyright Contributors to the gavatar project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "gavatar/error.hpp"

#include <cmath>
#include <numbers>
#include <span>
#include <vector>

namespace gav {

struct PEConfig {
    int frequencies = 10;
    bool include_raw = true;

    int output_dim(int in_dim) const { return in_dim * (2 * frequencies + (include_raw ? 1 : 0)); }
};

/// Sinusoidal encoding, component-major:
/// [p, sin(2^0 pi p), cos(2^0 pi p), ..., sin(2^(F-1) pi p), cos(2^(F-1) pi p)] per input component.
inline void positional_encode(std::span<const double> in, const PEConfig& cfg, std::span<double> out) {
    if (cfg.frequencies < 1) fail(ErrorCode::InvalidArgument, "positional encoding needs at least one frequency");
    const int block = 2 * cfg.frequencies + (cfg.include_raw ? 1 : 0);
    if (out.size() != in.size() * static_cast<std::size_t>(block))
        fail(ErrorCode::ShapeMismatch, "positional encoding output buffer has the wrong size");
    std::size_t o = 0;
    for (double p : in) {
        if (cfg.include_raw) out[o++] = p;
        double freq = std::numbers::pi;
        for (int k = 0; k < cfg.frequencies; ++k) {
            out[o++] = std::sin(freq * p);
            out[o++] = std::cos(freq * p);
            freq *= 2.0;
        }
    }
}

inline std::vector<double> positional_encode(std::span<const double> in, const PEConfig& cfg) {
    std::vector<double> out(static_cast<std::size_t>(cfg.output_dim(static_cast<int>(in.size()))));
    positional_encode(in, cfg, out);
    return out;
}

/// Chain rule through the encoding: accumulates dL/dp into grad_in.
inline void positional_encode_backward(std::span<const double> in, const PEConfig& cfg,
                                       std::span<const double> grad_out, std::span<double> grad_in) {
    std::size_t o = 0;
    for (std::size_t i = 0; i < in.size(); ++i) {
        const double p = in[i];
        double g = 0.0;
        if (cfg.include_raw) g += grad_out[o++];
        double freq = std::numbers::pi;
        for (int k = 0; k < cfg.frequencies; ++k) {
            g += grad_out[o++] * freq * std::cos(freq * p);
            g -= grad_out[o++] * freq * std::sin(freq * p);
            freq *= 2.0;
        }
        grad_in[i] += g;
    }
}

} // namespace gav
