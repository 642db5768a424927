// Copyright Contributors to the gavatar project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "gavatar/encoding.hpp"
#include "gavatar/error.hpp"
#include "gavatar/geom.hpp"

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace gav {

struct NetConfig {
    int pose_input_dim = 6;  // 3 * joints + shape coefficients
    int pose_feature_dim = 32;
    int hidden = 64;
    int layers = 5;
    int pe_frequencies = 10;
    std::uint64_t seed = 0;

    PEConfig pe() const { return {pe_frequencies, true}; }
    int head_input_dim() const { return pe().output_dim(3) + pe().output_dim(1) + pose_feature_dim; }

    bool operator==(const NetConfig&) const = default;
};

struct DenseLayer {
    Eigen::MatrixXd w;  // out x in
    Eigen::VectorXd b;

    int in() const { return static_cast<int>(w.cols()); }
    int out() const { return static_cast<int>(w.rows()); }
};

enum class Head { Position = 0, Rotation = 1, Scale = 2 };

inline constexpr std::array<int, 3> kHeadOutputs = {3, 4, 3};

/// Three independent fully connected heads over a shared input encoding
/// γ(x) ⊕ γ(t) ⊕ E·pose, with ReLU between layers and a linear output.
class RefinementNet {
public:
    RefinementNet() = default;

    explicit RefinementNet(const NetConfig& cfg) : cfg_(cfg) {
        if (cfg.layers < 1 || cfg.hidden < 1 || cfg.pose_feature_dim < 0 || cfg.pose_input_dim < 0)
            fail(ErrorCode::InvalidArgument, "invalid refinement net shape");
        std::mt19937_64 rng(cfg.seed);
        encoder_ = make_layer(cfg.pose_feature_dim, cfg.pose_input_dim, rng, false);
        for (int h = 0; h < 3; ++h) {
            auto& head = heads_[static_cast<std::size_t>(h)];
            int in = cfg.head_input_dim();
            for (int l = 0; l < cfg.layers; ++l) {
                const bool last = l + 1 == cfg.layers;
                const int out = last ? kHeadOutputs[static_cast<std::size_t>(h)] : cfg.hidden;
                head.push_back(make_layer(out, in, rng, last));
                in = out;
            }
        }
    }

    const NetConfig& config() const { return cfg_; }
    const DenseLayer& encoder() const { return encoder_; }
    const std::vector<DenseLayer>& head(Head h) const { return heads_[static_cast<std::size_t>(h)]; }

    /// A net of identical shape with every parameter zero (gradient storage).
    RefinementNet zeros_like() const {
        RefinementNet z = *this;
        z.for_each_tensor([](std::span<double> t) { std::fill(t.begin(), t.end(), 0.0); });
        return z;
    }

    /// Visits every parameter tensor in a fixed order: encoder, then each head's layers (w then b).
    template <typename Fn>
    void for_each_tensor(Fn&& fn) {
        visit(encoder_, fn);
        for (auto& head : heads_)
            for (auto& layer : head) visit(layer, fn);
    }
    template <typename Fn>
    void for_each_tensor(Fn&& fn) const {
        const_cast<RefinementNet*>(this)->for_each_tensor([&](std::span<double> t) { fn(std::span<const double>(t)); });
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for_each_tensor([&](std::span<const double> t) { n += t.size(); });
        return n;
    }

    bool operator==(const RefinementNet& o) const {
        if (!(cfg_ == o.cfg_)) return false;
        std::vector<double> a, b;
        for_each_tensor([&](std::span<const double> t) { a.insert(a.end(), t.begin(), t.end()); });
        o.for_each_tensor([&](std::span<const double> t) { b.insert(b.end(), t.begin(), t.end()); });
        return a == b;
    }

    void scale_by(double s) {
        for_each_tensor([&](std::span<double> t) {
            for (double& v : t) v *= s;
        });
    }

    void add_scaled(const RefinementNet& o, double s) {
        std::vector<std::span<double>> mine;
        for_each_tensor([&](std::span<double> t) { mine.push_back(t); });
        std::size_t k = 0;
        o.for_each_tensor([&](std::span<const double> t) {
            auto dst = mine[k++];
            for (std::size_t i = 0; i < t.size(); ++i) dst[i] += s * t[i];
        });
    }

private:
    template <typename Fn>
    static void visit(DenseLayer& l, Fn& fn) {
        fn(std::span<double>(l.w.data(), static_cast<std::size_t>(l.w.size())));
        fn(std::span<double>(l.b.data(), static_cast<std::size_t>(l.b.size())));
    }

    static DenseLayer make_layer(int out, int in, std::mt19937_64& rng, bool zero) {
        DenseLayer l{Eigen::MatrixXd::Zero(out, in), Eigen::VectorXd::Zero(out)};
        if (!zero && in > 0) {
            const double bound = 1.0 / std::sqrt(static_cast<double>(in));
            std::uniform_real_distribution<double> u(-bound, bound);
            for (Eigen::Index i = 0; i < l.w.size(); ++i) l.w.data()[i] = u(rng);
            for (Eigen::Index i = 0; i < l.b.size(); ++i) l.b[i] = u(rng);
        }
        return l;
    }

    NetConfig cfg_;
    DenseLayer encoder_;
    std::array<std::vector<DenseLayer>, 3> heads_;

    friend struct NetAccess;
};

/// Mutable access to layers, used by serialization.
struct NetAccess {
    static DenseLayer& encoder(RefinementNet& n) { return n.encoder_; }
    static std::vector<DenseLayer>& head(RefinementNet& n, int h) { return n.heads_[static_cast<std::size_t>(h)]; }
    static NetConfig& config(RefinementNet& n) { return n.cfg_; }
};

struct Residuals {
    std::vector<Vec3> dx;
    std::vector<Quat> dr;      // unit
    std::vector<Quat> dr_raw;  // (1,0,0,0) + head output, before normalization
    std::vector<Vec3> ds;
};

/// Activations kept by refine_forward for refine_backward.
struct NetCache {
    bool valid = false;
    std::vector<Vec3> positions;
    Eigen::VectorXd pose_input;
    Eigen::VectorXd pose_feature;
    Eigen::MatrixXd input;  // head_input_dim x P
    std::array<std::vector<Eigen::MatrixXd>, 3> pre;  // pre-activations per layer
    std::vector<Quat> dr_raw;
};

inline double normalized_time(int frame, int total_frames) {
    return total_frames > 1 ? static_cast<double>(frame) / static_cast<double>(total_frames - 1) : 0.0;
}

/// Evaluates all heads for a batch of canonical positions at one (time, pose).
inline Residuals refine_forward(const RefinementNet& net, std::span<const Vec3> x, double t,
                                std::span<const double> pose_input, NetCache* cache = nullptr) {
    const NetConfig& cfg = net.config();
    if (static_cast<int>(pose_input.size()) != cfg.pose_input_dim)
        fail(ErrorCode::ShapeMismatch, "pose feature has " + std::to_string(pose_input.size()) + " entries, net expects " +
                                           std::to_string(cfg.pose_input_dim));
    const auto p = static_cast<Eigen::Index>(x.size());
    const PEConfig pe = cfg.pe();
    const int dx_dim = pe.output_dim(3), dt_dim = pe.output_dim(1);

    const Eigen::VectorXd pose_vec = Eigen::Map<const Eigen::VectorXd>(pose_input.data(), static_cast<Eigen::Index>(pose_input.size()));
    const Eigen::VectorXd feat = net.encoder().w * pose_vec + net.encoder().b;
    const double tt[1] = {t};
    const auto gamma_t = positional_encode(tt, pe);

    Eigen::MatrixXd input(cfg.head_input_dim(), p);
    std::vector<double> buf(static_cast<std::size_t>(dx_dim));
    for (Eigen::Index i = 0; i < p; ++i) {
        const Vec3& xi = x[static_cast<std::size_t>(i)];
        const double xv[3] = {xi.x, xi.y, xi.z};
        positional_encode(xv, pe, buf);
        for (int k = 0; k < dx_dim; ++k) input(k, i) = buf[static_cast<std::size_t>(k)];
        for (int k = 0; k < dt_dim; ++k) input(dx_dim + k, i) = gamma_t[static_cast<std::size_t>(k)];
        input.block(dx_dim + dt_dim, i, cfg.pose_feature_dim, 1) = feat;
    }

    std::array<Eigen::MatrixXd, 3> outputs;
    std::array<std::vector<Eigen::MatrixXd>, 3> pre;
    for (int h = 0; h < 3; ++h) {
        Eigen::MatrixXd a = input;
        const auto& layers = net.head(static_cast<Head>(h));
        for (std::size_t l = 0; l < layers.size(); ++l) {
            Eigen::MatrixXd z = layers[l].w * a;
            z.colwise() += layers[l].b;
            if (cache) pre[static_cast<std::size_t>(h)].push_back(z);
            a = l + 1 == layers.size() ? z : Eigen::MatrixXd(z.cwiseMax(0.0));
        }
        outputs[static_cast<std::size_t>(h)] = std::move(a);
    }

    Residuals r;
    r.dx.resize(x.size());
    r.dr.resize(x.size());
    r.dr_raw.resize(x.size());
    r.ds.resize(x.size());
    for (Eigen::Index i = 0; i < p; ++i) {
        const auto u = static_cast<std::size_t>(i);
        const auto& o0 = outputs[0];
        const auto& o1 = outputs[1];
        const auto& o2 = outputs[2];
        r.dx[u] = {o0(0, i), o0(1, i), o0(2, i)};
        r.dr_raw[u] = {1.0 + o1(0, i), o1(1, i), o1(2, i), o1(3, i)};
        r.dr[u] = r.dr_raw[u].norm() > 1e-12 ? r.dr_raw[u].normalized() : Quat::identity();
        r.ds[u] = {o2(0, i), o2(1, i), o2(2, i)};
    }
    if (cache) {
        cache->valid = true;
        cache->positions.assign(x.begin(), x.end());
        cache->pose_input = pose_vec;
        cache->pose_feature = feat;
        cache->input = std::move(input);
        cache->pre = std::move(pre);
        cache->dr_raw = r.dr_raw;
    }
    return r;
}

struct NetGradients {
    RefinementNet params;     // same shape as the net
    std::vector<Vec3> d_positions;
};

/// Reverse pass for upstream gradients on (Δx, unit Δr, Δs). Gradients are
/// accumulated into grads->params, which must have the net's shape.
inline void refine_backward(const RefinementNet& net, const NetCache& cache, std::span<const Vec3> g_dx,
                            std::span<const Quat> g_dr, std::span<const Vec3> g_ds, NetGradients& grads) {
    if (!cache.valid) fail(ErrorCode::NoCachedForward, "refine_backward called without a cached forward pass");
    const NetConfig& cfg = net.config();
    const auto p = static_cast<Eigen::Index>(cache.positions.size());
    if (g_dx.size() != cache.positions.size() || g_dr.size() != cache.positions.size() || g_ds.size() != cache.positions.size())
        fail(ErrorCode::ShapeMismatch, "residual gradients do not match the cached batch");
    const PEConfig pe = cfg.pe();
    const int dx_dim = pe.output_dim(3);

    std::array<Eigen::MatrixXd, 3> upstream;
    for (int h = 0; h < 3; ++h) upstream[static_cast<std::size_t>(h)].resize(kHeadOutputs[static_cast<std::size_t>(h)], p);
    for (Eigen::Index i = 0; i < p; ++i) {
        const auto u = static_cast<std::size_t>(i);
        const Quat gq = normalize_backward(cache.dr_raw[u], g_dr[u]);
        for (int k = 0; k < 3; ++k) {
            upstream[0](k, i) = g_dx[u][k];
            upstream[2](k, i) = g_ds[u][k];
        }
        for (int k = 0; k < 4; ++k) upstream[1](k, i) = gq[k];
    }

    Eigen::MatrixXd d_input = Eigen::MatrixXd::Zero(cfg.head_input_dim(), p);
    auto& gparams = grads.params;
    for (int h = 0; h < 3; ++h) {
        const auto& layers = net.head(static_cast<Head>(h));
        auto& glayers = NetAccess::head(gparams, h);
        const auto& pre = cache.pre[static_cast<std::size_t>(h)];
        Eigen::MatrixXd g = std::move(upstream[static_cast<std::size_t>(h)]);
        for (std::size_t l = layers.size(); l-- > 0;) {
            if (l + 1 != layers.size()) g = g.cwiseProduct((pre[l].array() > 0.0).cast<double>().matrix());
            const Eigen::MatrixXd a_in = l == 0 ? cache.input : Eigen::MatrixXd(pre[l - 1].cwiseMax(0.0));
            glayers[l].w.noalias() += g * a_in.transpose();
            glayers[l].b += g.rowwise().sum();
            g = layers[l].w.transpose() * g;
        }
        d_input += g;
    }

    const Eigen::VectorXd d_feat = d_input.bottomRows(cfg.pose_feature_dim).rowwise().sum();
    auto& genc = NetAccess::encoder(gparams);
    genc.w.noalias() += d_feat * cache.pose_input.transpose();
    genc.b += d_feat;

    grads.d_positions.assign(cache.positions.size(), Vec3{});
    std::vector<double> gin(static_cast<std::size_t>(dx_dim));
    for (Eigen::Index i = 0; i < p; ++i) {
        const auto u = static_cast<std::size_t>(i);
        for (int k = 0; k < dx_dim; ++k) gin[static_cast<std::size_t>(k)] = d_input(k, i);
        const double xv[3] = {cache.positions[u].x, cache.positions[u].y, cache.positions[u].z};
        double gx[3] = {0, 0, 0};
        positional_encode_backward(xv, pe, gin, gx);
        grads.d_positions[u] = {gx[0], gx[1], gx[2]};
    }
}

inline NetGradients make_net_gradients(const RefinementNet& net) { return {net.zeros_like(), {}}; }

} // namespace gav
