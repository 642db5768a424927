// Copyright Contributors to the gavatar project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "gavatar/adam.hpp"
#include "gavatar/metrics.hpp"
#include "gavatar/pipeline.hpp"

#include <chrono>
#include <cstdio>
#include <functional>
#include <limits>
#include <map>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace gav {

struct LearningRates {
    double position = 1.6e-4;  // multiplied by the scene extent
    double scale = 5e-3;       // log space
    double rotation = 1e-3;
    double opacity = 5e-2;     // logit space
    double sh_dc = 2.5e-3;
    double sh_rest = 1.25e-4;
    double net = 2e-3;
};

struct DensifyConfig {
    bool enabled = true;
    int interval = 300;
    int from = 500;
    int until = 7000;
    double grad_threshold = 2e-4;  // mean NDC-space positional gradient norm
    double scale_fraction = 0.01;  // clone/split boundary as a fraction of scene extent
    double split_factor = 1.6;
    double prune_opacity = 0.005;
    std::size_t max_gaussians = 200000;
};

struct TrainConfig {
    int iterations = 2000;
    LossWeights loss;
    S3imConfig s3im;
    LearningRates lr;
    int sh_interval = 500;
    int max_sh_degree = 3;
    int opacity_reset_interval = 1500;
    double opacity_reset_value = 0.01;
    DensifyConfig densify;
    bool augmentation = true;
    bool train_net = true;
    std::uint64_t seed = 0;
    int log_interval = 200;
    int threads = 0;

    void validate() const {
        auto bad = [](const std::string& m) { fail(ErrorCode::InvalidArgument, m); };
        if (loss.l1 < 0 || loss.s3im < 0 || !(loss.l1 + loss.s3im > 0)) bad("loss weights must be >= 0 with a positive sum");
        if (iterations < 0) bad("iterations must be >= 0");
        if (sh_interval < 1 || opacity_reset_interval < 1 || densify.interval < 1 || log_interval < 1)
            bad("intervals must be >= 1");
        if (max_sh_degree < 0 || max_sh_degree > sh::kMaxDegree) bad("max_sh_degree must be in [0, 3]");
        if (!(opacity_reset_value > 0 && opacity_reset_value < 1)) bad("opacity_reset_value must be in (0, 1)");
        if (!(densify.split_factor > 1)) bad("split_factor must exceed 1");
        for (double r : {lr.position, lr.scale, lr.rotation, lr.opacity, lr.sh_dc, lr.sh_rest, lr.net})
            if (!(r >= 0) || !std::isfinite(r)) bad("learning rates must be finite and >= 0");
    }
};

namespace detail {

struct ConfigKey {
    std::function<void(TrainConfig&, const std::string&)> set;
    std::function<std::string(const TrainConfig&)> get;
};

inline std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline double parse_double(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    double out = 0;
    try {
        out = std::stod(v, &used);
    } catch (...) {
        used = 0;
    }
    if (used != v.size() || v.empty()) fail(ErrorCode::ParseError, "config key '" + key + "': expected a number, got '" + v + "'");
    return out;
}

inline long long parse_int(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    long long out = 0;
    try {
        out = std::stoll(v, &used);
    } catch (...) {
        used = 0;
    }
    if (used != v.size() || v.empty()) fail(ErrorCode::ParseError, "config key '" + key + "': expected an integer, got '" + v + "'");
    return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    fail(ErrorCode::ParseError, "config key '" + key + "': expected true or false, got '" + v + "'");
}

inline const std::map<std::string, ConfigKey>& config_keys() {
    static const std::map<std::string, ConfigKey> keys = [] {
        std::map<std::string, ConfigKey> k;
        auto dbl = [&](const std::string& name, auto access) {
            k[name] = {[=](TrainConfig& c, const std::string& v) { access(c) = parse_double(name, v); },
                       [=](const TrainConfig& c) { return fmt_double(access(const_cast<TrainConfig&>(c))); }};
        };
        auto integer = [&](const std::string& name, auto access) {
            k[name] = {[=](TrainConfig& c, const std::string& v) {
                           using T = std::remove_reference_t<decltype(access(c))>;
                           const long long x = parse_int(name, v);
                           if (x < 0 && std::is_unsigned_v<T>) fail(ErrorCode::ParseError, "config key '" + name + "' must be >= 0");
                           access(c) = static_cast<T>(x);
                       },
                       [=](const TrainConfig& c) { return std::to_string(access(const_cast<TrainConfig&>(c))); }};
        };
        auto boolean = [&](const std::string& name, auto access) {
            k[name] = {[=](TrainConfig& c, const std::string& v) { access(c) = parse_bool(name, v); },
                       [=](const TrainConfig& c) { return std::string(access(const_cast<TrainConfig&>(c)) ? "true" : "false"); }};
        };
        integer("iterations", [](TrainConfig& c) -> int& { return c.iterations; });
        dbl("loss.l1", [](TrainConfig& c) -> double& { return c.loss.l1; });
        dbl("loss.s3im", [](TrainConfig& c) -> double& { return c.loss.s3im; });
        integer("s3im.samples", [](TrainConfig& c) -> int& { return c.s3im.samples; });
        integer("s3im.repeats", [](TrainConfig& c) -> int& { return c.s3im.repeats; });
        integer("s3im.patch", [](TrainConfig& c) -> int& { return c.s3im.patch; });
        integer("s3im.kernel", [](TrainConfig& c) -> int& { return c.s3im.kernel; });
        integer("s3im.stride", [](TrainConfig& c) -> int& { return c.s3im.stride; });
        dbl("s3im.sigma", [](TrainConfig& c) -> double& { return c.s3im.sigma; });
        dbl("lr.position", [](TrainConfig& c) -> double& { return c.lr.position; });
        dbl("lr.scale", [](TrainConfig& c) -> double& { return c.lr.scale; });
        dbl("lr.rotation", [](TrainConfig& c) -> double& { return c.lr.rotation; });
        dbl("lr.opacity", [](TrainConfig& c) -> double& { return c.lr.opacity; });
        dbl("lr.sh_dc", [](TrainConfig& c) -> double& { return c.lr.sh_dc; });
        dbl("lr.sh_rest", [](TrainConfig& c) -> double& { return c.lr.sh_rest; });
        dbl("lr.net", [](TrainConfig& c) -> double& { return c.lr.net; });
        integer("sh.interval", [](TrainConfig& c) -> int& { return c.sh_interval; });
        integer("sh.max_degree", [](TrainConfig& c) -> int& { return c.max_sh_degree; });
        integer("opacity.reset_interval", [](TrainConfig& c) -> int& { return c.opacity_reset_interval; });
        dbl("opacity.reset_value", [](TrainConfig& c) -> double& { return c.opacity_reset_value; });
        boolean("densify.enabled", [](TrainConfig& c) -> bool& { return c.densify.enabled; });
        integer("densify.interval", [](TrainConfig& c) -> int& { return c.densify.interval; });
        integer("densify.from", [](TrainConfig& c) -> int& { return c.densify.from; });
        integer("densify.until", [](TrainConfig& c) -> int& { return c.densify.until; });
        dbl("densify.grad_threshold", [](TrainConfig& c) -> double& { return c.densify.grad_threshold; });
        dbl("densify.scale_fraction", [](TrainConfig& c) -> double& { return c.densify.scale_fraction; });
        dbl("densify.split_factor", [](TrainConfig& c) -> double& { return c.densify.split_factor; });
        dbl("densify.prune_opacity", [](TrainConfig& c) -> double& { return c.densify.prune_opacity; });
        integer("densify.max_gaussians", [](TrainConfig& c) -> std::size_t& { return c.densify.max_gaussians; });
        boolean("augmentation", [](TrainConfig& c) -> bool& { return c.augmentation; });
        boolean("train_net", [](TrainConfig& c) -> bool& { return c.train_net; });
        integer("seed", [](TrainConfig& c) -> std::uint64_t& { return c.seed; });
        integer("log_interval", [](TrainConfig& c) -> int& { return c.log_interval; });
        integer("threads", [](TrainConfig& c) -> int& { return c.threads; });
        return k;
    }();
    return keys;
}

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

} // namespace detail

/// Sets one dotted key ("lr.net", "densify.interval", ...).
inline void set_config_value(TrainConfig& cfg, const std::string& key, const std::string& value) {
    const auto& keys = detail::config_keys();
    const auto it = keys.find(key);
    if (it == keys.end()) fail(ErrorCode::ParseError, "unknown config key '" + key + "'");
    it->second.set(cfg, value);
}

inline std::string get_config_value(const TrainConfig& cfg, const std::string& key) {
    const auto& keys = detail::config_keys();
    const auto it = keys.find(key);
    if (it == keys.end()) fail(ErrorCode::ParseError, "unknown config key '" + key + "'");
    return it->second.get(cfg);
}

/// Applies a key = value file on top of cfg. '#' starts a comment; a
/// [section] header prefixes the keys that follow it.
inline void apply_config_text(TrainConfig& cfg, const std::string& text) {
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') fail(ErrorCode::ParseError, "line " + std::to_string(lineno) + ": unterminated section");
            section = detail::trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) fail(ErrorCode::ParseError, "line " + std::to_string(lineno) + ": expected key = value");
        std::string key = detail::trim(line.substr(0, eq));
        std::string value = detail::trim(line.substr(eq + 1));
        if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
        if (!section.empty()) key = section + "." + key;
        try {
            set_config_value(cfg, key, value);
        } catch (const Error& e) {
            fail(e.code(), "line " + std::to_string(lineno) + ": " + e.detail());
        }
    }
}

/// Every key in sorted order; apply_config_text(to_config_text(c)) reproduces c.
inline std::string to_config_text(const TrainConfig& cfg) {
    std::string out;
    for (const auto& [key, k] : detail::config_keys()) out += key + " = " + k.get(cfg) + "\n";
    return out;
}

/// One supervised frame. The image is already composited over the
/// background wherever mask is 0; an empty mask means all foreground.
struct TrainSample {
    int frame = 0;
    int total_frames = 1;
    Image image;
    std::vector<std::uint8_t> mask;
    Camera camera;
    Pose pose;

    double time() const { return normalized_time(frame, total_frames); }
};

struct Checkpoint {
    GaussianCloud cloud;
    RefinementNet net;
    TrainConfig config;
    std::int64_t iteration = 0;
    std::string rng_state;
};

enum class HousekeepingEvent { ShDegree, OpacityReset, Densify };

struct HousekeepingRecord {
    int iteration = 0;
    HousekeepingEvent event{};
    int value = 0;  // new SH degree, or Gaussian count after densification
};

struct StepStats {
    int frame = 0;
    double loss = 0, l1 = 0, s3im = 0;
};

struct DensifyReport {
    std::size_t cloned = 0, split = 0, pruned = 0;
};

inline double scene_extent(std::span<const Vec3> positions) {
    if (positions.empty()) return 1.0;
    Vec3 c{};
    for (const auto& p : positions) c += p;
    c = c / static_cast<double>(positions.size());
    double r = 0;
    for (const auto& p : positions) r = std::max(r, norm(p - c));
    return std::max(1.1 * r, 1e-6);
}

/// Masks a rendered image in place and zeroes the matching gradient entries.
inline void apply_mask(std::span<double> image, std::span<const std::uint8_t> mask, const Vec3& background) {
    if (mask.empty()) return;
    for (std::size_t p = 0; p < mask.size(); ++p)
        if (!mask[p])
            for (int k = 0; k < 3; ++k) image[3 * p + static_cast<std::size_t>(k)] = background[k];
}

/// Optimizer state and the training loop for one avatar.
class Trainer {
public:
    Trainer(const SkinnedBody& body, GaussianCloud cloud, RefinementNet net, TrainConfig cfg, Vec3 background = {})
        : body_(body), cloud_(std::move(cloud)), net_(std::move(net)), cfg_(std::move(cfg)), background_(background),
          rng_(cfg_.seed) {
        cfg_.validate();
        validate_cloud(cloud_, &body_);
        if (cloud_.empty()) fail(ErrorCode::EmptyCloud, "cannot train an empty cloud");
        if (cloud_.size() > cfg_.densify.max_gaussians)
            fail(ErrorCode::MaxGaussiansExceeded, "initial cloud has " + std::to_string(cloud_.size()) +
                                                      " Gaussians, limit is " + std::to_string(cfg_.densify.max_gaussians));
        extent_ = scene_extent(cloud_.positions);
        reset_stats();
    }

    const GaussianCloud& cloud() const { return cloud_; }
    GaussianCloud& cloud() { return cloud_; }
    const RefinementNet& net() const { return net_; }
    RefinementNet& net() { return net_; }
    const TrainConfig& config() const { return cfg_; }
    double extent() const { return extent_; }
    int iteration() const { return iteration_; }
    const std::vector<HousekeepingRecord>& events() const { return events_; }
    std::mt19937_64& rng() { return rng_; }

    const std::vector<double>& densify_grad_sum() const { return grad_sum_; }
    std::vector<double>& densify_grad_sum() { return grad_sum_; }
    std::vector<int>& densify_visible() { return visible_; }

    Checkpoint checkpoint() const {
        std::ostringstream rs;
        rs << rng_;
        return {cloud_, net_, cfg_, iteration_, rs.str()};
    }

    RenderOptions render_options() const { return {cfg_.threads, false}; }

    /// Forward, loss, backward and Adam for one sample (no housekeeping).
    StepStats step(const TrainSample& s) {
        if (s.image.width != s.camera.width || s.image.height != s.camera.height)
            fail(ErrorCode::ShapeMismatch, "frame " + std::to_string(s.frame) + " image does not match its camera");
        const RefinementNet* net = cfg_.train_net ? &net_ : nullptr;
        Pose pose = s.pose;
        Camera cam = s.camera;
        if (cfg_.augmentation) {
            cam = augment_camera(s.camera, s.pose.global());
            pose = s.pose.body_frame();
        }
        RenderCache cache;
        Framebuffer fb = render(cloud_, body_, pose, net, s.time(), cam, background_, &cache, render_options());
        apply_mask(fb.color, s.mask, background_);
        const std::uint64_t loss_seed = rng_();
        LossResult loss = loss_total(fb.color, s.image.data, cfg_.loss, loss_seed, cfg_.s3im);
        if (!std::isfinite(loss.total))
            fail(ErrorCode::NonFiniteLoss, "non-finite loss on frame " + std::to_string(s.frame));
        if (!s.mask.empty())
            for (std::size_t p = 0; p < s.mask.size(); ++p)
                if (!s.mask[p])
                    for (int k = 0; k < 3; ++k) loss.grad[3 * p + static_cast<std::size_t>(k)] = 0.0;
        CloudGrad g = render_backward(cloud_, net, cache, loss.grad, render_options());
        for (std::size_t i = 0; i < cloud_.size(); ++i) {
            if (cache.splat_of[i] < 0) continue;
            // Pixel-space gradient converted to normalized device coordinates.
            const double ndc = g.screen_grad[i] * 0.5 * std::max(cam.width, cam.height);
            grad_sum_[i] += ndc;
            ++visible_[i];
        }
        optimizer_step(g);
        return {s.frame, loss.total, loss.l1, loss.s3im};
    }

    /// Gradient-descent updates for every parameter group.
    void optimizer_step(const CloudGrad& g) {
        const std::size_t n = cloud_.size();
        std::vector<double> p, d;
        auto run = [&](AdamState& st, double lr, const char* name, auto&& gather, auto&& scatter) {
            p.clear();
            d.clear();
            gather(p, d);
            adam_step(p, d, st, lr, name);
            if (lr != 0.0) scatter(p);
        };
        run(adam_pos_, cfg_.lr.position * extent_, "positions",
            [&](auto& pp, auto& dd) {
                for (std::size_t i = 0; i < n; ++i)
                    for (int k = 0; k < 3; ++k) pp.push_back(cloud_.positions[i][k]), dd.push_back(g.positions[i][k]);
            },
            [&](auto& pp) {
                for (std::size_t i = 0; i < n; ++i) cloud_.positions[i] = {pp[3 * i], pp[3 * i + 1], pp[3 * i + 2]};
            });
        run(adam_scale_, cfg_.lr.scale, "scales",
            [&](auto& pp, auto& dd) {
                for (std::size_t i = 0; i < n; ++i)
                    for (int k = 0; k < 3; ++k) {
                        const double s = cloud_.scales[i][k];
                        pp.push_back(std::log(s));
                        dd.push_back(s * g.scales[i][k]);
                    }
            },
            [&](auto& pp) {
                for (std::size_t i = 0; i < n; ++i)
                    for (int k = 0; k < 3; ++k) {
                        double& s = cloud_.scales[i][k];
                        const double l = pp[3 * i + static_cast<std::size_t>(k)];
                        if (l != std::log(s)) s = std::max(std::exp(l), kScaleFloor);
                    }
            });
        run(adam_rot_, cfg_.lr.rotation, "rotations",
            [&](auto& pp, auto& dd) {
                for (std::size_t i = 0; i < n; ++i)
                    for (int k = 0; k < 4; ++k) pp.push_back(cloud_.rotations[i][k]), dd.push_back(g.rotations[i][k]);
            },
            [&](auto& pp) {
                for (std::size_t i = 0; i < n; ++i) {
                    const Quat q{pp[4 * i], pp[4 * i + 1], pp[4 * i + 2], pp[4 * i + 3]};
                    const Quat& cur = cloud_.rotations[i];
                    if (q.w == cur.w && q.x == cur.x && q.y == cur.y && q.z == cur.z) continue;
                    const double len = q.norm();
                    cloud_.rotations[i] = len > 1e-12 ? q.normalized() : Quat::identity();
                }
            });
        run(adam_opacity_, cfg_.lr.opacity, "opacity",
            [&](auto& pp, auto& dd) {
                pp.assign(cloud_.opacity_logits.begin(), cloud_.opacity_logits.end());
                dd.assign(g.opacity_logits.begin(), g.opacity_logits.end());
            },
            [&](auto& pp) {
                // Bounded logits keep the activated opacity strictly inside (0, 1).
                for (std::size_t i = 0; i < n; ++i) cloud_.opacity_logits[i] = std::clamp(pp[i], -30.0, 30.0);
            });
        run(adam_dc_, cfg_.lr.sh_dc, "sh_dc",
            [&](auto& pp, auto& dd) {
                for (std::size_t i = 0; i < n; ++i)
                    for (int k = 0; k < 3; ++k) pp.push_back(cloud_.sh[i][0][k]), dd.push_back(g.sh[i][0][k]);
            },
            [&](auto& pp) {
                for (std::size_t i = 0; i < n; ++i) cloud_.sh[i][0] = {pp[3 * i], pp[3 * i + 1], pp[3 * i + 2]};
            });
        run(adam_rest_, cfg_.lr.sh_rest, "sh_rest",
            [&](auto& pp, auto& dd) {
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t c = 1; c < 16; ++c)
                        for (int k = 0; k < 3; ++k) pp.push_back(cloud_.sh[i][c][k]), dd.push_back(g.sh[i][c][k]);
            },
            [&](auto& pp) {
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t c = 1; c < 16; ++c)
                        cloud_.sh[i][c] = {pp[45 * i + 3 * (c - 1)], pp[45 * i + 3 * (c - 1) + 1], pp[45 * i + 3 * (c - 1) + 2]};
            });
        if (g.net) {
            run(adam_net_, cfg_.lr.net, "net",
                [&](auto& pp, auto& dd) {
                    net_.for_each_tensor([&](std::span<const double> t) { pp.insert(pp.end(), t.begin(), t.end()); });
                    g.net->for_each_tensor([&](std::span<const double> t) { dd.insert(dd.end(), t.begin(), t.end()); });
                },
                [&](auto& pp) {
                    std::size_t k = 0;
                    net_.for_each_tensor([&](std::span<double> t) {
                        for (double& v : t) v = pp[k++];
                    });
                });
        }
    }

    /// Schedules that run after the optimizer step of `iteration` (1-based).
    void housekeeping(int iteration) {
        if (iteration % cfg_.sh_interval == 0 && cloud_.sh_degree < cfg_.max_sh_degree) {
            ++cloud_.sh_degree;
            events_.push_back({iteration, HousekeepingEvent::ShDegree, cloud_.sh_degree});
        }
        const auto& dc = cfg_.densify;
        if (dc.enabled && iteration >= dc.from && iteration <= dc.until && iteration % dc.interval == 0) {
            densify_and_prune();
            events_.push_back({iteration, HousekeepingEvent::Densify, static_cast<int>(cloud_.size())});
        }
        if (iteration % cfg_.opacity_reset_interval == 0) {
            double cap = logit(cfg_.opacity_reset_value);
            while (sigmoid(cap) > cfg_.opacity_reset_value) cap = std::nextafter(cap, -INFINITY);
            for (double& o : cloud_.opacity_logits) o = std::min(o, cap);
            adam_opacity_.reset_moments();
            events_.push_back({iteration, HousekeepingEvent::OpacityReset, 0});
        }
    }

    /// Clone small high-gradient Gaussians, split large ones, prune faint
    /// ones. New Gaussians are rebound to the body and start with zero moments.
    DensifyReport densify_and_prune() {
        const auto& dc = cfg_.densify;
        const std::size_t n = cloud_.size();
        const double bound = dc.scale_fraction * extent_;
        std::vector<std::size_t> candidates;
        for (std::size_t i = 0; i < n; ++i) {
            const double mean = visible_[i] > 0 ? grad_sum_[i] / visible_[i] : 0.0;
            if (mean > dc.grad_threshold) candidates.push_back(i);
        }
        // Largest gradients first when the budget cannot take every candidate.
        std::stable_sort(candidates.begin(), candidates.end(), [&](std::size_t a, std::size_t b) {
            return grad_sum_[a] / visible_[a] > grad_sum_[b] / visible_[b];
        });
        std::vector<char> action(n, 0);  // 1 clone, 2 split
        std::size_t budget = dc.max_gaussians > n ? dc.max_gaussians - n : 0;
        for (std::size_t i : candidates) {
            if (budget == 0) break;
            const Vec3 s = cloud_.scales[i];
            action[i] = std::max({s.x, s.y, s.z}) <= bound ? 1 : 2;
            --budget;
        }
        DensifyReport rep;
        GaussianCloud out;
        out.joint_count = cloud_.joint_count;
        out.sh_degree = cloud_.sh_degree;
        out.reserve(n + candidates.size());
        std::vector<std::ptrdiff_t> origin;  // source index, or -1 for new Gaussians
        std::vector<std::size_t> fresh;
        std::normal_distribution<double> nd(0.0, 1.0);
        for (std::size_t i = 0; i < n; ++i) {
            const bool faint = cloud_.opacity(i) < dc.prune_opacity;
            if (action[i] == 2) {
                const Mat3 r = quat_to_rotmat(cloud_.rotations[i].normalized());
                for (int c = 0; c < 2; ++c) {
                    const Vec3 s = cloud_.scales[i];
                    const Vec3 z{nd(rng_) * s.x, nd(rng_) * s.y, nd(rng_) * s.z};
                    out.append_from(cloud_, i);
                    out.positions.back() = cloud_.positions[i] + r * z;
                    const double f = dc.split_factor;
                    out.scales.back() = {std::max(s.x / f, kScaleFloor), std::max(s.y / f, kScaleFloor), std::max(s.z / f, kScaleFloor)};
                    origin.push_back(-1);
                    fresh.push_back(out.size() - 1);
                }
                ++rep.split;
                continue;
            }
            if (faint) {
                ++rep.pruned;
                continue;
            }
            out.append_from(cloud_, i);
            origin.push_back(static_cast<std::ptrdiff_t>(i));
            if (action[i] == 1) {
                out.append_from(cloud_, i);
                origin.push_back(-1);
                fresh.push_back(out.size() - 1);
                ++rep.cloned;
            }
        }
        if (out.empty()) fail(ErrorCode::EmptyCloud, "density control pruned every Gaussian");
        // Rebind new Gaussians that descend from bound ones.
        std::vector<std::size_t> rebind;
        for (std::size_t j : fresh)
            if (out.bindings[j].bound()) rebind.push_back(j);
        if (!rebind.empty()) {
            std::vector<Vec3> pts;
            for (std::size_t j : rebind) pts.push_back(out.positions[j]);
            const auto b = bind_nearest(pts, body_);
            const auto jc = static_cast<std::size_t>(out.joint_count);
            for (std::size_t k = 0; k < rebind.size(); ++k) {
                out.bindings[rebind[k]] = b[k];
                const auto row = body_.weight_row(b[k].vertex);
                std::copy(row.begin(), row.end(), out.weights.begin() + static_cast<std::ptrdiff_t>(rebind[k] * jc));
            }
        }
        remap(adam_pos_, origin, 3);
        remap(adam_scale_, origin, 3);
        remap(adam_rot_, origin, 4);
        remap(adam_opacity_, origin, 1);
        remap(adam_dc_, origin, 3);
        remap(adam_rest_, origin, 45);
        cloud_ = std::move(out);
        reset_stats();
        return rep;
    }

    /// Full loop. Rows go to `metrics` as CSV; `holdout` frames are rendered
    /// without augmentation for the PSNR column.
    Checkpoint train(std::span<const TrainSample> samples, std::span<const TrainSample> holdout = {},
                     std::ostream* metrics = nullptr) {
        if (metrics) *metrics << "iteration,wall_ms,loss,l1,s3im,psnr_holdout,n_gaussians\n";
        if (cfg_.iterations == 0) return checkpoint();
        if (samples.empty()) fail(ErrorCode::InvalidArgument, "no training samples");
        const auto t0 = std::chrono::steady_clock::now();
        std::uniform_int_distribution<std::size_t> pick(0, samples.size() - 1);
        for (int it = 1; it <= cfg_.iterations; ++it) {
            const StepStats st = step(samples[pick(rng_)]);
            last_ = st;
            iteration_ = it;
            housekeeping(it);
            if (metrics && (it % cfg_.log_interval == 0 || it == cfg_.iterations)) {
                const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
                const double p = holdout.empty() ? std::numeric_limits<double>::quiet_NaN() : evaluate_psnr(holdout.front());
                char buf[256];
                std::snprintf(buf, sizeof buf, "%d,%.1f,%.9g,%.9g,%.9g,%s,%zu\n", it, ms, st.loss, st.l1, st.s3im,
                              std::isnan(p) ? "nan" : format_psnr(p).c_str(), cloud_.size());
                *metrics << buf;
                metrics->flush();
            }
        }
        return checkpoint();
    }

    const StepStats& last_step() const { return last_; }

    Framebuffer render_sample(const TrainSample& s) const {
        Framebuffer fb = render(cloud_, body_, s.pose, cfg_.train_net ? &net_ : nullptr, s.time(), s.camera, background_,
                                nullptr, render_options());
        apply_mask(fb.color, s.mask, background_);
        return fb;
    }

    double evaluate_psnr(const TrainSample& s) const { return psnr(render_sample(s).color, s.image.data); }

private:
    void reset_stats() {
        grad_sum_.assign(cloud_.size(), 0.0);
        visible_.assign(cloud_.size(), 0);
    }

    static void remap(AdamState& st, const std::vector<std::ptrdiff_t>& origin, std::size_t stride) {
        if (st.m.empty()) return;
        AdamState out = st;
        out.m.assign(origin.size() * stride, 0.0);
        out.v.assign(origin.size() * stride, 0.0);
        for (std::size_t j = 0; j < origin.size(); ++j) {
            if (origin[j] < 0) continue;
            const auto src = static_cast<std::size_t>(origin[j]) * stride;
            for (std::size_t k = 0; k < stride; ++k) {
                out.m[j * stride + k] = st.m[src + k];
                out.v[j * stride + k] = st.v[src + k];
            }
        }
        st = std::move(out);
    }

    const SkinnedBody& body_;
    GaussianCloud cloud_;
    RefinementNet net_;
    TrainConfig cfg_;
    Vec3 background_;
    std::mt19937_64 rng_;
    double extent_ = 1.0;
    int iteration_ = 0;
    StepStats last_;
    std::vector<double> grad_sum_;
    std::vector<int> visible_;
    std::vector<HousekeepingRecord> events_;
    AdamState adam_pos_, adam_scale_, adam_rot_, adam_opacity_, adam_dc_, adam_rest_, adam_net_;
};

struct EvalResult {
    double psnr = 0, ssim = 0;
    std::vector<double> per_frame_psnr, per_frame_ssim;
};

/// Mean PSNR/SSIM over samples (an infinite PSNR contributes as infinity).
inline EvalResult evaluate(const GaussianCloud& cloud, const RefinementNet* net, const SkinnedBody& body,
                           std::span<const TrainSample> samples, const Vec3& background, const RenderOptions& opt = {}) {
    EvalResult r;
    for (const auto& s : samples) {
        Framebuffer fb = render(cloud, body, s.pose, net, s.time(), s.camera, background, nullptr, opt);
        apply_mask(fb.color, s.mask, background);
        r.per_frame_psnr.push_back(psnr(fb.color, s.image.data));
        r.per_frame_ssim.push_back(ssim(fb.color, s.image.data, s.image.width, s.image.height));
    }
    if (samples.empty()) return r;
    for (double v : r.per_frame_psnr) r.psnr += v;
    for (double v : r.per_frame_ssim) r.ssim += v;
    r.psnr /= static_cast<double>(samples.size());
    r.ssim /= static_cast<double>(samples.size());
    return r;
}

} // namespace gav
