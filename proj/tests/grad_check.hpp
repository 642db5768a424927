// Copyright Contributors to the gavatar project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "scenes.hpp"

#include <algorithm>
#include <functional>
#include <map>
#include <numeric>
#include <string>

namespace gav::testing {

struct GroupError {
    double worst = 0.0;
    std::size_t checked = 0;
    std::size_t refined = 0;  // entries that only matched at the smaller step
    std::string where;
};

/// Full-pipeline analytic gradients against central finite differences on a
/// tiny posed avatar with a randomized refinement net. Each entry is compared
/// at steps h and h/10 and the closer estimate is kept, so a ReLU kink inside
/// one step window is not reported as a gradient error.
struct PipelineGradCheck {
    std::map<std::string, GroupError> groups;

    static PipelineGradCheck run(std::uint64_t seed, int gaussians = 5, int size = 16, bool check_all_net = true) {
        Rng rng(seed);
        const SkinnedBody body = make_fixture_body();
        GaussianCloud cloud = small_avatar(rng, body, gaussians, 1);
        NetConfig cfg;
        cfg.pose_input_dim = 6;
        RefinementNet net(cfg);
        randomize_net(net, rng, 0.01);
        Pose pose = random_pose(rng, 2, 0.3);
        pose.root_translation = {};
        const Camera cam = test_camera(size, size, {0.2, 0.55, 1.6}, {0.0, 0.5, 0.0});
        const double t = 0.35;
        const Vec3 bg{0.1, 0.2, 0.3};
        std::vector<double> probe(3 * static_cast<std::size_t>(size * size));
        for (double& v : probe) v = rng.uniform(-1, 1);

        auto loss = [&]() {
            const auto fb = render(cloud, body, pose, &net, t, cam, bg);
            return std::inner_product(fb.color.begin(), fb.color.end(), probe.begin(), 0.0);
        };
        RenderCache cache;
        render(cloud, body, pose, &net, t, cam, bg, &cache);
        const CloudGrad g = render_backward(cloud, &net, cache, probe);

        PipelineGradCheck out;
        const double h = 1e-5;
        auto central = [&](double& param, double step) {
            const double keep = param;
            param = keep + step;
            const double up = loss();
            param = keep - step;
            const double dn = loss();
            param = keep;
            return (up - dn) / (2 * step);
        };
        auto check = [&](const std::string& group, double& param, double analytic, const std::string& where) {
            const double coarse = central(param, h);
            const double fine = central(param, h / 10);
            const double err_coarse = rel_error(analytic, coarse, 1e-6), err_fine = rel_error(analytic, fine, 1e-6);
            const double err = std::min(err_coarse, err_fine);
            auto& ge = out.groups[group];
            ++ge.checked;
            if (err_coarse > tolerance(group) && err_fine <= tolerance(group)) ++ge.refined;
            if (err > ge.worst) {
                ge.worst = err;
                ge.where = where + " analytic " + std::to_string(analytic) + " numeric " +
                           std::to_string(err_coarse <= err_fine ? coarse : fine);
            }
        };
        for (std::size_t i = 0; i < cloud.size(); ++i) {
            const std::string id = "gaussian " + std::to_string(i);
            for (int k = 0; k < 3; ++k) {
                check("positions", cloud.positions[i][k], g.positions[i][k], id);
                check("scales", cloud.scales[i][k], g.scales[i][k], id);
                check("dc_sh", cloud.sh[i][0][k], g.sh[i][0][k], id);
            }
            for (int k = 0; k < 4; ++k) check("rotations", cloud.rotations[i][k], g.rotations[i][k], id);
            check("opacity", cloud.opacity_logits[i], g.opacity_logits[i], id);
        }
        std::vector<std::span<double>> params;
        net.for_each_tensor([&](std::span<double> s) { params.push_back(s); });
        std::vector<std::span<const double>> analytic;
        g.net->for_each_tensor([&](std::span<const double> s) { analytic.push_back(s); });
        for (std::size_t tix = 0; tix < params.size(); ++tix) {
            const std::size_t stride = check_all_net ? 1 : 17;
            for (std::size_t i = 0; i < params[tix].size(); i += stride)
                check("net", params[tix][i], analytic[tix][i], "tensor " + std::to_string(tix) + " entry " + std::to_string(i));
        }
        return out;
    }

    static double tolerance(const std::string& group) { return group == "dc_sh" || group == "opacity" ? 1e-5 : 1e-3; }
};

} // namespace gav::testing
