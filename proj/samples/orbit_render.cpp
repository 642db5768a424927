// Copyright Contributors to the gavatar project
// SPDX-License-Identifier: Apache-2.0

// Renders a checkpoint around a full orbit while bending the elbow, one PNG
// per step. Without arguments it uses the synthetic ground-truth avatar.
//
//   orbit_render [checkpoint.gavc body.gavb] [out_dir] [steps]

#include "gavatar/checkpoint.hpp"
#include "gavatar/image_io.hpp"
#include "gavatar/synthetic.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>

int main(int argc, char** argv) {
    using namespace gav;
    try {
        SkinnedBody body;
        Checkpoint ck;
        int arg = 1;
        if (argc > 2 && std::filesystem::path(argv[1]).extension() == ".gavc") {
            ck = load_checkpoint(argv[1]);
            body = load_body(argv[2]);
            arg = 3;
        } else {
            SyntheticData data = make_synthetic(SyntheticSpec{});
            body = std::move(data.body);
            ck = std::move(data.truth);
        }
        const std::filesystem::path out = argc > arg ? argv[arg] : "orbit";
        const int steps = argc > arg + 1 ? std::atoi(argv[arg + 1]) : 12;
        std::filesystem::create_directories(out);

        Camera cam = camera_from_fov(128, 128, 40.0);
        for (int s = 0; s < steps; ++s) {
            const double u = static_cast<double>(s) / steps;
            apply_orbit(cam, {360.0 * u, 10.0, 2.5, {0.0, 0.5, 0.0}});
            Pose pose = Pose::rest(body.joint_count());
            if (body.joint_count() > 1) pose.joint_rotations[1] = {0.0, 0.0, deg_to_rad(60.0) * std::sin(6.283185307179586 * u)};
            const Framebuffer fb = render(ck.cloud, body, pose, ck.net.parameter_count() ? &ck.net : nullptr, u, cam, {1, 1, 1});
            char name[32];
            std::snprintf(name, sizeof name, "orbit_%03d.png", s);
            Image img(fb.width, fb.height);
            img.data = fb.color;
            write_png(img, out / name);
        }
        std::printf("wrote %d frames to %s\n", steps, out.string().c_str());
    } catch (const Error& e) {
        std::fprintf(stderr, "%s\n", e.what());
        return 2;
    }
    return 0;
}
