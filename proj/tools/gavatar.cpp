// Copyright Contributors to the gavatar project
// SPDX-License-Identifier: Apache-2.0

// gavatar command-line front end.

#include "gavatar/checkpoint.hpp"
#include "gavatar/dataset.hpp"
#include "gavatar/frame_select.hpp"
#include "gavatar/ply.hpp"
#include "gavatar/service.hpp"
#include "gavatar/synthetic.hpp"
#include "gavatar/trainer.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <boost/asio/signal_set.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace gav;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

json read_json_file(const fs::path& path) {
    if (!fs::exists(path)) fail(ErrorCode::MissingFile, path.string());
    std::ifstream in(path);
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        fail(ErrorCode::ParseError, path.string() + ": " + e.what());
    }
}

Pose load_pose(const fs::path& path) { return pose_from_json(read_json_file(path), path.string()); }

NetConfig default_net_config(const SkinnedBody& body) {
    NetConfig nc;
    nc.pose_input_dim = 3 * body.joint_count();
    return nc;
}

const RefinementNet* usable_net(const Checkpoint& ck) { return ck.net.parameter_count() > 0 ? &ck.net : nullptr; }

Image to_image(const Framebuffer& fb) {
    Image img(fb.width, fb.height);
    img.data = fb.color;
    return img;
}

void write_image(const Image& img, const fs::path& path) {
    if (path.extension() == ".pfm") write_pfm(img, path);
    else write_png(img, path);
}

/// Camera flags shared by render and animate.
struct CameraFlags {
    std::string camera_file;
    int width = 256, height = 256;
    double fov = 40.0;
    double azimuth = 0.0, elevation = 10.0, radius = 2.5;
    std::vector<double> target{0.0, 0.5, 0.0};

    void add(CLI::App* sub) {
        sub->add_option("--camera", camera_file, "Camera JSON (manifest camera schema); overrides the orbit flags")->check(CLI::ExistingFile);
        sub->add_option("--width", width, "Image width")->check(CLI::PositiveNumber);
        sub->add_option("--height", height, "Image height")->check(CLI::PositiveNumber);
        sub->add_option("--fov", fov, "Vertical field of view in degrees")->check(CLI::Range(1.0, 179.0));
        sub->add_option("--azimuth", azimuth, "Orbit azimuth in degrees");
        sub->add_option("--elevation", elevation, "Orbit elevation in degrees");
        sub->add_option("--radius", radius, "Orbit radius in meters");
        sub->add_option("--target", target, "Orbit target x y z")->expected(3);
    }

    Camera camera(double azimuth_offset = 0.0) const {
        if (!camera_file.empty()) return detail::camera_from_json(read_json_file(camera_file), camera_file);
        Camera c = camera_from_fov(width, height, fov);
        apply_orbit(c, {wrap_degrees(azimuth + azimuth_offset), elevation, radius, {target[0], target[1], target[2]}});
        return c;
    }
};

Vec3 background_from(const std::vector<double>& v) { return {v[0], v[1], v[2]}; }

// ---------------------------------------------------------------- subcommands

int cmd_init(const std::string& body_path, const std::string& ply_path, int sh_degree, bool no_net, std::uint64_t seed,
             const std::string& out) {
    const SkinnedBody body = load_body(body_path);
    Checkpoint ck;
    if (ply_path.empty()) {
        ck.cloud = init_from_vertices(body, sh_degree);
    } else {
        ck.cloud = init_from_points(read_ply(ply_path), body, sh_degree);
    }
    if (!no_net) {
        NetConfig nc = default_net_config(body);
        nc.seed = seed;
        ck.net = RefinementNet(nc);
    }
    ck.config.seed = seed;
    save_checkpoint(ck, out);
    std::cout << "wrote " << out << ": " << ck.cloud.size() << " Gaussians, net parameters " << ck.net.parameter_count() << "\n";
    return 0;
}

int cmd_select_frames(const std::string& manifest) {
    const Dataset ds = load_dataset(manifest);
    std::vector<Pose> poses;
    for (const auto& f : ds.frames) poses.push_back(f.pose);
    const auto in = selection_inputs(ds.body, poses);
    const FrameSelection sel = select_frames(in.rotations, in.joints, in.canonical);
    json idx = json::array();
    for (int i : sel.indices) idx.push_back(ds.frames[static_cast<std::size_t>(i)].index);
    std::cout << json{{"indices", idx}, {"d_min", sel.d_min}, {"pairwise_deg", sel.pairwise_deg}}.dump() << "\n";
    return 0;
}

int cmd_fuse(const std::string& body_path, const std::vector<std::string>& plys, const std::vector<std::string>& poses,
             const std::string& out, bool ascii) {
    if (plys.size() != poses.size())
        fail(ErrorCode::InvalidArgument, std::to_string(plys.size()) + " --ply files but " + std::to_string(poses.size()) + " --pose files");
    const SkinnedBody body = load_body(body_path);
    std::vector<PosedPart> parts;
    for (std::size_t i = 0; i < plys.size(); ++i) parts.push_back({read_ply(plys[i]), load_pose(poses[i])});
    const ColoredPointCloud fused = fuse_parts(parts, body);
    write_ply(fused, out, ascii ? PlyFormat::Ascii : PlyFormat::BinaryLittleEndian);
    std::cout << "wrote " << out << ": " << fused.size() << " canonical points from " << parts.size() << " parts\n";
    return 0;
}

struct TrainFlags {
    std::string data, init, config_file, out = "avatar.gavc", metrics;
    std::vector<std::string> sets;
    int iters = -1, threads = -1;
    long long seed = -1;
};

int cmd_train(const TrainFlags& f) {
    TrainConfig cfg;
    if (!f.config_file.empty()) {
        if (!fs::exists(f.config_file)) fail(ErrorCode::MissingFile, f.config_file);
        std::ifstream in(f.config_file);
        std::stringstream ss;
        ss << in.rdbuf();
        try {
            apply_config_text(cfg, ss.str());
        } catch (const Error& e) {
            fail(e.code(), f.config_file + ": " + e.detail());
        }
    }
    for (const auto& kv : f.sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) fail(ErrorCode::InvalidArgument, "--set expects key=value, got '" + kv + "'");
        set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (f.iters >= 0) cfg.iterations = f.iters;
    if (f.threads >= 0) cfg.threads = f.threads;
    if (f.seed >= 0) cfg.seed = static_cast<std::uint64_t>(f.seed);
    cfg.validate();

    const Dataset ds = load_dataset(f.data);
    const auto train = ds.samples(false);
    const auto holdout = ds.samples(true);
    GaussianCloud cloud;
    RefinementNet net;
    if (f.init.empty()) {
        cloud = init_from_vertices(ds.body);
        NetConfig nc = default_net_config(ds.body);
        nc.seed = cfg.seed;
        net = RefinementNet(nc);
    } else {
        Checkpoint ck = load_checkpoint(f.init);
        cloud = std::move(ck.cloud);
        net = ck.net.parameter_count() > 0 ? std::move(ck.net) : RefinementNet(default_net_config(ds.body));
    }
    std::cout << "training on " << train.size() << " frames (" << holdout.size() << " held out), " << cloud.size()
              << " Gaussians, " << cfg.iterations << " iterations\n";
    Trainer trainer(ds.body, std::move(cloud), std::move(net), cfg, ds.background);
    std::ofstream file;
    if (!f.metrics.empty()) {
        file.open(f.metrics);
        if (!file) fail(ErrorCode::IoError, "cannot open " + f.metrics);
    }
    std::ostream& log = f.metrics.empty() ? std::cout : static_cast<std::ostream&>(file);
    Checkpoint ck = trainer.train(train, holdout, &log);
    save_checkpoint(ck, f.out);
    if (!holdout.empty()) {
        const auto ev = evaluate(ck.cloud, cfg.train_net ? &ck.net : nullptr, ds.body, holdout, ds.background, trainer.render_options());
        std::cout << "held-out psnr=" << format_psnr(ev.psnr) << " ssim=" << ev.ssim << " frames=" << holdout.size() << "\n";
    }
    std::cout << "wrote " << f.out << " (" << ck.cloud.size() << " Gaussians)\n";
    return 0;
}

struct RenderFlags {
    std::string checkpoint, body, data, pose, out = "frame.png";
    int frame = -1;
    double time = 0.0;
    std::vector<double> background{0, 0, 0};
    CameraFlags cam;
};

int cmd_render(const RenderFlags& f) {
    const Checkpoint ck = load_checkpoint(f.checkpoint);
    SkinnedBody body;
    Pose pose;
    Camera camera;
    Vec3 bg = background_from(f.background);
    double time = f.time;
    if (!f.data.empty()) {
        const Dataset ds = load_dataset(f.data);
        if (f.frame < 0 || static_cast<std::size_t>(f.frame) >= ds.size())
            fail(ErrorCode::InvalidArgument, "--frame must be in [0, " + std::to_string(ds.size()) + ")");
        const auto& fr = ds.frames[static_cast<std::size_t>(f.frame)];
        body = ds.body;
        pose = fr.pose;
        camera = ds.cameras.at(fr.camera);
        bg = ds.background;
        time = normalized_time(fr.index, ds.total_frames);
    } else {
        if (f.body.empty()) fail(ErrorCode::InvalidArgument, "render needs --body or --data");
        body = load_body(f.body);
        pose = f.pose.empty() ? Pose::rest(body.joint_count()) : load_pose(f.pose);
        camera = f.cam.camera();
    }
    if (!f.pose.empty() && !f.data.empty()) pose = load_pose(f.pose);
    validate_pose(pose);
    const Framebuffer fb = render(ck.cloud, body, pose, usable_net(ck), time, camera, bg);
    write_image(to_image(fb), f.out);
    std::cout << "wrote " << f.out << " (" << fb.width << "x" << fb.height << ")\n";
    return 0;
}

struct AnimateFlags {
    std::string checkpoint, body, script = "elbow-swing", out_dir = "frames";
    int frames = 30;
    double swing = 45.0, spin = 0.0;
    std::vector<double> background{0, 0, 0};
    CameraFlags cam;
};

int cmd_animate(const AnimateFlags& f) {
    const Checkpoint ck = load_checkpoint(f.checkpoint);
    const SkinnedBody body = load_body(f.body);
    SyntheticSpec spec;
    spec.script = parse_pose_script(f.script);
    spec.frames = f.frames;
    spec.swing_deg = f.swing;
    fs::create_directories(f.out_dir);
    for (int i = 0; i < f.frames; ++i) {
        const Pose pose = synthetic_pose(spec, body.joint_count(), i);
        const Camera camera = f.cam.camera(f.spin * i / std::max(1, f.frames));
        const Framebuffer fb = render(ck.cloud, body, pose, usable_net(ck), normalized_time(i, f.frames), camera,
                                      background_from(f.background));
        char name[32];
        std::snprintf(name, sizeof name, "%04d.png", i);
        write_png(to_image(fb), fs::path(f.out_dir) / name);
    }
    std::cout << "wrote " << f.frames << " frames to " << f.out_dir << "\n";
    return 0;
}

struct EvalFlags {
    std::string pred, gt, checkpoint, data, split = "test";
};

int cmd_eval(const EvalFlags& f) {
    if (!f.pred.empty() || !f.gt.empty()) {
        if (f.pred.empty() || f.gt.empty()) fail(ErrorCode::InvalidArgument, "image comparison needs both --pred and --gt");
        const Image a = read_image(f.pred), b = read_image(f.gt);
        if (a.width != b.width || a.height != b.height)
            fail(ErrorCode::ShapeMismatch, f.pred + " is " + std::to_string(a.width) + "x" + std::to_string(a.height) + ", " + f.gt +
                                               " is " + std::to_string(b.width) + "x" + std::to_string(b.height));
        std::printf("psnr=%s ssim=%.4f\n", format_psnr(psnr(a.data, b.data)).c_str(), ssim(a, b));
        return 0;
    }
    if (f.checkpoint.empty() || f.data.empty()) fail(ErrorCode::InvalidArgument, "eval needs --pred/--gt or --checkpoint/--data");
    const Checkpoint ck = load_checkpoint(f.checkpoint);
    const Dataset ds = load_dataset(f.data);
    std::vector<TrainSample> samples;
    if (f.split == "all") samples = ds.all_samples();
    else if (f.split == "test") samples = ds.samples(true);
    else if (f.split == "train") samples = ds.samples(false);
    else fail(ErrorCode::InvalidArgument, "--split must be test, train or all");
    if (samples.empty()) fail(ErrorCode::ValidationError, "split '" + f.split + "' has no frames");
    const auto ev = evaluate(ck.cloud, usable_net(ck), ds.body, samples, ds.background);
    for (std::size_t i = 0; i < samples.size(); ++i)
        std::printf("frame %d psnr=%s ssim=%.4f\n", samples[i].frame, format_psnr(ev.per_frame_psnr[i]).c_str(), ev.per_frame_ssim[i]);
    std::printf("psnr=%s ssim=%.4f frames=%zu\n", format_psnr(ev.psnr).c_str(), ev.ssim, samples.size());
    return 0;
}

struct ServeFlags {
    std::string checkpoint, body, address = "127.0.0.1", ui;
    int port = 8080, width = 256, height = 256, threads = 0;
    double fov = 40.0, azimuth = 0.0, elevation = 10.0, radius = 2.5;
    std::vector<double> target{0.0, 0.5, 0.0}, background{0, 0, 0};
};

int cmd_serve(const ServeFlags& f) {
    ServiceConfig cfg;
    cfg.address = f.address;
    cfg.port = static_cast<unsigned short>(f.port);
    cfg.width = f.width;
    cfg.height = f.height;
    cfg.fov_y_deg = f.fov;
    cfg.orbit = {f.azimuth, f.elevation, f.radius, {f.target[0], f.target[1], f.target[2]}};
    cfg.background = background_from(f.background);
    cfg.threads = f.threads;
    cfg.ui_root = f.ui;
    AvatarService svc(load_body(f.body), cfg);
    if (!f.checkpoint.empty()) svc.load(load_checkpoint(f.checkpoint));
    const auto port = svc.start();
    std::cout << "serving on http://" << f.address << ":" << port << (svc.loaded() ? "" : " (no checkpoint loaded)") << std::endl;
    boost::asio::io_context signals_ioc;
    boost::asio::signal_set signals(signals_ioc, SIGINT, SIGTERM);
    signals.async_wait([&](const boost::system::error_code&, int) { svc.stop(); });
    std::thread signal_thread([&] { signals_ioc.run(); });
    svc.wait();
    signals_ioc.stop();
    signal_thread.join();
    svc.stop();
    return 0;
}

struct SynthFlags {
    std::string out_dir = "synthetic", script = "elbow-swing";
    int frames = 60, width = 64, height = 64, rings = 20, segments = 25, joints = 2;
    bool fixed_camera = false;
    double azimuth = 0.0, swing = 45.0, jitter = 0.0;
    std::uint64_t seed = 7;
};

int cmd_synth(const SynthFlags& f) {
    SyntheticSpec spec;
    spec.frames = f.frames;
    spec.width = f.width;
    spec.height = f.height;
    spec.rings = f.rings;
    spec.segments = f.segments;
    spec.joints = f.joints;
    spec.orbit_camera = !f.fixed_camera;
    spec.azimuth_start_deg = f.azimuth;
    if (f.fixed_camera) spec.azimuth_end_deg = f.azimuth;
    spec.script = parse_pose_script(f.script);
    spec.swing_deg = f.swing;
    spec.jitter = f.jitter;
    spec.seed = f.seed;
    const SyntheticData d = make_synthetic(spec);
    const auto manifest = write_synthetic(d, f.out_dir);
    std::size_t held = 0;
    for (bool h : d.holdout) held += h;
    std::cout << "wrote " << manifest.string() << ": " << d.samples.size() << " frames (" << held << " held out), "
              << d.truth.cloud.size() << " true Gaussians\n";
    return 0;
}

json info_json(const fs::path& path) {
    if (!fs::exists(path)) fail(ErrorCode::MissingFile, path.string());
    const auto ext = path.extension().string();
    const bool json_body = ext == ".json" && !read_json_file(path).contains("frames");
    if (ext == ".gavb" || json_body) {
        const SkinnedBody b = load_body(path);
        return {{"kind", "body"}, {"vertices", b.vertices.size()}, {"faces", b.faces.size()}, {"joints", b.joint_count()},
                {"joint_names", b.joint_names}, {"shape_dims", b.shape_count}};
    }
    if (ext == ".gavc") {
        const Checkpoint ck = load_checkpoint(path);
        std::size_t bound = 0;
        for (const auto& b : ck.cloud.bindings) bound += b.bound();
        return {{"kind", "checkpoint"}, {"gaussians", ck.cloud.size()}, {"bound", bound}, {"sh_degree", ck.cloud.sh_degree},
                {"iteration", ck.iteration}, {"net_parameters", ck.net.parameter_count()},
                {"joints", ck.net.parameter_count() > 0 ? ck.net.config().pose_input_dim / 3 : 0}};
    }
    if (ext == ".ply") {
        const ColoredPointCloud pc = read_ply(path);
        return {{"kind", "ply"}, {"points", pc.size()}, {"weights", pc.has_weights()}, {"joints", pc.joint_count}};
    }
    if (ext == ".json") {
        const Dataset ds = load_dataset(path);
        return {{"kind", "manifest"}, {"frames", ds.size()}, {"cameras", ds.cameras.size()}, {"held_out", ds.indices(true).size()},
                {"joints", ds.body.joint_count()}, {"frame_count", ds.total_frames}};
    }
    if (ext == ".png") {
        const Image8 img = read_png(path, true);
        return {{"kind", "png"}, {"width", img.width}, {"height", img.height}, {"channels", img.channels}};
    }
    fail(ErrorCode::InvalidArgument, "unknown file type '" + ext + "' (.gavb, .gavc, .ply, .json, .png)");
}

int cmd_info(const std::string& path, bool as_json) {
    const json j = info_json(path);
    if (as_json) {
        std::cout << j.dump() << "\n";
        return 0;
    }
    for (const auto& [k, v] : j.items()) std::cout << k << ": " << (v.is_string() ? v.get<std::string>() : v.dump()) << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"gavatar: animatable 3D Gaussian human avatars"};
    app.require_subcommand(1);
    app.fallthrough();
    bool as_json = false;
    int threads = 0;
    app.add_flag("--json", as_json, "Append a machine-readable JSON line to error output (and JSON output for info)");
    app.add_option("--threads", threads, "Worker threads (0 = all cores)")->check(CLI::NonNegativeNumber);

    std::string body, ply, out, checkpoint, data, path;
    int sh_degree = 0;
    bool no_net = false, ascii = false;
    std::uint64_t seed = 0;
    std::vector<std::string> plys, poses;

    auto* init = app.add_subcommand("init", "Build a canonical Gaussian cloud from a PLY or the template vertices");
    init->add_option("--body", body, "Body file (.gavb or .json)")->required()->check(CLI::ExistingFile);
    init->add_option("--ply", ply, "Canonical point cloud; template vertices (white) when omitted")->check(CLI::ExistingFile);
    init->add_option("--sh-degree", sh_degree, "Initial active SH degree")->check(CLI::Range(0, 3));
    init->add_flag("--no-net", no_net, "Store no refinement net");
    init->add_option("--seed", seed, "Net initialization seed");
    init->add_option("-o,--out", out, "Output checkpoint")->required();

    auto* select = app.add_subcommand("select-frames", "Pick four near-canonical frames roughly 90 degrees apart");
    select->add_option("--data", data, "Dataset manifest")->required()->check(CLI::ExistingFile);

    auto* fuse = app.add_subcommand("fuse", "Canonicalize per-view point clouds and concatenate them");
    fuse->add_option("--body", body, "Body file")->required()->check(CLI::ExistingFile);
    fuse->add_option("--ply", plys, "Posed point cloud (repeat per part)")->required()->check(CLI::ExistingFile);
    fuse->add_option("--pose", poses, "Pose JSON for the matching --ply (repeat per part)")->required()->check(CLI::ExistingFile);
    fuse->add_option("-o,--out", out, "Output PLY")->required();
    fuse->add_flag("--ascii", ascii, "Write ASCII PLY");

    TrainFlags tf;
    auto* train = app.add_subcommand("train", "Optimize an avatar on a dataset");
    train->add_option("--data", tf.data, "Dataset manifest")->required()->check(CLI::ExistingFile);
    train->add_option("--init", tf.init, "Initial checkpoint; template vertices when omitted")->check(CLI::ExistingFile);
    train->add_option("--config", tf.config_file, "Config file with key = value lines");
    train->add_option("--set", tf.sets, "Override one config key (key=value)");
    train->add_option("--iters", tf.iters, "Iteration count")->check(CLI::NonNegativeNumber);
    train->add_option("--seed", tf.seed, "Random seed")->check(CLI::NonNegativeNumber);
    train->add_option("--metrics", tf.metrics, "Metrics CSV path; stdout when omitted");
    train->add_option("-o,--out", tf.out, "Output checkpoint");

    RenderFlags rf;
    auto* rend = app.add_subcommand("render", "Render one frame to PNG or PFM");
    rend->add_option("--checkpoint", rf.checkpoint, "Checkpoint")->required()->check(CLI::ExistingFile);
    rend->add_option("--body", rf.body, "Body file")->check(CLI::ExistingFile);
    rend->add_option("--data", rf.data, "Dataset manifest; renders --frame with its camera and pose")->check(CLI::ExistingFile);
    rend->add_option("--frame", rf.frame, "Frame position in the manifest");
    rend->add_option("--pose", rf.pose, "Pose JSON")->check(CLI::ExistingFile);
    rend->add_option("--time", rf.time, "Normalized time in [0, 1]")->check(CLI::Range(0.0, 1.0));
    rend->add_option("--background", rf.background, "Background RGB")->expected(3);
    rf.cam.add(rend);
    rend->add_option("-o,--out", rf.out, "Output image (.png or .pfm)");

    AnimateFlags af;
    auto* anim = app.add_subcommand("animate", "Render a pose script to an image sequence");
    anim->add_option("--checkpoint", af.checkpoint, "Checkpoint")->required()->check(CLI::ExistingFile);
    anim->add_option("--body", af.body, "Body file")->required()->check(CLI::ExistingFile);
    anim->add_option("--script", af.script, "static, elbow-swing, elbow-ramp or turntable");
    anim->add_option("--frames", af.frames, "Frame count")->check(CLI::PositiveNumber);
    anim->add_option("--swing", af.swing, "Elbow swing amplitude in degrees");
    anim->add_option("--spin", af.spin, "Camera azimuth sweep over the sequence in degrees");
    anim->add_option("--background", af.background, "Background RGB")->expected(3);
    af.cam.add(anim);
    anim->add_option("--out-dir", af.out_dir, "Output directory");

    EvalFlags ef;
    auto* eval = app.add_subcommand("eval", "PSNR/SSIM between images or of a checkpoint on a dataset split");
    eval->add_option("--pred", ef.pred, "Predicted image")->check(CLI::ExistingFile);
    eval->add_option("--gt", ef.gt, "Ground-truth image")->check(CLI::ExistingFile);
    eval->add_option("--checkpoint", ef.checkpoint, "Checkpoint")->check(CLI::ExistingFile);
    eval->add_option("--data", ef.data, "Dataset manifest")->check(CLI::ExistingFile);
    eval->add_option("--split", ef.split, "test, train or all");

    ServeFlags sf;
    auto* serve = app.add_subcommand("serve", "Run the HTTP/WebSocket render service");
    serve->add_option("--body", sf.body, "Body file")->required()->check(CLI::ExistingFile);
    serve->add_option("--checkpoint", sf.checkpoint, "Checkpoint; requests answer 409 until one is loaded")->check(CLI::ExistingFile);
    serve->add_option("--address", sf.address, "Bind address");
    serve->add_option("--port", sf.port, "Port (0 picks a free one)")->check(CLI::Range(0, 65535));
    serve->add_option("--width", sf.width, "Render width")->check(CLI::PositiveNumber);
    serve->add_option("--height", sf.height, "Render height")->check(CLI::PositiveNumber);
    serve->add_option("--fov", sf.fov, "Vertical field of view in degrees")->check(CLI::Range(1.0, 179.0));
    serve->add_option("--azimuth", sf.azimuth, "Initial orbit azimuth");
    serve->add_option("--elevation", sf.elevation, "Initial orbit elevation");
    serve->add_option("--radius", sf.radius, "Initial orbit radius");
    serve->add_option("--target", sf.target, "Orbit target x y z")->expected(3);
    serve->add_option("--background", sf.background, "Background RGB")->expected(3);
    serve->add_option("--ui", sf.ui, "Directory with the viewer bundle, served under /ui")->check(CLI::ExistingDirectory);

    SynthFlags yf;
    auto* synth = app.add_subcommand("synth", "Write a synthetic dataset rendered from a known avatar");
    synth->add_option("--out-dir", yf.out_dir, "Output directory");
    synth->add_option("--frames", yf.frames, "Frame count")->check(CLI::PositiveNumber);
    synth->add_option("--width", yf.width, "Image width")->check(CLI::PositiveNumber);
    synth->add_option("--height", yf.height, "Image height")->check(CLI::PositiveNumber);
    synth->add_option("--rings", yf.rings, "Tube rings")->check(CLI::Range(2, 10000));
    synth->add_option("--segments", yf.segments, "Tube segments")->check(CLI::Range(3, 10000));
    synth->add_option("--joints", yf.joints, "Joint count")->check(CLI::Range(1, 64));
    synth->add_option("--script", yf.script, "static, elbow-swing, elbow-ramp or turntable");
    synth->add_option("--swing", yf.swing, "Elbow swing amplitude in degrees");
    synth->add_flag("--fixed-camera", yf.fixed_camera, "Keep the camera still instead of orbiting");
    synth->add_option("--azimuth", yf.azimuth, "Camera azimuth (start of the orbit)");
    synth->add_option("--jitter", yf.jitter, "Normal offset of the true Gaussians");
    synth->add_option("--seed", yf.seed, "Seed");

    auto* info = app.add_subcommand("info", "Describe a body, checkpoint, PLY, manifest or PNG");
    info->add_option("path", path, "File")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == static_cast<int>(CLI::ExitCodes::Success)) return app.exit(e);
        std::cerr << "gavatar: " << e.what() << "\n\n";
        const CLI::App* failed = &app;
        for (const auto* sub : app.get_subcommands()) failed = sub;
        std::cerr << failed->help();
        if (as_json) std::cerr << json{{"error", e.what()}, {"code", "UsageError"}, {"exit", kExitUsage}}.dump() << "\n";
        return kExitUsage;
    }

    if (threads > 0) set_thread_count(threads);
    tf.threads = threads > 0 ? threads : -1;
    sf.threads = threads;
    try {
        if (*init) return cmd_init(body, ply, sh_degree, no_net, seed, out);
        if (*select) return cmd_select_frames(data);
        if (*fuse) return cmd_fuse(body, plys, poses, out, ascii);
        if (*train) return cmd_train(tf);
        if (*rend) return cmd_render(rf);
        if (*anim) return cmd_animate(af);
        if (*eval) return cmd_eval(ef);
        if (*serve) return cmd_serve(sf);
        if (*synth) return cmd_synth(yf);
        if (*info) return cmd_info(path, as_json);
    } catch (const Error& e) {
        std::cerr << "gavatar: " << e.what() << "\n";
        if (as_json) std::cerr << json{{"error", e.detail()}, {"code", to_string(e.code())}, {"exit", kExitRuntime}}.dump() << "\n";
        return kExitRuntime;
    } catch (const std::exception& e) {
        std::cerr << "gavatar: " << e.what() << "\n";
        if (as_json) std::cerr << json{{"error", e.what()}, {"code", "Internal"}, {"exit", kExitRuntime}}.dump() << "\n";
        return kExitRuntime;
    }
    return kExitUsage;
}
