// Copyright Contributors to the gavatar project
// SPDX-License-Identifier: Apache-2.0

#include "gavatar/ply.hpp"
#include "gavatar/synthetic.hpp"
#include "scenes.hpp"

#include <gtest/gtest.h>

#include <chrono>
#include <fstream>
#include <map>

#include <unistd.h>

using namespace gav;
using namespace gav::testing;
namespace fs = std::filesystem;

#ifndef GAVATAR_SOURCE_DIR
#error "GAVATAR_SOURCE_DIR must point at the repository root"
#endif

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("gavatar_io_" + std::to_string(::getpid())) / name;
    fs::create_directories(p.parent_path());
    return p;
}

ColoredPointCloud random_points(Rng& rng, std::size_t n, int joints = 0) {
    ColoredPointCloud pc;
    pc.joint_count = joints;
    for (std::size_t i = 0; i < n; ++i) {
        // f32-representable positions and byte-exact colors round-trip bit for bit.
        pc.positions.push_back({static_cast<float>(rng.uniform(-2, 2)), static_cast<float>(rng.uniform(-2, 2)),
                                static_cast<float>(rng.uniform(-2, 2))});
        pc.colors.push_back({rng.integer(0, 255) / 255.0, rng.integer(0, 255) / 255.0, rng.integer(0, 255) / 255.0});
        for (int j = 0; j < joints; ++j) pc.weights.push_back(static_cast<float>(rng.uniform(0, 1)));
    }
    return pc;
}

void expect_points_eq(const ColoredPointCloud& a, const ColoredPointCloud& b) {
    ASSERT_EQ(a.size(), b.size());
    EXPECT_EQ(a.joint_count, b.joint_count);
    EXPECT_EQ(a.weights, b.weights);
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a.positions[i], b.positions[i]) << i;
        EXPECT_EQ(a.colors[i], b.colors[i]) << i;
    }
}

ErrorCode code_of(const std::function<void()>& fn, std::string* msg = nullptr) {
    try {
        fn();
    } catch (const Error& e) {
        if (msg) *msg = e.what();
        return e.code();
    }
    ADD_FAILURE() << "no error raised";
    return ErrorCode::InvalidArgument;
}

double max_abs_diff_span(std::span<const double> a, std::span<const double> b) {
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

std::vector<unsigned char> bytes_of(const std::string& s) { return {s.begin(), s.end()}; }

} // namespace

TEST(Ply, BinaryAndAsciiRoundTripsAreBitIdentical) {
    Rng rng(1);
    const auto pc = random_points(rng, 1000);
    for (auto fmt : {PlyFormat::BinaryLittleEndian, PlyFormat::Ascii}) {
        const auto path = scratch(fmt == PlyFormat::Ascii ? "a.ply" : "b.ply");
        write_ply(pc, path, fmt);
        expect_points_eq(read_ply(path), pc);
    }
}

TEST(Ply, WeightPropertiesRoundTrip) {
    Rng rng(2);
    const auto pc = random_points(rng, 50, 3);
    expect_points_eq(decode_ply(encode_ply(pc)), pc);
    expect_points_eq(decode_ply(encode_ply(pc, PlyFormat::Ascii)), pc);
}

TEST(Ply, BigEndianIsUnsupported) {
    const std::string text = "ply\nformat binary_big_endian 1.0\nelement vertex 0\nproperty float x\nend_header\n";
    EXPECT_EQ(code_of([&] { decode_ply(bytes_of(text)); }), ErrorCode::UnsupportedPlyVariant);
}

TEST(Ply, ExtraPropertiesAndFacesAreSkipped) {
    const std::string text =
        "ply\nformat ascii 1.0\ncomment made by hand\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\n"
        "property float nx\nproperty uchar red\nproperty uchar green\nproperty uchar blue\n"
        "element face 1\nproperty list uchar int vertex_indices\nend_header\n"
        "0 1 2 0.5 255 0 51\n-1 0.25 3 0 0 255 0\n3 0 1 1\n";
    const auto pc = decode_ply(bytes_of(text));
    ASSERT_EQ(pc.size(), 2u);
    EXPECT_EQ(pc.positions[1], (Vec3{-1, 0.25, 3}));
    EXPECT_EQ(pc.colors[0], (Vec3{1, 0, 0.2}));
}

TEST(Ply, MalformedInputsAreParseErrors) {
    EXPECT_EQ(code_of([&] { decode_ply(bytes_of("plx\nend_header\n")); }), ErrorCode::ParseError);
    EXPECT_EQ(code_of([&] { decode_ply(bytes_of("ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\n")); }),
              ErrorCode::ParseError);
    EXPECT_EQ(code_of([&] {
                  decode_ply(bytes_of("ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\n"
                                      "property float z\nend_header\n1 2 3\n"));
              }),
              ErrorCode::ParseError);  // no color
    Rng rng(3);
    auto bin = encode_ply(random_points(rng, 10));
    bin.resize(bin.size() - 5);
    EXPECT_EQ(code_of([&] { decode_ply(bin); }), ErrorCode::ParseError);
    EXPECT_EQ(code_of([&] { read_ply(scratch("absent.ply")); }), ErrorCode::MissingFile);
}

TEST(Ply, FiftyThousandPointsReadUnderOneSecond) {
    Rng rng(4);
    const auto pc = random_points(rng, 50000);
    for (auto fmt : {PlyFormat::BinaryLittleEndian, PlyFormat::Ascii}) {
        const auto path = scratch("big.ply");
        write_ply(pc, path, fmt);
        const auto t0 = std::chrono::steady_clock::now();
        const auto back = read_ply(path);
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        EXPECT_EQ(back.size(), 50000u);
        EXPECT_LT(secs, 1.0);
        std::cout << (fmt == PlyFormat::Ascii ? "ascii" : "binary") << " 50k read: " << secs * 1000 << " ms\n";
    }
}

TEST(Images, PngRoundTripRgbAndGray) {
    Rng rng(5);
    Image8 rgb{13, 7, 3, {}}, gray{9, 4, 1, {}};
    for (int i = 0; i < 13 * 7 * 3; ++i) rgb.data.push_back(static_cast<std::uint8_t>(rng.integer(0, 255)));
    for (int i = 0; i < 9 * 4; ++i) gray.data.push_back(static_cast<std::uint8_t>(rng.integer(0, 1) * 255));
    const auto p1 = scratch("rgb.png"), p2 = scratch("gray.png");
    write_png(rgb, p1);
    write_png(gray, p2);
    const auto a = read_png(p1), b = read_png(p2);
    EXPECT_EQ(a.data, rgb.data);
    EXPECT_EQ(a.channels, 3);
    EXPECT_EQ(b.data, gray.data);
    EXPECT_EQ(b.channels, 1);
    const auto h = read_png(p1, true);
    EXPECT_EQ(h.width, 13);
    EXPECT_EQ(h.height, 7);
    EXPECT_TRUE(h.data.empty());
}

TEST(Images, QuantizationIsLinearRounding) {
    Image img(2, 1);
    img.data = {0.0, 1.0, 0.5, 0.2, -0.1, 1.3};
    const auto q = quantize(img);
    EXPECT_EQ(q.data, (std::vector<std::uint8_t>{0, 255, 128, 51, 0, 255}));
    EXPECT_EQ(quantize(dequantize(q)).data, q.data);
}

TEST(Images, PfmRoundTripIsExactForFloats) {
    Rng rng(6);
    Image img(5, 3);
    for (double& v : img.data) v = static_cast<float>(rng.uniform(-1, 2));
    const auto p = scratch("x.pfm");
    write_pfm(img, p);
    EXPECT_EQ(read_pfm(p).data, img.data);
    EXPECT_EQ(read_image(p).data, img.data);
}

TEST(Images, CorruptPngIsParseError) {
    Image8 rgb{4, 4, 3, std::vector<std::uint8_t>(48, 7)};
    auto bytes = encode_png(rgb);
    bytes.resize(bytes.size() / 2);
    EXPECT_EQ(code_of([&] { decode_png(bytes); }), ErrorCode::ParseError);
    EXPECT_EQ(code_of([&] { decode_png(bytes_of("not a png at all")); }), ErrorCode::ParseError);
}

namespace {

Checkpoint sample_checkpoint(std::uint64_t seed, const SkinnedBody& body) {
    Rng rng(seed);
    Checkpoint ck;
    ck.cloud = small_avatar(rng, body, 40, 3);
    ck.cloud.bindings[5] = {};  // one static Gaussian
    std::fill(ck.cloud.weights.begin() + 5 * 2, ck.cloud.weights.begin() + 6 * 2, 0.0);
    NetConfig nc;
    nc.pose_input_dim = 6;
    nc.hidden = 16;
    ck.net = RefinementNet(nc);
    randomize_net(ck.net, rng, 0.3);
    ck.config.iterations = 1234;
    ck.config.lr.net = 0.0031;
    ck.iteration = 777;
    std::mt19937_64 eng(seed);
    eng.discard(17);
    std::ostringstream os;
    os << eng;
    ck.rng_state = os.str();
    return ck;
}

void expect_checkpoint_eq(const Checkpoint& a, const Checkpoint& b) {
    EXPECT_EQ(encode_checkpoint(a), encode_checkpoint(b));
    EXPECT_EQ(a.iteration, b.iteration);
    EXPECT_EQ(a.rng_state, b.rng_state);
    EXPECT_TRUE(a.net == b.net);
    EXPECT_EQ(a.net.config(), b.net.config());
    EXPECT_EQ(to_config_text(a.config), to_config_text(b.config));
    EXPECT_EQ(a.cloud.weights, b.cloud.weights);
    EXPECT_EQ(a.cloud.bindings, b.cloud.bindings);
    EXPECT_EQ(a.cloud.opacity_logits, b.cloud.opacity_logits);
    EXPECT_EQ(a.cloud.positions, b.cloud.positions);
    EXPECT_EQ(a.cloud.scales, b.cloud.scales);
    EXPECT_EQ(a.cloud.sh, b.cloud.sh);
    for (std::size_t i = 0; i < a.cloud.size(); ++i)
        for (int k = 0; k < 4; ++k) EXPECT_EQ(a.cloud.rotations[i][k], b.cloud.rotations[i][k]);
}

} // namespace

TEST(CheckpointIo, FreshInitRoundTripsBitExact) {
    const SkinnedBody body = make_fixture_body();
    Checkpoint ck;
    ck.cloud = init_from_vertices(body);
    NetConfig nc;
    nc.pose_input_dim = 6;
    ck.net = RefinementNet(nc);
    const auto path = scratch("fresh.gavc");
    save_checkpoint(ck, path);
    const Checkpoint back = load_checkpoint(path);
    expect_checkpoint_eq(back, ck);
    save_checkpoint(back, scratch("fresh2.gavc"));
    EXPECT_EQ(read_file_bytes(path), read_file_bytes(scratch("fresh2.gavc")));
}

TEST(CheckpointIo, RandomPayloadsRoundTrip) {
    const SkinnedBody body = make_fixture_body();
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const Checkpoint ck = sample_checkpoint(seed, body);
        const auto bytes = encode_checkpoint(ck);
        const Checkpoint back = decode_checkpoint(bytes);
        expect_checkpoint_eq(back, ck);
        EXPECT_EQ(encode_checkpoint(back), bytes);
    }
}

TEST(CheckpointIo, NetlessCheckpointRoundTrips) {
    const SkinnedBody body = make_fixture_body();
    Checkpoint ck;
    ck.cloud = init_from_vertices(body);
    const Checkpoint back = decode_checkpoint(encode_checkpoint(ck));
    EXPECT_EQ(back.net.parameter_count(), 0u);
    EXPECT_EQ(encode_checkpoint(back), encode_checkpoint(ck));
}

TEST(CheckpointIo, EveryTruncationIsCorruptSection) {
    const SkinnedBody body = make_fixture_body();
    const auto bytes = encode_checkpoint(sample_checkpoint(9, body));
    for (std::size_t len = kCheckpointMagic.size(); len < bytes.size(); len += 1 + len / 64) {
        const std::span<const unsigned char> cut(bytes.data(), len);
        EXPECT_EQ(code_of([&] { decode_checkpoint(cut); }), ErrorCode::CorruptSection) << "length " << len;
    }
}

TEST(CheckpointIo, FlippedByteFailsCrc) {
    const SkinnedBody body = make_fixture_body();
    auto bytes = encode_checkpoint(sample_checkpoint(10, body));
    bytes[bytes.size() / 2] ^= 0x40;
    std::string msg;
    EXPECT_EQ(code_of([&] { decode_checkpoint(bytes); }, &msg), ErrorCode::CorruptSection);
    EXPECT_NE(msg.find("CRC"), std::string::npos);
}

TEST(CheckpointIo, VersionAndMagicAreChecked) {
    const SkinnedBody body = make_fixture_body();
    auto bytes = encode_checkpoint(sample_checkpoint(11, body));
    auto bumped = bytes;
    bumped[5] = 2;
    EXPECT_EQ(code_of([&] { decode_checkpoint(bumped); }), ErrorCode::VersionMismatch);
    auto wrong = bytes;
    wrong[0] = 'X';
    EXPECT_EQ(code_of([&] { decode_checkpoint(wrong); }), ErrorCode::ParseError);
}

TEST(CheckpointIo, SmplSizedCheckpointFitsInFiveMegabytes) {
    const SkinnedBody body = make_smpl_sized_body();
    Checkpoint ck;
    ck.cloud = init_from_vertices(body, 3);
    ASSERT_EQ(ck.cloud.size(), 6890u);
    NetConfig nc;
    nc.pose_input_dim = 3 * body.joint_count() + 10;
    ck.net = RefinementNet(nc);
    const auto bytes = encode_checkpoint(ck);
    // Field widths: 8·(3+4+3+1+48) + 8 binding + sparse weights per Gaussian, 8 per net parameter.
    std::size_t nz = 0;
    for (double w : ck.cloud.weights) nz += w != 0.0;
    const std::size_t expected_payload = 6890 * (8 * 59 + 8 + 1) + nz * 10 + 8 * ck.net.parameter_count();
    EXPECT_GE(bytes.size(), expected_payload);
    EXPECT_LT(bytes.size(), expected_payload + 4096);
    EXPECT_LE(bytes.size(), 5u * 1024 * 1024);
    std::cout << "6890-Gaussian checkpoint: " << bytes.size() << " bytes, net parameters " << ck.net.parameter_count() << "\n";
}

namespace {

const fs::path kSource = GAVATAR_SOURCE_DIR;

std::map<fs::path, std::vector<unsigned char>> snapshot(const fs::path& dir) {
    std::map<fs::path, std::vector<unsigned char>> out;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file()) out[e.path()] = read_file_bytes(e.path());
    return out;
}

} // namespace

TEST(DatasetIo, BundledEightFrameDataset) {
    const fs::path manifest = kSource / "data" / "synthetic8" / "manifest.json";
    const auto before = snapshot(manifest.parent_path());
    const Dataset ds = load_dataset(manifest);
    EXPECT_EQ(ds.size(), 8u);
    EXPECT_EQ(ds.cameras.size(), 1u);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const TrainSample s = ds.sample(i);
        EXPECT_EQ(s.image.width, ds.cameras.begin()->second.width);
        EXPECT_EQ(s.mask.size(), s.image.pixel_count());
        const TrainSample again = ds.sample(i);
        EXPECT_EQ(again.image.data, s.image.data);
    }
    EXPECT_EQ(snapshot(manifest.parent_path()), before);
}

TEST(DatasetIo, BrokenManifestCorpus) {
    const std::map<std::string, ErrorCode> expected = {
        {"bad_json.json", ErrorCode::ParseError},
        {"no_version.json", ErrorCode::SchemaVersionMismatch},
        {"future_version.json", ErrorCode::SchemaVersionMismatch},
        {"missing_body.json", ErrorCode::MissingFile},
        {"missing_image.json", ErrorCode::MissingFile},
        {"missing_mask.json", ErrorCode::MissingFile},
        {"no_cameras.json", ErrorCode::ValidationError},
        {"unknown_camera.json", ErrorCode::ValidationError},
        {"duplicate_index.json", ErrorCode::ValidationError},
        {"joint_count.json", ErrorCode::JointCountMismatch},
        {"bad_rotation.json", ErrorCode::NotARotation},
        {"size_mismatch.json", ErrorCode::ShapeMismatch},
    };
    const fs::path dir = kSource / "tests" / "data" / "broken";
    std::size_t seen = 0;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.path().extension() != ".json") continue;
        const auto it = expected.find(e.path().filename().string());
        ASSERT_NE(it, expected.end()) << "unlisted fixture " << e.path();
        std::string msg;
        EXPECT_EQ(code_of([&] { load_dataset(e.path()); }, &msg), it->second) << e.path() << ": " << msg;
        ++seen;
    }
    EXPECT_EQ(seen, 12u);
}

TEST(DatasetIo, MissingImageIsNamed) {
    std::string msg;
    EXPECT_EQ(code_of([&] { load_dataset(kSource / "tests" / "data" / "broken" / "missing_image.json"); }, &msg),
              ErrorCode::MissingFile);
    EXPECT_NE(msg.find("absent_0003.png"), std::string::npos) << msg;
}

TEST(DatasetIo, NonBinaryMaskIsRejectedOnSampleLoad) {
    const fs::path dir = scratch("nonbinary");
    SyntheticSpec spec;
    spec.frames = 1;
    spec.width = spec.height = 16;
    const auto data = make_synthetic(spec);
    const auto manifest = write_synthetic(data, dir);
    Image8 m{16, 16, 1, std::vector<std::uint8_t>(256, 128)};
    write_png(m, dir / "masks" / "0000.png");
    const Dataset ds = load_dataset(manifest);
    EXPECT_EQ(code_of([&] { ds.sample(0); }), ErrorCode::ValidationError);
}

TEST(Synthetic, OrbitDatasetReRendersBitExactly) {
    SyntheticSpec spec;  // 60-frame orbit of the tube avatar
    const auto data = make_synthetic(spec);
    ASSERT_EQ(data.samples.size(), 60u);
    EXPECT_EQ(data.truth.cloud.size(), 502u);
    const fs::path dir = scratch("orbit");
    const auto manifest = write_synthetic(data, dir);
    const Dataset ds = load_dataset(manifest);
    ASSERT_EQ(ds.size(), 60u);
    const Checkpoint truth = load_checkpoint(dir / "truth.gavc");
    std::size_t holdout = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const TrainSample s = ds.sample(i);
        Framebuffer fb = render(truth.cloud, ds.body, s.pose, &truth.net, s.time(), s.camera, ds.background);
        apply_mask(fb.color, s.mask, ds.background);
        Image img(fb.width, fb.height);
        img.data = fb.color;
        const Image8 disk = read_png(ds.frames[i].image);
        EXPECT_EQ(quantize(img).data, disk.data) << "frame " << i;
        std::size_t fg = 0;
        for (auto m : s.mask) fg += m;
        EXPECT_GT(fg, 50u);
        holdout += ds.frames[i].holdout;
    }
    EXPECT_EQ(holdout, 6u);
}

TEST(Synthetic, ElbowSwingChangesSilhouettes) {
    SyntheticSpec spec;
    spec.frames = 10;
    spec.orbit_camera = false;
    spec.script = PoseScript::ElbowRamp;
    spec.swing_deg = 90;
    const auto data = make_synthetic(spec);
    for (std::size_t f = 1; f < data.samples.size(); ++f) {
        EXPECT_NE(data.samples[f].mask, data.samples[f - 1].mask) << f;
        EXPECT_GT(max_abs_diff_span(data.samples[f].image.data, data.samples[f - 1].image.data), 0.1);
    }
}

TEST(Synthetic, TurntableSelectsQuarterTurns) {
    SyntheticSpec spec;
    spec.frames = 100;
    spec.width = spec.height = 16;
    spec.orbit_camera = false;
    spec.script = PoseScript::Turntable;
    const auto data = make_synthetic(spec);
    const fs::path dir = scratch("turntable");
    const Dataset ds = load_dataset(write_synthetic(data, dir));
    std::vector<Pose> poses;
    for (const auto& f : ds.frames) poses.push_back(f.pose);
    const auto in = selection_inputs(ds.body, poses);
    const auto sel = select_frames(in.rotations, in.joints, in.canonical);
    for (double a : sel.pairwise_deg) EXPECT_GT(a, 80.0);
    const double chained[3] = {relative_angle_deg(in.rotations[static_cast<std::size_t>(sel.indices[0])], in.rotations[static_cast<std::size_t>(sel.indices[1])]),
                               relative_angle_deg(in.rotations[static_cast<std::size_t>(sel.indices[1])], in.rotations[static_cast<std::size_t>(sel.indices[2])]),
                               relative_angle_deg(in.rotations[static_cast<std::size_t>(sel.indices[2])], in.rotations[static_cast<std::size_t>(sel.indices[3])])};
    for (double a : chained) EXPECT_NEAR(a, 90.0, 10.0 + 1e-9);
    // Exhaustive oracle: constant pose, so every valid quadruple ties on distance and the
    // lexicographically first valid one wins.
    const int n = static_cast<int>(poses.size());
    auto ok_chain = [&](int a, int b) {
        const double d = relative_angle_deg(in.rotations[static_cast<std::size_t>(a)], in.rotations[static_cast<std::size_t>(b)]);
        return d >= 80.0 && d <= 100.0;
    };
    auto ok_far = [&](int a, int b) {
        return relative_angle_deg(in.rotations[static_cast<std::size_t>(a)], in.rotations[static_cast<std::size_t>(b)]) > 80.0;
    };
    std::array<int, 4> best{-1, -1, -1, -1};
    double best_d = std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            if (!ok_chain(i, j)) continue;
            for (int k = j + 1; k < n; ++k) {
                if (!ok_chain(j, k) || !ok_far(i, k)) continue;
                for (int l = k + 1; l < n; ++l) {
                    if (!ok_chain(k, l) || !ok_far(i, l) || !ok_far(j, l)) continue;
                    double d = 0;
                    for (int q : {i, j, k, l}) d += pose_distance(in.joints[static_cast<std::size_t>(q)], in.canonical);
                    if (d < best_d) {
                        best_d = d;
                        best = {i, j, k, l};
                    }
                }
            }
        }
    for (int q = 0; q < 4; ++q) EXPECT_EQ(sel.indices[static_cast<std::size_t>(q)], best[static_cast<std::size_t>(q)]);
}
