// Copyright Contributors to the gavatar project
// SPDX-License-Identifier: Apache-2.0

#include "gavatar/trainer.hpp"
#include "scenes.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace gav;
using namespace gav::testing;

namespace {

std::vector<double> random_image(Rng& rng, int w, int h, double lo = 0.0, double hi = 1.0) {
    std::vector<double> v(3 * static_cast<std::size_t>(w * h));
    for (double& x : v) x = rng.uniform(lo, hi);
    return v;
}

TrainSample make_sample(const GaussianCloud& truth, const SkinnedBody& body, const Pose& pose, const Camera& cam,
                        int frame, int total) {
    TrainSample s;
    s.frame = frame;
    s.total_frames = total;
    s.camera = cam;
    s.pose = pose;
    const Framebuffer fb = render(truth, body, pose, nullptr, s.time(), cam, {});
    s.image = Image(cam.width, cam.height);
    s.image.data = fb.color;
    return s;
}

} // namespace

TEST(Loss, IdenticalImagesGiveZeroLossAndGradient) {
    Rng rng(1);
    const auto img = random_image(rng, 12, 10);
    const auto r = loss_total(img, img, {}, 7);
    EXPECT_NEAR(r.total, 0.0, 1e-14);
    for (double g : r.grad) EXPECT_NEAR(g, 0.0, 1e-14);
}

TEST(Loss, PureL1OffsetIsLambdaTimesOffset) {
    std::vector<double> gt(3 * 64, 0.0), pred(3 * 64, 0.1);
    const auto r = loss_total(pred, gt, {0.8, 0.0}, 3);
    EXPECT_DOUBLE_EQ(r.total, 0.1 * 0.8);
    EXPECT_DOUBLE_EQ(r.l1, 0.1);
}

TEST(Loss, ShapeMismatchIsReported) {
    std::vector<double> a(12), b(15);
    try {
        loss_total(a, b, {}, 0);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::ShapeMismatch);
    }
}

TEST(Loss, FixedSeedIsReproducible) {
    Rng rng(2);
    const auto a = random_image(rng, 8, 8), b = random_image(rng, 8, 8);
    const auto r1 = loss_total(a, b, {}, 99), r2 = loss_total(a, b, {}, 99);
    EXPECT_EQ(r1.total, r2.total);
    EXPECT_EQ(r1.grad, r2.grad);
    const auto r3 = loss_total(a, b, {}, 100);
    EXPECT_NE(r1.s3im, r3.s3im);
}

TEST(Loss, GradientMatchesFiniteDifferencesOnSmallImage) {
    Rng rng(3);
    const auto gt = random_image(rng, 8, 8);
    auto pred = random_image(rng, 8, 8);
    const LossWeights lw{0.8, 0.2};
    const std::uint64_t seed = 5;
    const auto r = loss_total(pred, gt, lw, seed);
    const double h = 1e-6;
    double worst = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double keep = pred[i];
        pred[i] = keep + h;
        const double up = loss_total(pred, gt, lw, seed).total;
        pred[i] = keep - h;
        const double dn = loss_total(pred, gt, lw, seed).total;
        pred[i] = keep;
        worst = std::max(worst, rel_error(r.grad[i], (up - dn) / (2 * h)));
    }
    EXPECT_LE(worst, 1e-4);
}

TEST(Loss, S3imGradientWithoutReplacementSampling) {
    // 80×80 has more pixels than the 4096 samples, so indices are drawn without replacement.
    Rng rng(4);
    const int w = 80, h = 80;
    const auto gt = random_image(rng, w, h);
    auto pred = gt;
    for (double& v : pred) v = std::clamp(v + rng.uniform(-0.1, 0.1), 0.0, 1.0);
    std::vector<double> grad(pred.size(), 0.0);
    const double base = s3im_loss(pred, gt, 11, {}, grad);
    EXPECT_GT(base, 0.0);
    EXPECT_LT(base, 1.0);
    const double step = 1e-4;  // per-entry gradients are ~1e-6, so a larger step keeps FD noise down
    for (int t = 0; t < 20; ++t) {
        const auto i = static_cast<std::size_t>(rng.integer(0, static_cast<int>(pred.size()) - 1));
        const double keep = pred[i];
        pred[i] = keep + step;
        const double up = s3im_loss(pred, gt, 11);
        pred[i] = keep - step;
        const double dn = s3im_loss(pred, gt, 11);
        pred[i] = keep;
        EXPECT_LE(rel_error(grad[i], (up - dn) / (2 * step), 1e-7), 1e-4) << "entry " << i;
    }
}

TEST(Metrics, PsnrSentinelAndTwentyDecibels) {
    Rng rng(5);
    const auto a = random_image(rng, 9, 7, 0.2, 0.8);
    EXPECT_TRUE(std::isinf(psnr(a, a)));
    EXPECT_EQ(format_psnr(psnr(a, a)), "inf");
    std::vector<double> b = a;
    for (double& v : b) v += 0.1;
    EXPECT_NEAR(mse(a, b), 0.01, 1e-15);
    EXPECT_NEAR(psnr(a, b), 20.0, 1e-10);
}

TEST(Metrics, SsimIdenticalIsOne) {
    Rng rng(6);
    const auto a = random_image(rng, 24, 20);
    EXPECT_NEAR(ssim(a, a, 24, 20), 1.0, 1e-12);
}

TEST(Metrics, SsimOfConstantImagesMatchesClosedForm) {
    const int w = 16, h = 16;
    std::vector<double> a(3 * w * h, 0.3), b(3 * w * h, 0.6);
    const double expected = (2 * 0.3 * 0.6 + kSsimC1) / (0.3 * 0.3 + 0.6 * 0.6 + kSsimC1);
    EXPECT_NEAR(ssim(a, b, w, h), expected, 1e-12);
}

TEST(Metrics, SsimDecreasesAsNoiseDoubles) {
    Rng rng(7);
    const int w = 32, h = 32;
    auto gt = random_image(rng, w, h, 0.2, 0.8);
    // Smooth the ground truth so it has structure at the window scale.
    for (int pass = 0; pass < 2; ++pass)
        for (std::size_t i = 3; i + 3 < gt.size(); ++i) gt[i] = 0.5 * (gt[i - 3] + gt[i + 3]);
    std::vector<double> prev_noise(gt.size());
    for (double& v : prev_noise) v = rng.uniform(-1, 1);
    double last = 1.0;
    for (double amp : {0.05, 0.1, 0.2}) {
        std::vector<double> noisy = gt;
        for (std::size_t i = 0; i < gt.size(); ++i) noisy[i] += amp * prev_noise[i];
        const double s = ssim(gt, noisy, w, h);
        EXPECT_GT(s, 0.0);
        EXPECT_LT(s, last);
        last = s;
    }
}

TEST(Adam, ZeroGradientLeavesParamsAndDecaysMoments) {
    AdamState st;
    st.m = {1.0, -2.0};
    st.v = {4.0, 1.0};
    std::vector<double> p{0.5, -0.25}, g{0.0, 0.0};
    adam_step(p, g, st, 0.1);
    EXPECT_EQ(p[0], 0.5 - 0.1 * (0.9 / 0.1) / (std::sqrt(0.999 * 4.0 / 0.001) + 1e-8));
    // With zero moments the update vanishes entirely.
    AdamState fresh;
    std::vector<double> q{0.5, -0.25};
    adam_step(q, g, fresh, 0.1);
    EXPECT_EQ(q, (std::vector<double>{0.5, -0.25}));
    EXPECT_DOUBLE_EQ(st.m[0], 0.9);
    EXPECT_DOUBLE_EQ(st.v[1], 0.999);
    EXPECT_EQ(st.step, 1);
}

TEST(Adam, FirstStepMovesByLearningRate) {
    AdamState st;
    std::vector<double> p{0.0};
    const std::vector<double> g{1.0};
    adam_step(p, g, st, 0.1);
    EXPECT_NEAR(p[0], -0.1, 1e-6);
}

TEST(Adam, QuadraticBowlConverges) {
    AdamState st;
    std::vector<double> x{5.0};
    int steps = 0;
    while (std::abs(x[0]) >= 1e-3 && steps < 2000) {
        const std::vector<double> g{2 * x[0]};
        adam_step(x, g, st, 0.05);
        ++steps;
    }
    EXPECT_LT(std::abs(x[0]), 1e-3);
    EXPECT_LE(steps, 2000);
}

TEST(Adam, NonFiniteGradientNamesGroup) {
    AdamState st;
    std::vector<double> p{1.0, 2.0};
    const std::vector<double> g{0.0, std::nan("")};
    try {
        adam_step(p, g, st, 0.1, "scales");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::NonFiniteGradient);
        EXPECT_NE(std::string(e.what()).find("scales"), std::string::npos);
    }
}

namespace {

struct Scene {
    SkinnedBody body = make_fixture_body();
    GaussianCloud cloud;
    Scene(int n, int sh_degree, std::uint64_t seed = 10) {
        Rng rng(seed);
        cloud = small_avatar(rng, body, n, 0);
        cloud.sh_degree = sh_degree;
        for (int i = 0; i < n; ++i) cloud.scales[static_cast<std::size_t>(i)] = {0.002, 0.002, 0.002};
    }
};

void expect_cloud_eq(const GaussianCloud& a, const GaussianCloud& b) {
    ASSERT_EQ(a.size(), b.size());
    EXPECT_EQ(a.sh_degree, b.sh_degree);
    EXPECT_EQ(a.bindings, b.bindings);
    EXPECT_EQ(a.weights, b.weights);
    EXPECT_EQ(a.opacity_logits, b.opacity_logits);
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a.positions[i], b.positions[i]);
        EXPECT_EQ(a.scales[i], b.scales[i]);
        EXPECT_TRUE(a.rotations[i].w == b.rotations[i].w && a.rotations[i].x == b.rotations[i].x &&
                    a.rotations[i].y == b.rotations[i].y && a.rotations[i].z == b.rotations[i].z);
        EXPECT_EQ(a.sh[i], b.sh[i]);
    }
}

} // namespace

TEST(Housekeeping, ShDegreeIncrementsAtInterval) {
    Scene sc(10, 0);
    Trainer t(sc.body, sc.cloud, RefinementNet(), TrainConfig{});
    t.housekeeping(499);
    EXPECT_EQ(t.cloud().sh_degree, 0);
    t.housekeeping(500);
    EXPECT_EQ(t.cloud().sh_degree, 1);
    for (std::size_t i = 0; i < t.cloud().size(); ++i)
        for (int k = 1; k < 4; ++k) EXPECT_EQ(t.cloud().sh[i][static_cast<std::size_t>(k)], Vec3{});
    for (int it = 501; it <= 4000; ++it) {
        const int before = t.cloud().sh_degree;
        t.housekeeping(it);
        EXPECT_GE(t.cloud().sh_degree, before);
        EXPECT_LE(t.cloud().sh_degree, 3);
    }
    EXPECT_EQ(t.cloud().sh_degree, 3);
}

TEST(Housekeeping, OpacityResetCapsEveryOpacity) {
    Scene sc(10, 0);
    TrainConfig cfg;
    cfg.densify.enabled = false;
    Trainer t(sc.body, sc.cloud, RefinementNet(), cfg);
    t.cloud().opacity_logits[3] = logit(0.004);
    t.housekeeping(1499);
    EXPECT_GT(t.cloud().opacity(0), 0.01);
    t.housekeeping(1500);
    for (std::size_t i = 0; i < t.cloud().size(); ++i) EXPECT_LE(t.cloud().opacity(i), 0.01);
    EXPECT_NEAR(t.cloud().opacity(3), 0.004, 1e-15);
}

TEST(Housekeeping, NothingAboveThresholdsLeavesCloudUnchanged) {
    Scene sc(10, 0);
    Trainer t(sc.body, sc.cloud, RefinementNet(), TrainConfig{});
    t.housekeeping(600);  // densification iteration with zero accumulated gradient
    expect_cloud_eq(t.cloud(), sc.cloud);
}

TEST(Housekeeping, CloneSplitAndPrune) {
    Scene sc(10, 0);
    sc.cloud.scales[1] = {0.05, 0.02, 0.03};
    sc.cloud.opacity_logits[2] = logit(0.001);
    Trainer t(sc.body, sc.cloud, RefinementNet(), TrainConfig{});
    ASSERT_LT(0.002, 0.01 * t.extent());
    ASSERT_GT(0.05, 0.01 * t.extent());
    t.densify_grad_sum()[0] = 1.0;
    t.densify_visible()[0] = 1;
    t.densify_grad_sum()[1] = 1.0;
    t.densify_visible()[1] = 1;
    const auto rep = t.densify_and_prune();
    EXPECT_EQ(rep.cloned, 1u);
    EXPECT_EQ(rep.split, 1u);
    EXPECT_EQ(rep.pruned, 1u);
    const auto& c = t.cloud();
    // 10 + 1 clone + 1 (split replaces one by two) - 1 pruned.
    ASSERT_EQ(c.size(), 11u);
    EXPECT_EQ(c.positions[0], sc.cloud.positions[0]);
    EXPECT_EQ(c.positions[1], sc.cloud.positions[0]);
    for (std::size_t j : {2u, 3u}) {
        EXPECT_NEAR(c.scales[j].x, 0.05 / 1.6, 1e-15);
        EXPECT_NEAR(c.scales[j].y, 0.02 / 1.6, 1e-15);
        const auto b = bind_nearest(std::span<const Vec3>(&c.positions[j], 1), sc.body)[0];
        EXPECT_EQ(c.bindings[j], b);
        const auto row = sc.body.weight_row(b.vertex);
        for (int k = 0; k < c.joint_count; ++k) EXPECT_EQ(c.weight_row(j)[static_cast<std::size_t>(k)], row[static_cast<std::size_t>(k)]);
    }
    EXPECT_EQ(c.positions[4], sc.cloud.positions[3]);
    validate_cloud(c, &sc.body);
}

TEST(Housekeeping, CountNeverExceedsLimit) {
    Scene sc(10, 0);
    TrainConfig cfg;
    cfg.densify.max_gaussians = 11;
    Trainer t(sc.body, sc.cloud, RefinementNet(), cfg);
    for (std::size_t i = 0; i < 10; ++i) {
        t.densify_grad_sum()[i] = 1.0 + static_cast<double>(i);
        t.densify_visible()[i] = 1;
    }
    t.densify_and_prune();
    EXPECT_EQ(t.cloud().size(), 11u);
    // The one clone goes to the largest mean gradient.
    EXPECT_EQ(t.cloud().positions[9], t.cloud().positions[10]);

    cfg.densify.max_gaussians = 5;
    try {
        Trainer over(sc.body, sc.cloud, RefinementNet(), cfg);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::MaxGaussiansExceeded);
    }
}

namespace {

struct FitFixture {
    SkinnedBody body = make_fixture_body();
    GaussianCloud truth, init;
    std::vector<TrainSample> samples;
    RefinementNet net;

    explicit FitFixture(int n, int frames = 4) {
        Rng rng(20);
        truth = small_avatar(rng, body, n, 0);
        init = truth;
        for (std::size_t i = 0; i < init.size(); ++i) {
            init.sh[i][0] = {sh::dc_from_color(0.5), sh::dc_from_color(0.5), sh::dc_from_color(0.5)};
            init.opacity_logits[i] = logit(0.2);
            init.scales[i] = init.scales[i] * 0.7;
        }
        NetConfig nc;
        nc.pose_input_dim = 3 * body.joint_count();
        nc.hidden = 8;
        net = RefinementNet(nc);
        for (int f = 0; f < frames; ++f) {
            Pose p = Pose::rest(body.joint_count());
            p.joint_rotations[1] = {0.0, 0.0, 0.2 * f};
            p.root_rotation = rot_y(0.5 * f);
            samples.push_back(make_sample(truth, body, p, test_camera(16, 16, {0.0, 0.5, 2.0}), f, frames));
        }
    }
};

} // namespace

TEST(Train, ZeroIterationsReturnsInitialization) {
    FitFixture fx(6);
    TrainConfig cfg;
    cfg.iterations = 0;
    Trainer t(fx.body, fx.init, fx.net, cfg);
    std::ostringstream log;
    const Checkpoint ck = t.train(fx.samples, {}, &log);
    EXPECT_EQ(log.str(), "iteration,wall_ms,loss,l1,s3im,psnr_holdout,n_gaussians\n");
    expect_cloud_eq(ck.cloud, fx.init);
    EXPECT_TRUE(ck.net == fx.net);
    EXPECT_EQ(ck.iteration, 0);
}

TEST(Train, ZeroLearningRatesLeaveStateBitIdentical) {
    FitFixture fx(6);
    TrainConfig cfg;
    cfg.lr = {0, 0, 0, 0, 0, 0, 0};
    cfg.iterations = 1;
    Trainer t(fx.body, fx.init, fx.net, cfg);
    const Checkpoint ck = t.train(fx.samples);
    expect_cloud_eq(ck.cloud, fx.init);
    EXPECT_TRUE(ck.net == fx.net);
}

TEST(Train, SingleGaussianLossTrendsDown) {
    FitFixture fx(1, 1);
    TrainConfig cfg;
    cfg.iterations = 200;
    cfg.log_interval = 1;
    Trainer t(fx.body, fx.init, fx.net, cfg);
    std::vector<double> losses;
    for (int it = 1; it <= cfg.iterations; ++it) {
        losses.push_back(t.step(fx.samples[0]).loss);
        t.housekeeping(it);
        const auto& c = t.cloud();
        for (std::size_t i = 0; i < c.size(); ++i) {
            EXPECT_GT(c.opacity(i), 0.0);
            EXPECT_LT(c.opacity(i), 1.0);
            EXPECT_GE(std::min({c.scales[i].x, c.scales[i].y, c.scales[i].z}), kScaleFloor);
            const Mat3 s = covariance(c.rotations[i], c.scales[i]);
            EXPECT_GT(s(0, 0), 0.0);
            EXPECT_GT(s(0, 0) * s(1, 1) - s(0, 1) * s(1, 0), 0.0);
            EXPECT_GT(s.determinant(), 0.0);
        }
    }
    for (int b = 1; b < 4; ++b) {
        double prev = 0, cur = 0;
        for (int k = 0; k < 50; ++k) {
            prev += losses[static_cast<std::size_t>((b - 1) * 50 + k)];
            cur += losses[static_cast<std::size_t>(b * 50 + k)];
        }
        EXPECT_LT(cur, prev) << "window " << b;
    }
    EXPECT_LT(losses.back(), 0.5 * losses.front());
}

TEST(Train, FixedSeedRunsAreIdentical) {
    FitFixture fx(6);
    TrainConfig cfg;
    cfg.iterations = 30;
    cfg.threads = 1;
    cfg.seed = 3;
    Trainer a(fx.body, fx.init, fx.net, cfg), b(fx.body, fx.init, fx.net, cfg);
    const Checkpoint ca = a.train(fx.samples), cb = b.train(fx.samples);
    EXPECT_EQ(a.last_step().loss, b.last_step().loss);
    expect_cloud_eq(ca.cloud, cb.cloud);
    EXPECT_TRUE(ca.net == cb.net);
    EXPECT_EQ(ca.rng_state, cb.rng_state);
}

TEST(Train, MetricsLogHasRowsAtInterval) {
    FitFixture fx(6);
    TrainConfig cfg;
    cfg.iterations = 25;
    cfg.log_interval = 10;
    Trainer t(fx.body, fx.init, fx.net, cfg);
    std::ostringstream log;
    t.train(fx.samples, std::span<const TrainSample>(fx.samples).first(1), &log);
    std::istringstream in(log.str());
    std::string line;
    std::vector<std::string> rows;
    while (std::getline(in, line)) rows.push_back(line);
    ASSERT_EQ(rows.size(), 4u);
    EXPECT_EQ(rows[1].substr(0, 3), "10,");
    EXPECT_EQ(rows[3].substr(0, 3), "25,");
    EXPECT_EQ(std::count(rows[2].begin(), rows[2].end(), ','), 6);
}

TEST(Train, NonFiniteLossNamesFrame) {
    FitFixture fx(6, 1);
    fx.samples[0].frame = 0;
    fx.samples[0].image.data[5] = std::nan("");
    TrainConfig cfg;
    cfg.iterations = 1;
    Trainer t(fx.body, fx.init, fx.net, cfg);
    try {
        t.train(fx.samples);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::NonFiniteLoss);
        EXPECT_NE(std::string(e.what()).find("frame 0"), std::string::npos);
    }
}

TEST(Train, MaskedPixelsCarryNoGradient) {
    FitFixture fx(6, 1);
    auto s = fx.samples[0];
    s.mask.assign(s.image.pixel_count(), 0);
    TrainConfig cfg;
    cfg.iterations = 5;
    Trainer t(fx.body, fx.init, fx.net, cfg);
    std::vector<TrainSample> v{s};
    const Checkpoint ck = t.train(v);
    expect_cloud_eq(ck.cloud, fx.init);
}

TEST(Config, TextRoundTripAndPrecedence) {
    TrainConfig cfg;
    apply_config_text(cfg, "# comment\niterations = 300\n[lr]\nnet = 0.004\n[densify]\nenabled = false\n");
    EXPECT_EQ(cfg.iterations, 300);
    EXPECT_EQ(cfg.lr.net, 0.004);
    EXPECT_FALSE(cfg.densify.enabled);
    set_config_value(cfg, "lr.net", "0.001");  // command-line override applied last
    EXPECT_EQ(cfg.lr.net, 0.001);
    TrainConfig back;
    apply_config_text(back, to_config_text(cfg));
    EXPECT_EQ(to_config_text(back), to_config_text(cfg));
    EXPECT_EQ(back.lr.net, 0.001);
    EXPECT_EQ(back.iterations, 300);
}

TEST(Config, BadInputsAreRejected) {
    TrainConfig cfg;
    EXPECT_THROW(apply_config_text(cfg, "bogus = 1\n"), Error);
    EXPECT_THROW(apply_config_text(cfg, "iterations = many\n"), Error);
    EXPECT_THROW(apply_config_text(cfg, "iterations\n"), Error);
    TrainConfig bad;
    bad.loss = {0.0, 0.0};
    EXPECT_THROW(bad.validate(), Error);
    bad = {};
    bad.sh_interval = 0;
    EXPECT_THROW(bad.validate(), Error);
}
