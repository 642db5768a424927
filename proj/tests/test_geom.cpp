// Copyright Contributors to the gavatar project
// SPDX-License-Identifier: Apache-2.0

#include "gavatar/encoding.hpp"
#include "gavatar/geom.hpp"
#include "gavatar/sh.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <numbers>

using namespace gav;
using gav::testing::Rng;

namespace {
constexpr double kHalfSqrt2 = 0.70710678118654752;
}

TEST(Quaternion, IdentityIsNeutral) {
    Rng rng(1);
    for (int i = 0; i < 20; ++i) {
        const Quat q = rng.unit_quat();
        EXPECT_LT(gav::testing::quat_sign_distance(quat_multiply(Quat::identity(), q), q), 1e-15);
    }
}

TEST(Quaternion, TwoQuarterTurnsMakeAHalfTurn) {
    const Quat q{kHalfSqrt2, 0, 0, kHalfSqrt2};
    const Quat r = quat_multiply(q, q);
    EXPECT_NEAR(r.w, 0.0, 1e-15);
    EXPECT_NEAR(r.x, 0.0, 1e-15);
    EXPECT_NEAR(r.y, 0.0, 1e-15);
    EXPECT_NEAR(r.z, 1.0, 1e-15);
}

TEST(Quaternion, ProductMatchesMatrixProduct) {
    Rng rng(2);
    for (int i = 0; i < 100; ++i) {
        const Quat a = rng.unit_quat(), b = rng.unit_quat();
        const Mat3 oracle = quat_to_rotmat(a) * quat_to_rotmat(b);
        EXPECT_LT(max_abs_diff(quat_to_rotmat(quat_multiply(a, b)), oracle), 1e-9);
    }
}

TEST(Quaternion, ProductIsAssociative) {
    Rng rng(3);
    for (int i = 0; i < 100; ++i) {
        const Quat a = rng.unit_quat(), b = rng.unit_quat(), c = rng.unit_quat();
        EXPECT_LT(gav::testing::quat_sign_distance(quat_multiply(quat_multiply(a, b), c),
                                                   quat_multiply(a, quat_multiply(b, c))),
                  1e-9);
    }
}

TEST(Quaternion, ProductBackwardMatchesFiniteDifferences) {
    Rng rng(4);
    const Quat a{0.3, -0.2, 0.7, 0.1}, b{-0.4, 0.5, 0.2, 0.9};
    const Quat g{0.2, -1.0, 0.4, 0.3};
    const auto grads = hamilton_backward(a, b, g);
    const double h = 1e-6;
    for (int k = 0; k < 4; ++k) {
        Quat ap = a, am = a, bp = b, bm = b;
        ap[k] += h;
        am[k] -= h;
        bp[k] += h;
        bm[k] -= h;
        const double fa = (dot(g, hamilton(ap, b)) - dot(g, hamilton(am, b))) / (2 * h);
        const double fb = (dot(g, hamilton(a, bp)) - dot(g, hamilton(a, bm))) / (2 * h);
        EXPECT_NEAR(grads.da[k], fa, 1e-8);
        EXPECT_NEAR(grads.db[k], fb, 1e-8);
    }
}

TEST(RotationMatrix, FromQuaternionClosedForms) {
    EXPECT_EQ(quat_to_rotmat(Quat::identity()), Mat3::identity());
    const Mat3 flip = quat_to_rotmat({0, 1, 0, 0});
    EXPECT_LT(max_abs_diff(flip, Mat3::diagonal({1, -1, -1})), 1e-15);
}

TEST(RotationMatrix, QuaternionRoundTrip) {
    Rng rng(5);
    for (int i = 0; i < 200; ++i) {
        const Quat q = rng.unit_quat();
        EXPECT_LT(gav::testing::quat_sign_distance(rotmat_to_quat(quat_to_rotmat(q)), q), 1e-9);
    }
}

TEST(RotationMatrix, ToQuaternionClosedForms) {
    const Quat i = rotmat_to_quat(Mat3::identity());
    EXPECT_EQ(i, Quat::identity());
    const Quat z = rotmat_to_quat(rot_z(std::numbers::pi / 2));
    EXPECT_NEAR(z.w, kHalfSqrt2, 1e-12);
    EXPECT_NEAR(z.x, 0.0, 1e-12);
    EXPECT_NEAR(z.y, 0.0, 1e-12);
    EXPECT_NEAR(z.z, kHalfSqrt2, 1e-12);
}

TEST(RotationMatrix, ExtractionCanonicalizesSign) {
    Rng rng(6);
    for (int i = 0; i < 100; ++i) EXPECT_GE(rotmat_to_quat(rng.rotation()).w, 0.0);
}

TEST(RotationMatrix, ShepperdBranchesNearHalfTurn) {
    const Vec3 axes[] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, 1, 0}, {0, 1, 1}, {1, 0, 1}, {1, 1, 1}};
    for (const auto& axis : axes) {
        for (double delta : {0.0, 1e-9, 1e-6, 1e-3, -1e-6, -1e-3}) {
            const Quat q = quat_from_axis_angle(axis, std::numbers::pi - delta);
            const Quat back = rotmat_to_quat(quat_to_rotmat(q));
            EXPECT_LT(gav::testing::quat_sign_distance(back, q), 1e-7) << axis << " delta " << delta;
        }
    }
}

TEST(RotationMatrix, RejectsNonRotations) {
    EXPECT_THROW(rotmat_to_quat(Mat3::diagonal({1, 1, 2})), Error);
    EXPECT_THROW(rotmat_to_quat(Mat3::diagonal({1, 1, -1})), Error);
    try {
        rotmat_to_quat(Mat3::diagonal({1, 1, 2}));
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::NotARotation);
    }
}

TEST(RotationMatrix, ConstructorsYieldProperRotations) {
    Rng rng(7);
    for (int i = 0; i < 100; ++i) {
        const Mat3 a = quat_to_rotmat(rng.unit_quat());
        const Mat3 b = axis_angle_to_rotmat(rng.vec3(-3, 3));
        const Mat3 c = rot_x(rng.uniform(-7, 7)) * rot_y(rng.uniform(-7, 7)) * rot_z(rng.uniform(-7, 7));
        for (const auto& m : {a, b, c}) {
            EXPECT_LT(max_abs_diff(m.transposed() * m, Mat3::identity()), 1e-9);
            EXPECT_NEAR(m.determinant(), 1.0, 1e-9);
        }
    }
}

TEST(RotationMatrix, AxisAngleRoundTrip) {
    Rng rng(8);
    for (int i = 0; i < 100; ++i) {
        const Vec3 aa = rng.unit_vec3() * rng.uniform(0.0, 3.0);
        EXPECT_LT(gav::testing::max_abs(rotmat_to_axis_angle(axis_angle_to_rotmat(aa)), aa), 1e-9);
        EXPECT_NEAR(rotation_angle(axis_angle_to_rotmat(aa)), norm(aa), 1e-9);
    }
}

TEST(RotationMatrix, QuatToRotmatBackwardMatchesFiniteDifferences) {
    const Quat q = Quat{0.4, -0.3, 0.8, 0.2};
    Mat3 g;
    for (int i = 0; i < 9; ++i) g.m[static_cast<std::size_t>(i)] = 0.1 * (i + 1) * (i % 2 ? -1 : 1);
    auto f = [&](const Quat& p) {
        const Mat3 r = quat_to_rotmat(p);
        double s = 0;
        for (int i = 0; i < 9; ++i) s += r.m[static_cast<std::size_t>(i)] * g.m[static_cast<std::size_t>(i)];
        return s;
    };
    const Quat d = quat_to_rotmat_backward(q, g);
    for (int k = 0; k < 4; ++k) {
        Quat p = q, m = q;
        p[k] += 1e-6;
        m[k] -= 1e-6;
        EXPECT_NEAR(d[k], (f(p) - f(m)) / 2e-6, 1e-8);
    }
}

TEST(SphericalHarmonics, ZeroCoefficientsGiveMidGray) {
    const SHCoeffs c{};
    const Vec3 rgb = sh_eval(c, {0, 0, 1});
    EXPECT_EQ(rgb, (Vec3{0.5, 0.5, 0.5}));
}

TEST(SphericalHarmonics, DegreeZeroIsViewIndependent) {
    Rng rng(9);
    SHCoeffs c;
    c.degree = 3;
    c.coeffs[0] = {0.3, -0.4, 1.1};
    const Vec3 ref = sh_eval(c, {1, 0, 0});
    for (int i = 0; i < 100; ++i) EXPECT_EQ(sh_eval(c, rng.unit_vec3()), ref);
}

TEST(SphericalHarmonics, BandOneIsOdd) {
    Rng rng(10);
    std::array<Vec3, sh::kMaxCoeffs> c{};
    c[1] = {0.2, -0.1, 0.3};
    c[2] = {-0.25, 0.15, 0.05};
    c[3] = {0.1, 0.2, -0.3};
    for (int i = 0; i < 100; ++i) {
        const Vec3 d = rng.unit_vec3();
        const Vec3 a = sh_eval_detailed(c, 1, d).unclamped - Vec3{0.5, 0.5, 0.5};
        const Vec3 b = sh_eval_detailed(c, 1, -d).unclamped - Vec3{0.5, 0.5, 0.5};
        EXPECT_LT(gav::testing::max_abs(a, -b), 1e-15);
    }
}

TEST(SphericalHarmonics, LinearInCoefficientsBeforeClamp) {
    Rng rng(11);
    std::array<Vec3, sh::kMaxCoeffs> c{};
    for (auto& v : c) v = rng.vec3(-0.05, 0.05);
    for (int i = 0; i < 50; ++i) {
        const Vec3 d = rng.unit_vec3();
        const double alpha = rng.uniform(-2, 2);
        auto scaled = c;
        for (auto& v : scaled) v *= alpha;
        const Vec3 base = sh_eval_detailed(c, 3, d).unclamped - Vec3{0.5, 0.5, 0.5};
        const Vec3 s = sh_eval_detailed(scaled, 3, d).unclamped - Vec3{0.5, 0.5, 0.5};
        EXPECT_LT(gav::testing::max_abs(s, base * alpha), 1e-12);
    }
}

TEST(SphericalHarmonics, OutputIsClampedToUnitRange) {
    SHCoeffs c = SHCoeffs::flat({2.0, -1.0, 0.25});
    const Vec3 rgb = sh_eval(c, {0, 1, 0});
    EXPECT_EQ(rgb.x, 1.0);
    EXPECT_EQ(rgb.y, 0.0);
    EXPECT_NEAR(rgb.z, 0.25, 1e-15);
}

TEST(SphericalHarmonics, BasisGradientMatchesFiniteDifferences) {
    Rng rng(12);
    for (int trial = 0; trial < 10; ++trial) {
        const Vec3 d = rng.unit_vec3();
        const auto g = sh::basis_gradient(d, 3);
        for (int axis = 0; axis < 3; ++axis) {
            Vec3 p = d, m = d;
            p[axis] += 1e-6;
            m[axis] -= 1e-6;
            const auto yp = sh::basis(p, 3), ym = sh::basis(m, 3);
            for (int k = 0; k < sh::kMaxCoeffs; ++k)
                EXPECT_NEAR(g[static_cast<std::size_t>(k)][axis],
                            (yp[static_cast<std::size_t>(k)] - ym[static_cast<std::size_t>(k)]) / 2e-6, 1e-8);
        }
    }
}

TEST(SphericalHarmonics, BasisIsOrthonormalOnTheSphere) {
    // Monte Carlo over uniform directions: E[Y_i Y_j] * 4 pi = delta_ij.
    Rng rng(13);
    std::array<std::array<double, 16>, 16> acc{};
    const int n = 200000;
    for (int s = 0; s < n; ++s) {
        const auto y = sh::basis(rng.unit_vec3(), 3);
        for (int i = 0; i < 16; ++i)
            for (int j = 0; j < 16; ++j) acc[i][j] += y[i] * y[j];
    }
    for (int i = 0; i < 16; ++i)
        for (int j = 0; j < 16; ++j) EXPECT_NEAR(acc[i][j] * 4 * std::numbers::pi / n, i == j ? 1.0 : 0.0, 0.03);
}

TEST(SphericalHarmonics, FlatColorDcConvention) {
    EXPECT_NEAR(sh::dc_from_color(1.0), 1.7724538509055159, 1e-12);
    EXPECT_NEAR(sh::color_from_dc(sh::dc_from_color(0.3)), 0.3, 1e-15);
}

TEST(ShEval, ClampMaskKeepsBoundsActive) {
    std::array<Vec3, sh::kMaxCoeffs> c{};
    c[0] = {sh::dc_from_color(1.0), sh::dc_from_color(0.0), sh::dc_from_color(0.4)};
    const auto on_bounds = sh_eval_detailed(c, 0, {0, 0, 1});
    EXPECT_TRUE(on_bounds.active[0]);
    EXPECT_TRUE(on_bounds.active[1]);
    EXPECT_TRUE(on_bounds.active[2]);
    EXPECT_DOUBLE_EQ(on_bounds.rgb[0], 1.0);

    c[0] = {sh::dc_from_color(1.01), sh::dc_from_color(-0.01), sh::dc_from_color(0.4)};
    const auto outside = sh_eval_detailed(c, 0, {0, 0, 1});
    EXPECT_FALSE(outside.active[0]);
    EXPECT_FALSE(outside.active[1]);
    EXPECT_EQ(outside.rgb, (Vec3{1.0, 0.0, 0.4}));
}

TEST(ShRotateDir, ClosedForms) {
    const Vec3 d{0.6, 0.0, 0.8};
    EXPECT_EQ(sh_rotate_dir(Mat3::identity(), d), d);
    const Vec3 r = sh_rotate_dir(rot_z(std::numbers::pi / 2), {1, 0, 0});
    EXPECT_LT(gav::testing::max_abs(r, {0, -1, 0}), 1e-15);
}

TEST(ShRotateDir, PreservesLengthAndMatchesTransposeProduct) {
    Rng rng(14);
    for (int i = 0; i < 100; ++i) {
        const Mat3 r = rng.rotation();
        const Vec3 d = rng.unit_vec3();
        const Vec3 out = sh_rotate_dir(r, d);
        EXPECT_NEAR(norm(out), 1.0, 1e-12);
        const Vec3 oracle{r(0, 0) * d.x + r(1, 0) * d.y + r(2, 0) * d.z, r(0, 1) * d.x + r(1, 1) * d.y + r(2, 1) * d.z,
                          r(0, 2) * d.x + r(1, 2) * d.y + r(2, 2) * d.z};
        EXPECT_LT(gav::testing::max_abs(out, oracle), 1e-15);
    }
}

TEST(ShRotateDir, CompositionReversesOrder) {
    Rng rng(15);
    for (int i = 0; i < 100; ++i) {
        const Mat3 r1 = rng.rotation(), r2 = rng.rotation();
        const Vec3 d = rng.unit_vec3();
        EXPECT_LT(gav::testing::max_abs(sh_rotate_dir(r2, sh_rotate_dir(r1, d)), sh_rotate_dir(r1 * r2, d)), 1e-9);
    }
}

TEST(PositionalEncoding, ZeroInput) {
    const double p = 0.0;
    const auto out = positional_encode(std::span<const double>(&p, 1), PEConfig{10, true});
    ASSERT_EQ(out.size(), 21u);
    EXPECT_EQ(out[0], 0.0);
    for (int k = 0; k < 10; ++k) {
        EXPECT_EQ(out[static_cast<std::size_t>(1 + 2 * k)], 0.0);
        EXPECT_EQ(out[static_cast<std::size_t>(2 + 2 * k)], 1.0);
    }
}

TEST(PositionalEncoding, Dimensions) {
    const std::vector<double> v{0.1, 0.2, 0.3};
    EXPECT_EQ(positional_encode(v, PEConfig{10, true}).size(), 63u);
    EXPECT_EQ((PEConfig{10, true}.output_dim(3)), 63);
    EXPECT_EQ((PEConfig{4, false}.output_dim(2)), 16);
}

TEST(PositionalEncoding, ExactTrigValues) {
    const double p = 1.0;
    const auto out = positional_encode(std::span<const double>(&p, 1), PEConfig{2, true});
    const double expect[] = {1, 0, -1, 0, 1};
    ASSERT_EQ(out.size(), 5u);
    for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(out[i], expect[i], 1e-12);
}

TEST(PositionalEncoding, DeterministicAndDifferentiable) {
    Rng rng(16);
    std::vector<double> v{0.37, -0.81, 0.05};
    const PEConfig cfg{10, true};
    EXPECT_EQ(positional_encode(v, cfg), positional_encode(v, cfg));
    std::vector<double> w(63);
    for (auto& x : w) x = rng.uniform(-1, 1);
    std::vector<double> grad(3, 0.0);
    positional_encode_backward(v, cfg, w, grad);
    for (std::size_t i = 0; i < 3; ++i) {
        auto vp = v, vm = v;
        vp[i] += 1e-7;
        vm[i] -= 1e-7;
        const auto ep = positional_encode(vp, cfg), em = positional_encode(vm, cfg);
        double fd = 0;
        for (std::size_t k = 0; k < 63; ++k) fd += w[k] * (ep[k] - em[k]) / 2e-7;
        EXPECT_NEAR(grad[i], fd, 1e-5 * std::max(1.0, std::abs(fd)));
    }
}

TEST(PositionalEncoding, RejectsZeroFrequencies) {
    const double p = 0.5;
    EXPECT_THROW(positional_encode(std::span<const double>(&p, 1), PEConfig{0, true}), Error);
}
