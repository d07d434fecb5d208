#include "cave/calibration.hpp"

#include "cave/scene.hpp"
#include "helpers.hpp"

#include <doctest.h>

#include <random>
#include <set>

using namespace cave;

namespace {

// Plane residual of four points against the best-fit plane of the panel.
Scalar plane_residual(const ScreenPanel& panel, const std::array<WorldPoint, 4>& pts) {
    const Vec3 n = panel.inward_normal().normalized();
    Scalar worst = 0;
    for (const auto& p : pts) worst = std::max(worst, std::abs(n.dot(p - panel.origin)));
    return worst;
}

CameraModel corner_camera() {
    return test::look_at_camera(0, Vec3(1.9, 1.9, 2.3), Vec3(0, 0, 1.0));
}

}  // namespace

TEST_CASE("generate_board counts, ids and planarity") {
    const CaveLayout layout = default_layout();
    const auto markers = generate_board(layout, 1, 0.5, 0.2);
    REQUIRE(markers.size() == 4);
    std::set<int> ids;
    for (const auto& m : markers) ids.insert(m.marker_id);
    CHECK(ids.size() == 4);

    for (const auto& m : markers) {
        CHECK(plane_residual(layout.panel(m.screen_id), m.corners) < 1e-12);
    }

    CHECK_THROWS_AS(generate_board(layout, 1, 5.0, 0.2), DoesNotFit);
    CHECK_THROWS_AS(generate_board(layout, 100, 0.5, 0.2), DoesNotFit);
}

TEST_CASE("generate_board corner ordering is counter-clockwise from inside") {
    const CaveLayout layout = default_layout();
    const auto markers = generate_board(layout, 4, 0.4, 0.2);
    for (const auto& m : markers) {
        const Vec3 e1 = m.corners[1] - m.corners[0];
        const Vec3 e2 = m.corners[3] - m.corners[0];
        // (c1-c0) x (c3-c0) must align with the panel inward normal
        CHECK(e1.cross(e2).dot(layout.panel(m.screen_id).inward_normal()) > 0);
    }
}

TEST_CASE("dlt_full on noise-free two-screen data") {
    const CaveLayout layout = default_layout();
    const CameraModel cam = corner_camera();
    const auto markers = generate_board(layout, 4, 0.5, 0.3);
    const auto corr = test::synthesize_correspondences(cam, markers);
    REQUIRE(corr.size() >= 16);
    REQUIRE(points_span_two_planes(corr));

    const Mat34 p = dlt_full(corr);
    Scalar sum_sq = 0;
    for (const auto& c : corr) {
        const Vec4 xw(c.world.x(), c.world.y(), c.world.z(), 1.0);
        const Vec3 proj = p * xw;
        const Vec2 px = proj.head<2>() / proj.z();
        sum_sq += (px - c.pixel).squaredNorm();
    }
    CHECK(std::sqrt(sum_sq / corr.size()) < 1e-8);
}

TEST_CASE("dlt_full degeneracies") {
    const CaveLayout layout = default_layout();
    const CameraModel cam = corner_camera();
    const auto markers = generate_board(layout, 4, 0.5, 0.3);
    auto corr = test::synthesize_correspondences(cam, markers);

    SUBCASE("too few points") {
        corr.resize(5);
        CHECK_THROWS_AS(dlt_full(corr), Degenerate);
    }
    SUBCASE("single plane") {
        std::vector<FiducialCorrespondence> planar;
        const int screen = markers[corr.front().marker_id / 4].screen_id;
        for (const auto& c : corr) {
            if (markers[c.marker_id].screen_id == screen) planar.push_back(c);
        }
        REQUIRE(planar.size() >= 6);
        CHECK_FALSE(points_span_two_planes(planar));
        CHECK_THROWS_AS(dlt_full(planar), Degenerate);
    }
}

TEST_CASE("decompose_projection recovers the factors") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<Scalar> u(0.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        CameraModel cam;
        cam.intrinsics.fx = 800 + 600 * u(rng);
        cam.intrinsics.fy = 800 + 600 * u(rng);
        cam.intrinsics.cx = 500 + 200 * u(rng);
        cam.intrinsics.cy = 350 + 200 * u(rng);
        cam.pose = test::random_pose(rng);
        Mat34 p = cam.projection_matrix();
        p *= (0.1 + u(rng));  // arbitrary scale

        const DecomposedProjection dec = decompose_projection(p);
        CHECK(std::abs(dec.intrinsics.fx - cam.intrinsics.fx) < 1e-6);
        CHECK(std::abs(dec.intrinsics.fy - cam.intrinsics.fy) < 1e-6);
        CHECK(std::abs(dec.intrinsics.cx - cam.intrinsics.cx) < 1e-6);
        CHECK(std::abs(dec.intrinsics.cy - cam.intrinsics.cy) < 1e-6);
        CHECK((dec.pose.rotation - cam.pose.rotation).norm() < 1e-8);
        CHECK((dec.pose.translation - cam.pose.translation).norm() < 1e-8);
        CHECK(std::abs(dec.skew) < 1e-6);
    }
}

TEST_CASE("decompose_projection identity and singular inputs") {
    Mat34 p = Mat34::Zero();
    p.leftCols<3>() = Mat3::Identity();
    const DecomposedProjection dec = decompose_projection(p);
    CHECK(dec.intrinsics.fx == doctest::Approx(1.0));
    CHECK(dec.intrinsics.cx == doctest::Approx(0.0));
    CHECK((dec.pose.rotation - Mat3::Identity()).norm() < 1e-12);

    Mat34 bad = p;
    bad.row(2).setZero();
    CHECK_THROWS_AS(decompose_projection(bad), Singular);
}

TEST_CASE("solve_pnp_known_intrinsics on a single coplanar screen") {
    const CaveLayout layout = default_layout();
    // camera staring at the front panel only
    const CameraModel cam = test::look_at_camera(0, Vec3(0, -1.0, 1.4), Vec3(0, 2, 1.25));
    const auto markers = generate_board(layout, 4, 0.5, 0.3);
    std::vector<FiducialMarker> front;
    for (const auto& m : markers) {
        if (m.screen_id == 0) front.push_back(m);
    }
    const auto corr = test::synthesize_correspondences(cam, front);
    REQUIRE(corr.size() == 16);
    REQUIRE_FALSE(points_span_two_planes(corr));

    const Pose pose = solve_pnp_known_intrinsics(cam.intrinsics, corr);
    CHECK((pose.translation - cam.pose.translation).norm() < 1e-6);
    CHECK(axis_angle_from_rotation(pose.rotation.transpose() * cam.pose.rotation).norm() <
          1e-7);
}

TEST_CASE("solve_pnp error paths") {
    const CaveLayout layout = default_layout();
    const CameraModel cam = test::look_at_camera(0, Vec3(0, -1.0, 1.4), Vec3(0, 2, 1.25));
    const auto markers = generate_board(layout, 1, 0.5, 0.3);
    std::vector<FiducialMarker> front(markers.begin(), markers.begin() + 1);
    auto corr = test::synthesize_correspondences(cam, front);
    REQUIRE(corr.size() == 4);

    SUBCASE("too few points") {
        corr.resize(3);
        CHECK_THROWS_AS(solve_pnp_known_intrinsics(cam.intrinsics, corr), Degenerate);
    }
    SUBCASE("mirrored correspondences fail cheirality") {
        for (auto& c : corr) {
            c.pixel.x() = 2 * cam.intrinsics.cx - c.pixel.x();  // mirror about cx
        }
        CHECK_THROWS_AS(solve_pnp_known_intrinsics(cam.intrinsics, corr),
                        CheiralityFailure);
    }
}

TEST_CASE("refine_lm converges from a perturbed start") {
    const CaveLayout layout = default_layout();
    const CameraModel cam = corner_camera();
    const auto markers = generate_board(layout, 4, 0.5, 0.3);
    const auto corr = test::synthesize_correspondences(cam, markers);

    Pose start = cam.pose;
    start.rotation =
        rotation_from_axis_angle(Vec3(0.0105, -0.012, 0.008)) * start.rotation;
    start.translation += Vec3(0.03, -0.04, 0.02);

    const CalibrationResult result = refine_lm(cam.intrinsics, start, corr);
    CHECK(result.converged);
    CHECK(result.iterations <= 50);
    CHECK(result.rmse_px < 1e-6);
    for (size_t i = 1; i < result.cost_history.size(); ++i) {
        CHECK(result.cost_history[i] <= result.cost_history[i - 1]);
    }
}

TEST_CASE("refine_lm at the optimum stays put") {
    const CaveLayout layout = default_layout();
    const CameraModel cam = corner_camera();
    const auto markers = generate_board(layout, 4, 0.5, 0.3);
    const auto corr = test::synthesize_correspondences(cam, markers);

    const CalibrationResult result = refine_lm(cam.intrinsics, cam.pose, corr);
    CHECK(result.converged);
    CHECK(result.iterations <= 1);
    CHECK(result.cost_history.back() <= result.cost_history.front() + 1e-15);
}

TEST_CASE("analytic jacobian matches central finite differences") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<Scalar> u(-1.0, 1.0);
    const Scalar step = 1e-6;
    for (int trial = 0; trial < 100; ++trial) {
        // random camera with distortion, random points in front
        Intrinsics k{900 + 100 * u(rng), 900 + 100 * u(rng), 600 + 50 * u(rng),
                     450 + 50 * u(rng), 0.05 * u(rng), 0.01 * u(rng)};
        Pose pose;
        pose.rotation = rotation_from_axis_angle(0.5 * test::random_axis_angle(rng));
        pose.translation = Vec3(0.2 * u(rng), 0.2 * u(rng), 0.1 * u(rng));
        std::vector<FiducialCorrespondence> corr;
        for (int i = 0; i < 8; ++i) {
            FiducialCorrespondence c;
            const Vec3 pc(u(rng), u(rng), 3.0 + u(rng));  // in front of the camera
            c.world = pose.rotation.transpose() * (pc - pose.translation);
            c.pixel = Vec2(600 + 300 * u(rng), 450 + 200 * u(rng));
            c.confidence = 0.5 + 0.5 * std::abs(u(rng));
            corr.push_back(c);
        }

        VecX res;
        MatX jac;
        lm_residuals(k, pose, corr, true, &res, &jac);

        VecX theta(10);
        theta.segment<3>(0) = axis_angle_from_rotation(pose.rotation);
        theta.segment<3>(3) = pose.translation;
        theta(6) = k.fx;
        theta(7) = k.fy;
        theta(8) = k.cx;
        theta(9) = k.cy;
        auto eval = [&](const VecX& th) {
            Intrinsics ki = k;
            ki.fx = th(6);
            ki.fy = th(7);
            ki.cx = th(8);
            ki.cy = th(9);
            Pose pi;
            pi.rotation = rotation_from_axis_angle(th.segment<3>(0));
            pi.translation = th.segment<3>(3);
            VecX r;
            lm_residuals(ki, pi, corr, true, &r, nullptr);
            return r;
        };
        MatX fd(res.size(), 10);
        for (int p = 0; p < 10; ++p) {
            VecX tp = theta, tm = theta;
            tp(p) += step;
            tm(p) -= step;
            fd.col(p) = (eval(tp) - eval(tm)) / (2 * step);
        }
        const Scalar rel = (jac - fd).norm() / std::max<Scalar>(1.0, jac.norm());
        CHECK(rel < 1e-5);
    }
}

TEST_CASE("full noise-free calibration recovers the camera exactly") {
    const CaveLayout layout = default_layout();
    const auto markers = generate_board(layout, 4, 0.5, 0.3);
    for (const auto& cam : default_camera_rig(layout)) {
        const auto corr = test::synthesize_correspondences(cam, markers);
        REQUIRE(corr.size() >= 12);
        const CalibrationResult result =
            calibrate_camera(corr, cam.width, cam.height);
        CHECK(std::abs(result.camera.intrinsics.fx - cam.intrinsics.fx) < 1e-6);
        CHECK(std::abs(result.camera.intrinsics.fy - cam.intrinsics.fy) < 1e-6);
        CHECK(std::abs(result.camera.intrinsics.cx - cam.intrinsics.cx) < 1e-6);
        CHECK(std::abs(result.camera.intrinsics.cy - cam.intrinsics.cy) < 1e-6);
        CHECK((result.camera.pose.rotation - cam.pose.rotation).norm() < 1e-8);
        CHECK((result.camera.pose.translation - cam.pose.translation).norm() < 1e-8);
    }
}

TEST_CASE("calibration under pixel noise lands in the predicted rmse band") {
    const CaveLayout layout = default_layout();
    const CameraModel cam = corner_camera();
    const auto markers = generate_board(layout, 8, 0.35, 0.15);
    int in_band = 0;
    const int seeds = 30;
    for (int seed = 0; seed < seeds; ++seed) {
        auto corr = test::synthesize_correspondences(cam, markers, 0.5, 1000 + seed);
        if (corr.size() > 64) corr.resize(64);
        REQUIRE(corr.size() == 64);
        const CalibrationResult result = calibrate_camera(corr, cam.width, cam.height);
        if (result.rmse_px >= 0.3 && result.rmse_px <= 0.7) ++in_band;
        for (size_t i = 1; i < result.cost_history.size(); ++i) {
            CHECK(result.cost_history[i] <= result.cost_history[i - 1]);
        }
    }
    CHECK(in_band == seeds);
}

TEST_CASE("calibration equivariance under a rigid world transform") {
    const CaveLayout layout = default_layout();
    const CameraModel cam = corner_camera();
    const auto markers = generate_board(layout, 4, 0.5, 0.3);
    const auto corr = test::synthesize_correspondences(cam, markers);

    std::mt19937_64 rng(8);
    const Pose g = test::random_pose(rng);
    std::vector<FiducialCorrespondence> moved = corr;
    for (auto& c : moved) c.world = g.apply(c.world);

    const CalibrationResult result = calibrate_camera(moved, cam.width, cam.height);
    // pose composed with g reproduces the original projections
    const Pose recovered = compose(result.camera.pose, g);
    CameraModel check = cam;
    check.intrinsics = result.camera.intrinsics;
    check.pose = recovered;
    for (const auto& c : corr) {
        CHECK((project(check, c.world) - c.pixel).norm() < 1e-6);
    }
}

TEST_CASE("reprojection_report") {
    CameraModel cam;
    cam.width = 1000;
    cam.height = 1000;
    cam.intrinsics = {1000, 1000, 500, 500};

    SUBCASE("perfect camera gives zero rmse") {
        std::vector<FiducialCorrespondence> corr;
        FiducialCorrespondence c;
        c.world = Vec3(0.1, -0.05, 2.0);
        c.pixel = project(cam, c.world);
        corr.push_back(c);
        const ReprojectionReport report = reprojection_report(cam, corr);
        CHECK(report.rmse_px < 1e-9);
    }
    SUBCASE("single 3-4-5 offset") {
        std::vector<FiducialCorrespondence> corr;
        FiducialCorrespondence c;
        c.world = Vec3(0, 0, 2.0);
        c.pixel = project(cam, c.world) + Vec2(3, 4);
        corr.push_back(c);
        const ReprojectionReport report = reprojection_report(cam, corr);
        CHECK(report.rmse_px == doctest::Approx(5.0).epsilon(1e-12));
        CHECK(report.max_err_px == doctest::Approx(5.0).epsilon(1e-12));
    }
    SUBCASE("axes invisible for identity pose at the origin") {
        const ReprojectionReport report = reprojection_report(cam, {});
        for (const auto& seg : report.axes) CHECK_FALSE(seg.visible);
    }
    SUBCASE("axes visible for a real camera") {
        const CameraModel rig = corner_camera();
        const ReprojectionReport report = reprojection_report(rig, {});
        for (const auto& seg : report.axes) CHECK(seg.visible);
    }
}

TEST_CASE("correspondence and calibration file round trips") {
    const CaveLayout layout = default_layout();
    const CameraModel cam = corner_camera();
    const auto markers = generate_board(layout, 2, 0.5, 0.3);
    const auto corr = test::synthesize_correspondences(cam, markers);

    save_correspondences(corr, "test_corr.txt");
    const auto loaded = load_correspondences("test_corr.txt");
    REQUIRE(loaded.size() == corr.size());
    for (size_t i = 0; i < corr.size(); ++i) {
        CHECK(loaded[i].marker_id == corr[i].marker_id);
        CHECK((loaded[i].world - corr[i].world).norm() == 0.0);
        CHECK((loaded[i].pixel - corr[i].pixel).norm() == 0.0);
    }
    std::remove("test_corr.txt");

    CalibrationResult result = refine_lm(cam.intrinsics, cam.pose, corr);
    result.camera.id = 3;
    result.camera.width = cam.width;
    result.camera.height = cam.height;
    save_calibration({result}, "test_calib.txt");
    const auto cams = load_calibration("test_calib.txt");
    REQUIRE(cams.size() == 1);
    CHECK(cams[0].id == 3);
    CHECK(cams[0].intrinsics.fx == result.camera.intrinsics.fx);
    CHECK((cams[0].pose.rotation - result.camera.pose.rotation).norm() == 0.0);
    std::remove("test_calib.txt");
}
