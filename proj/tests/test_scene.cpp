#include "cave/scene.hpp"

#include "helpers.hpp"

#include <doctest.h>

#include <cmath>

using namespace cave;

namespace {

// Count rising crossings of `values` above `threshold`.
int count_lift_cycles(const std::vector<Scalar>& values, Scalar threshold) {
    int count = 0;
    bool above = false;
    for (const Scalar v : values) {
        if (!above && v > threshold) {
            above = true;
            ++count;
        } else if (above && v < threshold) {
            above = false;
        }
    }
    return count;
}

}  // namespace

TEST_CASE("generate_gait validates parameters") {
    CHECK_THROWS_AS(generate_gait(ActionLabel::StandStill, 0.0, 1.0, 1), BadParams);
    CHECK_THROWS_AS(generate_gait(ActionLabel::StandStill, 1.0, 0.2, 1), BadParams);
    CHECK_THROWS_AS(generate_gait(ActionLabel::StandStill, 1.0, 4.0, 1), BadParams);
}

TEST_CASE("stand still keeps the ankles near the floor") {
    for (const std::uint64_t seed : {1ull, 99ull, 271828ull}) {
        const auto frames = generate_gait(ActionLabel::StandStill, 2.0, 1.0, seed);
        Scalar lo = 1e9, hi = -1e9;
        for (const auto& f : frames) {
            for (const int j : {kLeftAnkle, kRightAnkle}) {
                lo = std::min(lo, f.joints[j].z());
                hi = std::max(hi, f.joints[j].z());
            }
        }
        CHECK(hi - lo < 0.03);
    }
}

TEST_CASE("forward stepping completes the scripted lift cycles") {
    const auto frames = generate_gait(ActionLabel::StepForward, 2.0, 1.0, 5);
    REQUIRE(frames.size() == 60);
    std::vector<Scalar> left, right;
    for (const auto& f : frames) {
        left.push_back(f.joints[kLeftAnkle].z());
        right.push_back(f.joints[kRightAnkle].z());
    }
    const Scalar threshold = 0.08 + 0.07;  // half of the 14 cm lift
    CHECK(count_lift_cycles(left, threshold) == 2);
    CHECK(count_lift_cycles(right, threshold) == 2);
}

TEST_CASE("side stepping lifts the leading leg") {
    const auto left = generate_gait(ActionLabel::StepLeft, 2.0, 1.0, 5);
    const auto right = generate_gait(ActionLabel::StepRight, 2.0, 1.0, 5);
    Scalar left_lift = 0, left_other = 0, right_lift = 0, right_other = 0;
    for (const auto& f : left) {
        left_lift = std::max(left_lift, f.joints[kLeftAnkle].z());
        left_other = std::max(left_other, f.joints[kRightAnkle].z());
    }
    for (const auto& f : right) {
        right_lift = std::max(right_lift, f.joints[kRightAnkle].z());
        right_other = std::max(right_other, f.joints[kLeftAnkle].z());
    }
    CHECK(left_lift > 0.15);
    CHECK(left_other < 0.12);
    CHECK(right_lift > 0.15);
    CHECK(right_other < 0.12);
}

TEST_CASE("gait generation is deterministic and stays in place") {
    const auto a = generate_gait(ActionLabel::StepForward, 1.5, 1.3, 42);
    const auto b = generate_gait(ActionLabel::StepForward, 1.5, 1.3, 42);
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        for (int j = 0; j < kNumJoints; ++j) {
            CHECK(a[i].joints[j] == b[i].joints[j]);  // bit identical
        }
    }
    // the root never wanders more than 10 cm from its start
    const Vec2 start = 0.5 * (a.front().joints[kLeftHip] + a.front().joints[kRightHip])
                                .head<2>();
    for (const auto& f : a) {
        const Vec2 root = 0.5 * (f.joints[kLeftHip] + f.joints[kRightHip]).head<2>();
        CHECK((root - start).norm() < 0.10);
    }
}

TEST_CASE("observe with zero noise reproduces project exactly") {
    const auto cameras = default_camera_rig(default_layout());
    const auto frames = generate_gait(ActionLabel::StandStill, 0.5, 1.0, 3);
    NoiseModel noise;  // all zero
    const auto detections = observe(frames[0], cameras, noise, 7);
    REQUIRE(detections.size() == cameras.size());
    for (const auto& det : detections) {
        const CameraModel* cam = nullptr;
        for (const auto& c : cameras) {
            if (c.id == det.camera_id) cam = &c;
        }
        REQUIRE(cam != nullptr);
        for (int j = 0; j < kNumJoints; ++j) {
            REQUIRE(det.joint_valid(j));
            CHECK((det.keypoints[j] - project(*cam, frames[0].joints[j])).norm() == 0.0);
        }
        CHECK(det.box(2) > 0);
        CHECK(det.box(3) > 0);
    }
}

TEST_CASE("scripted occlusion drops the camera's detection") {
    const auto cameras = default_camera_rig(default_layout());
    auto frames = generate_gait(ActionLabel::StandStill, 0.5, 1.0, 3);
    frames[0].timestamp = 1.0;
    NoiseModel noise;
    noise.occlusions.push_back({2, 0.9, 1.1});
    const auto detections = observe(frames[0], cameras, noise, 7);
    CHECK(detections.size() == cameras.size() - 1);
    for (const auto& det : detections) CHECK(det.camera_id != 2);
}

TEST_CASE("pixel noise has the configured spread") {
    const auto cameras = default_camera_rig(default_layout());
    const auto frames = generate_gait(ActionLabel::StandStill, 0.5, 1.0, 3);
    NoiseModel noise;
    noise.pixel_sigma = 0.5;
    NoiseModel clean;
    Scalar sum_sq = 0;
    long n = 0;
    for (int trial = 0; trial < 40; ++trial) {
        const auto noisy = observe(frames[0], cameras, noise, 1000 + trial);
        const auto exact = observe(frames[0], cameras, clean, 1);
        REQUIRE(noisy.size() == exact.size());
        for (size_t d = 0; d < noisy.size(); ++d) {
            for (int j = 0; j < kNumJoints; ++j) {
                if (!noisy[d].joint_valid(j) || !exact[d].joint_valid(j)) continue;
                const Vec2 res = noisy[d].keypoints[j] - exact[d].keypoints[j];
                sum_sq += res.squaredNorm();
                n += 2;
            }
        }
    }
    const Scalar std_observed = std::sqrt(sum_sq / n);
    CHECK(std_observed > 0.45);
    CHECK(std_observed < 0.55);
}

TEST_CASE("miss probability and clutter behave statistically") {
    const auto cameras = default_camera_rig(default_layout());
    const auto frames = generate_gait(ActionLabel::StandStill, 0.5, 1.0, 3);
    NoiseModel noise;
    noise.miss_probability = 0.3;
    noise.clutter_rate = 0.5;
    int real = 0, clutter = 0;
    const int trials = 200;
    for (int t = 0; t < trials; ++t) {
        for (const auto& det : observe(frames[0], cameras, noise, 500 + t)) {
            if (det.truth_person_id >= 0) ++real;
            else ++clutter;
        }
    }
    const Scalar miss_rate = 1.0 - real / (4.0 * trials);
    CHECK(miss_rate > 0.2);
    CHECK(miss_rate < 0.4);
    const Scalar clutter_per_cam = clutter / (4.0 * trials);
    CHECK(clutter_per_cam > 0.35);
    CHECK(clutter_per_cam < 0.65);
}

TEST_CASE("place_skeleton rotates and translates rigidly") {
    auto frames = generate_gait(ActionLabel::StandStill, 0.2, 1.0, 3);
    SkeletonFrame3D moved = frames[0];
    place_skeleton(&moved, Vec2(1.0, -0.5), M_PI / 2);
    const Mat3 rot = rotation_about_z(M_PI / 2);
    for (int j = 0; j < kNumJoints; ++j) {
        const Vec3 expected = rot * frames[0].joints[j] + Vec3(1.0, -0.5, 0);
        CHECK((moved.joints[j] - expected).norm() < 1e-12);
    }
}

TEST_CASE("render_script covers segments and holds gaps") {
    SceneScript script;
    script.seed = 11;
    ScriptSegment a;
    a.person_id = 0;
    a.label = ActionLabel::StandStill;
    a.start_time = 0;
    a.duration = 1.0;
    ScriptSegment b = a;
    b.label = ActionLabel::StepForward;
    b.start_time = 1.5;  // half-second gap
    b.duration = 1.0;
    script.segments = {a, b};
    const auto frames = render_script(script);
    REQUIRE(frames.size() == 75);
    for (size_t i = 1; i < frames.size(); ++i) {
        CHECK(frames[i].timestamp > frames[i - 1].timestamp);
    }
    // during the gap the pose freezes at the last frame of segment a
    const auto& gap_frame = frames[40];  // t = 1.333
    const auto& last_a = frames[29];     // t = 0.967
    for (int j = 0; j < kNumJoints; ++j) {
        CHECK((gap_frame.joints[j] - last_a.joints[j]).norm() == 0.0);
    }
}

TEST_CASE("script file round trip") {
    SceneScript script;
    script.seed = 123;
    script.noise.pixel_sigma = 0.5;
    script.noise.occlusions.push_back({1, 2.0, 2.5});
    ScriptSegment seg;
    seg.person_id = 2;
    seg.label = ActionLabel::StepLeft;
    seg.start_time = 0.5;
    seg.duration = 1.5;
    seg.facing_yaw = 0.25;
    seg.cadence_hz = 1.25;
    seg.base_position = Vec2(0.25, -0.125);
    script.segments.push_back(seg);

    save_script(script, "test_script.txt");
    const SceneScript loaded = load_script("test_script.txt");
    REQUIRE(loaded.segments.size() == 1);
    CHECK(loaded.seed == script.seed);
    CHECK(loaded.noise.pixel_sigma == script.noise.pixel_sigma);
    REQUIRE(loaded.noise.occlusions.size() == 1);
    CHECK(loaded.noise.occlusions[0].camera_id == 1);
    CHECK(loaded.segments[0].label == ActionLabel::StepLeft);
    CHECK(loaded.segments[0].facing_yaw == script.segments[0].facing_yaw);
    CHECK(loaded.segments[0].base_position == script.segments[0].base_position);
    std::remove("test_script.txt");
}

TEST_CASE("default camera rig sees the room center") {
    const auto cameras = default_camera_rig(default_layout());
    REQUIRE(cameras.size() == 4);
    for (const auto& cam : cameras) {
        CHECK(is_rotation(cam.pose.rotation, 1e-9));
        const PixelPoint px = project(cam, Vec3(0, 0, 1.0));
        CHECK(std::abs(px.x() - cam.intrinsics.cx) < 1.0);
        CHECK(std::abs(px.y() - cam.intrinsics.cy) < 1.0);
    }
}
