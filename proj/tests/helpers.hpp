#pragma once

#include "cave/calibration.hpp"
#include "cave/geometry.hpp"

#include <random>
#include <vector>

namespace cave::test {

inline Vec3 random_unit_vector(std::mt19937_64& rng) {
    std::normal_distribution<Scalar> gauss(0.0, 1.0);
    Vec3 v(gauss(rng), gauss(rng), gauss(rng));
    return v.normalized();
}

inline Vec3 random_axis_angle(std::mt19937_64& rng, Scalar max_angle = M_PI * 0.95) {
    std::uniform_real_distribution<Scalar> u(0.0, max_angle);
    return u(rng) * random_unit_vector(rng);
}

inline Pose random_pose(std::mt19937_64& rng) {
    std::uniform_real_distribution<Scalar> u(-1.0, 1.0);
    Pose p;
    p.rotation = rotation_from_axis_angle(random_axis_angle(rng));
    p.translation = Vec3(u(rng), u(rng), u(rng));
    return p;
}

// Camera placed at `position` looking at `target`, z forward, y down.
inline CameraModel look_at_camera(int id, const Vec3& position, const Vec3& target,
                                  Scalar focal = 1000, int width = 1920,
                                  int height = 1200) {
    CameraModel cam;
    cam.id = id;
    cam.width = width;
    cam.height = height;
    cam.intrinsics.fx = cam.intrinsics.fy = focal;
    cam.intrinsics.cx = width / 2.0;
    cam.intrinsics.cy = height / 2.0;
    const Vec3 forward = (target - position).normalized();
    Vec3 right = forward.cross(Vec3::UnitZ());
    if (right.norm() < 1e-9) right = Vec3::UnitX();
    right.normalize();
    const Vec3 down = forward.cross(right);
    cam.pose.rotation.row(0) = right.transpose();
    cam.pose.rotation.row(1) = down.transpose();
    cam.pose.rotation.row(2) = forward.transpose();
    cam.pose.translation = -cam.pose.rotation * position;
    return cam;
}

// Noise-free correspondences for every board corner the camera sees.
inline std::vector<FiducialCorrespondence> synthesize_correspondences(
    const CameraModel& camera, const std::vector<FiducialMarker>& markers,
    Scalar sigma_px = 0, std::uint64_t seed = 0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<Scalar> gauss(0.0, 1.0);
    std::vector<FiducialCorrespondence> corr;
    for (const auto& m : markers) {
        for (int k = 0; k < 4; ++k) {
            PixelPoint px;
            try {
                px = project(camera, m.corners[k]);
            } catch (const NonPositiveDepth&) {
                continue;
            }
            if (!camera.in_image(px)) continue;
            FiducialCorrespondence c;
            c.marker_id = m.marker_id;
            c.corner_index = k;
            c.world = m.corners[k];
            c.pixel = px + sigma_px * Vec2(gauss(rng), gauss(rng));
            corr.push_back(c);
        }
    }
    return corr;
}

}  // namespace cave::test
