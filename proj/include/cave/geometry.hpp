#pragma once

#include "cave/types.hpp"

#include <array>
#include <string>
#include <vector>

namespace cave {

CAVE_DEFINE_ERROR(NonPositiveDepth);
CAVE_DEFINE_ERROR(UnknownScreen);
CAVE_DEFINE_ERROR(OutOfPanel);
CAVE_DEFINE_ERROR(BadLayoutFile);

// Rigid world->camera transform: x_cam = rotation * x_world + translation.
struct Pose {
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();

    Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
    Vec3 center() const { return -rotation.transpose() * translation; }
};

Pose compose(const Pose& a, const Pose& b);  // apply b first, then a
Pose invert(const Pose& a);
bool is_rotation(const Mat3& r, Scalar tol = 1e-9);

// Rodrigues: angle = |r| about axis r/|r|; r = 0 gives identity.
Mat3 rotation_from_axis_angle(const Vec3& r);
Vec3 axis_angle_from_rotation(const Mat3& rot);
// d(rotation_from_axis_angle(r))/dr_k, k = 0..2.
std::array<Mat3, 3> rotation_jacobian_axis_angle(const Vec3& r);
Mat3 rotation_about_z(Scalar yaw);
// Orthogonal projection onto SO(3) (for homography/DLT factorizations).
Mat3 nearest_rotation(const Mat3& m);
Mat3 skew(const Vec3& v);

struct Intrinsics {
    Scalar fx = 0, fy = 0;
    Scalar cx = 0, cy = 0;
    Scalar k1 = 0, k2 = 0;  // radial distortion, default off

    Mat3 matrix() const;
};

struct CameraModel {
    int id = 0;
    Intrinsics intrinsics;
    Pose pose;
    int width = 0, height = 0;

    Mat34 projection_matrix() const;  // K [R | t]
    bool in_image(const PixelPoint& px) const {
        return px.x() >= 0 && px.y() >= 0 && px.x() < width && px.y() < height;
    }
};

// Pinhole projection with optional radial distortion.
// Throws NonPositiveDepth when the camera-frame depth is <= 1e-9.
PixelPoint project(const CameraModel& camera, const WorldPoint& p);
Scalar camera_depth(const CameraModel& camera, const WorldPoint& p);

// Distort/undistort normalized image coordinates (x/z, y/z).
Vec2 distort_normalized(const Intrinsics& k, const Vec2& xn);
Vec2 undistort_normalized(const Intrinsics& k, const Vec2& xn);
// Pixel -> ideal normalized coordinates (inverts K and distortion).
Vec2 pixel_to_normalized(const Intrinsics& k, const PixelPoint& px);

// One wall of the CAVE. Points on the panel are origin + s.x*axis_u +
// s.y*axis_v with s in [0,width] x [0,height]; axis_u x axis_v faces the
// room interior.
struct ScreenPanel {
    int id = 0;
    std::string name;
    Vec3 origin = Vec3::Zero();
    Vec3 axis_u = Vec3::UnitX();
    Vec3 axis_v = Vec3::UnitZ();
    Scalar width = 0, height = 0;  // meters
    int res_x = 0, res_y = 0;      // pixels

    Vec3 inward_normal() const { return axis_u.cross(axis_v); }
};

struct CaveLayout {
    std::vector<ScreenPanel> panels;

    const ScreenPanel& panel(int screen_id) const;  // throws UnknownScreen
};

// Four vertical panels enclosing a 4 m x 4 m floor, 2.5 m tall.
CaveLayout default_layout();

WorldPoint screen_to_world(const CaveLayout& layout, int screen_id, const Vec2& s);

CaveLayout load_layout(const std::string& path);
void save_layout(const CaveLayout& layout, const std::string& path);

}  // namespace cave
