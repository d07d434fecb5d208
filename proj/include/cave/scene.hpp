#pragma once

#include "cave/geometry.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace cave {

CAVE_DEFINE_ERROR(BadParams);
CAVE_DEFINE_ERROR(BadScriptFile);

inline constexpr int kNumJoints = 17;
inline constexpr Scalar kFrameRateHz = 30.0;

// COCO keypoint order.
enum Joint : int {
    kNose = 0,
    kLeftEye = 1,
    kRightEye = 2,
    kLeftEar = 3,
    kRightEar = 4,
    kLeftShoulder = 5,
    kRightShoulder = 6,
    kLeftElbow = 7,
    kRightElbow = 8,
    kLeftWrist = 9,
    kRightWrist = 10,
    kLeftHip = 11,
    kRightHip = 12,
    kLeftKnee = 13,
    kRightKnee = 14,
    kLeftAnkle = 15,
    kRightAnkle = 16,
};

struct SkeletonFrame3D {
    int person_id = 0;
    Scalar timestamp = 0;  // seconds
    std::array<WorldPoint, kNumJoints> joints{};
    std::uint32_t validity = 0;      // bit j set => joint j valid
    std::uint32_t interpolated = 0;  // bit j set => joint j was hole-filled

    bool joint_valid(int j) const { return (validity >> j) & 1u; }
    void set_valid(int j, bool v) {
        if (v) validity |= (1u << j);
        else validity &= ~(1u << j);
    }
    static constexpr std::uint32_t all_valid_mask() {
        return (1u << kNumJoints) - 1u;
    }
};

struct Detection2D {
    int camera_id = 0;
    Scalar timestamp = 0;
    Vec4 box = Vec4::Zero();  // x, y, w, h (pixels)
    std::array<PixelPoint, kNumJoints> keypoints{};
    std::array<Scalar, kNumJoints> confidence{};
    std::uint32_t valid_joints = 0;
    // Ground-truth source id, for evaluation joins only; -1 for clutter.
    int truth_person_id = -1;

    bool joint_valid(int j) const { return (valid_joints >> j) & 1u; }
};

struct OcclusionInterval {
    int camera_id = 0;
    Scalar t_begin = 0;
    Scalar t_end = 0;
};

struct NoiseModel {
    Scalar pixel_sigma = 0;
    Scalar miss_probability = 0;
    Scalar clutter_rate = 0;  // expected spurious detections per camera-frame
    std::vector<OcclusionInterval> occlusions;
};

struct ScriptSegment {
    Scalar start_time = 0;
    Scalar duration = 0;
    int person_id = 0;
    ActionLabel label = ActionLabel::StandStill;
    Scalar facing_yaw = 0;
    Scalar cadence_hz = 1.5;
    Vec2 base_position = Vec2::Zero();
};

struct SceneScript {
    std::vector<ScriptSegment> segments;
    NoiseModel noise;
    std::uint64_t seed = 0;

    Scalar end_time() const;
};

// Deterministic parametric gait at 30 Hz, canonical facing +X at the floor
// center. Throws BadParams for non-positive duration or cadence outside
// [0.5, 3] Hz.
std::vector<SkeletonFrame3D> generate_gait(ActionLabel label, Scalar duration_s,
                                           Scalar cadence_hz, std::uint64_t seed);

// Rigidly place a canonical gait: rotate by yaw about Z, then translate in
// the floor plane.
void place_skeleton(SkeletonFrame3D* frame, const Vec2& base_position, Scalar yaw);

// All segments of a script rendered to ground-truth frames (30 Hz, global
// timestamps). Gaps between segments hold the last pose.
std::vector<SkeletonFrame3D> render_script(const SceneScript& script);

// Project one ground-truth frame into every camera and apply the noise
// model. The per-camera random streams are split deterministically from
// (seed, camera id, frame timestamp).
std::vector<Detection2D> observe(const SkeletonFrame3D& frame,
                                 const std::vector<CameraModel>& cameras,
                                 const NoiseModel& noise, std::uint64_t seed);

// Four ceiling-corner cameras looking at the room center.
std::vector<CameraModel> default_camera_rig(const CaveLayout& layout);

SceneScript load_script(const std::string& path);
void save_script(const SceneScript& script, const std::string& path);

// Neutral standing pose shared by every gait at phase zero.
std::array<WorldPoint, kNumJoints> neutral_pose();

}  // namespace cave
