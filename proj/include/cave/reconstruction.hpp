#pragma once

#include "cave/scene.hpp"
#include "cave/tracking.hpp"

#include <deque>
#include <map>
#include <optional>
#include <vector>

namespace cave {

CAVE_DEFINE_ERROR(InsufficientViews);
CAVE_DEFINE_ERROR(NonMonotoneTimestamp);

struct PointObservation {
    const CameraModel* camera = nullptr;
    PixelPoint pixel = PixelPoint::Zero();
    Scalar confidence = 1.0;
};

struct TriangulatedPoint {
    WorldPoint point = WorldPoint::Zero();
    Scalar mean_residual_px = 0;
    int views_used = 0;
};

// Confidence-weighted DLT triangulation from >= 2 distinct views. Views
// violating cheirality are dropped worst-residual-first down to two; with
// two views left and still a non-positive depth it throws
// CheiralityFailure.
TriangulatedPoint triangulate_point(const std::vector<PointObservation>& observations);

struct ViewGroup {
    int person_id = 0;
    std::map<int, int> camera_to_track;  // camera id -> track id
    Scalar association_score = 0;        // mean pairwise epipolar distance
    std::vector<const Track2D*> members; // one per camera, matching the map
};

struct CrossViewMatchResult {
    std::vector<ViewGroup> groups;                    // >= 2 views each
    std::vector<std::pair<int, int>> unmatched;       // (camera id, track id)
};

// Fundamental matrix mapping points in image a to epipolar lines in image b.
Mat3 fundamental_matrix(const CameraModel& a, const CameraModel& b);

// Mean symmetric epipolar distance of the shared valid torso keypoints
// (shoulders and hips); returns infinity when none are shared.
Scalar torso_epipolar_distance(const CameraModel& cam_a, const Detection2D& det_a,
                               const CameraModel& cam_b, const Detection2D& det_b);

// Greedy agglomeration of per-camera tracks over pairwise epipolar
// distance; keeps person ids stable across frames by majority continuity
// of (camera, track id) memberships.
class CrossViewMatcher {
public:
    explicit CrossViewMatcher(Scalar gate_px = 20.0) : gate_px_(gate_px) {}

    CrossViewMatchResult match(const std::vector<std::vector<Track2D>>& tracks_per_camera,
                               const std::vector<CameraModel>& cameras);

private:
    Scalar gate_px_;
    int next_person_id_ = 1;
    std::map<int, std::map<int, int>> previous_members_;  // person -> camera -> track
};

struct ReconstructionParams {
    Scalar min_confidence = 0.3;   // keypoint gate
    Scalar residual_gate_px = 10;  // triangulation residual gate
};

// Per-joint triangulation of one group; joints failing the gates end up
// invalid in the mask.
SkeletonFrame3D reconstruct_skeleton(const ViewGroup& group,
                                     const std::vector<CameraModel>& cameras,
                                     Scalar timestamp,
                                     const ReconstructionParams& params = {});

// Ring buffer of the last W skeleton frames with retroactive hole filling:
// a joint invalid for up to `max_hole` consecutive frames is linearly
// interpolated once a valid sample arrives on both sides.
class SkeletonSequence {
public:
    explicit SkeletonSequence(int person_id, int capacity = 32, int max_hole = 3)
        : person_id_(person_id), capacity_(capacity), max_hole_(max_hole) {}

    // Appends and returns the full window when the buffer is full, nullopt
    // while still partial. Throws NonMonotoneTimestamp.
    std::optional<std::vector<SkeletonFrame3D>> append(const SkeletonFrame3D& frame);

    const std::deque<SkeletonFrame3D>& frames() const { return frames_; }
    int person_id() const { return person_id_; }
    int capacity() const { return capacity_; }

private:
    void fill_holes(int joint);

    int person_id_;
    int capacity_;
    int max_hole_;
    std::deque<SkeletonFrame3D> frames_;
};

}  // namespace cave
