#pragma once

#include "cave/scene.hpp"

#include <deque>
#include <vector>

namespace cave {

CAVE_DEFINE_ERROR(NonMonotoneFrame);

// Intersection-over-union of two x/y/w/h boxes.
Scalar box_iou(const Vec4& a, const Vec4& b);

// Constant-velocity box filter over (cx, cy, s = area, r = aspect) plus
// (vcx, vcy, vs).
class KalmanBox {
public:
    explicit KalmanBox(const Vec4& box);

    void predict();
    void update(const Vec4& box);
    // Re-initialize at `box` with bootstrap covariance (used by the
    // observation-centric re-update before replaying virtual observations).
    void reset(const Vec4& box);

    Vec4 box() const;  // x, y, w, h
    const Eigen::Matrix<Scalar, 7, 1>& state() const { return x_; }
    Eigen::Matrix<Scalar, 7, 1>& state() { return x_; }
    const Eigen::Matrix<Scalar, 7, 7>& covariance() const { return p_; }

    static Vec4 box_to_z(const Vec4& box);  // x/y/w/h -> cx/cy/s/r
    static Vec4 z_to_box(const Vec4& z);

private:
    Eigen::Matrix<Scalar, 7, 1> x_;
    Eigen::Matrix<Scalar, 7, 7> p_;
};

enum class TrackStatus { Tentative, Confirmed, Lost };

struct Track2D {
    int track_id = 0;
    TrackStatus status = TrackStatus::Tentative;
    int hits = 0;
    int frames_since_update = 0;
    int last_update_frame = -1;
    KalmanBox filter;
    Detection2D last_detection;              // keypoints pass through the filter
    std::deque<Vec4> observation_history;    // last K observed boxes

    explicit Track2D(const Detection2D& det, int id, int frame);

    // Unit direction of recent observed motion, zero when undefined.
    Vec2 observed_velocity_direction() const;
};

struct TrackerParams {
    int min_hits = 3;
    int max_age = 30;
    Scalar iou_threshold = 0.3;
    Scalar momentum_weight = 0.2;
    int history_size = 3;
    bool enable_reupdate = true;  // observation-centric re-update after gaps
};

struct AssociationResult {
    std::vector<std::pair<int, int>> matches;  // (track index, detection index)
    std::vector<int> unmatched_tracks;
    std::vector<int> unmatched_detections;
};

// Hungarian assignment on (1 - IoU) + momentum_weight * angle cost, with
// pairs below the IoU threshold rejected afterwards.
AssociationResult associate(const std::vector<Vec4>& predicted_boxes,
                            const std::vector<Track2D>& tracks,
                            const std::vector<Detection2D>& detections,
                            Scalar iou_threshold, Scalar momentum_weight);

class SortTracker {
public:
    explicit SortTracker(const TrackerParams& params = {}) : params_(params) {}

    // predict -> associate -> update; returns snapshots of confirmed tracks
    // updated this frame. Throws NonMonotoneFrame for a repeated or
    // decreasing frame index.
    std::vector<Track2D> step(const std::vector<Detection2D>& detections,
                              int frame_index);

    const std::vector<Track2D>& tracks() const { return tracks_; }
    const TrackerParams& params() const { return params_; }

private:
    void update_track(Track2D& track, const Detection2D& det, int frame_index);

    TrackerParams params_;
    std::vector<Track2D> tracks_;
    int next_id_ = 1;
    int last_frame_ = -1;
};

}  // namespace cave
