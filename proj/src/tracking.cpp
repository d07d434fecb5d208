#include "cave/tracking.hpp"

#include "cave/assignment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace cave {

namespace {

using Vec7 = Eigen::Matrix<Scalar, 7, 1>;
using Mat7 = Eigen::Matrix<Scalar, 7, 7>;
using Mat47 = Eigen::Matrix<Scalar, 4, 7>;

Mat7 transition_matrix() {
    Mat7 f = Mat7::Identity();
    f(0, 4) = f(1, 5) = f(2, 6) = 1;
    return f;
}

Mat47 measurement_matrix() {
    Mat47 h = Mat47::Zero();
    h(0, 0) = h(1, 1) = h(2, 2) = h(3, 3) = 1;
    return h;
}

Mat7 process_noise() {
    Vec7 q;
    q << 1, 1, 1, 0.01, 0.01, 0.01, 1e-4;
    return q.asDiagonal();
}

Mat4 measurement_noise() {
    // box centers come from noisy keypoint extents, so the position
    // channels carry a few-pixel standard deviation
    Vec4 r;
    r << 5, 5, 10, 0.01;
    return r.asDiagonal();
}

Mat7 bootstrap_covariance() {
    Vec7 p;
    p << 10, 10, 10, 1, 1e4, 1e4, 1e4;
    return p.asDiagonal();
}

}  // namespace

Scalar box_iou(const Vec4& a, const Vec4& b) {
    const Scalar x1 = std::max(a(0), b(0));
    const Scalar y1 = std::max(a(1), b(1));
    const Scalar x2 = std::min(a(0) + a(2), b(0) + b(2));
    const Scalar y2 = std::min(a(1) + a(3), b(1) + b(3));
    const Scalar inter = std::max<Scalar>(0, x2 - x1) * std::max<Scalar>(0, y2 - y1);
    const Scalar uni = a(2) * a(3) + b(2) * b(3) - inter;
    return uni > 0 ? inter / uni : 0;
}

Vec4 KalmanBox::box_to_z(const Vec4& box) {
    const Scalar cx = box(0) + box(2) / 2;
    const Scalar cy = box(1) + box(3) / 2;
    const Scalar s = box(2) * box(3);
    const Scalar r = box(3) > 0 ? box(2) / box(3) : 1;
    return Vec4(cx, cy, s, r);
}

Vec4 KalmanBox::z_to_box(const Vec4& z) {
    const Scalar w = std::sqrt(std::max<Scalar>(z(2) * z(3), 1e-9));
    const Scalar h = z(3) > 1e-12 ? w / z(3) : w;
    return Vec4(z(0) - w / 2, z(1) - h / 2, w, h);
}

KalmanBox::KalmanBox(const Vec4& box) { reset(box); }

void KalmanBox::reset(const Vec4& box) {
    x_.setZero();
    x_.head<4>() = box_to_z(box);
    p_ = bootstrap_covariance();
}

void KalmanBox::predict() {
    if (x_(2) + x_(6) <= 0) x_(6) = 0;  // keep the area positive
    const Mat7 f = transition_matrix();
    x_ = f * x_;
    x_(2) = std::max<Scalar>(x_(2), 1.0);
    p_ = f * p_ * f.transpose() + process_noise();
}

void KalmanBox::update(const Vec4& box) {
    const Mat47 h = measurement_matrix();
    const Vec4 z = box_to_z(box);
    const Vec4 innovation = z - h * x_;
    const Mat4 s = h * p_ * h.transpose() + measurement_noise();
    const Eigen::Matrix<Scalar, 7, 4> k = p_ * h.transpose() * s.inverse();
    x_ += k * innovation;
    x_(2) = std::max<Scalar>(x_(2), 1.0);
    p_ = (Mat7::Identity() - k * h) * p_;
    p_ = 0.5 * (p_ + p_.transpose()).eval();  // keep symmetric
}

Vec4 KalmanBox::box() const { return z_to_box(x_.head<4>()); }

Track2D::Track2D(const Detection2D& det, int id, int frame)
    : track_id(id), filter(det.box), last_detection(det), observation_history{det.box} {
    hits = 1;
    last_update_frame = frame;
}

Vec2 Track2D::observed_velocity_direction() const {
    if (observation_history.size() < 2) return Vec2::Zero();
    const Vec4& oldest = observation_history.front();
    const Vec4& newest = observation_history.back();
    const Vec2 d(newest(0) + newest(2) / 2 - oldest(0) - oldest(2) / 2,
                 newest(1) + newest(3) / 2 - oldest(1) - oldest(3) / 2);
    const Scalar n = d.norm();
    return n > 1e-6 ? Vec2(d / n) : Vec2::Zero();
}

AssociationResult associate(const std::vector<Vec4>& predicted_boxes,
                            const std::vector<Track2D>& tracks,
                            const std::vector<Detection2D>& detections,
                            Scalar iou_threshold, Scalar momentum_weight) {
    AssociationResult out;
    const int nt = static_cast<int>(tracks.size());
    const int nd = static_cast<int>(detections.size());
    if (nt == 0 || nd == 0) {
        for (int i = 0; i < nt; ++i) out.unmatched_tracks.push_back(i);
        for (int j = 0; j < nd; ++j) out.unmatched_detections.push_back(j);
        return out;
    }
    MatX iou(nt, nd);
    MatX cost(nt, nd);
    for (int i = 0; i < nt; ++i) {
        const Vec2 dir = tracks[i].observed_velocity_direction();
        const Vec4& last_box = tracks[i].observation_history.back();
        const Vec2 last_center(last_box(0) + last_box(2) / 2, last_box(1) + last_box(3) / 2);
        for (int j = 0; j < nd; ++j) {
            iou(i, j) = box_iou(predicted_boxes[i], detections[j].box);
            Scalar angle_cost = 0;
            if (dir.squaredNorm() > 0) {
                const Vec2 cand(detections[j].box(0) + detections[j].box(2) / 2 - last_center.x(),
                                detections[j].box(1) + detections[j].box(3) / 2 - last_center.y());
                const Scalar n = cand.norm();
                if (n > 1e-6) {
                    const Scalar c = std::clamp<Scalar>(dir.dot(cand / n), -1.0, 1.0);
                    angle_cost = std::acos(c) / M_PI;  // 0 aligned .. 1 opposite
                }
            }
            cost(i, j) = (1.0 - iou(i, j)) + momentum_weight * angle_cost;
        }
    }
    const Assignment assignment = solve_assignment(cost);
    std::vector<char> det_used(nd, false);
    for (int i = 0; i < nt; ++i) {
        const int j = assignment.row_to_col[i];
        if (j >= 0 && iou(i, j) >= iou_threshold) {
            out.matches.emplace_back(i, j);
            det_used[j] = true;
        } else {
            out.unmatched_tracks.push_back(i);
        }
    }
    for (int j = 0; j < nd; ++j) {
        if (!det_used[j]) out.unmatched_detections.push_back(j);
    }
    return out;
}

void SortTracker::update_track(Track2D& track, const Detection2D& det, int frame_index) {
    const int gap = frame_index - track.last_update_frame - 1;
    if (gap >= 1 && params_.enable_reupdate && !track.observation_history.empty()) {
        // Observation-centric re-update: restart the filter at the last real
        // observation and replay linearly interpolated virtual observations
        // across the gap, so the velocity reflects the motion that actually
        // happened while the track was unobserved.
        const Vec4 prev = track.observation_history.back();
        track.filter.reset(prev);
        for (int k = 1; k <= gap; ++k) {
            const Scalar a = static_cast<Scalar>(k) / static_cast<Scalar>(gap + 1);
            const Vec4 virtual_box = (1.0 - a) * prev + a * det.box;
            track.filter.predict();
            track.filter.update(virtual_box);
        }
        track.filter.predict();
    }
    track.filter.update(det.box);
    track.last_detection = det;
    track.observation_history.push_back(det.box);
    while (static_cast<int>(track.observation_history.size()) > params_.history_size) {
        track.observation_history.pop_front();
    }
    track.hits += 1;
    track.frames_since_update = 0;
    track.last_update_frame = frame_index;
    if (track.hits >= params_.min_hits) track.status = TrackStatus::Confirmed;
}

std::vector<Track2D> SortTracker::step(const std::vector<Detection2D>& detections,
                                       int frame_index) {
    if (frame_index <= last_frame_) {
        throw NonMonotoneFrame("frame index " + std::to_string(frame_index) +
                               " not after " + std::to_string(last_frame_));
    }
    last_frame_ = frame_index;

    std::vector<Vec4> predicted;
    predicted.reserve(tracks_.size());
    for (auto& track : tracks_) {
        track.filter.predict();
        predicted.push_back(track.filter.box());
    }

    const AssociationResult assoc = associate(predicted, tracks_, detections,
                                              params_.iou_threshold,
                                              params_.momentum_weight);
    for (const auto& [ti, dj] : assoc.matches) {
        update_track(tracks_[ti], detections[dj], frame_index);
    }
    for (const int ti : assoc.unmatched_tracks) {
        tracks_[ti].frames_since_update += 1;
        if (tracks_[ti].status == TrackStatus::Confirmed) {
            tracks_[ti].status = TrackStatus::Lost;
        }
    }
    for (const int dj : assoc.unmatched_detections) {
        tracks_.emplace_back(detections[dj], next_id_++, frame_index);
        if (params_.min_hits <= 1) tracks_.back().status = TrackStatus::Confirmed;
    }
    std::erase_if(tracks_, [this](const Track2D& t) {
        return t.frames_since_update > params_.max_age;
    });

    std::vector<Track2D> output;
    for (const auto& track : tracks_) {
        if (track.status == TrackStatus::Confirmed && track.frames_since_update == 0) {
            output.push_back(track);
        }
    }
    return output;
}

}  // namespace cave
