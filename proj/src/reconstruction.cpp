#include "cave/reconstruction.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

namespace cave {

namespace {

constexpr Scalar kInf = std::numeric_limits<Scalar>::infinity();

Scalar reprojection_residual(const CameraModel& camera, const PixelPoint& observed,
                             const WorldPoint& point) {
    try {
        return (project(camera, point) - observed).norm();
    } catch (const NonPositiveDepth&) {
        return kInf;
    }
}

TriangulatedPoint triangulate_subset(const std::vector<PointObservation>& obs) {
    // rows from the cross product of the normalized ray with [R | t] X = 0
    MatX a(2 * obs.size(), 4);
    for (size_t i = 0; i < obs.size(); ++i) {
        const CameraModel& cam = *obs[i].camera;
        const Vec2 xn = pixel_to_normalized(cam.intrinsics, obs[i].pixel);
        Mat34 rt;
        rt.leftCols<3>() = cam.pose.rotation;
        rt.col(3) = cam.pose.translation;
        const Scalar w = std::sqrt(std::max<Scalar>(obs[i].confidence, 1e-6));
        a.row(2 * i) = w * (xn.x() * rt.row(2) - rt.row(0));
        a.row(2 * i + 1) = w * (xn.y() * rt.row(2) - rt.row(1));
    }
    Eigen::JacobiSVD<MatX> svd(a, Eigen::ComputeThinV);
    const Vec4 h = svd.matrixV().col(3);
    if (std::abs(h(3)) < 1e-12) {
        throw CheiralityFailure("triangulated point at infinity");
    }
    TriangulatedPoint out;
    out.point = h.head<3>() / h(3);
    out.views_used = static_cast<int>(obs.size());
    Scalar sum = 0;
    for (const auto& o : obs) {
        sum += reprojection_residual(*o.camera, o.pixel, out.point);
    }
    out.mean_residual_px = sum / static_cast<Scalar>(obs.size());
    return out;
}

}  // namespace

TriangulatedPoint triangulate_point(const std::vector<PointObservation>& observations) {
    std::set<int> distinct;
    for (const auto& o : observations) {
        if (o.camera) distinct.insert(o.camera->id);
    }
    if (observations.size() < 2 || distinct.size() < 2) {
        throw InsufficientViews("triangulation needs >= 2 distinct views");
    }
    std::vector<PointObservation> active = observations;
    while (true) {
        const TriangulatedPoint result = triangulate_subset(active);
        bool all_front = true;
        for (const auto& o : active) {
            if (camera_depth(*o.camera, result.point) <= 0) {
                all_front = false;
                break;
            }
        }
        if (all_front) return result;
        if (active.size() <= 2) {
            throw CheiralityFailure("cannot satisfy positive depth with two views");
        }
        // drop the worst-residual view and retry
        size_t worst = 0;
        Scalar worst_res = -1;
        for (size_t i = 0; i < active.size(); ++i) {
            const Scalar res =
                reprojection_residual(*active[i].camera, active[i].pixel, result.point);
            if (res > worst_res) {
                worst_res = res;
                worst = i;
            }
        }
        active.erase(active.begin() + static_cast<std::ptrdiff_t>(worst));
    }
}

Mat3 fundamental_matrix(const CameraModel& a, const CameraModel& b) {
    const Mat3 r_rel = b.pose.rotation * a.pose.rotation.transpose();
    const Vec3 t_rel = b.pose.translation - r_rel * a.pose.translation;
    const Mat3 essential = skew(t_rel) * r_rel;
    return b.intrinsics.matrix().inverse().transpose() * essential *
           a.intrinsics.matrix().inverse();
}

Scalar torso_epipolar_distance(const CameraModel& cam_a, const Detection2D& det_a,
                               const CameraModel& cam_b, const Detection2D& det_b) {
    static const int torso[4] = {kLeftShoulder, kRightShoulder, kLeftHip, kRightHip};
    const Mat3 f_ab = fundamental_matrix(cam_a, cam_b);
    const Mat3 f_ba = f_ab.transpose();
    Scalar sum = 0;
    int count = 0;
    for (const int j : torso) {
        if (!det_a.joint_valid(j) || !det_b.joint_valid(j)) continue;
        const Vec3 xa(det_a.keypoints[j].x(), det_a.keypoints[j].y(), 1.0);
        const Vec3 xb(det_b.keypoints[j].x(), det_b.keypoints[j].y(), 1.0);
        const Vec3 line_b = f_ab * xa;  // epipolar line of xa in image b
        const Vec3 line_a = f_ba * xb;
        const Scalar db = std::abs(xb.dot(line_b)) / line_b.head<2>().norm();
        const Scalar da = std::abs(xa.dot(line_a)) / line_a.head<2>().norm();
        sum += 0.5 * (da + db);
        ++count;
    }
    return count > 0 ? sum / count : kInf;
}

CrossViewMatchResult CrossViewMatcher::match(
    const std::vector<std::vector<Track2D>>& tracks_per_camera,
    const std::vector<CameraModel>& cameras) {
    struct Entry {
        int camera_index;
        const Track2D* track;
    };
    std::vector<Entry> entries;
    for (size_t c = 0; c < tracks_per_camera.size(); ++c) {
        for (const auto& t : tracks_per_camera[c]) {
            entries.push_back({static_cast<int>(c), &t});
        }
    }
    const int n = static_cast<int>(entries.size());

    struct Pair {
        Scalar dist;
        int i, j;
    };
    std::vector<Pair> pairs;
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            if (entries[i].camera_index == entries[j].camera_index) continue;
            const Scalar d = torso_epipolar_distance(
                cameras[entries[i].camera_index], entries[i].track->last_detection,
                cameras[entries[j].camera_index], entries[j].track->last_detection);
            if (d <= gate_px_) pairs.push_back({d, i, j});
        }
    }
    std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
        if (a.dist != b.dist) return a.dist < b.dist;
        return std::tie(a.i, a.j) < std::tie(b.i, b.j);
    });

    // union-find agglomeration, refusing merges that collide on a camera
    std::vector<int> parent(n);
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&](int x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    };
    std::vector<std::set<int>> group_cams(n);
    for (int i = 0; i < n; ++i) group_cams[i].insert(entries[i].camera_index);
    for (const auto& p : pairs) {
        const int ra = find(p.i), rb = find(p.j);
        if (ra == rb) continue;
        bool conflict = false;
        for (const int c : group_cams[rb]) {
            if (group_cams[ra].count(c)) {
                conflict = true;
                break;
            }
        }
        if (conflict) continue;
        parent[rb] = ra;
        group_cams[ra].insert(group_cams[rb].begin(), group_cams[rb].end());
    }

    std::map<int, std::vector<int>> clusters;
    for (int i = 0; i < n; ++i) clusters[find(i)].push_back(i);

    CrossViewMatchResult result;
    std::vector<std::map<int, int>> memberships;
    std::vector<ViewGroup> groups;
    for (const auto& [root, indices] : clusters) {
        if (indices.size() < 2) {
            const auto& e = entries[indices[0]];
            result.unmatched.emplace_back(cameras[e.camera_index].id, e.track->track_id);
            continue;
        }
        ViewGroup g;
        Scalar score = 0;
        int score_n = 0;
        for (const int i : indices) {
            const auto& e = entries[i];
            g.camera_to_track[cameras[e.camera_index].id] = e.track->track_id;
            g.members.push_back(e.track);
            for (const int j : indices) {
                if (j <= i || entries[j].camera_index == e.camera_index) continue;
                score += torso_epipolar_distance(
                    cameras[e.camera_index], e.track->last_detection,
                    cameras[entries[j].camera_index], entries[j].track->last_detection);
                ++score_n;
            }
        }
        g.association_score = score_n > 0 ? score / score_n : 0;
        groups.push_back(std::move(g));
    }

    // person id continuity: majority vote over previous (camera, track) pairs
    std::set<int> used_ids;
    for (auto& g : groups) {
        int best_person = -1, best_votes = 0;
        for (const auto& [person, members] : previous_members_) {
            if (used_ids.count(person)) continue;
            int votes = 0;
            for (const auto& [cam, track] : g.camera_to_track) {
                const auto it = members.find(cam);
                if (it != members.end() && it->second == track) ++votes;
            }
            if (votes > best_votes || (votes == best_votes && votes > 0 &&
                                       (best_person < 0 || person < best_person))) {
                best_votes = votes;
                best_person = person;
            }
        }
        g.person_id = best_votes > 0 ? best_person : next_person_id_++;
        used_ids.insert(g.person_id);
    }
    previous_members_.clear();
    for (const auto& g : groups) previous_members_[g.person_id] = g.camera_to_track;
    result.groups = std::move(groups);
    return result;
}

SkeletonFrame3D reconstruct_skeleton(const ViewGroup& group,
                                     const std::vector<CameraModel>& cameras,
                                     Scalar timestamp,
                                     const ReconstructionParams& params) {
    SkeletonFrame3D frame;
    frame.person_id = group.person_id;
    frame.timestamp = timestamp;
    auto camera_by_id = [&cameras](int id) -> const CameraModel* {
        for (const auto& c : cameras) {
            if (c.id == id) return &c;
        }
        return nullptr;
    };
    for (int j = 0; j < kNumJoints; ++j) {
        std::vector<PointObservation> obs;
        for (const Track2D* track : group.members) {
            const Detection2D& det = track->last_detection;
            if (!det.joint_valid(j) || det.confidence[j] < params.min_confidence) continue;
            const CameraModel* cam = camera_by_id(det.camera_id);
            if (!cam) continue;
            obs.push_back({cam, det.keypoints[j], det.confidence[j]});
        }
        if (obs.size() < 2) continue;
        try {
            const TriangulatedPoint tri = triangulate_point(obs);
            if (tri.mean_residual_px > params.residual_gate_px) continue;
            frame.joints[j] = tri.point;
            frame.set_valid(j, true);
        } catch (const Error&) {
            // joint stays invalid
        }
    }
    return frame;
}

std::optional<std::vector<SkeletonFrame3D>> SkeletonSequence::append(
    const SkeletonFrame3D& frame) {
    if (!frames_.empty() && frame.timestamp <= frames_.back().timestamp) {
        throw NonMonotoneTimestamp("timestamp " + std::to_string(frame.timestamp) +
                                   " not after " +
                                   std::to_string(frames_.back().timestamp));
    }
    frames_.push_back(frame);
    while (static_cast<int>(frames_.size()) > capacity_) frames_.pop_front();
    for (int j = 0; j < kNumJoints; ++j) {
        if (frame.joint_valid(j)) fill_holes(j);
    }
    if (static_cast<int>(frames_.size()) == capacity_) {
        return std::vector<SkeletonFrame3D>(frames_.begin(), frames_.end());
    }
    return std::nullopt;
}

void SkeletonSequence::fill_holes(int joint) {
    // newest frame has a valid sample; look back for a hole bounded by a
    // valid sample within max_hole frames
    const int last = static_cast<int>(frames_.size()) - 1;
    int prev_valid = -1;
    for (int i = last - 1; i >= 0 && i >= last - 1 - max_hole_; --i) {
        if (frames_[i].joint_valid(joint)) {
            prev_valid = i;
            break;
        }
    }
    if (prev_valid < 0 || prev_valid == last - 1) return;
    const SkeletonFrame3D& a = frames_[prev_valid];
    const SkeletonFrame3D& b = frames_[last];
    for (int i = prev_valid + 1; i < last; ++i) {
        const Scalar alpha = (frames_[i].timestamp - a.timestamp) /
                             (b.timestamp - a.timestamp);
        frames_[i].joints[joint] =
            (1.0 - alpha) * a.joints[joint] + alpha * b.joints[joint];
        frames_[i].set_valid(joint, true);
        frames_[i].interpolated |= (1u << joint);
    }
}

}  // namespace cave
