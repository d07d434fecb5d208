#include "cave/scene.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

namespace cave {

namespace {

ActionLabel action_from_string(const std::string& s) {
    if (s == "StandStill") return ActionLabel::StandStill;
    if (s == "StepForward") return ActionLabel::StepForward;
    if (s == "StepLeft") return ActionLabel::StepLeft;
    if (s == "StepRight") return ActionLabel::StepRight;
    throw BadScriptFile("unknown action label '" + s + "'");
}

struct SwayParams {
    std::array<Scalar, 3> amp_x{}, omega_x{}, phase_x{};
    std::array<Scalar, 3> amp_y{}, omega_y{}, phase_y{};
};

SwayParams draw_sway(std::mt19937_64& rng, Scalar amplitude) {
    std::uniform_real_distribution<Scalar> u(0.0, 1.0);
    SwayParams s;
    for (int k = 0; k < 3; ++k) {
        s.amp_x[k] = amplitude * (0.5 + 0.5 * u(rng)) / (k + 1);
        s.omega_x[k] = 2.0 * M_PI * (0.2 + 0.25 * (k + 1) * (0.8 + 0.4 * u(rng)));
        s.phase_x[k] = 2.0 * M_PI * u(rng);
        s.amp_y[k] = amplitude * (0.5 + 0.5 * u(rng)) / (k + 1);
        s.omega_y[k] = 2.0 * M_PI * (0.2 + 0.25 * (k + 1) * (0.8 + 0.4 * u(rng)));
        s.phase_y[k] = 2.0 * M_PI * u(rng);
    }
    return s;
}

Vec2 eval_sway(const SwayParams& s, Scalar t) {
    Vec2 out = Vec2::Zero();
    for (int k = 0; k < 3; ++k) {
        out.x() += s.amp_x[k] * std::sin(s.omega_x[k] * t + s.phase_x[k]);
        out.y() += s.amp_y[k] * std::sin(s.omega_y[k] * t + s.phase_y[k]);
    }
    return out;
}

}  // namespace

Scalar SceneScript::end_time() const {
    Scalar end = 0;
    for (const auto& s : segments) end = std::max(end, s.start_time + s.duration);
    return end;
}

std::array<WorldPoint, kNumJoints> neutral_pose() {
    std::array<WorldPoint, kNumJoints> j{};
    j[kNose] = {0.08, 0.00, 1.62};
    j[kLeftEye] = {0.07, 0.03, 1.65};
    j[kRightEye] = {0.07, -0.03, 1.65};
    j[kLeftEar] = {0.02, 0.07, 1.62};
    j[kRightEar] = {0.02, -0.07, 1.62};
    j[kLeftShoulder] = {0.00, 0.19, 1.42};
    j[kRightShoulder] = {0.00, -0.19, 1.42};
    j[kLeftElbow] = {0.00, 0.23, 1.12};
    j[kRightElbow] = {0.00, -0.23, 1.12};
    j[kLeftWrist] = {0.00, 0.24, 0.85};
    j[kRightWrist] = {0.00, -0.24, 0.85};
    j[kLeftHip] = {0.00, 0.10, 0.92};
    j[kRightHip] = {0.00, -0.10, 0.92};
    j[kLeftKnee] = {0.00, 0.11, 0.50};
    j[kRightKnee] = {0.00, -0.11, 0.50};
    j[kLeftAnkle] = {0.00, 0.11, 0.08};
    j[kRightAnkle] = {0.00, -0.11, 0.08};
    return j;
}

std::vector<SkeletonFrame3D> generate_gait(ActionLabel label, Scalar duration_s,
                                           Scalar cadence_hz, std::uint64_t seed) {
    if (duration_s <= 0) throw BadParams("duration must be positive");
    if (cadence_hz < 0.5 || cadence_hz > 3.0) {
        throw BadParams("cadence must lie in [0.5, 3] Hz");
    }
    std::mt19937_64 rng(seed);
    std::normal_distribution<Scalar> gauss(0.0, 1.0);
    const SwayParams sway = draw_sway(rng, 0.006);
    const Scalar jitter_sigma = 0.002;

    const int frames = std::max(1, static_cast<int>(std::lround(duration_s * kFrameRateHz)));
    const auto base = neutral_pose();
    std::vector<SkeletonFrame3D> out;
    out.reserve(frames);
    for (int f = 0; f < frames; ++f) {
        const Scalar t = f / kFrameRateHz;
        const Scalar phi = 2.0 * M_PI * cadence_hz * t;
        SkeletonFrame3D frame;
        frame.timestamp = t;
        frame.joints = base;
        frame.validity = SkeletonFrame3D::all_valid_mask();

        // every offset below vanishes at phi = 0, so all gaits start from
        // the shared neutral pose and transitions are pose-continuous
        switch (label) {
            case ActionLabel::StandStill: {
                const Vec2 s = eval_sway(sway, t);
                for (auto& p : frame.joints) {
                    p.x() += s.x();
                    p.y() += s.y();
                }
                break;
            }
            case ActionLabel::StepForward: {
                const Scalar lift_l = std::max<Scalar>(0.0, std::sin(phi));
                const Scalar lift_r = std::max<Scalar>(0.0, -std::sin(phi));
                const Scalar swing = std::sin(phi);
                frame.joints[kLeftAnkle].z() += 0.14 * lift_l;
                frame.joints[kRightAnkle].z() += 0.14 * lift_r;
                frame.joints[kLeftAnkle].x() += 0.03 * swing;
                frame.joints[kRightAnkle].x() -= 0.03 * swing;
                frame.joints[kLeftKnee].z() += 0.08 * lift_l;
                frame.joints[kRightKnee].z() += 0.08 * lift_r;
                frame.joints[kLeftKnee].x() += 0.05 * lift_l;
                frame.joints[kRightKnee].x() += 0.05 * lift_r;
                frame.joints[kLeftWrist].x() -= 0.16 * swing;
                frame.joints[kRightWrist].x() += 0.16 * swing;
                frame.joints[kLeftElbow].x() -= 0.08 * swing;
                frame.joints[kRightElbow].x() += 0.08 * swing;
                const Scalar bob = 0.015 * (1.0 - std::cos(2.0 * phi));
                for (auto& p : frame.joints) p.z() += bob;
                break;
            }
            case ActionLabel::StepLeft:
            case ActionLabel::StepRight: {
                const bool left = label == ActionLabel::StepLeft;
                const Scalar side = left ? 1.0 : -1.0;
                const int ankle = left ? kLeftAnkle : kRightAnkle;
                const int knee = left ? kLeftKnee : kRightKnee;
                const Scalar lift = std::max<Scalar>(0.0, std::sin(phi));
                frame.joints[ankle].z() += 0.12 * lift;
                frame.joints[ankle].y() += side * 0.08 * lift;
                frame.joints[knee].z() += 0.07 * lift;
                frame.joints[knee].y() += side * 0.05 * lift;
                // weight shifts onto the stance side while the leading leg lifts
                const Scalar shift = -side * 0.04 * std::sin(phi);
                for (auto& p : frame.joints) p.y() += shift;
                const Scalar bob = 0.010 * (1.0 - std::cos(2.0 * phi));
                for (auto& p : frame.joints) p.z() += bob;
                break;
            }
        }
        for (auto& p : frame.joints) {
            p.x() += jitter_sigma * gauss(rng);
            p.y() += jitter_sigma * gauss(rng);
            p.z() += jitter_sigma * gauss(rng);
        }
        out.push_back(frame);
    }
    return out;
}

void place_skeleton(SkeletonFrame3D* frame, const Vec2& base_position, Scalar yaw) {
    const Mat3 rot = rotation_about_z(yaw);
    for (auto& p : frame->joints) {
        p = rot * p;
        p.x() += base_position.x();
        p.y() += base_position.y();
    }
}

std::vector<SkeletonFrame3D> render_script(const SceneScript& script) {
    std::vector<SkeletonFrame3D> out;
    const Scalar end = script.end_time();
    if (end <= 0) return out;
    const int frames = static_cast<int>(std::lround(end * kFrameRateHz));

    // group segments per person, sorted by start time
    std::map<int, std::vector<const ScriptSegment*>> by_person;
    for (const auto& seg : script.segments) by_person[seg.person_id].push_back(&seg);
    for (auto& [person, segs] : by_person) {
        std::sort(segs.begin(), segs.end(), [](const auto* a, const auto* b) {
            return a->start_time < b->start_time;
        });
    }

    struct Rendered {
        const ScriptSegment* seg;
        std::vector<SkeletonFrame3D> frames;
    };
    std::map<int, std::vector<Rendered>> rendered;
    std::uint64_t segment_index = 0;
    for (const auto& seg : script.segments) {
        auto frames_for_seg = generate_gait(seg.label, seg.duration, seg.cadence_hz,
                                            split_seed(script.seed, segment_index++));
        for (auto& f : frames_for_seg) {
            place_skeleton(&f, seg.base_position, seg.facing_yaw);
            f.person_id = seg.person_id;
        }
        rendered[seg.person_id].push_back({&seg, std::move(frames_for_seg)});
    }
    for (auto& [person, items] : rendered) {
        std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
            return a.seg->start_time < b.seg->start_time;
        });
    }

    for (int f = 0; f < frames; ++f) {
        const Scalar t = f / kFrameRateHz;
        for (const auto& [person, items] : rendered) {
            const SkeletonFrame3D* pick = nullptr;
            for (const auto& item : items) {
                const Scalar s = item.seg->start_time;
                const Scalar e = s + item.seg->duration;
                if (t >= s && t < e) {
                    const int idx = std::min<int>(
                        static_cast<int>(item.frames.size()) - 1,
                        static_cast<int>(std::lround((t - s) * kFrameRateHz)));
                    pick = &item.frames[idx];
                    break;
                }
                if (t >= e) pick = &item.frames.back();  // hold last pose in gaps
            }
            if (!pick && !items.empty()) pick = &items.front().frames.front();
            if (!pick) continue;
            SkeletonFrame3D frame = *pick;
            frame.timestamp = t;
            frame.person_id = person;
            out.push_back(frame);
        }
    }
    return out;
}

std::vector<Detection2D> observe(const SkeletonFrame3D& frame,
                                 const std::vector<CameraModel>& cameras,
                                 const NoiseModel& noise, std::uint64_t seed) {
    std::vector<Detection2D> detections;
    for (const auto& camera : cameras) {
        bool occluded = false;
        for (const auto& occ : noise.occlusions) {
            if (occ.camera_id == camera.id && frame.timestamp >= occ.t_begin &&
                frame.timestamp < occ.t_end) {
                occluded = true;
                break;
            }
        }
        if (occluded) continue;

        std::mt19937_64 rng(split_seed(seed, static_cast<std::uint64_t>(camera.id)));
        std::uniform_real_distribution<Scalar> u(0.0, 1.0);
        std::normal_distribution<Scalar> gauss(0.0, 1.0);
        if (noise.miss_probability > 0 && u(rng) < noise.miss_probability) continue;

        Detection2D det;
        det.camera_id = camera.id;
        det.timestamp = frame.timestamp;
        det.truth_person_id = frame.person_id;
        int valid_count = 0;
        Vec2 lo(1e18, 1e18), hi(-1e18, -1e18);
        for (int j = 0; j < kNumJoints; ++j) {
            if (!frame.joint_valid(j)) {
                det.confidence[j] = 0;
                continue;
            }
            PixelPoint px;
            try {
                px = project(camera, frame.joints[j]);
            } catch (const NonPositiveDepth&) {
                det.confidence[j] = 0;
                continue;
            }
            // allow a small margin outside the sensor before declaring a miss
            if (px.x() < -0.1 * camera.width || px.x() > 1.1 * camera.width ||
                px.y() < -0.1 * camera.height || px.y() > 1.1 * camera.height) {
                det.confidence[j] = 0;
                continue;
            }
            px.x() += noise.pixel_sigma * gauss(rng);
            px.y() += noise.pixel_sigma * gauss(rng);
            det.keypoints[j] = px;
            det.confidence[j] = 0.8 + 0.2 * u(rng);
            det.valid_joints |= (1u << j);
            ++valid_count;
            lo = lo.cwiseMin(px);
            hi = hi.cwiseMax(px);
        }
        if (valid_count >= 5) {
            const Vec2 size = hi - lo;
            const Vec2 pad = 0.1 * size;
            det.box << lo.x() - pad.x(), lo.y() - pad.y(), size.x() + 2 * pad.x(),
                size.y() + 2 * pad.y();
            detections.push_back(det);
        }

        if (noise.clutter_rate > 0) {
            std::poisson_distribution<int> poisson(noise.clutter_rate);
            const int n_clutter = poisson(rng);
            for (int c = 0; c < n_clutter; ++c) {
                Detection2D junk;
                junk.camera_id = camera.id;
                junk.timestamp = frame.timestamp;
                junk.truth_person_id = -1;
                const Scalar w = 40 + 120 * u(rng);
                const Scalar h = 80 + 160 * u(rng);
                const Scalar x = u(rng) * (camera.width - w);
                const Scalar y = u(rng) * (camera.height - h);
                junk.box << x, y, w, h;
                for (int j = 0; j < kNumJoints; ++j) {
                    junk.keypoints[j] = PixelPoint(x + w * u(rng), y + h * u(rng));
                    junk.confidence[j] = 0.3 + 0.4 * u(rng);
                    junk.valid_joints |= (1u << j);
                }
                detections.push_back(junk);
            }
        }
    }
    return detections;
}

std::vector<CameraModel> default_camera_rig(const CaveLayout& layout) {
    Scalar half_x = 2.0, half_y = 2.0, height = 2.5;
    if (!layout.panels.empty()) {
        // infer the room extents from the panel corners
        Scalar max_x = 0, max_y = 0, max_z = 0;
        for (const auto& p : layout.panels) {
            for (const Vec2 s : {Vec2(0, 0), Vec2(p.width, 0), Vec2(0, p.height),
                                 Vec2(p.width, p.height)}) {
                const Vec3 c = p.origin + s.x() * p.axis_u + s.y() * p.axis_v;
                max_x = std::max(max_x, std::abs(c.x()));
                max_y = std::max(max_y, std::abs(c.y()));
                max_z = std::max(max_z, c.z());
            }
        }
        half_x = max_x;
        half_y = max_y;
        height = max_z;
    }
    const Scalar inset = 0.05;
    const std::array<Vec2, 4> corners = {
        Vec2(-half_x + inset, -half_y + inset), Vec2(half_x - inset, -half_y + inset),
        Vec2(half_x - inset, half_y - inset), Vec2(-half_x + inset, half_y - inset)};
    const Vec3 target(0, 0, 1.0);
    std::vector<CameraModel> cameras;
    for (int i = 0; i < 4; ++i) {
        CameraModel cam;
        cam.id = i;
        cam.width = 1920;
        cam.height = 1200;
        cam.intrinsics.fx = cam.intrinsics.fy = 1000;
        cam.intrinsics.cx = cam.width / 2.0;
        cam.intrinsics.cy = cam.height / 2.0;
        const Vec3 position(corners[i].x(), corners[i].y(), height - 0.2);
        const Vec3 forward = (target - position).normalized();
        const Vec3 right = forward.cross(Vec3::UnitZ()).normalized();
        const Vec3 down = forward.cross(right);
        Mat3 rot;
        rot.row(0) = right.transpose();
        rot.row(1) = down.transpose();
        rot.row(2) = forward.transpose();
        cam.pose.rotation = rot;
        cam.pose.translation = -rot * position;
        cameras.push_back(cam);
    }
    return cameras;
}

SceneScript load_script(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw BadScriptFile("cannot open script file " + path);
    SceneScript script;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        std::string kind;
        ls >> kind;
        if (kind == "seed") {
            ls >> script.seed;
        } else if (kind == "sigma_px") {
            ls >> script.noise.pixel_sigma;
        } else if (kind == "miss_prob") {
            ls >> script.noise.miss_probability;
        } else if (kind == "clutter_rate") {
            ls >> script.noise.clutter_rate;
        } else if (kind == "occlusion" || kind == "segment") {
            std::map<std::string, std::string> kv;
            std::string token;
            while (ls >> token) {
                const auto eq = token.find('=');
                if (eq == std::string::npos) {
                    throw BadScriptFile("expected key=value, got '" + token + "'");
                }
                kv[token.substr(0, eq)] = token.substr(eq + 1);
            }
            if (kind == "occlusion") {
                OcclusionInterval occ;
                occ.camera_id = std::stoi(kv.at("camera"));
                occ.t_begin = std::stod(kv.at("begin"));
                occ.t_end = std::stod(kv.at("end"));
                script.noise.occlusions.push_back(occ);
            } else {
                ScriptSegment seg;
                seg.person_id = std::stoi(kv.at("person"));
                seg.label = action_from_string(kv.at("label"));
                seg.start_time = std::stod(kv.at("start"));
                seg.duration = std::stod(kv.at("duration"));
                if (kv.count("yaw")) seg.facing_yaw = std::stod(kv.at("yaw"));
                if (kv.count("cadence")) seg.cadence_hz = std::stod(kv.at("cadence"));
                if (kv.count("x")) seg.base_position.x() = std::stod(kv.at("x"));
                if (kv.count("y")) seg.base_position.y() = std::stod(kv.at("y"));
                if (seg.duration <= 0) throw BadScriptFile("segment duration must be > 0");
                script.segments.push_back(seg);
            }
        } else {
            throw BadScriptFile("unknown script record '" + kind + "'");
        }
    }
    return script;
}

void save_script(const SceneScript& script, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw BadScriptFile("cannot write script file " + path);
    out.precision(17);
    out << "# scene script\n";
    out << "seed " << script.seed << '\n';
    out << "sigma_px " << script.noise.pixel_sigma << '\n';
    out << "miss_prob " << script.noise.miss_probability << '\n';
    out << "clutter_rate " << script.noise.clutter_rate << '\n';
    for (const auto& occ : script.noise.occlusions) {
        out << "occlusion camera=" << occ.camera_id << " begin=" << occ.t_begin
            << " end=" << occ.t_end << '\n';
    }
    for (const auto& seg : script.segments) {
        out << "segment person=" << seg.person_id << " label=" << to_string(seg.label)
            << " start=" << seg.start_time << " duration=" << seg.duration
            << " yaw=" << seg.facing_yaw << " cadence=" << seg.cadence_hz
            << " x=" << seg.base_position.x() << " y=" << seg.base_position.y() << '\n';
    }
}

}  // namespace cave
