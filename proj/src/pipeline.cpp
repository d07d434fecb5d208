#include "cave/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <thread>

namespace cave {

namespace {

using Clock = std::chrono::steady_clock;

Scalar ms_since(const Clock::time_point& start) {
    return std::chrono::duration<Scalar, std::milli>(Clock::now() - start).count();
}

struct FrameBatch {
    int index = 0;
    Scalar sim_time = 0;
    std::vector<SkeletonFrame3D> truth;
    std::vector<std::vector<Detection2D>> detections;  // per camera
};

struct TrackBatch {
    int index = 0;
    Scalar sim_time = 0;
    std::vector<SkeletonFrame3D> truth;
    std::vector<std::vector<Track2D>> tracks;  // per camera, confirmed
};

struct WindowBatch {
    int index = 0;
    Scalar sim_time = 0;
    struct PersonWindow {
        int person_id = 0;
        std::vector<SkeletonFrame3D> window;  // full W frames
        SkeletonFrame3D latest;               // newest reconstructed frame
    };
    std::vector<PersonWindow> persons;
};

struct DecisionBatch {
    int index = 0;
    Scalar sim_time = 0;
    struct PersonDecision {
        int person_id = 0;
        ActionLabel label = ActionLabel::StandStill;
        Scalar confidence = 0;
        Scalar yaw = 0;
    };
    std::vector<PersonDecision> decisions;
};

struct StageGauge {
    std::atomic<Scalar> ema_ms{0};
    void update(Scalar ms) {
        const Scalar prev = ema_ms.load(std::memory_order_relaxed);
        ema_ms.store(prev == 0 ? ms : 0.7 * prev + 0.3 * ms, std::memory_order_relaxed);
    }
};

void accumulate(StageStats* stats, Scalar ms) {
    stats->mean_ms += ms;
    stats->max_ms = std::max(stats->max_ms, ms);
    stats->frames += 1;
}

}  // namespace

PipelineResult run_pipeline(const PipelineConfig& config) {
    PipelineResult result;
    const auto wall_start = Clock::now();

    const auto truth_frames = render_script(config.script);
    const int total_frames =
        static_cast<int>(std::lround(config.script.end_time() * kFrameRateHz));
    std::map<int, std::vector<SkeletonFrame3D>> frames_by_index;
    for (const auto& f : truth_frames) {
        frames_by_index[static_cast<int>(std::lround(f.timestamp * kFrameRateHz))]
            .push_back(f);
    }

    BoundedQueue<FrameBatch> q_frames(config.queue_capacity);
    BoundedQueue<TrackBatch> q_tracks(config.queue_capacity);
    BoundedQueue<WindowBatch> q_windows(config.queue_capacity);
    BoundedQueue<DecisionBatch> q_decisions(config.queue_capacity);

    std::array<StageGauge, 4> gauges;
    RateController rate(config.rate);
    std::atomic<int> dropped{0};

    std::ofstream track_log, latency_log, command_log, gt_log;
    const bool logging = !config.out_dir.empty();
    if (logging) {
        std::filesystem::create_directories(config.out_dir);
        track_log.open(config.out_dir + "/tracks.txt");
        track_log << "# frame camera track_id status x y w h truth_person\n";
        latency_log.open(config.out_dir + "/latency.txt");
        latency_log << "# frame track_ms recon_ms recog_ms send_ms total_ms target_fps\n";
        command_log.open(config.out_dir + "/commands.txt");
        command_log << "# t_us person label confidence yaw vx vy\n";
        command_log.precision(17);
        gt_log.open(config.out_dir + "/reconstruction_error.txt");
        gt_log << "# frame person joint_rmse_m joints\n";
        gt_log.precision(17);
    }

    // ---- stage 1: observe + per-camera tracking -------------------------
    std::thread track_thread([&] {
        std::vector<SortTracker> trackers;
        trackers.reserve(config.cameras.size());
        for (size_t c = 0; c < config.cameras.size(); ++c) {
            trackers.emplace_back(config.tracker);
        }
        std::map<std::pair<int, int>, int> last_track_of_person;  // (cam, person) -> id
        auto next_tick = Clock::now();
        for (int index = 0; index < total_frames; ++index) {
            if (config.paced) {
                next_tick += std::chrono::microseconds(
                    static_cast<long>(1e6 / rate.target_fps()));
                std::this_thread::sleep_until(next_tick);
            }
            const auto t0 = Clock::now();
            FrameBatch batch;
            batch.index = index;
            batch.sim_time = index / kFrameRateHz;
            const auto it = frames_by_index.find(index);
            if (it != frames_by_index.end()) batch.truth = it->second;
            batch.detections.resize(config.cameras.size());
            for (const auto& truth : batch.truth) {
                auto dets = observe(truth, config.cameras, config.script.noise,
                                    split_seed(config.script.seed,
                                               0x8000000ULL + static_cast<std::uint64_t>(index)));
                for (auto& d : dets) {
                    for (size_t c = 0; c < config.cameras.size(); ++c) {
                        if (config.cameras[c].id == d.camera_id) {
                            batch.detections[c].push_back(std::move(d));
                            break;
                        }
                    }
                }
            }
            TrackBatch tracks;
            tracks.index = index;
            tracks.sim_time = batch.sim_time;
            tracks.truth = batch.truth;
            tracks.tracks.resize(config.cameras.size());
            for (size_t c = 0; c < config.cameras.size(); ++c) {
                tracks.tracks[c] = trackers[c].step(batch.detections[c], index);
                for (const auto& tr : tracks.tracks[c]) {
                    const int person = tr.last_detection.truth_person_id;
                    if (person >= 0) {
                        const auto key = std::make_pair(static_cast<int>(c), person);
                        const auto prev = last_track_of_person.find(key);
                        if (prev != last_track_of_person.end() &&
                            prev->second != tr.track_id) {
                            ++result.id_switches;
                        }
                        last_track_of_person[key] = tr.track_id;
                    }
                    if (logging) {
                        const Vec4 box = tr.filter.box();
                        track_log << index << ' ' << config.cameras[c].id << ' '
                                  << tr.track_id << ' '
                                  << (tr.status == TrackStatus::Confirmed ? "C" : "T")
                                  << ' ' << box(0) << ' ' << box(1) << ' ' << box(2)
                                  << ' ' << box(3) << ' ' << person << '\n';
                    }
                }
            }
            const Scalar ms = ms_since(t0);
            gauges[0].update(ms);
            accumulate(&result.stages[0], ms);
            result.frames_produced += 1;
            dropped += q_tracks.push(std::move(tracks));

            const Scalar total_ms =
                gauges[0].ema_ms + gauges[1].ema_ms + gauges[2].ema_ms + gauges[3].ema_ms;
            const int fps = rate.update(total_ms);
            if (result.fps_history.empty() || result.fps_history.back().second != fps) {
                result.fps_history.emplace_back(index, fps);
            }
        }
        q_tracks.close();
    });

    // ---- stage 2: cross-view fusion + triangulation ---------------------
    std::thread recon_thread([&] {
        CrossViewMatcher matcher(config.cross_view_gate_px);
        std::map<int, SkeletonSequence> sequences;
        while (auto batch = q_tracks.pop()) {
            const auto t0 = Clock::now();
            const CrossViewMatchResult matched =
                matcher.match(batch->tracks, config.cameras);
            WindowBatch windows;
            windows.index = batch->index;
            windows.sim_time = batch->sim_time;
            for (const auto& group : matched.groups) {
                SkeletonFrame3D frame = reconstruct_skeleton(
                    group, config.cameras, batch->sim_time, config.reconstruction);
                // evaluation join against the ground truth
                const Track2D* member = group.members.empty() ? nullptr : group.members[0];
                if (member && member->last_detection.truth_person_id >= 0) {
                    for (const auto& truth : batch->truth) {
                        if (truth.person_id != member->last_detection.truth_person_id) {
                            continue;
                        }
                        Scalar sum = 0;
                        int n = 0;
                        for (int j = 0; j < kNumJoints; ++j) {
                            if (!frame.joint_valid(j) || !truth.joint_valid(j)) continue;
                            sum += (frame.joints[j] - truth.joints[j]).squaredNorm();
                            ++n;
                        }
                        if (n > 0) {
                            const Scalar rmse = std::sqrt(sum / n);
                            result.mean_joint_rmse_m += rmse;
                            result.joint_rmse_frames += 1;
                            if (logging) {
                                gt_log << batch->index << ' ' << group.person_id << ' '
                                       << rmse << ' ' << n << '\n';
                            }
                        }
                    }
                }
                auto [it, inserted] = sequences.try_emplace(
                    group.person_id, group.person_id, config.model.config.window);
                auto window = it->second.append(frame);
                if (window) {
                    WindowBatch::PersonWindow pw;
                    pw.person_id = group.person_id;
                    pw.window = std::move(*window);
                    pw.latest = frame;
                    windows.persons.push_back(std::move(pw));
                }
            }
            const Scalar ms = ms_since(t0);
            gauges[1].update(ms);
            accumulate(&result.stages[1], ms);
            dropped += q_windows.push(std::move(windows));
        }
        q_windows.close();
    });

    // ---- stage 3: recognition ------------------------------------------
    std::thread recog_thread([&] {
        struct PersonState {
            std::optional<Vec4> ema;
            DecisionState decision;
            YawSmoother yaw{0.3};
        };
        std::map<int, PersonState> states;
        while (auto batch = q_windows.pop()) {
            const auto t0 = Clock::now();
            if (config.inject_latency_ms > 0) {
                std::this_thread::sleep_for(std::chrono::duration<Scalar, std::milli>(
                    config.inject_latency_ms));
            }
            DecisionBatch decisions;
            decisions.index = batch->index;
            decisions.sim_time = batch->sim_time;
            for (const auto& pw : batch->persons) {
                auto& st = states[pw.person_id];
                DecisionBatch::PersonDecision out;
                out.person_id = pw.person_id;
                try {
                    const NormalizedWindow norm = normalize(pw.window);
                    const VecX features = extract_features(norm, config.model.config);
                    const Vec4 probs = classify(config.model, features);
                    st.ema = smooth_ema(st.ema, probs, config.ema_alpha);
                    out.label = decide(&st.decision, *st.ema, config.rules);
                    out.confidence = (*st.ema)(static_cast<int>(out.label));
                    out.yaw = st.yaw.update(estimate_orientation(pw.latest));
                } catch (const Error&) {
                    out.label = st.decision.label;  // hold the previous decision
                    out.confidence = 0;
                    out.yaw = st.yaw.value().value_or(0);
                }
                decisions.decisions.push_back(out);
            }
            const Scalar ms = ms_since(t0);
            gauges[2].update(ms);
            accumulate(&result.stages[2], ms);
            dropped += q_decisions.push(std::move(decisions));
        }
        q_decisions.close();
    });

    // ---- stage 4: transmit ----------------------------------------------
    std::thread send_thread([&] {
        UdpSender sender(config.endpoint);
        Scalar last_send_sim = -1e9;
        while (auto batch = q_decisions.pop()) {
            const auto t0 = Clock::now();
            for (const auto& d : batch->decisions) {
                const auto ts =
                    static_cast<std::uint64_t>(std::llround(batch->sim_time * 1e6));
                const LocomotionCommand cmd =
                    map_action(static_cast<std::uint32_t>(d.person_id), d.label,
                               d.confidence, d.yaw, ts, config.locomotion);
                sender.send_command(cmd);
                result.commands.push_back(cmd);
                last_send_sim = batch->sim_time;
                if (logging) {
                    command_log << cmd.timestamp_us << ' ' << cmd.person_id << ' '
                                << to_string(cmd.label) << ' ' << cmd.confidence << ' '
                                << cmd.yaw << ' ' << cmd.velocity.x() << ' '
                                << cmd.velocity.y() << '\n';
                }
            }
            if (batch->decisions.empty() &&
                batch->sim_time - last_send_sim >= config.heartbeat_period_s) {
                sender.send_heartbeat(
                    static_cast<std::uint64_t>(std::llround(batch->sim_time * 1e6)));
                result.heartbeats_sent += 1;
                last_send_sim = batch->sim_time;
            }
            const Scalar ms = ms_since(t0);
            gauges[3].update(ms);
            accumulate(&result.stages[3], ms);
            result.frames_completed += 1;
            if (logging) {
                latency_log << batch->index << ' ' << gauges[0].ema_ms << ' '
                            << gauges[1].ema_ms << ' ' << gauges[2].ema_ms << ' '
                            << gauges[3].ema_ms << ' '
                            << (gauges[0].ema_ms + gauges[1].ema_ms + gauges[2].ema_ms +
                                gauges[3].ema_ms)
                            << ' ' << rate.target_fps() << '\n';
            }
        }
    });

    track_thread.join();
    recon_thread.join();
    recog_thread.join();
    send_thread.join();

    result.frames_dropped = dropped.load();
    for (auto& s : result.stages) {
        if (s.frames > 0) s.mean_ms /= static_cast<Scalar>(s.frames);
    }
    if (result.joint_rmse_frames > 0) {
        result.mean_joint_rmse_m /= static_cast<Scalar>(result.joint_rmse_frames);
    }
    result.wall_seconds =
        std::chrono::duration<Scalar>(Clock::now() - wall_start).count();
    return result;
}

}  // namespace cave
