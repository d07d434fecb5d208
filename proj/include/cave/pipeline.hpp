#pragma once

#include "cave/recognition.hpp"
#include "cave/reconstruction.hpp"
#include "cave/scene.hpp"
#include "cave/tracking.hpp"
#include "cave/transport.hpp"

#include <array>
#include <condition_variable>
#include <deque>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace cave {

// Single-producer single-consumer bounded queue. A push into a full queue
// drops the oldest item so the stream stays fresh under load.
template <typename T>
class BoundedQueue {
public:
    explicit BoundedQueue(std::size_t capacity) : capacity_(capacity) {}

    // Returns the number of items dropped to make room (0 or 1).
    int push(T item) {
        std::unique_lock lock(mutex_);
        int dropped = 0;
        if (items_.size() >= capacity_) {
            items_.pop_front();
            dropped = 1;
        }
        items_.push_back(std::move(item));
        lock.unlock();
        ready_.notify_one();
        return dropped;
    }

    // Blocks until an item or close; nullopt only when closed and drained.
    std::optional<T> pop() {
        std::unique_lock lock(mutex_);
        ready_.wait(lock, [this] { return !items_.empty() || closed_; });
        if (items_.empty()) return std::nullopt;
        T item = std::move(items_.front());
        items_.pop_front();
        return item;
    }

    void close() {
        {
            std::lock_guard lock(mutex_);
            closed_ = true;
        }
        ready_.notify_all();
    }

    std::size_t size() const {
        std::lock_guard lock(mutex_);
        return items_.size();
    }

private:
    std::size_t capacity_;
    mutable std::mutex mutex_;
    std::condition_variable ready_;
    std::deque<T> items_;
    bool closed_ = false;
};

struct PipelineConfig {
    std::vector<CameraModel> cameras;
    ClassifierModel model;
    SceneScript script;
    TrackerParams tracker;
    ReconstructionParams reconstruction;
    Scalar cross_view_gate_px = 20.0;
    Scalar ema_alpha = 0.3;
    DecisionRules rules;
    MapActionParams locomotion;
    Endpoint endpoint;
    bool paced = true;  // pace the source at the controller's target fps
    RateControllerParams rate;
    Scalar inject_latency_ms = 0;  // artificial stage load (rate-control tests)
    std::string out_dir;           // empty: no log files
    std::size_t queue_capacity = 4;
    Scalar heartbeat_period_s = 1.0;
};

struct StageStats {
    Scalar mean_ms = 0;
    Scalar max_ms = 0;
    long frames = 0;
};

struct PipelineResult {
    int frames_produced = 0;
    int frames_completed = 0;
    int frames_dropped = 0;
    Scalar wall_seconds = 0;
    // observe/track, reconstruct, recognize, transmit
    std::array<StageStats, 4> stages;
    std::vector<LocomotionCommand> commands;
    std::vector<std::pair<int, int>> fps_history;  // (frame index, target fps)
    Scalar mean_joint_rmse_m = 0;  // reconstructed vs ground truth
    long joint_rmse_frames = 0;
    int id_switches = 0;  // per-camera track id changes per true person
    int heartbeats_sent = 0;
};

// Runs the four-stage pipeline (observe/track -> reconstruct -> recognize
// -> transmit) over the script, one worker per stage, bounded queues in
// between, and emits commands over UDP.
PipelineResult run_pipeline(const PipelineConfig& config);

}  // namespace cave
