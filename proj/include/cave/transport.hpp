#pragma once

#include "cave/types.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace cave {

CAVE_DEFINE_ERROR(BadMagic);
CAVE_DEFINE_ERROR(BadVersion);
CAVE_DEFINE_ERROR(BadLength);
CAVE_DEFINE_ERROR(BadMessageType);
CAVE_DEFINE_ERROR(BadActionCode);
CAVE_DEFINE_ERROR(YawOutOfRange);
CAVE_DEFINE_ERROR(SocketError);

struct LocomotionCommand {
    std::uint32_t person_id = 0;
    ActionLabel label = ActionLabel::StandStill;
    Scalar confidence = 0;  // [0, 1]
    Scalar yaw = 0;         // radians, (-pi, pi]
    Vec2 velocity = Vec2::Zero();
    std::uint64_t timestamp_us = 0;
};

struct MapActionParams {
    Scalar speed_mps = 1.0;
};

// StandStill -> zero velocity; StepForward along yaw; StepLeft/StepRight
// along yaw +/- 90 degrees.
LocomotionCommand map_action(std::uint32_t person_id, ActionLabel label,
                             Scalar confidence, Scalar yaw,
                             std::uint64_t timestamp_us,
                             const MapActionParams& params = {});

inline constexpr std::size_t kPacketSize = 24;
inline constexpr std::array<std::uint8_t, 4> kPacketMagic = {0x43, 0x41, 0x56, 0x4C};
inline constexpr std::uint8_t kProtocolVersion = 1;
inline constexpr std::uint8_t kTypeCommand = 1;
inline constexpr std::uint8_t kTypeHeartbeat = 2;

using PacketBytes = std::array<std::uint8_t, kPacketSize>;

struct DecodedPacket {
    std::uint8_t type = kTypeCommand;
    LocomotionCommand command;  // zeroed for heartbeats

    bool is_heartbeat() const { return type == kTypeHeartbeat; }
};

// 24-byte big-endian layout:
//   0-3   magic "CAVL"
//   4     version (1)
//   5     type (1 command, 2 heartbeat)
//   6-7   reserved, zero
//   8-15  timestamp, microseconds, u64
//   16-19 person id, u32
//   20    action code 0..3
//   21    confidence, round(p * 255)
//   22-23 yaw, signed centidegrees in [-18000, 18000]
PacketBytes encode(const LocomotionCommand& command);
PacketBytes encode_heartbeat(std::uint64_t timestamp_us);
DecodedPacket decode(const std::uint8_t* data, std::size_t length,
                     const MapActionParams& params = {});
DecodedPacket decode(const PacketBytes& bytes, const MapActionParams& params = {});

struct Endpoint {
    std::string host = "127.0.0.1";
    std::uint16_t port = 47474;
};

// Default port, overridable through the CAVEMOTION_PORT environment variable.
std::uint16_t default_port();

class UdpSender {
public:
    explicit UdpSender(const Endpoint& endpoint);
    ~UdpSender();
    UdpSender(const UdpSender&) = delete;
    UdpSender& operator=(const UdpSender&) = delete;

    void send(const PacketBytes& bytes);
    void send_command(const LocomotionCommand& command);
    void send_heartbeat(std::uint64_t timestamp_us);

private:
    int fd_ = -1;
};

class UdpReceiver {
public:
    explicit UdpReceiver(std::uint16_t port, const std::string& bind_host = "127.0.0.1");
    ~UdpReceiver();
    UdpReceiver(const UdpReceiver&) = delete;
    UdpReceiver& operator=(const UdpReceiver&) = delete;

    // Blocks up to timeout; nullopt on timeout. Malformed datagrams are
    // counted and skipped, the wait continues on the remaining budget.
    std::optional<DecodedPacket> receive(Scalar timeout_s);

    std::uint16_t port() const { return port_; }
    int decode_errors() const { return decode_errors_; }

private:
    int fd_ = -1;
    std::uint16_t port_ = 0;
    int decode_errors_ = 0;
};

struct RateControllerParams {
    std::vector<int> fps_ladder = {15, 20, 25, 30};
    int initial_fps = 30;
    Scalar latency_smoothing = 0.4;   // EMA weight for new latency samples
    Scalar headroom_fraction = 0.7;   // raise when below this fraction of budget
    int raise_after_frames = 30;
};

// Drops the target one ladder step when the smoothed total latency
// exceeds the frame budget, raises one step after a sustained run under
// the headroom fraction. Target never leaves [min, max] of the ladder.
class RateController {
public:
    explicit RateController(const RateControllerParams& params = {});

    int update(Scalar total_latency_ms);
    int target_fps() const { return params_.fps_ladder[index_]; }
    int min_fps() const { return params_.fps_ladder.front(); }
    int max_fps() const { return params_.fps_ladder.back(); }
    Scalar smoothed_latency_ms() const { return latency_ms_; }

private:
    RateControllerParams params_;
    int index_ = 0;
    Scalar latency_ms_ = 0;
    bool primed_ = false;
    int under_budget_streak_ = 0;
};

struct TrajectoryPoint {
    std::uint64_t timestamp_us = 0;
    Vec2 position = Vec2::Zero();
    ActionLabel label = ActionLabel::StandStill;
    std::uint32_t person_id = 0;
};

// Render-side stand-in: integrates velocity over command inter-arrival
// time and logs the trajectory. Stale packets (timestamp at or before the
// last applied one, or older than the staleness horizon behind the newest
// seen) are ignored.
class ReceiverStub {
public:
    explicit ReceiverStub(std::uint16_t port, Scalar staleness_horizon_s = 0.2);

    // Process one datagram (or time out); true when a packet arrived.
    bool poll(Scalar timeout_s);
    // Drain until `deadline_commands` commands were applied or idle for
    // idle_timeout_s.
    void run(int deadline_commands, Scalar idle_timeout_s);

    const std::vector<TrajectoryPoint>& trajectory() const { return trajectory_; }
    const Vec2& position() const { return position_; }
    int commands_applied() const { return commands_applied_; }
    int stale_dropped() const { return stale_dropped_; }
    int decode_errors() const { return receiver_.decode_errors(); }
    std::uint16_t port() const { return receiver_.port(); }

    void save_trajectory(const std::string& path) const;

private:
    UdpReceiver receiver_;
    std::uint64_t horizon_us_;
    Vec2 position_ = Vec2::Zero();
    bool has_last_ = false;
    std::uint64_t last_applied_us_ = 0;
    std::uint64_t newest_seen_us_ = 0;
    Vec2 last_velocity_ = Vec2::Zero();
    std::vector<TrajectoryPoint> trajectory_;
    int commands_applied_ = 0;
    int stale_dropped_ = 0;
};

}  // namespace cave
