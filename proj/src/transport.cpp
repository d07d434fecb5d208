#include "cave/transport.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>

namespace cave {

namespace {

void put_u16(std::uint8_t* p, std::uint16_t v) {
    p[0] = static_cast<std::uint8_t>(v >> 8);
    p[1] = static_cast<std::uint8_t>(v & 0xff);
}

void put_u32(std::uint8_t* p, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) p[i] = static_cast<std::uint8_t>(v >> (8 * (3 - i)));
}

void put_u64(std::uint8_t* p, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) p[i] = static_cast<std::uint8_t>(v >> (8 * (7 - i)));
}

std::uint16_t get_u16(const std::uint8_t* p) {
    return static_cast<std::uint16_t>((p[0] << 8) | p[1]);
}

std::uint32_t get_u32(const std::uint8_t* p) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v = (v << 8) | p[i];
    return v;
}

std::uint64_t get_u64(const std::uint8_t* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v = (v << 8) | p[i];
    return v;
}

constexpr Scalar kCentidegPerRad = 18000.0 / M_PI;

sockaddr_in make_addr(const std::string& host, std::uint16_t port) {
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    if (inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
        throw SocketError("bad IPv4 address '" + host + "'");
    }
    return addr;
}

}  // namespace

LocomotionCommand map_action(std::uint32_t person_id, ActionLabel label,
                             Scalar confidence, Scalar yaw,
                             std::uint64_t timestamp_us,
                             const MapActionParams& params) {
    LocomotionCommand cmd;
    cmd.person_id = person_id;
    cmd.label = label;
    cmd.confidence = std::clamp<Scalar>(confidence, 0.0, 1.0);
    cmd.yaw = yaw;
    cmd.timestamp_us = timestamp_us;
    Scalar heading = yaw;
    switch (label) {
        case ActionLabel::StandStill:
            cmd.velocity = Vec2::Zero();
            return cmd;
        case ActionLabel::StepForward:
            break;
        case ActionLabel::StepLeft:
            heading = yaw + M_PI / 2;
            break;
        case ActionLabel::StepRight:
            heading = yaw - M_PI / 2;
            break;
    }
    cmd.velocity = params.speed_mps * Vec2(std::cos(heading), std::sin(heading));
    return cmd;
}

PacketBytes encode(const LocomotionCommand& command) {
    PacketBytes b{};
    std::copy(kPacketMagic.begin(), kPacketMagic.end(), b.begin());
    b[4] = kProtocolVersion;
    b[5] = kTypeCommand;
    put_u16(&b[6], 0);
    put_u64(&b[8], command.timestamp_us);
    put_u32(&b[16], command.person_id);
    b[20] = static_cast<std::uint8_t>(command.label);
    b[21] = static_cast<std::uint8_t>(
        std::lround(std::clamp<Scalar>(command.confidence, 0.0, 1.0) * 255.0));
    // wrap yaw into (-pi, pi] before quantizing to centidegrees
    Scalar yaw = std::remainder(command.yaw, 2.0 * M_PI);
    if (yaw <= -M_PI) yaw += 2.0 * M_PI;
    const long cd = std::lround(yaw * kCentidegPerRad);
    put_u16(&b[22], static_cast<std::uint16_t>(static_cast<std::int16_t>(
                        std::clamp<long>(cd, -18000, 18000))));
    return b;
}

PacketBytes encode_heartbeat(std::uint64_t timestamp_us) {
    PacketBytes b{};
    std::copy(kPacketMagic.begin(), kPacketMagic.end(), b.begin());
    b[4] = kProtocolVersion;
    b[5] = kTypeHeartbeat;
    put_u64(&b[8], timestamp_us);
    return b;
}

DecodedPacket decode(const std::uint8_t* data, std::size_t length,
                     const MapActionParams& params) {
    if (length != kPacketSize) {
        throw BadLength("expected 24 bytes, got " + std::to_string(length));
    }
    if (!std::equal(kPacketMagic.begin(), kPacketMagic.end(), data)) {
        throw BadMagic("packet magic mismatch");
    }
    if (data[4] != kProtocolVersion) {
        throw BadVersion("unsupported protocol version " + std::to_string(data[4]));
    }
    const std::uint8_t type = data[5];
    if (type != kTypeCommand && type != kTypeHeartbeat) {
        throw BadMessageType("unknown message type " + std::to_string(type));
    }
    DecodedPacket packet;
    packet.type = type;
    if (type == kTypeHeartbeat) {
        packet.command.timestamp_us = get_u64(data + 8);
        return packet;
    }
    if (data[20] >= kNumActions) {
        throw BadActionCode("action code " + std::to_string(data[20]));
    }
    const auto yaw_cd = static_cast<std::int16_t>(get_u16(data + 22));
    if (yaw_cd < -18000 || yaw_cd > 18000) {
        throw YawOutOfRange("yaw " + std::to_string(yaw_cd) + " centidegrees");
    }
    const auto label = static_cast<ActionLabel>(data[20]);
    const Scalar confidence = data[21] / 255.0;
    const Scalar yaw = yaw_cd / kCentidegPerRad;
    packet.command = map_action(get_u32(data + 16), label, confidence, yaw,
                                get_u64(data + 8), params);
    return packet;
}

DecodedPacket decode(const PacketBytes& bytes, const MapActionParams& params) {
    return decode(bytes.data(), bytes.size(), params);
}

std::uint16_t default_port() {
    if (const char* env = std::getenv("CAVEMOTION_PORT")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v > 0 && v < 65536) return static_cast<std::uint16_t>(v);
    }
    return 47474;
}

UdpSender::UdpSender(const Endpoint& endpoint) {
    fd_ = ::socket(AF_INET, SOCK_DGRAM, 0);
    if (fd_ < 0) throw SocketError("cannot create UDP socket");
    const sockaddr_in addr = make_addr(endpoint.host, endpoint.port);
    if (::connect(fd_, reinterpret_cast<const sockaddr*>(&addr), sizeof addr) != 0) {
        ::close(fd_);
        fd_ = -1;
        throw SocketError("cannot connect UDP socket to " + endpoint.host + ":" +
                          std::to_string(endpoint.port));
    }
}

UdpSender::~UdpSender() {
    if (fd_ >= 0) ::close(fd_);
}

void UdpSender::send(const PacketBytes& bytes) {
    // fire and forget; a full socket buffer is not an error worth stopping for
    (void)::send(fd_, bytes.data(), bytes.size(), 0);
}

void UdpSender::send_command(const LocomotionCommand& command) {
    send(encode(command));
}

void UdpSender::send_heartbeat(std::uint64_t timestamp_us) {
    send(encode_heartbeat(timestamp_us));
}

UdpReceiver::UdpReceiver(std::uint16_t port, const std::string& bind_host) {
    fd_ = ::socket(AF_INET, SOCK_DGRAM, 0);
    if (fd_ < 0) throw SocketError("cannot create UDP socket");
    int reuse = 1;
    ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &reuse, sizeof reuse);
    sockaddr_in addr = make_addr(bind_host, port);
    if (::bind(fd_, reinterpret_cast<const sockaddr*>(&addr), sizeof addr) != 0) {
        ::close(fd_);
        fd_ = -1;
        throw SocketError("cannot bind UDP port " + std::to_string(port));
    }
    socklen_t len = sizeof addr;
    ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
}

UdpReceiver::~UdpReceiver() {
    if (fd_ >= 0) ::close(fd_);
}

std::optional<DecodedPacket> UdpReceiver::receive(Scalar timeout_s) {
    using Clock = std::chrono::steady_clock;
    const auto deadline = Clock::now() + std::chrono::duration_cast<Clock::duration>(
                                             std::chrono::duration<Scalar>(timeout_s));
    while (true) {
        const auto remaining = deadline - Clock::now();
        const int timeout_ms = std::max<int>(
            0, static_cast<int>(
                   std::chrono::duration_cast<std::chrono::milliseconds>(remaining).count()));
        pollfd pfd{fd_, POLLIN, 0};
        const int ready = ::poll(&pfd, 1, timeout_ms);
        if (ready <= 0) return std::nullopt;  // timeout (or signal)
        std::uint8_t buf[64];
        const ssize_t n = ::recv(fd_, buf, sizeof buf, 0);
        if (n < 0) return std::nullopt;
        try {
            return decode(buf, static_cast<std::size_t>(n));
        } catch (const Error&) {
            ++decode_errors_;  // malformed datagram: count and keep listening
        }
    }
}

RateController::RateController(const RateControllerParams& params) : params_(params) {
    if (params_.fps_ladder.empty()) params_.fps_ladder = {30};
    std::sort(params_.fps_ladder.begin(), params_.fps_ladder.end());
    index_ = 0;
    for (size_t i = 0; i < params_.fps_ladder.size(); ++i) {
        if (params_.fps_ladder[i] == params_.initial_fps) index_ = static_cast<int>(i);
    }
}

int RateController::update(Scalar total_latency_ms) {
    total_latency_ms = std::max<Scalar>(total_latency_ms, 0);
    if (!primed_) {
        latency_ms_ = total_latency_ms;
        primed_ = true;
    } else {
        latency_ms_ = (1.0 - params_.latency_smoothing) * latency_ms_ +
                      params_.latency_smoothing * total_latency_ms;
    }
    const Scalar budget_ms = 1000.0 / target_fps();
    if (latency_ms_ > budget_ms) {
        if (index_ > 0) --index_;  // one step per adjustment
        under_budget_streak_ = 0;
    } else if (latency_ms_ < params_.headroom_fraction * budget_ms) {
        ++under_budget_streak_;
        if (under_budget_streak_ >= params_.raise_after_frames &&
            index_ + 1 < static_cast<int>(params_.fps_ladder.size())) {
            ++index_;
            under_budget_streak_ = 0;
        }
    } else {
        under_budget_streak_ = 0;
    }
    return target_fps();
}

ReceiverStub::ReceiverStub(std::uint16_t port, Scalar staleness_horizon_s)
    : receiver_(port),
      horizon_us_(static_cast<std::uint64_t>(staleness_horizon_s * 1e6)) {}

bool ReceiverStub::poll(Scalar timeout_s) {
    const auto packet = receiver_.receive(timeout_s);
    if (!packet) return false;
    if (packet->is_heartbeat()) return true;
    const LocomotionCommand& cmd = packet->command;
    newest_seen_us_ = std::max(newest_seen_us_, cmd.timestamp_us);
    if (has_last_) {
        if (cmd.timestamp_us <= last_applied_us_ ||
            cmd.timestamp_us + horizon_us_ < newest_seen_us_) {
            ++stale_dropped_;
            return true;
        }
        const Scalar dt = (cmd.timestamp_us - last_applied_us_) * 1e-6;
        position_ += last_velocity_ * dt;
    }
    has_last_ = true;
    last_applied_us_ = cmd.timestamp_us;
    last_velocity_ = cmd.velocity;
    ++commands_applied_;
    trajectory_.push_back({cmd.timestamp_us, position_, cmd.label, cmd.person_id});
    return true;
}

void ReceiverStub::run(int deadline_commands, Scalar idle_timeout_s) {
    while (commands_applied_ < deadline_commands) {
        if (!poll(idle_timeout_s)) return;
    }
}

void ReceiverStub::save_trajectory(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw SocketError("cannot write trajectory file " + path);
    out << "# t_us x y label person\n";
    out.precision(17);
    for (const auto& p : trajectory_) {
        out << p.timestamp_us << ' ' << p.position.x() << ' ' << p.position.y() << ' '
            << to_string(p.label) << ' ' << p.person_id << '\n';
    }
}

}  // namespace cave
