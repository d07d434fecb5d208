#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace cave {

// Floating-point type used for all geometry and estimation.
using Scalar = double;

using Vec2 = Eigen::Matrix<Scalar, 2, 1>;
using Vec3 = Eigen::Matrix<Scalar, 3, 1>;
using Vec4 = Eigen::Matrix<Scalar, 4, 1>;
using VecX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
using Mat2 = Eigen::Matrix<Scalar, 2, 2>;
using Mat3 = Eigen::Matrix<Scalar, 3, 3>;
using Mat4 = Eigen::Matrix<Scalar, 4, 4>;
using Mat34 = Eigen::Matrix<Scalar, 3, 4>;
using MatX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

// World frame: origin at floor center, Z up, meters.
using WorldPoint = Vec3;
// Image frame: origin top-left, u right, v down, pixels.
using PixelPoint = Vec2;

// Locomotion action classes. Wire codes match the enum values.
enum class ActionLabel : std::uint8_t {
    StandStill = 0,
    StepForward = 1,
    StepLeft = 2,
    StepRight = 3,
};

inline constexpr int kNumActions = 4;

const char* to_string(ActionLabel label);

// Base class for all recoverable errors raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define CAVE_DEFINE_ERROR(NAME)                                                \
    class NAME : public ::cave::Error {                                        \
    public:                                                                    \
        using ::cave::Error::Error;                                            \
    }

// Deterministic stream splitting (splitmix64). Used wherever one seed has
// to fan out into independent per-camera / per-sample streams.
inline std::uint64_t split_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace cave
