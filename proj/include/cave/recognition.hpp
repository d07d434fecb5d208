#pragma once

#include "cave/dataset.hpp"
#include "cave/scene.hpp"

#include <optional>
#include <string>
#include <vector>

namespace cave {

CAVE_DEFINE_ERROR(MissingRootJoints);
CAVE_DEFINE_ERROR(InsufficientJoints);
CAVE_DEFINE_ERROR(DimensionMismatch);
CAVE_DEFINE_ERROR(BadAlpha);
CAVE_DEFINE_ERROR(BadModelFile);

struct FeatureConfig {
    int window = 32;       // W frames per classification window
    int slow_frames = 4;   // S pose snapshots at stride W/S
    Scalar frame_rate = kFrameRateHz;

    int stride() const { return window / slow_frames; }
    int dim() const {
        return slow_frames * kNumJoints * 3 + (window - 1) * kNumJoints * 2;
    }
};

struct NormalizedWindow {
    std::vector<SkeletonFrame3D> frames;  // hip-centered, yaw-aligned
    Scalar yaw = 0;                       // removed middle-frame yaw
};

// Per-frame hip-midpoint centering in x/y plus a single yaw alignment from
// the middle frame; z is left untouched. Throws MissingRootJoints when the
// middle frame has no valid hip pair.
NormalizedWindow normalize(const std::vector<SkeletonFrame3D>& window);

// Slow part: S subsampled poses (joint coordinates). Fast part: per-frame
// joint speed and vertical velocity over all W-1 frame pairs. Invalid
// joints contribute zeros.
VecX extract_features(const NormalizedWindow& window, const FeatureConfig& config);

struct ClassifierModel {
    FeatureConfig config;
    VecX mean;                         // D
    VecX stddev;                       // D, strictly positive
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> weights;  // 4 x D
    Vec4 bias = Vec4::Zero();
    std::uint64_t seed = 0;
    int epochs = 0;
    Scalar final_loss = 0;
};

struct TrainOptions {
    int epochs = 80;
    Scalar learning_rate = 0.05;
    Scalar l2 = 1e-4;
    int batch_size = 256;
    std::uint64_t seed = 1;
    // spliced class-transition windows teach the classifier to follow the
    // newest frames, which keeps the live decision latency low
    int transition_windows = 2400;
    int pure_window_stride = 8;
};

struct TrainReport {
    std::vector<Scalar> epoch_loss;  // full training loss per epoch
    Scalar train_accuracy = 0;
    Scalar holdout_accuracy = 0;
    Eigen::Matrix<int, 4, 4> confusion = Eigen::Matrix<int, 4, 4>::Zero();
    int train_windows = 0;
    int holdout_windows = 0;
};

// Multinomial logistic regression on standardized dual-rate features,
// mini-batch gradient descent. Deterministic given options.seed. Throws
// DegenerateDataset when fewer than two classes are present.
ClassifierModel train(const Dataset& dataset, const TrainOptions& options,
                      TrainReport* report = nullptr,
                      const FeatureConfig& config = {});

// Softmax probabilities; throws DimensionMismatch.
Vec4 classify(const ClassifierModel& model, const VecX& features);

// Cross-entropy + L2 loss and gradient for a labeled feature batch
// (exposed for the finite-difference oracle).
Scalar classifier_loss(const MatX& weights, const Vec4& bias, const MatX& features,
                       const std::vector<int>& labels, Scalar l2,
                       MatX* grad_weights = nullptr, Vec4* grad_bias = nullptr);

// First call (prev empty) returns p; afterwards (1-alpha)*prev + alpha*p.
Vec4 smooth_ema(const std::optional<Vec4>& prev, const Vec4& p, Scalar alpha);

struct DecisionRules {
    Scalar tau = 0.6;
    int persist_frames = 5;
};

struct DecisionState {
    ActionLabel label = ActionLabel::StandStill;
    int candidate = -1;
    int streak = 0;
};

// Hysteresis rule: a new label is emitted only after the smoothed argmax
// stayed on one class with probability >= tau for persist_frames
// consecutive calls.
ActionLabel decide(DecisionState* state, const Vec4& smoothed,
                   const DecisionRules& rules);

// Facing yaw in (-pi, pi] from the shoulder axis (hip fallback), front
// side disambiguated by the nose. Throws InsufficientJoints.
Scalar estimate_orientation(const SkeletonFrame3D& frame);

// EMA on the unit circle; avoids wrap artifacts near +-pi.
class YawSmoother {
public:
    explicit YawSmoother(Scalar alpha = 0.3) : alpha_(alpha) {}
    Scalar update(Scalar yaw);
    std::optional<Scalar> value() const;

private:
    Scalar alpha_;
    Vec2 state_ = Vec2::Zero();
    bool primed_ = false;
};

void save_model(const ClassifierModel& model, const std::string& path);
ClassifierModel load_model(const std::string& path);

void save_train_report(const TrainReport& report, const std::string& path);

}  // namespace cave
