#include "cave/recognition.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

namespace cave {

namespace {

std::optional<Vec2> hip_midpoint_xy(const SkeletonFrame3D& f) {
    if (!f.joint_valid(kLeftHip) || !f.joint_valid(kRightHip)) return std::nullopt;
    const Vec3 mid = 0.5 * (f.joints[kLeftHip] + f.joints[kRightHip]);
    return Vec2(mid.x(), mid.y());
}

int argmax4(const Vec4& v) {
    int k = 0;
    v.maxCoeff(&k);
    return k;
}

}  // namespace

Scalar estimate_orientation(const SkeletonFrame3D& frame) {
    Vec2 axis = Vec2::Zero();
    Vec2 mid = Vec2::Zero();
    if (frame.joint_valid(kLeftShoulder) && frame.joint_valid(kRightShoulder)) {
        const Vec3 d = frame.joints[kLeftShoulder] - frame.joints[kRightShoulder];
        axis = d.head<2>();
        mid = 0.5 * (frame.joints[kLeftShoulder] + frame.joints[kRightShoulder]).head<2>();
    } else if (frame.joint_valid(kLeftHip) && frame.joint_valid(kRightHip)) {
        const Vec3 d = frame.joints[kLeftHip] - frame.joints[kRightHip];
        axis = d.head<2>();
        mid = 0.5 * (frame.joints[kLeftHip] + frame.joints[kRightHip]).head<2>();
    } else {
        throw InsufficientJoints("need both shoulders or both hips for yaw");
    }
    if (axis.norm() < 1e-12) {
        throw InsufficientJoints("degenerate body axis");
    }
    Vec2 facing(axis.y(), -axis.x());  // axis rotated -90 deg about Z
    if (frame.joint_valid(kNose)) {
        const Vec2 to_nose = frame.joints[kNose].head<2>() - mid;
        if (to_nose.norm() > 1e-9 && facing.dot(to_nose) < 0) facing = -facing;
    }
    return std::atan2(facing.y(), facing.x());
}

NormalizedWindow normalize(const std::vector<SkeletonFrame3D>& window) {
    if (window.empty()) throw MissingRootJoints("empty window");
    const size_t mid_index = window.size() / 2;
    const auto mid_root = hip_midpoint_xy(window[mid_index]);
    if (!mid_root) {
        throw MissingRootJoints("hips invalid in the middle frame");
    }
    NormalizedWindow out;
    out.yaw = estimate_orientation(window[mid_index]);
    const Mat3 unrotate = rotation_about_z(-out.yaw);
    out.frames = window;
    for (auto& frame : out.frames) {
        const auto root = hip_midpoint_xy(frame).value_or(*mid_root);
        for (int j = 0; j < kNumJoints; ++j) {
            Vec3& p = frame.joints[j];
            p.x() -= root.x();
            p.y() -= root.y();
            p = unrotate * p;
        }
    }
    return out;
}

VecX extract_features(const NormalizedWindow& window, const FeatureConfig& config) {
    const int w = config.window;
    if (static_cast<int>(window.frames.size()) != w) {
        throw DimensionMismatch("window length " +
                                std::to_string(window.frames.size()) +
                                " does not match configured " + std::to_string(w));
    }
    VecX features = VecX::Zero(config.dim());
    int idx = 0;
    for (int s = 0; s < config.slow_frames; ++s) {
        const SkeletonFrame3D& f = window.frames[s * config.stride()];
        for (int j = 0; j < kNumJoints; ++j) {
            if (f.joint_valid(j)) {
                features.segment<3>(idx) = f.joints[j];
            }
            idx += 3;
        }
    }
    for (int t = 1; t < w; ++t) {
        const SkeletonFrame3D& prev = window.frames[t - 1];
        const SkeletonFrame3D& cur = window.frames[t];
        for (int j = 0; j < kNumJoints; ++j) {
            if (prev.joint_valid(j) && cur.joint_valid(j)) {
                const Vec3 v = (cur.joints[j] - prev.joints[j]) * config.frame_rate;
                features(idx) = v.norm();
                features(idx + 1) = v.z();
            }
            idx += 2;
        }
    }
    return features;
}

Scalar classifier_loss(const MatX& weights, const Vec4& bias, const MatX& features,
                       const std::vector<int>& labels, Scalar l2,
                       MatX* grad_weights, Vec4* grad_bias) {
    const int n = static_cast<int>(features.rows());
    if (grad_weights) grad_weights->setZero(weights.rows(), weights.cols());
    if (grad_bias) grad_bias->setZero();
    Scalar loss = 0;
    // logits: n x 4
    MatX logits = features * weights.transpose();
    logits.rowwise() += bias.transpose();
    for (int i = 0; i < n; ++i) {
        Vec4 row = logits.row(i).transpose();
        const Scalar m = row.maxCoeff();
        const Vec4 e = (row.array() - m).exp();
        const Scalar z = e.sum();
        const Vec4 p = e / z;
        loss += -(std::log(p(labels[i]) + 1e-300));
        if (grad_weights || grad_bias) {
            Vec4 delta = p;
            delta(labels[i]) -= 1.0;
            if (grad_weights) {
                grad_weights->noalias() += delta * features.row(i);
            }
            if (grad_bias) *grad_bias += delta;
        }
    }
    loss /= n;
    if (grad_weights) *grad_weights /= n;
    if (grad_bias) *grad_bias /= n;
    loss += 0.5 * l2 * weights.squaredNorm();
    if (grad_weights) *grad_weights += l2 * weights;
    return loss;
}

namespace {

struct WindowSet {
    std::vector<VecX> features;
    std::vector<int> labels;
};

std::vector<SkeletonFrame3D> padded_window(const std::vector<SkeletonFrame3D>& frames,
                                           int offset, int w) {
    std::vector<SkeletonFrame3D> window;
    window.reserve(w);
    for (int k = 0; k < w; ++k) {
        const int i = std::min<int>(offset + k, static_cast<int>(frames.size()) - 1);
        window.push_back(frames[i]);
        window.back().timestamp = k / kFrameRateHz;
    }
    return window;
}

// Rigidly move `chunk` so its first-frame root and yaw continue `tail`.
void align_chunk(std::vector<SkeletonFrame3D>* chunk, const SkeletonFrame3D& tail) {
    if (chunk->empty()) return;
    Scalar yaw_tail, yaw_head;
    try {
        yaw_tail = estimate_orientation(tail);
        yaw_head = estimate_orientation(chunk->front());
    } catch (const InsufficientJoints&) {
        return;
    }
    const auto root_tail = hip_midpoint_xy(tail);
    const auto root_head = hip_midpoint_xy(chunk->front());
    if (!root_tail || !root_head) return;
    const Mat3 rot = rotation_about_z(yaw_tail - yaw_head);
    for (auto& f : *chunk) {
        for (auto& p : f.joints) {
            p.x() -= root_head->x();
            p.y() -= root_head->y();
            p = rot * p;
            p.x() += root_tail->x();
            p.y() += root_tail->y();
        }
    }
}

}  // namespace

ClassifierModel train(const Dataset& dataset, const TrainOptions& options,
                      TrainReport* report, const FeatureConfig& config) {
    std::set<int> classes;
    for (const int i : dataset.train_indices) classes.insert(dataset.samples[i].label);
    if (classes.size() < 2) {
        throw DegenerateDataset("training requires at least two classes, got " +
                                std::to_string(classes.size()));
    }
    const int w = config.window;
    const int dim = config.dim();
    std::mt19937_64 rng(options.seed);

    WindowSet train_set;
    for (const int i : dataset.train_indices) {
        const auto& sample = dataset.samples[i];
        const int len = static_cast<int>(sample.frames.size());
        std::vector<int> offsets;
        if (len <= w) {
            offsets.push_back(0);
        } else {
            for (int o = 0; o + w <= len; o += options.pure_window_stride) {
                offsets.push_back(o);
            }
        }
        for (const int o : offsets) {
            const auto window = padded_window(sample.frames, o, w);
            train_set.features.push_back(extract_features(normalize(window), config));
            train_set.labels.push_back(sample.label);
        }
    }

    // Transition windows: a prefix of one sample spliced to the start of
    // another class's gait. Suffix length >= 2 carries real motion evidence
    // of the new class and is labeled with it; a single-frame suffix shows
    // only the settle back to neutral and keeps the old label.
    std::uniform_int_distribution<int> pick(0, static_cast<int>(dataset.train_indices.size()) - 1);
    std::uniform_int_distribution<int> suffix_dist(1, w - 1);
    int made = 0;
    while (made < options.transition_windows) {
        const auto& a = dataset.samples[dataset.train_indices[pick(rng)]];
        const auto& b = dataset.samples[dataset.train_indices[pick(rng)]];
        if (a.label == b.label) continue;
        const int suffix = suffix_dist(rng);
        const int prefix = w - suffix;
        const int max_offset = static_cast<int>(a.frames.size()) - prefix;
        if (max_offset < 0 || b.frames.empty()) continue;
        const int offset = max_offset == 0
                               ? 0
                               : std::uniform_int_distribution<int>(0, max_offset)(rng);
        std::vector<SkeletonFrame3D> window(a.frames.begin() + offset,
                                            a.frames.begin() + offset + prefix);
        std::vector<SkeletonFrame3D> chunk;
        for (int k = 0; k < suffix; ++k) {
            chunk.push_back(b.frames[std::min<size_t>(k, b.frames.size() - 1)]);
        }
        align_chunk(&chunk, window.back());
        window.insert(window.end(), chunk.begin(), chunk.end());
        for (int k = 0; k < w; ++k) window[k].timestamp = k / kFrameRateHz;
        train_set.features.push_back(extract_features(normalize(window), config));
        train_set.labels.push_back(suffix >= 2 ? b.label : a.label);
        ++made;
    }

    const int n = static_cast<int>(train_set.features.size());
    MatX x(n, dim);
    for (int i = 0; i < n; ++i) x.row(i) = train_set.features[i].transpose();

    ClassifierModel model;
    model.config = config;
    model.seed = options.seed;
    model.mean = x.colwise().mean().transpose();
    VecX var = ((x.rowwise() - model.mean.transpose()).array().square().colwise().sum() /
                std::max(n - 1, 1))
                   .transpose();
    model.stddev = var.cwiseSqrt().cwiseMax(1e-8);
    MatX xs = (x.rowwise() - model.mean.transpose()).array().rowwise() /
              model.stddev.transpose().array();

    model.weights = MatX::Zero(kNumActions, dim);
    model.bias.setZero();

    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    MatX grad_w(kNumActions, dim);
    Vec4 grad_b;
    for (int epoch = 0; epoch < options.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (int start = 0; start < n; start += options.batch_size) {
            const int count = std::min(options.batch_size, n - start);
            MatX batch(count, dim);
            std::vector<int> labels(count);
            for (int k = 0; k < count; ++k) {
                batch.row(k) = xs.row(order[start + k]);
                labels[k] = train_set.labels[order[start + k]];
            }
            classifier_loss(model.weights, model.bias, batch, labels, options.l2,
                            &grad_w, &grad_b);
            model.weights -= options.learning_rate * grad_w;
            model.bias -= options.learning_rate * grad_b;
        }
        if (report) {
            report->epoch_loss.push_back(classifier_loss(
                model.weights, model.bias, xs, train_set.labels, options.l2));
        }
        model.epochs = epoch + 1;
    }
    model.final_loss =
        classifier_loss(model.weights, model.bias, xs, train_set.labels, options.l2);

    if (report) {
        report->train_windows = n;
        int correct = 0;
        for (int i = 0; i < n; ++i) {
            Vec4 logits = model.weights * xs.row(i).transpose() + model.bias;
            if (argmax4(logits) == train_set.labels[i]) ++correct;
        }
        report->train_accuracy = n > 0 ? static_cast<Scalar>(correct) / n : 0;

        int h_correct = 0, h_total = 0;
        for (const int i : dataset.holdout_indices) {
            const auto& sample = dataset.samples[i];
            const auto window = padded_window(sample.frames, 0, w);
            const VecX f = extract_features(normalize(window), config);
            const int predicted = argmax4(classify(model, f));
            report->confusion(sample.label, predicted) += 1;
            if (predicted == sample.label) ++h_correct;
            ++h_total;
        }
        report->holdout_windows = h_total;
        report->holdout_accuracy =
            h_total > 0 ? static_cast<Scalar>(h_correct) / h_total : 0;
    }
    return model;
}

Vec4 classify(const ClassifierModel& model, const VecX& features) {
    if (features.size() != model.mean.size()) {
        throw DimensionMismatch("feature dimension " + std::to_string(features.size()) +
                                " does not match model " +
                                std::to_string(model.mean.size()));
    }
    const VecX xs = (features - model.mean).cwiseQuotient(model.stddev);
    Vec4 logits = model.weights * xs + model.bias;
    const Scalar m = logits.maxCoeff();
    const Vec4 e = (logits.array() - m).exp();
    return e / e.sum();
}

Vec4 smooth_ema(const std::optional<Vec4>& prev, const Vec4& p, Scalar alpha) {
    if (alpha <= 0 || alpha > 1) {
        throw BadAlpha("alpha must lie in (0, 1], got " + std::to_string(alpha));
    }
    if (!prev) return p;
    return (1.0 - alpha) * (*prev) + alpha * p;
}

ActionLabel decide(DecisionState* state, const Vec4& smoothed,
                   const DecisionRules& rules) {
    const int am = argmax4(smoothed);
    if (am != static_cast<int>(state->label) && smoothed(am) >= rules.tau) {
        if (state->candidate == am) {
            state->streak += 1;
        } else {
            state->candidate = am;
            state->streak = 1;
        }
        if (state->streak >= rules.persist_frames) {
            state->label = static_cast<ActionLabel>(am);
            state->candidate = -1;
            state->streak = 0;
        }
    } else {
        state->candidate = -1;
        state->streak = 0;
    }
    return state->label;
}

Scalar YawSmoother::update(Scalar yaw) {
    const Vec2 v(std::cos(yaw), std::sin(yaw));
    if (!primed_) {
        state_ = v;
        primed_ = true;
    } else {
        state_ = (1.0 - alpha_) * state_ + alpha_ * v;
        if (state_.norm() > 1e-12) state_.normalize();
    }
    return std::atan2(state_.y(), state_.x());
}

std::optional<Scalar> YawSmoother::value() const {
    if (!primed_) return std::nullopt;
    return std::atan2(state_.y(), state_.x());
}

void save_model(const ClassifierModel& model, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw BadModelFile("cannot write model file " + path);
    out.precision(17);
    out << "cavemotion-model 1\n";
    out << "window " << model.config.window << '\n';
    out << "slow_frames " << model.config.slow_frames << '\n';
    out << "frame_rate " << model.config.frame_rate << '\n';
    out << "dim " << model.mean.size() << '\n';
    out << "seed " << model.seed << '\n';
    out << "epochs " << model.epochs << '\n';
    out << "final_loss " << model.final_loss << '\n';
    out << "mean";
    for (int i = 0; i < model.mean.size(); ++i) out << ' ' << model.mean(i);
    out << "\nstd";
    for (int i = 0; i < model.stddev.size(); ++i) out << ' ' << model.stddev(i);
    out << "\nweights";
    for (int r = 0; r < model.weights.rows(); ++r) {
        for (int c = 0; c < model.weights.cols(); ++c) out << ' ' << model.weights(r, c);
    }
    out << "\nbias";
    for (int i = 0; i < 4; ++i) out << ' ' << model.bias(i);
    out << '\n';
}

ClassifierModel load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw BadModelFile("cannot open model file " + path);
    std::string magic;
    int version = 0;
    in >> magic >> version;
    if (magic != "cavemotion-model" || version != 1) {
        throw BadModelFile("unrecognized model header in " + path);
    }
    ClassifierModel model;
    int dim = 0;
    std::string key;
    while (in >> key) {
        if (key == "window") in >> model.config.window;
        else if (key == "slow_frames") in >> model.config.slow_frames;
        else if (key == "frame_rate") in >> model.config.frame_rate;
        else if (key == "dim") in >> dim;
        else if (key == "seed") in >> model.seed;
        else if (key == "epochs") in >> model.epochs;
        else if (key == "final_loss") in >> model.final_loss;
        else if (key == "mean") {
            model.mean.resize(dim);
            for (int i = 0; i < dim; ++i) in >> model.mean(i);
        } else if (key == "std") {
            model.stddev.resize(dim);
            for (int i = 0; i < dim; ++i) in >> model.stddev(i);
        } else if (key == "weights") {
            model.weights.resize(kNumActions, dim);
            for (int r = 0; r < kNumActions; ++r) {
                for (int c = 0; c < dim; ++c) in >> model.weights(r, c);
            }
        } else if (key == "bias") {
            for (int i = 0; i < 4; ++i) in >> model.bias(i);
        } else {
            throw BadModelFile("unknown model key '" + key + "'");
        }
    }
    if (!in.eof() && in.fail()) throw BadModelFile("truncated model file " + path);
    if (dim == 0 || model.mean.size() != dim || model.config.dim() != dim) {
        throw BadModelFile("inconsistent model dimensions in " + path);
    }
    return model;
}

void save_train_report(const TrainReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw BadModelFile("cannot write training report " + path);
    out.precision(17);
    out << "train_windows " << report.train_windows << '\n';
    out << "holdout_windows " << report.holdout_windows << '\n';
    out << "train_accuracy " << report.train_accuracy << '\n';
    out << "holdout_accuracy " << report.holdout_accuracy << '\n';
    out << "epoch_loss";
    for (const Scalar l : report.epoch_loss) out << ' ' << l;
    out << '\n';
    out << "confusion_rows_true_cols_predicted\n";
    for (int r = 0; r < 4; ++r) {
        out << to_string(static_cast<ActionLabel>(r));
        for (int c = 0; c < 4; ++c) out << ' ' << report.confusion(r, c);
        out << '\n';
    }
}

}  // namespace cave
