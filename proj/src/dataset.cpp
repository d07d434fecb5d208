#include "cave/dataset.hpp"

#include "cave/reconstruction.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

namespace cave {

std::vector<SceneScript> default_dataset_scripts(const DatasetParams& params,
                                                 std::uint64_t seed) {
    std::vector<SceneScript> scripts;
    scripts.reserve(params.num_samples);
    for (int i = 0; i < params.num_samples; ++i) {
        std::mt19937_64 rng(split_seed(seed, static_cast<std::uint64_t>(i)));
        std::uniform_real_distribution<Scalar> u(0.0, 1.0);
        ScriptSegment seg;
        seg.person_id = 0;
        seg.label = static_cast<ActionLabel>(i % kNumActions);
        seg.start_time = 0;
        seg.duration = params.min_duration_s +
                       (params.max_duration_s - params.min_duration_s) * u(rng);
        seg.cadence_hz = params.min_cadence_hz +
                         (params.max_cadence_hz - params.min_cadence_hz) * u(rng);
        seg.facing_yaw = -M_PI + 2.0 * M_PI * u(rng);
        seg.base_position =
            Vec2(params.position_range_m * (2.0 * u(rng) - 1.0),
                 params.position_range_m * (2.0 * u(rng) - 1.0));
        SceneScript script;
        script.segments.push_back(seg);
        script.seed = split_seed(seed, 0x10000u + static_cast<std::uint64_t>(i));
        scripts.push_back(script);
    }
    return scripts;
}

Dataset build_dataset(const std::vector<SceneScript>& scripts,
                      const std::vector<CameraModel>& cameras,
                      const NoiseModel& noise, std::uint64_t seed,
                      Scalar holdout_fraction) {
    if (scripts.empty()) throw DegenerateDataset("empty script set");
    Dataset dataset;
    dataset.samples.reserve(scripts.size());
    for (size_t i = 0; i < scripts.size(); ++i) {
        const SceneScript& script = scripts[i];
        if (script.segments.empty()) throw DegenerateDataset("script without segments");
        DatasetSample sample;
        sample.label = static_cast<int>(script.segments.front().label);
        sample.person_id = script.segments.front().person_id;
        sample.frames = render_script(script);
        if (!cameras.empty()) {
            // lift through the cameras so the skeletons carry
            // triangulation-level noise instead of being exact
            for (size_t f = 0; f < sample.frames.size(); ++f) {
                SkeletonFrame3D& gt = sample.frames[f];
                const auto detections =
                    observe(gt, cameras, noise,
                            split_seed(script.seed, 0x20000u + static_cast<std::uint64_t>(f)));
                SkeletonFrame3D lifted = gt;
                for (int j = 0; j < kNumJoints; ++j) {
                    std::vector<PointObservation> obs;
                    for (const auto& det : detections) {
                        if (!det.joint_valid(j)) continue;
                        for (const auto& cam : cameras) {
                            if (cam.id == det.camera_id) {
                                obs.push_back({&cam, det.keypoints[j], det.confidence[j]});
                                break;
                            }
                        }
                    }
                    if (obs.size() >= 2) {
                        try {
                            lifted.joints[j] = triangulate_point(obs).point;
                        } catch (const Error&) {
                            // keep the ground-truth joint
                        }
                    }
                }
                gt = lifted;
            }
        }
        dataset.samples.push_back(std::move(sample));
    }
    assign_split(&dataset, holdout_fraction, seed);
    return dataset;
}

void assign_split(Dataset* dataset, Scalar holdout_fraction, std::uint64_t seed) {
    dataset->train_indices.clear();
    dataset->holdout_indices.clear();
    std::map<int, std::vector<int>> by_label;
    for (size_t i = 0; i < dataset->samples.size(); ++i) {
        by_label[dataset->samples[i].label].push_back(static_cast<int>(i));
    }
    for (auto& [label, indices] : by_label) {
        std::mt19937_64 rng(split_seed(seed, 0x5b1e7 + static_cast<std::uint64_t>(label)));
        std::shuffle(indices.begin(), indices.end(), rng);
        const size_t n_holdout =
            static_cast<size_t>(std::lround(holdout_fraction * indices.size()));
        for (size_t k = 0; k < indices.size(); ++k) {
            if (k < n_holdout) dataset->holdout_indices.push_back(indices[k]);
            else dataset->train_indices.push_back(indices[k]);
        }
    }
    std::sort(dataset->train_indices.begin(), dataset->train_indices.end());
    std::sort(dataset->holdout_indices.begin(), dataset->holdout_indices.end());
}

void save_dataset(const Dataset& dataset, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw BadDatasetFile("cannot write dataset file " + path);
    out << "# label person_id frame_count then frame_count*17 joints as x y z\n";
    out.precision(17);
    for (const auto& s : dataset.samples) {
        out << s.label << ' ' << s.person_id << ' ' << s.frames.size();
        for (const auto& f : s.frames) {
            for (const auto& j : f.joints) {
                out << ' ' << j.x() << ' ' << j.y() << ' ' << j.z();
            }
        }
        out << '\n';
    }
}

Dataset load_dataset(const std::string& path, Scalar holdout_fraction,
                     std::uint64_t split_seed_value) {
    std::ifstream in(path);
    if (!in) throw BadDatasetFile("cannot open dataset file " + path);
    Dataset dataset;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        DatasetSample s;
        size_t frame_count = 0;
        if (!(ls >> s.label >> s.person_id >> frame_count)) {
            throw BadDatasetFile("bad sample header: " + line.substr(0, 60));
        }
        s.frames.resize(frame_count);
        for (size_t f = 0; f < frame_count; ++f) {
            s.frames[f].person_id = s.person_id;
            s.frames[f].timestamp = static_cast<Scalar>(f) / kFrameRateHz;
            s.frames[f].validity = SkeletonFrame3D::all_valid_mask();
            for (int j = 0; j < kNumJoints; ++j) {
                auto& p = s.frames[f].joints[j];
                if (!(ls >> p.x() >> p.y() >> p.z())) {
                    throw BadDatasetFile("truncated sample record");
                }
            }
        }
        dataset.samples.push_back(std::move(s));
    }
    if (dataset.samples.empty()) throw DegenerateDataset("dataset file has no samples");
    assign_split(&dataset, holdout_fraction, split_seed_value);
    return dataset;
}

}  // namespace cave
