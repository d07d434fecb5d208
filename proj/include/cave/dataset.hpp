#pragma once

#include "cave/scene.hpp"

#include <string>
#include <vector>

namespace cave {

CAVE_DEFINE_ERROR(DegenerateDataset);
CAVE_DEFINE_ERROR(BadDatasetFile);

struct DatasetSample {
    int label = 0;  // ActionLabel value
    int person_id = 0;
    std::vector<SkeletonFrame3D> frames;
};

struct Dataset {
    std::vector<DatasetSample> samples;
    std::vector<int> train_indices;
    std::vector<int> holdout_indices;
};

struct DatasetParams {
    int num_samples = 2000;
    Scalar holdout_fraction = 0.2;
    Scalar min_duration_s = 1.0;
    Scalar max_duration_s = 2.0;
    Scalar min_cadence_hz = 0.8;
    Scalar max_cadence_hz = 2.0;
    Scalar position_range_m = 0.5;  // base position uniform in +-range
};

// Balanced single-segment scripts (label = index mod 4) with randomized
// duration, cadence, yaw and position.
std::vector<SceneScript> default_dataset_scripts(const DatasetParams& params,
                                                 std::uint64_t seed);

// Renders each script to a labeled skeleton sequence. With a non-empty
// camera rig the ground truth is pushed through observe() and per-joint
// DLT triangulation, so training sees reconstruction-like noise; with no
// cameras the ground truth is used directly. The 80/20 split is
// stratified per class and deterministic in the seed.
Dataset build_dataset(const std::vector<SceneScript>& scripts,
                      const std::vector<CameraModel>& cameras,
                      const NoiseModel& noise, std::uint64_t seed,
                      Scalar holdout_fraction = 0.2);

// One sample per line: label person_id frame_count x y z ... (17 joints
// per frame). The split is re-derived on load from the stored seed line.
void save_dataset(const Dataset& dataset, const std::string& path);
Dataset load_dataset(const std::string& path, Scalar holdout_fraction = 0.2,
                     std::uint64_t split_seed_value = 7);

// Deterministic stratified split helper (also used on load).
void assign_split(Dataset* dataset, Scalar holdout_fraction, std::uint64_t seed);

}  // namespace cave
