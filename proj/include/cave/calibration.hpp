#pragma once

#include "cave/geometry.hpp"

#include <array>
#include <map>
#include <string>
#include <vector>

namespace cave {

CAVE_DEFINE_ERROR(DoesNotFit);
CAVE_DEFINE_ERROR(Degenerate);
CAVE_DEFINE_ERROR(Singular);
CAVE_DEFINE_ERROR(CheiralityFailure);
CAVE_DEFINE_ERROR(BadCalibrationFile);

// Square fiducial displayed on one screen; corners ordered counter-clockwise
// as seen from the room interior, starting at the in-panel lower-left.
struct FiducialMarker {
    int marker_id = 0;
    int screen_id = 0;
    std::array<WorldPoint, 4> corners;
};

struct FiducialCorrespondence {
    int marker_id = 0;
    int corner_index = 0;  // 0..3
    WorldPoint world = WorldPoint::Zero();
    PixelPoint pixel = PixelPoint::Zero();
    Scalar confidence = 1.0;
};

struct CalibrationResult {
    CameraModel camera;
    Scalar rmse_px = 0;
    Scalar max_err_px = 0;
    std::map<int, Scalar> per_marker_rmse_px;
    int iterations = 0;
    bool converged = false;
    std::vector<Scalar> cost_history;  // accepted LM costs, non-increasing
};

// Deterministic grid of markers per screen. Throws DoesNotFit when the
// requested count/size/margin does not fit the panel.
std::vector<FiducialMarker> generate_board(const CaveLayout& layout,
                                           int markers_per_screen,
                                           Scalar marker_size_m,
                                           Scalar margin_m);

// Full 3x4 projection matrix from >= 6 non-coplanar points (Hartley
// normalization on both point sets, SVD null vector, ||P||_F = 1).
// Throws Degenerate for too few or coplanar points.
Mat34 dlt_full(const std::vector<FiducialCorrespondence>& correspondences);

struct DecomposedProjection {
    Intrinsics intrinsics;
    Pose pose;
    Scalar skew = 0;  // discarded RQ skew term, kept for diagnostics
};

// RQ factorization of P = K [R | t]; K has positive diagonal, K(2,2) = 1.
DecomposedProjection decompose_projection(const Mat34& p);

// Pose for known intrinsics from >= 4 points. Coplanar sets are initialized
// by homography decomposition, non-coplanar ones (>= 6) by the full DLT;
// either way the pose is polished by a pose-only LM pass.
Pose solve_pnp_known_intrinsics(const Intrinsics& intrinsics,
                                const std::vector<FiducialCorrespondence>& correspondences);

struct LmOptions {
    int max_iters = 100;
    Scalar gradient_tol = 1e-12;
    Scalar damping_init = 1e-3;
    bool refine_intrinsics = true;  // fx, fy, cx, cy (distortion held fixed)
};

// Levenberg-Marquardt over (axis-angle, translation[, fx, fy, cx, cy])
// minimizing confidence-weighted squared reprojection error. The returned
// cost history is monotone non-increasing; converged=false means the
// iteration budget ran out.
CalibrationResult refine_lm(const Intrinsics& intrinsics, const Pose& pose,
                            const std::vector<FiducialCorrespondence>& correspondences,
                            const LmOptions& options = {});

// Residual vector (2n, confidence-weighted) and its Jacobian wrt the LM
// parameter vector (r, t[, fx, fy, cx, cy]). Exposed for the
// finite-difference checks.
void lm_residuals(const Intrinsics& intrinsics, const Pose& pose,
                  const std::vector<FiducialCorrespondence>& correspondences,
                  bool refine_intrinsics, VecX* residuals, MatX* jacobian);

struct AxisSegment {
    char axis = 'X';
    bool visible = false;
    PixelPoint origin_px = PixelPoint::Zero();
    PixelPoint tip_px = PixelPoint::Zero();
};

struct CornerResidual {
    int marker_id = 0;
    int corner_index = 0;
    PixelPoint observed = PixelPoint::Zero();
    PixelPoint reprojected = PixelPoint::Zero();
    Scalar error_px = 0;
};

struct ReprojectionReport {
    Scalar rmse_px = 0;
    Scalar max_err_px = 0;
    std::map<int, Scalar> per_marker_rmse_px;
    std::vector<CornerResidual> corners;
    std::array<AxisSegment, 3> axes;  // origin -> 0.5 m unit-axis tips
};

ReprojectionReport reprojection_report(const CameraModel& camera,
                                       const std::vector<FiducialCorrespondence>& correspondences);

// Full single-camera pipeline: DLT + decomposition when the points span
// two planes, homography PnP with prior intrinsics otherwise, then LM.
CalibrationResult calibrate_camera(const std::vector<FiducialCorrespondence>& correspondences,
                                   int image_width, int image_height,
                                   const Intrinsics* prior_intrinsics = nullptr,
                                   const LmOptions& options = {});

bool points_span_two_planes(const std::vector<FiducialCorrespondence>& correspondences,
                            Scalar min_singular_value = 1e-6);

// Line-oriented correspondence file:
//   marker_id corner_index X Y Z u v confidence
std::vector<FiducialCorrespondence> load_correspondences(const std::string& path);
void save_correspondences(const std::vector<FiducialCorrespondence>& correspondences,
                          const std::string& path);

// Calibration file: per-camera key/value blocks terminated by "end".
void save_calibration(const std::vector<CalibrationResult>& results, const std::string& path);
std::vector<CameraModel> load_calibration(const std::string& path);

void save_axis_export(const std::vector<std::pair<int, std::array<AxisSegment, 3>>>& axes,
                      const std::string& path);

}  // namespace cave
