#include "cave/calibration.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

namespace cave {

namespace {

constexpr Scalar kInf = std::numeric_limits<Scalar>::infinity();

Mat3 hartley_normalization_2d(const std::vector<Vec2>& pts) {
    Vec2 centroid = Vec2::Zero();
    for (const auto& p : pts) centroid += p;
    centroid /= static_cast<Scalar>(pts.size());
    Scalar mean_dist = 0;
    for (const auto& p : pts) mean_dist += (p - centroid).norm();
    mean_dist /= static_cast<Scalar>(pts.size());
    const Scalar s = mean_dist > 1e-12 ? std::sqrt(2.0) / mean_dist : 1.0;
    Mat3 t = Mat3::Identity();
    t(0, 0) = s;
    t(1, 1) = s;
    t(0, 2) = -s * centroid.x();
    t(1, 2) = -s * centroid.y();
    return t;
}

Mat4 hartley_normalization_3d(const std::vector<Vec3>& pts) {
    Vec3 centroid = Vec3::Zero();
    for (const auto& p : pts) centroid += p;
    centroid /= static_cast<Scalar>(pts.size());
    Scalar mean_dist = 0;
    for (const auto& p : pts) mean_dist += (p - centroid).norm();
    mean_dist /= static_cast<Scalar>(pts.size());
    const Scalar s = mean_dist > 1e-12 ? std::sqrt(3.0) / mean_dist : 1.0;
    Mat4 t = Mat4::Identity();
    t.topLeftCorner<3, 3>() *= s;
    t.topRightCorner<3, 1>() = -s * centroid;
    return t;
}

Scalar median(std::vector<Scalar> v) {
    std::nth_element(v.begin(), v.begin() + v.size() / 2, v.end());
    return v[v.size() / 2];
}

// Projection through explicit parameters without the depth exception; the
// LM line search has to evaluate candidate steps that may be invalid.
bool project_params(const Intrinsics& k, const Mat3& r, const Vec3& t,
                    const Vec3& world, Vec2* px) {
    const Vec3 pc = r * world + t;
    if (pc.z() <= 1e-9) return false;
    const Vec2 xd = distort_normalized(k, pc.head<2>() / pc.z());
    *px = Vec2(k.fx * xd.x() + k.cx, k.fy * xd.y() + k.cy);
    return true;
}

struct ResidualStats {
    Scalar rmse = 0;
    Scalar max_err = 0;
    std::map<int, Scalar> per_marker;
};

ResidualStats residual_stats(const CameraModel& camera,
                             const std::vector<FiducialCorrespondence>& corr,
                             std::vector<CornerResidual>* table) {
    ResidualStats stats;
    std::map<int, std::pair<Scalar, int>> marker_acc;
    Scalar sum_sq = 0;
    for (const auto& c : corr) {
        CornerResidual row;
        row.marker_id = c.marker_id;
        row.corner_index = c.corner_index;
        row.observed = c.pixel;
        Vec2 px;
        if (project_params(camera.intrinsics, camera.pose.rotation,
                           camera.pose.translation, c.world, &px)) {
            row.reprojected = px;
            row.error_px = (px - c.pixel).norm();
        } else {
            row.error_px = kInf;
        }
        sum_sq += row.error_px * row.error_px;
        stats.max_err = std::max(stats.max_err, row.error_px);
        auto& acc = marker_acc[c.marker_id];
        acc.first += row.error_px * row.error_px;
        acc.second += 1;
        if (table) table->push_back(row);
    }
    stats.rmse = std::sqrt(sum_sq / static_cast<Scalar>(corr.size()));
    for (const auto& [id, acc] : marker_acc) {
        stats.per_marker[id] = std::sqrt(acc.first / acc.second);
    }
    return stats;
}

// 2D homography a -> b by normalized DLT.
Mat3 homography_dlt(const std::vector<Vec2>& a, const std::vector<Vec2>& b) {
    const Mat3 ta = hartley_normalization_2d(a);
    const Mat3 tb = hartley_normalization_2d(b);
    const int n = static_cast<int>(a.size());
    MatX m(2 * n, 9);
    for (int i = 0; i < n; ++i) {
        const Vec3 pa = ta * Vec3(a[i].x(), a[i].y(), 1.0);
        const Vec3 pb = tb * Vec3(b[i].x(), b[i].y(), 1.0);
        m.row(2 * i) << pa.x(), pa.y(), 1, 0, 0, 0, -pb.x() * pa.x(),
            -pb.x() * pa.y(), -pb.x();
        m.row(2 * i + 1) << 0, 0, 0, pa.x(), pa.y(), 1, -pb.y() * pa.x(),
            -pb.y() * pa.y(), -pb.y();
    }
    Eigen::JacobiSVD<MatX> svd(m, Eigen::ComputeThinV);
    const VecX h = svd.matrixV().col(8);
    Mat3 hn;
    hn << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8);
    return tb.inverse() * hn * ta;
}

}  // namespace

std::vector<FiducialMarker> generate_board(const CaveLayout& layout,
                                           int markers_per_screen,
                                           Scalar marker_size_m, Scalar margin_m) {
    if (markers_per_screen < 1 || marker_size_m <= 0 || margin_m < 0) {
        throw DoesNotFit("bad board parameters");
    }
    std::vector<FiducialMarker> markers;
    int next_id = 0;
    for (const auto& panel : layout.panels) {
        const int cols =
            static_cast<int>(std::ceil(std::sqrt(static_cast<Scalar>(markers_per_screen))));
        const int rows = (markers_per_screen + cols - 1) / cols;
        const Scalar cell_w = (panel.width - 2 * margin_m) / cols;
        const Scalar cell_h = (panel.height - 2 * margin_m) / rows;
        if (cell_w < marker_size_m || cell_h < marker_size_m) {
            throw DoesNotFit("markers do not fit panel " + std::to_string(panel.id));
        }
        for (int k = 0; k < markers_per_screen; ++k) {
            const int row = k / cols, col = k % cols;
            const Scalar s0 = margin_m + col * cell_w + (cell_w - marker_size_m) / 2;
            const Scalar t0 = margin_m + row * cell_h + (cell_h - marker_size_m) / 2;
            FiducialMarker m;
            m.marker_id = next_id++;
            m.screen_id = panel.id;
            m.corners[0] = screen_to_world(layout, panel.id, Vec2(s0, t0));
            m.corners[1] = screen_to_world(layout, panel.id, Vec2(s0 + marker_size_m, t0));
            m.corners[2] =
                screen_to_world(layout, panel.id, Vec2(s0 + marker_size_m, t0 + marker_size_m));
            m.corners[3] = screen_to_world(layout, panel.id, Vec2(s0, t0 + marker_size_m));
            markers.push_back(m);
        }
    }
    return markers;
}

bool points_span_two_planes(const std::vector<FiducialCorrespondence>& corr,
                            Scalar min_singular_value) {
    if (corr.size() < 4) return false;
    Vec3 centroid = Vec3::Zero();
    for (const auto& c : corr) centroid += c.world;
    centroid /= static_cast<Scalar>(corr.size());
    MatX m(corr.size(), 3);
    for (size_t i = 0; i < corr.size(); ++i) {
        m.row(i) = (corr[i].world - centroid).transpose();
    }
    Eigen::JacobiSVD<MatX> svd(m);
    return svd.singularValues()(2) > min_singular_value;
}

Mat34 dlt_full(const std::vector<FiducialCorrespondence>& corr) {
    if (corr.size() < 6) {
        throw Degenerate("dlt_full needs >= 6 correspondences, got " +
                         std::to_string(corr.size()));
    }
    if (!points_span_two_planes(corr)) {
        throw Degenerate("dlt_full needs non-coplanar world points");
    }
    std::vector<Vec2> px;
    std::vector<Vec3> wp;
    px.reserve(corr.size());
    wp.reserve(corr.size());
    for (const auto& c : corr) {
        px.push_back(c.pixel);
        wp.push_back(c.world);
    }
    const Mat3 t2 = hartley_normalization_2d(px);
    const Mat4 t3 = hartley_normalization_3d(wp);

    const int n = static_cast<int>(corr.size());
    MatX a(2 * n, 12);
    for (int i = 0; i < n; ++i) {
        const Vec3 x = t2 * Vec3(px[i].x(), px[i].y(), 1.0);
        const Vec4 big_x = t3 * Vec4(wp[i].x(), wp[i].y(), wp[i].z(), 1.0);
        a.row(2 * i) << big_x.transpose(), 0, 0, 0, 0, -x.x() * big_x.transpose();
        a.row(2 * i + 1) << 0, 0, 0, 0, big_x.transpose(), -x.y() * big_x.transpose();
    }
    Eigen::JacobiSVD<MatX> svd(a, Eigen::ComputeThinV);
    const VecX p = svd.matrixV().col(11);
    Mat34 pn;
    pn.row(0) = p.segment<4>(0).transpose();
    pn.row(1) = p.segment<4>(4).transpose();
    pn.row(2) = p.segment<4>(8).transpose();

    Mat34 out = t2.inverse() * pn * t3;
    out /= out.norm();
    // sign: projective depths of world points must come out positive
    std::vector<Scalar> w;
    w.reserve(corr.size());
    for (const auto& c : corr) {
        w.push_back(out.row(2).dot(Vec4(c.world.x(), c.world.y(), c.world.z(), 1.0)));
    }
    if (median(w) < 0) out = -out;
    return out;
}

DecomposedProjection decompose_projection(const Mat34& p_in) {
    Mat34 p = p_in;
    Mat3 m = p.leftCols<3>();
    if (m.row(2).norm() < 1e-12 || std::abs(m.determinant()) < 1e-15 * std::pow(m.norm(), 3)) {
        throw Singular("projection matrix has singular left 3x3 block");
    }
    // RQ via the reversed QR trick: E reverses row order.
    Mat3 e = Mat3::Zero();
    e(0, 2) = e(1, 1) = e(2, 0) = 1;
    const Mat3 a = (e * m).transpose();
    Eigen::HouseholderQR<Mat3> qr(a);
    Mat3 qhat = qr.householderQ();
    Mat3 rhat = qhat.transpose() * a;  // upper triangular
    Mat3 k = e * rhat.transpose() * e;
    Mat3 rot = e * qhat.transpose();

    // positive diagonal of K
    Mat3 d = Mat3::Identity();
    for (int i = 0; i < 3; ++i) d(i, i) = k(i, i) < 0 ? -1.0 : 1.0;
    k = k * d;
    rot = d * rot;
    // det(rot) must be +1; flipping both factors of M keeps K's diagonal
    Vec3 p4 = p.col(3);
    if (rot.determinant() < 0) {
        rot = -rot;
        p4 = -p4;
    }
    const Scalar scale = k(2, 2);
    if (scale < 1e-15) throw Singular("degenerate intrinsic scale");
    k /= scale;
    p4 /= scale;

    DecomposedProjection out;
    out.skew = k(0, 1);
    out.intrinsics.fx = k(0, 0);
    out.intrinsics.fy = k(1, 1);
    out.intrinsics.cx = k(0, 2);
    out.intrinsics.cy = k(1, 2);
    out.pose.rotation = rot;
    Mat3 k_noskew = out.intrinsics.matrix();
    out.pose.translation = k_noskew.inverse() * p4;
    return out;
}

void lm_residuals(const Intrinsics& intrinsics, const Pose& pose,
                  const std::vector<FiducialCorrespondence>& corr,
                  bool refine_intrinsics, VecX* residuals, MatX* jacobian) {
    const int n = static_cast<int>(corr.size());
    const int dim = refine_intrinsics ? 10 : 6;
    const Vec3 r_vec = axis_angle_from_rotation(pose.rotation);
    const Mat3 rot = rotation_from_axis_angle(r_vec);
    const auto drot = jacobian ? rotation_jacobian_axis_angle(r_vec) : std::array<Mat3, 3>{};
    if (residuals) residuals->setZero(2 * n);
    if (jacobian) jacobian->setZero(2 * n, dim);
    for (int i = 0; i < n; ++i) {
        const auto& c = corr[i];
        const Scalar w = std::sqrt(std::max<Scalar>(c.confidence, 0));
        const Vec3 pc = rot * c.world + pose.translation;
        const Scalar z = pc.z();
        if (z <= 1e-9) {
            if (residuals) (*residuals)(2 * i) = kInf;
            continue;
        }
        const Vec2 xn = pc.head<2>() / z;
        const Scalar r2 = xn.squaredNorm();
        const Scalar dist = 1.0 + r2 * (intrinsics.k1 + intrinsics.k2 * r2);
        const Vec2 xd = dist * xn;
        const Vec2 px(intrinsics.fx * xd.x() + intrinsics.cx,
                      intrinsics.fy * xd.y() + intrinsics.cy);
        if (residuals) {
            (*residuals)(2 * i) = w * (px.x() - c.pixel.x());
            (*residuals)(2 * i + 1) = w * (px.y() - c.pixel.y());
        }
        if (!jacobian) continue;

        Eigen::Matrix<Scalar, 2, 3> dxn_dpc;
        dxn_dpc << 1 / z, 0, -xn.x() / z, 0, 1 / z, -xn.y() / z;
        const Scalar ddist_dr2 = intrinsics.k1 + 2.0 * intrinsics.k2 * r2;
        // d(xd)/d(xn) = dist*I + 2*ddist_dr2 * xn xn^T
        Mat2 dxd_dxn = dist * Mat2::Identity() + 2.0 * ddist_dr2 * (xn * xn.transpose());
        Mat2 df = Mat2::Zero();
        df(0, 0) = intrinsics.fx;
        df(1, 1) = intrinsics.fy;
        const Eigen::Matrix<Scalar, 2, 3> dpx_dpc = df * dxd_dxn * dxn_dpc;
        for (int k = 0; k < 3; ++k) {
            const Vec2 col = dpx_dpc * (drot[k] * c.world);
            (*jacobian)(2 * i, k) = w * col.x();
            (*jacobian)(2 * i + 1, k) = w * col.y();
        }
        for (int k = 0; k < 3; ++k) {
            const Vec2 col = dpx_dpc.col(k);
            (*jacobian)(2 * i, 3 + k) = w * col.x();
            (*jacobian)(2 * i + 1, 3 + k) = w * col.y();
        }
        if (refine_intrinsics) {
            (*jacobian)(2 * i, 6) = w * xd.x();       // fx
            (*jacobian)(2 * i + 1, 7) = w * xd.y();   // fy
            (*jacobian)(2 * i, 8) = w;                // cx
            (*jacobian)(2 * i + 1, 9) = w;            // cy
        }
    }
}

namespace {

struct LmState {
    Intrinsics intrinsics;
    Pose pose;
};

LmState apply_step(const LmState& s, const VecX& params, bool refine_intrinsics) {
    LmState out = s;
    out.pose.rotation = rotation_from_axis_angle(params.segment<3>(0));
    out.pose.translation = params.segment<3>(3);
    if (refine_intrinsics) {
        out.intrinsics.fx = params(6);
        out.intrinsics.fy = params(7);
        out.intrinsics.cx = params(8);
        out.intrinsics.cy = params(9);
    }
    return out;
}

Scalar lm_cost(const LmState& s, const std::vector<FiducialCorrespondence>& corr) {
    VecX res;
    lm_residuals(s.intrinsics, s.pose, corr, false, &res, nullptr);
    return res.squaredNorm();
}

}  // namespace

CalibrationResult refine_lm(const Intrinsics& intrinsics, const Pose& pose,
                            const std::vector<FiducialCorrespondence>& corr,
                            const LmOptions& options) {
    const size_t min_points = options.refine_intrinsics ? 6 : 4;
    if (corr.size() < min_points) {
        throw Degenerate("refine_lm needs >= " + std::to_string(min_points) +
                         " correspondences");
    }
    const int dim = options.refine_intrinsics ? 10 : 6;
    LmState state{intrinsics, pose};
    VecX params(dim);
    params.segment<3>(0) = axis_angle_from_rotation(pose.rotation);
    params.segment<3>(3) = pose.translation;
    if (options.refine_intrinsics) {
        params(6) = intrinsics.fx;
        params(7) = intrinsics.fy;
        params(8) = intrinsics.cx;
        params(9) = intrinsics.cy;
    }

    CalibrationResult result;
    Scalar cost = lm_cost(state, corr);
    result.cost_history.push_back(cost);
    Scalar lambda = options.damping_init;
    bool converged = false;
    int accepted = 0;

    for (int iter = 0; iter < options.max_iters && !converged; ++iter) {
        VecX res;
        MatX jac;
        lm_residuals(state.intrinsics, state.pose, corr, options.refine_intrinsics,
                     &res, &jac);
        const VecX grad = jac.transpose() * res;
        if (grad.lpNorm<Eigen::Infinity>() < options.gradient_tol) {
            converged = true;
            break;
        }
        const MatX hess = jac.transpose() * jac;
        bool improved = false;
        while (lambda < 1e12) {
            MatX damped = hess;
            damped.diagonal() += lambda * hess.diagonal().cwiseMax(1e-12);
            const VecX delta = damped.ldlt().solve(-grad);
            const LmState cand = apply_step(state, params + delta, options.refine_intrinsics);
            const Scalar cand_cost = lm_cost(cand, corr);
            if (std::isfinite(cand_cost) && cand_cost <= cost) {
                const Scalar rel_decrease = (cost - cand_cost) / std::max(cost, Scalar(1e-300));
                params += delta;
                state = cand;
                cost = cand_cost;
                result.cost_history.push_back(cost);
                lambda = std::max(lambda * 0.1, 1e-15);
                ++accepted;
                improved = true;
                if (rel_decrease < 1e-12) converged = true;
                break;
            }
            lambda *= 10;
        }
        if (!improved) {
            converged = true;  // damping exhausted: local minimum within precision
        }
    }

    result.iterations = accepted;
    result.converged = converged;
    result.camera.intrinsics = state.intrinsics;
    result.camera.pose = state.pose;
    const ResidualStats stats = residual_stats(result.camera, corr, nullptr);
    result.rmse_px = stats.rmse;
    result.max_err_px = stats.max_err;
    result.per_marker_rmse_px = stats.per_marker;
    return result;
}

Pose solve_pnp_known_intrinsics(const Intrinsics& intrinsics,
                                const std::vector<FiducialCorrespondence>& corr) {
    if (corr.size() < 4) {
        throw Degenerate("solve_pnp needs >= 4 correspondences, got " +
                         std::to_string(corr.size()));
    }
    Pose init;
    if (corr.size() >= 6 && points_span_two_planes(corr)) {
        const Mat34 p = dlt_full(corr);
        const Mat3 m = intrinsics.matrix().inverse() * p.leftCols<3>();
        Scalar s = std::cbrt(m.determinant());
        if (std::abs(s) < 1e-15) throw Degenerate("degenerate projection scale");
        init.rotation = nearest_rotation(m / s);
        init.translation = intrinsics.matrix().inverse() * p.col(3) / s;
    } else {
        // plane frame from the principal directions of the point set
        Vec3 centroid = Vec3::Zero();
        for (const auto& c : corr) centroid += c.world;
        centroid /= static_cast<Scalar>(corr.size());
        MatX m(corr.size(), 3);
        for (size_t i = 0; i < corr.size(); ++i) {
            m.row(i) = (corr[i].world - centroid).transpose();
        }
        Eigen::JacobiSVD<MatX> svd(m, Eigen::ComputeFullV);
        const Vec3 e1 = svd.matrixV().col(0);
        const Vec3 e2 = svd.matrixV().col(1);
        if (svd.singularValues()(1) < 1e-9) {
            throw Degenerate("points are collinear");
        }
        std::vector<Vec2> plane, image;
        plane.reserve(corr.size());
        image.reserve(corr.size());
        for (const auto& c : corr) {
            const Vec3 d = c.world - centroid;
            plane.emplace_back(e1.dot(d), e2.dot(d));
            image.push_back(pixel_to_normalized(intrinsics, c.pixel));
        }
        const Mat3 h = homography_dlt(plane, image);
        Mat3 basis;
        basis.col(0) = e1;
        basis.col(1) = e2;
        basis.col(2) = e1.cross(e2);

        Pose best;
        int best_front = -1;
        for (const Scalar sign : {1.0, -1.0}) {
            const Vec3 h1 = sign * h.col(0), h2 = sign * h.col(1), h3 = sign * h.col(2);
            const Scalar lambda = 2.0 / (h1.norm() + h2.norm());
            Mat3 rp;
            rp.col(0) = lambda * h1;
            rp.col(1) = lambda * h2;
            rp.col(2) = rp.col(0).cross(rp.col(1));
            const Mat3 rot = nearest_rotation(rp) * basis.transpose();
            const Vec3 t = lambda * h3 - rot * centroid;
            int front = 0;
            for (const auto& c : corr) {
                if ((rot * c.world + t).z() > 0) ++front;
            }
            if (front > best_front) {
                best_front = front;
                best.rotation = rot;
                best.translation = t;
            }
        }
        if (best_front < static_cast<int>(corr.size())) {
            throw CheiralityFailure("no pose places all points in front of the camera");
        }
        init = best;
    }

    LmOptions opts;
    opts.refine_intrinsics = false;
    opts.max_iters = 30;
    const CalibrationResult refined = refine_lm(intrinsics, init, corr, opts);
    for (const auto& c : corr) {
        if (refined.camera.pose.apply(c.world).z() <= 0) {
            throw CheiralityFailure("refined pose leaves points behind the camera");
        }
    }
    return refined.camera.pose;
}

ReprojectionReport reprojection_report(const CameraModel& camera,
                                       const std::vector<FiducialCorrespondence>& corr) {
    ReprojectionReport report;
    if (!corr.empty()) {
        const ResidualStats stats = residual_stats(camera, corr, &report.corners);
        report.rmse_px = stats.rmse;
        report.max_err_px = stats.max_err;
        report.per_marker_rmse_px = stats.per_marker;
    }
    const std::array<Vec3, 3> tips = {Vec3(0.5, 0, 0), Vec3(0, 0.5, 0), Vec3(0, 0, 0.5)};
    const char names[3] = {'X', 'Y', 'Z'};
    for (int i = 0; i < 3; ++i) {
        AxisSegment seg;
        seg.axis = names[i];
        try {
            seg.origin_px = project(camera, Vec3::Zero());
            seg.tip_px = project(camera, tips[i]);
            seg.visible = true;
        } catch (const NonPositiveDepth&) {
            seg.visible = false;
        }
        report.axes[i] = seg;
    }
    return report;
}

CalibrationResult calibrate_camera(const std::vector<FiducialCorrespondence>& corr,
                                   int image_width, int image_height,
                                   const Intrinsics* prior_intrinsics,
                                   const LmOptions& options) {
    CalibrationResult result;
    LmOptions opts = options;
    if (corr.size() >= 6 && points_span_two_planes(corr)) {
        const DecomposedProjection dec = decompose_projection(dlt_full(corr));
        result = refine_lm(dec.intrinsics, dec.pose, corr, opts);
    } else if (prior_intrinsics) {
        const Pose pose = solve_pnp_known_intrinsics(*prior_intrinsics, corr);
        opts.refine_intrinsics = false;  // single plane cannot pin intrinsics
        result = refine_lm(*prior_intrinsics, pose, corr, opts);
    } else {
        throw Degenerate("single-plane view requires prior intrinsics");
    }
    result.camera.width = image_width;
    result.camera.height = image_height;
    return result;
}

std::vector<FiducialCorrespondence> load_correspondences(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw BadCalibrationFile("cannot open correspondence file " + path);
    std::vector<FiducialCorrespondence> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        FiducialCorrespondence c;
        if (!(ls >> c.marker_id >> c.corner_index >> c.world.x() >> c.world.y() >>
              c.world.z() >> c.pixel.x() >> c.pixel.y() >> c.confidence)) {
            throw BadCalibrationFile("bad correspondence record: " + line);
        }
        out.push_back(c);
    }
    return out;
}

void save_correspondences(const std::vector<FiducialCorrespondence>& corr,
                          const std::string& path) {
    std::ofstream out(path);
    if (!out) throw BadCalibrationFile("cannot write correspondence file " + path);
    out << "# marker_id corner_index X Y Z u v confidence\n";
    out.precision(17);
    for (const auto& c : corr) {
        out << c.marker_id << ' ' << c.corner_index << ' ' << c.world.x() << ' '
            << c.world.y() << ' ' << c.world.z() << ' ' << c.pixel.x() << ' '
            << c.pixel.y() << ' ' << c.confidence << '\n';
    }
}

void save_calibration(const std::vector<CalibrationResult>& results,
                      const std::string& path) {
    std::ofstream out(path);
    if (!out) throw BadCalibrationFile("cannot write calibration file " + path);
    out.precision(17);
    for (const auto& r : results) {
        const auto& cam = r.camera;
        out << "camera id=" << cam.id << " width=" << cam.width
            << " height=" << cam.height << '\n';
        out << "fx " << cam.intrinsics.fx << "\nfy " << cam.intrinsics.fy << '\n';
        out << "cx " << cam.intrinsics.cx << "\ncy " << cam.intrinsics.cy << '\n';
        out << "k1 " << cam.intrinsics.k1 << "\nk2 " << cam.intrinsics.k2 << '\n';
        out << "R";
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) out << ' ' << cam.pose.rotation(i, j);
        out << "\nt";
        for (int i = 0; i < 3; ++i) out << ' ' << cam.pose.translation(i);
        out << "\nrmse_px " << r.rmse_px << '\n';
        out << "end\n";
    }
}

std::vector<CameraModel> load_calibration(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw BadCalibrationFile("cannot open calibration file " + path);
    std::vector<CameraModel> cameras;
    std::string line;
    CameraModel cam;
    bool in_block = false;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (key == "camera") {
            cam = CameraModel{};
            std::string token;
            while (ls >> token) {
                const auto eq = token.find('=');
                if (eq == std::string::npos) continue;
                const std::string k = token.substr(0, eq);
                const int v = std::stoi(token.substr(eq + 1));
                if (k == "id") cam.id = v;
                if (k == "width") cam.width = v;
                if (k == "height") cam.height = v;
            }
            in_block = true;
        } else if (key == "fx") ls >> cam.intrinsics.fx;
        else if (key == "fy") ls >> cam.intrinsics.fy;
        else if (key == "cx") ls >> cam.intrinsics.cx;
        else if (key == "cy") ls >> cam.intrinsics.cy;
        else if (key == "k1") ls >> cam.intrinsics.k1;
        else if (key == "k2") ls >> cam.intrinsics.k2;
        else if (key == "R") {
            for (int i = 0; i < 3; ++i)
                for (int j = 0; j < 3; ++j) ls >> cam.pose.rotation(i, j);
        } else if (key == "t") {
            for (int i = 0; i < 3; ++i) ls >> cam.pose.translation(i);
        } else if (key == "rmse_px") {
            Scalar ignored;
            ls >> ignored;
        } else if (key == "end") {
            if (!in_block) throw BadCalibrationFile("stray end record");
            cameras.push_back(cam);
            in_block = false;
        } else {
            throw BadCalibrationFile("unknown calibration key '" + key + "'");
        }
    }
    if (in_block) throw BadCalibrationFile("unterminated camera block");
    return cameras;
}

void save_axis_export(const std::vector<std::pair<int, std::array<AxisSegment, 3>>>& axes,
                      const std::string& path) {
    std::ofstream out(path);
    if (!out) throw BadCalibrationFile("cannot write axis file " + path);
    out << "# camera axis visible u0 v0 u1 v1\n";
    out.precision(17);
    for (const auto& [cam_id, segs] : axes) {
        for (const auto& s : segs) {
            out << cam_id << ' ' << s.axis << ' ' << (s.visible ? 1 : 0) << ' '
                << s.origin_px.x() << ' ' << s.origin_px.y() << ' ' << s.tip_px.x()
                << ' ' << s.tip_px.y() << '\n';
        }
    }
}

}  // namespace cave
