#include "cave/geometry.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace cave {

const char* to_string(ActionLabel label) {
    switch (label) {
        case ActionLabel::StandStill: return "StandStill";
        case ActionLabel::StepForward: return "StepForward";
        case ActionLabel::StepLeft: return "StepLeft";
        case ActionLabel::StepRight: return "StepRight";
    }
    return "Unknown";
}

Pose compose(const Pose& a, const Pose& b) {
    Pose out;
    out.rotation = a.rotation * b.rotation;
    out.translation = a.rotation * b.translation + a.translation;
    return out;
}

Pose invert(const Pose& a) {
    Pose out;
    out.rotation = a.rotation.transpose();
    out.translation = -(a.rotation.transpose() * a.translation);
    return out;
}

bool is_rotation(const Mat3& r, Scalar tol) {
    return (r.transpose() * r - Mat3::Identity()).norm() <= tol &&
           std::abs(r.determinant() - 1.0) <= tol;
}

Mat3 skew(const Vec3& v) {
    Mat3 m;
    m << 0, -v.z(), v.y(),
         v.z(), 0, -v.x(),
         -v.y(), v.x(), 0;
    return m;
}

Mat3 rotation_from_axis_angle(const Vec3& r) {
    const Scalar theta2 = r.squaredNorm();
    const Scalar theta = std::sqrt(theta2);
    // sin(t)/t and (1-cos(t))/t^2 with series fallbacks near zero
    Scalar a, b;
    if (theta < 1e-8) {
        a = 1.0 - theta2 / 6.0;
        b = 0.5 - theta2 / 24.0;
    } else {
        a = std::sin(theta) / theta;
        b = (1.0 - std::cos(theta)) / theta2;
    }
    const Mat3 k = skew(r);
    return Mat3::Identity() + a * k + b * (k * k);
}

Vec3 axis_angle_from_rotation(const Mat3& rot) {
    const Scalar cos_theta = std::clamp((rot.trace() - 1.0) / 2.0, -1.0, 1.0);
    const Scalar theta = std::acos(cos_theta);
    Vec3 w(rot(2, 1) - rot(1, 2), rot(0, 2) - rot(2, 0), rot(1, 0) - rot(0, 1));
    if (theta < 1e-8) {
        return 0.5 * w;  // R ~ I + skew(r)
    }
    if (theta > M_PI - 1e-6) {
        // near pi the off-diagonal difference vanishes; use the symmetric part
        Mat3 s = 0.5 * (rot + Mat3::Identity());
        Vec3 axis = s.diagonal().cwiseMax(0.0).cwiseSqrt();
        // fix signs from the largest component
        int k;
        axis.maxCoeff(&k);
        for (int i = 0; i < 3; ++i) {
            if (i != k && s(k, i) < 0) axis(i) = -axis(i);
        }
        axis.normalize();
        if (w.dot(axis) < 0) axis = -axis;
        return theta * axis;
    }
    return (theta / (2.0 * std::sin(theta))) * w;
}

std::array<Mat3, 3> rotation_jacobian_axis_angle(const Vec3& r) {
    const Scalar theta2 = r.squaredNorm();
    const Scalar theta = std::sqrt(theta2);
    const Mat3 k = skew(r);
    std::array<Mat3, 3> jac;
    Scalar a, b, da, db;  // da = d(a)/dtheta, db = d(b)/dtheta
    if (theta < 1e-6) {
        a = 1.0 - theta2 / 6.0;
        b = 0.5 - theta2 / 24.0;
        da = -theta / 3.0;
        db = -theta / 12.0;
    } else {
        a = std::sin(theta) / theta;
        b = (1.0 - std::cos(theta)) / theta2;
        da = (theta * std::cos(theta) - std::sin(theta)) / theta2;
        db = (theta * std::sin(theta) - 2.0 * (1.0 - std::cos(theta))) / (theta2 * theta);
    }
    for (int i = 0; i < 3; ++i) {
        const Scalar dtheta = theta < 1e-12 ? 0.0 : r(i) / theta;
        const Mat3 dk = skew(Vec3::Unit(i));
        jac[i] = (da * dtheta) * k + a * dk + (db * dtheta) * (k * k) +
                 b * (dk * k + k * dk);
    }
    return jac;
}

Mat3 rotation_about_z(Scalar yaw) {
    return rotation_from_axis_angle(Vec3(0, 0, yaw));
}

Mat3 nearest_rotation(const Mat3& m) {
    Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 r = svd.matrixU() * svd.matrixV().transpose();
    if (r.determinant() < 0) {
        Mat3 d = Mat3::Identity();
        d(2, 2) = -1;
        r = svd.matrixU() * d * svd.matrixV().transpose();
    }
    return r;
}

Mat3 Intrinsics::matrix() const {
    Mat3 k = Mat3::Identity();
    k(0, 0) = fx;
    k(1, 1) = fy;
    k(0, 2) = cx;
    k(1, 2) = cy;
    return k;
}

Mat34 CameraModel::projection_matrix() const {
    Mat34 rt;
    rt.leftCols<3>() = pose.rotation;
    rt.col(3) = pose.translation;
    return intrinsics.matrix() * rt;
}

Scalar camera_depth(const CameraModel& camera, const WorldPoint& p) {
    return camera.pose.apply(p).z();
}

Vec2 distort_normalized(const Intrinsics& k, const Vec2& xn) {
    const Scalar r2 = xn.squaredNorm();
    const Scalar d = 1.0 + r2 * (k.k1 + k.k2 * r2);
    return d * xn;
}

Vec2 undistort_normalized(const Intrinsics& k, const Vec2& xn) {
    if (k.k1 == 0 && k.k2 == 0) return xn;
    Vec2 x = xn;  // fixed-point iteration, converges for mild distortion
    for (int i = 0; i < 20; ++i) {
        const Scalar r2 = x.squaredNorm();
        const Scalar d = 1.0 + r2 * (k.k1 + k.k2 * r2);
        x = xn / d;
    }
    return x;
}

Vec2 pixel_to_normalized(const Intrinsics& k, const PixelPoint& px) {
    Vec2 xn((px.x() - k.cx) / k.fx, (px.y() - k.cy) / k.fy);
    return undistort_normalized(k, xn);
}

PixelPoint project(const CameraModel& camera, const WorldPoint& p) {
    const Vec3 pc = camera.pose.apply(p);
    if (pc.z() <= 1e-9) {
        throw NonPositiveDepth("point at non-positive camera depth " +
                               std::to_string(pc.z()));
    }
    const Vec2 xd = distort_normalized(camera.intrinsics, pc.head<2>() / pc.z());
    return PixelPoint(camera.intrinsics.fx * xd.x() + camera.intrinsics.cx,
                      camera.intrinsics.fy * xd.y() + camera.intrinsics.cy);
}

const ScreenPanel& CaveLayout::panel(int screen_id) const {
    for (const auto& p : panels) {
        if (p.id == screen_id) return p;
    }
    throw UnknownScreen("no panel with id " + std::to_string(screen_id));
}

CaveLayout default_layout() {
    // 4 m x 4 m floor, 2.5 m walls; axis_u x axis_v points into the room.
    CaveLayout layout;
    const Scalar w = 4.0, h = 2.5;
    const int rx = 1920, ry = 1200;
    layout.panels = {
        {0, "front", Vec3(-2, 2, 0), Vec3(1, 0, 0), Vec3(0, 0, 1), w, h, rx, ry},
        {1, "right", Vec3(2, 2, 0), Vec3(0, -1, 0), Vec3(0, 0, 1), w, h, rx, ry},
        {2, "back", Vec3(2, -2, 0), Vec3(-1, 0, 0), Vec3(0, 0, 1), w, h, rx, ry},
        {3, "left", Vec3(-2, -2, 0), Vec3(0, 1, 0), Vec3(0, 0, 1), w, h, rx, ry},
    };
    return layout;
}

WorldPoint screen_to_world(const CaveLayout& layout, int screen_id, const Vec2& s) {
    const ScreenPanel& p = layout.panel(screen_id);
    if (s.x() < 0 || s.y() < 0 || s.x() > p.width || s.y() > p.height) {
        throw OutOfPanel("in-panel point (" + std::to_string(s.x()) + ", " +
                         std::to_string(s.y()) + ") outside panel " +
                         std::to_string(screen_id));
    }
    return p.origin + s.x() * p.axis_u + s.y() * p.axis_v;
}

namespace {

Vec3 parse_vec3(const std::string& text) {
    Vec3 v;
    std::istringstream in(text);
    char comma;
    if (!(in >> v.x() >> comma >> v.y() >> comma >> v.z())) {
        throw BadLayoutFile("bad vector '" + text + "'");
    }
    return v;
}

std::map<std::string, std::string> parse_kv(std::istringstream& in) {
    std::map<std::string, std::string> kv;
    std::string token;
    while (in >> token) {
        const auto eq = token.find('=');
        if (eq == std::string::npos) {
            throw BadLayoutFile("expected key=value, got '" + token + "'");
        }
        kv[token.substr(0, eq)] = token.substr(eq + 1);
    }
    return kv;
}

}  // namespace

CaveLayout load_layout(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw BadLayoutFile("cannot open layout file " + path);
    CaveLayout layout;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        std::string kind;
        ls >> kind;
        if (kind != "panel") throw BadLayoutFile("unknown record '" + kind + "'");
        auto kv = parse_kv(ls);
        ScreenPanel p;
        p.id = std::stoi(kv.at("id"));
        p.name = kv.count("name") ? kv.at("name") : "panel" + kv.at("id");
        p.origin = parse_vec3(kv.at("origin"));
        p.axis_u = parse_vec3(kv.at("u")).normalized();
        p.axis_v = parse_vec3(kv.at("v")).normalized();
        p.width = std::stod(kv.at("width"));
        p.height = std::stod(kv.at("height"));
        if (kv.count("res")) {
            std::istringstream rs(kv.at("res"));
            char comma;
            rs >> p.res_x >> comma >> p.res_y;
        }
        if (std::abs(p.axis_u.dot(p.axis_v)) > 1e-9) {
            throw BadLayoutFile("panel axes not orthogonal for id " + kv.at("id"));
        }
        layout.panels.push_back(p);
    }
    if (layout.panels.empty()) throw BadLayoutFile("layout file has no panels");
    return layout;
}

void save_layout(const CaveLayout& layout, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw BadLayoutFile("cannot write layout file " + path);
    out << "# cave layout: panel id=<int> name=<str> origin=x,y,z u=x,y,z v=x,y,z"
           " width=<m> height=<m> res=w,h\n";
    out.precision(17);
    for (const auto& p : layout.panels) {
        out << "panel id=" << p.id << " name=" << p.name
            << " origin=" << p.origin.x() << ',' << p.origin.y() << ',' << p.origin.z()
            << " u=" << p.axis_u.x() << ',' << p.axis_u.y() << ',' << p.axis_u.z()
            << " v=" << p.axis_v.x() << ',' << p.axis_v.y() << ',' << p.axis_v.z()
            << " width=" << p.width << " height=" << p.height
            << " res=" << p.res_x << ',' << p.res_y << '\n';
    }
}

}  // namespace cave
