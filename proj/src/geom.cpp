#include "sparsegrasp/geom.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace sg {

namespace {
constexpr double kPi = 3.14159265358979323846;

double shoelace(const std::vector<Vec2>& poly) {
    double a = 0.0;
    const size_t n = poly.size();
    for (size_t i = 0; i < n; ++i) {
        const Vec2& p = poly[i];
        const Vec2& q = poly[(i + 1) % n];
        a += p.x * q.y - q.x * p.y;
    }
    return std::fabs(a) * 0.5;
}

// Sutherland-Hodgman clip of a convex polygon against the half-plane left of
// edge a->b.
std::vector<Vec2> clip_edge(const std::vector<Vec2>& poly, const Vec2& a, const Vec2& b) {
    std::vector<Vec2> out;
    const size_t n = poly.size();
    auto side = [&](const Vec2& p) {
        return (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
    };
    for (size_t i = 0; i < n; ++i) {
        const Vec2& p = poly[i];
        const Vec2& q = poly[(i + 1) % n];
        const double sp = side(p), sq = side(q);
        if (sp >= 0.0) out.push_back(p);
        if ((sp > 0.0 && sq < 0.0) || (sp < 0.0 && sq > 0.0)) {
            const double t = sp / (sp - sq);
            out.push_back({p.x + t * (q.x - p.x), p.y + t * (q.y - p.y)});
        }
    }
    return out;
}
}  // namespace

std::array<Vec2, 4> GraspRectangle::corners() const {
    const double ux = std::cos(angle), uy = std::sin(angle);
    const double vx = -uy, vy = ux;
    const double hw = width * 0.5, hh = height * 0.5;
    return {Vec2{cx - hw * ux - hh * vx, cy - hw * uy - hh * vy},
            Vec2{cx + hw * ux - hh * vx, cy + hw * uy - hh * vy},
            Vec2{cx + hw * ux + hh * vx, cy + hw * uy + hh * vy},
            Vec2{cx - hw * ux + hh * vx, cy - hw * uy + hh * vy}};
}

double fold_half_pi(double angle) {
    double a = std::fmod(angle, kPi);
    if (a > kPi / 2.0) a -= kPi;
    if (a <= -kPi / 2.0) a += kPi;
    return a;
}

GraspRectangle pose_to_rectangle(const GraspPoseImage& pose, double jaw_size) {
    if (jaw_size <= 0.0) throw std::invalid_argument("pose_to_rectangle: jaw_size must be > 0");
    return GraspRectangle{pose.x, pose.y, pose.theta, pose.width, jaw_size};
}

GraspRectangle rectangle_from_corners(const std::array<Vec2, 4>& p) {
    GraspRectangle r;
    r.cx = (p[0].x + p[1].x + p[2].x + p[3].x) / 4.0;
    r.cy = (p[0].y + p[1].y + p[2].y + p[3].y) / 4.0;
    const double wx = p[1].x - p[0].x, wy = p[1].y - p[0].y;
    const double hx = p[2].x - p[1].x, hy = p[2].y - p[1].y;
    r.width = std::hypot(wx, wy);
    r.height = std::hypot(hx, hy);
    r.angle = fold_half_pi(std::atan2(wy, wx));
    return r;
}

double rect_iou(const GraspRectangle& a, const GraspRectangle& b) {
    if (a.width <= 0.0 || a.height <= 0.0 || b.width <= 0.0 || b.height <= 0.0)
        throw std::invalid_argument("rect_iou: degenerate rectangle");
    const auto ca = a.corners();
    const auto cb = b.corners();
    std::vector<Vec2> poly(ca.begin(), ca.end());
    for (int i = 0; i < 4 && !poly.empty(); ++i)
        poly = clip_edge(poly, cb[static_cast<size_t>(i)], cb[static_cast<size_t>((i + 1) % 4)]);
    const double inter = poly.size() >= 3 ? shoelace(poly) : 0.0;
    const double uni = a.area() + b.area() - inter;
    if (uni <= 0.0) return 0.0;
    const double iou = inter / uni;
    return iou < 0.0 ? 0.0 : (iou > 1.0 ? 1.0 : iou);
}

double angle_offset(double a, double b) {
    double d = std::fabs(std::fmod(a - b, kPi));
    if (d > kPi / 2.0) d = kPi - d;
    return d;
}

GraspMatch is_valid_grasp(const GraspRectangle& prediction,
                          const std::vector<GraspRectangle>& ground_truths, double iou_threshold,
                          double angle_threshold_rad) {
    if (ground_truths.empty())
        throw std::invalid_argument("is_valid_grasp: need at least one ground truth");
    GraspMatch m;
    for (size_t i = 0; i < ground_truths.size(); ++i) {
        const double iou = rect_iou(prediction, ground_truths[i]);
        const double off = angle_offset(prediction.angle, ground_truths[i].angle);
        const bool ok = iou > iou_threshold && off < angle_threshold_rad;
        // Track the best IoU among candidates for diagnostics.
        if (iou > m.best_iou || m.best_index < 0) {
            m.best_index = static_cast<int>(i);
            m.best_iou = iou;
            m.best_offset = off;
        }
        if (ok) {
            m.valid = true;
            m.best_index = static_cast<int>(i);
            m.best_iou = iou;
            m.best_offset = off;
            return m;
        }
    }
    return m;
}

bool RigidTransform::is_valid(double tol) const {
    const auto& r = rotation;
    // R * R^T == I
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            double dot = 0.0;
            for (int k = 0; k < 3; ++k) dot += r[static_cast<size_t>(i * 3 + k)] * r[static_cast<size_t>(j * 3 + k)];
            if (std::fabs(dot - (i == j ? 1.0 : 0.0)) > tol) return false;
        }
    const double det = r[0] * (r[4] * r[8] - r[5] * r[7]) - r[1] * (r[3] * r[8] - r[5] * r[6]) +
                       r[2] * (r[3] * r[7] - r[4] * r[6]);
    return std::fabs(det - 1.0) <= tol;
}

RigidTransform RigidTransform::inverse() const {
    RigidTransform inv;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            inv.rotation[static_cast<size_t>(i * 3 + j)] = rotation[static_cast<size_t>(j * 3 + i)];
    for (int i = 0; i < 3; ++i) {
        double s = 0.0;
        for (int j = 0; j < 3; ++j)
            s += inv.rotation[static_cast<size_t>(i * 3 + j)] * translation[static_cast<size_t>(j)];
        inv.translation[static_cast<size_t>(i)] = -s;
    }
    return inv;
}

double RigidTransform::yaw() const { return std::atan2(rotation[3], rotation[0]); }

GraspPoseCamera image_to_camera(const GraspPoseImage& pose, double depth,
                                const CameraIntrinsics& intr) {
    if (depth <= 0.0) throw std::invalid_argument("image_to_camera: missing depth reading");
    GraspPoseCamera out;
    out.x = (pose.x - intr.cx) * depth / intr.fx;
    out.y = (pose.y - intr.cy) * depth / intr.fy;
    out.z = depth;
    out.theta = pose.theta;
    out.width = pose.width * depth / intr.fx;
    out.quality = pose.quality;
    return out;
}

GraspPoseRobot camera_to_robot(const GraspPoseCamera& pose, const RigidTransform& t) {
    if (!t.is_valid()) throw std::invalid_argument("camera_to_robot: invalid rigid transform");
    const auto& r = t.rotation;
    GraspPoseRobot out;
    out.x = r[0] * pose.x + r[1] * pose.y + r[2] * pose.z + t.translation[0];
    out.y = r[3] * pose.x + r[4] * pose.y + r[5] * pose.z + t.translation[1];
    out.z = r[6] * pose.x + r[7] * pose.y + r[8] * pose.z + t.translation[2];
    out.theta = fold_half_pi(pose.theta + t.yaw());
    out.width = pose.width;
    out.quality = pose.quality;
    return out;
}

Calibration load_calibration(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("calibration: cannot open " + path);
    std::map<std::string, double> kv;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        std::string key = line.substr(0, eq);
        key.erase(key.find_last_not_of(" \t") + 1);
        kv[key] = std::stod(line.substr(eq + 1));
    }
    auto need = [&](const std::string& k) {
        auto it = kv.find(k);
        if (it == kv.end()) throw std::runtime_error("calibration: missing key " + k);
        return it->second;
    };
    Calibration c;
    c.intrinsics = {need("fx"), need("fy"), need("cx"), need("cy")};
    const char* names[9] = {"r00", "r01", "r02", "r10", "r11", "r12", "r20", "r21", "r22"};
    for (int i = 0; i < 9; ++i) c.camera_to_robot.rotation[static_cast<size_t>(i)] = need(names[i]);
    c.camera_to_robot.translation = {need("tx"), need("ty"), need("tz")};
    if (!c.camera_to_robot.is_valid())
        throw std::runtime_error("calibration: rotation is not orthonormal with det +1");
    return c;
}

}  // namespace sg
