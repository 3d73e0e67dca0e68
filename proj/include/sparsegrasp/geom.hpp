#pragma once

#include <array>
#include <string>
#include <vector>

namespace sg {

struct Vec2 {
    double x = 0.0, y = 0.0;
};

// Grasp pose in the image frame: center (pixels), in-plane rotation
// theta in (-pi/2, pi/2], jaw opening width (pixels), quality in [0,1].
struct GraspPoseImage {
    double x = 0.0, y = 0.0;
    double theta = 0.0;
    double width = 0.0;
    double quality = 0.0;
    bool degenerate = false;
};

// Grasp pose in the robot base frame (meters, rotation about z).
struct GraspPoseRobot {
    double x = 0.0, y = 0.0, z = 0.0;
    double theta = 0.0;
    double width = 0.0;
    double quality = 0.0;
};

// 3D grasp point in the camera frame, intermediate of the transform chain.
struct GraspPoseCamera {
    double x = 0.0, y = 0.0, z = 0.0;
    double theta = 0.0;
    double width = 0.0;
    double quality = 0.0;
};

// Oriented rectangle in pixel space. width runs along the jaw-opening axis
// (direction (cos angle, sin angle)), height along the perpendicular.
struct GraspRectangle {
    double cx = 0.0, cy = 0.0;
    double angle = 0.0;
    double width = 0.0;
    double height = 0.0;

    std::array<Vec2, 4> corners() const;
    double area() const { return width * height; }
};

struct CameraIntrinsics {
    double fx = 1.0, fy = 1.0, cx = 0.0, cy = 0.0;
};

struct RigidTransform {
    std::array<double, 9> rotation{1, 0, 0, 0, 1, 0, 0, 0, 1};  // row-major 3x3
    std::array<double, 3> translation{0, 0, 0};

    bool is_valid(double tol = 1e-6) const;  // orthonormal, det = +1
    RigidTransform inverse() const;
    double yaw() const;
};

// Folds an angle into (-pi/2, pi/2] under the antipodal (mod pi) symmetry.
double fold_half_pi(double angle);

GraspRectangle pose_to_rectangle(const GraspPoseImage& pose, double jaw_size);

// Builds center/angle/width/height from 4 corner points in order
// (p0->p1 is the width edge, p1->p2 the height edge).
GraspRectangle rectangle_from_corners(const std::array<Vec2, 4>& pts);

// Analytic IoU of two oriented rectangles via convex polygon clipping.
double rect_iou(const GraspRectangle& a, const GraspRectangle& b);

// Offset between two grasp angles mod pi, in [0, pi/2].
double angle_offset(double a, double b);

struct GraspMatch {
    bool valid = false;
    int best_index = -1;
    double best_iou = 0.0;
    double best_offset = 0.0;
};

// Rectangle metric: valid iff some ground truth has IoU > 0.25 and
// orientation offset < 30 degrees.
GraspMatch is_valid_grasp(const GraspRectangle& prediction,
                          const std::vector<GraspRectangle>& ground_truths,
                          double iou_threshold = 0.25, double angle_threshold_rad = 0.5235987755982988);

// Pinhole deprojection of an image-frame pose at the given depth (meters).
GraspPoseCamera image_to_camera(const GraspPoseImage& pose, double depth,
                                const CameraIntrinsics& intr);

GraspPoseRobot camera_to_robot(const GraspPoseCamera& pose, const RigidTransform& t);

struct Calibration {
    CameraIntrinsics intrinsics;
    RigidTransform camera_to_robot;
};

// key=value text file: fx fy cx cy r00..r22 tx ty tz.
Calibration load_calibration(const std::string& path);

}  // namespace sg
