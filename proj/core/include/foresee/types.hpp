#pragma once

#include <vector>

#include "foresee/array.hpp"

namespace fse {

/// Axis-aligned box in pixel coordinates, corners (top-left, bottom-right).
/// Ground-truth boxes keep x_tl <= x_br and y_tl <= y_br; predicted means may
/// transiently violate the ordering and are flagged, not rejected.
struct BoundingBox {
    double x_tl = 0.0;
    double y_tl = 0.0;
    double x_br = 0.0;
    double y_br = 0.0;

    bool ordered() const { return x_tl <= x_br && y_tl <= y_br; }
};

/// Vehicle ego-motion sample: speed in m/s, steering angle in degrees.
struct OdometryState {
    double speed = 0.0;
    double steering = 0.0;
};

/// Network-input scaling for odometry channels. Native units are kept
/// everywhere else (losses on odometry predictions weight channels by the
/// same factors instead of rescaling the outputs).
inline constexpr double kSpeedScale = 10.0;
inline constexpr double kSteeringScale = 30.0;

inline double scaled_speed(double speed) { return speed / kSpeedScale; }
inline double scaled_steering(double steering) { return steering / kSteeringScale; }

/// Boxes are normalized to [0,1] by image extent before entering a network;
/// metrics are always computed back in pixels.
struct BoxScale {
    int image_width = 512;
    int image_height = 256;

    BoundingBox normalize(const BoundingBox& b) const {
        return {b.x_tl / image_width, b.y_tl / image_height, b.x_br / image_width, b.y_br / image_height};
    }
    BoundingBox denormalize(const BoundingBox& b) const {
        return {b.x_tl * image_width, b.y_tl * image_height, b.x_br * image_width, b.y_br * image_height};
    }
};

inline std::vector<double> box_to_vec(const BoundingBox& b) { return {b.x_tl, b.y_tl, b.x_br, b.y_br}; }

inline BoundingBox box_from_ptr(const double* p) { return {p[0], p[1], p[2], p[3]}; }

} // namespace fse
