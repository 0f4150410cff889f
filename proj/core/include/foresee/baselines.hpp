#pragma once

#include <utility>
#include <vector>

#include "foresee/types.hpp"

namespace fse {

/// Scalar constant-velocity Kalman filter, dt = 1:
///   F = [[1,1],[0,1]], H = [1,0], Q = q*[[1/4,1/2],[1/2,1]], R = r.
/// State starts at [first observation, 0] with covariance diag(1e4, 1e4);
/// updates use the Joseph form to keep the covariance symmetric PSD.
struct KalmanChannel {
    double q = 1e-4;
    double r = 1e-2;
    double x[2] = {0.0, 0.0};
    double p[4] = {1e4, 0.0, 0.0, 1e4};

    void init(double z0);
    void predict();
    void update(double z);
};

/// Filter the observed prefix, then roll the dynamics forward n steps with
/// no updates, per scalar channel. Requires >= 2 observations.
std::vector<double> kalman_predict_channel(const std::vector<double>& obs, int horizon, double q, double r);

/// Four independent channels over box coordinates.
std::vector<BoundingBox> kalman_predict(const std::vector<BoundingBox>& obs, int horizon, double q, double r);

/// Two independent channels over (speed, steering).
std::vector<OdometryState> kalman_predict(const std::vector<OdometryState>& obs, int horizon, double q, double r);

/// Grid search of (q, r) over powers of ten in [1e-6, 1], minimizing mean
/// squared prediction error over (observations, target) pairs. Ties keep the
/// first grid point scanned (q outer, r inner), so the fit is deterministic.
struct KalmanFit {
    double q = 1e-4;
    double r = 1e-2;
    double val_mse = 0.0;
};

KalmanFit fit_kalman_boxes(
    const std::vector<std::pair<std::vector<BoundingBox>, std::vector<BoundingBox>>>& pairs);
KalmanFit fit_kalman_odometry(
    const std::vector<std::pair<std::vector<OdometryState>, std::vector<OdometryState>>>& pairs);

/// Repeats the last observed odometry n times (n = 0 gives an empty result).
std::vector<OdometryState> constant_odometry(const std::vector<OdometryState>& past, int n);

} // namespace fse
