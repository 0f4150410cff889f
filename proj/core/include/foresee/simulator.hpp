#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "foresee/dataset.hpp"
#include "foresee/rng.hpp"
#include "foresee/types.hpp"

namespace fse {

struct SimConfig {
    int frames = 30;
    double dt = 1.8 / 30.0;
    int image_width = 512;
    int image_height = 256;
    double focal_px = 235.0;
    double principal_x = 256.0;
    double principal_y = 128.0;
    double cam_height = 1.5;
    double min_depth = 0.5;
    double wheelbase = 2.7;
    double ped_height = 1.7;
    double ped_width = 0.5;
    double sigma_det = 2.0;
    double outlier_prob = 0.01;
    double outlier_factor = 10.0;
    int raster_size = 32;
    double raster_cell = 0.8;
    double road_half_width = 3.5;
    int min_peds = 1;
    int max_peds = 6;
    /// Split sizes are 2975/500/1525 divided by this factor.
    int scale_divisor = 10;
    /// Tracks shorter than this after visibility truncation are dropped.
    int min_track_len = 9;

    void validate() const;
    nlohmann::json to_json() const;
    static SimConfig from_json(const nlohmann::json& j);

    int train_scenes() const { return 2975 / scale_divisor; }
    int val_scenes() const { return 500 / scale_divisor; }
    int test_scenes() const { return 1525 / scale_divisor; }
};

enum class Archetype { straight, arc, turn, decelerate };

std::string to_string(Archetype a);

struct Pose {
    double x = 0.0;
    double y = 0.0;
    double heading = 0.0;
};

struct VelSegment {
    int start_frame = 0;
    double vx = 0.0;
    double vy = 0.0;
};

struct PedestrianSpec {
    double x0 = 0.0;
    double y0 = 0.0;
    std::vector<VelSegment> schedule; // start frames strictly increasing, first 0
    bool constant_velocity() const { return schedule.size() == 1; }
};

struct Obstacle {
    double x = 0.0;
    double y = 0.0;
    double radius = 1.0;
};

/// Fully generated world state. Poses are produced by midpoint-integrating
/// the stored odometry, so both stay mutually consistent by construction.
struct Scene {
    int id = 0;
    Archetype archetype = Archetype::straight;
    std::vector<OdometryState> odometry; // per frame
    std::vector<Pose> poses;             // per frame
    std::vector<PedestrianSpec> pedestrians;
    std::vector<Obstacle> obstacles;
    /// Road centerline: the vehicle path extended beyond the last pose.
    std::vector<std::array<double, 2>> centerline;
};

/// Midpoint integrator for the bicycle model: yaw rate = v tan(delta)/L.
std::vector<Pose> integrate_path(const std::vector<OdometryState>& odometry, double dt, double wheelbase);

Scene generate_scene(const SimConfig& cfg, int scene_id, Rng& rng);

std::array<double, 2> pedestrian_position(const PedestrianSpec& ped, int frame, double dt);

/// Pinhole projection of one pedestrian billboard at a frame; empty when the
/// pedestrian is behind the camera (depth <= min_depth) or fully outside the
/// image after clipping.
std::optional<BoundingBox> project_pedestrian(const Scene& scene, const SimConfig& cfg, int ped_index,
                                              int frame);

std::vector<std::optional<BoundingBox>> project_to_boxes(const Scene& scene, const SimConfig& cfg,
                                                         int frame);

/// I.i.d. Gaussian corner jitter of std sigma_det; a small fraction of
/// frames draws from the outlier_factor-times-wider distribution instead.
BoundingBox add_detection_noise(const BoundingBox& box, const SimConfig& cfg, Rng& rng);

/// Top-down forward view at the frame's pose: raster_size^2 cells of
/// raster_cell meters, road 1.0, off-road 0.0, obstacles 0.5, quantized to
/// the 8-bit grid.
Array render_road_raster(const Scene& scene, const SimConfig& cfg, int frame);

/// Visible-run extraction + detection noise for every pedestrian of a scene.
/// The raster is rendered at track-local frame min(7, len-1), the generation
/// frame of the aligned evaluation window.
std::vector<Track> scene_tracks(const Scene& scene, const SimConfig& cfg, const Rng& scene_rng,
                                const std::string& split, long* dropped_short);

struct DatasetSummary {
    long train_tracks = 0;
    long val_tracks = 0;
    long test_tracks = 0;
    long dropped_short = 0;
};

/// Generates all splits under dir (train/val/test.jsonl + manifest.json).
/// Deterministic given (cfg, seed): per-scene RNG streams are forked from
/// the master seed by scene id.
DatasetSummary emit_dataset(const SimConfig& cfg, std::uint64_t seed, const std::string& dir);

// Subset predicates used by the evaluation grid; derived from stored
// odometry, not generator internals.

/// Any frame with |steering| >= 3 degrees.
bool is_curved_track(const Track& track);
/// Curved, or speed range >= 2 m/s (deceleration scenes).
bool is_nontrivial_ego_track(const Track& track);

} // namespace fse
