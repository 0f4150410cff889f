#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "foresee/baselines.hpp"
#include "foresee/bbox_model.hpp"
#include "foresee/checkpoint.hpp"
#include "foresee/dataset.hpp"
#include "foresee/gradcheck.hpp"
#include "foresee/odometry_model.hpp"
#include "foresee/simulator.hpp"
#include "foresee/trainer.hpp"
#include "foresee/uncertainty.hpp"

namespace fse {

nlohmann::json bbox_config_to_json(const BboxConfig& cfg);
BboxConfig bbox_config_from_json(const nlohmann::json& j);
nlohmann::json odo_config_to_json(const OdoConfig& cfg);
OdoConfig odo_config_from_json(const nlohmann::json& j);
nlohmann::json train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

/// Everything one run needs: simulator, both model configs, and the two
/// training schedules. Serializes to a single JSON document whose hash names
/// the configuration in manifests and checkpoints.
struct ExperimentConfig {
    SimConfig sim;
    BboxConfig bbox;
    OdoConfig odo;
    TrainConfig train;     // box stream schedule
    TrainConfig odo_train; // odometry stream schedule
    std::uint64_t seed = 1;

    nlohmann::json to_json() const;
    static ExperimentConfig from_json(const nlohmann::json& j);
    std::string config_hash() const;
    void validate() const;

    /// Reduced widths sized for single-core experiment runs.
    static ExperimentConfig small_profile();
    /// Minimal widths and horizons for finite-difference checks.
    static ExperimentConfig tiny_profile();
};

struct BboxEvalResult {
    double mse_px = 0.0;               // mean over steps, pixel^2
    std::vector<double> mse_steps;     // per future step
    double nll = 0.0;                  // normalized coordinates
    double mean_epistemic_px = 0.0;    // mean over tasks of sequence averages
    double mean_aleatoric_px = 0.0;
    double spearman_rho = 0.0;         // task uncertainty vs task squared error
    CalibrationReport calibration;
    /// step_pairs[j] holds one (uncertainty, squared error) pair per task at
    /// future step j, for per-horizon calibration views.
    std::vector<std::vector<CalibrationPair>> step_pairs;
    int tasks = 0;
};

/// Aligned-window evaluation against clean targets. Bayesian models draw
/// cfg.mc_samples mask sets from the seed; other variants run one
/// deterministic pass. Two-stream models condition on the odometry model's
/// predictions (odo required); the oracle row reads the true future.
BboxEvalResult evaluate_bbox_model(const BboxWeights& w, const BboxConfig& cfg,
                                   const std::vector<const Track*>& tracks, const OdoPredictorRef* odo,
                                   std::uint64_t seed);

struct BaselineEvalResult {
    double mse_px = 0.0;
    std::vector<double> mse_steps;
    int tasks = 0;
};

/// (past noisy boxes, future clean boxes) pairs of each aligned window, for
/// baseline fitting.
std::vector<std::pair<std::vector<BoundingBox>, std::vector<BoundingBox>>> bbox_baseline_pairs(
    const std::vector<const Track*>& tracks, int past, int horizon);

BaselineEvalResult evaluate_bbox_kalman(const std::vector<const Track*>& tracks, int past, int horizon,
                                        double q, double r);
/// Repeats the last observed box across the horizon.
BaselineEvalResult evaluate_bbox_constant(const std::vector<const Track*>& tracks, int past, int horizon);

struct OdoEvalResult {
    double speed_mse = 0.0; // (m/s)^2
    double angle_mse = 0.0; // degrees^2
    int tasks = 0;
};

std::vector<std::pair<std::vector<OdometryState>, std::vector<OdometryState>>> odo_baseline_pairs(
    const std::vector<const Track*>& tracks, int past, int horizon);

OdoEvalResult evaluate_odometry_model(const OdoWeights& w, const OdoConfig& cfg,
                                      const std::vector<const Track*>& tracks);
OdoEvalResult evaluate_odometry_constant(const std::vector<const Track*>& tracks, int past, int horizon);
OdoEvalResult evaluate_odometry_kalman(const std::vector<const Track*>& tracks, int past, int horizon,
                                       double q, double r);

struct GradcheckOutcome {
    GradCheckReport bbox;
    GradCheckReport odo;
    bool pass() const { return bbox.pass && odo.pass; }
};

/// Finite-difference validation of both loss graphs at tiny-profile widths
/// on synthetic inputs.
GradcheckOutcome run_gradcheck(std::uint64_t seed);

// Checkpoint glue: weights plus the matching config travel together.

void save_bbox_checkpoint(const std::string& path, const BboxWeights& w, const BboxConfig& cfg,
                          int stage, const nlohmann::json& metrics);
void save_odo_checkpoint(const std::string& path, const OdoWeights& w, const OdoConfig& cfg, int stage,
                         const nlohmann::json& metrics);

struct LoadedBbox {
    BboxWeights weights;
    BboxConfig cfg;
    CheckpointManifest manifest;
};
struct LoadedOdo {
    OdoWeights weights;
    OdoConfig cfg;
    CheckpointManifest manifest;
};

LoadedBbox load_bbox_checkpoint(const std::string& path);
LoadedOdo load_odo_checkpoint(const std::string& path);

struct MakeAllOutcome {
    std::string dataset_dir;
    std::vector<std::string> checkpoints;
    std::vector<std::string> reports;
};

/// Full pipeline under out_dir: dataset (reused when already present with a
/// matching manifest), odometry models with and without the visual stream,
/// the box-model grid, then table1/table3/table4/fig3 CSVs.
MakeAllOutcome run_make_all(const ExperimentConfig& exp, const std::string& out_dir, bool verbose);

} // namespace fse
