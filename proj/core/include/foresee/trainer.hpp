#pragma once

#include <cstdint>
#include <vector>

#include "foresee/bbox_model.hpp"
#include "foresee/dataset.hpp"
#include "foresee/odometry_model.hpp"
#include "foresee/rng.hpp"

namespace fse {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    void validate() const;
};

/// Bias-corrected Adam. One state per parameter list; the list passed to
/// step() must keep the same order and shapes across calls.
class AdamState {
public:
    AdamState() = default;
    explicit AdamState(const std::vector<Array*>& params);

    void step(const std::vector<Array*>& params, const std::vector<const Array*>& grads,
              const AdamConfig& cfg);

    long steps() const { return t_; }

private:
    long t_ = 0;
    double beta1_pow_ = 1.0;
    double beta2_pow_ = 1.0;
    std::vector<Array> m_;
    std::vector<Array> v_;
};

/// Start offsets of every (past+horizon)-length window in a track of the
/// given length: max(0, len - (past + horizon) + 1) of them.
std::vector<int> sliding_windows(int track_len, int past, int horizon);

/// Track-local frame index of the generation boundary: conditioning windows
/// end at it, futures start there, and the stored raster is rendered at the
/// frame just before it. Past lengths of 4, 6 and 8 share the same targets.
inline constexpr int kAlignFrame = 8;

struct WindowRef {
    const Track* track = nullptr;
    int cond_start = 0;
};

/// The one raster-aligned window per track: conditioning on
/// [kAlignFrame - past, kAlignFrame), future [kAlignFrame, kAlignFrame + horizon).
/// Tracks too short for the horizon are skipped.
std::vector<WindowRef> aligned_windows(const std::vector<const Track*>& tracks, int past, int horizon);

struct TrainConfig {
    AdamConfig adam;
    int epochs = 40;
    int batch_size = 16;
    /// Consecutive epochs without validation improvement before a stage stops.
    int patience = 5;
    /// Horizon schedule; stages share weights, each starting from the
    /// previous stage's best-validation parameters. Must be strictly
    /// increasing and end at the model horizon.
    std::vector<int> curriculum = {5, 10, 15};
    std::uint64_t seed = 1;
    /// Adds steering-flipped copies of curved tracks to the training split.
    bool flip_augment = false;
    bool verbose = false;

    void validate(int final_horizon) const;
};

struct StageReport {
    int horizon = 0;
    int epochs_run = 0;
    double best_val = 0.0;
    std::vector<double> val_history;
};

struct TrainReport {
    std::vector<StageReport> stages;
    double final_val = 0.0;
    long adam_steps = 0;
};

struct OdoPredictorRef {
    const OdoWeights* weights = nullptr;
    const OdoConfig* config = nullptr;
};

/// Window materialized as a model input. future_odo is filled with the true
/// future odometry; two-stream training overwrites it with predictions.
PredictionTask make_bbox_task(const Track& track, int cond_start, int past, int horizon,
                              bool noisy_targets);

/// Curriculum training of the box stream. Validation runs with identity
/// masks and no regularization; the best-validation weights of each stage
/// carry into the next. When cfg.streams is `two` and odo is non-null, the
/// decoder conditions on the frozen odometry model's predictions; a null odo
/// falls back to ground-truth future odometry.
TrainReport train_bbox_model(BboxWeights& w, const BboxConfig& cfg,
                             const std::vector<const Track*>& train_tracks,
                             const std::vector<const Track*>& val_tracks, const TrainConfig& tc,
                             const OdoPredictorRef* odo = nullptr);

/// Curriculum training of the odometry stream on its aligned windows.
TrainReport train_odometry_model(OdoWeights& w, const OdoConfig& cfg,
                                 const std::vector<const Track*>& train_tracks,
                                 const std::vector<const Track*>& val_tracks, const TrainConfig& tc);

/// Mean box-stream objective (no regularization, identity masks) over tasks.
double eval_bbox_loss(const std::vector<PredictionTask>& tasks, const BboxWeights& w,
                      const BboxConfig& cfg);

/// Mean odometry objective over tasks, native units.
double eval_odo_loss(const std::vector<OdoBatchTask>& tasks, const OdoWeights& w, const OdoConfig& cfg);

} // namespace fse
