#pragma once

#include <string>
#include <utility>
#include <vector>

#include "foresee/dataset.hpp"
#include "foresee/lstm.hpp"
#include "foresee/rng.hpp"
#include "foresee/tape.hpp"
#include "foresee/types.hpp"

namespace fse {

/// Point-estimate odometry stream: no dropout, no embeddings. The encoder
/// LSTM summarizes past odometry; the decoder reads the concatenated
/// (summary, visual feature) vector at every step.
struct OdoConfig {
    int past_steps = 8;
    int horizon = 15;
    int hidden_dim = 128;
    bool use_visual = true;
    int raster_size = 32;
    /// 3x3 same-padding conv layers; a 2x2 max-pool follows every second one.
    std::vector<int> conv_channels = {8, 8, 16, 16};
    /// Hidden dense widths (ReLU); the final tanh layer of width v_vis_dim
    /// follows.
    std::vector<int> dense_sizes = {64};
    int v_vis_dim = 16;

    int decoder_in() const { return hidden_dim + (use_visual ? v_vis_dim : 0); }
    int flat_dim() const;
    void validate() const;

    /// Full-size profile mirroring the published layer schema; present as a
    /// named configuration, not exercised by the test suite.
    static OdoConfig paper_scale();
};

struct OdoWeights {
    std::vector<Array> conv_w; // per layer {out_ch, in_ch*9}
    std::vector<Array> conv_b; // per layer {1, out_ch}
    std::vector<Array> fc_w;   // hidden dense layers then the v_vis layer
    std::vector<Array> fc_b;
    LstmWeights enc;
    LstmWeights dec;
    Array w_head; // {hidden_dim, 2}
    Array b_head; // {1, 2}

    std::vector<std::pair<std::string, Array*>> named();
    std::vector<std::pair<std::string, const Array*>> named() const;
};

OdoWeights odo_init(const OdoConfig& cfg, Rng& rng);

// Value-level kernels backing the conv custom ops; exposed for oracle tests.
// Feature maps are rows of channel-major cells: index = (c*H + y)*W + x.

Array conv3x3_same(const Array& x, const Array& k, const Array& bias, int in_ch, int height, int width);
Array maxpool2x2(const Array& x, int ch, int height, int width);

/// CNN feature of one or more rasters (rows). Deterministic: this stream
/// carries no dropout.
Array encode_visual(const Array& raster_rows, const OdoWeights& w, const OdoConfig& cfg);

/// Tape counterpart used during training.
Var encode_visual(Tape& tape, Var raster_rows, const std::vector<Var>& conv_w,
                  const std::vector<Var>& conv_b, const std::vector<Var>& fc_w,
                  const std::vector<Var>& fc_b, const OdoConfig& cfg);

/// n future odometry point estimates in native units. raster may be null
/// only when the config disables the visual pathway.
std::vector<OdometryState> predict_odometry(const std::vector<OdometryState>& past,
                                            const Array* raster, const OdoWeights& w,
                                            const OdoConfig& cfg, int n);

struct OdoBatchTask {
    std::vector<OdometryState> past;
    const Array* raster = nullptr;
    std::vector<OdometryState> target; // empty at inference
};

std::vector<std::vector<OdometryState>> predict_odometry_batch(const std::vector<OdoBatchTask>& tasks,
                                                               const OdoWeights& w, const OdoConfig& cfg,
                                                               int n);

/// Per-channel mean squared error in native units (speed (m/s)^2, angle
/// degrees^2), averaged over steps.
struct OdoLoss {
    double speed_mse = 0.0;
    double angle_mse = 0.0;
    double mean() const { return 0.5 * (speed_mse + angle_mse); }
};

OdoLoss odometry_loss(const std::vector<OdometryState>& pred, const std::vector<OdometryState>& target);

/// Tape-recorded batch loss: mean over batch, steps, and the two channels of
/// squared error, matching OdoLoss::mean() averaged over the batch.
struct OdoLossGraph {
    Tape tape;
    std::vector<Var> weight_vars;
    Var loss;
};

OdoLossGraph build_odo_loss_graph(const std::vector<OdoBatchTask>& tasks, const OdoWeights& w,
                                  const OdoConfig& cfg);

/// Steering negated at every frame, raster mirrored left-right, everything
/// else untouched. Involutive bitwise. Callers skip zero-mean-steering
/// tracks; the function itself does not check.
Track augment_flip(const Track& track);

} // namespace fse
