#pragma once

#include <string>
#include <utility>
#include <vector>

#include "foresee/lstm.hpp"
#include "foresee/rng.hpp"
#include "foresee/tape.hpp"
#include "foresee/types.hpp"

namespace fse {

/// Uncertainty treatment of the box stream. Homoscedastic fixes sigma at 1
/// and disables masks; aleatoric predicts sigma with masks off; bayesian
/// keeps both the predicted sigma and the Bernoulli masks.
enum class Variant { homoscedastic, aleatoric, bayesian };

/// Conditioning source for the decoder: no odometry, the predicted future
/// odometry, or the ground-truth future odometry (oracle row).
enum class Streams { one, two, oracle_odometry };

std::string to_string(Variant v);
std::string to_string(Streams s);
Variant parse_variant(const std::string& s);
Streams parse_streams(const std::string& s);

struct BboxConfig {
    int past_steps = 8;  // m
    int horizon = 15;    // n
    int embed_dim = 64;
    int hidden_dim = 128;
    int odo_dim = 2;
    double keep_prob = 0.65;
    double lambda = 1e-4;
    int mc_samples = 50;
    Variant variant = Variant::bayesian;
    Streams streams = Streams::two;
    bool autoregressive = false;
    int image_width = 512;
    int image_height = 256;

    bool uses_odometry() const { return streams != Streams::one; }
    /// Encoder embeds the concatenated (box, odometry) step vector.
    int encoder_in() const { return 4 + (uses_odometry() ? odo_dim : 0); }
    /// Decoder embeds (summary, future odometry[, previous box]) per step.
    int decoder_in() const {
        return hidden_dim + (uses_odometry() ? odo_dim : 0) + (autoregressive ? 4 : 0);
    }
    /// Masks collapse to identity outside the bayesian variant.
    double effective_keep_prob() const { return variant == Variant::bayesian ? keep_prob : 1.0; }
    BoxScale box_scale() const { return {image_width, image_height}; }

    void validate() const;
};

/// The four masked matrices form the variational family; the output head
/// carries no mask.
struct BboxWeights {
    Array w_emi;
    Array w_ems;
    LstmWeights enc;
    LstmWeights dec;
    Array w_head; // {hidden_dim, 6}: 4 mean + log var_x + log var_y
    Array b_head; // {1, 6}

    std::vector<std::pair<std::string, Array*>> named();
    std::vector<std::pair<std::string, const Array*>> named() const;
    /// The regularized set: the four masked matrices, head excluded.
    std::vector<const Array*> regularized() const;
};

BboxWeights bbox_init(const BboxConfig& cfg, Rng& rng);

/// One Bernoulli mask set, one row per sequence in the batch. Encoder and
/// decoder draws are independent; a set is reused across every step of its
/// sequence.
struct BboxMaskSet {
    Array z_emi;
    Array z_ems;
    Array enc_x, enc_h;
    Array dec_x, dec_h;
};

BboxMaskSet sample_bbox_masks(const BboxConfig& cfg, int rows, double keep_prob, Rng& rng);
BboxMaskSet ones_bbox_masks(const BboxConfig& cfg, int rows);

/// One prediction instance: m conditioning steps and an n-step future.
/// future_odo holds true or predicted odometry depending on the caller;
/// target_boxes is empty at inference.
struct PredictionTask {
    std::vector<BoundingBox> past_boxes;
    std::vector<OdometryState> past_odo;
    std::vector<OdometryState> future_odo;
    std::vector<BoundingBox> target_boxes;
};

/// Per-step Gaussian in normalized box coordinates: mean plus per-axis std,
/// covariance diag(sx^2, sy^2, sx^2, sy^2) over (x_tl, y_tl, x_br, y_br).
struct GaussianStepParams {
    BoundingBox mean;
    double sigma_x = 1.0;
    double sigma_y = 1.0;
};

/// Deterministic forward pass for a batch under one mask set (rows of the
/// mask arrays correspond to tasks). Returns normalized-space params.
std::vector<std::vector<GaussianStepParams>> forward_params_batch(
    const std::vector<PredictionTask>& tasks, const BboxWeights& w, const BboxConfig& cfg,
    const BboxMaskSet& masks);

std::vector<GaussianStepParams> forward_params(const PredictionTask& task, const BboxWeights& w,
                                               const BboxConfig& cfg, const BboxMaskSet& masks);

struct PredictiveTrajectory {
    std::vector<GaussianStepParams> params; // normalized space
    std::vector<BoundingBox> sampled_px;    // Gaussian draws, denormalized
};

struct PredictiveSampleSet {
    std::vector<PredictiveTrajectory> trajectories; // size T
    std::vector<BboxMaskSet> mask_sets;             // one per sample
    BoxScale scale;
};

/// Monte-Carlo predictive distribution: per sample, draw a mask set, run the
/// forward pass, then draw one box per step from the step Gaussian.
PredictiveSampleSet sample_predictive(const PredictionTask& task, const BboxWeights& w,
                                      const BboxConfig& cfg, int samples, double keep_prob, Rng& rng);

/// Batched variant: one set per task, masks drawn per (task, sample).
std::vector<PredictiveSampleSet> sample_predictive_batch(const std::vector<PredictionTask>& tasks,
                                                         const BboxWeights& w, const BboxConfig& cfg,
                                                         int samples, double keep_prob, Rng& rng);

/// Training objective over already-computed parameter sequences:
///   (1/(4N)) sum_i sum_j sum_coord (residual^2 / var_axis)
/// + lambda * sum over the four masked matrices of ||W||_2^2
/// + (1/N) sum_i sum_j (log var_x + log var_y)
/// with residuals and sigmas in normalized coordinates. N is the batch size;
/// steps are summed, not averaged.
double training_loss(const std::vector<std::vector<GaussianStepParams>>& params,
                     const std::vector<std::vector<BoundingBox>>& targets_norm, const BboxWeights& w,
                     double lambda);

/// Tape-recorded forward + loss over one batch, for the optimizer. Masks are
/// per-row; targets are raw pixel boxes, normalized internally. Weight leaves
/// are ordered as BboxWeights::named().
struct BboxLossGraph {
    Tape tape;
    std::vector<Var> weight_vars;
    Var loss;
};

BboxLossGraph build_loss_graph(const std::vector<PredictionTask>& tasks, const BboxWeights& w,
                               const BboxConfig& cfg, const BboxMaskSet& masks);

} // namespace fse
