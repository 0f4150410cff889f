#pragma once

#include <utility>
#include <vector>

#include "foresee/bbox_model.hpp"
#include "foresee/types.hpp"

namespace fse {

/// Per-step uncertainty decomposition in pixels^2. total[j] = epistemic[j] +
/// aleatoric[j]; the sequence-level numbers average across steps.
struct UncertaintyEstimate {
    std::vector<double> epistemic;
    std::vector<double> aleatoric;
    std::vector<double> total;
    double mean_epistemic = 0.0;
    double mean_aleatoric = 0.0;
    double mean_total = 0.0;
    /// Set when only one sample was available: the epistemic term is then
    /// identically zero, not an estimate.
    bool epistemic_degenerate = false;
};

/// Moment matching over sample statistics. means[i][j] is sample i's mean box
/// at step j; vars[i][j] holds the two predicted variance channels (x, y).
/// Per step: epistemic = trace of the biased sample covariance of the means;
/// aleatoric = average over samples of (var_x + var_y). Negative epistemic
/// round-off is clamped at -1e-9 tolerance.
UncertaintyEstimate moment_match(const std::vector<std::vector<BoundingBox>>& means,
                                 const std::vector<std::vector<std::pair<double, double>>>& vars);

/// Pixel-space decomposition of a predictive sample set.
UncertaintyEstimate moment_match(const PredictiveSampleSet& samples);

/// Negative log-likelihood of the truth under the equally-weighted mixture
/// of per-sample Gaussians, via log-sum-exp, averaged across steps. Inputs
/// must share one coordinate space.
double nll(const std::vector<std::vector<GaussianStepParams>>& sample_params,
           const std::vector<BoundingBox>& truth);
std::vector<double> nll_per_step(const std::vector<std::vector<GaussianStepParams>>& sample_params,
                                 const std::vector<BoundingBox>& truth);

/// NLL of a predictive sample set. Defaults to normalized coordinates (the
/// model's native sigma scale); pixel space differs by the log-Jacobian of
/// the scaling and sits behind the flag.
double nll(const PredictiveSampleSet& samples, const std::vector<BoundingBox>& truth_px,
           bool pixel_space = false);
std::vector<double> nll_per_step(const PredictiveSampleSet& samples,
                                 const std::vector<BoundingBox>& truth_px, bool pixel_space = false);

/// Mean over samples of the per-step mean boxes, denormalized to pixels.
std::vector<BoundingBox> predictive_mean_px(const PredictiveSampleSet& samples);

/// Mean squared pixel error over steps and the 4 coordinates.
double mse(const std::vector<BoundingBox>& pred, const std::vector<BoundingBox>& truth);
std::vector<double> mse_per_step(const std::vector<BoundingBox>& pred,
                                 const std::vector<BoundingBox>& truth);

/// Spearman rank correlation with average ranks for ties. Returns NaN when
/// either side is constant (correlation undefined).
double spearman(const std::vector<double>& a, const std::vector<double>& b);

struct CalibrationPair {
    double uncertainty = 0.0;
    double sq_error = 0.0;
};

/// Equal-count bins over pairs sorted by uncertainty. The envelope holds the
/// per-bin maximum log squared error after a cumulative max, so it is
/// non-decreasing by construction.
struct CalibrationReport {
    std::vector<CalibrationPair> pairs;
    std::vector<double> bin_mean_uncertainty;
    std::vector<double> bin_max_log_se;
    double spearman_rho = 0.0; // NaN when all uncertainties tie
};

CalibrationReport calibration_report(std::vector<CalibrationPair> pairs, int num_bins);

} // namespace fse
