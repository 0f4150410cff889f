#include "foresee/uncertainty.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace fse {

namespace {
constexpr double kNegTol = -1e-9;

double clamp_nonneg(double v, const char* what) {
    if (v < kNegTol) throw NumericalError(std::string(what) + " below tolerance: " + std::to_string(v));
    return v < 0.0 ? 0.0 : v;
}
} // namespace

UncertaintyEstimate moment_match(const std::vector<std::vector<BoundingBox>>& means,
                                 const std::vector<std::vector<std::pair<double, double>>>& vars) {
    if (means.empty()) throw ContractError("moment_match over empty sample set");
    if (means.size() != vars.size()) throw DimensionError("means/vars sample counts differ");
    const std::size_t T = means.size();
    const std::size_t n = means.front().size();
    for (std::size_t i = 0; i < T; ++i) {
        if (means[i].size() != n || vars[i].size() != n) throw DimensionError("uneven step counts in sample set");
    }

    UncertaintyEstimate u;
    u.epistemic_degenerate = T == 1;
    for (std::size_t j = 0; j < n; ++j) {
        double sum[4] = {0, 0, 0, 0};
        double sumsq[4] = {0, 0, 0, 0};
        double al = 0.0;
        for (std::size_t i = 0; i < T; ++i) {
            const double c[4] = {means[i][j].x_tl, means[i][j].y_tl, means[i][j].x_br, means[i][j].y_br};
            for (int k = 0; k < 4; ++k) {
                sum[k] += c[k];
                sumsq[k] += c[k] * c[k];
            }
            al += vars[i][j].first + vars[i][j].second;
        }
        double ep = 0.0;
        for (int k = 0; k < 4; ++k) ep += sumsq[k] / T - (sum[k] / T) * (sum[k] / T);
        u.epistemic.push_back(clamp_nonneg(ep, "epistemic"));
        u.aleatoric.push_back(clamp_nonneg(al / T, "aleatoric"));
        u.total.push_back(u.epistemic.back() + u.aleatoric.back());
    }
    const double dn = static_cast<double>(n);
    u.mean_epistemic = std::accumulate(u.epistemic.begin(), u.epistemic.end(), 0.0) / dn;
    u.mean_aleatoric = std::accumulate(u.aleatoric.begin(), u.aleatoric.end(), 0.0) / dn;
    u.mean_total = std::accumulate(u.total.begin(), u.total.end(), 0.0) / dn;
    return u;
}

UncertaintyEstimate moment_match(const PredictiveSampleSet& s) {
    if (s.trajectories.empty()) throw ContractError("moment_match over empty sample set");
    const double W = s.scale.image_width, H = s.scale.image_height;
    std::vector<std::vector<BoundingBox>> means;
    std::vector<std::vector<std::pair<double, double>>> vars;
    for (const PredictiveTrajectory& t : s.trajectories) {
        std::vector<BoundingBox> m;
        std::vector<std::pair<double, double>> v;
        for (const GaussianStepParams& p : t.params) {
            m.push_back(s.scale.denormalize(p.mean));
            v.emplace_back(p.sigma_x * p.sigma_x * W * W, p.sigma_y * p.sigma_y * H * H);
        }
        means.push_back(std::move(m));
        vars.push_back(std::move(v));
    }
    return moment_match(means, vars);
}

namespace {

double log_gauss_density(const BoundingBox& truth, const GaussianStepParams& p) {
    const double vx = p.sigma_x * p.sigma_x;
    const double vy = p.sigma_y * p.sigma_y;
    if (!(p.sigma_x > 0.0) || !(p.sigma_y > 0.0)) throw NumericalError("nonpositive sigma in nll");
    const double rx1 = truth.x_tl - p.mean.x_tl;
    const double ry1 = truth.y_tl - p.mean.y_tl;
    const double rx2 = truth.x_br - p.mean.x_br;
    const double ry2 = truth.y_br - p.mean.y_br;
    const double quad = (rx1 * rx1 + rx2 * rx2) / vx + (ry1 * ry1 + ry2 * ry2) / vy;
    const double logdet = 2.0 * (std::log(vx) + std::log(vy));
    return -0.5 * (quad + logdet + 4.0 * std::log(2.0 * M_PI));
}

} // namespace

std::vector<double> nll_per_step(const std::vector<std::vector<GaussianStepParams>>& sample_params,
                                 const std::vector<BoundingBox>& truth) {
    if (sample_params.empty()) throw ContractError("nll over empty sample set");
    const std::size_t n = truth.size();
    for (const auto& s : sample_params) {
        if (s.size() != n) throw DimensionError("sample/truth length mismatch in nll");
    }
    const double T = static_cast<double>(sample_params.size());
    std::vector<double> out;
    out.reserve(n);
    for (std::size_t j = 0; j < n; ++j) {
        double max_log = -std::numeric_limits<double>::infinity();
        std::vector<double> logs;
        logs.reserve(sample_params.size());
        for (const auto& s : sample_params) {
            logs.push_back(log_gauss_density(truth[j], s[j]));
            max_log = std::max(max_log, logs.back());
        }
        double acc = 0.0;
        for (double l : logs) acc += std::exp(l - max_log);
        out.push_back(-(max_log + std::log(acc / T)));
    }
    return out;
}

double nll(const std::vector<std::vector<GaussianStepParams>>& sample_params,
           const std::vector<BoundingBox>& truth) {
    const std::vector<double> per = nll_per_step(sample_params, truth);
    return std::accumulate(per.begin(), per.end(), 0.0) / static_cast<double>(per.size());
}

namespace {

std::vector<std::vector<GaussianStepParams>> params_in_space(const PredictiveSampleSet& s,
                                                             const std::vector<BoundingBox>& truth_px,
                                                             bool pixel_space,
                                                             std::vector<BoundingBox>& truth_out) {
    const double W = s.scale.image_width, H = s.scale.image_height;
    std::vector<std::vector<GaussianStepParams>> params;
    params.reserve(s.trajectories.size());
    for (const PredictiveTrajectory& t : s.trajectories) {
        if (!pixel_space) {
            params.push_back(t.params);
            continue;
        }
        std::vector<GaussianStepParams> px;
        px.reserve(t.params.size());
        for (const GaussianStepParams& p : t.params) {
            px.push_back({s.scale.denormalize(p.mean), p.sigma_x * W, p.sigma_y * H});
        }
        params.push_back(std::move(px));
    }
    truth_out.clear();
    for (const BoundingBox& b : truth_px) {
        truth_out.push_back(pixel_space ? b : s.scale.normalize(b));
    }
    return params;
}

} // namespace

std::vector<double> nll_per_step(const PredictiveSampleSet& samples,
                                 const std::vector<BoundingBox>& truth_px, bool pixel_space) {
    std::vector<BoundingBox> truth;
    const auto params = params_in_space(samples, truth_px, pixel_space, truth);
    return nll_per_step(params, truth);
}

double nll(const PredictiveSampleSet& samples, const std::vector<BoundingBox>& truth_px, bool pixel_space) {
    std::vector<BoundingBox> truth;
    const auto params = params_in_space(samples, truth_px, pixel_space, truth);
    return nll(params, truth);
}

std::vector<BoundingBox> predictive_mean_px(const PredictiveSampleSet& s) {
    if (s.trajectories.empty()) throw ContractError("empty sample set");
    const std::size_t n = s.trajectories.front().params.size();
    std::vector<BoundingBox> mean(n);
    for (const PredictiveTrajectory& t : s.trajectories) {
        if (t.params.size() != n) throw DimensionError("uneven trajectory lengths");
        for (std::size_t j = 0; j < n; ++j) {
            const BoundingBox px = s.scale.denormalize(t.params[j].mean);
            mean[j].x_tl += px.x_tl;
            mean[j].y_tl += px.y_tl;
            mean[j].x_br += px.x_br;
            mean[j].y_br += px.y_br;
        }
    }
    const double T = static_cast<double>(s.trajectories.size());
    for (BoundingBox& b : mean) {
        b.x_tl /= T;
        b.y_tl /= T;
        b.x_br /= T;
        b.y_br /= T;
    }
    return mean;
}

std::vector<double> mse_per_step(const std::vector<BoundingBox>& pred,
                                 const std::vector<BoundingBox>& truth) {
    if (pred.size() != truth.size()) throw DimensionError("mse length mismatch");
    if (pred.empty()) throw ContractError("mse over empty sequence");
    std::vector<double> out;
    out.reserve(pred.size());
    for (std::size_t j = 0; j < pred.size(); ++j) {
        const double d0 = pred[j].x_tl - truth[j].x_tl;
        const double d1 = pred[j].y_tl - truth[j].y_tl;
        const double d2 = pred[j].x_br - truth[j].x_br;
        const double d3 = pred[j].y_br - truth[j].y_br;
        out.push_back((d0 * d0 + d1 * d1 + d2 * d2 + d3 * d3) / 4.0);
    }
    return out;
}

double mse(const std::vector<BoundingBox>& pred, const std::vector<BoundingBox>& truth) {
    const std::vector<double> per = mse_per_step(pred, truth);
    return std::accumulate(per.begin(), per.end(), 0.0) / static_cast<double>(per.size());
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& v) {
    const std::size_t n = v.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
        const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
        i = j + 1;
    }
    return ranks;
}

} // namespace

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw DimensionError("spearman length mismatch");
    if (a.size() < 2) throw ContractError("spearman needs >= 2 pairs");
    const std::vector<double> ra = average_ranks(a);
    const std::vector<double> rb = average_ranks(b);
    const double n = static_cast<double>(a.size());
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += ra[i];
        mb += rb[i];
    }
    ma /= n;
    mb /= n;
    double cov = 0, va = 0, vb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double da = ra[i] - ma, db = rb[i] - mb;
        cov += da * db;
        va += da * da;
        vb += db * db;
    }
    if (va == 0.0 || vb == 0.0) return std::numeric_limits<double>::quiet_NaN();
    return cov / std::sqrt(va * vb);
}

CalibrationReport calibration_report(std::vector<CalibrationPair> pairs, int num_bins) {
    if (pairs.size() < 2) throw ContractError("calibration_report needs >= 2 pairs");
    if (num_bins < 1) throw ContractError("num_bins must be >= 1");

    CalibrationReport r;
    {
        std::vector<double> u, se;
        u.reserve(pairs.size());
        se.reserve(pairs.size());
        for (const CalibrationPair& p : pairs) {
            u.push_back(p.uncertainty);
            se.push_back(p.sq_error);
        }
        r.spearman_rho = spearman(u, se);
    }

    std::sort(pairs.begin(), pairs.end(), [](const CalibrationPair& a, const CalibrationPair& b) {
        return a.uncertainty < b.uncertainty;
    });
    const std::size_t n = pairs.size();
    const std::size_t bins = std::min<std::size_t>(static_cast<std::size_t>(num_bins), n);
    double running_max = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < bins; ++k) {
        const std::size_t lo = k * n / bins;
        const std::size_t hi = (k + 1) * n / bins;
        double mean_u = 0.0;
        double max_se = 0.0;
        for (std::size_t i = lo; i < hi; ++i) {
            mean_u += pairs[i].uncertainty;
            max_se = std::max(max_se, pairs[i].sq_error);
        }
        mean_u /= static_cast<double>(hi - lo);
        running_max = std::max(running_max, std::log(std::max(max_se, 1e-30)));
        r.bin_mean_uncertainty.push_back(mean_u);
        r.bin_max_log_se.push_back(running_max);
    }
    r.pairs = std::move(pairs);
    return r;
}

} // namespace fse
