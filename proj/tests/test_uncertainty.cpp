#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include <foresee/rng.hpp>
#include <foresee/uncertainty.hpp>

#include "test_util.hpp"

using fse::BoundingBox;
using fse::GaussianStepParams;
using fse::Rng;

namespace {

BoundingBox box4(double a, double b, double c, double d) { return {a, b, c, d}; }

// Direct two-pass covariance trace: mean each coordinate, then average the
// squared deviations (biased, 1/T).
double epistemic_oracle(const std::vector<BoundingBox>& step_means) {
    const double T = static_cast<double>(step_means.size());
    double mean[4] = {0, 0, 0, 0};
    for (const BoundingBox& m : step_means) {
        mean[0] += m.x_tl;
        mean[1] += m.y_tl;
        mean[2] += m.x_br;
        mean[3] += m.y_br;
    }
    for (double& v : mean) v /= T;
    double tr = 0.0;
    for (const BoundingBox& m : step_means) {
        tr += (m.x_tl - mean[0]) * (m.x_tl - mean[0]) + (m.y_tl - mean[1]) * (m.y_tl - mean[1]) +
              (m.x_br - mean[2]) * (m.x_br - mean[2]) + (m.y_br - mean[3]) * (m.y_br - mean[3]);
    }
    return tr / T;
}

double log_sum_exp(const std::vector<double>& v) {
    const double m = *std::max_element(v.begin(), v.end());
    double s = 0.0;
    for (double x : v) s += std::exp(x - m);
    return m + std::log(s);
}

// Mixture NLL recomputed from the density definition, one step.
double nll_step_oracle(const std::vector<GaussianStepParams>& step_params, const BoundingBox& truth) {
    std::vector<double> logs;
    for (const GaussianStepParams& p : step_params) {
        const double vx = p.sigma_x * p.sigma_x;
        const double vy = p.sigma_y * p.sigma_y;
        const double q = (truth.x_tl - p.mean.x_tl) * (truth.x_tl - p.mean.x_tl) / vx +
                         (truth.y_tl - p.mean.y_tl) * (truth.y_tl - p.mean.y_tl) / vy +
                         (truth.x_br - p.mean.x_br) * (truth.x_br - p.mean.x_br) / vx +
                         (truth.y_br - p.mean.y_br) * (truth.y_br - p.mean.y_br) / vy;
        const double logdet = 2.0 * std::log(vx) + 2.0 * std::log(vy);
        logs.push_back(-0.5 * (q + logdet + 4.0 * std::log(2.0 * 3.14159265358979323846)));
    }
    return -(log_sum_exp(logs) - std::log(static_cast<double>(logs.size())));
}

} // namespace

TEST_CASE("uncertainty: moment matching examples") {
    SUBCASE("identical samples carry no epistemic term") {
        std::vector<std::vector<BoundingBox>> means(5, {box4(3, 4, 5, 6)});
        std::vector<std::vector<std::pair<double, double>>> vars(5, {{0.5, 0.25}});
        const auto est = fse::moment_match(means, vars);
        CHECK(est.epistemic[0] == 0.0);
        CHECK(est.aleatoric[0] == doctest::Approx(0.75).epsilon(1e-12));
        CHECK(est.total[0] == doctest::Approx(0.75).epsilon(1e-12));
        CHECK_FALSE(est.epistemic_degenerate);
    }
    SUBCASE("two means split by two on one coordinate") {
        std::vector<std::vector<BoundingBox>> means = {{box4(0, 0, 0, 0)}, {box4(2, 0, 0, 0)}};
        std::vector<std::vector<std::pair<double, double>>> vars = {{{0.0, 0.0}}, {{0.0, 0.0}}};
        const auto est = fse::moment_match(means, vars);
        // Biased covariance of {0,2} is 1 per the x_tl coordinate; trace = 1.
        CHECK(est.epistemic[0] == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(est.aleatoric[0] == 0.0);
    }
    SUBCASE("two means split by two on every coordinate") {
        std::vector<std::vector<BoundingBox>> means = {{box4(0, 0, 0, 0)}, {box4(2, 2, 2, 2)}};
        std::vector<std::vector<std::pair<double, double>>> vars = {{{0.0, 0.0}}, {{0.0, 0.0}}};
        const auto est = fse::moment_match(means, vars);
        CHECK(est.epistemic[0] == doctest::Approx(4.0).epsilon(1e-12));
        CHECK(est.mean_epistemic == doctest::Approx(4.0).epsilon(1e-12));
    }
    SUBCASE("unit predicted variances average to the aleatoric term") {
        std::vector<std::vector<BoundingBox>> means(3, {box4(1, 1, 1, 1)});
        std::vector<std::vector<std::pair<double, double>>> vars(3, {{2.0, 2.0}});
        const auto est = fse::moment_match(means, vars);
        CHECK(est.aleatoric[0] == doctest::Approx(4.0).epsilon(1e-12));
    }
    SUBCASE("single sample is flagged degenerate") {
        std::vector<std::vector<BoundingBox>> means = {{box4(1, 2, 3, 4)}};
        std::vector<std::vector<std::pair<double, double>>> vars = {{{1.0, 1.0}}};
        const auto est = fse::moment_match(means, vars);
        CHECK(est.epistemic[0] == 0.0);
        CHECK(est.epistemic_degenerate);
    }
}

TEST_CASE("uncertainty: moment matching against the two-pass oracle") {
    Rng rng(601);
    for (int trial = 0; trial < 120; ++trial) {
        const int T = 2 + static_cast<int>(rng.uniform_index(8));
        const int n = 1 + static_cast<int>(rng.uniform_index(4));
        std::vector<std::vector<BoundingBox>> means(static_cast<std::size_t>(T));
        std::vector<std::vector<std::pair<double, double>>> vars(static_cast<std::size_t>(T));
        for (int t = 0; t < T; ++t) {
            for (int j = 0; j < n; ++j) {
                means[static_cast<std::size_t>(t)].push_back(box4(
                    rng.uniform(-50, 50), rng.uniform(-50, 50), rng.uniform(-50, 50), rng.uniform(-50, 50)));
                vars[static_cast<std::size_t>(t)].push_back({rng.uniform(0.0, 9.0), rng.uniform(0.0, 9.0)});
            }
        }
        const auto est = fse::moment_match(means, vars);
        for (int j = 0; j < n; ++j) {
            std::vector<BoundingBox> step;
            double alea = 0.0;
            for (int t = 0; t < T; ++t) {
                step.push_back(means[static_cast<std::size_t>(t)][static_cast<std::size_t>(j)]);
                alea += vars[static_cast<std::size_t>(t)][static_cast<std::size_t>(j)].first +
                        vars[static_cast<std::size_t>(t)][static_cast<std::size_t>(j)].second;
            }
            const double epi = epistemic_oracle(step);
            CHECK(testutil::rel_err(est.epistemic[static_cast<std::size_t>(j)], epi) < 1e-9);
            CHECK(testutil::rel_err(est.aleatoric[static_cast<std::size_t>(j)], alea / T) < 1e-9);
            CHECK(est.total[static_cast<std::size_t>(j)] ==
                  doctest::Approx(est.epistemic[static_cast<std::size_t>(j)] +
                                  est.aleatoric[static_cast<std::size_t>(j)])
                      .epsilon(1e-12));
        }
        // Sample order cannot matter: both terms are symmetric statistics.
        std::vector<std::vector<BoundingBox>> rmeans(means.rbegin(), means.rend());
        std::vector<std::vector<std::pair<double, double>>> rvars(vars.rbegin(), vars.rend());
        const auto rev = fse::moment_match(rmeans, rvars);
        for (int j = 0; j < n; ++j) {
            CHECK(testutil::rel_err(rev.epistemic[static_cast<std::size_t>(j)],
                                    est.epistemic[static_cast<std::size_t>(j)]) < 1e-12);
            CHECK(rev.aleatoric[static_cast<std::size_t>(j)] ==
                  doctest::Approx(est.aleatoric[static_cast<std::size_t>(j)]).epsilon(1e-12));
        }
    }
}

TEST_CASE("uncertainty: mixture negative log-likelihood") {
    SUBCASE("single unit Gaussian at the truth has the closed form") {
        std::vector<std::vector<GaussianStepParams>> params(1);
        params[0].push_back({box4(1, 2, 3, 4), 1.0, 1.0});
        const double got = fse::nll(params, {box4(1, 2, 3, 4)});
        CHECK(got == doctest::Approx(2.0 * std::log(2.0 * 3.14159265358979323846)).epsilon(1e-9));
        CHECK(got == doctest::Approx(3.6757541328186907).epsilon(1e-9));
    }
    SUBCASE("duplicating every sample changes nothing") {
        Rng rng(603);
        std::vector<std::vector<GaussianStepParams>> params;
        for (int t = 0; t < 4; ++t) {
            std::vector<GaussianStepParams> traj;
            for (int j = 0; j < 3; ++j) {
                traj.push_back({box4(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2),
                                     rng.uniform(-2, 2)),
                                rng.uniform(0.3, 2.0), rng.uniform(0.3, 2.0)});
            }
            params.push_back(traj);
        }
        std::vector<BoundingBox> truth = {box4(0.1, 0.2, 0.3, 0.4), box4(1, 1, 1, 1), box4(-1, 0, 1, 2)};
        auto doubled = params;
        doubled.insert(doubled.end(), params.begin(), params.end());
        CHECK(fse::nll(params, truth) == doctest::Approx(fse::nll(doubled, truth)).epsilon(1e-12));
    }
    SUBCASE("random mixtures match the direct density oracle") {
        Rng rng(605);
        for (int trial = 0; trial < 100; ++trial) {
            const int T = 1 + static_cast<int>(rng.uniform_index(6));
            const int n = 1 + static_cast<int>(rng.uniform_index(3));
            std::vector<std::vector<GaussianStepParams>> params(static_cast<std::size_t>(T));
            std::vector<BoundingBox> truth;
            for (int j = 0; j < n; ++j)
                truth.push_back(box4(rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3),
                                     rng.uniform(-3, 3)));
            for (int t = 0; t < T; ++t) {
                for (int j = 0; j < n; ++j) {
                    params[static_cast<std::size_t>(t)].push_back(
                        {box4(rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3),
                              rng.uniform(-3, 3)),
                         rng.uniform(0.2, 3.0), rng.uniform(0.2, 3.0)});
                }
            }
            double want = 0.0;
            for (int j = 0; j < n; ++j) {
                std::vector<GaussianStepParams> step;
                for (int t = 0; t < T; ++t)
                    step.push_back(params[static_cast<std::size_t>(t)][static_cast<std::size_t>(j)]);
                want += nll_step_oracle(step, truth[static_cast<std::size_t>(j)]);
            }
            want /= n;
            CHECK(testutil::rel_err(fse::nll(params, truth), want) < 1e-9);
            const auto per_step = fse::nll_per_step(params, truth);
            REQUIRE(per_step.size() == static_cast<std::size_t>(n));
        }
    }
    SUBCASE("moving the truth away from the mass raises the score") {
        std::vector<std::vector<GaussianStepParams>> params(3);
        for (int t = 0; t < 3; ++t) params[static_cast<std::size_t>(t)].push_back({box4(0, 0, 0, 0), 1.0, 1.0});
        const double near = fse::nll(params, {box4(0.1, 0, 0, 0)});
        const double far = fse::nll(params, {box4(5, 0, 0, 0)});
        CHECK(far > near);
    }
    SUBCASE("tiny sigma with a large residual stays finite") {
        std::vector<std::vector<GaussianStepParams>> params(1);
        params[0].push_back({box4(0, 0, 0, 0), 1e-6, 1e-6});
        const double v = fse::nll(params, {box4(1e3, 0, 0, 0)});
        CHECK(std::isfinite(v));
        CHECK(v > 0.0);
    }
}

TEST_CASE("uncertainty: mean squared pixel error") {
    SUBCASE("uniform offset of two across all coordinates") {
        std::vector<BoundingBox> pred = {box4(2, 2, 2, 2), box4(3, 3, 3, 3)};
        std::vector<BoundingBox> truth = {box4(0, 0, 0, 0), box4(1, 1, 1, 1)};
        CHECK(fse::mse(pred, truth) == doctest::Approx(4.0).epsilon(1e-12));
        const auto per_step = fse::mse_per_step(pred, truth);
        CHECK(per_step[0] == doctest::Approx(4.0).epsilon(1e-12));
        CHECK(per_step[1] == doctest::Approx(4.0).epsilon(1e-12));
    }
    SUBCASE("random instances match the direct loop") {
        Rng rng(607);
        for (int trial = 0; trial < 100; ++trial) {
            const int n = 1 + static_cast<int>(rng.uniform_index(8));
            std::vector<BoundingBox> pred, truth;
            double acc = 0.0;
            for (int j = 0; j < n; ++j) {
                pred.push_back(box4(rng.uniform(-9, 9), rng.uniform(-9, 9), rng.uniform(-9, 9),
                                    rng.uniform(-9, 9)));
                truth.push_back(box4(rng.uniform(-9, 9), rng.uniform(-9, 9), rng.uniform(-9, 9),
                                     rng.uniform(-9, 9)));
                const BoundingBox& p = pred.back();
                const BoundingBox& t = truth.back();
                acc += (p.x_tl - t.x_tl) * (p.x_tl - t.x_tl) + (p.y_tl - t.y_tl) * (p.y_tl - t.y_tl) +
                       (p.x_br - t.x_br) * (p.x_br - t.x_br) + (p.y_br - t.y_br) * (p.y_br - t.y_br);
            }
            CHECK(testutil::rel_err(fse::mse(pred, truth), acc / (4.0 * n)) < 1e-12);
        }
    }
    SUBCASE("length mismatch is rejected") {
        CHECK_THROWS_AS(fse::mse({box4(0, 0, 0, 0)}, {}), fse::DimensionError);
    }
}

TEST_CASE("uncertainty: spearman rank correlation") {
    SUBCASE("perfect monotone relations") {
        CHECK(fse::spearman({1, 2, 3, 4}, {10, 20, 30, 40}) == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(fse::spearman({1, 2, 3, 4}, {8, 4, 2, 1}) == doctest::Approx(-1.0).epsilon(1e-12));
        // Monotone but nonlinear: rank correlation ignores the curvature.
        CHECK(fse::spearman({1, 2, 3, 4, 5}, {1, 8, 27, 64, 125}) == doctest::Approx(1.0).epsilon(1e-12));
    }
    SUBCASE("constant input is undefined") {
        CHECK(std::isnan(fse::spearman({1, 1, 1}, {1, 2, 3})));
        CHECK(std::isnan(fse::spearman({1, 2, 3}, {5, 5, 5})));
    }
    SUBCASE("brute-force oracle on random data with ties") {
        Rng rng(609);
        for (int trial = 0; trial < 100; ++trial) {
            const int n = 5 + static_cast<int>(rng.uniform_index(30));
            std::vector<double> a, b;
            for (int i = 0; i < n; ++i) {
                // Coarse grid forces ties regularly.
                a.push_back(static_cast<double>(rng.uniform_index(8)));
                b.push_back(static_cast<double>(rng.uniform_index(8)));
            }
            const auto ranks = [](const std::vector<double>& v) {
                const std::size_t n2 = v.size();
                std::vector<double> r(n2);
                for (std::size_t i = 0; i < n2; ++i) {
                    double less = 0.0, equal = 0.0;
                    for (std::size_t j = 0; j < n2; ++j) {
                        if (v[j] < v[i]) less += 1.0;
                        if (v[j] == v[i]) equal += 1.0;
                    }
                    // Average rank across the tie group, 1-based.
                    r[i] = less + 0.5 * (equal + 1.0);
                }
                return r;
            };
            const std::vector<double> ra = ranks(a), rb = ranks(b);
            double ma = 0.0, mb = 0.0;
            for (std::size_t i = 0; i < ra.size(); ++i) {
                ma += ra[i];
                mb += rb[i];
            }
            ma /= static_cast<double>(ra.size());
            mb /= static_cast<double>(rb.size());
            double num = 0.0, da = 0.0, db = 0.0;
            for (std::size_t i = 0; i < ra.size(); ++i) {
                num += (ra[i] - ma) * (rb[i] - mb);
                da += (ra[i] - ma) * (ra[i] - ma);
                db += (rb[i] - mb) * (rb[i] - mb);
            }
            const double got = fse::spearman(a, b);
            if (da == 0.0 || db == 0.0) {
                CHECK(std::isnan(got));
            } else {
                CHECK(testutil::rel_err(got, num / std::sqrt(da * db)) < 1e-12);
            }
        }
    }
}

TEST_CASE("uncertainty: calibration report") {
    Rng rng(611);
    std::vector<fse::CalibrationPair> pairs;
    for (int i = 0; i < 137; ++i) {
        const double u = rng.uniform(0.1, 40.0);
        // Errors loosely track uncertainty so the rank correlation is positive.
        const double e = u * rng.uniform(0.2, 2.0) + rng.uniform(0.0, 2.0);
        pairs.push_back({u, e * e});
    }
    const auto report = fse::calibration_report(pairs, 10);
    REQUIRE(report.bin_mean_uncertainty.size() == 10);
    REQUIRE(report.bin_max_log_se.size() == 10);
    for (std::size_t i = 1; i < report.bin_mean_uncertainty.size(); ++i) {
        CHECK(report.bin_mean_uncertainty[i] >= report.bin_mean_uncertainty[i - 1]);
        CHECK(report.bin_max_log_se[i] >= report.bin_max_log_se[i - 1]); // cumulative max envelope
    }
    CHECK(report.spearman_rho > 0.3);
    CHECK(report.pairs.size() == pairs.size());

    std::vector<double> us, es;
    for (const auto& p : report.pairs) {
        us.push_back(p.uncertainty);
        es.push_back(p.sq_error);
    }
    CHECK(report.spearman_rho == doctest::Approx(fse::spearman(us, es)).epsilon(1e-12));

    std::vector<fse::CalibrationPair> flat(25, {1.0, 4.0});
    const auto degenerate = fse::calibration_report(flat, 5);
    CHECK(std::isnan(degenerate.spearman_rho));
}
