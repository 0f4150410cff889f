#include <doctest.h>

#include <cmath>
#include <type_traits>
#include <vector>

#include <foresee/baselines.hpp>
#include <foresee/odometry_model.hpp>
#include <foresee/rng.hpp>

#include "test_util.hpp"

using fse::BoundingBox;
using fse::KalmanChannel;
using fse::OdometryState;
using fse::Rng;

namespace {

// Scalar expansion of the constant-velocity filter in conventional textbook
// order: written from F=[[1,1],[0,1]], H=[1,0], Joseph-form update.
struct ScalarFilter {
    double q, r;
    double x0 = 0.0, x1 = 0.0;
    double p0 = 1e4, p1 = 0.0, p2 = 0.0, p3 = 1e4;

    void predict() {
        x0 = x0 + x1;
        const double n0 = p0 + p1 + p2 + p3;
        const double n1 = p1 + p3;
        const double n2 = p2 + p3;
        const double n3 = p3;
        p0 = n0 + q * 0.25;
        p1 = n1 + q * 0.5;
        p2 = n2 + q * 0.5;
        p3 = n3 + q;
    }
    void update(double z) {
        const double s = p0 + r;
        const double k0 = p0 / s;
        const double k1 = p2 / s;
        const double innov = z - x0;
        x0 += k0 * innov;
        x1 += k1 * innov;
        const double a00 = 1.0 - k0;
        const double a10 = -k1;
        const double q00 = a00 * p0;
        const double q01 = a00 * p1;
        const double q10 = a10 * p0 + p2;
        const double q11 = a10 * p1 + p3;
        p0 = q00 * a00 + k0 * k0 * r;
        p1 = q00 * a10 + q01 + k0 * k1 * r;
        p2 = q10 * a00 + k1 * k0 * r;
        p3 = q10 * a10 + q11 + k1 * k1 * r;
    }
};

// Association-independent oracle: generic 2x2 matrix products, so it shares
// no expression structure with the implementation.
struct MatrixFilter {
    double q, r;
    double x[2] = {0.0, 0.0};
    double P[2][2] = {{1e4, 0.0}, {0.0, 1e4}};

    static void mul(const double a[2][2], const double b[2][2], double out[2][2]) {
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j) out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
    }
    void predict() {
        const double F[2][2] = {{1.0, 1.0}, {0.0, 1.0}};
        const double Ft[2][2] = {{1.0, 0.0}, {1.0, 1.0}};
        const double nx0 = F[0][0] * x[0] + F[0][1] * x[1];
        const double nx1 = F[1][0] * x[0] + F[1][1] * x[1];
        x[0] = nx0;
        x[1] = nx1;
        double T[2][2], FPF[2][2];
        mul(F, P, T);
        mul(T, Ft, FPF);
        P[0][0] = FPF[0][0] + q * 0.25;
        P[0][1] = FPF[0][1] + q * 0.5;
        P[1][0] = FPF[1][0] + q * 0.5;
        P[1][1] = FPF[1][1] + q;
    }
    void update(double z) {
        const double s = P[0][0] + r;
        const double K[2] = {P[0][0] / s, P[1][0] / s};
        const double innov = z - x[0];
        x[0] += K[0] * innov;
        x[1] += K[1] * innov;
        const double A[2][2] = {{1.0 - K[0], 0.0}, {-K[1], 1.0}};
        const double At[2][2] = {{1.0 - K[0], -K[1]}, {0.0, 1.0}};
        double T[2][2], APA[2][2];
        mul(A, P, T);
        mul(T, At, APA);
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j) P[i][j] = APA[i][j] + K[i] * r * K[j];
    }
};

template <typename Filter>
std::vector<double> run_filter(const std::vector<double>& obs, int horizon, double q, double r) {
    Filter f;
    f.q = q;
    f.r = r;
    if constexpr (std::is_same_v<Filter, ScalarFilter>) {
        f.x0 = obs[0];
    } else {
        f.x[0] = obs[0];
    }
    for (std::size_t k = 1; k < obs.size(); ++k) {
        f.predict();
        f.update(obs[k]);
    }
    std::vector<double> out;
    for (int j = 0; j < horizon; ++j) {
        f.predict();
        if constexpr (std::is_same_v<Filter, ScalarFilter>) {
            out.push_back(f.x0);
        } else {
            out.push_back(f.x[0]);
        }
    }
    return out;
}

} // namespace

TEST_CASE("kalman: scalar textbook recursion is reproduced bitwise") {
    const std::vector<double> obs = {0.0, 1.0, 2.0, 4.0};
    const auto got = fse::kalman_predict_channel(obs, 1, 1e-4, 1e-2);
    const auto want = run_filter<ScalarFilter>(obs, 1, 1e-4, 1e-2);
    REQUIRE(got.size() == 1);
    CHECK(got[0] == want[0]);

    KalmanChannel f;
    f.q = 1e-4;
    f.r = 1e-2;
    f.init(obs[0]);
    ScalarFilter g;
    g.q = 1e-4;
    g.r = 1e-2;
    g.x0 = obs[0];
    for (std::size_t k = 1; k < obs.size(); ++k) {
        f.predict();
        f.update(obs[k]);
        g.predict();
        g.update(obs[k]);
        CHECK(f.x[0] == g.x0);
        CHECK(f.x[1] == g.x1);
        CHECK(f.p[0] == g.p0);
        CHECK(f.p[1] == g.p1);
        CHECK(f.p[2] == g.p2);
        CHECK(f.p[3] == g.p3);
    }
}

TEST_CASE("kalman: matrix-form oracle on random instances") {
    Rng rng(701);
    for (int trial = 0; trial < 120; ++trial) {
        const int len = 2 + static_cast<int>(rng.uniform_index(9));
        const int horizon = 1 + static_cast<int>(rng.uniform_index(6));
        const double q = std::pow(10.0, -static_cast<double>(rng.uniform_index(7)));
        const double r = std::pow(10.0, -static_cast<double>(rng.uniform_index(7)));
        std::vector<double> obs;
        for (int k = 0; k < len; ++k) obs.push_back(rng.uniform(-50.0, 50.0));
        const auto got = fse::kalman_predict_channel(obs, horizon, q, r);
        const auto want = run_filter<MatrixFilter>(obs, horizon, q, r);
        for (int j = 0; j < horizon; ++j) {
            CHECK(testutil::rel_err(got[static_cast<std::size_t>(j)],
                                    want[static_cast<std::size_t>(j)]) < 1e-12);
        }
    }
}

TEST_CASE("kalman: converges on a noiseless constant-velocity track") {
    // Model-matched input: after 8 updates the filter locks onto the ramp.
    const double a = 120.0, b = -2.5;
    std::vector<double> obs;
    for (int k = 0; k < 8; ++k) obs.push_back(a + b * k);
    const auto pred = fse::kalman_predict_channel(obs, 15, 1e-4, 1e-2);
    for (int j = 0; j < 15; ++j) {
        const double truth = a + b * (7 + j + 1);
        CHECK(std::abs(pred[static_cast<std::size_t>(j)] - truth) < 1e-6);
    }
}

TEST_CASE("kalman: predictions are linear in the observations") {
    Rng rng(703);
    for (int trial = 0; trial < 20; ++trial) {
        const int len = 3 + static_cast<int>(rng.uniform_index(6));
        std::vector<double> oa, ob, osum;
        for (int k = 0; k < len; ++k) {
            oa.push_back(rng.uniform(-30, 30));
            ob.push_back(rng.uniform(-30, 30));
            osum.push_back(oa.back() + ob.back());
        }
        const auto pa = fse::kalman_predict_channel(oa, 4, 1e-3, 1e-2);
        const auto pb = fse::kalman_predict_channel(ob, 4, 1e-3, 1e-2);
        const auto ps = fse::kalman_predict_channel(osum, 4, 1e-3, 1e-2);
        std::vector<double> doubled;
        for (double v : oa) doubled.push_back(2.0 * v);
        const auto pd = fse::kalman_predict_channel(doubled, 4, 1e-3, 1e-2);
        for (int j = 0; j < 4; ++j) {
            CHECK(testutil::rel_err(ps[static_cast<std::size_t>(j)],
                                    pa[static_cast<std::size_t>(j)] + pb[static_cast<std::size_t>(j)]) <
                  1e-9);
            CHECK(testutil::rel_err(pd[static_cast<std::size_t>(j)],
                                    2.0 * pa[static_cast<std::size_t>(j)]) < 1e-9);
        }
    }
}

TEST_CASE("kalman: covariance stays symmetric PSD over 100 steps") {
    Rng rng(705);
    KalmanChannel f;
    f.q = 1e-4;
    f.r = 1e-2;
    f.init(rng.uniform(-10, 10));
    for (int step = 0; step < 100; ++step) {
        f.predict();
        f.update(rng.uniform(-10.0, 10.0));
        const double asym = std::abs(f.p[1] - f.p[2]);
        CHECK(asym <= 1e-12 * std::max(1.0, std::abs(f.p[1])));
        const double m = 0.5 * (f.p[1] + f.p[2]);
        const double tr = f.p[0] + f.p[3];
        const double disc = std::sqrt((f.p[0] - f.p[3]) * (f.p[0] - f.p[3]) + 4.0 * m * m);
        CHECK(0.5 * (tr - disc) >= -1e-9);
    }
}

TEST_CASE("kalman: box wrapper runs four independent channels") {
    Rng rng(707);
    std::vector<BoundingBox> obs;
    std::vector<double> ch[4];
    for (int k = 0; k < 6; ++k) {
        BoundingBox b{rng.uniform(0, 500), rng.uniform(0, 250), rng.uniform(0, 500), rng.uniform(0, 250)};
        obs.push_back(b);
        ch[0].push_back(b.x_tl);
        ch[1].push_back(b.y_tl);
        ch[2].push_back(b.x_br);
        ch[3].push_back(b.y_br);
    }
    const auto pred = fse::kalman_predict(obs, 3, 1e-4, 1e-2);
    REQUIRE(pred.size() == 3);
    for (int c = 0; c < 4; ++c) {
        const auto want = fse::kalman_predict_channel(ch[c], 3, 1e-4, 1e-2);
        for (int j = 0; j < 3; ++j) {
            const BoundingBox& p = pred[static_cast<std::size_t>(j)];
            const double got = c == 0 ? p.x_tl : c == 1 ? p.y_tl : c == 2 ? p.x_br : p.y_br;
            CHECK(got == want[static_cast<std::size_t>(j)]);
        }
    }
}

TEST_CASE("kalman: contract violations") {
    CHECK_THROWS_AS(fse::kalman_predict_channel({1.0}, 3, 1e-4, 1e-2), fse::ContractError);
    CHECK_THROWS_AS(fse::kalman_predict_channel({1.0, 2.0}, 3, 0.0, 1e-2), fse::ContractError);
    CHECK_THROWS_AS(fse::kalman_predict_channel({1.0, 2.0}, 3, 1e-4, -1.0), fse::ContractError);
}

TEST_CASE("kalman: grid fit keeps the first minimum scanned") {
    // All-zero data ties every grid point at zero error; the scan order
    // (q outer, r inner, strictly-better replacement) keeps 1e-6/1e-6.
    std::vector<std::pair<std::vector<OdometryState>, std::vector<OdometryState>>> pairs;
    pairs.push_back({std::vector<OdometryState>(5), std::vector<OdometryState>(3)});
    const auto fit = fse::fit_kalman_odometry(pairs);
    CHECK(fit.q == 1e-6);
    CHECK(fit.r == 1e-6);
    CHECK(fit.val_mse == 0.0);
}

TEST_CASE("kalman: grid fit finds a near-zero error on model-matched data") {
    std::vector<std::pair<std::vector<BoundingBox>, std::vector<BoundingBox>>> pairs;
    Rng rng(709);
    for (int i = 0; i < 4; ++i) {
        const double a = rng.uniform(50, 300), b = rng.uniform(-3, 3);
        std::vector<BoundingBox> obs, tgt;
        for (int k = 0; k < 8; ++k) {
            const double v = a + b * k;
            obs.push_back({v, v * 0.5, v + 10, v * 0.5 + 20});
        }
        for (int j = 1; j <= 5; ++j) {
            const double v = a + b * (7 + j);
            tgt.push_back({v, v * 0.5, v + 10, v * 0.5 + 20});
        }
        pairs.push_back({obs, tgt});
    }
    const auto fit = fse::fit_kalman_boxes(pairs);
    CHECK(fit.val_mse < 1e-6);
    CHECK_THROWS_AS(fse::fit_kalman_boxes({}), fse::ContractError);
}

TEST_CASE("constant odometry baseline") {
    const std::vector<OdometryState> past = {{3.0, 5.0}, {4.0, -2.0}};
    const auto pred = fse::constant_odometry(past, 3);
    REQUIRE(pred.size() == 3);
    for (const OdometryState& o : pred) {
        CHECK(o.speed == 4.0);
        CHECK(o.steering == -2.0);
    }
    CHECK(fse::constant_odometry(past, 0).empty());
    CHECK_THROWS_AS(fse::constant_odometry({}, 3), fse::ContractError);
}

TEST_CASE("constant odometry error on a ramp has the hand-summed MSE") {
    // Past speeds 0..7; the constant prediction repeats 7 while the truth
    // keeps climbing, so speed_mse over n=3 is (1+4+9)/3.
    std::vector<OdometryState> past;
    for (int k = 0; k <= 7; ++k) past.push_back({static_cast<double>(k), 0.0});
    std::vector<OdometryState> truth;
    for (int j = 8; j <= 10; ++j) truth.push_back({static_cast<double>(j), 0.0});
    const auto pred = fse::constant_odometry(past, 3);
    const fse::OdoLoss loss = fse::odometry_loss(pred, truth);
    CHECK(loss.speed_mse == doctest::Approx(14.0 / 3.0).epsilon(1e-12));
    CHECK(loss.angle_mse == 0.0);
    CHECK(loss.mean() == doctest::Approx(7.0 / 3.0).epsilon(1e-12));
}
