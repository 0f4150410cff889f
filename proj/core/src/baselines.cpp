#include "foresee/baselines.hpp"

#include <cmath>

namespace fse {

void KalmanChannel::init(double z0) {
    x[0] = z0;
    x[1] = 0.0;
    p[0] = 1e4;
    p[1] = 0.0;
    p[2] = 0.0;
    p[3] = 1e4;
}

void KalmanChannel::predict() {
    // x = F x
    x[0] += x[1];
    // P = F P F' + Q
    const double p00 = p[0] + p[1] + p[2] + p[3];
    const double p01 = p[1] + p[3];
    const double p10 = p[2] + p[3];
    const double p11 = p[3];
    p[0] = p00 + q * 0.25;
    p[1] = p01 + q * 0.5;
    p[2] = p10 + q * 0.5;
    p[3] = p11 + q;
}

void KalmanChannel::update(double z) {
    const double s = p[0] + r;
    const double k0 = p[0] / s;
    const double k1 = p[2] / s;
    const double innov = z - x[0];
    x[0] += k0 * innov;
    x[1] += k1 * innov;
    // Joseph form: P = (I-KH) P (I-KH)' + K R K'
    const double a00 = 1.0 - k0;
    const double a10 = -k1;
    const double q00 = a00 * p[0];
    const double q01 = a00 * p[1];
    const double q10 = a10 * p[0] + p[2];
    const double q11 = a10 * p[1] + p[3];
    p[0] = q00 * a00 + k0 * k0 * r;
    p[1] = q00 * a10 + q01 + k0 * k1 * r;
    p[2] = q10 * a00 + k1 * k0 * r;
    p[3] = q10 * a10 + q11 + k1 * k1 * r;
}

std::vector<double> kalman_predict_channel(const std::vector<double>& obs, int horizon, double q, double r) {
    if (obs.size() < 2) throw ContractError("kalman_predict needs >= 2 observations");
    if (!(q > 0.0) || !(r > 0.0)) throw ContractError("kalman noise parameters must be positive");
    KalmanChannel f;
    f.q = q;
    f.r = r;
    f.init(obs[0]);
    for (std::size_t k = 1; k < obs.size(); ++k) {
        f.predict();
        f.update(obs[k]);
    }
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(horizon));
    for (int j = 0; j < horizon; ++j) {
        f.predict();
        out.push_back(f.x[0]);
    }
    return out;
}

std::vector<BoundingBox> kalman_predict(const std::vector<BoundingBox>& obs, int horizon, double q, double r) {
    std::vector<double> ch[4];
    for (const BoundingBox& b : obs) {
        ch[0].push_back(b.x_tl);
        ch[1].push_back(b.y_tl);
        ch[2].push_back(b.x_br);
        ch[3].push_back(b.y_br);
    }
    std::vector<double> pred[4];
    for (int k = 0; k < 4; ++k) pred[k] = kalman_predict_channel(ch[k], horizon, q, r);
    std::vector<BoundingBox> out;
    out.reserve(static_cast<std::size_t>(horizon));
    for (int j = 0; j < horizon; ++j) {
        out.push_back({pred[0][static_cast<std::size_t>(j)], pred[1][static_cast<std::size_t>(j)],
                       pred[2][static_cast<std::size_t>(j)], pred[3][static_cast<std::size_t>(j)]});
    }
    return out;
}

std::vector<OdometryState> kalman_predict(const std::vector<OdometryState>& obs, int horizon, double q, double r) {
    std::vector<double> speed, steer;
    for (const OdometryState& o : obs) {
        speed.push_back(o.speed);
        steer.push_back(o.steering);
    }
    const std::vector<double> ps = kalman_predict_channel(speed, horizon, q, r);
    const std::vector<double> pd = kalman_predict_channel(steer, horizon, q, r);
    std::vector<OdometryState> out;
    out.reserve(static_cast<std::size_t>(horizon));
    for (int j = 0; j < horizon; ++j) out.push_back({ps[static_cast<std::size_t>(j)], pd[static_cast<std::size_t>(j)]});
    return out;
}

namespace {

template <typename Seq, typename Channels>
KalmanFit fit_grid(const std::vector<std::pair<Seq, Seq>>& pairs, Channels&& channels) {
    if (pairs.empty()) throw ContractError("kalman fit needs at least one pair");
    KalmanFit best;
    bool first = true;
    for (int qe = -6; qe <= 0; ++qe) {
        for (int re = -6; re <= 0; ++re) {
            const double q = std::pow(10.0, qe);
            const double r = std::pow(10.0, re);
            double err = 0.0;
            std::size_t count = 0;
            for (const auto& [obs, target] : pairs) {
                const auto per_channel = channels(obs, target);
                for (const auto& [cobs, ctarget] : per_channel) {
                    const std::vector<double> pred =
                        kalman_predict_channel(cobs, static_cast<int>(ctarget.size()), q, r);
                    for (std::size_t j = 0; j < ctarget.size(); ++j) {
                        const double d = pred[j] - ctarget[j];
                        err += d * d;
                        ++count;
                    }
                }
            }
            const double mse = err / static_cast<double>(count);
            if (first || mse < best.val_mse) {
                best = {q, r, mse};
                first = false;
            }
        }
    }
    return best;
}

} // namespace

KalmanFit fit_kalman_boxes(
    const std::vector<std::pair<std::vector<BoundingBox>, std::vector<BoundingBox>>>& pairs) {
    return fit_grid(pairs, [](const std::vector<BoundingBox>& obs, const std::vector<BoundingBox>& tgt) {
        std::vector<std::pair<std::vector<double>, std::vector<double>>> ch(4);
        for (const BoundingBox& b : obs) {
            ch[0].first.push_back(b.x_tl);
            ch[1].first.push_back(b.y_tl);
            ch[2].first.push_back(b.x_br);
            ch[3].first.push_back(b.y_br);
        }
        for (const BoundingBox& b : tgt) {
            ch[0].second.push_back(b.x_tl);
            ch[1].second.push_back(b.y_tl);
            ch[2].second.push_back(b.x_br);
            ch[3].second.push_back(b.y_br);
        }
        return ch;
    });
}

KalmanFit fit_kalman_odometry(
    const std::vector<std::pair<std::vector<OdometryState>, std::vector<OdometryState>>>& pairs) {
    return fit_grid(pairs, [](const std::vector<OdometryState>& obs, const std::vector<OdometryState>& tgt) {
        std::vector<std::pair<std::vector<double>, std::vector<double>>> ch(2);
        for (const OdometryState& o : obs) {
            ch[0].first.push_back(o.speed);
            ch[1].first.push_back(o.steering);
        }
        for (const OdometryState& o : tgt) {
            ch[0].second.push_back(o.speed);
            ch[1].second.push_back(o.steering);
        }
        return ch;
    });
}

std::vector<OdometryState> constant_odometry(const std::vector<OdometryState>& past, int n) {
    if (past.empty()) throw ContractError("constant_odometry needs >= 1 observation");
    if (n < 0) throw ContractError("horizon must be >= 0");
    return std::vector<OdometryState>(static_cast<std::size_t>(n), past.back());
}

} // namespace fse
